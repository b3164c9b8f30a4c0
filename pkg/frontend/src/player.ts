// Clip playback: auto-play on load, manual replay.  Clips run ~500 ms,
// so replay is a single keystroke rather than a loop.

export class Player {
    private audio: HTMLAudioElement | null = null;
    private url: string | null = null;
    onerror: ((message: string) => void) | null = null;

    load(url: string): void {
        this.url = url;
        this.audio = new Audio(url);
        this.audio.addEventListener("error", () => {
            if (this.onerror) {
                this.onerror(`could not load audio ${url}`);
            }
        });
        this.replay();
    }

    replay(): void {
        if (!this.audio) {
            return;
        }
        this.audio.currentTime = 0;
        const started = this.audio.play();
        if (started && typeof started.catch === "function") {
            started.catch(() => {
                // autoplay may be blocked until first interaction; the
                // replay button stays available
            });
        }
    }

    get currentUrl(): string | null {
        return this.url;
    }
}
