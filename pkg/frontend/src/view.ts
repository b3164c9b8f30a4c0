// DOM rendering and input wiring.  Five judgment buttons (plus keys
// 1-5) are generated from the fixed label list; there is no other way
// to produce a submission.

import { LABELS, LABEL_TITLES, labelForKey } from "./labels.js";
import { Player } from "./player.js";
import { AnnotationApp, UiState } from "./state.js";

export function mount(root: HTMLElement, app: AnnotationApp, player: Player): void {
    root.innerHTML = `
      <header>
        <h1>voclab annotation</h1>
        <p id="status" role="status"></p>
      </header>
      <main>
        <section id="stage"></section>
        <section id="controls">
          <button id="replay" title="replay (R)">&#8635; Replay</button>
          <div id="buttons"></div>
        </section>
        <p id="banner" class="hidden" role="alert"></p>
      </main>
    `;
    const buttons = root.querySelector<HTMLDivElement>("#buttons")!;
    LABELS.forEach((label, index) => {
        const button = document.createElement("button");
        button.dataset.label = label;
        button.className = "judgment";
        button.textContent = `${index + 1}. ${LABEL_TITLES[label]}`;
        button.addEventListener("click", () => {
            void app.choose(label);
        });
        buttons.appendChild(button);
    });
    root.querySelector<HTMLButtonElement>("#replay")!.addEventListener(
        "click",
        () => player.replay(),
    );

    document.addEventListener("keydown", (event) => {
        if (event.repeat) {
            return;
        }
        if (event.key === "r" || event.key === "R") {
            player.replay();
            return;
        }
        const label = labelForKey(event.key);
        if (label !== null) {
            void app.choose(label);
        }
    });

    let lastClipUrl: string | null = null;
    app.subscribe((state) => {
        render(root, state);
        const url = state.currentClip?.audioUrl ?? null;
        if (url && url !== lastClipUrl) {
            player.load(url);
        }
        lastClipUrl = url;
    });
}

function render(root: HTMLElement, state: UiState): void {
    const status = root.querySelector<HTMLParagraphElement>("#status")!;
    const stage = root.querySelector<HTMLElement>("#stage")!;
    const banner = root.querySelector<HTMLParagraphElement>("#banner")!;
    const buttons = root.querySelectorAll<HTMLButtonElement>("button.judgment");
    const replay = root.querySelector<HTMLButtonElement>("#replay")!;

    if (state.fatal) {
        status.textContent = "service unreachable";
        stage.innerHTML = `<p class="error">${escapeHtml(state.fatal)}</p>
          <p>Reload the page once the service is back.</p>`;
        buttons.forEach((b) => (b.disabled = true));
        replay.disabled = true;
        return;
    }

    const busy = state.submission.kind === "in-flight";
    const noClip = state.currentClip === null;
    buttons.forEach((b) => (b.disabled = busy || noClip || state.phase === "done"));
    replay.disabled = noClip;

    if (state.submission.kind === "error") {
        banner.textContent = `Submission failed: ${state.submission.message}. The clip was kept; try again.`;
        banner.classList.remove("hidden");
    } else {
        banner.classList.add("hidden");
    }

    if (state.phase === "qualification") {
        const q = state.qualification;
        if (q.failed) {
            const score = q.lastScore === null ? "" : ` Score: ${Math.round(q.lastScore * 100)}%.`;
            status.textContent = "qualification not passed";
            stage.innerHTML = `<p>Below the required accuracy.${score}</p>
              <button id="retry">Try a fresh round</button>`;
            stage.querySelector<HTMLButtonElement>("#retry")!.addEventListener(
                "click",
                () => {
                    void retry(root);
                },
            );
            return;
        }
        status.textContent = `qualification: clip ${q.answered + 1} of ${q.total}`;
        const feedback =
            q.lastAnswerCorrect === null
                ? ""
                : q.lastAnswerCorrect
                  ? `<p class="ok">Correct.</p>`
                  : `<p class="error">Not quite.</p>`;
        stage.innerHTML = `${feedback}<p>Listen and pick the matching class.</p>`;
    } else if (state.phase === "annotating") {
        status.textContent = `annotating (${state.annotated} submitted)`;
        stage.innerHTML = busy
            ? `<p>Submitting&hellip;</p>`
            : `<p>Clip <code>${escapeHtml(state.currentClip?.clipId ?? "")}</code></p>`;
    } else {
        status.textContent = "done";
        stage.innerHTML = `<p>No clips left to annotate. Thank you!</p>`;
    }
}

// wired lazily by main.ts so view.ts stays import-cycle free
let retryHook: (() => Promise<void>) | null = null;

export function setRetryHook(hook: () => Promise<void>): void {
    retryHook = hook;
}

async function retry(_root: HTMLElement): Promise<void> {
    if (retryHook) {
        await retryHook();
    }
}

function escapeHtml(text: string): string {
    return text
        .replace(/&/g, "&amp;")
        .replace(/</g, "&lt;")
        .replace(/>/g, "&gt;")
        .replace(/"/g, "&quot;");
}
