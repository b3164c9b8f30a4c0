// UI state machine.  One phase at a time: qualification -> annotating
// -> done.  Judgments are accepted only while annotating with an idle
// submission; the clip advances only after the service confirms with
// 201 (stored) or 409 (already stored).  Any failure keeps the current
// clip on screen.

import {
    AnnotationApi,
    ApiError,
    ClipRef,
    QualificationAnswer,
} from "./api.js";
import { LabelName } from "./labels.js";

export type Phase = "qualification" | "annotating" | "done";

export type SubmissionStatus =
    | { kind: "idle" }
    | { kind: "in-flight" }
    | { kind: "error"; message: string };

export interface QualificationProgress {
    answered: number;
    correct: number;
    total: number;
    lastAnswerCorrect: boolean | null;
    failed: boolean;
    lastScore: number | null;
}

export interface UiState {
    phase: Phase;
    currentClip: ClipRef | null;
    submission: SubmissionStatus;
    qualification: QualificationProgress;
    annotated: number;
    fatal: string | null;
}

export type Listener = (state: UiState) => void;

function initialState(): UiState {
    return {
        phase: "qualification",
        currentClip: null,
        submission: { kind: "idle" },
        qualification: {
            answered: 0,
            correct: 0,
            total: 0,
            lastAnswerCorrect: null,
            failed: false,
            lastScore: null,
        },
        annotated: 0,
        fatal: null,
    };
}

export class AnnotationApp {
    readonly state: UiState = initialState();
    private listeners: Listener[] = [];

    constructor(private readonly api: AnnotationApi) {}

    subscribe(listener: Listener): void {
        this.listeners.push(listener);
    }

    private emit(): void {
        for (const listener of this.listeners) {
            listener(this.state);
        }
    }

    /** Entry point: resume qualification or go straight to annotating. */
    async start(): Promise<void> {
        try {
            const next = await this.api.nextQualification();
            if (next.qualified) {
                await this.enterAnnotating();
                return;
            }
            this.state.phase = "qualification";
            this.state.currentClip = next.clip;
            this.state.qualification.answered = next.answered;
            this.state.qualification.total = next.total;
            this.state.qualification.failed = false;
            this.emit();
        } catch (err) {
            this.fail(err);
        }
    }

    /** Retry after a failed qualification round: fresh gold sample. */
    async retryQualification(): Promise<void> {
        this.state.qualification = {
            answered: 0,
            correct: 0,
            total: this.state.qualification.total,
            lastAnswerCorrect: null,
            failed: false,
            lastScore: null,
        };
        await this.start();
    }

    /** A label chosen during either phase; routed by the state machine. */
    async choose(label: LabelName): Promise<void> {
        if (this.state.submission.kind === "in-flight") {
            return; // controls are disabled mid-flight
        }
        if (this.state.phase === "qualification") {
            await this.answerQualification(label);
        } else if (this.state.phase === "annotating") {
            await this.submitJudgment(label);
        }
    }

    private async answerQualification(label: LabelName): Promise<void> {
        const clip = this.state.currentClip;
        if (!clip || this.state.qualification.failed) {
            return;
        }
        this.state.submission = { kind: "in-flight" };
        this.emit();
        let answer: QualificationAnswer;
        try {
            answer = await this.api.answerQualification(clip.clipId, label);
        } catch (err) {
            this.state.submission = {
                kind: "error",
                message: messageOf(err),
            };
            this.emit();
            return;
        }
        this.state.submission = { kind: "idle" };
        this.state.qualification.answered = answer.answered;
        this.state.qualification.correct = answer.correctCount;
        this.state.qualification.total = answer.total;
        this.state.qualification.lastAnswerCorrect = answer.correct;
        if (answer.qualified) {
            await this.enterAnnotating();
            return;
        }
        if (answer.failed) {
            this.state.qualification.failed = true;
            this.state.qualification.lastScore =
                answer.total > 0 ? answer.correctCount / answer.total : 0;
            this.state.currentClip = null;
            this.emit();
            return;
        }
        try {
            const next = await this.api.nextQualification();
            this.state.currentClip = next.clip;
        } catch (err) {
            this.fail(err);
            return;
        }
        this.emit();
    }

    private async submitJudgment(label: LabelName): Promise<void> {
        const clip = this.state.currentClip;
        if (!clip) {
            return;
        }
        this.state.submission = { kind: "in-flight" };
        this.emit();
        try {
            await this.api.submitAnnotation(clip.clipId, label);
        } catch (err) {
            // stored nothing: keep the same clip, show the error
            this.state.submission = { kind: "error", message: messageOf(err) };
            this.emit();
            return;
        }
        // 201 or 409: either way the annotation exists server-side exactly once
        this.state.submission = { kind: "idle" };
        this.state.annotated += 1;
        await this.advance();
    }

    private async enterAnnotating(): Promise<void> {
        this.state.phase = "annotating";
        this.state.submission = { kind: "idle" };
        await this.advance();
    }

    private async advance(): Promise<void> {
        try {
            const clip = await this.api.nextClip();
            if (clip === null) {
                this.state.phase = "done";
                this.state.currentClip = null;
            } else {
                this.state.currentClip = clip;
            }
            this.emit();
        } catch (err) {
            this.fail(err);
        }
    }

    private fail(err: unknown): void {
        this.state.fatal = messageOf(err);
        this.emit();
    }
}

function messageOf(err: unknown): string {
    if (err instanceof ApiError) {
        return err.message;
    }
    return String(err);
}
