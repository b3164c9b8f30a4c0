// Shared fakes: a scripted AnnotationApi that records every call.

import {
    AnnotationApi,
    ClipRef,
    QualificationAnswer,
    QualificationNext,
    SubmitResult,
} from "../src/api.js";
import { LabelName } from "../src/labels.js";

export interface SubmittedCall {
    clipId: string;
    label: LabelName;
}

export class FakeApi implements AnnotationApi {
    submitted: SubmittedCall[] = [];
    answered: SubmittedCall[] = [];
    clips: (ClipRef | null)[] = [];
    qualificationState: QualificationNext = {
        qualified: true,
        clip: null,
        answered: 0,
        total: 10,
    };
    answerScript: QualificationAnswer[] = [];
    submitResult: SubmitResult | Error = "created";
    submitDelay: (() => Promise<void>) | null = null;

    async nextClip(): Promise<ClipRef | null> {
        if (this.clips.length === 0) {
            return null;
        }
        return this.clips.shift() ?? null;
    }

    async submitAnnotation(clipId: string, label: LabelName): Promise<SubmitResult> {
        if (this.submitDelay) {
            await this.submitDelay();
        }
        if (this.submitResult instanceof Error) {
            this.submitted.push({ clipId, label });
            throw this.submitResult;
        }
        this.submitted.push({ clipId, label });
        return this.submitResult;
    }

    async nextQualification(): Promise<QualificationNext> {
        return this.qualificationState;
    }

    async answerQualification(
        clipId: string,
        label: LabelName,
    ): Promise<QualificationAnswer> {
        this.answered.push({ clipId, label });
        const scripted = this.answerScript.shift();
        if (!scripted) {
            throw new Error("answer script exhausted");
        }
        return scripted;
    }
}

export function clip(id: string): ClipRef {
    return { clipId: id, audioUrl: `/api/audio/${id}` };
}

export function answer(
    overrides: Partial<QualificationAnswer> = {},
): QualificationAnswer {
    return {
        correct: true,
        answered: 1,
        correctCount: 1,
        total: 10,
        qualified: false,
        failed: false,
        ...overrides,
    };
}
