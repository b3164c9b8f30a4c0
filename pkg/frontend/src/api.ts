// Typed client for the annotation service HTTP API.  Every judgment or
// qualification answer goes through submitAnnotation / answerQualification,
// which accept only the five LabelName values.

import { isLabel, LabelName } from "./labels.js";

export interface ClipRef {
    clipId: string;
    audioUrl: string;
}

export type SubmitResult = "created" | "duplicate";

export interface QualificationNext {
    qualified: boolean;
    clip: ClipRef | null;
    answered: number;
    total: number;
}

export interface QualificationAnswer {
    correct: boolean;
    answered: number;
    correctCount: number;
    total: number;
    qualified: boolean;
    failed: boolean;
}

export class ApiError extends Error {
    constructor(
        message: string,
        readonly status: number | null,
    ) {
        super(message);
    }
}

/** What the state machine needs from the service; ApiClient is the
 * transport implementation, tests substitute fakes. */
export interface AnnotationApi {
    nextClip(): Promise<ClipRef | null>;
    submitAnnotation(clipId: string, label: LabelName): Promise<SubmitResult>;
    nextQualification(): Promise<QualificationNext>;
    answerQualification(clipId: string, label: LabelName): Promise<QualificationAnswer>;
}

export class ApiClient implements AnnotationApi {
    constructor(
        private readonly annotatorId: string,
        private readonly base: string = "",
    ) {}

    private async get(path: string): Promise<Response> {
        let response: Response;
        try {
            response = await fetch(this.base + path);
        } catch (err) {
            throw new ApiError(`network error: ${String(err)}`, null);
        }
        return response;
    }

    private async post(path: string, body: unknown): Promise<Response> {
        try {
            return await fetch(this.base + path, {
                method: "POST",
                headers: { "Content-Type": "application/json" },
                body: JSON.stringify(body),
            });
        } catch (err) {
            throw new ApiError(`network error: ${String(err)}`, null);
        }
    }

    async nextClip(): Promise<ClipRef | null> {
        const response = await this.get(
            `/api/clips/next?annotator=${encodeURIComponent(this.annotatorId)}`,
        );
        if (response.status === 204) {
            return null;
        }
        if (!response.ok) {
            throw new ApiError(await describe(response), response.status);
        }
        const body = (await response.json()) as { clip_id: string; audio_url: string };
        return { clipId: body.clip_id, audioUrl: body.audio_url };
    }

    async submitAnnotation(clipId: string, label: LabelName): Promise<SubmitResult> {
        if (!isLabel(label)) {
            // unreachable through the UI; guards direct callers
            throw new ApiError(`not a valid label: ${String(label)}`, null);
        }
        const response = await this.post("/api/annotations", {
            annotator_id: this.annotatorId,
            clip_id: clipId,
            label,
        });
        if (response.status === 201) {
            return "created";
        }
        if (response.status === 409) {
            return "duplicate";
        }
        throw new ApiError(await describe(response), response.status);
    }

    async nextQualification(): Promise<QualificationNext> {
        const response = await this.get(
            `/api/qualification/next?annotator=${encodeURIComponent(this.annotatorId)}`,
        );
        if (!response.ok) {
            throw new ApiError(await describe(response), response.status);
        }
        const body = (await response.json()) as {
            qualified: boolean;
            clip_id: string | null;
            audio_url: string | null;
            answered: number;
            total: number;
        };
        return {
            qualified: body.qualified,
            clip:
                body.clip_id && body.audio_url
                    ? { clipId: body.clip_id, audioUrl: body.audio_url }
                    : null,
            answered: body.answered,
            total: body.total,
        };
    }

    async answerQualification(
        clipId: string,
        label: LabelName,
    ): Promise<QualificationAnswer> {
        if (!isLabel(label)) {
            throw new ApiError(`not a valid label: ${String(label)}`, null);
        }
        const response = await this.post("/api/qualification/answer", {
            annotator_id: this.annotatorId,
            clip_id: clipId,
            label,
        });
        if (!response.ok) {
            throw new ApiError(await describe(response), response.status);
        }
        const body = (await response.json()) as {
            correct: boolean;
            answered: number;
            correct_count: number;
            total: number;
            qualified: boolean;
            failed: boolean;
        };
        return {
            correct: body.correct,
            answered: body.answered,
            correctCount: body.correct_count,
            total: body.total,
            qualified: body.qualified,
            failed: body.failed,
        };
    }
}

async function describe(response: Response): Promise<string> {
    try {
        const body = (await response.json()) as { detail?: string };
        if (body && typeof body.detail === "string") {
            return body.detail;
        }
    } catch {
        // fall through to the generic message
    }
    return `service error (HTTP ${response.status})`;
}
