import { describe, expect, it } from "vitest";

import { ApiError } from "../src/api.js";
import { AnnotationApp } from "../src/state.js";
import { answer, clip, FakeApi } from "./helpers.js";

function unqualifiedApi(): FakeApi {
    const api = new FakeApi();
    api.qualificationState = {
        qualified: false,
        clip: clip("g000"),
        answered: 0,
        total: 10,
    };
    return api;
}

describe("qualification gate", () => {
    it("starts in the qualification phase when not yet qualified", async () => {
        const api = unqualifiedApi();
        const app = new AnnotationApp(api);
        await app.start();
        expect(app.state.phase).toBe("qualification");
        expect(app.state.currentClip?.clipId).toBe("g000");
    });

    it("routes choices to qualification answers, never to annotations", async () => {
        const api = unqualifiedApi();
        api.answerScript = [answer()];
        const app = new AnnotationApp(api);
        await app.start();
        await app.choose("canonical");
        expect(api.answered).toEqual([{ clipId: "g000", label: "canonical" }]);
        expect(api.submitted).toEqual([]); // gate holds
    });

    it("enters annotating only after the service grants qualification", async () => {
        const api = unqualifiedApi();
        api.answerScript = [
            answer({ answered: 10, correctCount: 8, qualified: true }),
        ];
        api.clips = [clip("c001")];
        const app = new AnnotationApp(api);
        await app.start();
        await app.choose("junk");
        expect(app.state.phase).toBe("annotating");
        expect(app.state.currentClip?.clipId).toBe("c001");
    });

    it("shows retry with score after a failed round and blocks judgments", async () => {
        const api = unqualifiedApi();
        api.answerScript = [
            answer({ answered: 10, correctCount: 7, failed: true }),
        ];
        const app = new AnnotationApp(api);
        await app.start();
        await app.choose("junk");
        expect(app.state.qualification.failed).toBe(true);
        expect(app.state.qualification.lastScore).toBeCloseTo(0.7);
        await app.choose("crying"); // nothing to answer or submit now
        expect(api.submitted).toEqual([]);
        expect(api.answered).toHaveLength(1);
    });

    it("skips qualification when the service says already qualified", async () => {
        const api = new FakeApi();
        api.clips = [clip("c001")];
        const app = new AnnotationApp(api);
        await app.start();
        expect(app.state.phase).toBe("annotating");
    });
});

describe("judgment submission", () => {
    async function annotatingApp(api: FakeApi): Promise<AnnotationApp> {
        api.qualificationState = { qualified: true, clip: null, answered: 0, total: 10 };
        const app = new AnnotationApp(api);
        await app.start();
        return app;
    }

    it("one choice stores exactly one annotation with the chosen label", async () => {
        const api = new FakeApi();
        api.clips = [clip("c001"), clip("c002")];
        const app = await annotatingApp(api);
        await app.choose("canonical");
        expect(api.submitted).toEqual([{ clipId: "c001", label: "canonical" }]);
        expect(app.state.currentClip?.clipId).toBe("c002");
    });

    it("ignores further choices while a submission is in flight", async () => {
        const api = new FakeApi();
        api.clips = [clip("c001"), clip("c002")];
        let release: () => void = () => undefined;
        api.submitDelay = () =>
            new Promise<void>((resolve) => {
                release = resolve;
            });
        const app = await annotatingApp(api);
        const first = app.choose("junk");
        await Promise.resolve(); // let the first submission reach in-flight
        expect(app.state.submission.kind).toBe("in-flight");
        await app.choose("crying"); // swallowed by the lock
        release();
        await first;
        expect(api.submitted).toHaveLength(1);
        expect(api.submitted[0]?.label).toBe("junk");
    });

    it("keeps the same clip and reports the error when submission fails", async () => {
        const api = new FakeApi();
        api.clips = [clip("c001"), clip("c002")];
        api.submitResult = new ApiError("network error: refused", null);
        const app = await annotatingApp(api);
        await app.choose("laughing");
        expect(app.state.currentClip?.clipId).toBe("c001"); // no advance
        expect(app.state.submission.kind).toBe("error");
        // recovery: a later retry succeeds and advances
        api.submitResult = "created";
        await app.choose("laughing");
        expect(app.state.currentClip?.clipId).toBe("c002");
    });

    it("advances without duplicating on a 409 duplicate answer", async () => {
        const api = new FakeApi();
        api.clips = [clip("c001"), clip("c002")];
        api.submitResult = "duplicate";
        const app = await annotatingApp(api);
        await app.choose("junk");
        expect(api.submitted).toHaveLength(1);
        expect(app.state.currentClip?.clipId).toBe("c002");
    });

    it("transitions to done when the service returns no content", async () => {
        const api = new FakeApi();
        api.clips = [clip("c001")]; // second nextClip -> null
        const app = await annotatingApp(api);
        await app.choose("junk");
        expect(app.state.phase).toBe("done");
        expect(app.state.currentClip).toBeNull();
    });
});
