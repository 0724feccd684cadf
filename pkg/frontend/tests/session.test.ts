import { describe, expect, it } from "vitest";

import { ApiError, StudyApi, type FetchLike } from "../src/api.js";
import { ReadingSession, SessionError } from "../src/session.js";

/**
 * Minimal in-memory stand-in for the study server: one reader, a fixed
 * exam order, one accepted submission per exam, conflict on duplicates,
 * validation error on non-binary values. Shapes match the real HTTP API.
 */
function fakeServer(examIds: string[]): { fetchFn: FetchLike; submitted: Map<string, [number, number]> } {
  const submitted = new Map<string, [number, number]>();
  const json = (status: number, body: unknown): Response =>
    new Response(JSON.stringify(body), {
      status,
      headers: { "Content-Type": "application/json" },
    });

  const fetchFn: FetchLike = async (input, init) => {
    const url = new URL(input);
    if (url.pathname.endsWith("/next")) {
      const next = examIds.find((e) => !submitted.has(e));
      if (next === undefined) return json(200, { done: true });
      return json(200, {
        done: false,
        task: {
          exam_id: next,
          mode: "perturbation",
          progress: submitted.size,
          total: examIds.length,
          images: [
            {
              image_id: `${next}-rcc`,
              side: "right",
              view: "cc",
              height_px: 512,
              width_px: 512,
              url: `/images/${next}-rcc?severity=3`,
            },
          ],
        },
      });
    }
    if (url.pathname.endsWith("/predictions")) {
      const body = JSON.parse(String(init?.body)) as {
        exam_id: string;
        left: number;
        right: number;
      };
      if (![0, 1].includes(body.left) || ![0, 1].includes(body.right)) {
        return json(422, { error: "predictions must be 0 or 1" });
      }
      if (submitted.has(body.exam_id)) {
        return json(409, { error: "already read" });
      }
      submitted.set(body.exam_id, [body.left, body.right]);
      return json(200, { ok: true });
    }
    return json(404, { error: `unknown path ${url.pathname}` });
  };
  return { fetchFn, submitted };
}

const makeSession = (examIds: string[]) => {
  const server = fakeServer(examIds);
  const api = new StudyApi("http://study.test", server.fetchFn);
  return { session: new ReadingSession(api, "s0", "r0", "tok"), ...server };
};

describe("ReadingSession", () => {
  it("walks every exam exactly once and finishes in the done state", async () => {
    const { session, submitted } = makeSession(["e1", "e2", "e3"]);
    expect(session.state).toBe("idle");
    let task = await session.refresh();
    const seen: string[] = [];
    while (task !== null) {
      seen.push(task.exam_id);
      task = await session.submitPrediction(1, 0);
    }
    expect(seen).toEqual(["e1", "e2", "e3"]);
    expect(session.state).toBe("done");
    expect(submitted.size).toBe(3);
  });

  it("refuses non-binary values before anything reaches the wire", async () => {
    const { session, submitted } = makeSession(["e1"]);
    await session.refresh();
    await expect(session.submitPrediction(2, 0)).rejects.toThrow(SessionError);
    await expect(session.submitPrediction(0, 0.5)).rejects.toThrow(SessionError);
    expect(submitted.size).toBe(0);
  });

  it("refuses to submit without a loaded task", async () => {
    const { session } = makeSession(["e1"]);
    await expect(session.submitPrediction(0, 0)).rejects.toThrow(SessionError);
  });

  it("resumes from the server after a reload with no duplicate reads", async () => {
    const { session, submitted, fetchFn } = makeSession(["e1", "e2"]);
    await session.refresh();
    await session.submitPrediction(0, 1);

    // a "reload": fresh session object against the same server state
    const reloaded = new ReadingSession(
      new StudyApi("http://study.test", fetchFn),
      "s0",
      "r0",
      "tok",
    );
    const task = await reloaded.refresh();
    expect(task?.exam_id).toBe("e2");
    await reloaded.submitPrediction(1, 1);
    expect(reloaded.state).toBe("done");
    expect(submitted.size).toBe(2);
  });

  it("recovers from a duplicate-submission conflict by resyncing", async () => {
    const { session, fetchFn, submitted } = makeSession(["e1", "e2"]);
    await session.refresh();
    // another tab reads e1 behind this session's back
    const other = new ReadingSession(
      new StudyApi("http://study.test", fetchFn),
      "s0",
      "r0",
      "tok",
    );
    await other.refresh();
    await other.submitPrediction(1, 1);

    const task = await session.submitPrediction(0, 0);
    expect(task?.exam_id).toBe("e2");
    expect(submitted.get("e1")).toEqual([1, 1]);
  });

  it("reports progress without ever exposing a severity", async () => {
    const { session } = makeSession(["e1", "e2"]);
    const task = await session.refresh();
    expect(session.progressLabel).toBe("1 / 2");
    expect(JSON.stringify(Object.keys(task!))).not.toContain("severity");
  });

  it("surfaces non-conflict server errors unchanged", async () => {
    const api = new StudyApi("http://study.test", async () =>
      new Response(JSON.stringify({ error: "bad reader token" }), { status: 403 }),
    );
    const session = new ReadingSession(api, "s0", "r0", "bad");
    await expect(session.refresh()).rejects.toThrow(ApiError);
  });
});
