// @vitest-environment happy-dom
// @vitest-environment-options { "url": "http://127.0.0.1:8932" }
/**
 * Scripted end-to-end reader session against a live study server.
 *
 * Spawns the real HTTP server, creates a five-exam annotation study, and
 * drives the actual view components through a complete session: every exam
 * is read exactly once, the submit button is gated on both binary calls,
 * a fourth ROI box is blocked client-side (and refused by the server), and
 * an off-template box is refused by the server.
 */

import { spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { connect } from "node:net";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiError, StudyApi, type StudyCreated, type Task } from "../src/api.js";
import { renderReadingView, type ImageLoader } from "../src/readingView.js";
import { renderRoiView } from "../src/roiView.js";
import { ReadingSession, SessionError } from "../src/session.js";

// must match the document origin above so the environment's same-origin
// policy lets the client talk to the live server
const PORT = 8932;
const BASE = `http://127.0.0.1:${PORT}`;
const READER = "reader-1";
// enrolled but never reads: used to probe server-side rule enforcement
// with a task still open
const IDLE_READER = "reader-2";
const N_EXAMS = 5;
let annotatedImageId: string;

let server: ChildProcess;
let storeDir: string;
let api: StudyApi;
let study: StudyCreated;
let token: string;

const exams = Array.from({ length: N_EXAMS }, (_, i) => ({
  exam_id: `exam-${i}`,
  left_case_id: `case-${i}-L`,
  right_case_id: `case-${i}-R`,
  images: (
    [
      ["left", "cc"],
      ["left", "mlo"],
      ["right", "cc"],
      ["right", "mlo"],
    ] as const
  ).map(([side, view]) => ({
    image_id: `exam-${i}-${side}-${view}`,
    side,
    view,
    height_px: 512,
    width_px: 512,
  })),
}));

// Poll with a raw socket: the environment's fetch logs every connection
// refusal to the console, which would bury the test output during boot.
function portOpen(): Promise<boolean> {
  return new Promise((resolve) => {
    const sock = connect({ host: "127.0.0.1", port: PORT }, () => {
      sock.end();
      resolve(true);
    });
    sock.on("error", () => resolve(false));
  });
}

async function waitForServer(): Promise<void> {
  const deadline = Date.now() + 30_000;
  while (Date.now() < deadline) {
    if (await portOpen()) {
      const resp = await fetch(`${BASE}/openapi.json`);
      if (resp.ok) return;
    }
    await new Promise((r) => setTimeout(r, 200));
  }
  throw new Error("study server did not come up");
}

beforeAll(async () => {
  storeDir = mkdtempSync(join(tmpdir(), "study-store-"));
  server = spawn(
    "python3",
    ["-m", "robustlens.cli", "serve", "--store", storeDir, "--port", String(PORT)],
    { stdio: "ignore" },
  );
  await waitForServer();
  api = new StudyApi(BASE);
  study = await api.createStudy({
    readers: [READER, IDLE_READER],
    exams,
    mode: "annotation",
    seed: 7,
  });
  token = study.tokens[READER]!;
});

afterAll(() => {
  server?.kill();
  rmSync(storeDir, { recursive: true, force: true });
});

/** Loader that really fetches the bytes and checks they are a PNG. */
const pngLoader: ImageLoader = async (_img, url) => {
  const bytes = new Uint8Array(await api.fetchImage(url));
  const signature = [0x89, 0x50, 0x4e, 0x47];
  signature.forEach((b, i) => {
    if (bytes[i] !== b) throw new Error(`${url} is not a PNG`);
  });
};

describe("scripted five-exam session", () => {
  it("completes the study with every rule enforced", async () => {
    const session = new ReadingSession(api, study.study_id, READER, token);
    let task = await session.refresh();
    expect(task).not.toBeNull();
    expect(task!.total).toBe(N_EXAMS);

    const container = document.createElement("div");
    document.body.appendChild(container);
    const readExams: string[] = [];
    let roiChecked = false;

    while (task !== null) {
      const current: Task = task;
      readExams.push(current.exam_id);

      let advanced: Task | null = null;
      const view = renderReadingView(document, container, current, {
        loader: pngLoader,
        resolveUrl: (u) => api.resolve(u),
        onSubmit: async (l, r) => {
          advanced = await session.submitPrediction(l, r);
        },
      });

      // the four images really load from the live server
      for (const im of current.images) {
        for (let i = 0; i < 50 && view.loadState(im.image_id) === "loading"; i++) {
          await new Promise((r) => setTimeout(r, 50));
        }
        expect(view.loadState(im.image_id)).toBe("loaded");
      }

      // submit is gated until both breasts are called
      expect(view.submitEnabled()).toBe(false);
      await view.submit();
      expect(view.message()).toContain("both breasts");

      // call the left breast malignant so the ROI flow is exercised
      view.setPrediction("left", 1);
      expect(view.submitEnabled()).toBe(false);
      view.setPrediction("right", 0);
      expect(view.submitEnabled()).toBe(true);
      await view.submit();
      expect(view.message()).toBe("");

      if (!roiChecked) {
        roiChecked = true;
        const image = current.images.find(
          (im) => im.side === "left" && im.view === "cc",
        )!;
        annotatedImageId = image.image_id;
        const roiView = renderRoiView(document, container, image, {
          onSubmit: (boxes) => session.submitRois(image.image_id, boxes),
        });
        // three boxes fit; the fourth is blocked in the UI
        expect(roiView.drawBox(0, 0, 250, 250)).not.toBeNull();
        expect(roiView.drawBox(50, 50, 240, 260)).not.toBeNull();
        expect(roiView.drawBox(100, 100, 250, 250)).not.toBeNull();
        expect(roiView.drawBox(150, 150, 250, 250)).toBeNull();
        expect(roiView.warning()).toContain("At most 3");
        expect(roiView.boxes().length).toBe(3);

        await roiView.submit();
        expect(roiView.message()).toContain("recorded");

        // the server itself also refuses a fourth box ...
        await expect(
          session.submitRois(
            image.image_id,
            [0, 1, 2, 3].map((k) => ({ x: k, y: k, w: 250, h: 250 })),
          ),
        ).rejects.toSatisfy(
          (e: unknown) => e instanceof ApiError && e.isValidation,
        );
        // ... and an off-template 600x600 box
        await expect(
          session.submitRois(image.image_id, [{ x: 0, y: 0, w: 600, h: 600 }]),
        ).rejects.toSatisfy(
          (e: unknown) => e instanceof ApiError && e.isValidation,
        );
      }

      task = advanced;
    }

    expect(session.state).toBe("done");
    expect(readExams.length).toBe(N_EXAMS);
    expect(new Set(readExams).size).toBe(N_EXAMS);
  });

  it("rejected every duplicate and non-binary submission", async () => {
    // non-binary values never leave the client ...
    const session = new ReadingSession(api, study.study_id, READER, token);
    await session.refresh();
    await expect(session.submitPrediction(2, 0)).rejects.toThrow(SessionError);

    // ... and the server enforces them on direct requests: a non-binary
    // value on an open task is a validation error, a second read of an
    // already-read exam is a conflict
    const idleToken = study.tokens[IDLE_READER]!;
    const idleTask = await api.nextTask(study.study_id, IDLE_READER, idleToken);
    await expect(
      api.submitPrediction(
        study.study_id,
        idleToken,
        IDLE_READER,
        idleTask!.exam_id,
        2,
        0,
      ),
    ).rejects.toSatisfy(
      (e: unknown) => e instanceof ApiError && e.isValidation,
    );
    await expect(
      api.submitPrediction(study.study_id, token, READER, "exam-0", 1, 1),
    ).rejects.toSatisfy((e: unknown) => e instanceof ApiError && e.isConflict);
  });

  it("exported exactly one read per exam and the accepted ROIs", async () => {
    const exported = (await api.exportStudy(study.study_id)) as {
      predictions: Array<{ reader_id: string; case_id: string; score: number }>;
      rois: Array<{ image_id: string; boxes: unknown[] }>;
    };
    // two breasts per exam, each read once
    expect(exported.predictions.length).toBe(2 * N_EXAMS);
    const perCase = new Map<string, number>();
    for (const p of exported.predictions) {
      expect(p.reader_id).toBe(READER);
      expect([0, 1]).toContain(p.score);
      perCase.set(p.case_id, (perCase.get(p.case_id) ?? 0) + 1);
    }
    for (const count of perCase.values()) expect(count).toBe(1);

    expect(exported.rois.length).toBe(1);
    expect(exported.rois[0]!.image_id).toBe(annotatedImageId);
    expect(exported.rois[0]!.boxes.length).toBe(3);
  });
});
