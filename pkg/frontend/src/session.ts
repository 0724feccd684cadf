/**
 * Reader session state: one active task at a time, advanced only by
 * accepted submissions. The session is stateless with respect to study
 * truth — reloading the page reconstructs it from the server's next-task
 * endpoint, so nothing can be read twice and nothing is lost.
 *
 * The severity assigned to a task is deliberately never surfaced: the
 * server does not include it in the task payload and this class exposes
 * only exam/image identity and progress.
 */

import { ApiError, StudyApi, type RoiBox, type Task, type TaskImage } from "./api.js";

export class SessionError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "SessionError";
  }
}

export type SessionPhase = "idle" | "reading" | "done";

export class ReadingSession {
  private task: Task | null = null;
  private phase: SessionPhase = "idle";

  constructor(
    private readonly api: StudyApi,
    readonly studyId: string,
    readonly readerId: string,
    private readonly token: string,
  ) {}

  get currentTask(): Task | null {
    return this.task;
  }

  get state(): SessionPhase {
    return this.phase;
  }

  get progressLabel(): string {
    if (this.task === null) return "";
    return `${this.task.progress + 1} / ${this.task.total}`;
  }

  /**
   * Fetch the current task from the server. Safe to call at any time
   * (page load, reload, after an error): the server's answer is
   * idempotent until a submission is accepted.
   */
  async refresh(): Promise<Task | null> {
    this.task = await this.api.nextTask(this.studyId, this.readerId, this.token);
    this.phase = this.task === null ? "done" : "reading";
    return this.task;
  }

  /**
   * Submit the per-breast diagnoses for the current task and advance.
   * Values must be exactly 0 or 1 — the UI's toggles can only produce
   * those, and anything else is a programming error worth failing on
   * before it reaches the wire.
   */
  async submitPrediction(left: number, right: number): Promise<Task | null> {
    const task = this.requireTask();
    if (!isBinary(left) || !isBinary(right)) {
      throw new SessionError(
        `predictions must be 0 or 1 per breast (got left=${left}, right=${right})`,
      );
    }
    try {
      await this.api.submitPrediction(
        this.studyId,
        this.token,
        this.readerId,
        task.exam_id,
        left,
        right,
      );
    } catch (err) {
      if (err instanceof ApiError && err.isConflict) {
        // Another tab or a retried request already recorded this read;
        // resync rather than surface a dead end.
        return this.refresh();
      }
      throw err;
    }
    return this.refresh();
  }

  /**
   * Submit ROI boxes for one image of the current (annotation-mode) task.
   * Does not advance the task — predictions do that; ROIs attach to an
   * already-submitted read.
   */
  async submitRois(imageId: string, boxes: RoiBox[]): Promise<void> {
    await this.api.submitRois(
      this.studyId,
      this.token,
      this.readerId,
      imageId,
      boxes,
    );
  }

  /** Image URLs of the current task, for display or prefetch. */
  imageUrls(): string[] {
    return (this.task?.images ?? []).map((im) => this.api.resolve(im.url));
  }

  /** Images of the current task on the given side. */
  imagesForSide(side: "left" | "right"): TaskImage[] {
    return (this.task?.images ?? []).filter((im) => im.side === side);
  }

  private requireTask(): Task {
    if (this.task === null) {
      throw new SessionError(
        this.phase === "done"
          ? "all assigned exams have been read"
          : "no task loaded; call refresh() first",
      );
    }
    return this.task;
  }
}

function isBinary(v: number): boolean {
  return v === 0 || v === 1;
}
