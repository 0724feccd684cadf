/**
 * Typed HTTP client for the reader-study server.
 *
 * Every response body is validated with zod before it reaches the rest of
 * the UI, so a drifting server contract fails loudly at the boundary rather
 * than as an undefined somewhere in a view.
 */

import { z } from "zod";

export const TaskImageSchema = z.object({
  image_id: z.string(),
  side: z.enum(["left", "right"]),
  view: z.enum(["cc", "mlo"]),
  height_px: z.number().int().positive(),
  width_px: z.number().int().positive(),
  url: z.string(),
});
export type TaskImage = z.infer<typeof TaskImageSchema>;

export const TaskSchema = z.object({
  exam_id: z.string(),
  mode: z.enum(["perturbation", "annotation"]),
  progress: z.number().int().nonnegative(),
  total: z.number().int().positive(),
  images: z.array(TaskImageSchema),
});
export type Task = z.infer<typeof TaskSchema>;

const NextResponseSchema = z.union([
  z.object({ done: z.literal(true) }),
  z.object({ done: z.literal(false), task: TaskSchema }),
]);

export const StudyCreatedSchema = z.object({
  study_id: z.string(),
  mode: z.enum(["perturbation", "annotation"]),
  readers: z.array(z.string()),
  tokens: z.record(z.string(), z.string()),
  n_severities: z.number().int().positive(),
});
export type StudyCreated = z.infer<typeof StudyCreatedSchema>;

const AckSchema = z.object({ ok: z.literal(true) });

const ErrorBodySchema = z.object({ error: z.string() });

export interface ExamImageSpec {
  image_id: string;
  side: "left" | "right";
  view: "cc" | "mlo";
  height_px?: number;
  width_px?: number;
}

export interface ExamSpec {
  exam_id: string;
  left_case_id: string;
  right_case_id: string;
  images: ExamImageSpec[];
}

export interface CreateStudyRequest {
  readers: string[];
  exams: ExamSpec[];
  n_severities?: number;
  mode?: "perturbation" | "annotation";
  seed?: number;
  balanced?: boolean;
}

export interface RoiBox {
  x: number;
  y: number;
  w: number;
  h: number;
}

/** Server-reported failure, carrying the HTTP status and the server's message. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }

  get isConflict(): boolean {
    return this.status === 409;
  }
  get isValidation(): boolean {
    return this.status === 422 || this.status === 400;
  }
}

export type FetchLike = (
  input: string,
  init?: RequestInit,
) => Promise<Response>;

export class StudyApi {
  constructor(
    readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  /** Absolute URL for a server-relative path such as an image URL from a task. */
  resolve(path: string): string {
    return new URL(path, this.baseUrl).toString();
  }

  async createStudy(req: CreateStudyRequest): Promise<StudyCreated> {
    const body = await this.request("POST", "/studies", req);
    return StudyCreatedSchema.parse(body);
  }

  async nextTask(
    studyId: string,
    readerId: string,
    token: string,
  ): Promise<Task | null> {
    const body = await this.request(
      "GET",
      `/studies/${encodeURIComponent(studyId)}/readers/${encodeURIComponent(readerId)}/next`,
      undefined,
      token,
    );
    const parsed = NextResponseSchema.parse(body);
    return parsed.done ? null : parsed.task;
  }

  async submitPrediction(
    studyId: string,
    token: string,
    readerId: string,
    examId: string,
    left: number,
    right: number,
  ): Promise<void> {
    const body = await this.request(
      "POST",
      `/studies/${encodeURIComponent(studyId)}/predictions`,
      { reader_id: readerId, exam_id: examId, left, right },
      token,
    );
    AckSchema.parse(body);
  }

  async submitRois(
    studyId: string,
    token: string,
    readerId: string,
    imageId: string,
    boxes: RoiBox[],
  ): Promise<void> {
    const body = await this.request(
      "POST",
      `/studies/${encodeURIComponent(studyId)}/rois`,
      { reader_id: readerId, image_id: imageId, boxes },
      token,
    );
    AckSchema.parse(body);
  }

  /** Raw export payload (predictions + ROIs); used by tests and tooling, not readers. */
  async exportStudy(studyId: string): Promise<unknown> {
    return this.request(
      "GET",
      `/studies/${encodeURIComponent(studyId)}/export`,
    );
  }

  /** Fetch image bytes, throwing ApiError on a non-2xx status. */
  async fetchImage(url: string): Promise<ArrayBuffer> {
    const resp = await this.fetchFn(this.resolve(url));
    if (!resp.ok) {
      throw new ApiError(resp.status, await readErrorMessage(resp));
    }
    return resp.arrayBuffer();
  }

  private async request(
    method: "GET" | "POST",
    path: string,
    body?: unknown,
    token?: string,
  ): Promise<unknown> {
    const headers: Record<string, string> = {};
    if (body !== undefined) headers["Content-Type"] = "application/json";
    if (token !== undefined) headers["X-Reader-Token"] = token;
    const resp = await this.fetchFn(this.resolve(path), {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!resp.ok) {
      throw new ApiError(resp.status, await readErrorMessage(resp));
    }
    return resp.json();
  }
}

async function readErrorMessage(resp: Response): Promise<string> {
  try {
    const parsed = ErrorBodySchema.safeParse(await resp.json());
    if (parsed.success) return parsed.data.error;
  } catch {
    // non-JSON body; fall through to the status line
  }
  return `HTTP ${resp.status}`;
}
