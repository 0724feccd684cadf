/**
 * Client-side ROI rules, mirroring the server's: boxes are sized against a
 * 250 px square template with a +-20% edge tolerance, at most three per
 * image. These checks are advisory — the server re-validates every
 * submission authoritatively — but they keep readers from drawing boxes
 * that are guaranteed to bounce.
 */

import type { RoiBox } from "./api.js";

export const ROI_TEMPLATE_EDGE_PX = 250;
export const ROI_EDGE_TOLERANCE = 0.2;
export const ROI_MAX_BOXES = 3;

export const ROI_EDGE_MIN = ROI_TEMPLATE_EDGE_PX * (1 - ROI_EDGE_TOLERANCE);
export const ROI_EDGE_MAX = ROI_TEMPLATE_EDGE_PX * (1 + ROI_EDGE_TOLERANCE);

export function edgeWithinTolerance(edge: number): boolean {
  return edge >= ROI_EDGE_MIN && edge <= ROI_EDGE_MAX;
}

export function boxWithinTolerance(box: RoiBox): boolean {
  return edgeWithinTolerance(box.w) && edgeWithinTolerance(box.h);
}

/** Clamp one edge length into the template tolerance band. */
export function snapEdge(edge: number): number {
  return Math.round(Math.min(ROI_EDGE_MAX, Math.max(ROI_EDGE_MIN, edge)));
}

export interface BoxProblem {
  index: number;
  reason: "off_template" | "out_of_bounds";
}

export type RoiEditEvent =
  | { kind: "added"; box: RoiBox }
  | { kind: "removed"; index: number }
  | { kind: "resized"; index: number; box: RoiBox }
  | { kind: "rejected"; reason: "limit" };

/**
 * Editable set of ROI boxes for one image. Adding snaps dimensions into
 * tolerance; explicit resizes are kept as drawn so the editor can show an
 * off-template warning and block submission until fixed.
 */
export class RoiBoxSet {
  private boxes: RoiBox[] = [];
  private listeners: Array<(ev: RoiEditEvent) => void> = [];

  constructor(
    readonly imageWidth: number,
    readonly imageHeight: number,
  ) {}

  onEdit(listener: (ev: RoiEditEvent) => void): void {
    this.listeners.push(listener);
  }

  get all(): readonly RoiBox[] {
    return this.boxes;
  }

  get count(): number {
    return this.boxes.length;
  }

  get atLimit(): boolean {
    return this.boxes.length >= ROI_MAX_BOXES;
  }

  /**
   * Add a box drawn by the reader. Dimensions snap into the template
   * tolerance and the position is clamped in-bounds. A fourth box is
   * refused outright.
   */
  add(x: number, y: number, w: number, h: number): RoiBox | null {
    if (this.atLimit) {
      this.emit({ kind: "rejected", reason: "limit" });
      return null;
    }
    const box = this.clampIntoImage({
      x: Math.round(x),
      y: Math.round(y),
      w: snapEdge(w),
      h: snapEdge(h),
    });
    this.boxes.push(box);
    this.emit({ kind: "added", box });
    return box;
  }

  /** Resize without snapping; off-template sizes are flagged, not silently fixed. */
  resize(index: number, w: number, h: number): void {
    const box = this.boxes[index];
    if (box === undefined) throw new RangeError(`no box at index ${index}`);
    const resized = this.clampIntoImage({
      ...box,
      w: Math.round(w),
      h: Math.round(h),
    });
    this.boxes[index] = resized;
    this.emit({ kind: "resized", index, box: resized });
  }

  remove(index: number): void {
    if (index < 0 || index >= this.boxes.length) {
      throw new RangeError(`no box at index ${index}`);
    }
    this.boxes.splice(index, 1);
    this.emit({ kind: "removed", index });
  }

  /** Everything that would make the server refuse this set. */
  problems(): BoxProblem[] {
    const out: BoxProblem[] = [];
    this.boxes.forEach((box, index) => {
      if (!boxWithinTolerance(box)) {
        out.push({ index, reason: "off_template" });
      } else if (
        box.x < 0 ||
        box.y < 0 ||
        box.x + box.w > this.imageWidth ||
        box.y + box.h > this.imageHeight
      ) {
        out.push({ index, reason: "out_of_bounds" });
      }
    });
    return out;
  }

  get submittable(): boolean {
    return this.problems().length === 0;
  }

  private clampIntoImage(box: RoiBox): RoiBox {
    const x = Math.min(Math.max(box.x, 0), Math.max(this.imageWidth - box.w, 0));
    const y = Math.min(
      Math.max(box.y, 0),
      Math.max(this.imageHeight - box.h, 0),
    );
    return { ...box, x, y };
  }

  private emit(ev: RoiEditEvent): void {
    for (const fn of this.listeners) fn(ev);
  }
}
