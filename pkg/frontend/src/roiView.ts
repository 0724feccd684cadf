/**
 * ROI annotation screen for one malignant-called breast image: shows the
 * 250 px reference template in the bottom corner, lets the reader draw up
 * to three boxes (drawn sizes snap into the +-20% tolerance), and blocks
 * submission while any box is off-template.
 *
 * All rules here are advisory duplicates of the server's; the server
 * remains the authority on what is stored.
 */

import type { RoiBox } from "./api.js";
import {
  ROI_MAX_BOXES,
  ROI_TEMPLATE_EDGE_PX,
  RoiBoxSet,
  boxWithinTolerance,
} from "./roiModel.js";

export interface RoiViewOptions {
  /** Called with the final boxes when the reader submits. */
  onSubmit: (boxes: RoiBox[]) => Promise<void>;
}

export interface RoiViewHandle {
  root: HTMLElement;
  boxes(): readonly RoiBox[];
  /** Draw a box as the reader would; returns the stored (snapped) box or null if refused. */
  drawBox(x: number, y: number, w: number, h: number): RoiBox | null;
  resizeBox(index: number, w: number, h: number): void;
  removeBox(index: number): void;
  warning(): string;
  submitEnabled(): boolean;
  submit(): Promise<void>;
  message(): string;
}

export function renderRoiView(
  doc: Document,
  container: HTMLElement,
  image: { image_id: string; width_px: number; height_px: number },
  options: RoiViewOptions,
): RoiViewHandle {
  container.textContent = "";
  const root = doc.createElement("div");
  root.className = "roi-view";
  container.appendChild(root);

  const stage = doc.createElement("div");
  stage.className = "roi-stage";
  stage.style.width = `${image.width_px}px`;
  stage.style.height = `${image.height_px}px`;
  root.appendChild(stage);

  // Reference template pinned to the bottom corner: the size every ROI is
  // judged against.
  const template = doc.createElement("div");
  template.className = "roi-template";
  template.style.width = `${ROI_TEMPLATE_EDGE_PX}px`;
  template.style.height = `${ROI_TEMPLATE_EDGE_PX}px`;
  template.style.position = "absolute";
  template.style.left = "0";
  template.style.bottom = "0";
  stage.appendChild(template);

  const boxLayer = doc.createElement("div");
  boxLayer.className = "roi-boxes";
  stage.appendChild(boxLayer);

  const warningEl = doc.createElement("p");
  warningEl.className = "roi-warning";
  warningEl.setAttribute("role", "alert");
  root.appendChild(warningEl);

  const counter = doc.createElement("span");
  counter.className = "roi-count";
  root.appendChild(counter);

  const submitButton = doc.createElement("button");
  submitButton.type = "button";
  submitButton.className = "roi-submit";
  submitButton.textContent = "Submit ROIs";
  root.appendChild(submitButton);

  const messageEl = doc.createElement("p");
  messageEl.className = "message";
  messageEl.setAttribute("role", "status");
  root.appendChild(messageEl);

  const set = new RoiBoxSet(image.width_px, image.height_px);

  const redraw = () => {
    boxLayer.textContent = "";
    set.all.forEach((box, index) => {
      const el = doc.createElement("div");
      el.className = "roi-box";
      if (!boxWithinTolerance(box)) el.classList.add("off-template");
      el.style.position = "absolute";
      el.style.left = `${box.x}px`;
      el.style.top = `${box.y}px`;
      el.style.width = `${box.w}px`;
      el.style.height = `${box.h}px`;
      el.dataset.index = String(index);
      boxLayer.appendChild(el);
    });
    counter.textContent = `${set.count} / ${ROI_MAX_BOXES} boxes`;
    const problems = set.problems();
    if (problems.length > 0) {
      warningEl.textContent = `Box ${problems[0]!.index + 1} is outside the template tolerance; resize it before submitting.`;
    } else if (limitWarning) {
      warningEl.textContent = `At most ${ROI_MAX_BOXES} boxes per image.`;
    } else {
      warningEl.textContent = "";
    }
    submitButton.disabled = !set.submittable;
  };

  let limitWarning = false;
  set.onEdit((ev) => {
    limitWarning = ev.kind === "rejected" && ev.reason === "limit";
    redraw();
  });

  // Drag on the stage to draw a new box.
  let drawing: { x: number; y: number } | null = null;
  stage.addEventListener("mousedown", (ev) => {
    const rect = stage.getBoundingClientRect();
    drawing = { x: ev.clientX - rect.left, y: ev.clientY - rect.top };
  });
  stage.addEventListener("mouseup", (ev) => {
    if (drawing === null) return;
    const rect = stage.getBoundingClientRect();
    const endX = ev.clientX - rect.left;
    const endY = ev.clientY - rect.top;
    set.add(
      Math.min(drawing.x, endX),
      Math.min(drawing.y, endY),
      Math.abs(endX - drawing.x),
      Math.abs(endY - drawing.y),
    );
    drawing = null;
  });

  const submit = async () => {
    if (!set.submittable) {
      return;
    }
    try {
      await options.onSubmit([...set.all]);
      messageEl.textContent = "ROIs recorded.";
    } catch (err) {
      messageEl.textContent =
        err instanceof Error ? err.message : "Submission failed; try again.";
    }
  };
  submitButton.addEventListener("click", () => void submit());

  redraw();

  return {
    root,
    boxes: () => set.all,
    drawBox: (x, y, w, h) => set.add(x, y, w, h),
    resizeBox: (index, w, h) => set.resize(index, w, h),
    removeBox: (index) => set.remove(index),
    warning: () => warningEl.textContent ?? "",
    submitEnabled: () => !submitButton.disabled,
    submit,
    message: () => messageEl.textContent ?? "",
  };
}
