/**
 * Reading screen: the four mammogram images in a ventral-hanging 2x2
 * composite (craniocaudal views on the top row, the right breast's images
 * in the left column), zoom/pan and window/level controls, and two binary
 * per-breast toggles gating the submit button.
 *
 * Plain DOM, no framework: the view returns a handle whose methods are the
 * same ones the event handlers call, so scripted tests drive exactly the
 * code paths a reader's clicks do.
 */

import type { Task, TaskImage } from "./api.js";

export type ImageLoader = (img: HTMLImageElement, url: string) => Promise<void>;

/** Default loader: point the element at the URL and await the load event. */
export const domImageLoader: ImageLoader = (img, url) =>
  new Promise((resolve, reject) => {
    img.onload = () => resolve();
    img.onerror = () => reject(new Error(`failed to load ${url}`));
    img.src = url;
  });

/** Load URLs into detached elements so the browser cache is warm for the next task. */
export async function prefetchImages(
  doc: Document,
  urls: string[],
  loader: ImageLoader = domImageLoader,
): Promise<void> {
  await Promise.allSettled(
    urls.map((url) => loader(doc.createElement("img"), url)),
  );
}

export interface ReadingViewOptions {
  loader?: ImageLoader;
  resolveUrl?: (url: string) => string;
  /** Called with the reader's per-breast calls once both toggles are set and submit is pressed. */
  onSubmit: (left: number, right: number) => Promise<void>;
}

export interface ReadingViewHandle {
  root: HTMLElement;
  /** Order of images as displayed, row-major. */
  displayedImages(): TaskImage[];
  setPrediction(side: "left" | "right", value: 0 | 1): void;
  prediction(side: "left" | "right"): 0 | 1 | null;
  submitEnabled(): boolean;
  /** Press submit; resolves after onSubmit settles. Rejects nothing: failures land in message(). */
  submit(): Promise<void>;
  message(): string;
  /** Per-cell load state, keyed by image id. */
  loadState(imageId: string): "loading" | "loaded" | "failed";
  retry(imageId: string): Promise<void>;
  setZoom(factor: number): void;
  setPan(dx: number, dy: number): void;
  setWindowLevel(brightnessPct: number, contrastPct: number): void;
  zoom(): number;
}

const VIEW_ROWS: Array<TaskImage["view"]> = ["cc", "mlo"];
// Ventral hanging: the right breast faces left, so its images sit in the
// left column of each row.
const SIDE_COLUMNS: Array<TaskImage["side"]> = ["right", "left"];

export function renderReadingView(
  doc: Document,
  container: HTMLElement,
  task: Task,
  options: ReadingViewOptions,
): ReadingViewHandle {
  const loader = options.loader ?? domImageLoader;
  const resolveUrl = options.resolveUrl ?? ((u) => u);

  container.textContent = "";
  const root = doc.createElement("div");
  root.className = "reading-view";
  container.appendChild(root);

  const progress = doc.createElement("div");
  progress.className = "progress";
  progress.textContent = `Exam ${task.progress + 1} of ${task.total}`;
  root.appendChild(progress);

  // --- image grid --------------------------------------------------------
  const grid = doc.createElement("div");
  grid.className = "hanging-grid";
  root.appendChild(grid);

  const ordered: TaskImage[] = [];
  for (const view of VIEW_ROWS) {
    for (const side of SIDE_COLUMNS) {
      const image = task.images.find(
        (im) => im.view === view && im.side === side,
      );
      if (image !== undefined) ordered.push(image);
    }
  }

  interface Cell {
    image: TaskImage;
    viewport: HTMLElement;
    img: HTMLImageElement;
    retryButton: HTMLButtonElement;
    state: "loading" | "loaded" | "failed";
  }
  const cells = new Map<string, Cell>();

  let zoomFactor = 1;
  let panX = 0;
  let panY = 0;
  let brightness = 100;
  let contrast = 100;

  const applyTransform = () => {
    for (const cell of cells.values()) {
      cell.img.style.transform = `translate(${panX}px, ${panY}px) scale(${zoomFactor})`;
      cell.img.style.filter = `brightness(${brightness}%) contrast(${contrast}%)`;
    }
  };

  const loadCell = async (cell: Cell) => {
    cell.state = "loading";
    cell.retryButton.hidden = true;
    try {
      await loader(cell.img, resolveUrl(cell.image.url));
      cell.state = "loaded";
    } catch {
      cell.state = "failed";
      cell.retryButton.hidden = false;
    }
    refreshSubmit();
  };

  for (const image of ordered) {
    const cell = doc.createElement("div");
    cell.className = `cell cell-${image.side}-${image.view}`;
    cell.dataset.imageId = image.image_id;
    cell.dataset.side = image.side;
    cell.dataset.view = image.view;

    const viewport = doc.createElement("div");
    viewport.className = "viewport";
    const img = doc.createElement("img");
    img.alt = `${image.side} breast, ${image.view.toUpperCase()} view`;
    img.draggable = false;
    viewport.appendChild(img);
    cell.appendChild(viewport);

    const retryButton = doc.createElement("button");
    retryButton.type = "button";
    retryButton.className = "retry";
    retryButton.textContent = "Retry image";
    retryButton.hidden = true;
    cell.appendChild(retryButton);

    grid.appendChild(cell);
    const record: Cell = { image, viewport, img, retryButton, state: "loading" };
    cells.set(image.image_id, record);
    retryButton.addEventListener("click", () => void loadCell(record));

    // Drag to pan, wheel to zoom — shared across cells so the hanging
    // stays in register while comparing sides.
    let dragging = false;
    let lastX = 0;
    let lastY = 0;
    viewport.addEventListener("mousedown", (ev) => {
      dragging = true;
      lastX = ev.clientX;
      lastY = ev.clientY;
    });
    viewport.addEventListener("mousemove", (ev) => {
      if (!dragging) return;
      panX += ev.clientX - lastX;
      panY += ev.clientY - lastY;
      lastX = ev.clientX;
      lastY = ev.clientY;
      applyTransform();
    });
    viewport.addEventListener("mouseup", () => {
      dragging = false;
    });
    viewport.addEventListener("wheel", (ev) => {
      ev.preventDefault();
      const step = (ev as WheelEvent).deltaY < 0 ? 1.1 : 1 / 1.1;
      zoomFactor = Math.min(16, Math.max(0.25, zoomFactor * step));
      applyTransform();
    });
  }

  // --- window/level -------------------------------------------------------
  const wl = doc.createElement("div");
  wl.className = "window-level";
  const brightnessInput = rangeInput(doc, "Brightness", 20, 300, 100);
  const contrastInput = rangeInput(doc, "Contrast", 20, 300, 100);
  wl.append(brightnessInput.wrapper, contrastInput.wrapper);
  root.appendChild(wl);
  brightnessInput.input.addEventListener("input", () => {
    brightness = Number(brightnessInput.input.value);
    applyTransform();
  });
  contrastInput.input.addEventListener("input", () => {
    contrast = Number(contrastInput.input.value);
    applyTransform();
  });

  // --- per-breast toggles and submit --------------------------------------
  const predictions: { left: 0 | 1 | null; right: 0 | 1 | null } = {
    left: null,
    right: null,
  };
  const toggleButtons = new Map<string, HTMLButtonElement>();

  const controls = doc.createElement("div");
  controls.className = "diagnosis-controls";
  root.appendChild(controls);

  for (const side of SIDE_COLUMNS) {
    const group = doc.createElement("fieldset");
    group.className = `toggle toggle-${side}`;
    const legend = doc.createElement("legend");
    legend.textContent = `${side === "left" ? "Left" : "Right"} breast`;
    group.appendChild(legend);
    for (const value of [0, 1] as const) {
      const btn = doc.createElement("button");
      btn.type = "button";
      btn.className = "call";
      btn.dataset.side = side;
      btn.dataset.value = String(value);
      btn.textContent = value === 1 ? "Malignant" : "No malignancy";
      btn.addEventListener("click", () => setPrediction(side, value));
      group.appendChild(btn);
      toggleButtons.set(`${side}:${value}`, btn);
    }
    controls.appendChild(group);
  }

  const submitButton = doc.createElement("button");
  submitButton.type = "button";
  submitButton.className = "submit";
  submitButton.textContent = "Submit diagnoses";
  submitButton.disabled = true;
  controls.appendChild(submitButton);

  const messageEl = doc.createElement("p");
  messageEl.className = "message";
  messageEl.setAttribute("role", "status");
  controls.appendChild(messageEl);

  const refreshSubmit = () => {
    const bothSet = predictions.left !== null && predictions.right !== null;
    submitButton.disabled = !bothSet || submitting;
    if (bothSet && messageEl.textContent === UNSET_MESSAGE) {
      messageEl.textContent = "";
    }
  };

  const setPrediction = (side: "left" | "right", value: 0 | 1) => {
    predictions[side] = value;
    for (const v of [0, 1] as const) {
      const btn = toggleButtons.get(`${side}:${v}`);
      if (btn) btn.classList.toggle("selected", v === value);
    }
    refreshSubmit();
  };

  const UNSET_MESSAGE = "Set a diagnosis for both breasts before submitting.";
  let submitting = false;

  const submit = async () => {
    if (predictions.left === null || predictions.right === null) {
      messageEl.textContent = UNSET_MESSAGE;
      return;
    }
    if (submitting) return;
    submitting = true;
    refreshSubmit();
    try {
      await options.onSubmit(predictions.left, predictions.right);
      messageEl.textContent = "";
    } catch (err) {
      messageEl.textContent =
        err instanceof Error ? err.message : "Submission failed; try again.";
    } finally {
      submitting = false;
      refreshSubmit();
    }
  };
  submitButton.addEventListener("click", () => void submit());

  // kick off the image loads
  const initialLoads = Promise.allSettled(
    [...cells.values()].map((cell) => loadCell(cell)),
  );
  void initialLoads;

  applyTransform();

  return {
    root,
    displayedImages: () => ordered.slice(),
    setPrediction,
    prediction: (side) => predictions[side],
    submitEnabled: () => !submitButton.disabled,
    submit,
    message: () => messageEl.textContent ?? "",
    loadState: (imageId) => {
      const cell = cells.get(imageId);
      if (cell === undefined) throw new RangeError(`unknown image ${imageId}`);
      return cell.state;
    },
    retry: async (imageId) => {
      const cell = cells.get(imageId);
      if (cell === undefined) throw new RangeError(`unknown image ${imageId}`);
      await loadCell(cell);
    },
    setZoom: (factor) => {
      zoomFactor = factor;
      applyTransform();
    },
    setPan: (dx, dy) => {
      panX = dx;
      panY = dy;
      applyTransform();
    },
    setWindowLevel: (b, c) => {
      brightness = b;
      contrast = c;
      applyTransform();
    },
    zoom: () => zoomFactor,
  };
}

function rangeInput(
  doc: Document,
  label: string,
  min: number,
  max: number,
  value: number,
): { wrapper: HTMLElement; input: HTMLInputElement } {
  const wrapper = doc.createElement("label");
  wrapper.className = "wl-control";
  wrapper.textContent = label;
  const input = doc.createElement("input");
  input.type = "range";
  input.min = String(min);
  input.max = String(max);
  input.value = String(value);
  wrapper.appendChild(input);
  return { wrapper, input };
}
