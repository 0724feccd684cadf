/**
 * Browser entry point. Reads study/reader/token from the query string,
 * resumes the session from the server, and loops: reading screen →
 * submit → (annotation mode: ROI screens for malignant-called breasts) →
 * next task, prefetching the following task's images while the current
 * one is on screen.
 */

import { ApiError, StudyApi, type Task } from "./api.js";
import { prefetchImages, renderReadingView } from "./readingView.js";
import { renderRoiView } from "./roiView.js";
import { ReadingSession } from "./session.js";

export async function startApp(
  doc: Document,
  container: HTMLElement,
  location: { search: string; origin: string },
): Promise<void> {
  const params = new URLSearchParams(location.search);
  const studyId = params.get("study");
  const readerId = params.get("reader");
  const token = params.get("token");
  if (!studyId || !readerId || !token) {
    container.textContent =
      "Missing study, reader, or token in the URL. Ask the study coordinator for your link.";
    return;
  }

  const api = new StudyApi(params.get("server") ?? location.origin);
  const session = new ReadingSession(api, studyId, readerId, token);

  const showDone = () => {
    container.textContent = "";
    const done = doc.createElement("h1");
    done.textContent = "All assigned exams are read. Thank you.";
    container.appendChild(done);
  };

  const showTask = (task: Task) => {
    renderReadingView(doc, container, task, {
      resolveUrl: (u) => api.resolve(u),
      onSubmit: async (left, right) => {
        const malignantImages = task.images.filter(
          (im) =>
            (im.side === "left" ? left : right) === 1 && im.view === "cc",
        );
        const next = await session.submitPrediction(left, right);
        // Optimistically warm the cache for the next exam's images while
        // the reader is still annotating or reviewing this one.
        if (next !== null) {
          void prefetchImages(
            doc,
            next.images.map((im) => api.resolve(im.url)),
          );
        }
        if (task.mode === "annotation" && malignantImages.length > 0) {
          await annotateSequentially(malignantImages, next);
          return;
        }
        advance(next);
      },
    });
  };

  const annotateSequentially = async (
    images: Array<{ image_id: string; width_px: number; height_px: number }>,
    next: Task | null,
  ) => {
    const [image, ...rest] = images;
    if (image === undefined) {
      advance(next);
      return;
    }
    renderRoiView(doc, container, image, {
      onSubmit: async (boxes) => {
        try {
          await session.submitRois(image.image_id, boxes);
        } catch (err) {
          if (!(err instanceof ApiError)) throw err;
          throw new Error(`ROIs rejected: ${err.message}`);
        }
        await annotateSequentially(rest, next);
      },
    });
  };

  const advance = (task: Task | null) => {
    if (task === null) showDone();
    else showTask(task);
  };

  advance(await session.refresh());
}
