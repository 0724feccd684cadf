"""Reader-study service: randomized severity assignment, prediction capture,
and ROI annotation capture.

`StudyStore` holds all protocol logic and persists every accepted event to an
append-only, checksummed JSON-lines log (crash between accept and ack can
only lose the event, never corrupt the store). `create_app` wraps the store
in an HTTP+JSON API.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import secrets
import threading
from dataclasses import dataclass, field

import numpy as np

from . import freqfilter
from .data import (
    PredictionRecord,
    PredictionSet,
    RoiAnnotation,
    RoiBox,
    BreastCase,
    box_edge_ok,
)


class StudyError(Exception):
    status_code = 400


class NotFoundError(StudyError):
    status_code = 404


class ConflictError(StudyError):
    status_code = 409


class AuthError(StudyError):
    status_code = 403


class ValidationError(StudyError):
    status_code = 422


@dataclass
class ExamImage:
    image_id: str
    side: str  # "left" | "right"
    view: str  # "cc" | "mlo"
    height_px: int
    width_px: int


@dataclass
class Exam:
    exam_id: str
    left_case_id: str
    right_case_id: str
    images: list[ExamImage] = field(default_factory=list)


@dataclass
class StudyDesign:
    study_id: str
    mode: str  # "perturbation" | "annotation"
    readers: list[str]
    exams: list[Exam]
    n_severities: int
    seed: int
    assignment: dict[tuple[str, str], int]  # (reader, exam) -> severity index
    task_order: dict[str, list[str]]  # reader -> exam ids
    tokens: dict[str, str]  # reader -> opaque token
    balanced: bool = False


@dataclass
class Submission:
    reader_id: str
    exam_id: str
    left: int
    right: int
    submitted_at: str


def create_study(
    study_id: str,
    readers: list[str],
    exams: list[Exam],
    n_severities: int,
    mode: str,
    seed: int,
    balanced: bool = False,
) -> StudyDesign:
    """Build the reader x exam severity assignment and per-reader task orders.

    Perturbation mode draws each (reader, exam) severity independently and
    uniformly (the balanced option instead shuffles an equal-count severity
    vector per reader). Annotation mode assigns severity 0 everywhere.
    """
    if not readers or not exams:
        raise ValidationError("readers and exams must be nonempty")
    if len(set(readers)) != len(readers):
        raise ConflictError("duplicate reader ids")
    exam_ids = [e.exam_id for e in exams]
    if len(set(exam_ids)) != len(exam_ids):
        raise ConflictError("duplicate exam ids")
    if mode not in ("perturbation", "annotation"):
        raise ValidationError(f"unknown mode {mode!r}")

    rng = np.random.default_rng(seed)
    assignment: dict[tuple[str, str], int] = {}
    for reader in readers:
        if mode == "annotation":
            severities = np.zeros(len(exams), dtype=int)
        elif balanced:
            severities = np.resize(np.arange(n_severities), len(exams))
            rng.shuffle(severities)
        else:
            severities = rng.integers(0, n_severities, size=len(exams))
        for exam, sev in zip(exams, severities):
            assignment[(reader, exam.exam_id)] = int(sev)

    task_order = {}
    for reader in readers:
        order = list(exam_ids)
        rng.shuffle(order)
        task_order[reader] = order

    tokens = {reader: secrets.token_hex(16) for reader in readers}
    return StudyDesign(
        study_id=study_id,
        mode=mode,
        readers=list(readers),
        exams=list(exams),
        n_severities=n_severities,
        seed=seed,
        assignment=assignment,
        task_order=task_order,
        tokens=tokens,
        balanced=balanced,
    )


class EventLog:
    """Append-only JSONL log; each line carries a length and sha256 checksum."""

    def __init__(self, path: str):
        self.path = path
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)

    def append(self, event: dict) -> None:
        body = json.dumps(event, sort_keys=True)
        line = json.dumps(
            {"len": len(body), "sha256": hashlib.sha256(body.encode()).hexdigest(), "event": event},
            sort_keys=True,
        )
        with open(self.path, "a") as f:
            f.write(line + "\n")
            f.flush()
            os.fsync(f.fileno())

    def replay(self) -> list[dict]:
        if not os.path.exists(self.path):
            return []
        events = []
        with open(self.path) as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                try:
                    wrapper = json.loads(line)
                    body = json.dumps(wrapper["event"], sort_keys=True)
                    if len(body) != wrapper["len"]:
                        break
                    if hashlib.sha256(body.encode()).hexdigest() != wrapper["sha256"]:
                        break
                except (json.JSONDecodeError, KeyError):
                    break  # truncated or torn tail entry; stop replay here
                events.append(wrapper["event"])
        return events


class StudyStore:
    """All live study state; writes serialize through one lock."""

    def __init__(self, root_dir: str):
        self.root_dir = root_dir
        os.makedirs(root_dir, exist_ok=True)
        self.log = EventLog(os.path.join(root_dir, "events.jsonl"))
        self.studies: dict[str, StudyDesign] = {}
        self.submissions: dict[str, dict[tuple[str, str], Submission]] = {}
        self.rois: dict[str, list[RoiAnnotation]] = {}
        self._lock = threading.Lock()
        for event in self.log.replay():
            self._apply(event)

    # -- event application -------------------------------------------------

    def _apply(self, event: dict) -> None:
        kind = event["type"]
        if kind == "create_study":
            design = _design_from_event(event)
            self.studies[design.study_id] = design
            self.submissions[design.study_id] = {}
            self.rois[design.study_id] = []
        elif kind == "prediction":
            sub = Submission(
                reader_id=event["reader_id"],
                exam_id=event["exam_id"],
                left=event["left"],
                right=event["right"],
                submitted_at=event["submitted_at"],
            )
            self.submissions[event["study_id"]][(sub.reader_id, sub.exam_id)] = sub
        elif kind == "rois":
            ann = RoiAnnotation(
                reader_id=event["reader_id"],
                image_id=event["image_id"],
                boxes=[RoiBox(b["x"], b["y"], b["w"], b["h"]) for b in event["boxes"]],
            )
            self.rois[event["study_id"]].append(ann)

    def _commit(self, event: dict) -> None:
        self.log.append(event)
        self._apply(event)

    # -- protocol operations ------------------------------------------------

    def create_study(
        self,
        readers: list[str],
        exams: list[Exam],
        n_severities: int,
        mode: str,
        seed: int,
        balanced: bool = False,
        study_id: str | None = None,
    ) -> StudyDesign:
        with self._lock:
            study_id = study_id or f"study-{len(self.studies):04d}"
            if study_id in self.studies:
                raise ConflictError(f"study {study_id!r} already exists")
            design = create_study(study_id, readers, exams, n_severities, mode, seed, balanced)
            self._commit(_design_to_event(design))
            return design

    def _study(self, study_id: str) -> StudyDesign:
        if study_id not in self.studies:
            raise NotFoundError(f"unknown study {study_id!r}")
        return self.studies[study_id]

    def authenticate(self, study_id: str, reader_id: str, token: str | None) -> None:
        design = self._study(study_id)
        if reader_id not in design.tokens:
            raise NotFoundError(f"unknown reader {reader_id!r}")
        if token is not None and not secrets.compare_digest(design.tokens[reader_id], token):
            raise AuthError("bad reader token")

    def next_task(self, study_id: str, reader_id: str) -> dict | None:
        """The reader's next unsubmitted exam, or None when exhausted. Idempotent."""
        design = self._study(study_id)
        if reader_id not in design.task_order:
            raise NotFoundError(f"reader {reader_id!r} not enrolled")
        done = self.submissions[study_id]
        progress = 0
        for exam_id in design.task_order[reader_id]:
            if (reader_id, exam_id) in done:
                progress += 1
                continue
            exam = next(e for e in design.exams if e.exam_id == exam_id)
            severity = design.assignment[(reader_id, exam_id)]
            return {
                "exam_id": exam_id,
                "mode": design.mode,
                "progress": progress,
                "total": len(design.task_order[reader_id]),
                "images": [
                    {
                        "image_id": im.image_id,
                        "side": im.side,
                        "view": im.view,
                        "height_px": im.height_px,
                        "width_px": im.width_px,
                        "url": f"/images/{im.image_id}?severity={severity}&study={study_id}",
                    }
                    for im in exam.images
                ],
            }
        return None

    def record_prediction(self, study_id: str, reader_id: str, exam_id: str, left, right, now: str) -> None:
        with self._lock:
            design = self._study(study_id)
            if reader_id not in design.task_order:
                raise NotFoundError(f"reader {reader_id!r} not enrolled")
            if exam_id not in design.task_order[reader_id]:
                raise AuthError(f"exam {exam_id!r} not assigned to reader {reader_id!r}")
            if (reader_id, exam_id) in self.submissions[study_id]:
                raise ConflictError(f"(reader, exam) ({reader_id}, {exam_id}) already submitted")
            current = self.next_task(study_id, reader_id)
            if current is None or current["exam_id"] != exam_id:
                raise AuthError(f"exam {exam_id!r} is not the reader's current task")
            if left not in (0, 1) or right not in (0, 1):
                raise ValidationError("per-breast predictions must be 0 or 1")
            self._commit(
                {
                    "type": "prediction",
                    "study_id": study_id,
                    "reader_id": reader_id,
                    "exam_id": exam_id,
                    "left": int(left),
                    "right": int(right),
                    "submitted_at": now,
                }
            )

    def record_rois(self, study_id: str, reader_id: str, image_id: str, boxes: list[dict]) -> None:
        with self._lock:
            design = self._study(study_id)
            if design.mode != "annotation":
                raise ValidationError("ROI capture is only available in annotation mode")
            exam, image = self._find_image(design, image_id)
            sub = self.submissions[study_id].get((reader_id, exam.exam_id))
            if sub is None:
                raise StudyError("predictions must be submitted before annotating")
            predicted = sub.left if image.side == "left" else sub.right
            if predicted != 1:
                raise StudyError("ROIs are only collected for breasts predicted malignant")
            if len(boxes) > 3:
                raise ValidationError(f"{len(boxes)} boxes; limit is 3")
            parsed = []
            for b in boxes:
                box = RoiBox(int(b["x"]), int(b["y"]), int(b["w"]), int(b["h"]))
                if not box_edge_ok(box.w) or not box_edge_ok(box.h):
                    raise ValidationError(f"box {box.w}x{box.h} is outside the template tolerance")
                if box.x < 0 or box.y < 0 or box.x + box.w > image.width_px or box.y + box.h > image.height_px:
                    raise ValidationError("box exceeds image bounds")
                parsed.append(box)
            self._commit(
                {
                    "type": "rois",
                    "study_id": study_id,
                    "reader_id": reader_id,
                    "image_id": image_id,
                    "boxes": [{"x": b.x, "y": b.y, "w": b.w, "h": b.h} for b in parsed],
                }
            )

    def _find_image(self, design: StudyDesign, image_id: str) -> tuple[Exam, ExamImage]:
        for exam in design.exams:
            for im in exam.images:
                if im.image_id == image_id:
                    return exam, im
        raise NotFoundError(f"unknown image {image_id!r}")

    # -- export -------------------------------------------------------------

    def export_predictions(self, study_id: str) -> PredictionSet:
        design = self._study(study_id)
        records = []
        for sub in self.submissions[study_id].values():
            severity = design.assignment[(sub.reader_id, sub.exam_id)]
            exam = next(e for e in design.exams if e.exam_id == sub.exam_id)
            for case_id, score in ((exam.left_case_id, sub.left), (exam.right_case_id, sub.right)):
                records.append(
                    PredictionRecord(
                        reader_id=sub.reader_id,
                        reader_kind="human",
                        case_id=case_id,
                        severity_index=severity,
                        score=float(score),
                    )
                )
        cases = [
            BreastCase(case_id=cid, exam_id=e.exam_id, side=side, label="nonbiopsied")
            for e in design.exams
            for side, cid in (("left", e.left_case_id), ("right", e.right_case_id))
        ]
        return PredictionSet(records=records, cases=cases, n_severities=design.n_severities)

    def export_rois(self, study_id: str) -> list[RoiAnnotation]:
        self._study(study_id)
        return list(self.rois[study_id])


def _design_to_event(design: StudyDesign) -> dict:
    return {
        "type": "create_study",
        "study_id": design.study_id,
        "mode": design.mode,
        "readers": design.readers,
        "n_severities": design.n_severities,
        "seed": design.seed,
        "balanced": design.balanced,
        "exams": [
            {
                "exam_id": e.exam_id,
                "left_case_id": e.left_case_id,
                "right_case_id": e.right_case_id,
                "images": [
                    {
                        "image_id": im.image_id,
                        "side": im.side,
                        "view": im.view,
                        "height_px": im.height_px,
                        "width_px": im.width_px,
                    }
                    for im in e.images
                ],
            }
            for e in design.exams
        ],
        "assignment": [[r, e, s] for (r, e), s in design.assignment.items()],
        "task_order": design.task_order,
        "tokens": design.tokens,
    }


def _design_from_event(event: dict) -> StudyDesign:
    exams = [
        Exam(
            exam_id=e["exam_id"],
            left_case_id=e["left_case_id"],
            right_case_id=e["right_case_id"],
            images=[ExamImage(**im) for im in e["images"]],
        )
        for e in event["exams"]
    ]
    assignment = {(r, e): int(s) for r, e, s in event["assignment"]}
    return StudyDesign(
        study_id=event["study_id"],
        mode=event["mode"],
        readers=event["readers"],
        exams=exams,
        n_severities=event["n_severities"],
        seed=event["seed"],
        assignment=assignment,
        task_order=event["task_order"],
        tokens=event["tokens"],
        balanced=event.get("balanced", False),
    )


# ---------------------------------------------------------------------------
# HTTP wiring



# request bodies for the HTTP layer (module scope so FastAPI can resolve them)
try:
    from pydantic import BaseModel

    class ImageIn(BaseModel):
        image_id: str
        side: str
        view: str
        height_px: int = 512
        width_px: int = 512

    class ExamIn(BaseModel):
        exam_id: str
        left_case_id: str
        right_case_id: str
        images: list[ImageIn] = []

    class StudyIn(BaseModel):
        readers: list[str]
        exams: list[ExamIn]
        n_severities: int = 9
        mode: str = "perturbation"
        seed: int = 0
        balanced: bool = False

    class PredictionIn(BaseModel):
        reader_id: str
        exam_id: str
        left: int
        right: int

    class RoisIn(BaseModel):
        reader_id: str
        image_id: str
        boxes: list[dict]
except ImportError:  # pydantic only needed when serving
    pass


def create_app(store: StudyStore, ladder=None):
    from datetime import datetime, timezone

    from fastapi import FastAPI, Header, Query, Response
    from fastapi.responses import JSONResponse, PlainTextResponse

    ladder = ladder or freqfilter.default_ladder()
    app = FastAPI(title="reader study server")

    @app.exception_handler(StudyError)
    async def _study_error(request, exc: StudyError):
        return JSONResponse(status_code=exc.status_code, content={"error": str(exc)})

    @app.post("/studies")
    def post_study(body: StudyIn):
        exams = [
            Exam(
                exam_id=e.exam_id,
                left_case_id=e.left_case_id,
                right_case_id=e.right_case_id,
                images=[ExamImage(**im.model_dump()) for im in e.images],
            )
            for e in body.exams
        ]
        design = store.create_study(
            body.readers, exams, body.n_severities, body.mode, body.seed, body.balanced
        )
        return {
            "study_id": design.study_id,
            "mode": design.mode,
            "readers": design.readers,
            "tokens": design.tokens,
            "n_severities": design.n_severities,
        }

    @app.get("/studies/{study_id}/readers/{reader_id}/next")
    def get_next(study_id: str, reader_id: str, x_reader_token: str | None = Header(default=None)):
        store.authenticate(study_id, reader_id, x_reader_token)
        task = store.next_task(study_id, reader_id)
        if task is None:
            return {"done": True}
        return {"done": False, "task": task}

    @app.post("/studies/{study_id}/predictions")
    def post_prediction(study_id: str, body: PredictionIn, x_reader_token: str | None = Header(default=None)):
        store.authenticate(study_id, body.reader_id, x_reader_token)
        now = datetime.now(timezone.utc).isoformat()
        store.record_prediction(study_id, body.reader_id, body.exam_id, body.left, body.right, now)
        return {"ok": True}

    @app.post("/studies/{study_id}/rois")
    def post_rois(study_id: str, body: RoisIn, x_reader_token: str | None = Header(default=None)):
        store.authenticate(study_id, body.reader_id, x_reader_token)
        store.record_rois(study_id, body.reader_id, body.image_id, body.boxes)
        return {"ok": True}

    @app.get("/studies/{study_id}/export")
    def get_export(study_id: str):
        preds = store.export_predictions(study_id)
        rois = store.export_rois(study_id)
        pred_lines = [
            {
                "reader_id": r.reader_id,
                "reader_kind": r.reader_kind,
                "case_id": r.case_id,
                "severity_index": r.severity_index,
                "score": r.score,
            }
            for r in preds.records
        ]
        roi_lines = [
            {
                "reader_id": a.reader_id,
                "image_id": a.image_id,
                "boxes": [{"x": b.x, "y": b.y, "w": b.w, "h": b.h} for b in a.boxes],
            }
            for a in rois
        ]
        return {"predictions": pred_lines, "rois": roi_lines}

    @app.get("/studies/{study_id}/export/predictions.jsonl", response_class=PlainTextResponse)
    def get_export_predictions(study_id: str):
        preds = store.export_predictions(study_id)
        return "".join(
            json.dumps(
                {
                    "reader_id": r.reader_id,
                    "reader_kind": r.reader_kind,
                    "case_id": r.case_id,
                    "severity_index": r.severity_index,
                    "score": r.score,
                },
                sort_keys=True,
            )
            + "\n"
            for r in preds.records
        )

    @app.get("/studies/{study_id}/export/rois.jsonl", response_class=PlainTextResponse)
    def get_export_rois(study_id: str):
        rois = store.export_rois(study_id)
        return "".join(
            json.dumps(
                {
                    "reader_id": a.reader_id,
                    "image_id": a.image_id,
                    "boxes": [{"x": b.x, "y": b.y, "w": b.w, "h": b.h} for b in a.boxes],
                },
                sort_keys=True,
            )
            + "\n"
            for a in rois
        )

    @app.get("/images/{image_id}")
    def get_image(image_id: str, severity: int = Query(default=0), study: str | None = None):
        img = _load_or_synthesize_image(store.root_dir, image_id)
        if not 0 <= severity < len(ladder):
            raise ValidationError(f"severity {severity} outside the ladder")
        filtered = freqfilter.lowpass(img, ladder[severity])
        png = _encode_png16(freqfilter.quantize_u16(filtered))
        return Response(content=png, media_type="image/png")

    return app


def _load_or_synthesize_image(root_dir: str, image_id: str) -> "freqfilter.GrayImage":
    from PIL import Image

    path = os.path.join(root_dir, "images", f"{image_id}.png")
    if os.path.exists(path):
        arr = np.asarray(Image.open(path), dtype=np.float64)
        return freqfilter.GrayImage(arr, mm_per_pixel=0.1)
    # deterministic phantom fallback so demo studies work without real data
    from .synthbench import PhantomSpec, synth_lesion_image

    seed = int.from_bytes(hashlib.sha256(image_id.encode()).digest()[:4], "big")
    spec = PhantomSpec(kind="mixed", count=8, size_px=2, contrast=8000.0, background_seed=seed)
    return synth_lesion_image(spec, 512, 512, mm_per_pixel=0.1, seed=seed)


def _encode_png16(arr: np.ndarray) -> bytes:
    from PIL import Image

    img = Image.fromarray(arr.astype(np.uint16), mode="I;16")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()
