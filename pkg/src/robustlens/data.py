"""Canonical data model and file I/O for predictions, cases, designs, and ROIs.

All on-disk formats are JSON lines; see the `load_*` / `save_*` pairs.
Writes are whole-file atomic (write to a temp file, then rename).
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

SOFT_TISSUE_TAGS = frozenset({"mass", "asymmetry", "architectural_distortion"})
LESION_TAGS = SOFT_TISSUE_TAGS | {"microcalcification", "occult"}

ROI_TEMPLATE_EDGE_PX = 250
ROI_EDGE_TOLERANCE = 0.20  # +-20% of the template edge
ROI_MAX_BOXES = 3


class DataError(Exception):
    """Base error for malformed or inconsistent data files."""


class ParseError(DataError):
    pass


class ReferentialError(DataError):
    pass


class InvalidMetadataError(DataError):
    pass


class Subgroup(str, Enum):
    UNAMBIGUOUS_MICROCALC = "unambiguous_microcalc"
    UNAMBIGUOUS_SOFT_TISSUE = "unambiguous_soft_tissue"
    AMBIGUOUS = "ambiguous"
    OCCULT = "occult"
    NONBIOPSIED = "nonbiopsied"


@dataclass(frozen=True)
class BreastCase:
    case_id: str
    exam_id: str
    side: str  # "left" | "right"
    label: str  # "malignant" | "benign" | "nonbiopsied"
    lesion_tags: frozenset[str] = frozenset()

    def __post_init__(self):
        if self.side not in ("left", "right"):
            raise InvalidMetadataError(f"bad side {self.side!r} for case {self.case_id}")
        if self.label not in ("malignant", "benign", "nonbiopsied"):
            raise InvalidMetadataError(f"bad label {self.label!r} for case {self.case_id}")
        bad = set(self.lesion_tags) - LESION_TAGS
        if bad:
            raise InvalidMetadataError(f"unknown lesion tags {sorted(bad)} for case {self.case_id}")
        if self.label == "nonbiopsied" and self.lesion_tags:
            raise InvalidMetadataError(f"nonbiopsied case {self.case_id} carries lesion tags")
        if self.label in ("malignant", "benign") and not self.lesion_tags:
            raise InvalidMetadataError(f"biopsied case {self.case_id} has no lesion tags")

    @property
    def subgroup(self) -> Subgroup:
        return subgroup_assign(self.lesion_tags, self.label)


def subgroup_assign(tags: Iterable[str], label: str) -> Subgroup:
    """Map a case's lesion tags and biopsy label to its analysis subgroup."""
    tags = set(tags)
    if label == "nonbiopsied":
        return Subgroup.NONBIOPSIED
    if not tags:
        raise InvalidMetadataError("biopsied case with empty lesion tags")
    has_mc = "microcalcification" in tags
    has_soft = bool(tags & SOFT_TISSUE_TAGS)
    if has_mc and has_soft:
        return Subgroup.AMBIGUOUS
    if has_mc:
        return Subgroup.UNAMBIGUOUS_MICROCALC
    if has_soft:
        return Subgroup.UNAMBIGUOUS_SOFT_TISSUE
    # occult only
    return Subgroup.OCCULT


@dataclass(frozen=True)
class PredictionRecord:
    reader_id: str
    reader_kind: str  # "human" | "machine"
    case_id: str
    severity_index: int
    score: float

    def __post_init__(self):
        if self.reader_kind not in ("human", "machine"):
            raise InvalidMetadataError(f"bad reader_kind {self.reader_kind!r}")
        if not 0.0 <= self.score <= 1.0:
            raise InvalidMetadataError(f"score {self.score} outside [0,1]")
        if self.reader_kind == "human" and self.score not in (0.0, 1.0):
            raise InvalidMetadataError(f"human score {self.score} is not binary")
        if self.severity_index < 0:
            raise InvalidMetadataError(f"negative severity index {self.severity_index}")


@dataclass
class PredictionSet:
    records: list[PredictionRecord]
    cases: list[BreastCase]
    n_severities: int

    def __post_init__(self):
        case_ids = {c.case_id for c in self.cases}
        if len(case_ids) != len(self.cases):
            raise ReferentialError("duplicate case_id in case list")
        seen = set()
        for rec in self.records:
            if rec.case_id not in case_ids:
                raise ReferentialError(f"record references unknown case {rec.case_id!r}")
            if rec.severity_index >= self.n_severities:
                raise ReferentialError(
                    f"severity index {rec.severity_index} >= ladder size {self.n_severities}"
                )
            key = (rec.reader_id, rec.case_id, rec.severity_index)
            if key in seen:
                raise ReferentialError(f"duplicate (reader, case, severity) triple {key}")
            seen.add(key)

    @property
    def readers(self) -> list[str]:
        return sorted({r.reader_id for r in self.records})

    def case_by_id(self, case_id: str) -> BreastCase:
        for c in self.cases:
            if c.case_id == case_id:
                return c
        raise KeyError(case_id)

    def matrix_view(self, reader_id: str) -> dict[tuple[int, str], float]:
        """Sparse severity x case view of one reader's scores; missing cells absent."""
        return {
            (r.severity_index, r.case_id): r.score
            for r in self.records
            if r.reader_id == reader_id
        }


@dataclass(frozen=True)
class RoiBox:
    x: int
    y: int
    w: int
    h: int


@dataclass
class RoiAnnotation:
    reader_id: str
    image_id: str
    boxes: list[RoiBox]

    def __post_init__(self):
        if len(self.boxes) > ROI_MAX_BOXES:
            raise InvalidMetadataError(
                f"{len(self.boxes)} boxes on {self.image_id}; limit is {ROI_MAX_BOXES}"
            )
        for b in self.boxes:
            if not box_edge_ok(b.w) or not box_edge_ok(b.h):
                raise InvalidMetadataError(
                    f"box {b.w}x{b.h} outside +-{ROI_EDGE_TOLERANCE:.0%} of the "
                    f"{ROI_TEMPLATE_EDGE_PX}px template"
                )


def box_edge_ok(edge: float) -> bool:
    lo = ROI_TEMPLATE_EDGE_PX * (1 - ROI_EDGE_TOLERANCE)
    hi = ROI_TEMPLATE_EDGE_PX * (1 + ROI_EDGE_TOLERANCE)
    return lo <= edge <= hi


@dataclass
class ValidationReport:
    read_count_violations: list[tuple[str, str, int]]  # (reader, exam, count != 1)
    severity_mismatches: list[tuple[str, str, int, int]]  # (reader, exam, seen, assigned)

    @property
    def ok(self) -> bool:
        return not self.read_count_violations and not self.severity_mismatches


def validate_design(assignment: dict[tuple[str, str], int], preds: PredictionSet) -> ValidationReport:
    """Check one-read-per-(reader, exam) and severity agreement against a design.

    `assignment` maps (reader_id, exam_id) to the assigned severity index.
    All findings are reported, never raised.
    """
    exam_of = {c.case_id: c.exam_id for c in preds.cases}
    counts: dict[tuple[str, str], set[int]] = {}
    for rec in preds.records:
        key = (rec.reader_id, exam_of[rec.case_id])
        counts.setdefault(key, set()).add(rec.severity_index)

    read_violations = []
    mismatches = []
    for (reader, exam), assigned in assignment.items():
        severities = counts.get((reader, exam), set())
        if len(severities) != 1:
            read_violations.append((reader, exam, len(severities)))
        for s in severities:
            if s != assigned:
                mismatches.append((reader, exam, s, assigned))
    for (reader, exam), severities in counts.items():
        if (reader, exam) not in assignment:
            read_violations.append((reader, exam, len(severities)))
    return ValidationReport(read_violations, mismatches)


# ---------------------------------------------------------------------------
# JSON-lines I/O


def atomic_write_text(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_jsonl(path: str) -> list[dict]:
    out = []
    with open(path) as f:
        for i, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise ParseError(f"{path}:{i}: malformed JSON ({e.msg})") from e
    return out


def load_cases(path: str) -> list[BreastCase]:
    cases = []
    for obj in _read_jsonl(path):
        try:
            cases.append(
                BreastCase(
                    case_id=obj["case_id"],
                    exam_id=obj["exam_id"],
                    side=obj["side"],
                    label=obj["label"],
                    lesion_tags=frozenset(obj.get("lesion_tags", [])),
                )
            )
        except KeyError as e:
            raise ParseError(f"{path}: case record missing field {e}") from e
    return cases


def save_cases(cases: Sequence[BreastCase], path: str) -> None:
    lines = [
        json.dumps(
            {
                "case_id": c.case_id,
                "exam_id": c.exam_id,
                "side": c.side,
                "label": c.label,
                "lesion_tags": sorted(c.lesion_tags),
            },
            sort_keys=True,
        )
        for c in cases
    ]
    atomic_write_text(path, "".join(l + "\n" for l in lines))


def load_predictions(path: str, cases: Sequence[BreastCase], n_severities: int) -> PredictionSet:
    records = []
    for obj in _read_jsonl(path):
        try:
            records.append(
                PredictionRecord(
                    reader_id=obj["reader_id"],
                    reader_kind=obj["reader_kind"],
                    case_id=obj["case_id"],
                    severity_index=int(obj["severity_index"]),
                    score=float(obj["score"]),
                )
            )
        except KeyError as e:
            raise ParseError(f"{path}: prediction record missing field {e}") from e
    return PredictionSet(records=records, cases=list(cases), n_severities=n_severities)


def save_predictions(preds: PredictionSet, path: str) -> None:
    lines = [
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
        for r in preds.records
    ]
    atomic_write_text(path, "".join(l + "\n" for l in lines))


def load_rois(path: str) -> list[RoiAnnotation]:
    out = []
    for obj in _read_jsonl(path):
        boxes = [RoiBox(int(b["x"]), int(b["y"]), int(b["w"]), int(b["h"])) for b in obj["boxes"]]
        out.append(RoiAnnotation(reader_id=obj["reader_id"], image_id=obj["image_id"], boxes=boxes))
    return out


def save_rois(rois: Sequence[RoiAnnotation], path: str) -> None:
    lines = [
        json.dumps(
            {
                "reader_id": a.reader_id,
                "image_id": a.image_id,
                "boxes": [{"x": b.x, "y": b.y, "w": b.w, "h": b.h} for b in a.boxes],
            },
            sort_keys=True,
        )
        for a in rois
    ]
    atomic_write_text(path, "".join(l + "\n" for l in lines))


@dataclass(frozen=True)
class ImageMeta:
    image_id: str
    exam_id: str
    view: str
    height_px: int
    width_px: int
    mm_per_pixel: float

    def __post_init__(self):
        if self.mm_per_pixel <= 0:
            raise InvalidMetadataError(f"mm_per_pixel must be > 0 on {self.image_id}")


def load_image_metas(path: str) -> list[ImageMeta]:
    return [
        ImageMeta(
            image_id=o["image_id"],
            exam_id=o["exam_id"],
            view=o["view"],
            height_px=int(o["height_px"]),
            width_px=int(o["width_px"]),
            mm_per_pixel=float(o["mm_per_pixel"]),
        )
        for o in _read_jsonl(path)
    ]


def save_image_metas(metas: Sequence[ImageMeta], path: str) -> None:
    lines = [
        json.dumps(
            {
                "image_id": m.image_id,
                "exam_id": m.exam_id,
                "view": m.view,
                "height_px": m.height_px,
                "width_px": m.width_px,
                "mm_per_pixel": m.mm_per_pixel,
            },
            sort_keys=True,
        )
        for m in metas
    ]
    atomic_write_text(path, "".join(l + "\n" for l in lines))
