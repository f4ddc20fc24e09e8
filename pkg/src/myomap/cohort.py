"""Cohort data model: parametric maps, label masks, manifest IO, splitting.

A cohort is a set of subjects, each carrying T1/T2 parametric maps with one
or more co-registered segmentation masks (keyed by a free-form source name
such as "gt", "obs1", "obs2", "model"). Cohorts are serialized as a JSON
manifest referencing per-map and per-mask JSON files.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ToolkitError


class Modality(Enum):
    T1_NATIVE = "t1_native"
    T1_POST = "t1_post"
    T2 = "t2"


class SliceLocation(Enum):
    BASAL = "basal"
    MID = "mid"
    APICAL = "apical"
    UNKNOWN = "unknown"


class Diagnosis(Enum):
    NORMAL = "normal"
    MYOCARDITIS = "myocarditis"
    SARCOIDOSIS = "sarcoidosis"
    SYSTEMIC = "systemic"


class Split(Enum):
    TRAIN = "train"
    VALIDATION = "validation"
    TEST = "test"


# labels used in masks
BACKGROUND = 0
BLOOD_POOL = 1
MYOCARDIUM = 2


@dataclass(eq=False)
class PixelGrid:
    """2-D raster of relaxation times (ms) or normalized intensities."""

    values: np.ndarray  # shape (rows, cols), float64
    spacing_mm: tuple[float, float]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] < 1 or self.values.shape[1] < 1:
            raise ToolkitError("SCHEMA_ERROR", "grid must be 2-D with rows, cols >= 1")
        self.spacing_mm = (float(self.spacing_mm[0]), float(self.spacing_mm[1]))
        if self.spacing_mm[0] <= 0 or self.spacing_mm[1] <= 0:
            raise ToolkitError("BAD_SPACING", f"spacing must be positive, got {self.spacing_mm}")
        if not np.all(np.isfinite(self.values)):
            raise ToolkitError("SCHEMA_ERROR", "grid contains non-finite values")
        if np.any(self.values < 0):
            raise ToolkitError("SCHEMA_ERROR", "relaxation values must be >= 0")

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def extent_mm(self) -> tuple[float, float]:
        return (self.rows * self.spacing_mm[0], self.cols * self.spacing_mm[1])


@dataclass(eq=False)
class LabelMask:
    """3-class segmentation raster: 0 background, 1 LV blood pool, 2 myocardium."""

    source: str
    labels: np.ndarray  # shape (rows, cols), int64
    spacing_mm: tuple[float, float]

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 2 or self.labels.shape[0] < 1 or self.labels.shape[1] < 1:
            raise ToolkitError("SCHEMA_ERROR", "mask must be 2-D with rows, cols >= 1")
        self.spacing_mm = (float(self.spacing_mm[0]), float(self.spacing_mm[1]))
        if self.spacing_mm[0] <= 0 or self.spacing_mm[1] <= 0:
            raise ToolkitError("BAD_SPACING", f"spacing must be positive, got {self.spacing_mm}")
        bad = np.setdiff1d(np.unique(self.labels), [BACKGROUND, BLOOD_POOL, MYOCARDIUM])
        if bad.size:
            raise ToolkitError("LABEL_ERROR", f"labels outside {{0,1,2}}: {bad.tolist()}")

    @property
    def rows(self) -> int:
        return self.labels.shape[0]

    @property
    def cols(self) -> int:
        return self.labels.shape[1]


@dataclass(eq=False)
class ParametricMap:
    map_id: str
    subject_id: str
    modality: Modality
    slice_location: SliceLocation
    grid: PixelGrid

    def __post_init__(self):
        if not self.map_id or not self.subject_id:
            raise ToolkitError("SCHEMA_ERROR", "map_id and subject_id must be non-empty")


@dataclass(eq=False)
class MapRecord:
    """A parametric map paired with its masks, keyed by source name."""

    map: ParametricMap
    masks: dict[str, LabelMask] = field(default_factory=dict)

    def __post_init__(self):
        for source, mask in self.masks.items():
            _check_coregistered(self.map, mask)
            if mask.source != source:
                raise ToolkitError("SCHEMA_ERROR",
                                   f"mask source {mask.source!r} stored under key {source!r}")


@dataclass(eq=False)
class Subject:
    subject_id: str
    diagnosis: Diagnosis
    maps: list[MapRecord] = field(default_factory=list)

    @property
    def diseased(self) -> bool:
        """Derived, never user-supplied: any diagnosis other than normal."""
        return self.diagnosis is not Diagnosis.NORMAL


@dataclass(eq=False)
class Cohort:
    subjects: list[Subject]
    split: dict[str, Split] | None = None

    def __post_init__(self):
        ids = [s.subject_id for s in self.subjects]
        if len(set(ids)) != len(ids):
            raise ToolkitError("SCHEMA_ERROR", "duplicate subject_id in cohort")
        if self.split is not None:
            if set(self.split) != set(ids):
                raise ToolkitError("SCHEMA_ERROR",
                                   "split must assign every subject exactly once")

    def subject(self, subject_id: str) -> Subject:
        for s in self.subjects:
            if s.subject_id == subject_id:
                return s
        raise KeyError(subject_id)

    def subjects_in(self, subset) -> list[Subject]:
        """Subjects whose split lands in `subset` (see `resolve_subset`)."""
        wanted = resolve_subset(subset)
        if wanted is None:
            return list(self.subjects)
        if self.split is None:
            raise ToolkitError("SCHEMA_ERROR", "cohort has no split assignment")
        return [s for s in self.subjects if self.split[s.subject_id] in wanted]


def resolve_subset(subset) -> set[Split] | None:
    """Normalize a subset selector; None / "all" selects everything.

    Accepts a Split, an iterable of Split, or strings "train", "validation",
    "test", "train+validation", "all".
    """
    if subset is None:
        return None
    if isinstance(subset, Split):
        return {subset}
    if isinstance(subset, str):
        if subset == "all":
            return None
        parts = subset.split("+")
        try:
            return {Split(p) for p in parts}
        except ValueError:
            raise ToolkitError("SCHEMA_ERROR", f"unknown subset selector {subset!r}")
    return set(subset)


def _check_coregistered(pmap: ParametricMap, mask: LabelMask) -> None:
    g = pmap.grid
    if (mask.rows, mask.cols) != (g.rows, g.cols):
        raise ToolkitError(
            "SHAPE_MISMATCH",
            f"mask {mask.source!r} is {mask.rows}x{mask.cols}, "
            f"map {pmap.map_id!r} is {g.rows}x{g.cols}")
    if not (math.isclose(mask.spacing_mm[0], g.spacing_mm[0])
            and math.isclose(mask.spacing_mm[1], g.spacing_mm[1])):
        raise ToolkitError("SHAPE_MISMATCH",
                           f"mask {mask.source!r} spacing {mask.spacing_mm} != map spacing {g.spacing_mm}")


# ---------------------------------------------------------------------------
# manifest IO


def _load_json(path: Path):
    if not path.exists():
        raise ToolkitError("MISSING_FILE", str(path))
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ToolkitError("SCHEMA_ERROR", f"{path}: {exc}")


def _load_grid_payload(path: Path, key: str) -> tuple[np.ndarray, tuple[float, float]]:
    doc = _load_json(path)
    try:
        rows, cols = int(doc["rows"]), int(doc["cols"])
        spacing = (float(doc["spacing_mm"][0]), float(doc["spacing_mm"][1]))
        flat = doc[key]
    except (KeyError, TypeError, IndexError, ValueError) as exc:
        raise ToolkitError("SCHEMA_ERROR", f"{path}: {exc!r}")
    if len(flat) != rows * cols:
        raise ToolkitError("SCHEMA_ERROR",
                           f"{path}: {len(flat)} values for {rows}x{cols} grid")
    return np.asarray(flat).reshape(rows, cols), spacing


def load_map_file(path: Path) -> tuple[np.ndarray, tuple[float, float]]:
    return _load_grid_payload(Path(path), "values")


def load_mask_file(path: Path, source: str) -> LabelMask:
    labels, spacing = _load_grid_payload(Path(path), "labels")
    labels = np.asarray(labels)
    if not np.all(labels == np.round(labels)):
        raise ToolkitError("LABEL_ERROR", f"{path}: non-integer labels")
    return LabelMask(source=source, labels=labels.astype(np.int64), spacing_mm=spacing)


def load_cohort(manifest_path) -> Cohort:
    """Load a cohort manifest and all referenced map/mask files."""
    manifest_path = Path(manifest_path)
    doc = _load_json(manifest_path)
    base = manifest_path.parent
    if not isinstance(doc, dict) or "subjects" not in doc:
        raise ToolkitError("SCHEMA_ERROR", f"{manifest_path}: missing 'subjects'")

    subjects = []
    for subj_doc in doc["subjects"]:
        try:
            subject_id = subj_doc["subject_id"]
            diagnosis = Diagnosis(subj_doc["diagnosis"])
            map_docs = subj_doc["maps"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ToolkitError("SCHEMA_ERROR", f"{manifest_path}: subject entry: {exc!r}")
        records = []
        for map_doc in map_docs:
            try:
                map_id = map_doc["map_id"]
                modality = Modality(map_doc["modality"])
                slice_location = SliceLocation(map_doc.get("slice_location", "unknown"))
                map_file = map_doc["map_file"]
                mask_files = map_doc.get("masks", {})
            except (KeyError, TypeError, ValueError) as exc:
                raise ToolkitError("SCHEMA_ERROR", f"{manifest_path}: map entry: {exc!r}")
            values, spacing = load_map_file(base / map_file)
            pmap = ParametricMap(map_id=map_id, subject_id=subject_id,
                                 modality=modality, slice_location=slice_location,
                                 grid=PixelGrid(values=values, spacing_mm=spacing))
            masks = {src: load_mask_file(base / rel, src) for src, rel in mask_files.items()}
            records.append(MapRecord(map=pmap, masks=masks))
        subjects.append(Subject(subject_id=subject_id, diagnosis=diagnosis, maps=records))

    split = None
    if "split" in doc and doc["split"] is not None:
        try:
            split = {sid: Split(name) for sid, name in doc["split"].items()}
        except ValueError as exc:
            raise ToolkitError("SCHEMA_ERROR", f"{manifest_path}: split: {exc!r}")
    return Cohort(subjects=subjects, split=split)


def save_cohort(cohort: Cohort, out_dir) -> Path:
    """Write manifest + per-map/per-mask files under `out_dir`; returns manifest path."""
    out_dir = Path(out_dir)
    try:
        (out_dir / "data").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ToolkitError("IO_ERROR", f"{out_dir}: {exc}")

    manifest: dict = {"subjects": []}
    for subject in cohort.subjects:
        subj_doc = {"subject_id": subject.subject_id,
                    "diagnosis": subject.diagnosis.value, "maps": []}
        for record in subject.maps:
            pmap = record.map
            map_rel = f"data/{pmap.map_id}.json"
            _write_grid_file(out_dir / map_rel, pmap.grid.values,
                             pmap.grid.spacing_mm, "values")
            mask_rels = {}
            for src, mask in sorted(record.masks.items()):
                mask_rel = f"data/{pmap.map_id}.{src}.json"
                _write_grid_file(out_dir / mask_rel, mask.labels, mask.spacing_mm, "labels")
                mask_rels[src] = mask_rel
            subj_doc["maps"].append({
                "map_id": pmap.map_id,
                "modality": pmap.modality.value,
                "slice_location": pmap.slice_location.value,
                "map_file": map_rel,
                "masks": mask_rels,
            })
        manifest["subjects"].append(subj_doc)
    if cohort.split is not None:
        manifest["split"] = {sid: sp.value for sid, sp in sorted(cohort.split.items())}

    manifest_path = out_dir / "manifest.json"
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return manifest_path


def _write_grid_file(path: Path, array: np.ndarray, spacing, key: str) -> None:
    rows, cols = array.shape
    flat = array.reshape(-1)
    if key == "labels":
        flat = [int(v) for v in flat]
    else:
        flat = [float(v) for v in flat]
    doc = {"rows": rows, "cols": cols, "spacing_mm": [spacing[0], spacing[1]], key: flat}
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class ValidationIssue:
    subject_id: str
    map_id: str | None
    rule: str
    detail: str = ""


def validate_cohort(cohort: Cohort) -> list[ValidationIssue]:
    """Check cohort-level rules; returns [] iff the cohort is clean.

    Type-level invariants (shape, labels, spacing) are enforced at
    construction; this adds cross-object rules: unique map ids, co-registered
    masks, and at least one native T1 or T2 map per subject.
    """
    issues = []
    seen_map_ids: dict[str, str] = {}
    for subject in cohort.subjects:
        has_native = False
        for record in subject.maps:
            pmap = record.map
            if pmap.subject_id != subject.subject_id:
                issues.append(ValidationIssue(subject.subject_id, pmap.map_id,
                                              "map subject_id mismatch"))
            if pmap.map_id in seen_map_ids:
                issues.append(ValidationIssue(subject.subject_id, pmap.map_id,
                                              "duplicate map_id",
                                              f"also in {seen_map_ids[pmap.map_id]}"))
            else:
                seen_map_ids[pmap.map_id] = subject.subject_id
            if pmap.modality in (Modality.T1_NATIVE, Modality.T2):
                has_native = True
            for mask in record.masks.values():
                try:
                    _check_coregistered(pmap, mask)
                except ToolkitError as exc:
                    issues.append(ValidationIssue(subject.subject_id, pmap.map_id,
                                                  "mask not co-registered", exc.message))
        if not has_native:
            issues.append(ValidationIssue(subject.subject_id, None, "no native modality",
                                          "subject has no native T1 or T2 map"))
    return issues


# ---------------------------------------------------------------------------
# train / validation / test splitting


def _largest_remainder(quotas: list[float], total: int) -> list[int]:
    """Round nonnegative quotas summing to `total` to integers."""
    floors = [int(math.floor(q)) for q in quotas]
    leftover = total - sum(floors)
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - floors[i]), i))
    for i in order[:leftover]:
        floors[i] += 1
    return floors


def split_cohort(cohort: Cohort, fractions: tuple[float, float, float],
                 seed: int, stratify: bool) -> Cohort:
    """Assign every subject to train / validation / test.

    Deterministic given `seed`. Overall subset sizes are fractions * N
    rounded by largest remainder. With `stratify`, per-class seat counts are
    allocated by largest remainder over class x subset quota cells, subject
    to both the class totals and the overall subset sizes (controlled
    rounding), so each class count deviates from fraction * class size by
    less than one subject.
    """
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise ToolkitError("BAD_FRACTIONS", f"fractions must be positive: {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ToolkitError("BAD_FRACTIONS", f"fractions must sum to 1: {fractions}")

    subjects = sorted(cohort.subjects, key=lambda s: s.subject_id)
    n = len(subjects)
    subset_sizes = _largest_remainder([f * n for f in fractions], n)

    if stratify:
        classes = [d for d in Diagnosis]
        by_class = {d: [s for s in subjects if s.diagnosis is d] for d in classes}
        if any(not members for members in by_class.values()):
            empty = [d.value for d in classes if not by_class[d]]
            raise ToolkitError("EMPTY_CLASS", f"stratify with empty class(es): {empty}")
        cell_counts = _controlled_rounding(
            [[fractions[j] * len(by_class[d]) for j in range(3)] for d in classes],
            row_totals=[len(by_class[d]) for d in classes],
            col_totals=subset_sizes)
        assignment: dict[str, Split] = {}
        rng = np.random.default_rng(seed)
        for ci, diagnosis in enumerate(classes):
            members = by_class[diagnosis]
            perm = rng.permutation(len(members))
            shuffled = [members[i] for i in perm]
            start = 0
            for j, split_value in enumerate(Split):
                for s in shuffled[start:start + cell_counts[ci][j]]:
                    assignment[s.subject_id] = split_value
                start += cell_counts[ci][j]
    else:
        rng = np.random.default_rng(seed)
        perm = rng.permutation(n)
        shuffled = [subjects[i] for i in perm]
        assignment = {}
        start = 0
        for j, split_value in enumerate(Split):
            for s in shuffled[start:start + subset_sizes[j]]:
                assignment[s.subject_id] = split_value
            start += subset_sizes[j]

    return Cohort(subjects=cohort.subjects, split=assignment)


def _controlled_rounding(quotas: list[list[float]], row_totals: list[int],
                         col_totals: list[int]) -> list[list[int]]:
    """Largest-remainder seat allocation constrained to row and column totals.

    Floors every cell, then hands out the remaining seats in order of
    decreasing fractional remainder, skipping cells whose row or column is
    already full. Ties break on (row index, column index).
    """
    n_rows, n_cols = len(quotas), len(col_totals)
    counts = [[int(math.floor(quotas[i][j])) for j in range(n_cols)] for i in range(n_rows)]
    row_left = [row_totals[i] - sum(counts[i]) for i in range(n_rows)]
    col_left = [col_totals[j] - sum(counts[i][j] for i in range(n_rows)) for j in range(n_cols)]
    cells = sorted(
        ((i, j) for i in range(n_rows) for j in range(n_cols)),
        key=lambda ij: (-(quotas[ij[0]][ij[1]] - math.floor(quotas[ij[0]][ij[1]])),
                        ij[0], ij[1]))
    for i, j in cells:
        if row_left[i] > 0 and col_left[j] > 0:
            counts[i][j] += 1
            row_left[i] -= 1
            col_left[j] -= 1
    if any(row_left) or any(col_left):
        # greedy pass can stall on unlucky capacity patterns; finish by
        # pairing leftover rows with leftover columns
        for i in range(n_rows):
            while row_left[i] > 0:
                j = max(range(n_cols), key=lambda j: col_left[j])
                counts[i][j] += 1
                row_left[i] -= 1
                col_left[j] -= 1
    return counts
