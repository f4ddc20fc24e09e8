"""Myocardial pixel statistics: per-slice A/LQ/M/UQ and per-patient vectors.

Features are computed on raw relaxation values (ms), never on normalized
intensities, because classification cutoffs are expressed in ms. Post
contrast T1 maps are excluded from disease-detection features.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cohort import (Cohort, LabelMask, MYOCARDIUM, Modality, ParametricMap, Split,
                     Subject, resolve_subset)
from .errors import ToolkitError

FEATURE_NAMES = ("t1_a", "t1_lq", "t1_m", "t1_uq", "t2_a", "t2_lq", "t2_m", "t2_uq")

_MODALITY_PREFIX = {Modality.T1_NATIVE: "t1", Modality.T2: "t2"}


def percentile(values, q: float) -> float:
    """Linear-interpolation percentile on the (n-1) basis.

    With sorted v[0..n-1] and h = (n-1) * q / 100, returns
    v[floor(h)] + (h - floor(h)) * (v[floor(h)+1] - v[floor(h)]).
    """
    v = np.sort(np.asarray(values, dtype=np.float64).reshape(-1))
    if v.size == 0:
        raise ToolkitError("EMPTY_INPUT", "percentile of empty sequence")
    if not 0.0 <= q <= 100.0:
        raise ToolkitError("SCHEMA_ERROR", f"percentile rank {q} outside [0, 100]")
    h = (v.size - 1) * q / 100.0
    lo = int(math.floor(h))
    if lo >= v.size - 1:
        return float(v[-1])
    return float(v[lo] + (h - lo) * (v[lo + 1] - v[lo]))


@dataclass(frozen=True)
class SliceFeatures:
    map_id: str
    modality: Modality
    a: float
    lq: float
    m: float
    uq: float
    n_pixels: int


def myocardial_pixels(pmap: ParametricMap, mask: LabelMask) -> np.ndarray:
    """Map values at myocardium pixels (label 2), row-major order."""
    g = pmap.grid
    if (mask.rows, mask.cols) != (g.rows, g.cols):
        raise ToolkitError("SHAPE_MISMATCH",
                           f"mask {mask.rows}x{mask.cols} vs map {g.rows}x{g.cols}")
    values = g.values.reshape(-1)[(mask.labels == MYOCARDIUM).reshape(-1)]
    if values.size == 0:
        raise ToolkitError("EMPTY_MYOCARDIUM", f"map {pmap.map_id!r}: no myocardium pixels")
    return values


def slice_features(values, map_id: str = "", modality: Modality = Modality.T1_NATIVE) -> SliceFeatures:
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise ToolkitError("EMPTY_INPUT", "slice_features of empty sequence")
    return SliceFeatures(map_id=map_id, modality=modality,
                         a=float(np.mean(v)),
                         lq=percentile(v, 25), m=percentile(v, 50), uq=percentile(v, 75),
                         n_pixels=int(v.size))


@dataclass
class FeatureVector:
    """Per-patient features; a modality block is all-present or all-absent."""

    subject_id: str
    diseased: bool
    t1_a: float | None = None
    t1_lq: float | None = None
    t1_m: float | None = None
    t1_uq: float | None = None
    t2_a: float | None = None
    t2_lq: float | None = None
    t2_m: float | None = None
    t2_uq: float | None = None

    def get(self, name: str) -> float | None:
        if name not in FEATURE_NAMES:
            raise ToolkitError("MISSING_FEATURE", f"unknown feature {name!r}")
        return getattr(self, name)


def patient_features(subject: Subject, mask_source: str) -> FeatureVector:
    """Average slice features over each native modality's maps.

    Each of A/LQ/M/UQ is the unweighted mean of the per-slice value over all
    of the subject's maps of that modality carrying `mask_source`. Post
    contrast T1 maps never contribute.
    """
    per_modality: dict[Modality, list[SliceFeatures]] = {Modality.T1_NATIVE: [], Modality.T2: []}
    for record in subject.maps:
        modality = record.map.modality
        if modality not in per_modality or mask_source not in record.masks:
            continue
        values = myocardial_pixels(record.map, record.masks[mask_source])
        per_modality[modality].append(slice_features(values, record.map.map_id, modality))
    if not any(per_modality.values()):
        raise ToolkitError("NO_USABLE_MAPS",
                           f"subject {subject.subject_id!r}: no native T1 or T2 map "
                           f"with mask source {mask_source!r}")
    vector = FeatureVector(subject_id=subject.subject_id, diseased=subject.diseased)
    for modality, slices in per_modality.items():
        if not slices:
            continue
        prefix = _MODALITY_PREFIX[modality]
        for stat in ("a", "lq", "m", "uq"):
            mean = float(np.mean([getattr(s, stat) for s in slices]))
            setattr(vector, f"{prefix}_{stat}", mean)
    return vector


@dataclass
class FeatureTable:
    """Per-patient feature vectors plus the cohort split assignment."""

    vectors: list[FeatureVector]
    split: dict[str, Split] | None = None

    def rows_in(self, subset) -> list[FeatureVector]:
        wanted = resolve_subset(subset)
        if wanted is None:
            return list(self.vectors)
        if self.split is None:
            raise ToolkitError("SCHEMA_ERROR", "feature table has no split assignment")
        return [v for v in self.vectors if self.split[v.subject_id] in wanted]

    def column(self, feature: str, subset=None) -> tuple[list[str], np.ndarray, np.ndarray]:
        """(subject_ids, values, diseased) for rows where `feature` is present."""
        ids, values, labels = [], [], []
        for v in self.rows_in(subset):
            x = v.get(feature)
            if x is not None:
                ids.append(v.subject_id)
                values.append(x)
                labels.append(v.diseased)
        return ids, np.asarray(values, dtype=np.float64), np.asarray(labels, dtype=bool)

    def matrix(self, feature_names, subset=None) -> tuple[list[str], np.ndarray, np.ndarray]:
        """(subject_ids, X, y) for rows where every named feature is present.

        Rows are ordered by subject_id so downstream training is independent
        of cohort file order.
        """
        ids, rows, labels = [], [], []
        for v in sorted(self.rows_in(subset), key=lambda v: v.subject_id):
            values = [v.get(name) for name in feature_names]
            if any(x is None for x in values):
                continue
            ids.append(v.subject_id)
            rows.append(values)
            labels.append(v.diseased)
        X = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(list(feature_names)))
        return ids, X, np.asarray(labels, dtype=bool)


def extract_features(cohort: Cohort, mask_source: str) -> FeatureTable:
    vectors = [patient_features(s, mask_source)
               for s in sorted(cohort.subjects, key=lambda s: s.subject_id)]
    return FeatureTable(vectors=vectors, split=dict(cohort.split) if cohort.split else None)


def save_features_csv(table: FeatureTable, path) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "split", "diseased", *FEATURE_NAMES])
        for v in table.vectors:
            split = ""
            if table.split is not None:
                split = table.split[v.subject_id].value
            row = [v.subject_id, split, int(v.diseased)]
            row += ["" if v.get(name) is None else repr(v.get(name)) for name in FEATURE_NAMES]
            writer.writerow(row)


def load_features_csv(path) -> FeatureTable:
    path = Path(path)
    if not path.exists():
        raise ToolkitError("MISSING_FILE", str(path))
    vectors, split = [], {}
    has_split = False
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        expected = {"subject_id", "split", "diseased", *FEATURE_NAMES}
        if reader.fieldnames is None or not expected.issubset(reader.fieldnames):
            raise ToolkitError("SCHEMA_ERROR", f"{path}: bad features CSV header")
        for row in reader:
            v = FeatureVector(subject_id=row["subject_id"],
                              diseased=bool(int(row["diseased"])))
            for name in FEATURE_NAMES:
                if row[name] != "":
                    setattr(v, name, float(row[name]))
            vectors.append(v)
            if row["split"]:
                has_split = True
                split[row["subject_id"]] = Split(row["split"])
    return FeatureTable(vectors=vectors, split=split if has_split else None)
