"""Image preprocessing chain: resample, percentile-normalize, crop, augment.

Resampling uses pixel-center alignment with border clamping: output pixel i
(center at (i + 0.5) * target spacing, in mm from the grid edge) samples the
source at continuous index (i + 0.5) * target / source - 0.5, clamped to
[0, n - 1]. This convention makes the hand-derived interpolation cases exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .cohort import LabelMask, PixelGrid
from .errors import ToolkitError
from .features import percentile


class Interp(Enum):
    BILINEAR = "bilinear"
    NEAREST = "nearest"


@dataclass(frozen=True)
class PreprocessConfig:
    target_spacing_mm: float = 1.0
    crop_size_mm: float = 288.0
    norm_percentiles: tuple[float, float] = (1.0, 99.0)

    def __post_init__(self):
        if self.target_spacing_mm <= 0:
            raise ToolkitError("BAD_SPACING", "target spacing must be positive")
        if self.crop_size_mm <= 0:
            raise ToolkitError("BAD_SIZE", "crop size must be positive")
        lo, hi = self.norm_percentiles
        if not (0 <= lo < hi <= 100):
            raise ToolkitError("SCHEMA_ERROR", f"bad percentile pair {self.norm_percentiles}")


@dataclass(frozen=True)
class AugmentConfig:
    """Ranges for seeded augmentations. Magnitudes are toolkit defaults, not
    taken from any acquisition protocol."""

    rotation_deg_range: tuple[float, float] = (-15.0, 15.0)
    translation_mm_range: tuple[float, float] = (-10.0, 10.0)
    flip_horizontal: float = 0.5
    flip_vertical: float = 0.5
    contrast_stretch_range: tuple[float, float] = (0.8, 1.2)
    gaussian_noise_sd: float = 0.02

    def __post_init__(self):
        for name in ("rotation_deg_range", "translation_mm_range", "contrast_stretch_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ToolkitError("SCHEMA_ERROR", f"{name} not ordered: ({lo}, {hi})")
        for name in ("flip_horizontal", "flip_vertical"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ToolkitError("SCHEMA_ERROR", f"{name} probability {p} outside [0, 1]")
        if self.gaussian_noise_sd < 0:
            raise ToolkitError("SCHEMA_ERROR", "noise sd must be >= 0")


def _source_coords(n_out: int, n_src: int, target: float, source: float) -> np.ndarray:
    coords = ((np.arange(n_out) + 0.5) * target / source) - 0.5
    return np.clip(coords, 0.0, n_src - 1.0)


def _sample_bilinear(values: np.ndarray, rr: np.ndarray, cc: np.ndarray) -> np.ndarray:
    """Sample `values` at fractional (row, col) index grids rr x cc."""
    r0 = np.floor(rr).astype(np.int64)
    c0 = np.floor(cc).astype(np.int64)
    r0 = np.clip(r0, 0, values.shape[0] - 1)
    c0 = np.clip(c0, 0, values.shape[1] - 1)
    r1 = np.minimum(r0 + 1, values.shape[0] - 1)
    c1 = np.minimum(c0 + 1, values.shape[1] - 1)
    fr = rr - r0
    fc = cc - c0
    top = values[r0[:, None], c0[None, :]] * (1 - fc)[None, :] \
        + values[r0[:, None], c1[None, :]] * fc[None, :]
    bot = values[r1[:, None], c0[None, :]] * (1 - fc)[None, :] \
        + values[r1[:, None], c1[None, :]] * fc[None, :]
    return top * (1 - fr)[:, None] + bot * fr[:, None]


def _sample_nearest(values: np.ndarray, rr: np.ndarray, cc: np.ndarray) -> np.ndarray:
    r = np.clip(np.rint(rr).astype(np.int64), 0, values.shape[0] - 1)
    c = np.clip(np.rint(cc).astype(np.int64), 0, values.shape[1] - 1)
    return values[r[:, None], c[None, :]]


def resample(grid: PixelGrid, target_spacing: float, kind: Interp = Interp.BILINEAR) -> PixelGrid:
    """Resample a map to isotropic `target_spacing`; BILINEAR for maps only."""
    if target_spacing <= 0:
        raise ToolkitError("BAD_SPACING", f"target spacing {target_spacing} <= 0")
    out_rows = max(1, int(round(grid.extent_mm[0] / target_spacing)))
    out_cols = max(1, int(round(grid.extent_mm[1] / target_spacing)))
    rr = _source_coords(out_rows, grid.rows, target_spacing, grid.spacing_mm[0])
    cc = _source_coords(out_cols, grid.cols, target_spacing, grid.spacing_mm[1])
    if kind is Interp.BILINEAR:
        out = _sample_bilinear(grid.values, rr, cc)
    else:
        out = _sample_nearest(grid.values, rr, cc)
    return PixelGrid(values=out, spacing_mm=(target_spacing, target_spacing))


def resample_mask(mask: LabelMask, target_spacing: float) -> LabelMask:
    """Nearest-neighbor resampling for label masks; never invents labels."""
    if target_spacing <= 0:
        raise ToolkitError("BAD_SPACING", f"target spacing {target_spacing} <= 0")
    extent = (mask.rows * mask.spacing_mm[0], mask.cols * mask.spacing_mm[1])
    out_rows = max(1, int(round(extent[0] / target_spacing)))
    out_cols = max(1, int(round(extent[1] / target_spacing)))
    rr = _source_coords(out_rows, mask.rows, target_spacing, mask.spacing_mm[0])
    cc = _source_coords(out_cols, mask.cols, target_spacing, mask.spacing_mm[1])
    out = _sample_nearest(mask.labels, rr, cc)
    return LabelMask(source=mask.source, labels=out, spacing_mm=(target_spacing, target_spacing))


def normalize_percentile(grid: PixelGrid, p_low: float = 1.0,
                         p_high: float = 99.0) -> tuple[PixelGrid, bool]:
    """Affine-map values so [p_low, p_high] percentiles span [0, 1], clamped.

    Returns (normalized grid, degenerate flag); a near-constant grid maps to
    all zeros with the flag set.
    """
    a = percentile(grid.values, p_low)
    b = percentile(grid.values, p_high)
    if b - a < 1e-9:
        out = np.zeros_like(grid.values)
        return PixelGrid(values=out, spacing_mm=grid.spacing_mm), True
    out = np.clip((grid.values - a) / (b - a), 0.0, 1.0)
    return PixelGrid(values=out, spacing_mm=grid.spacing_mm), False


def _crop_window(n_in: int, n_out: int):
    off = (n_in - n_out) // 2
    return off


def center_crop(grid: PixelGrid, crop_size_mm: float, pad_value: float = 0.0) -> PixelGrid:
    """Crop (or pad with `pad_value`) to a centered crop_size_mm window."""
    out = _center_crop_array(grid.values, grid.spacing_mm, crop_size_mm, float(pad_value))
    return PixelGrid(values=out, spacing_mm=grid.spacing_mm)


def center_crop_mask(mask: LabelMask, crop_size_mm: float) -> LabelMask:
    out = _center_crop_array(mask.labels, mask.spacing_mm, crop_size_mm, 0)
    return LabelMask(source=mask.source, labels=out, spacing_mm=mask.spacing_mm)


def _center_crop_array(values: np.ndarray, spacing, crop_size_mm: float, pad_value):
    if crop_size_mm <= 0:
        raise ToolkitError("BAD_SIZE", f"crop size {crop_size_mm} <= 0")
    if not math.isclose(spacing[0], spacing[1]):
        raise ToolkitError("BAD_SPACING", f"center_crop requires isotropic spacing, got {spacing}")
    n_out_r = int(round(crop_size_mm / spacing[0]))
    n_out_c = int(round(crop_size_mm / spacing[1]))
    out = np.full((n_out_r, n_out_c), pad_value, dtype=values.dtype)
    off_r = _crop_window(values.shape[0], n_out_r)
    off_c = _crop_window(values.shape[1], n_out_c)
    src_r0, src_r1 = max(0, off_r), min(values.shape[0], off_r + n_out_r)
    src_c0, src_c1 = max(0, off_c), min(values.shape[1], off_c + n_out_c)
    dst_r0, dst_c0 = src_r0 - off_r, src_c0 - off_c
    out[dst_r0:dst_r0 + (src_r1 - src_r0), dst_c0:dst_c0 + (src_c1 - src_c0)] = \
        values[src_r0:src_r1, src_c0:src_c1]
    return out


def augment(grid: PixelGrid, mask: LabelMask, cfg: AugmentConfig,
            seed: int, pad_value: float = 0.0) -> tuple[PixelGrid, LabelMask]:
    """One seeded augmentation draw applied jointly to a map and its mask.

    Draw order is fixed (rotation, translation-row, translation-col, flip-h,
    flip-v, contrast gain, noise field) so results do not depend on which
    augmentations are active elsewhere in a batch. The geometric transform is
    shared: bilinear for the map, nearest for the mask. Intensity changes
    (contrast stretch, Gaussian noise) touch the map only; the map is assumed
    normalized to [0, 1] and is re-clamped after each intensity step.
    """
    if (mask.rows, mask.cols) != (grid.rows, grid.cols):
        raise ToolkitError("SHAPE_MISMATCH", "augment requires co-registered map and mask")
    rng = np.random.default_rng(np.uint64(seed & ((1 << 64) - 1)))
    angle_deg = rng.uniform(*cfg.rotation_deg_range)
    t_row_mm = rng.uniform(*cfg.translation_mm_range)
    t_col_mm = rng.uniform(*cfg.translation_mm_range)
    do_flip_h = rng.uniform() < cfg.flip_horizontal
    do_flip_v = rng.uniform() < cfg.flip_vertical
    gain = rng.uniform(*cfg.contrast_stretch_range)
    noise = rng.standard_normal(size=grid.values.shape)

    rows, cols = grid.rows, grid.cols
    out_r = np.arange(rows, dtype=np.float64)
    out_c = np.arange(cols, dtype=np.float64)
    if do_flip_v:
        out_r = out_r[::-1].copy()
    if do_flip_h:
        out_c = out_c[::-1].copy()
    rr = np.broadcast_to(out_r[:, None], (rows, cols)).astype(np.float64)
    cc = np.broadcast_to(out_c[None, :], (rows, cols)).astype(np.float64)
    # undo translation, then rotation, about the grid center
    rr = rr - t_row_mm / grid.spacing_mm[0]
    cc = cc - t_col_mm / grid.spacing_mm[1]
    center_r, center_c = (rows - 1) / 2.0, (cols - 1) / 2.0
    theta = math.radians(angle_deg)
    dr, dc = rr - center_r, cc - center_c
    src_r = math.cos(theta) * dr + math.sin(theta) * dc + center_r
    src_c = -math.sin(theta) * dr + math.cos(theta) * dc + center_c

    inside = (src_r >= -0.5) & (src_r <= rows - 0.5) & (src_c >= -0.5) & (src_c <= cols - 0.5)
    src_r_cl = np.clip(src_r, 0, rows - 1)
    src_c_cl = np.clip(src_c, 0, cols - 1)

    out_values = _bilinear_at(grid.values, src_r_cl, src_c_cl)
    out_values = np.where(inside, out_values, pad_value)
    out_labels = _nearest_at(mask.labels, src_r_cl, src_c_cl)
    out_labels = np.where(inside, out_labels, 0)

    out_values = np.clip(gain * (out_values - 0.5) + 0.5, 0.0, 1.0)
    if cfg.gaussian_noise_sd > 0:
        out_values = np.clip(out_values + cfg.gaussian_noise_sd * noise, 0.0, 1.0)

    return (PixelGrid(values=out_values, spacing_mm=grid.spacing_mm),
            LabelMask(source=mask.source, labels=out_labels, spacing_mm=mask.spacing_mm))


def _bilinear_at(values: np.ndarray, rr: np.ndarray, cc: np.ndarray) -> np.ndarray:
    r0 = np.clip(np.floor(rr).astype(np.int64), 0, values.shape[0] - 1)
    c0 = np.clip(np.floor(cc).astype(np.int64), 0, values.shape[1] - 1)
    r1 = np.minimum(r0 + 1, values.shape[0] - 1)
    c1 = np.minimum(c0 + 1, values.shape[1] - 1)
    fr = rr - r0
    fc = cc - c0
    return (values[r0, c0] * (1 - fr) * (1 - fc) + values[r0, c1] * (1 - fr) * fc
            + values[r1, c0] * fr * (1 - fc) + values[r1, c1] * fr * fc)


def _nearest_at(values: np.ndarray, rr: np.ndarray, cc: np.ndarray) -> np.ndarray:
    r = np.clip(np.rint(rr).astype(np.int64), 0, values.shape[0] - 1)
    c = np.clip(np.rint(cc).astype(np.int64), 0, values.shape[1] - 1)
    return values[r, c]


def preprocess_map(grid: PixelGrid, cfg: PreprocessConfig) -> tuple[PixelGrid, bool]:
    """Resample -> percentile-normalize -> center-crop; returns (grid, degenerate)."""
    resampled = resample(grid, cfg.target_spacing_mm, Interp.BILINEAR)
    normalized, degenerate = normalize_percentile(resampled, *cfg.norm_percentiles)
    return center_crop(normalized, cfg.crop_size_mm, pad_value=0.0), degenerate


def preprocess_mask(mask: LabelMask, cfg: PreprocessConfig) -> LabelMask:
    resampled = resample_mask(mask, cfg.target_spacing_mm)
    return center_crop_mask(resampled, cfg.crop_size_mm)
