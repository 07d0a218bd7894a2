"""Dice, HD95, the composite segmentation loss and a synthetic blob task."""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import GenerationError, InputError, ShapeError, UndefinedMetricError
from .tensor import Rng


def _check_pair(y: np.ndarray, p: np.ndarray) -> None:
    if y.shape != p.shape:
        raise ShapeError(f"label volumes differ in extent: {y.shape} vs {p.shape}")


def dsc(y, p, class_id: int = 1) -> float:
    """2|Y & P| / (|Y| + |P|) for one class. Two empty masks score 1.0."""
    y, p = np.asarray(y), np.asarray(p)
    _check_pair(y, p)
    ym, pm = y == class_id, p == class_id
    total = int(ym.sum()) + int(pm.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(ym, pm).sum()) / total


def boundary(mask: np.ndarray) -> np.ndarray:
    """Mask voxels with a face-adjacent non-mask neighbour; the grid edge counts as outside."""
    mask = np.asarray(mask, dtype=bool)
    padded = np.pad(mask, 1, constant_values=False)
    interior = mask.copy()
    core = tuple(slice(1, -1) for _ in range(mask.ndim))
    for axis in range(mask.ndim):
        for shift in (-1, 1):
            interior &= np.roll(padded, shift, axis=axis)[core]
    return mask & ~interior


def directed_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from each boundary voxel of ``a`` to the nearest boundary voxel of ``b``."""
    pa = np.argwhere(boundary(a)).astype(np.float64)
    pb = np.argwhere(boundary(b)).astype(np.float64)
    d, _ = cKDTree(pb).query(pa, k=1)
    return np.asarray(d, dtype=np.float64)


def nearest_rank(values: np.ndarray, q: float = 95.0) -> float:
    """The ceil(q/100 * n)-th smallest value (1-based)."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        raise UndefinedMetricError("percentile of an empty set")
    rank = max(1, math.ceil(q / 100.0 * v.size))
    return float(v[rank - 1])


def hd95(y, p, class_id: int = 1) -> float:
    """max of the two directed 95th-percentile boundary distances, in voxel units."""
    y, p = np.asarray(y), np.asarray(p)
    _check_pair(y, p)
    ym, pm = y == class_id, p == class_id
    if not ym.any() or not pm.any():
        raise UndefinedMetricError(f"HD95 undefined: class {class_id} mask is empty")
    return max(nearest_rank(directed_distances(ym, pm)), nearest_rank(directed_distances(pm, ym)))


def metrics_report(y, p, num_classes: int, classes: Sequence[int] | None = None) -> list[dict]:
    """Per-class ``{class_id, dsc, hd95, flags}`` records; empty masks are flagged, not zeroed."""
    y, p = np.asarray(y), np.asarray(p)
    _check_pair(y, p)
    out = []
    for c in classes if classes is not None else range(1, num_classes):
        flags = []
        if not (y == c).any():
            flags.append("empty_mask_gt")
        if not (p == c).any():
            flags.append("empty_mask_pred")
        if not (y == c).any() and not (p == c).any():
            flags.append("both_empty_dsc_defined_as_1")
        try:
            h = hd95(y, p, c)
        except UndefinedMetricError:
            h = None
        out.append({"class_id": int(c), "dsc": dsc(y, p, c), "hd95": h, "flags": flags})
    return out


def seg_loss(y_onehot, probs, variant: str = "normalized") -> float:
    """Soft Dice + cross-entropy on probability volumes of shape ``[I, *spatial]``.

    ``normalized`` is ``1 - mean_i dice_i + CE / V`` with the squared-denominator
    soft Dice ``2 sum(YP) / sum(Y^2 + P^2)`` (1 for a class
    absent from both). ``printed`` keeps the
    unnormalised ``1 - sum_i dice_i - sum Y log P``.
    """
    Y = np.asarray(y_onehot, dtype=np.float64)
    P = np.asarray(probs, dtype=np.float64)
    if Y.shape != P.shape:
        raise ShapeError(f"target {Y.shape} and prediction {P.shape} differ")
    if np.any(P < 0) or not np.allclose(P.sum(axis=0), 1.0, rtol=0, atol=1e-9):
        raise InputError("probabilities must be non-negative and sum to 1 per voxel")
    I = Y.shape[0]
    V = Y.size // I
    axes = tuple(range(1, Y.ndim))
    num = 2.0 * (Y * P).sum(axis=axes)
    den = (Y * Y + P * P).sum(axis=axes)
    # a class absent from both target and prediction scores 1, as in dsc
    dice = np.divide(num, den, out=np.ones_like(num), where=den > 0)
    with np.errstate(divide="ignore"):
        logp = np.where(Y > 0, np.log(np.where(Y > 0, P, 1.0)), 0.0)
    ce = -(Y * logp).sum()
    if variant == "normalized":
        return float(1.0 - dice.mean() + ce / V)
    if variant == "printed":
        return float(1.0 - dice.sum() + ce)
    raise ValueError(f"unknown loss variant {variant!r}")


def ellipsoid_mask(extents, center, radii) -> np.ndarray:
    grids = np.meshgrid(*[np.arange(n) for n in extents], indexing="ij")
    r = sum(((g - c) / a) ** 2 for g, c, a in zip(grids, center, radii))
    return r <= 1.0


def make_blob_task(extents=(32, 32, 16), num_classes: int = 3, seed: int = 0,
                   blobs_per_class: tuple[int, int] = (1, 3), noise: float = 0.2,
                   radius_frac: tuple[float, float] = (0.18, 0.32)):
    """Random ellipsoids per foreground class on a background volume.

    Returns ``(volume, labels)`` where ``volume`` is ``[1, *extents]`` float
    intensities (class id + gaussian noise) and ``labels`` integer ``[*extents]``.
    Later classes overwrite earlier ones; placements are redrawn until every
    class is present.
    """
    extents = tuple(int(n) for n in extents)
    if any(n < 8 for n in extents):
        raise GenerationError(f"extents must be >= 8 per axis, got {extents}")
    if num_classes < 2:
        raise GenerationError("need at least one foreground class")
    rng = Rng(seed)
    for _ in range(50):
        labels = np.zeros(extents, dtype=np.int64)
        for c in range(1, num_classes):
            count = int(rng.integers(blobs_per_class[0], blobs_per_class[1] + 1))
            for _ in range(count):
                radii = [rng.uniform(radius_frac[0], radius_frac[1], ()) * n for n in extents]
                center = [rng.uniform(a, n - 1 - a, ()) for a, n in zip(radii, extents)]
                labels[ellipsoid_mask(extents, center, radii)] = c
        if all((labels == c).any() for c in range(num_classes)):
            break
    else:
        raise GenerationError(f"could not place every class in {extents} (seed {seed})")
    volume = labels.astype(np.float64) + rng.normal(extents, noise)
    return volume[None], labels
