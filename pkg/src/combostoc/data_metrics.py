"""Toy datasets (2D distributions, synthetic structured parts) and metrics.

The structured generator builds table-like and chair-like objects out of
part tokens (s, b, e): existence flag, 2D bounding box (cx, cy, w, h) and
a shape code drawn near a per-role prototype. Energy distance is the
scalar two-sample statistic used in place of large-scale scores.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import UnknownKind
from .tensor_core import RandomSource, Tensor, tensor

TOY_KINDS = ("two_moons", "gauss_mixture", "checkerboard", "single_point", "structured")

SCENE_BOUND = 1.0  # structured parts live in [-1, 1]^2


@dataclass(frozen=True)
class StructuredSpec:
    """Widths and class catalog for the synthetic structured-parts data."""

    parts: int = 8
    v_s: int = 1
    v_b: int = 4
    v_e: int = 8
    class_names: tuple = ("table_like", "chair_like")

    @property
    def seg_widths(self):
        return (self.v_s, self.v_b, self.v_e)

    @property
    def token_width(self):
        return self.v_s + self.v_b + self.v_e

    def prototypes(self, class_id: int) -> np.ndarray:
        """Fixed per-role shape-code prototypes; roles are rows."""
        n_roles = 2 if class_id == 0 else 3
        protos = np.zeros((n_roles, self.v_e))
        for r in range(n_roles):
            protos[r, (class_id * 3 + r) % self.v_e] = 2.0
        return protos


@dataclass
class ToyDataset:
    """Samples plus an invertible normalization record."""

    samples: Tensor
    kind: str
    mean: np.ndarray
    scale: float
    class_labels: np.ndarray = None
    spec: StructuredSpec = None

    def denormalize(self, x: Tensor) -> Tensor:
        return x * self.scale + self.mean

    def normalize(self, x: Tensor) -> Tensor:
        return (x - self.mean) / self.scale

    def metadata(self) -> dict:
        return {"kind": self.kind, "mean": list(map(float, np.ravel(self.mean))),
                "scale": float(self.scale), "n": int(self.samples.shape[0])}


def _normalize(points: np.ndarray):
    mean = points.mean(axis=0)
    centered = points - mean
    scale = float(np.sqrt(np.mean(np.sum(centered ** 2, axis=1))))
    if scale == 0.0:
        scale = 1.0
    return centered / scale, mean, scale


def _two_moons(n, source, noise=0.05):
    theta = source.uniform((n,)) * math.pi
    half = source.uniform((n,)) < 0.5
    x = np.where(half, np.cos(theta), 1.0 - np.cos(theta))
    y = np.where(half, np.sin(theta), 0.5 - np.sin(theta))
    pts = np.stack([x, y], axis=1)
    return pts + noise * source.normal((n, 2))


def _gauss_mixture(n, source, centers=((0.0, 0.0), (2.0, 1.5), (-2.0, 1.5)), sigma=0.35):
    centers = np.asarray(centers, dtype=np.float64)
    idx = source.integers(0, len(centers), (n,))
    return centers[idx] + sigma * source.normal((n, 2))


def _checkerboard(n, source, cells=4, extent=2.0):
    width = 2.0 * extent / cells
    allowed = np.array([(i, j) for i in range(cells) for j in range(cells)
                        if (i + j) % 2 == 0], dtype=np.float64)
    idx = source.integers(0, len(allowed), (n,))
    corner = allowed[idx] * width - extent
    return corner + source.uniform((n, 2)) * width


def make_2d_dataset(kind: str, n: int, source: RandomSource, **params) -> ToyDataset:
    """Generate a named 2D toy distribution, normalized to zero mean, unit scale.

    single_point keeps its raw coordinates (identity normalization) so the
    documented target x1 = (1, 1) survives.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if kind == "two_moons":
        raw = _two_moons(n, source, **params)
    elif kind == "gauss_mixture":
        raw = _gauss_mixture(n, source, **params)
    elif kind == "checkerboard":
        raw = _checkerboard(n, source, **params)
    elif kind == "single_point":
        raw = np.tile(np.array([1.0, 1.0]), (n, 1))
        return ToyDataset(samples=raw, kind=kind, mean=np.zeros(2), scale=1.0)
    else:
        raise UnknownKind(f"unknown 2d dataset kind {kind!r}")
    samples, mean, scale = _normalize(raw)
    return ToyDataset(samples=samples, kind=kind, mean=mean, scale=scale)


def _place_table(spec, source):
    parts = []
    top_w = 0.9 + 0.3 * source.uniform()
    top_h = 0.1 + 0.1 * source.uniform()
    top_cx = -0.1 + 0.2 * source.uniform()
    top_cy = 0.45 + 0.15 * source.uniform()
    parts.append((0, (top_cx, top_cy, top_w, top_h)))
    n_legs = int(source.integers(2, 5))
    span = top_w - 0.2
    for i in range(n_legs):
        frac = 0.5 if n_legs == 1 else i / (n_legs - 1)
        cx = top_cx - span / 2 + frac * span + 0.02 * source.normal()
        h = 0.6 + 0.2 * source.uniform()
        cy = top_cy - top_h / 2 - h / 2 - 0.02 * source.uniform()
        w = 0.08 + 0.04 * source.uniform()
        parts.append((1, (cx, cy, w, h)))
    return parts


def _place_chair(spec, source):
    parts = []
    seat_w = 0.7 + 0.2 * source.uniform()
    seat_h = 0.1 + 0.05 * source.uniform()
    seat_cx = -0.1 + 0.2 * source.uniform()
    seat_cy = -0.05 + 0.1 * source.uniform()
    parts.append((0, (seat_cx, seat_cy, seat_w, seat_h)))
    back_w = 0.1 + 0.05 * source.uniform()
    back_h = 0.6 + 0.2 * source.uniform()
    back_cx = seat_cx - seat_w / 2 + back_w / 2
    back_cy = seat_cy + seat_h / 2 + back_h / 2
    parts.append((1, (back_cx, back_cy, back_w, back_h)))
    n_legs = int(source.integers(2, 5))
    span = seat_w - 0.15
    for i in range(n_legs):
        frac = 0.5 if n_legs == 1 else i / (n_legs - 1)
        cx = seat_cx - span / 2 + frac * span + 0.02 * source.normal()
        h = 0.4 + 0.15 * source.uniform()
        cy = seat_cy - seat_h / 2 - h / 2 - 0.02 * source.uniform()
        w = 0.06 + 0.04 * source.uniform()
        parts.append((2, (cx, cy, w, h)))
    return parts


_PLACERS = (_place_table, _place_chair)


def make_structured_dataset(spec: StructuredSpec, class_label: int, n: int,
                            source: RandomSource, code_noise=0.05) -> ToyDataset:
    """n structured objects of one class; dead tokens are all-zero with s=0."""
    protos = spec.prototypes(class_label)
    data = np.zeros((n, spec.parts, spec.token_width))
    for i in range(n):
        placed = _PLACERS[class_label](spec, source)
        for j, (role, bbox) in enumerate(placed[: spec.parts]):
            data[i, j, 0] = 1.0
            data[i, j, 1:1 + spec.v_b] = bbox
            data[i, j, 1 + spec.v_b:] = protos[role] + code_noise * source.normal((spec.v_e,))
    labels = np.full(n, class_label, dtype=np.int64)
    return ToyDataset(samples=data, kind="structured", mean=np.zeros(spec.token_width),
                      scale=1.0, class_labels=labels, spec=spec)


def _mean_cross_distance(a: np.ndarray, b: np.ndarray, block: int = 2048) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(len(a), -1)
    b = np.asarray(b, dtype=np.float64).reshape(len(b), -1)
    bb = np.sum(b * b, axis=1)
    total = 0.0
    for i in range(0, len(a), block):
        blk = a[i:i + block]
        d2 = np.sum(blk * blk, axis=1)[:, None] + bb[None, :] - 2.0 * blk @ b.T
        total += float(np.sqrt(np.maximum(d2, 0.0)).sum())
    return total / (len(a) * len(b))


def energy_distance(a, b) -> float:
    """2 E||a-b|| - E||a-a'|| - E||b-b'|| over all pairs (V-statistic)."""
    if len(a) == 0 or len(b) == 0:
        raise ValueError("both samples must be nonempty")
    # canonical argument order keeps the statistic exactly symmetric under
    # floating point (blockwise summation order would otherwise differ)
    a, b = np.asarray(a), np.asarray(b)
    if (a.shape, a.tobytes()) > (b.shape, b.tobytes()):
        a, b = b, a
    return (2.0 * _mean_cross_distance(a, b)
            - _mean_cross_distance(a, a)
            - _mean_cross_distance(b, b))


@dataclass
class ValidityReport:
    bounds_ok: bool
    class_rule_ok: bool
    binary_ok: bool
    n_live: int

    @property
    def all_ok(self):
        return self.bounds_ok and self.class_rule_ok and self.binary_ok


def _part_roles(codes: np.ndarray, protos: np.ndarray) -> np.ndarray:
    d2 = np.sum((codes[:, None, :] - protos[None, :, :]) ** 2, axis=2)
    return np.argmin(d2, axis=1)


def structure_validity(sample: Tensor, spec: StructuredSpec, class_label: int,
                       tol: float = 1e-9) -> ValidityReport:
    """Rule checks for one structured object of shape (parts, token_width)."""
    sample = tensor(sample)
    s = sample[:, 0]
    binary_ok = bool(np.all((np.abs(s) < tol) | (np.abs(s - 1.0) < tol)))
    live = s > 0.5
    n_live = int(live.sum())
    if n_live == 0:
        return ValidityReport(True, False, binary_ok, 0)
    bboxes = sample[live, 1:1 + spec.v_b]
    cx, cy, w, h = bboxes.T
    bounds_ok = bool(np.all(np.abs(cx) + np.abs(w) / 2 <= SCENE_BOUND + tol)
                     and np.all(np.abs(cy) + np.abs(h) / 2 <= SCENE_BOUND + tol))
    roles = _part_roles(sample[live, 1 + spec.v_b:], spec.prototypes(class_label))
    if class_label == 0:
        tops, legs = cy[roles == 0], cy[roles == 1]
        class_rule_ok = len(tops) > 0 and len(legs) > 0 and tops.min() > legs.max()
    else:
        seats, backs, legs = cy[roles == 0], cy[roles == 1], cy[roles == 2]
        class_rule_ok = (len(seats) > 0 and len(backs) > 0 and len(legs) > 0
                         and backs.min() > seats.max() > legs.max())
    return ValidityReport(bounds_ok, bool(class_rule_ok), binary_ok, n_live)


def save_dataset(path_prefix: str, ds: ToyDataset, seed: int = None) -> None:
    from .tensor_core import save_tensor_csv
    save_tensor_csv(str(path_prefix) + ".csv", ds.samples)
    meta = ds.metadata()
    if seed is not None:
        meta["seed"] = int(seed)
    with open(str(path_prefix) + ".json", "w") as f:
        json.dump(meta, f, indent=2)
