"""Vectorized-timestep interpolation, regression targets and drift fields.

The diffused point is x_t = (1-t) * z + t * x1 with t either a scalar
schedule broadcast everywhere or a tensor assigning each dimension,
attribute or part its own interpolation progress. Off-diagonal start
points incur a terminal drift under the plain velocity x1 - z; the
compensation velocity cancels the component of (x_t - x1) orthogonal to
the pair diagonal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneratePair, IncompatibleShapes, SchedulerAtOne
from .tensor_core import RandomSource, Tensor, broadcast_shapes, tensor

GRID_MODES = ("none", "patch", "vec", "all")
STRUCTURED_MODES = ("none", "part", "att", "att_part", "vec", "all")

DEGENERATE_EPS = 1e-12


@dataclass(frozen=True)
class GridLayout:
    """Image-like data of per-record shape (channels, height, width)."""

    channels: int
    height: int = 1
    width: int = 1

    kind = "grid"

    @property
    def record_shape(self):
        return (self.channels, self.height, self.width)

    @property
    def modes(self):
        return GRID_MODES

    def timestep_record_shape(self, mode):
        c, h, w = self.channels, self.height, self.width
        return {
            "none": (1, 1, 1),
            "patch": (1, h, w),
            "vec": (c, 1, 1),
            "all": (c, h, w),
        }[mode]

    def expand_timesteps(self, t: Tensor) -> Tensor:
        n = t.shape[0]
        return np.broadcast_to(t, (n,) + self.record_shape)


@dataclass(frozen=True)
class StructuredLayout:
    """Part-token data of per-record shape (parts, V) with V = sum(seg_widths).

    The token attribute axis concatenates the existence / bounding-box /
    shape-code segments; `att` modes hold one timestep per segment and
    broadcast it across the segment's width.
    """

    parts: int
    seg_widths: tuple = (1, 4, 8)

    kind = "structured"

    @property
    def token_width(self):
        return sum(self.seg_widths)

    @property
    def record_shape(self):
        return (self.parts, self.token_width)

    @property
    def modes(self):
        return STRUCTURED_MODES

    @property
    def segment_slices(self):
        out, start = [], 0
        for w in self.seg_widths:
            out.append(slice(start, start + w))
            start += w
        return tuple(out)

    def timestep_record_shape(self, mode):
        l, v = self.parts, self.token_width
        nseg = len(self.seg_widths)
        return {
            "none": (1, 1),
            "part": (l, 1),
            "att": (1, nseg),
            "att_part": (l, nseg),
            "vec": (1, v),
            "all": (l, v),
        }[mode]

    def expand_timesteps(self, t: Tensor) -> Tensor:
        n = t.shape[0]
        nseg = len(self.seg_widths)
        if t.shape[2] == nseg and nseg != self.token_width:
            t = np.repeat(t, self.seg_widths, axis=2)
        return np.broadcast_to(t, (n,) + self.record_shape)


@dataclass(frozen=True)
class UnsyncConfig:
    """One cell of the timestep-tensor configuration lattice plus batch mixing.

    mix_fraction f keeps the first ceil(f*N) records of each batch on a
    single synchronized scalar; the rest get fully split timesteps.
    sync_blend optionally pulls split timesteps toward a per-record scalar
    (off by default).
    """

    mode: str
    layout: object
    mix_fraction: float = 0.0
    sync_blend: float = 0.0

    def __post_init__(self):
        if self.mode not in self.layout.modes:
            raise ValueError(f"mode {self.mode!r} invalid for {self.layout.kind} layout")
        if not 0.0 <= self.mix_fraction <= 1.0:
            raise ValueError("mix_fraction must be in [0,1]")
        if not 0.0 <= self.sync_blend <= 1.0:
            raise ValueError("sync_blend must be in [0,1]")

    def timestep_shape(self, batch_size: int):
        return (batch_size,) + self.layout.timestep_record_shape(self.mode)


def sample_timesteps(cfg: UnsyncConfig, batch_size: int, source: RandomSource) -> Tensor:
    """Draw the timestep tensor for one batch, i.i.d. uniform in [0,1).

    Returned in the compact per-mode shape; use cfg.layout.expand_timesteps
    to broadcast it to the data shape.
    """
    shape = cfg.timestep_shape(batch_size)
    t = source.uniform(shape)
    rec_ones = (1,) * (len(shape) - 1)
    n_sync = math.ceil(cfg.mix_fraction * batch_size)
    if n_sync:
        scalars = source.uniform((n_sync,))
        t[:n_sync] = scalars.reshape((n_sync,) + rec_ones)
    if cfg.sync_blend > 0.0 and n_sync < batch_size:
        n_split = batch_size - n_sync
        scalars = source.uniform((n_split,)).reshape((n_split,) + rec_ones)
        b = cfg.sync_blend
        t[n_sync:] = (1.0 - b) * t[n_sync:] + b * scalars
    return t


def interpolate(z: Tensor, x1: Tensor, t: Tensor) -> Tensor:
    """Diffused point (1-t) * z + t * x1 under broadcast semantics."""
    z, x1, t = tensor(z), tensor(x1), tensor(t)
    broadcast_shapes(broadcast_shapes(z.shape, x1.shape), t.shape)
    return (1.0 - t) * z + t * x1


def _reduce_axes(x: Tensor, batched: bool):
    if batched:
        return tuple(range(1, x.ndim))
    return None


def drift_offset(x_t: Tensor, z: Tensor, x1: Tensor, batched: bool = False) -> Tensor:
    """Component of (x_t - x1) orthogonal to the pair diagonal x1 - z.

    With batched=True the leading axis indexes records and the projection
    is taken per record.
    """
    x_t, z, x1 = tensor(x_t), tensor(z), tensor(x1)
    diff = x_t - x1
    diag = x1 - z
    axes = _reduce_axes(x1, batched)
    denom = np.sum(diag * diag, axis=axes, keepdims=batched)
    if np.any(denom < DEGENERATE_EPS):
        raise DegeneratePair("||x1 - z||^2 below 1e-12; diagonal direction undefined")
    coeff = np.sum(diff * diag, axis=axes, keepdims=batched) / denom
    return diff - coeff * diag


def compensation_velocity(x_t: Tensor, z: Tensor, x1: Tensor, batched: bool = False) -> Tensor:
    """Negated drift offset; added to the velocity target during training."""
    return -drift_offset(x_t, z, x1, batched=batched)


def cone_velocity(x_t0: Tensor, x1: Tensor, t0: Tensor) -> Tensor:
    """Cone-shaped field (x1 - x_t0) / (1 - min(t0)); min over all t0 entries."""
    x_t0, x1, t0 = tensor(x_t0), tensor(x1), tensor(t0)
    tmin = float(np.min(t0))
    if tmin >= 1.0 - 1e-9:
        raise SchedulerAtOne("min(t0) at 1; cone velocity undefined")
    return (x1 - x_t0) / (1.0 - tmin)


def regression_target(kind: str, z: Tensor, x1: Tensor, x_t: Tensor,
                      compensate: bool = False, batched: bool = False) -> Tensor:
    """Training target: x1 (data) or x1 - z (velocity, optionally compensated)."""
    if kind == "data":
        return tensor(x1)
    if kind == "velocity":
        target = tensor(x1) - tensor(z)
        if compensate:
            target = target + compensation_velocity(x_t, z, x1, batched=batched)
        return target
    raise ValueError(f"unknown prediction kind {kind!r}")


@dataclass
class SampleBatch:
    """One training batch of paired noise/data records and their targets."""

    z: Tensor
    x1: Tensor
    t: Tensor  # compact per-mode shape
    x_t: Tensor
    target: Tensor
    class_labels: np.ndarray
    prediction_kind: str
    layout: object = None

    def validate(self):
        assert np.all(self.t >= 0.0) and np.all(self.t <= 1.0)
        t_full = self.layout.expand_timesteps(self.t) if self.layout is not None else self.t
        np.testing.assert_allclose(self.x_t, interpolate(self.z, self.x1, t_full), rtol=0, atol=1e-12)


def make_batch(cfg: UnsyncConfig, z: Tensor, x1: Tensor, class_labels,
               prediction_kind: str, compensate: bool, source: RandomSource) -> SampleBatch:
    """Assemble a SampleBatch: timesteps, diffused points and targets.

    Pairs with a degenerate diagonal (||x1 - z|| ~ 0) are dropped.
    """
    n = z.shape[0]
    t = sample_timesteps(cfg, n, source)
    t_full = cfg.layout.expand_timesteps(t)
    x_t = interpolate(z, x1, t_full)
    sq = np.sum((x1 - z) ** 2, axis=tuple(range(1, z.ndim)))
    keep = sq >= DEGENERATE_EPS
    if not np.all(keep):
        z, x1, x_t = z[keep], x1[keep], x_t[keep]
        t = t[keep]
        class_labels = np.asarray(class_labels)[keep]
    target = regression_target(prediction_kind, z, x1, x_t,
                               compensate=compensate, batched=True)
    return SampleBatch(z=z, x1=x1, t=t, x_t=x_t, target=target,
                       class_labels=np.asarray(class_labels, dtype=np.int64),
                       prediction_kind=prediction_kind, layout=cfg.layout)
