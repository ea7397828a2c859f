"""Path-space numerics: sampling densities, marginal velocity fields,
particle transport and continuity-equation residuals.

The density of visiting a point x between a source z and target x1 under
the synchronized linear schedule is an integral over the scalar schedule;
it has no closed form and is evaluated by composite Simpson quadrature.
The vectorized-schedule variant covers the rectangular span of each pair
uniformly and is studied by Monte-Carlo histograms and particle runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyGrid, SingularEvaluation
from .interpolant import compensation_velocity, interpolate
from .tensor_core import RandomSource, Tensor, tensor

SQRT_2PI = math.sqrt(2.0 * math.pi)
T_CLIP = 1e-4  # integration domain is [0, 1 - T_CLIP]


@dataclass(frozen=True)
class Grid2D:
    """Regular 2D lattice of cell centers."""

    origin: tuple  # (x, y) of the lower-left cell corner
    spacing: tuple  # (hx, hy)
    nx: int
    ny: int

    @classmethod
    def from_bounds(cls, xmin, xmax, ymin, ymax, nx, ny):
        return cls(origin=(xmin, ymin), spacing=((xmax - xmin) / nx, (ymax - ymin) / ny),
                   nx=nx, ny=ny)

    @property
    def cell_area(self):
        return self.spacing[0] * self.spacing[1]

    def centers(self):
        xs = self.origin[0] + (np.arange(self.nx) + 0.5) * self.spacing[0]
        ys = self.origin[1] + (np.arange(self.ny) + 0.5) * self.spacing[1]
        return xs, ys

    def cell_indices(self, points: np.ndarray):
        """(ix, iy, inside) for an (n, 2) point array."""
        rel = (points - np.asarray(self.origin)) / np.asarray(self.spacing)
        ix = np.floor(rel[:, 0]).astype(int)
        iy = np.floor(rel[:, 1]).astype(int)
        inside = (ix >= 0) & (ix < self.nx) & (iy >= 0) & (iy < self.ny)
        return ix, iy, inside


@dataclass
class DensityMap:
    grid: Grid2D
    values: np.ndarray  # (nx, ny), nonnegative

    def to_pgm(self, path):
        save_pgm(path, self.values)


@dataclass
class VelocityGrid:
    grid: Grid2D
    vectors: np.ndarray  # (nx, ny, 2)
    weight: np.ndarray  # (nx, ny) accumulated sample mass

    @property
    def nonempty(self):
        return self.weight > 0

    def lookup(self, points: np.ndarray) -> np.ndarray:
        """Velocity at each point: containing cell, or nearest nonempty cell."""
        ix, iy, inside = self.grid.cell_indices(points)
        out = np.zeros_like(points)
        ne = self.nonempty
        direct = inside & ne[np.clip(ix, 0, self.grid.nx - 1), np.clip(iy, 0, self.grid.ny - 1)]
        out[direct] = self.vectors[ix[direct], iy[direct]]
        miss = ~direct
        if np.any(miss):
            xs, ys = self.grid.centers()
            ii, jj = np.nonzero(ne)
            if len(ii) == 0:
                raise EmptyGrid("velocity grid has no nonempty cells")
            centers = np.stack([xs[ii], ys[jj]], axis=1)
            d2 = (np.sum(points[miss] ** 2, axis=1)[:, None]
                  + np.sum(centers ** 2, axis=1)[None, :]
                  - 2.0 * points[miss] @ centers.T)
            nearest = np.argmin(d2, axis=1)
            out[miss] = self.vectors[ii[nearest], jj[nearest]]
        return out


@dataclass
class ParticleSet:
    positions: np.ndarray  # (n, 2) final positions
    alive: np.ndarray
    trajectory: list  # [(step, (n, 2) positions), ...]


def _density_integrand(t: np.ndarray, x, z, x1):
    d = np.asarray(z) - np.asarray(x1)
    a = np.asarray(x) - np.asarray(z)
    one_mt = 1.0 - t
    vec = t[:, None] * d[None, :] + a[None, :]
    sq = np.sum(vec * vec, axis=1)
    return np.exp(-sq / (2.0 * one_mt ** 2)) / (SQRT_2PI * one_mt)


def density_fm(x, z, x1, n_nodes: int = 8193) -> float:
    """Synchronized-schedule sampling density at x for the pair (z, x1).

    Composite Simpson on [0, 1 - 1e-4]; the integrand is singular at
    x = x1 and evaluation there is refused.
    """
    x, z, x1 = tensor(x), tensor(z), tensor(x1)
    if float(np.linalg.norm(x - x1)) < 1e-6:
        raise SingularEvaluation("density integrand singular at x = x1")
    if n_nodes < 16:
        raise ValueError("n_nodes must be >= 16")
    m = int(n_nodes)
    if m % 2 == 0:
        m += 1
    t = np.linspace(0.0, 1.0 - T_CLIP, m)
    f = _density_integrand(t, x, z, x1)
    h = t[1] - t[0]
    w = np.ones(m)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return float(h / 3.0 * np.dot(w, f))


def density_gradient(x, z, x1, h: float = 1e-4, n_nodes: int = 8193) -> np.ndarray:
    """Central-difference gradient of density_fm with shared quadrature nodes."""
    x = tensor(x)
    grad = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        grad[i] = (density_fm(x + e, z, x1, n_nodes)
                   - density_fm(x - e, z, x1, n_nodes)) / (2.0 * h)
    return grad


def gradient_identity_rhs(x, z) -> float:
    """Closed-form value of the projected density gradient."""
    x, z = tensor(x), tensor(z)
    return math.exp(-float(np.sum((x - z) ** 2)) / 2.0) / SQRT_2PI


def gradient_identity_residual(x, z, x1, h: float = 1e-4, n_nodes: int = 8193) -> float:
    """|(x1 - x) . grad(rho) - closed form|, gradient by central differences."""
    if not 1e-5 <= h <= 1e-3:
        raise ValueError("finite-difference step h must be in [1e-5, 1e-3]")
    x, z, x1 = tensor(x), tensor(z), tensor(x1)
    proj = float(np.dot(x1 - x, density_gradient(x, z, x1, h, n_nodes)))
    return abs(proj - gradient_identity_rhs(x, z))


def _draw_sources(spec, n, source: RandomSource):
    if isinstance(spec, str):
        if spec != "normal":
            raise ValueError(f"unknown source distribution {spec!r}")
        return source.normal((n, 2))
    pt = np.asarray(spec, dtype=np.float64)
    return np.tile(pt, (n, 1))


def density_grid(source_spec, x1, grid: Grid2D, mode: str, n_pairs: int,
                 source: RandomSource = None) -> DensityMap:
    """Monte-Carlo histogram of diffused points, normalized to unit mass.

    fm mode draws one scalar schedule per pair; combostoc draws one
    schedule per coordinate, covering the whole span rectangle.
    """
    if n_pairs < 10_000:
        raise ValueError("n_pairs must be >= 1e4")
    if source is None:
        source = RandomSource(0)
    x1 = tensor(x1)
    z = _draw_sources(source_spec, n_pairs, source)
    if mode == "fm":
        t = source.uniform((n_pairs, 1))
    elif mode == "combostoc":
        t = source.uniform((n_pairs, 2))
    else:
        raise ValueError(f"unknown density mode {mode!r}")
    pts = interpolate(z, x1[None, :], t)
    ix, iy, inside = grid.cell_indices(pts)
    hist = np.zeros((grid.nx, grid.ny))
    np.add.at(hist, (ix[inside], iy[inside]), 1.0)
    total = hist.sum()
    if total > 0:
        hist /= total * grid.cell_area
    return DensityMap(grid=grid, values=hist)


def marginal_velocity_field(pairs, grid: Grid2D, mode: str, n_interp: int = 100,
                            source: RandomSource = None) -> VelocityGrid:
    """Mass-weighted mean conditional velocity per cell.

    fm deposits the constant pair velocity x1 - z at points along the
    diagonal; combostoc deposits the drift-compensated velocity at uniform
    span samples.
    """
    if len(pairs) == 0:
        raise ValueError("need at least one (z, x1) pair")
    if source is None:
        source = RandomSource(0)
    vec_sum = np.zeros((grid.nx, grid.ny, 2))
    weight = np.zeros((grid.nx, grid.ny))
    for z, x1 in pairs:
        z, x1 = tensor(z), tensor(x1)
        v0 = x1 - z
        if mode == "fm":
            t = ((np.arange(n_interp) + 0.5) / n_interp)[:, None]
            pts = interpolate(z[None, :], x1[None, :], t)
            vels = np.tile(v0, (n_interp, 1))
        elif mode == "combostoc":
            t = source.uniform((n_interp, 2))
            pts = interpolate(z[None, :], x1[None, :], t)
            vels = v0[None, :] + compensation_velocity(pts, z[None, :], x1[None, :], batched=True)
        else:
            raise ValueError(f"unknown field mode {mode!r}")
        ix, iy, inside = grid.cell_indices(pts)
        np.add.at(vec_sum, (ix[inside], iy[inside]), vels[inside])
        np.add.at(weight, (ix[inside], iy[inside]), 1.0)
    if not np.any(weight > 0):
        raise EmptyGrid("no velocity deposit landed inside the grid")
    vectors = np.zeros_like(vec_sum)
    ne = weight > 0
    vectors[ne] = vec_sum[ne] / weight[ne][:, None]
    return VelocityGrid(grid=grid, vectors=vectors, weight=weight)


def simulate_particles(field: VelocityGrid, n: int = 500, steps: int = 100,
                       source: RandomSource = None, log_every: int = 10) -> ParticleSet:
    """Explicit-Euler transport of normal-initialized particles."""
    if not np.any(field.nonempty):
        raise EmptyGrid("cannot simulate on an empty velocity grid")
    if source is None:
        source = RandomSource(0)
    pos = source.normal((n, 2))
    dt = 1.0 / steps
    trajectory = [(0, pos.copy())]
    for k in range(1, steps + 1):
        if n:
            pos = pos + field.lookup(pos) * dt
        if k % log_every == 0 or k == steps:
            trajectory.append((k, pos.copy()))
    return ParticleSet(positions=pos, alive=np.ones(n, dtype=bool), trajectory=trajectory)


def outlier_count(particles: ParticleSet, targets, radius: float) -> int:
    """Final positions farther than radius from every target."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 2)
    if particles.positions.shape[0] == 0:
        return 0
    d2 = (np.sum(particles.positions ** 2, axis=1)[:, None]
          + np.sum(targets ** 2, axis=1)[None, :]
          - 2.0 * particles.positions @ targets.T)
    dmin = np.sqrt(np.maximum(d2.min(axis=1), 0.0))
    return int(np.sum(dmin > radius))


def _gaussian_path_density(pts: np.ndarray, x1: np.ndarray, t: float) -> np.ndarray:
    var = (1.0 - t) ** 2
    diff = pts - t * x1[None, :]
    return np.exp(-np.sum(diff * diff, axis=1) / (2.0 * var)) / (2.0 * math.pi * var)


def _gaussian_path_flux(pts: np.ndarray, x1: np.ndarray, t: float) -> np.ndarray:
    u = (x1[None, :] - pts) / (1.0 - t)
    return u * _gaussian_path_density(pts, x1, t)[:, None]


def continuity_residual(x1, grid: Grid2D, t: float, dt: float, h: float = None) -> float:
    """Max interior-cell residual |dp/dt + div(u p)| of the conditional path.

    Both derivatives use central finite differences on the closed-form
    Gaussian path; the spatial step defaults to dt (decoupled from the
    grid spacing so the residual reflects the path, not the mesh).
    """
    if not 0.05 < t < 0.95:
        raise ValueError("t must lie in (0.05, 0.95)")
    x1 = tensor(x1)
    if h is None:
        h = dt
    xs, ys = grid.centers()
    gx, gy = np.meshgrid(xs[1:-1], ys[1:-1], indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    dpdt = (_gaussian_path_density(pts, x1, t + dt)
            - _gaussian_path_density(pts, x1, t - dt)) / (2.0 * dt)
    ex = np.array([h, 0.0])
    ey = np.array([0.0, h])
    div = ((_gaussian_path_flux(pts + ex, x1, t)[:, 0]
            - _gaussian_path_flux(pts - ex, x1, t)[:, 0]) / (2.0 * h)
           + (_gaussian_path_flux(pts + ey, x1, t)[:, 1]
              - _gaussian_path_flux(pts - ey, x1, t)[:, 1]) / (2.0 * h))
    return float(np.max(np.abs(dpdt + div)))


def transport_consistency(z_samples, x1, t_tensor, n: int,
                          source: RandomSource = None, k_steps: int = 50) -> float:
    """Energy distance between numerically transported and directly
    interpolated populations at the same vectorized schedule."""
    from .data_metrics import energy_distance
    if source is None:
        source = RandomSource(1)
    z = tensor(z_samples)[:n]
    x1 = tensor(x1)
    t = np.broadcast_to(tensor(t_tensor), z.shape)
    # per-entry Euler integration of the constant pair velocity up to t
    pos = z.copy()
    vel = x1[None, :] - z
    step = t / k_steps
    for _ in range(k_steps):
        pos = pos + step * vel
    z_fresh = source.normal((n,) + z.shape[1:])
    direct = interpolate(z_fresh, np.broadcast_to(x1, z_fresh.shape), t[:n])
    return energy_distance(pos, direct)


def save_pgm(path, values: np.ndarray) -> None:
    """8-bit PGM heatmap, linear scaling with the max mapped to 255."""
    v = np.asarray(values, dtype=np.float64)
    vmax = v.max()
    img = np.zeros_like(v, dtype=np.uint8) if vmax <= 0 else \
        np.round(v / vmax * 255.0).astype(np.uint8)
    img = img.T[::-1]  # y up
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        f.write(img.tobytes())


def save_density_csv(path, dm: DensityMap) -> None:
    with open(path, "w") as f:
        f.write("ix,iy,value\n")
        for i in range(dm.grid.nx):
            for j in range(dm.grid.ny):
                f.write(f"{i},{j},{dm.values[i, j]!r}\n")


def save_velocity_csv(path, vg: VelocityGrid) -> None:
    with open(path, "w") as f:
        f.write("ix,iy,vx,vy,weight\n")
        for i in range(vg.grid.nx):
            for j in range(vg.grid.ny):
                f.write(f"{i},{j},{vg.vectors[i, j, 0]!r},{vg.vectors[i, j, 1]!r},"
                        f"{vg.weight[i, j]!r}\n")


def save_trajectories_csv(path, particles: ParticleSet) -> None:
    with open(path, "w") as f:
        f.write("step,particle,x,y\n")
        for step, pos in particles.trajectory:
            for p in range(pos.shape[0]):
                f.write(f"{step},{p},{pos[p, 0]!r},{pos[p, 1]!r}\n")
