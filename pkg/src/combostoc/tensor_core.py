"""Dense float64 tensors, broadcast algebra and a counter-based random source.

Tensors are plain numpy float64 arrays in row-major order, treated as
immutable values. This module pins down the broadcast semantics, the
deterministic random streams and the CSV serialization format that the
rest of the package relies on.
"""

from __future__ import annotations

import numpy as np

from .errors import IncompatibleShapes

__all__ = [
    "Tensor",
    "RandomSource",
    "broadcast_shapes",
    "elementwise",
    "sample_normal",
    "sample_uniform",
    "tensor",
    "save_tensor_csv",
    "load_tensor_csv",
]

Tensor = np.ndarray


def tensor(values) -> Tensor:
    """Construct a float64 tensor from any array-like."""
    return np.asarray(values, dtype=np.float64)


def broadcast_shapes(a, b):
    """Broadcast two shapes by the trailing-dimension rule.

    Each aligned pair of extents must be equal or contain a 1; the result
    takes the elementwise max.
    """
    a, b = tuple(a), tuple(b)
    ndim = max(len(a), len(b))
    a = (1,) * (ndim - len(a)) + a
    b = (1,) * (ndim - len(b)) + b
    out = []
    for ea, eb in zip(a, b):
        if ea != eb and ea != 1 and eb != 1:
            raise IncompatibleShapes(f"cannot broadcast {a} with {b}: {ea} vs {eb}")
        out.append(max(ea, eb))
    return tuple(out)


_OPS = {"add": np.add, "sub": np.subtract, "mul": np.multiply}


def elementwise(op: str, a: Tensor, b: Tensor) -> Tensor:
    """Apply add/sub/mul under broadcast semantics."""
    a, b = tensor(a), tensor(b)
    shape = broadcast_shapes(a.shape, b.shape)  # raises IncompatibleShapes
    return _OPS[op](a, b).reshape(shape)


class RandomSource:
    """Counter-based deterministic random stream.

    A (seed, counter) pair fully determines every draw, on every platform,
    via the Philox counter-based bit generator keyed on both values. Each
    draw call bumps the counter, so consecutive calls use disjoint streams.
    Parallel work derives independent child sources by counter offset.
    """

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.counter = int(counter) & 0xFFFFFFFFFFFFFFFF

    def _generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=[self.seed, self.counter]))

    def _next(self) -> np.random.Generator:
        gen = self._generator()
        self.counter = (self.counter + 1) & 0xFFFFFFFFFFFFFFFF
        return gen

    def child(self, offset: int) -> "RandomSource":
        """Derived source for parallel work; offsets must not collide."""
        return RandomSource(self.seed, self.counter + int(offset))

    def normal(self, shape=()) -> Tensor:
        return self._next().standard_normal(shape, dtype=np.float64)

    def uniform(self, shape=()) -> Tensor:
        return self._next().random(shape, dtype=np.float64)

    def integers(self, low, high, shape=()) -> np.ndarray:
        return self._next().integers(low, high, size=shape)

    def __repr__(self):
        return f"RandomSource(seed={self.seed}, counter={self.counter})"


def sample_normal(source: RandomSource, shape) -> Tensor:
    """I.i.d. standard normal entries, deterministic given (seed, counter)."""
    return source.normal(tuple(shape))


def sample_uniform(source: RandomSource, shape) -> Tensor:
    """I.i.d. uniform [0,1) entries, deterministic given (seed, counter)."""
    return source.uniform(tuple(shape))


def save_tensor_csv(path, t: Tensor) -> None:
    """Write a tensor as CSV: header `shape=d0xd1x...`, one row per leading index."""
    t = tensor(t)
    shape = t.shape if t.ndim > 0 else (1,)
    header = "shape=" + "x".join(str(d) for d in shape)
    rows = t.reshape(shape[0], -1) if t.size else t.reshape(shape[0], 0)
    with open(path, "w") as f:
        f.write(header + "\n")
        for row in rows:
            f.write(",".join(repr(float(v)) for v in row) + "\n")


def load_tensor_csv(path) -> Tensor:
    with open(path) as f:
        header = f.readline().strip()
        if not header.startswith("shape="):
            raise ValueError(f"{path}: missing shape header")
        shape = tuple(int(d) for d in header[len("shape="):].split("x"))
        data = []
        for line in f:
            line = line.strip()
            if line:
                data.extend(float(v) for v in line.split(","))
    return np.array(data, dtype=np.float64).reshape(shape)
