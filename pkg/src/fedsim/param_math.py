"""Arithmetic over flat parameter vectors.

Every model exchanged between clients and the server is a 1-D float64
numpy array. The helpers here are pure and deterministic: reductions use
``math.fsum`` (exactly rounded, so independent of BLAS blocking) and
weighted sums accumulate updates strictly in list order.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, EmptyBufferError, NumericalError

ParamVector = np.ndarray


def as_params(values: Iterable[float] | np.ndarray) -> ParamVector:
    """Return ``values`` as a contiguous 1-D float64 array."""
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise DimensionError(f"expected a non-empty flat vector, got shape {arr.shape}")
    return arr


def _pair(a, b) -> tuple[ParamVector, ParamVector]:
    a, b = as_params(a), as_params(b)
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.size} != {b.size}")
    return a, b


def _finite(out: ParamVector) -> ParamVector:
    if not np.all(np.isfinite(out)):
        raise NumericalError("non-finite entries in result")
    return out


def dot(a, b) -> float:
    a, b = _pair(a, b)
    return math.fsum((a * b).tolist())


def norm(a) -> float:
    a = as_params(a)
    return math.sqrt(math.fsum((a * a).tolist()))


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between ``a`` and ``b``.

    A zero-norm operand yields 0.0 (no directional information). The
    result is clamped to [-1, 1] to absorb rounding.
    """
    a, b = _pair(a, b)
    na, nb = norm(a), norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return max(-1.0, min(1.0, dot(a, b) / (na * nb)))


def weighted_sum(updates: Sequence[tuple[float, ParamVector]]) -> ParamVector:
    """Return ``sum(w * p for w, p in updates)`` elementwise."""
    if len(updates) == 0:
        raise EmptyBufferError("weighted_sum of an empty list")
    w0, p0 = updates[0]
    p0 = as_params(p0)
    if not math.isfinite(w0):
        raise NumericalError(f"non-finite weight {w0!r}")
    acc = float(w0) * p0
    for w, p in updates[1:]:
        p = as_params(p)
        if p.shape != p0.shape:
            raise DimensionError(f"length mismatch: {p.size} != {p0.size}")
        if not math.isfinite(w):
            raise NumericalError(f"non-finite weight {w!r}")
        acc += float(w) * p
    return _finite(acc)


def mix(global_params, fresh, theta: float) -> ParamVector:
    """Convex blend ``(1 - theta) * global_params + theta * fresh``."""
    if not 0.0 <= theta <= 1.0:
        raise ConfigError(f"mixing coefficient must lie in [0, 1], got {theta}")
    g, f = _pair(global_params, fresh)
    if theta == 0.0:
        return g.copy()
    if theta == 1.0:
        return f.copy()
    return _finite((1.0 - theta) * g + theta * f)
