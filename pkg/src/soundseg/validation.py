"""Input validation helpers, sklearn-check style.

All helpers return the validated array (as float64 ndarray) so call sites can
validate and normalize in one expression.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


def check_array(a, name: str = "array", ndim: int | None = None) -> np.ndarray:
    out = np.asarray(a, dtype=np.float64)
    if ndim is not None and out.ndim != ndim:
        raise ShapeError(f"{name}: expected {ndim} dimensions, got shape {out.shape}")
    return out


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "inputs") -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def check_binary(a, name: str = "mask") -> np.ndarray:
    out = check_array(a, name, ndim=2)
    if not np.isin(out, (0.0, 1.0)).all():
        bad = out[~np.isin(out, (0.0, 1.0))].flat[0]
        raise ValueError(f"{name}: values must be exactly 0 or 1, found {bad!r}")
    return out


def check_trivalued(a, name: str = "mask") -> np.ndarray:
    out = check_array(a, name, ndim=2)
    if not np.isin(out, (0.0, 0.5, 1.0)).all():
        bad = out[~np.isin(out, (0.0, 0.5, 1.0))].flat[0]
        raise ValueError(f"{name}: values must be in {{0, 0.5, 1}}, found {bad!r}")
    return out


def check_unit_range(a, name: str = "frame", ndim: int | None = None) -> np.ndarray:
    out = check_array(a, name, ndim=ndim)
    if out.size and (out.min() < 0.0 or out.max() > 1.0):
        raise ValueError(f"{name}: values must lie in [0, 1], range is "
                         f"[{out.min()}, {out.max()}]")
    return out


def check_frame(a, name: str = "frame") -> np.ndarray:
    """Validate an image frame: (H, W) or (H, W, C) with C in {1, 3}, values in [0, 1]."""
    out = check_unit_range(a, name)
    if out.ndim == 2:
        return out
    if out.ndim == 3 and out.shape[2] in (1, 3):
        return out
    raise ShapeError(f"{name}: expected (H, W) or (H, W, C) with C in {{1, 3}}, "
                     f"got shape {out.shape}")


def check_fraction(x: float, name: str = "value") -> float:
    x = float(x)
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"{name}: must lie in [0, 1], got {x}")
    return x
