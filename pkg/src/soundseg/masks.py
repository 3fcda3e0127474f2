"""Exact mask algebra on pixel grids.

Masks are plain float64 numpy arrays: binary masks hold {0, 1}, tri-valued
masks hold {0, 0.5, 1}, frames hold intensities in [0, 1]. The tri-valued
mask fuses a flow-derived mask with a reference mask: 1 where both agree on
foreground, 0.5 where exactly one claims foreground (uncertain), 0 where both
see background.
"""

from __future__ import annotations

import numpy as np

from .validation import (
    check_binary,
    check_frame,
    check_fraction,
    check_same_shape,
    check_trivalued,
    check_unit_range,
)

__all__ = [
    "binarize",
    "premask",
    "test_premask",
    "postmask_label",
    "apply_premask",
    "mask_stats",
]


def binarize(gray, tau: float = 0.05) -> np.ndarray:
    """Threshold a grayscale frame into a binary mask (pixel > tau -> 1).

    The comparison is strictly greater, so an all-zero frame stays all-zero
    even at tau = 0.
    """
    gray = check_unit_range(gray, "gray", ndim=2)
    tau = check_fraction(tau, "tau")
    return (gray > tau).astype(np.float64)


def premask(m_o, m_gt) -> np.ndarray:
    """Fuse a flow mask and a reference mask into a tri-valued mask.

    Per pixel: 1 where both are foreground, 0.5 where exactly one is
    (uncertain region), 0 where neither is.
    """
    m_o = check_binary(m_o, "m_o")
    m_gt = check_binary(m_gt, "m_gt")
    check_same_shape(m_o, m_gt, "premask inputs")
    return (m_o + m_gt) / 2.0


def test_premask(m_o) -> np.ndarray:
    """Tri-valued mask for inference, where no reference mask is available.

    Every flow-foreground pixel is marked uncertain (0.5); nothing is marked
    as agreed foreground.
    """
    m_o = check_binary(m_o, "m_o")
    return m_o / 2.0


def postmask_label(m_o, m_gt) -> np.ndarray:
    """Intersection of flow mask and reference mask (per-pixel logical AND)."""
    m_o = check_binary(m_o, "m_o")
    m_gt = check_binary(m_gt, "m_gt")
    check_same_shape(m_o, m_gt, "postmask inputs")
    return m_o * m_gt


def apply_premask(frame, m) -> np.ndarray:
    """Multiply every channel of a frame by the tri-valued mask."""
    frame = check_frame(frame)
    m = check_trivalued(m, "m")
    check_same_shape(np.empty(frame.shape[:2]), m, "frame/mask spatial dims")
    if frame.ndim == 2:
        return frame * m
    return frame * m[:, :, None]


def mask_stats(m) -> tuple[int, int, int]:
    """Count (ones, halves, zeros) in a tri-valued mask."""
    m = check_trivalued(m, "m")
    ones = int((m == 1.0).sum())
    halves = int((m == 0.5).sum())
    zeros = int((m == 0.0).sum())
    return ones, halves, zeros
