"""Motion-magnitude flow fields and their temporal alignment.

Flow fields are scalar per-pixel motion magnitudes in [0, 1], shape (H, W).
A flow sequence of length T-1 (one field per consecutive frame pair) is
aligned to T frames by keeping the endpoints and averaging adjacent pairs.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .validation import check_frame, check_same_shape, check_unit_range

__all__ = ["temporal_align", "flow_to_gray", "frame_diff_flow"]


def temporal_align(flows: list[np.ndarray]) -> list[np.ndarray]:
    """Align T-1 inter-frame flow fields to the T source frames.

    Output = [F_1, mean(F_1, F_2), ..., mean(F_{T-2}, F_{T-1}), F_{T-1}];
    always one entry longer than the input. The single-field input [a]
    degenerates to [a, a].
    """
    if len(flows) == 0:
        raise ValueError("temporal_align: empty flow sequence")
    flows = [check_unit_range(f, "flow", ndim=2) for f in flows]
    for f in flows[1:]:
        check_same_shape(flows[0], f, "flow sequence")
    out = [flows[0]]
    for a, b in zip(flows[:-1], flows[1:]):
        out.append((a + b) / 2.0)
    out.append(flows[-1])
    return out


def flow_to_gray(flow: np.ndarray) -> np.ndarray:
    """Grayscale view of a flow field (identity on the magnitude channel)."""
    return check_unit_range(flow, "flow", ndim=2).copy()


def frame_diff_flow(frames: list[np.ndarray] | np.ndarray) -> list[np.ndarray]:
    """Frame-differencing stand-in for an external flow estimator.

    Field t is the absolute luma difference between frames t+1 and t, where
    luma is the channel mean. T frames yield T-1 fields.
    """
    frames = [check_frame(f) for f in frames]
    if len(frames) < 2:
        raise ValueError("frame_diff_flow: need at least 2 frames, "
                         f"got {len(frames)}")
    lumas = []
    for f in frames:
        luma = f if f.ndim == 2 else f.mean(axis=2)
        lumas.append(luma)
    for l in lumas[1:]:
        if l.shape != lumas[0].shape:
            raise ShapeError(f"frame_diff_flow: frame dims differ, "
                             f"{lumas[0].shape} vs {l.shape}")
    return [np.abs(b - a) for a, b in zip(lumas[:-1], lumas[1:])]
