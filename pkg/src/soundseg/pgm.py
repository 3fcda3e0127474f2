"""Plain-text graymap (P2) and pixmap (P3) reading and writing.

The on-disk contract: maxval is always 255. Binary masks encode {0, 255},
tri-valued masks {0, 128, 255} with 128 decoding to exactly 0.5; any other
pixel value in a mask file is a format error. Gray frames and flow fields
decode as value / 255.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import FormatError
from .validation import check_binary, check_frame, check_trivalued, check_unit_range

__all__ = [
    "read_graymap", "write_graymap", "read_pixmap", "write_pixmap",
    "read_binary_mask", "write_binary_mask", "read_tri_mask", "write_tri_mask",
    "read_gray", "write_gray", "read_image", "write_image",
]

MAXVAL = 255
_HALF = 128


def _tokens(path: Path) -> list[str]:
    out: list[str] = []
    for line in path.read_text(encoding="ascii").splitlines():
        comment = line.find("#")
        if comment != -1:
            line = line[:comment]
        out.extend(line.split())
    return out


def _parse(path: str | Path, magic: str, per_pixel: int) -> np.ndarray:
    path = Path(path)
    toks = _tokens(path)
    if not toks or toks[0] != magic:
        raise FormatError(f"{path}: expected magic {magic}, "
                          f"got {toks[0] if toks else 'empty file'}")
    try:
        width, height, maxval = (int(t) for t in toks[1:4])
        values = np.array([int(t) for t in toks[4:]], dtype=np.int64)
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{path}: malformed header or pixel data") from exc
    if width <= 0 or height <= 0:
        raise FormatError(f"{path}: bad dimensions {width}x{height}")
    if maxval != MAXVAL:
        raise FormatError(f"{path}: maxval must be {MAXVAL}, got {maxval}")
    expected = width * height * per_pixel
    if values.size != expected:
        raise FormatError(f"{path}: expected {expected} values, got {values.size}")
    if values.size and (values.min() < 0 or values.max() > MAXVAL):
        raise FormatError(f"{path}: pixel value outside [0, {MAXVAL}]")
    if per_pixel == 1:
        return values.reshape(height, width)
    return values.reshape(height, width, per_pixel)


def _serialize(magic: str, values: np.ndarray) -> str:
    if values.ndim == 2:
        height, width = values.shape
        rows = values
    else:
        height, width, _ = values.shape
        rows = values.reshape(height, -1)
    lines = [magic, f"{width} {height}", str(MAXVAL)]
    lines.extend(" ".join(str(int(v)) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def read_graymap(path: str | Path) -> np.ndarray:
    """Raw integer values of a P2 file, shape (H, W)."""
    return _parse(path, "P2", 1)


def write_graymap(path: str | Path, values: np.ndarray) -> None:
    Path(path).write_text(_serialize("P2", np.asarray(values)), encoding="ascii")


def read_pixmap(path: str | Path) -> np.ndarray:
    """Raw integer values of a P3 file, shape (H, W, 3)."""
    return _parse(path, "P3", 3)


def write_pixmap(path: str | Path, values: np.ndarray) -> None:
    Path(path).write_text(_serialize("P3", np.asarray(values)), encoding="ascii")


def read_binary_mask(path: str | Path) -> np.ndarray:
    values = read_graymap(path)
    bad = ~np.isin(values, (0, MAXVAL))
    if bad.any():
        raise FormatError(f"{path}: binary mask pixel {values[bad].flat[0]} "
                          f"not in {{0, {MAXVAL}}}")
    return (values == MAXVAL).astype(np.float64)


def write_binary_mask(path: str | Path, mask: np.ndarray) -> None:
    mask = check_binary(mask)
    write_graymap(path, (mask * MAXVAL).astype(np.int64))


def read_tri_mask(path: str | Path) -> np.ndarray:
    values = read_graymap(path)
    bad = ~np.isin(values, (0, _HALF, MAXVAL))
    if bad.any():
        raise FormatError(f"{path}: tri-mask pixel {values[bad].flat[0]} "
                          f"not in {{0, {_HALF}, {MAXVAL}}}")
    out = np.zeros(values.shape)
    out[values == _HALF] = 0.5
    out[values == MAXVAL] = 1.0
    return out


def write_tri_mask(path: str | Path, mask: np.ndarray) -> None:
    mask = check_trivalued(mask)
    values = np.zeros(mask.shape, dtype=np.int64)
    values[mask == 0.5] = _HALF
    values[mask == 1.0] = MAXVAL
    write_graymap(path, values)


def read_gray(path: str | Path) -> np.ndarray:
    """A gray frame or flow field, decoded as value / 255 into [0, 1]."""
    return read_graymap(path) / MAXVAL


def write_gray(path: str | Path, frame: np.ndarray) -> None:
    frame = check_unit_range(frame, "frame", ndim=2)
    write_graymap(path, np.rint(frame * MAXVAL).astype(np.int64))


def read_image(path: str | Path) -> np.ndarray:
    """An image frame: P3 -> (H, W, 3), P2 -> (H, W), values in [0, 1]."""
    toks = _tokens(Path(path))
    magic = toks[0] if toks else ""
    if magic == "P3":
        return read_pixmap(path) / MAXVAL
    if magic == "P2":
        return read_gray(path)
    raise FormatError(f"{path}: expected P2 or P3, got {magic or 'empty file'}")


def write_image(path: str | Path, frame: np.ndarray) -> None:
    frame = check_frame(frame)
    values = np.rint(frame * MAXVAL).astype(np.int64)
    if frame.ndim == 2:
        write_graymap(path, values)
    elif frame.shape[2] == 1:
        write_graymap(path, values[:, :, 0])
    else:
        write_pixmap(path, values)
