"""State extraction from height images and the tactile grip-stop rule.

Image convention: pixel (row r, column c) sits at robot-frame
x = origin_x + c * pitch, y = origin_y + r * pitch, and a height h maps to
z = origin_z + h.  Angles are measured from the +x (column) axis.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .model import StateVector

DEFAULT_THRESHOLD = 10.0
PRESSURE_FRACTION = 0.7
N_FINGERS = 3
N_SENSORS = 9


class PerceptionError(ValueError):
    pass


class NoObjectError(PerceptionError):
    pass


class DegenerateShapeError(PerceptionError):
    pass


@dataclass
class HeightImage:
    data: np.ndarray
    pitch: float = 1.0
    origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 2:
            raise PerceptionError("height image must be 2-D")
        if not np.all(np.isfinite(self.data)):
            raise PerceptionError("height image has non-finite entries")
        if self.pitch <= 0:
            raise PerceptionError("pitch must be positive")
        self.origin = tuple(float(v) for v in self.origin)

    def pixel_to_xy(self, rows, cols):
        return self.origin[0] + np.asarray(cols) * self.pitch, self.origin[1] + np.asarray(rows) * self.pitch

    def xy_to_pixel(self, x, y):
        """Nearest pixel (row, col), clipped to the image."""
        c = int(np.clip(np.rint((x - self.origin[0]) / self.pitch), 0, self.data.shape[1] - 1))
        r = int(np.clip(np.rint((y - self.origin[1]) / self.pitch), 0, self.data.shape[0] - 1))
        return r, c

    def at(self, x, y) -> float:
        r, c = self.xy_to_pixel(x, y)
        return float(self.data[r, c])


@dataclass
class BinaryMask:
    data: np.ndarray
    threshold: float = DEFAULT_THRESHOLD

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=bool)


def height_from_depth(depth, reference, pitch: float = 1.0, origin=(0.0, 0.0, 0.0)) -> HeightImage:
    """Height above the support surface: reference - depth, clipped at 0."""
    depth = np.asarray(depth, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if depth.shape != reference.shape:
        raise PerceptionError(f"shape mismatch: depth {depth.shape} vs reference {reference.shape}")
    return HeightImage(np.maximum(reference - depth, 0.0), pitch, origin)


def segment(h: HeightImage, threshold: float = DEFAULT_THRESHOLD) -> BinaryMask:
    """Threshold the height image and keep the largest 4-connected blob."""
    if threshold <= 0:
        raise PerceptionError("threshold must be positive")
    raw = h.data > threshold
    labels, n = ndimage.label(raw)
    if n == 0:
        raise NoObjectError("no pixels above the segmentation threshold")
    sizes = np.bincount(labels.ravel())[1:]
    keep = 1 + int(np.argmax(sizes))  # first (raster order) on equal sizes
    return BinaryMask(labels == keep, threshold)


def _canonical_axis(theta):
    c, s = np.cos(theta), np.sin(theta)
    if c < 0 or (abs(c) < 1e-15 and s < 0):
        c, s = -c, -s
    if abs(c) < 1e-15:
        c, s = 0.0, 1.0
    return float(c), float(s)


def extract_state(mask: BinaryMask, h: HeightImage) -> StateVector:
    """The 12 visual features of a segmented object."""
    m = mask.data if isinstance(mask, BinaryMask) else np.asarray(mask, dtype=bool)
    if m.shape != h.data.shape:
        raise PerceptionError("mask and height image shapes differ")
    rows, cols = np.nonzero(m)
    if rows.size == 0:
        raise NoObjectError("empty mask")
    if rows.size < 2:
        raise DegenerateShapeError("single-pixel mask has no principal axes")
    X, Y = h.pixel_to_xy(rows, cols)
    xc, yc = X.mean(), Y.mean()
    dx, dy = X - xc, Y - yc
    mu20, mu02, mu11 = np.mean(dx * dx), np.mean(dy * dy), np.mean(dx * dy)
    theta = 0.5 * np.arctan2(2.0 * mu11, mu20 - mu02)
    ct, st = _canonical_axis(theta)
    t = dx * ct + dy * st  # along the major axis
    w = -dx * st + dy * ct  # along the minor axis
    half = 0.5 * h.pitch
    t_hi, t_lo = t.max() + half, t.min() - half
    l_a = t_hi - t_lo
    w_a = (w.max() - w.min()) + h.pitch

    # a pixel's footprint projected on the major axis, so rotated strips have no gaps
    reach = half * (abs(ct) + abs(st))

    def width_at(tq):
        strip = np.abs(t - tq) <= reach
        if not strip.any():
            return 0.0
        return float(w[strip].max() - w[strip].min() + h.pitch)

    tb, tc = 0.5 * t_hi, 0.5 * t_lo
    h_a = h.at(xc, yc)
    return StateVector(
        x_a=float(xc), y_a=float(yc), z_a=h.origin[2] + h_a, h_a=h_a,
        l_a=float(l_a), w_a=float(min(w_a, l_a)),
        cos_theta=ct, sin_theta=st,
        h_b=h.at(xc + tb * ct, yc + tb * st), w_b=width_at(tb),
        h_c=h.at(xc + tc * ct, yc + tc * st), w_c=width_at(tc),
    )


def state_from_depth(depth, reference, pitch=1.0, origin=(0.0, 0.0, 0.0), threshold=DEFAULT_THRESHOLD):
    h = height_from_depth(depth, reference, pitch, origin)
    return extract_state(segment(h, threshold), h)


# --------------------------------------------------------------------------
# tactile


def significant_pressure(t) -> float:
    """Mean of the readings strictly above 70% of the finger's maximum."""
    t = np.asarray(t, dtype=float).reshape(-1)
    if t.size != N_SENSORS:
        raise ValueError(f"expected {N_SENSORS} tactile values, got {t.size}")
    m = t.max()
    if m <= 0.0:
        return 0.0
    return float(t[t > PRESSURE_FRACTION * m].mean())


@dataclass
class GripResult:
    index: int | None
    achieved: np.ndarray
    exhausted: bool


def grip_stop(targets, live) -> GripResult:
    """Consume 3x9 tactile frames until any finger reaches its target pressure."""
    targets = np.asarray(targets, dtype=float).reshape(N_FINGERS)
    if np.any(targets < 0):
        raise ValueError("targets must be non-negative")
    achieved = np.zeros(N_FINGERS)
    for i, frame in enumerate(live):
        frame = np.asarray(frame, dtype=float).reshape(N_FINGERS, N_SENSORS)
        achieved = np.array([significant_pressure(f) for f in frame])
        if np.any(achieved >= targets):
            return GripResult(i, achieved, False)
    return GripResult(None, achieved, True)


# --------------------------------------------------------------------------
# image files: JSON header line, then one row of values per line


def write_image(path, data, pitch: float = 1.0, origin=(0.0, 0.0, 0.0), kind: str = "height") -> None:
    data = np.asarray(data)
    header = {"kind": kind, "rows": int(data.shape[0]), "cols": int(data.shape[1]),
              "pitch": float(pitch), "origin": [float(v) for v in origin]}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for row in data:
            if kind == "mask":
                fh.write(" ".join("1" if v else "0" for v in row) + "\n")
            else:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_image(path):
    """Returns (header dict, array)."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header = json.loads(lines[0])
    rows = [list(map(float, ln.split())) for ln in lines[1:] if ln.strip()]
    arr = np.array(rows, dtype=float)
    if arr.shape != (header["rows"], header["cols"]):
        raise PerceptionError(f"{path}: body shape {arr.shape} disagrees with header")
    if header.get("kind") == "mask":
        arr = arr.astype(bool)
    return header, arr
