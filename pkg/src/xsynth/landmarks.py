"""Facial landmark sets and their plain-text file format.

A landmark file holds one ``u v`` pair per line (row coordinate first),
real-valued; the line count is the landmark count.  Detection itself is out
of scope: coordinates are always read from files.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError


@dataclass(frozen=True)
class LandmarkSet:
    """Ordered list of (u, v) points, u = row, v = column."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64, order="C")
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 1:
            raise InvalidParameterError(
                f"landmarks must be an (n, 2) array with n >= 1, got {pts.shape}"
            )
        if not np.all(np.isfinite(pts)):
            raise InvalidParameterError("landmark coordinates must be finite")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    @property
    def count(self) -> int:
        return self.points.shape[0]


def read_landmarks(path: str) -> LandmarkSet:
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise InvalidParameterError(f"{path}:{lineno}: expected 'u v'")
            rows.append((float(parts[0]), float(parts[1])))
    return LandmarkSet(np.array(rows))


def write_landmarks(path: str, landmarks: LandmarkSet) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for u, v in landmarks.points:
            fh.write(f"{u!r} {v!r}\n")
