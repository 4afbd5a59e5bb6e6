"""Rectangular regions of interest and per-pixel gradient-blending weights.

A region is a bounding box ``(x, y, w, h)`` in the upper-left-x,
upper-left-y, width, height convention, plus a blending weight for gradients
computed locally inside it.  A :class:`RegionSet` partitions every pixel's
unit weight between the local region covering it (if any) and the global
full-image region, so the fields always sum to one per pixel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatchError,
    InvalidParameterError,
    OutOfBoundsError,
    OverlappingRegionsError,
)
from .imaging import GrayImage

GLOBAL_REGION_ID = "global"


@dataclass(frozen=True)
class Region:
    """Labelled bounding box with a local gradient weight in [0, 1]."""

    id: str
    x: int
    y: int
    w: int
    h: int
    local_weight: float = 1.0

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise InvalidParameterError(f"region {self.id!r}: empty bbox")
        if not 0.0 <= self.local_weight <= 1.0:
            raise InvalidParameterError(
                f"region {self.id!r}: local_weight {self.local_weight} outside [0,1]"
            )

    @property
    def bbox(self) -> tuple[int, int, int, int]:
        return (self.x, self.y, self.w, self.h)

    def contains(self, other: "Region") -> bool:
        return (self.x <= other.x and self.y <= other.y
                and other.x + other.w <= self.x + self.w
                and other.y + other.h <= self.y + self.h)

    def overlaps(self, other: "Region") -> bool:
        return not (self.x + self.w <= other.x or other.x + other.w <= self.x
                    or self.y + self.h <= other.y or other.y + other.h <= self.y)

    def check_inside(self, height: int, width: int) -> None:
        if self.x < 0 or self.y < 0 or self.x + self.w > width or self.y + self.h > height:
            raise OutOfBoundsError(
                f"region {self.id!r} bbox {self.bbox} exceeds {height}x{width} image"
            )


def crop_region(img: GrayImage, r: Region) -> GrayImage:
    """Pure copy of the ``r.h x r.w`` sub-image; no resampling."""
    r.check_inside(img.height, img.width)
    return GrayImage(img.data[r.y:r.y + r.h, r.x:r.x + r.w].copy())


def paste_region(canvas: np.ndarray, r: Region, patch: np.ndarray) -> None:
    """Add ``patch`` into ``canvas`` at the region's position (in place)."""
    if patch.shape != (r.h, r.w):
        raise DimensionMismatchError(
            f"patch {patch.shape} does not match region {r.id!r} bbox {r.bbox}"
        )
    canvas[r.y:r.y + r.h, r.x:r.x + r.w] += patch


class RegionSet:
    """Global region plus disjoint local regions with per-pixel weight fields.

    ``weight_fields[region_id]`` is an (h, w) float array; at every pixel the
    fields sum to exactly 1.  The standard construction
    (:func:`build_weight_fields`) gives each local region its ``local_weight``
    inside its own bbox and zero elsewhere, with the global region absorbing
    the remainder.  Custom fields (e.g. constants) may be supplied directly;
    they are validated against the same partition invariant.
    """

    def __init__(self, global_region: Region, locals_: list[Region],
                 weight_fields: dict[str, np.ndarray]):
        height, width = global_region.h, global_region.w
        if global_region.x != 0 or global_region.y != 0:
            raise InvalidParameterError("global region must cover the full image")
        ids = [global_region.id] + [r.id for r in locals_]
        if len(set(ids)) != len(ids):
            raise InvalidParameterError("duplicate region ids")
        for r in locals_:
            r.check_inside(height, width)
        for i, a in enumerate(locals_):
            for b in locals_[i + 1:]:
                if a.overlaps(b):
                    raise OverlappingRegionsError(
                        f"regions {a.id!r} and {b.id!r} overlap"
                    )
        if set(weight_fields) != set(ids):
            raise InvalidParameterError("need exactly one weight field per region")
        total = np.zeros((height, width))
        for rid in ids:
            f = np.asarray(weight_fields[rid], dtype=np.float64)
            if f.shape != (height, width):
                raise DimensionMismatchError(
                    f"weight field for {rid!r} has shape {f.shape}, "
                    f"expected {(height, width)}"
                )
            if f.min() < 0.0 or f.max() > 1.0:
                raise InvalidParameterError(f"weight field {rid!r} outside [0,1]")
            total += f
        if not np.allclose(total, 1.0, rtol=0.0, atol=1e-12):
            raise InvalidParameterError("weight fields must sum to 1 at every pixel")

        self.global_region = global_region
        self.locals = tuple(locals_)
        self.weight_fields = {
            rid: np.array(weight_fields[rid], dtype=np.float64, order="C")
            for rid in ids
        }
        for f in self.weight_fields.values():
            f.flags.writeable = False

    @property
    def regions(self) -> tuple[Region, ...]:
        return (self.global_region,) + self.locals

    @property
    def height(self) -> int:
        return self.global_region.h

    @property
    def width(self) -> int:
        return self.global_region.w

    def mean_weight(self, region_id: str) -> float:
        """Mean of the region's weight field over its support (field > 0)."""
        f = self.weight_fields[region_id]
        support = f > 0.0
        if not support.any():
            return 0.0
        return float(f[support].mean())


def build_weight_fields(image_dims: tuple[int, int],
                        locals_: list[Region]) -> RegionSet:
    """Standard weight partition: each local region gets its ``local_weight``
    inside its bbox and 0 outside; the global field is 1 minus the local sum,
    so the per-pixel total is exactly 1."""
    height, width = image_dims
    global_region = Region(GLOBAL_REGION_ID, 0, 0, width, height, local_weight=1.0)
    fields: dict[str, np.ndarray] = {}
    global_field = np.ones((height, width))
    for r in locals_:
        r.check_inside(height, width)
        f = np.zeros((height, width))
        f[r.y:r.y + r.h, r.x:r.x + r.w] = r.local_weight
        fields[r.id] = f
        global_field[r.y:r.y + r.h, r.x:r.x + r.w] = 1.0 - r.local_weight
    fields[GLOBAL_REGION_ID] = global_field
    return RegionSet(global_region, list(locals_), fields)


# --------------------------------------------------------------------------
# region files: one region per line, "id x y w h local_weight"
# --------------------------------------------------------------------------

def read_regions_file(path: str) -> list[Region]:
    regions: list[Region] = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 6:
                raise InvalidParameterError(
                    f"{path}:{lineno}: expected 'id x y w h local_weight'"
                )
            rid, *nums = parts
            try:
                x, y, w, h = (int(n) for n in nums[:4])
                lw = float(nums[4])
            except ValueError:
                raise InvalidParameterError(
                    f"{path}:{lineno}: malformed region line"
                ) from None
            regions.append(Region(rid, x, y, w, h, lw))
    return regions


def write_regions_file(path: str, regions: list[Region]) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for r in regions:
            fh.write(f"{r.id} {r.x} {r.y} {r.w} {r.h} {r.local_weight}\n")
