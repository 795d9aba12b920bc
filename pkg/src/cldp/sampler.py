"""Circular neighborhood sampling with bilinear interpolation.

Neighbor p of P sits at displacement (dx, dy) = (-R*sin(2*pi*p/P),
R*cos(2*pi*p/P)) from the center, counter-clockwise, in a coordinate frame
with x growing right and y growing down from the top-left pixel.

Two details matter for the exact invariances promised by the pattern layer:

* When P is a multiple of 4, only the first quadrant of offsets is computed
  with trig; the rest are exact 90-degree rotations whose interpolation
  weights are permuted copies of the originals, bit for bit.
* The four bilinear terms are accumulated in the fixed pair order
  (w00*d00 + w11*d11) + (w01*d01 + w10*d10). The corner pairs {00,11} and
  {01,10} swap as sets under a quarter turn, so float addition being
  commutative makes the interpolated difference of a rotated image equal the
  original exactly, not just approximately.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SNAP_TOL = 1e-6


@dataclass(frozen=True)
class NeighborOffset:
    """One sampling tap: displacement, the 2x2 tap corners, and weights.

    Weight naming is w<yx>: w01 belongs to tap (x1, y0), w10 to (x0, y1).
    Snapped axes collapse (x0 == x1 or y0 == y1) and park weight 0 on the
    duplicate corner so tap coordinates never leave the ceil(R) margin.
    """

    dx: float
    dy: float
    x0: int
    y0: int
    x1: int
    y1: int
    w00: float
    w01: float
    w10: float
    w11: float

    def taps(self):
        return (
            (self.x0, self.y0, self.w00),
            (self.x1, self.y0, self.w01),
            (self.x0, self.y1, self.w10),
            (self.x1, self.y1, self.w11),
        )


@dataclass(frozen=True)
class SamplingGeometry:
    P: int
    R: float
    offsets: tuple

    @property
    def margin(self) -> int:
        return int(math.ceil(self.R))


@dataclass(frozen=True)
class NeighborhoodSample:
    """Sampled values around one center: diffs[p] == neighbors[p] - center."""

    center: float
    neighbors: np.ndarray
    diffs: np.ndarray


def _axis_taps(coord: float):
    nearest = round(coord)
    if abs(coord - nearest) <= SNAP_TOL:
        snapped = int(nearest)
        return snapped, snapped, 0.0
    lo = math.floor(coord)
    return int(lo), int(lo) + 1, coord - lo


def _offset_for(dx: float, dy: float) -> NeighborOffset:
    x0, x1, tx = _axis_taps(dx)
    y0, y1, ty = _axis_taps(dy)
    ux = 1.0 - tx
    uy = 1.0 - ty
    return NeighborOffset(
        dx, dy, x0, y0, x1, y1,
        w00=ux * uy, w01=tx * uy, w10=ux * ty, w11=tx * ty,
    )


def _rotated(o: NeighborOffset) -> NeighborOffset:
    """Quarter turn counter-clockwise in image coordinates: (dx,dy) -> (-dy,dx).

    Tap corners cycle 00 -> 01 -> 11 -> 10, so the new weights are copies of
    the old ones rather than recomputed products; this keeps them bitwise
    identical, which the rotation-invariance guarantee depends on.
    """
    return NeighborOffset(
        dx=-o.dy, dy=o.dx,
        x0=-o.y1, y0=o.x0, x1=-o.y0, y1=o.x1,
        w00=o.w10, w01=o.w00, w10=o.w11, w11=o.w01,
    )


def make_geometry(P: int, R: float) -> SamplingGeometry:
    """Build the P sampling offsets for radius R.

    P must be an integer >= 4 and R a real >= 1. Displacements within
    SNAP_TOL of an integer snap to a single tap with weight 1.
    """
    if int(P) != P or P < 4:
        raise ValueError(f"P must be an integer >= 4, got {P}")
    P = int(P)
    R = float(R)
    if not R >= 1.0:
        raise ValueError(f"R must be >= 1, got {R}")
    if P % 4 == 0:
        q = P // 4
        offsets = [
            _offset_for(-R * math.sin(2.0 * math.pi * p / P),
                        R * math.cos(2.0 * math.pi * p / P))
            for p in range(q)
        ]
        for _ in range(3):
            offsets.extend(_rotated(o) for o in offsets[-q:])
    else:
        offsets = [
            _offset_for(-R * math.sin(2.0 * math.pi * p / P),
                        R * math.cos(2.0 * math.pi * p / P))
            for p in range(P)
        ]
    return SamplingGeometry(P, R, tuple(offsets))


def valid_region(img, R: float):
    """Inclusive (x0, y0, x1, y1) bounds of centers whose taps stay in-bounds.

    The margin is ceil(R) on every side; an image too small to contain a
    single center is an error.
    """
    m = int(math.ceil(float(R)))
    x1 = img.width - 1 - m
    y1 = img.height - 1 - m
    if x1 < m or y1 < m:
        raise ValueError(
            f"image {img.width}x{img.height} has no valid centers at R={R}"
        )
    return (m, m, x1, y1)


def sample_at(img, geom: SamplingGeometry, x: int, y: int) -> NeighborhoodSample:
    """Sample the P neighbors around center (x, y).

    The center must lie inside the valid region for geom.R. Differences are
    interpolated directly from tap-minus-center values, so flat patches give
    exact zeros and adding an integer constant to the image leaves diffs
    bitwise unchanged.
    """
    m = geom.margin
    if not (m <= x < img.width - m and m <= y < img.height - m):
        raise ValueError(
            f"center ({x},{y}) outside valid region of "
            f"{img.width}x{img.height} image at R={geom.R}"
        )
    px = img.pixels
    c = px[y, x]
    diffs = np.empty(geom.P, dtype=np.float64)
    for p, o in enumerate(geom.offsets):
        d00 = px[y + o.y0, x + o.x0] - c
        d01 = px[y + o.y0, x + o.x1] - c
        d10 = px[y + o.y1, x + o.x0] - c
        d11 = px[y + o.y1, x + o.x1] - c
        diffs[p] = (o.w00 * d00 + o.w11 * d11) + (o.w01 * d01 + o.w10 * d10)
    neighbors = c + diffs
    return NeighborhoodSample(center=float(c), neighbors=neighbors, diffs=diffs)


def plane_diffs(pixels: np.ndarray, geom: SamplingGeometry, margin: int):
    """Vectorized twin of sample_at over the whole valid region.

    Returns (diffs, centers) where diffs has shape (P, Hv, Wv). The margin is
    passed in (instead of derived from geom) so an inner circle can be sampled
    over the valid region of the outer one. Term order matches sample_at
    exactly, which keeps scalar and vectorized paths bit-identical.
    """
    h, w = pixels.shape
    hv = h - 2 * margin
    wv = w - 2 * margin
    if hv < 1 or wv < 1:
        raise ValueError(f"image {w}x{h} has no valid centers at margin {margin}")
    c = pixels[margin : margin + hv, margin : margin + wv]
    diffs = np.empty((geom.P, hv, wv), dtype=np.float64)
    for p, o in enumerate(geom.offsets):
        d00 = pixels[margin + o.y0 : margin + o.y0 + hv,
                     margin + o.x0 : margin + o.x0 + wv] - c
        d01 = pixels[margin + o.y0 : margin + o.y0 + hv,
                     margin + o.x1 : margin + o.x1 + wv] - c
        d10 = pixels[margin + o.y1 : margin + o.y1 + hv,
                     margin + o.x0 : margin + o.x0 + wv] - c
        d11 = pixels[margin + o.y1 : margin + o.y1 + hv,
                     margin + o.x1 : margin + o.x1 + wv] - c
        diffs[p] = (o.w00 * d00 + o.w11 * d11) + (o.w01 * d01 + o.w10 * d10)
    return diffs, c
