"""Binary pattern codes, the riu2 mapping, and whole-image pattern maps.

A pattern code packs P threshold bits with bit p worth 2**p. Four component
codes are extracted per pixel:

  sign        bit p = 1 iff neighbor difference d_p >= 0
  magnitude   bit p = 1 iff |d_p| >= c_m, the image-wide mean |d| at radius R
  derivative  bit p = sign bit at radius R XOR sign bit at radius R-1
  center      1 iff the center intensity >= the whole-image mean

Sign, magnitude and derivative codes are folded to rotation-invariant
uniform bins: a code with at most 2 circular transitions maps to its
popcount, everything else to the shared bin P+1, giving P+2 bins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .image import GrayImage, save_pgm
from .sampler import NeighborhoodSample, make_geometry, plane_diffs, valid_region

_M1 = np.uint32(0x55555555)
_M2 = np.uint32(0x33333333)
_M4 = np.uint32(0x0F0F0F0F)


def _popcount_u32(codes: np.ndarray) -> np.ndarray:
    x = codes.astype(np.uint32, copy=True)
    x = x - ((x >> np.uint32(1)) & _M1)
    x = (x & _M2) + ((x >> np.uint32(2)) & _M2)
    x = (x + (x >> np.uint32(4))) & _M4
    x = x + (x >> np.uint32(8))
    x = x + (x >> np.uint32(16))
    return (x & np.uint32(0x3F)).astype(np.uint8)


def _check_code(bits: int, P: int) -> None:
    if int(P) != P or P < 1:
        raise ValueError(f"P must be a positive integer, got {P}")
    if not 0 <= bits < (1 << P):
        raise ValueError(f"code {bits} out of range for P={P}")


def transitions(bits: int, P: int) -> int:
    """Number of circular 0/1 transitions in a P-bit code."""
    _check_code(bits, P)
    mask = (1 << P) - 1
    rot = ((bits << 1) | (bits >> (P - 1))) & mask
    return int(bin(bits ^ rot).count("1"))


def riu2_bin(bits: int, P: int) -> int:
    """Rotation-invariant uniform bin: popcount if transitions <= 2, else P+1."""
    if transitions(bits, P) <= 2:
        return int(bin(bits).count("1"))
    return P + 1


class Riu2Mapper:
    """Maps P-bit codes to riu2 bins, by table lookup or direct arithmetic.

    The two strategies are interchangeable; 'lut' trades 2**P bytes of memory
    for speed and is the default up to P=16, 'direct' recomputes popcounts
    and transitions per call and works for any P up to 24.
    """

    def __init__(self, P: int, strategy: str | None = None):
        if int(P) != P or not 1 <= P <= 24:
            raise ValueError(f"P must be an integer in [1, 24], got {P}")
        if strategy is None:
            strategy = "lut" if P <= 16 else "direct"
        if strategy not in ("lut", "direct"):
            raise ValueError(f"unknown riu2 strategy {strategy!r}")
        self.P = int(P)
        self.strategy = strategy
        self.bins = self.P + 2
        self.table = self._build_table() if strategy == "lut" else None

    def _build_table(self) -> np.ndarray:
        n = 1 << self.P
        table = np.empty(n, dtype=np.uint8)
        chunk = min(n, 1 << 20)
        for start in range(0, n, chunk):
            codes = np.arange(start, min(start + chunk, n), dtype=np.uint32)
            table[start : start + codes.size] = self._direct(codes)
        return table

    def _direct(self, codes: np.ndarray) -> np.ndarray:
        P = np.uint32(self.P)
        mask = np.uint32((1 << self.P) - 1)
        c = codes.astype(np.uint32, copy=False)
        rot = ((c << np.uint32(1)) | (c >> (P - np.uint32(1)))) & mask
        trans = _popcount_u32(c ^ rot)
        ones = _popcount_u32(c)
        return np.where(trans <= 2, ones, np.uint8(self.P + 1)).astype(np.uint8)

    def map_code(self, bits: int) -> int:
        _check_code(bits, self.P)
        if self.table is not None:
            return int(self.table[bits])
        return riu2_bin(bits, self.P)

    def map_array(self, codes: np.ndarray) -> np.ndarray:
        codes = np.asarray(codes)
        if codes.size and int(codes.max()) >= (1 << self.P):
            raise ValueError(f"code out of range for P={self.P}")
        if self.table is not None:
            return self.table[codes]
        return self._direct(codes.astype(np.uint32))


def code_space_stats(P: int) -> dict:
    """Exhaustive statistics of the P-bit code space.

    Returns total code count, number of rotation equivalence classes
    (counted by Burnside over cyclic shifts), the riu2 bin count, how many
    codes are uniform, and the population of every riu2 bin.
    """
    if int(P) != P or not 4 <= P <= 24:
        raise ValueError(f"P must be an integer in [4, 24], got {P}")
    P = int(P)
    total = 1 << P
    mapper = Riu2Mapper(P, strategy="direct")
    populations = np.zeros(P + 2, dtype=np.int64)
    chunk = 1 << 20
    for start in range(0, total, chunk):
        codes = np.arange(start, min(start + chunk, total), dtype=np.uint32)
        populations += np.bincount(mapper.map_array(codes), minlength=P + 2)
    classes = 0
    for d in range(1, P + 1):
        if P % d == 0:
            phi = sum(1 for k in range(1, P // d + 1) if math.gcd(k, P // d) == 1)
            classes += phi * (1 << d)
    classes //= P
    uniform = int(total - populations[P + 1])
    return {
        "P": P,
        "total_codes": total,
        "rotation_classes": classes,
        "riu2_bins": P + 2,
        "uniform_codes": uniform,
        "bin_populations": [int(v) for v in populations],
    }


def _pack_bits(bits: np.ndarray) -> np.ndarray:
    """Pack a boolean (P, H, W) stack into uint32 codes, bit p = 2**p."""
    P = bits.shape[0]
    codes = np.zeros(bits.shape[1:], dtype=np.uint32)
    for p in range(P):
        codes |= bits[p].astype(np.uint32) << np.uint32(p)
    return codes


def encode_sign(sample: NeighborhoodSample) -> int:
    """Sign code of one neighborhood: bit p set iff diffs[p] >= 0."""
    bits = 0
    for p, d in enumerate(sample.diffs):
        if d >= 0.0:
            bits |= 1 << p
    return bits


def encode_magnitude(sample: NeighborhoodSample, c_m: float) -> int:
    """Magnitude code: bit p set iff |diffs[p]| >= c_m."""
    if not c_m >= 0.0:
        raise ValueError(f"magnitude threshold must be >= 0, got {c_m}")
    bits = 0
    for p, d in enumerate(sample.diffs):
        if abs(d) >= c_m:
            bits |= 1 << p
    return bits


def encode_derivative(outer: NeighborhoodSample, inner: NeighborhoodSample) -> int:
    """Radial derivative code: XOR of the two circles' sign bits per direction.

    Both samples must come from the same center with the same P; the result
    is symmetric in its arguments and zero when the signs agree everywhere.
    """
    if len(outer.diffs) != len(inner.diffs):
        raise ValueError(
            f"mismatched P: {len(outer.diffs)} vs {len(inner.diffs)}"
        )
    if outer.center != inner.center:
        raise ValueError("derivative needs both circles around the same center")
    bits = 0
    for p in range(len(outer.diffs)):
        if (outer.diffs[p] >= 0.0) != (inner.diffs[p] >= 0.0):
            bits |= 1 << p
    return bits


def encode_center(g_c: float, c_I: float) -> int:
    """Center bit: 1 iff the center intensity is >= the global threshold."""
    return 1 if g_c >= c_I else 0


def canonical_intensity(pixels: np.ndarray):
    """Map pixels affinely onto [0, 1] by their own min and max.

    Any img' = a*img + b with a > 0 canonicalizes to the same array, so the
    threshold decisions downstream are invariant under affine intensity
    changes by construction (bitwise, not approximately). A constant image
    maps to zeros.
    """
    lo = float(pixels.min())
    hi = float(pixels.max())
    if hi == lo:
        return np.zeros_like(pixels), lo, hi
    return (pixels - lo) / (hi - lo), lo, hi


@dataclass(frozen=True)
class PatternMaps:
    """Per-pixel riu2 maps over the valid region plus the thresholds used.

    sign/magnitude/derivative hold riu2 bins in [0, P+1], center holds the
    0/1 center bits. derivative is None when extraction was run without it.
    c_m and c_I are in canonical intensity units; intensity_lo/hi record the
    affine canonicalization applied before sampling.
    """

    P: int
    R: float
    region: tuple
    sign: np.ndarray
    magnitude: np.ndarray
    derivative: np.ndarray | None
    center: np.ndarray
    c_m: float
    c_I: float
    intensity_lo: float
    intensity_hi: float

    def component(self, name: str) -> np.ndarray:
        if name == "S":
            return self.sign
        if name == "M":
            return self.magnitude
        if name == "D":
            if self.derivative is None:
                raise ValueError("maps were extracted without the derivative component")
            return self.derivative
        if name == "C":
            return self.center
        raise ValueError(f"unknown component {name!r}")


def extract_maps(img: GrayImage, P: int, R: float,
                 mapper: Riu2Mapper | None = None,
                 derivative: bool = True) -> PatternMaps:
    """Extract sign/magnitude/derivative/center maps for the whole image.

    Thresholds come first: c_m is the mean |d| over every valid center and
    direction at the outer radius, c_I the mean canonical intensity over the
    whole image. The derivative compares sign bits at radii R and R-1 and
    requires R >= 2; pass derivative=False to skip it (needed for R < 2).
    """
    if derivative and not float(R) >= 2.0:
        raise ValueError(f"derivative component needs R >= 2, got R={R}")
    geom = make_geometry(P, R)
    x0, y0, x1, y1 = valid_region(img, R)
    margin = geom.margin

    canon, lo, hi = canonical_intensity(img.pixels)
    diffs, centers = plane_diffs(canon, geom, margin)
    c_m = float(np.mean(np.abs(diffs)))
    c_I = float(np.mean(canon))

    if mapper is None:
        mapper = Riu2Mapper(P)
    elif mapper.P != geom.P:
        raise ValueError(f"mapper P={mapper.P} does not match P={geom.P}")

    sign_bits = diffs >= 0.0
    sign = mapper.map_array(_pack_bits(sign_bits))
    magnitude = mapper.map_array(_pack_bits(np.abs(diffs) >= c_m))

    deriv = None
    if derivative:
        inner = make_geometry(P, R - 1.0)
        inner_diffs, _ = plane_diffs(canon, inner, margin)
        deriv = mapper.map_array(_pack_bits(sign_bits ^ (inner_diffs >= 0.0)))

    center = (centers >= c_I).astype(np.uint8)
    for arr in (sign, magnitude, deriv, center):
        if arr is not None:
            arr.flags.writeable = False
    return PatternMaps(
        P=geom.P, R=geom.R, region=(x0, y0, x1, y1),
        sign=sign, magnitude=magnitude, derivative=deriv, center=center,
        c_m=c_m, c_I=c_I, intensity_lo=lo, intensity_hi=hi,
    )


def export_map_pgm(maps: PatternMaps, component: str, path) -> None:
    """Write one map as a PGM diagnostic.

    riu2 bins are scaled by floor(255 / (P + 1)) so the full bin range spreads
    over [0, 255]; the 0/1 center map is scaled by 255.
    """
    arr = maps.component(component)
    scale = 255 if component == "C" else 255 // (maps.P + 1)
    save_pgm(GrayImage(arr.astype(np.float64) * float(scale)), path)
