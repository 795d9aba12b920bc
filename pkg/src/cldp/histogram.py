"""Fusion schemes and feature histograms.

A scheme names which pattern components are used and how they combine:
'_' concatenates independent groups, '/' joins components of one group into
a joint histogram. 'S_D_M/C' therefore means three blocks: the S histogram,
the D histogram, and the joint M-by-C histogram, laid out in written order.

Component bin widths are P+2 for S, M and D (the riu2 range) and 2 for C.
Joint bins are flattened row-major in written order, each group is
normalized to unit mass, and groups are concatenated.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .patterns import PatternMaps

COMPONENTS = "SMDC"
_PREFIXES = ("CLDP_", "CLBP_")

_MAGIC = b"CLDPH1"


class SchemeError(ValueError):
    """A scheme string violates the grammar; position is a 0-based index."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


@dataclass(frozen=True)
class SchemeExpr:
    """A parsed fusion scheme: a tuple of groups, each a tuple of components."""

    groups: tuple

    def __str__(self):
        return "_".join("/".join(group) for group in self.groups)

    @property
    def components(self):
        return tuple(c for group in self.groups for c in group)

    def uses(self, component: str) -> bool:
        return component in self.components


def parse_scheme(text: str) -> SchemeExpr:
    """Parse a scheme string such as 'S/M/D/C' or 'CLBP_S_M/C'.

    The optional CLDP_/CLBP_ prefix is stripped; a CLBP_ prefix forbids the
    derivative component. Each component may appear once overall, every
    group needs at least one component, and C cannot form a group on its
    own. Errors carry the offending position in the original string.
    """
    if not isinstance(text, str) or not text:
        raise SchemeError("empty scheme", 0)
    base = 0
    body = text
    forbid_d = False
    for prefix in _PREFIXES:
        if text.startswith(prefix):
            base = len(prefix)
            body = text[base:]
            forbid_d = prefix == "CLBP_"
            break
    if not body:
        raise SchemeError("scheme has a prefix but no components", base)

    groups = []
    group_starts = []
    current = []
    current_start = base
    seen = set()
    expect_component = True
    for i, ch in enumerate(body):
        pos = base + i
        if expect_component:
            if ch not in COMPONENTS:
                raise SchemeError(f"expected a component letter, got {ch!r}", pos)
            if ch in seen:
                raise SchemeError(f"component {ch!r} used twice", pos)
            if ch == "D" and forbid_d:
                raise SchemeError("CLBP_ schemes cannot use the D component", pos)
            if not current:
                current_start = pos
            seen.add(ch)
            current.append(ch)
            expect_component = False
        else:
            if ch == "/":
                expect_component = True
            elif ch == "_":
                groups.append(tuple(current))
                group_starts.append(current_start)
                current = []
                expect_component = True
            else:
                raise SchemeError(f"expected '/', '_' or end, got {ch!r}", pos)
    if expect_component:
        raise SchemeError("scheme ends with a dangling separator", base + len(body) - 1)
    groups.append(tuple(current))
    group_starts.append(current_start)
    for group, start in zip(groups, group_starts):
        if group == ("C",):
            raise SchemeError("C cannot stand alone as a group", start)
    return SchemeExpr(tuple(groups))


def component_bins(component: str, P: int) -> int:
    """Bin width of one component: P+2 for S/M/D, 2 for C."""
    if component == "C":
        return 2
    if component in COMPONENTS:
        return P + 2
    raise ValueError(f"unknown component {component!r}")


def group_dimension(group, P: int) -> int:
    dim = 1
    for comp in group:
        dim *= component_bins(comp, P)
    return dim


def scheme_dimension(scheme: SchemeExpr, P: int) -> int:
    """Total histogram length: the sum over groups of the product of widths."""
    return sum(group_dimension(g, P) for g in scheme.groups)


def bin_index(group, values, P: int) -> int:
    """Row-major joint index of one group's component values.

    values must align with the group's written order; each value is checked
    against its component's bin width.
    """
    if len(values) != len(group):
        raise ValueError(f"expected {len(group)} values for group {group}, got {len(values)}")
    idx = 0
    for comp, v in zip(group, values):
        b = component_bins(comp, P)
        v = int(v)
        if not 0 <= v < b:
            raise ValueError(f"value {v} out of range [0,{b}) for component {comp}")
        idx = idx * b + v
    return idx


@dataclass(frozen=True)
class FeatureHistogram:
    """A concatenated per-group histogram for one image.

    dims holds each group's length in order; bins is their concatenation.
    Normalized histograms carry unit mass per group, raw ones carry the
    valid-pixel count per group.
    """

    scheme: SchemeExpr
    P: int
    R: float
    bins: np.ndarray
    dims: tuple

    def __post_init__(self):
        if self.bins.shape != (sum(self.dims),):
            raise ValueError("histogram length does not match group dims")

    def group_slices(self):
        out = []
        start = 0
        for d in self.dims:
            out.append(slice(start, start + d))
            start += d
        return out


def build_histogram(maps: PatternMaps, scheme: SchemeExpr,
                    normalize: bool = True) -> FeatureHistogram:
    """Accumulate the scheme's histogram from pattern maps.

    Every valid pixel contributes exactly one count to each group; requesting
    D from maps extracted without the derivative is an error.
    """
    P = maps.P
    dims = tuple(group_dimension(g, P) for g in scheme.groups)
    parts = []
    for group in scheme.groups:
        idx = np.zeros(maps.sign.shape, dtype=np.int64)
        for comp in group:
            b = component_bins(comp, P)
            idx = idx * b + maps.component(comp).astype(np.int64)
        counts = np.bincount(idx.ravel(), minlength=group_dimension(group, P))
        counts = counts.astype(np.float64)
        if normalize:
            counts /= counts.sum()
        parts.append(counts)
    bins = np.concatenate(parts)
    bins.flags.writeable = False
    return FeatureHistogram(scheme=scheme, P=P, R=maps.R, bins=bins, dims=dims)


def format_histogram_csv_row(path: str, label: int, hist: FeatureHistogram) -> str:
    """One CSV line: path,label,scheme,P,R,b_0,...,b_{N-1} at 17 significant digits."""
    head = f"{path},{label},{hist.scheme},{hist.P},{hist.R:.17g}"
    body = ",".join(f"{v:.17g}" for v in hist.bins)
    return f"{head},{body}"


def write_histograms_csv(rows, path) -> None:
    """Write (path, label, FeatureHistogram) rows as CSV, one line per image."""
    with open(path, "w", encoding="ascii") as fh:
        for sample_path, label, hist in rows:
            fh.write(format_histogram_csv_row(sample_path, label, hist))
            fh.write("\n")


def histogram_to_bytes(hist: FeatureHistogram) -> bytes:
    """Serialize to the compact binary form.

    Layout: magic 'CLDPH1', then little-endian u32 fields P, R, group count
    and the per-group dims, then the bins as little-endian float64. R must be
    integral to fit the fixed-width header.
    """
    if not float(hist.R).is_integer():
        raise ValueError(f"binary histogram header stores R as u32; R={hist.R} is not integral")
    header = struct.pack(
        f"<III{len(hist.dims)}I",
        hist.P, int(hist.R), len(hist.dims), *hist.dims,
    )
    return _MAGIC + header + hist.bins.astype("<f8").tobytes()


def histogram_from_bytes(data: bytes, scheme: SchemeExpr) -> FeatureHistogram:
    """Parse the binary form back into a FeatureHistogram.

    Component identity is not stored in the file (only group widths), so the
    caller supplies the scheme and the stored dims are validated against it.
    """
    if data[: len(_MAGIC)] != _MAGIC:
        raise ValueError(f"bad histogram magic {data[:len(_MAGIC)]!r}")
    off = len(_MAGIC)
    if len(data) < off + 12:
        raise ValueError("truncated histogram header")
    P, R, ngroups = struct.unpack_from("<III", data, off)
    off += 12
    if len(data) < off + 4 * ngroups:
        raise ValueError("truncated histogram group dims")
    dims = struct.unpack_from(f"<{ngroups}I", data, off)
    off += 4 * ngroups
    total = sum(dims)
    if len(data) != off + 8 * total:
        raise ValueError(
            f"histogram payload length {len(data) - off} does not match dims {dims}"
        )
    expect = tuple(group_dimension(g, P) for g in scheme.groups)
    if expect != tuple(dims):
        raise ValueError(f"dims {tuple(dims)} do not match scheme {scheme} at P={P}")
    bins = np.frombuffer(data, dtype="<f8", count=total, offset=off).copy()
    bins.flags.writeable = False
    return FeatureHistogram(scheme=scheme, P=int(P), R=float(R), bins=bins, dims=tuple(dims))


def write_histogram_binary(hist: FeatureHistogram, path) -> None:
    with open(path, "wb") as fh:
        fh.write(histogram_to_bytes(hist))


def read_histogram_binary(path, scheme: SchemeExpr) -> FeatureHistogram:
    with open(path, "rb") as fh:
        return histogram_from_bytes(fh.read(), scheme)
