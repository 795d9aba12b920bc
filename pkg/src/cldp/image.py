"""Grayscale raster I/O, dataset manifests, and whole-image statistics.

Images are promoted to float64 at load time so that every downstream
interpolation and threshold comparison runs in real arithmetic.
"""

from __future__ import annotations

import math
import os

import numpy as np


class FormatError(ValueError):
    """A raster file violates the expected binary layout."""


class ManifestError(ValueError):
    """A sample manifest cannot be parsed or resolved."""


class GrayImage:
    """A 2-D grayscale raster.

    Pixel data is stored row-major as a read-only float64 array; values are
    not required to be integral or bounded, which keeps synthetic and
    intensity-transformed images first-class citizens.
    """

    __slots__ = ("pixels",)

    def __init__(self, pixels):
        arr = np.ascontiguousarray(pixels, dtype=np.float64)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError("GrayImage needs a non-empty 2-D array")
        if not np.isfinite(arr).all():
            raise ValueError("GrayImage pixels must be finite")
        arr.flags.writeable = False
        self.pixels = arr

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def __repr__(self):
        return f"GrayImage({self.width}x{self.height})"


def _token(data: bytes, pos: int):
    """Next whitespace-delimited header token, tolerating '#' comments."""
    n = len(data)
    while pos < n:
        c = data[pos]
        if c in b"#":
            while pos < n and data[pos] not in b"\r\n":
                pos += 1
        elif c in b" \t\r\n\x0b\x0c":
            pos += 1
        else:
            break
    if pos >= n:
        raise FormatError(f"unexpected end of header at byte {n}")
    start = pos
    while pos < n and data[pos] not in b" \t\r\n\x0b\x0c":
        pos += 1
    return data[start:pos], pos


def _header_int(data: bytes, pos: int, what: str):
    tok, end = _token(data, pos)
    try:
        value = int(tok)
    except ValueError:
        raise FormatError(
            f"bad {what} {tok!r} at byte {end - len(tok)}"
        ) from None
    return value, end


def load_pgm(path) -> GrayImage:
    """Read a binary (P5) 8-bit PGM file.

    Header whitespace and '#' comments are tolerated; malformed or truncated
    files raise FormatError naming the offending byte offset.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] != b"P5":
        raise FormatError(f"not a P5 PGM (magic {data[:2]!r} at byte 0)")
    width, pos = _header_int(data, 2, "width")
    height, pos = _header_int(data, pos, "height")
    maxval, pos = _header_int(data, pos, "maxval")
    if width < 1 or height < 1:
        raise FormatError(f"bad dimensions {width}x{height}")
    if not 1 <= maxval <= 255:
        raise FormatError(f"unsupported maxval {maxval} (8-bit only)")
    pos += 1  # exactly one whitespace byte separates header and raster
    need = width * height
    raster = data[pos : pos + need]
    if len(raster) < need:
        raise FormatError(
            f"truncated raster: expected {need} bytes from byte {pos}, "
            f"file ends at byte {len(data)}"
        )
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(height, width)
    return GrayImage(arr)


def save_pgm(img: GrayImage, path) -> None:
    """Write a canonical P5 PGM (header 'P5\\n<w> <h>\\n255\\n').

    Pixels are clipped to [0, 255] and rounded half up, so an image that came
    from load_pgm round-trips byte-exactly.
    """
    px = np.clip(np.floor(img.pixels + 0.5), 0.0, 255.0).astype(np.uint8)
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(px.tobytes())


def _u16(data, off):
    return int.from_bytes(data[off : off + 2], "little")


def _u32(data, off):
    return int.from_bytes(data[off : off + 4], "little")


def _i32(data, off):
    return int.from_bytes(data[off : off + 4], "little", signed=True)


def load_bmp8(path) -> GrayImage:
    """Read an uncompressed 8-bit palettized BMP.

    The palette is collapsed to gray: entries with equal channels use that
    value directly (this covers identity gray ramps), anything else goes
    through the usual luma weights 0.299/0.587/0.114 rounded half up.
    Bottom-up files are flipped to the top-left origin used everywhere else.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] != b"BM":
        raise FormatError(f"not a BMP (magic {data[:2]!r} at byte 0)")
    if len(data) < 54:
        raise FormatError(f"truncated BMP header: {len(data)} bytes")
    pix_off = _u32(data, 10)
    hdr_size = _u32(data, 14)
    if hdr_size < 40:
        raise FormatError(f"unsupported DIB header size {hdr_size}")
    width = _i32(data, 18)
    height = _i32(data, 22)
    bits = _u16(data, 28)
    compression = _u32(data, 30)
    clr_used = _u32(data, 46)
    if bits != 8:
        raise FormatError(f"unsupported bit depth {bits} (8-bit palette only)")
    if compression != 0:
        raise FormatError(f"unsupported compression mode {compression}")
    if width < 1 or height == 0:
        raise FormatError(f"bad dimensions {width}x{height}")
    flipped = height > 0
    height = abs(height)

    n_entries = clr_used if clr_used else 256
    pal_off = 14 + hdr_size
    if pal_off + 4 * n_entries > len(data):
        raise FormatError(f"truncated palette at byte {pal_off}")
    gray = np.zeros(256, dtype=np.uint8)
    for i in range(n_entries):
        b, g, r = data[pal_off + 4 * i : pal_off + 4 * i + 3]
        if r == g == b:
            gray[i] = r
        else:
            gray[i] = int(math.floor(0.299 * r + 0.587 * g + 0.114 * b + 0.5))

    stride = (width + 3) & ~3
    need = stride * height
    raster = data[pix_off : pix_off + need]
    if len(raster) < need:
        raise FormatError(
            f"truncated raster: expected {need} bytes from byte {pix_off}, "
            f"file ends at byte {len(data)}"
        )
    rows = np.frombuffer(raster, dtype=np.uint8).reshape(height, stride)
    idx = rows[:, :width]
    if flipped:
        idx = idx[::-1]
    return GrayImage(gray[idx])


def load_image(path) -> GrayImage:
    """Dispatch on extension: .pgm/.pnm go to the PGM reader, .bmp to BMP."""
    ext = os.path.splitext(str(path))[1].lower()
    if ext in (".pgm", ".pnm"):
        return load_pgm(path)
    if ext == ".bmp":
        return load_bmp8(path)
    raise FormatError(f"unsupported image extension {ext!r} for {path}")


def image_mean(img: GrayImage) -> float:
    """Mean intensity over every pixel of the image."""
    return float(np.mean(img.pixels))


def normalize_image(img: GrayImage, mean: float = 128.0, std: float = 20.0) -> GrayImage:
    """Affinely shift the image to a target mean and standard deviation.

    A constant image has no spread to rescale and is returned unchanged.
    Output stays real-valued; nothing is clipped or requantized.
    """
    mu = float(np.mean(img.pixels))
    sigma = float(np.std(img.pixels))
    if sigma == 0.0:
        return GrayImage(img.pixels)
    return GrayImage((img.pixels - mu) * (std / sigma) + mean)


class Manifest:
    """An ordered list of (relative path, label) pairs under a root directory."""

    __slots__ = ("root", "entries", "source")

    def __init__(self, root, entries, source="native-csv"):
        self.root = str(root)
        self.entries = tuple((str(p), int(l)) for p, l in entries)
        self.source = source
        seen = set()
        for p, label in self.entries:
            if label < 0:
                raise ManifestError(f"negative label {label} for {p}")
            if p in seen:
                raise ManifestError(f"duplicate sample path {p}")
            seen.add(p)

    def __len__(self):
        return len(self.entries)

    def labels(self):
        return sorted({label for _, label in self.entries})

    def abs_path(self, rel: str) -> str:
        return os.path.join(self.root, rel)


def _resolve_entry(root: str, rel: str, lineno: int, path) -> str:
    """Resolve a manifest entry, falling back to sibling .pgm/.bmp files.

    Outex index files reference the original .ras rasters; a converted copy
    keeps the index untouched and stores .pgm/.bmp next to them.
    """
    cand = os.path.join(root, rel)
    if os.path.isfile(cand):
        return rel
    stem = os.path.splitext(rel)[0]
    for ext in (".pgm", ".bmp"):
        alt = stem + ext
        if os.path.isfile(os.path.join(root, alt)):
            return alt
    raise ManifestError(f"{path}:{lineno}: cannot resolve sample {rel!r} under {root}")


def load_manifest(path, root, fmt: str = "native-csv") -> Manifest:
    """Parse a sample manifest.

    Formats:
      native-csv   one 'relative/path,label' per line, no header
      outex-index  optional leading count line, then 'name label' per line

    Every accepted line yields exactly one entry, order is preserved, and
    each path must resolve to a file under root (with the .ras fallback
    described in _resolve_entry). Errors cite the 1-based line number.
    """
    if fmt not in ("native-csv", "outex-index"):
        raise ManifestError(f"unknown manifest format {fmt!r}")
    root = str(root)
    entries = []
    declared = None
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        if fmt == "native-csv":
            if "," not in line:
                raise ManifestError(f"{path}:{lineno}: expected 'path,label'")
            rel, _, label_text = line.rpartition(",")
            rel = rel.strip()
        else:
            parts = line.split()
            if len(parts) == 1 and lineno == 1 and not entries:
                try:
                    declared = int(parts[0])
                except ValueError:
                    raise ManifestError(
                        f"{path}:{lineno}: bad count line {line!r}"
                    ) from None
                continue
            if len(parts) != 2:
                raise ManifestError(f"{path}:{lineno}: expected 'name label'")
            rel, label_text = parts
        try:
            label = int(label_text)
        except ValueError:
            raise ManifestError(
                f"{path}:{lineno}: bad label {label_text!r}"
            ) from None
        if label < 0:
            raise ManifestError(f"{path}:{lineno}: negative label {label}")
        rel = _resolve_entry(root, rel, lineno, path)
        entries.append((rel, label))
    if declared is not None and declared != len(entries):
        raise ManifestError(
            f"{path}: declared {declared} samples but parsed {len(entries)}"
        )
    if not entries:
        raise ManifestError(f"{path}: empty manifest")
    return Manifest(root, entries, source=fmt)
