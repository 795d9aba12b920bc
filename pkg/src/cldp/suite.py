"""Experiment suites: dataset protocol, feature cache, and the result matrix.

A suite is a (train manifest, test manifest) pair sharing one label set,
typically one Outex test problem. A matrix crosses schemes x geometries x
suites and aggregates accuracies the way the rotation-invariance benchmark
tables do: AVG3 over the canonical three-suite set and AVG2-TC12 over the
two TC12 illuminant suites.

Features are cached on disk keyed by image content hash, so reruns and
scheme sweeps never decode or resample an image twice:

  <cache>/<key[:2]>/<key>.maps   pattern maps per (image, P, R)
  <cache>/<key[:2]>/<key>.hist   histogram per (image, P, R, scheme)

Cache entries embed a digest (maps) or a fully validated header (hist);
corruption is a hard error naming the sample rather than a silent recompute.
"""

from __future__ import annotations

import hashlib
import math
import os
import re
import struct
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .classifier import EvalReport, ModelSet, evaluate
from .histogram import (
    FeatureHistogram,
    SchemeExpr,
    build_histogram,
    histogram_from_bytes,
    histogram_to_bytes,
    parse_scheme,
)
from .image import GrayImage, Manifest, load_image, load_manifest, normalize_image, save_pgm
from .patterns import PatternMaps, Riu2Mapper, extract_maps

_MAPS_MAGIC = b"CLDPM1"


class SuiteError(RuntimeError):
    """A suite run failed (bad sample, impossible configuration, ...)."""


class DatasetError(SuiteError):
    """A suite's dataset is absent or incomplete on this machine."""


class CacheError(RuntimeError):
    """A cache entry exists but cannot be trusted."""


class ConfigError(ValueError):
    """A suite or matrix config file cannot be parsed."""


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temp file plus rename so readers never see partial output."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


class SuiteSpec:
    """A named train/test pair; both manifests must cover the same labels."""

    __slots__ = ("name", "train", "test", "expected")

    def __init__(self, name: str, train: Manifest, test: Manifest, expected=None):
        if not name:
            raise ValueError("suite needs a name")
        if train.labels() != test.labels():
            raise ValueError(
                f"suite {name}: train labels {train.labels()} != test labels {test.labels()}"
            )
        if expected is not None:
            want_train, want_test = expected
            if want_train is not None and len(train) != want_train:
                raise ValueError(
                    f"suite {name}: expected {want_train} training samples, found {len(train)}"
                )
            if want_test is not None and len(test) != want_test:
                raise ValueError(
                    f"suite {name}: expected {want_test} test samples, found {len(test)}"
                )
        self.name = name
        self.train = train
        self.test = test
        self.expected = expected


def _parse_kv_file(path) -> dict:
    """Parse a flat 'key = value' config file with '#' comments."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if not key:
                raise ConfigError(f"{path}:{lineno}: empty key")
            if key in values:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            values[key] = value
    return values


def _resolve_config_path(value: str, config_dir: str) -> str:
    expanded = os.path.expanduser(os.path.expandvars(value))
    if not os.path.isabs(expanded):
        expanded = os.path.join(config_dir, expanded)
    return expanded


def load_suite_config(path) -> SuiteSpec:
    """Load a suite definition file.

    Keys: name, root, train_manifest, test_manifest, optional format
    (native-csv or outex-index), optional expected_train/expected_test
    counts. Relative paths resolve against the config file; environment
    variables in paths are expanded.
    """
    values = _parse_kv_file(path)
    config_dir = os.path.dirname(os.path.abspath(path))
    for key in ("name", "root", "train_manifest", "test_manifest"):
        if key not in values:
            raise ConfigError(f"{path}: missing required key {key!r}")
    fmt = values.get("format", "native-csv")
    root = _resolve_config_path(values["root"], config_dir)
    dataset_help = (
        "For the Outex suites, download the TC10/TC12 archives, unpack them, "
        "convert the .ras rasters to 8-bit PGM (for example: "
        "mogrify -format pgm images/*.ras), and point root (or the OUTEX_ROOT "
        "environment variable) at the result."
    )
    if not os.path.isdir(root):
        raise DatasetError(f"{path}: image root {root} does not exist. {dataset_help}")
    expected = None
    if "expected_train" in values or "expected_test" in values:
        def _count(key):
            if key not in values:
                return None
            try:
                return int(values[key])
            except ValueError:
                raise ConfigError(f"{path}: bad integer for {key!r}") from None
        expected = (_count("expected_train"), _count("expected_test"))
    try:
        train = load_manifest(_resolve_config_path(values["train_manifest"], config_dir), root, fmt)
        test = load_manifest(_resolve_config_path(values["test_manifest"], config_dir), root, fmt)
    except OSError as err:
        raise DatasetError(f"{path}: cannot read manifest: {err}. {dataset_help}") from None
    return SuiteSpec(values["name"], train, test, expected)


_mappers: dict = {}


def _shared_mapper(P: int) -> Riu2Mapper:
    # LUT construction for P=24 is ~16 MB; build each table once per process.
    mapper = _mappers.get(P)
    if mapper is None:
        mapper = _mappers.setdefault(P, Riu2Mapper(P))
    return mapper


def _maps_to_bytes(maps: PatternMaps) -> bytes:
    flags = 1 if maps.derivative is not None else 0
    h, w = maps.sign.shape
    header = _MAPS_MAGIC + struct.pack(
        "<IdB4I4dII",
        maps.P, maps.R, flags, *maps.region,
        maps.c_m, maps.c_I, maps.intensity_lo, maps.intensity_hi,
        h, w,
    )
    planes = [maps.sign.tobytes(), maps.magnitude.tobytes()]
    if maps.derivative is not None:
        planes.append(maps.derivative.tobytes())
    planes.append(maps.center.tobytes())
    payload = header + b"".join(planes)
    return payload + hashlib.sha256(payload).digest()


def _maps_from_bytes(data: bytes, P: int, R: float) -> PatternMaps:
    if data[: len(_MAPS_MAGIC)] != _MAPS_MAGIC:
        raise CacheError("bad maps magic")
    if len(data) < 32:
        raise CacheError("truncated maps entry")
    payload, digest = data[:-32], data[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise CacheError("maps digest mismatch")
    off = len(_MAPS_MAGIC)
    fields = struct.unpack_from("<IdB4I4dII", payload, off)
    off += struct.calcsize("<IdB4I4dII")
    (got_p, got_r, flags, x0, y0, x1, y1, c_m, c_I, lo, hi, h, w) = fields
    if got_p != P or got_r != R:
        raise CacheError(f"maps entry is for P={got_p}, R={got_r}")
    n = h * w
    n_planes = 3 + (flags & 1)
    if len(payload) != off + n_planes * n:
        raise CacheError("maps payload length mismatch")

    def plane(i):
        arr = np.frombuffer(payload, dtype=np.uint8, count=n, offset=off + i * n)
        arr = arr.reshape(h, w)
        arr.flags.writeable = False
        return arr

    sign = plane(0)
    magnitude = plane(1)
    deriv = plane(2) if flags & 1 else None
    center = plane(n_planes - 1)
    return PatternMaps(
        P=int(got_p), R=float(got_r), region=(x0, y0, x1, y1),
        sign=sign, magnitude=magnitude, derivative=deriv, center=center,
        c_m=c_m, c_I=c_I, intensity_lo=lo, intensity_hi=hi,
    )


class FeatureCache:
    """Content-addressed store for pattern maps and histograms."""

    def __init__(self, directory):
        self.directory = str(directory)
        os.makedirs(self.directory, exist_ok=True)

    def _path(self, key: str, kind: str) -> str:
        return os.path.join(self.directory, key[:2], f"{key}.{kind}")

    @staticmethod
    def maps_key(file_hash: str, P: int, R: float, normalized: bool, derivative: bool) -> str:
        raw = f"{file_hash}|maps|P={P}|R={R!r}|norm={int(normalized)}|deriv={int(derivative)}"
        return hashlib.sha256(raw.encode("ascii")).hexdigest()

    @staticmethod
    def hist_key(file_hash: str, P: int, R: float, scheme: SchemeExpr, normalized: bool) -> str:
        raw = f"{file_hash}|hist|P={P}|R={R!r}|scheme={scheme}|norm={int(normalized)}"
        return hashlib.sha256(raw.encode("ascii")).hexdigest()

    def load_maps(self, key: str, P: int, R: float, sample: str) -> PatternMaps | None:
        path = self._path(key, "maps")
        if not os.path.exists(path):
            return None
        with open(path, "rb") as fh:
            data = fh.read()
        try:
            return _maps_from_bytes(data, P, R)
        except CacheError as err:
            raise CacheError(f"corrupt cache entry for sample {sample}: {err}") from None

    def store_maps(self, key: str, maps: PatternMaps) -> None:
        atomic_write_bytes(self._path(key, "maps"), _maps_to_bytes(maps))

    def load_hist(self, key: str, scheme: SchemeExpr, sample: str) -> FeatureHistogram | None:
        path = self._path(key, "hist")
        if not os.path.exists(path):
            return None
        with open(path, "rb") as fh:
            data = fh.read()
        try:
            return histogram_from_bytes(data, scheme)
        except ValueError as err:
            raise CacheError(f"corrupt cache entry for sample {sample}: {err}") from None

    def store_hist(self, key: str, hist: FeatureHistogram) -> None:
        atomic_write_bytes(self._path(key, "hist"), histogram_to_bytes(hist))


def histogram_for_file(rel: str, abs_path: str, scheme: SchemeExpr, P: int, R: float,
                       cache: FeatureCache | None = None, normalized: bool = False,
                       with_derivative: bool | None = None) -> FeatureHistogram:
    """Histogram for one image file, going through the cache when given.

    rel is the name used in error messages and cache diagnostics (usually the
    manifest-relative path). with_derivative defaults to R >= 2 so cached
    maps stay shareable across schemes with and without D.
    """
    if with_derivative is None:
        with_derivative = float(R) >= 2.0
    try:
        with open(abs_path, "rb") as fh:
            raw = fh.read()
    except OSError as err:
        raise SuiteError(f"sample {rel}: {err}") from None
    file_hash = hashlib.sha256(raw).hexdigest()
    hist_cacheable = cache is not None and float(R).is_integer()
    hkey = None
    if hist_cacheable:
        hkey = cache.hist_key(file_hash, P, R, scheme, normalized)
        hist = cache.load_hist(hkey, scheme, rel)
        if hist is not None:
            return hist
    maps = None
    mkey = None
    if cache is not None:
        mkey = cache.maps_key(file_hash, P, R, normalized, with_derivative)
        maps = cache.load_maps(mkey, P, float(R), rel)
    if maps is None:
        try:
            img = load_image(abs_path)
        except ValueError as err:
            raise SuiteError(f"sample {rel}: {err}") from None
        if normalized:
            img = normalize_image(img)
        maps = extract_maps(img, P, R, mapper=_shared_mapper(P), derivative=with_derivative)
        if cache is not None:
            cache.store_maps(mkey, maps)
    hist = build_histogram(maps, scheme)
    if hist_cacheable:
        cache.store_hist(hkey, hist)
    return hist


def run_suite(spec: SuiteSpec, scheme: str | SchemeExpr, P: int, R: float,
              cache_dir=None, workers: int = 1, normalize: bool = False) -> EvalReport:
    """Extract features for one suite and classify its test split.

    scheme may be a string (kept verbatim in the report, so CLBP_/CLDP_
    prefixes survive into tables) or a parsed SchemeExpr. workers > 1
    parallelizes feature extraction; results are reduced in manifest order,
    so the report is byte-identical for any worker count.
    """
    scheme_text = str(scheme)
    expr = parse_scheme(scheme_text) if isinstance(scheme, str) else scheme
    if expr.uses("D") and not float(R) >= 2.0:
        raise SuiteError(f"scheme {scheme_text} needs the derivative, which needs R >= 2 (got R={R})")
    with_derivative = float(R) >= 2.0
    cache = FeatureCache(cache_dir) if cache_dir else None
    if workers is None or workers < 1:
        workers = os.cpu_count() or 1

    def run_all(manifest: Manifest):
        tasks = [(rel, label, manifest.abs_path(rel)) for rel, label in manifest.entries]
        if workers == 1:
            return [
                (histogram_for_file(rel, ap, expr, P, R, cache, normalize, with_derivative), label)
                for rel, label, ap in tasks
            ]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            hists = pool.map(
                lambda t: histogram_for_file(t[0], t[2], expr, P, R, cache, normalize, with_derivative),
                tasks,
            )
            return [(h, label) for h, (rel, label, ap) in zip(hists, tasks)]

    train_pairs = run_all(spec.train)
    test_pairs = run_all(spec.test)
    models = ModelSet([h for h, _ in train_pairs], [l for _, l in train_pairs])
    return evaluate(test_pairs, models, suite=spec.name, scheme=scheme_text)


@dataclass(frozen=True)
class ExperimentMatrix:
    """schemes x geometries x suites, validated for derivative feasibility."""

    schemes: tuple
    geometries: tuple
    suites: tuple

    def __post_init__(self):
        for text in self.schemes:
            expr = parse_scheme(text)
            if expr.uses("D"):
                for P, R in self.geometries:
                    if not float(R) >= 2.0:
                        raise ValueError(
                            f"scheme {text} uses D but geometry ({P},{R}) has R < 2"
                        )


def load_matrix_config(path) -> ExperimentMatrix:
    """Load a matrix definition: schemes, geometries, suite config paths."""
    values = _parse_kv_file(path)
    config_dir = os.path.dirname(os.path.abspath(path))
    for key in ("schemes", "geometries", "suites"):
        if key not in values:
            raise ConfigError(f"{path}: missing required key {key!r}")
    schemes = tuple(s.strip() for s in values["schemes"].split(",") if s.strip())
    if not schemes:
        raise ConfigError(f"{path}: no schemes listed")
    for s in schemes:
        parse_scheme(s)
    geom_text = values["geometries"]
    pairs = re.findall(r"\(\s*(\d+)\s*,\s*(\d+(?:\.\d+)?)\s*\)", geom_text)
    leftovers = re.sub(r"\(\s*\d+\s*,\s*\d+(?:\.\d+)?\s*\)|[,\s]", "", geom_text)
    if not pairs or leftovers:
        raise ConfigError(f"{path}: cannot parse geometries {geom_text!r}")
    geometries = tuple((int(p), float(r)) for p, r in pairs)
    suite_paths = [s.strip() for s in values["suites"].split(",") if s.strip()]
    if not suite_paths:
        raise ConfigError(f"{path}: no suites listed")
    suites = tuple(load_suite_config(_resolve_config_path(sp, config_dir)) for sp in suite_paths)
    return ExperimentMatrix(schemes=schemes, geometries=geometries, suites=suites)


@dataclass(frozen=True)
class MatrixCell:
    scheme: str
    P: int
    R: float
    suite: str
    accuracy: float | None
    ties: int
    error: str | None = None


@dataclass(frozen=True)
class MatrixReport:
    cells: tuple
    schemes: tuple
    geometries: tuple
    suite_names: tuple

    @property
    def failed(self) -> bool:
        return any(c.error is not None for c in self.cells)

    def to_csv_text(self) -> str:
        lines = ["scheme,P,R,suite,accuracy,ties"]
        for c in self.cells:
            acc = "FAILED" if c.accuracy is None else f"{c.accuracy:.17g}"
            lines.append(f"{c.scheme},{c.P},{c.R:.17g},{c.suite},{acc},{c.ties}")
        return "\n".join(lines) + "\n"

    def _summary_cell(self, scheme: str, P: int, R: float):
        rows = [c for c in self.cells if c.scheme == scheme and c.P == P and c.R == R
                and c.suite in self.suite_names]
        if not rows:
            return None
        if any(c.accuracy is None for c in rows):
            return "FAILED"
        return sum(c.accuracy for c in rows) / len(rows)

    def to_table_text(self) -> str:
        """Render scheme rows against geometry columns, with a Delta row after
        every consecutive CLBP/CLDP pair (summary value: mean over suites)."""
        name_width = max(len("scheme"), max((len(s) for s in self.schemes), default=6), len("Delta(acc)"))
        headers = [f"({P},{R:g})" for P, R in self.geometries]
        col = max(8, max((len(h) for h in headers), default=8) + 1)
        lines = ["scheme".ljust(name_width) + "".join(h.rjust(col) for h in headers)]

        def cells_for(scheme):
            out = []
            for P, R in self.geometries:
                v = self._summary_cell(scheme, P, R)
                if v is None:
                    out.append("-")
                elif v == "FAILED":
                    out.append("FAIL")
                else:
                    out.append(f"{100.0 * v:.2f}")
            return out

        i = 0
        while i < len(self.schemes):
            scheme = self.schemes[i]
            row = cells_for(scheme)
            lines.append(scheme.ljust(name_width) + "".join(v.rjust(col) for v in row))
            paired = (
                i + 1 < len(self.schemes)
                and scheme.startswith("CLBP")
                and self.schemes[i + 1].startswith("CLDP")
            )
            if paired:
                nxt = cells_for(self.schemes[i + 1])
                lines.append(
                    self.schemes[i + 1].ljust(name_width) + "".join(v.rjust(col) for v in nxt)
                )
                deltas = []
                for a, b in zip(row, nxt):
                    try:
                        deltas.append(f"{float(b) - float(a):+.2f}")
                    except ValueError:
                        deltas.append("-")
                lines.append("Delta(acc)".ljust(name_width) + "".join(v.rjust(col) for v in deltas))
                i += 2
            else:
                i += 1
        return "\n".join(lines) + "\n"


def run_matrix(matrix: ExperimentMatrix, cache_dir=None, workers: int = 1,
               normalize: bool = False, progress=None) -> MatrixReport:
    """Run every cell of the matrix, recording failures instead of aborting.

    Aggregate rows are appended per (scheme, geometry): AVG3 when the matrix
    has exactly three suites, AVG2-TC12 when exactly two suite names contain
    'TC12'. Both are plain means of the per-suite accuracies, so they can be
    recomputed from the CSV.
    """
    cells = []
    suite_names = tuple(s.name for s in matrix.suites)
    tc12 = [n for n in suite_names if "TC12" in n.upper()]
    for scheme in matrix.schemes:
        for P, R in matrix.geometries:
            group = []
            for spec in matrix.suites:
                if progress:
                    progress(f"{scheme} ({P},{R:g}) {spec.name}")
                try:
                    rep = run_suite(spec, scheme, P, R, cache_dir=cache_dir,
                                    workers=workers, normalize=normalize)
                    cell = MatrixCell(scheme, P, float(R), spec.name, rep.accuracy, rep.ties)
                except Exception as err:  # recorded, surfaced via exit code
                    cell = MatrixCell(scheme, P, float(R), spec.name, None, 0, error=str(err))
                group.append(cell)
            cells.extend(group)

            def aggregate(name, members):
                if any(c.accuracy is None for c in members):
                    return MatrixCell(scheme, P, float(R), name, None, 0,
                                      error="aggregate over failed cells")
                acc = sum(c.accuracy for c in members) / len(members)
                return MatrixCell(scheme, P, float(R), name, acc,
                                  sum(c.ties for c in members))

            if len(suite_names) == 3:
                cells.append(aggregate("AVG3", group))
            if len(tc12) == 2:
                members = [c for c in group if c.suite in tc12]
                cells.append(aggregate("AVG2-TC12", members))
    return MatrixReport(
        cells=tuple(cells),
        schemes=matrix.schemes,
        geometries=matrix.geometries,
        suite_names=suite_names,
    )


def _box_filter(field: np.ndarray, win: int) -> np.ndarray:
    """Separable box filter, valid mode, via sliding cumulative sums."""

    def along_rows(a):
        c = np.cumsum(a, axis=0, dtype=np.float64)
        out = np.empty((a.shape[0] - win + 1, a.shape[1]))
        out[0] = c[win - 1]
        out[1:] = c[win:] - c[:-win]
        return out / win

    return along_rows(along_rows(field).T).T


def _synth_sample(rng, kind: int, level: int, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    if kind == 0:
        wavelength = 6.0 + 4.0 * level
        theta = math.pi / 6.0
        phase = rng.uniform(0.0, 2.0 * math.pi)
        carrier = (xx * math.cos(theta) + yy * math.sin(theta)) / wavelength
        base = 127.5 + 55.0 * np.sin(2.0 * math.pi * carrier + phase)
    elif kind == 1:
        period = 5 + 3 * level
        ox = int(rng.integers(0, period))
        oy = int(rng.integers(0, period))
        base = 70.0 + 120.0 * ((((xx + ox) // period + (yy + oy) // period) % 2))
    else:
        win = 3 + 2 * level
        field = rng.normal(0.0, 1.0, size=(size + win - 1, size + win - 1))
        smooth = _box_filter(field, win)
        sd = smooth.std()
        if sd == 0.0:
            sd = 1.0
        base = (smooth - smooth.mean()) / sd * 35.0 + 128.0
    k = int(rng.integers(0, 4))
    base = np.rot90(base, k)
    gain = rng.uniform(0.85, 1.15)
    offset = rng.uniform(-12.0, 12.0)
    noisy = gain * base + offset + rng.normal(0.0, 2.0, size=base.shape)
    return np.clip(np.floor(noisy + 0.5), 0.0, 255.0)


def make_synthetic_suite(out_dir, seed: int = 7, classes: int = 3,
                         samples_per_class: int = 10, size: int = 64) -> SuiteSpec:
    """Generate a deterministic synthetic texture suite on disk.

    Class generators cycle through oriented sinusoid gratings, checkerboards
    and smoothed white noise, with parameters stepped every three classes.
    Each sample is independently 90-degree rotated, intensity jittered and
    lightly noised, then quantized to 8-bit PGM. The same seed always
    produces byte-identical files. Returns the SuiteSpec (manifests are
    also written, plus a suite config usable by the bench command).
    """
    if classes < 2:
        raise ValueError("need at least 2 classes")
    if samples_per_class < 1 or size < 16:
        raise ValueError("need samples_per_class >= 1 and size >= 16")
    rng = np.random.default_rng(seed)
    out_dir = str(out_dir)
    img_dir = os.path.join(out_dir, "images")
    os.makedirs(img_dir, exist_ok=True)
    rows = {"train": [], "test": []}
    for c in range(classes):
        kind, level = c % 3, c // 3
        for split in ("train", "test"):
            for i in range(samples_per_class):
                arr = _synth_sample(rng, kind, level, size)
                rel = f"c{c:02d}_{split}_{i:03d}.pgm"
                save_pgm(GrayImage(arr), os.path.join(img_dir, rel))
                rows[split].append((rel, c))
    name = f"synth-{classes}x{samples_per_class}-{size}px-seed{seed}"
    manifests = {}
    for split in ("train", "test"):
        mpath = os.path.join(out_dir, f"{split}.csv")
        atomic_write_text(mpath, "".join(f"{rel},{label}\n" for rel, label in rows[split]))
        manifests[split] = load_manifest(mpath, img_dir, "native-csv")
    config = (
        f"name = {name}\n"
        f"root = images\n"
        f"format = native-csv\n"
        f"train_manifest = train.csv\n"
        f"test_manifest = test.csv\n"
        f"expected_train = {classes * samples_per_class}\n"
        f"expected_test = {classes * samples_per_class}\n"
    )
    atomic_write_text(os.path.join(out_dir, "suite.cfg"), config)
    return SuiteSpec(name, manifests["train"], manifests["test"],
                     expected=(classes * samples_per_class, classes * samples_per_class))
