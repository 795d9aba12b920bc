"""Command-line front end: extract, classify, bench, enumerate-codes, synth.

Exit codes are a stable contract for scripting: 0 success, 1 input or
usage error, 2 experiment failure (absent dataset, failed benchmark cell,
corrupt cache). The CLDP_CACHE_DIR environment variable supplies the
default --cache-dir. All file outputs are written atomically.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

from . import __version__
from .histogram import format_histogram_csv_row, histogram_to_bytes, parse_scheme
from .image import load_manifest
from .patterns import code_space_stats
from .suite import (
    CacheError,
    FeatureCache,
    SuiteError,
    SuiteSpec,
    atomic_write_bytes,
    atomic_write_text,
    histogram_for_file,
    load_matrix_config,
    load_suite_config,
    make_synthetic_suite,
    run_matrix,
    run_suite,
)

_MANIFEST_EXT = {".csv": "native-csv", ".txt": "outex-index"}


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; 2 is reserved for
    # experiment failures here, so usage errors are remapped to 1.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _checked_scheme(scheme_text: str, R: float):
    expr = parse_scheme(scheme_text)
    if expr.uses("D") and not float(R) >= 2.0:
        raise ValueError(
            f"scheme {scheme_text} uses the derivative component, "
            f"which needs R >= 2 (got R={R:g})"
        )
    return expr


def _guess_manifest_format(path: str):
    return _MANIFEST_EXT.get(os.path.splitext(path)[1].lower())


def _map_ordered(fn, tasks, workers: int):
    """Apply fn over tasks preserving order; output is identical for any
    worker count."""
    if workers < 1:
        workers = os.cpu_count() or 1
    if workers == 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def _emit_text(text: str, out) -> None:
    if out:
        atomic_write_text(out, text)
    else:
        sys.stdout.write(text)


def cmd_extract(args) -> int:
    expr = _checked_scheme(args.scheme, args.R)
    fmt = args.manifest_format or _guess_manifest_format(args.input)
    if fmt is not None:
        if args.format == "binary":
            raise ValueError("--format binary holds one histogram; use csv for manifests")
        root = args.root if args.root is not None else (os.path.dirname(args.input) or ".")
        manifest = load_manifest(args.input, root, fmt)
        tasks = [(rel, label, manifest.abs_path(rel)) for rel, label in manifest.entries]
    else:
        if not os.path.isfile(args.input):
            raise FileNotFoundError(f"no such image: {args.input}")
        tasks = [(args.input, -1, args.input)]

    cache = FeatureCache(args.cache_dir) if args.cache_dir else None
    normalized = args.normalize is not None
    hists = _map_ordered(
        lambda t: histogram_for_file(t[0], t[2], expr, args.P, args.R, cache, normalized),
        tasks,
        args.workers,
    )
    if args.format == "binary":
        payload = histogram_to_bytes(hists[0])
        if args.out:
            atomic_write_bytes(args.out, payload)
        else:
            sys.stdout.buffer.write(payload)
        return 0
    text = "".join(
        format_histogram_csv_row(rel, label, h) + "\n"
        for (rel, label, _), h in zip(tasks, hists)
    )
    _emit_text(text, args.out)
    return 0


def _adhoc_suite(args) -> SuiteSpec:
    def load_one(path):
        fmt = args.manifest_format or _guess_manifest_format(path)
        if fmt is None:
            raise ValueError(
                f"cannot infer manifest format of {path}; pass --manifest-format"
            )
        root = args.root if args.root is not None else (os.path.dirname(path) or ".")
        return load_manifest(path, root, fmt)

    return SuiteSpec(args.name, load_one(args.train), load_one(args.test))


def cmd_classify(args) -> int:
    _checked_scheme(args.scheme, args.R)
    if args.config:
        if args.train or args.test:
            raise ValueError("--config and --train/--test are mutually exclusive")
        spec = load_suite_config(args.config)
    else:
        if not (args.train and args.test):
            raise ValueError("classify needs either --config or both --train and --test")
        spec = _adhoc_suite(args)
    rep = run_suite(
        spec, args.scheme, args.P, args.R,
        cache_dir=args.cache_dir, workers=args.workers,
        normalize=args.normalize is not None,
    )
    if args.format == "json":
        text = rep.to_json()
    elif args.format == "csv":
        text = (
            "scheme,P,R,suite,accuracy,ties\n"
            f"{rep.scheme},{rep.P},{rep.R:.17g},{rep.suite},{rep.accuracy:.17g},{rep.ties}\n"
        )
    else:
        text = rep.to_text()
    _emit_text(text, args.out)
    return 0


def cmd_bench(args) -> int:
    matrix = load_matrix_config(args.config)
    progress = None
    if not args.quiet:
        def progress(msg):
            print(msg, file=sys.stderr, flush=True)
    report = run_matrix(
        matrix, cache_dir=args.cache_dir, workers=args.workers,
        normalize=args.normalize is not None, progress=progress,
    )
    if args.out:
        atomic_write_text(args.out, report.to_csv_text())
    _emit_text(report.to_table_text(), args.table)
    if report.failed:
        for cell in report.cells:
            if cell.error is not None:
                print(
                    f"FAILED {cell.scheme} ({cell.P},{cell.R:g}) {cell.suite}: {cell.error}",
                    file=sys.stderr,
                )
        return 2
    return 0


def cmd_enumerate_codes(args) -> int:
    stats = code_space_stats(args.P)
    if args.format == "json":
        sys.stdout.write(json.dumps(stats, indent=2, sort_keys=True) + "\n")
        return 0
    lines = [
        f"P                 {stats['P']}",
        f"total codes       {stats['total_codes']}",
        f"rotation classes  {stats['rotation_classes']}",
        f"riu2 bins         {stats['riu2_bins']}",
        f"uniform codes     {stats['uniform_codes']}",
        f"non-uniform codes {stats['total_codes'] - stats['uniform_codes']}",
        "",
        "bin  population",
    ]
    for b, n in enumerate(stats["bin_populations"]):
        tag = "  (catch-all)" if b == stats["P"] + 1 else ""
        lines.append(f"{b:>3}  {n}{tag}")
    sys.stdout.write("\n".join(lines) + "\n")
    return 0


def cmd_synth(args) -> int:
    spec = make_synthetic_suite(
        args.out_dir, seed=args.seed, classes=args.classes,
        samples_per_class=args.samples_per_class, size=args.size,
    )
    n_train, n_test = spec.expected
    print(f"suite {spec.name}: {n_train} train + {n_test} test images under {args.out_dir}")
    print(f"config: {os.path.join(args.out_dir, 'suite.cfg')}")
    return 0


def _add_geometry_flags(p) -> None:
    p.add_argument("-P", type=int, default=8, metavar="P",
                   help="neighbors on the circle (default 8)")
    p.add_argument("-R", type=float, default=3.0, metavar="R",
                   help="outer sampling radius (default 3)")
    p.add_argument("--scheme", default="S/M/D/C",
                   help="component scheme, '/' joint and '_' concatenated (default S/M/D/C)")


def _add_runtime_flags(p) -> None:
    p.add_argument("--normalize", choices=["mean128-std20"], default=None,
                   help="global gray-level normalization before encoding (default off)")
    p.add_argument("--cache-dir", default=os.environ.get("CLDP_CACHE_DIR"),
                   help="feature cache directory (default $CLDP_CACHE_DIR)")
    p.add_argument("--workers", type=int, default=1,
                   help="worker threads, 0 = one per CPU core (default 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cldp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("extract", help="write feature histograms for an image or manifest")
    p.add_argument("input", help="image (.pgm/.pnm/.bmp) or manifest (.csv/.txt)")
    p.add_argument("--root", default=None,
                   help="image root for manifest entries (default: manifest directory)")
    p.add_argument("--manifest-format", choices=sorted(_MANIFEST_EXT.values()), default=None,
                   help="treat input as a manifest of this format (default: by extension)")
    _add_geometry_flags(p)
    _add_runtime_flags(p)
    p.add_argument("--format", choices=["csv", "binary"], default="csv",
                   help="csv rows, or the compact binary form (single image only)")
    p.add_argument("--out", default=None, help="output path (default stdout)")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("classify", help="train on one manifest, classify another")
    p.add_argument("--config", default=None, help="suite config file")
    p.add_argument("--train", default=None, help="training manifest")
    p.add_argument("--test", default=None, help="test manifest")
    p.add_argument("--root", default=None,
                   help="image root for --train/--test (default: manifest directory)")
    p.add_argument("--manifest-format", choices=sorted(_MANIFEST_EXT.values()), default=None)
    p.add_argument("--name", default="adhoc", help="suite name used in the report")
    _add_geometry_flags(p)
    _add_runtime_flags(p)
    p.add_argument("--format", choices=["table", "json", "csv"], default="table")
    p.add_argument("--out", default=None, help="output path (default stdout)")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("bench", help="run a schemes x geometries x suites matrix")
    p.add_argument("config", help="matrix config listing schemes, geometries, suites")
    _add_runtime_flags(p)
    p.add_argument("--out", default=None, help="write the per-cell CSV here")
    p.add_argument("--table", default=None, help="write the formatted table here (default stdout)")
    p.add_argument("--quiet", action="store_true", help="suppress progress on stderr")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("enumerate-codes", help="print code-space statistics for one P")
    p.add_argument("-P", type=int, default=8, metavar="P", help="code width, 4..24 (default 8)")
    p.add_argument("--format", choices=["table", "json"], default="table")
    p.set_defaults(func=cmd_enumerate_codes)

    p = sub.add_parser("synth", help="generate a deterministic synthetic texture suite")
    p.add_argument("out_dir", help="directory to create the suite under")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--samples-per-class", type=int, default=10)
    p.add_argument("--size", type=int, default=64)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as err:
        print(f"cldp: error: {err}", file=sys.stderr)
        return 1
    except (SuiteError, CacheError) as err:
        print(f"cldp: error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
