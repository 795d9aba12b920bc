import json
import os

import numpy as np
import pytest

from cldp import (
    histogram_from_bytes,
    make_synthetic_suite,
    parse_scheme,
    save_pgm,
)
from cldp.cli import main
from conftest import gray, random_8bit


def _write_images(tmp_path, count=3, size=32, seed=70):
    rng = np.random.default_rng(seed)
    img_dir = tmp_path / "images"
    img_dir.mkdir(exist_ok=True)
    names = []
    for i in range(count):
        name = f"t{i}.pgm"
        save_pgm(gray(random_8bit(rng, size, size)), img_dir / name)
        names.append(name)
    return img_dir, names


def test_extract_single_constant_image(tmp_path, capsys):
    img = tmp_path / "flat.pgm"
    save_pgm(gray(np.full((32, 32), 90.0)), img)
    assert main(["extract", str(img), "-P", "8", "-R", "2"]) == 0
    out = capsys.readouterr().out
    rows = out.splitlines()
    assert len(rows) == 1
    fields = rows[0].split(",")
    assert fields[0] == str(img)
    assert fields[1] == "-1"
    assert fields[2:5] == ["S/M/D/C", "8", "2"]
    values = [float(v) for v in fields[5:]]
    assert len(values) == 2000
    assert values[1761] == 1.0 and sum(values) == 1.0


def test_extract_missing_file(tmp_path, capsys):
    missing = tmp_path / "gone.pgm"
    assert main(["extract", str(missing)]) == 1
    err = capsys.readouterr().err
    assert "gone.pgm" in err and err.startswith("cldp: error:")


def test_extract_manifest_rows_follow_manifest_order(tmp_path, capsys):
    img_dir, names = _write_images(tmp_path)
    manifest = tmp_path / "list.csv"
    manifest.write_text("".join(f"{n},{i % 2}\n" for i, n in enumerate(names)))
    assert main(["extract", str(manifest), "--root", str(img_dir),
                 "-P", "8", "-R", "2", "--scheme", "S"]) == 0
    rows = capsys.readouterr().out.splitlines()
    assert [r.split(",")[0] for r in rows] == names
    assert [r.split(",")[1] for r in rows] == ["0", "1", "0"]


def test_extract_outex_manifest_with_ras_fallback(tmp_path, capsys):
    img_dir, names = _write_images(tmp_path, count=2)
    manifest = tmp_path / "index.txt"
    manifest.write_text("2\nt0.ras 4\nt1.ras 9\n")
    assert main(["extract", str(manifest), "--root", str(img_dir),
                 "--scheme", "S", "-R", "2"]) == 0
    rows = capsys.readouterr().out.splitlines()
    assert [r.split(",")[1] for r in rows] == ["4", "9"]


def test_extract_binary_round_trip(tmp_path):
    img = tmp_path / "flat.pgm"
    save_pgm(gray(np.full((32, 32), 12.0)), img)
    out = tmp_path / "h.bin"
    assert main(["extract", str(img), "-R", "2", "--scheme", "S_D",
                 "--format", "binary", "--out", str(out)]) == 0
    hist = histogram_from_bytes(out.read_bytes(), parse_scheme("S_D"))
    assert hist.bins[8] == 1.0 and hist.bins[10] == 1.0


def test_extract_binary_stdout(tmp_path, capsysbinary):
    img = tmp_path / "flat.pgm"
    save_pgm(gray(np.full((32, 32), 12.0)), img)
    assert main(["extract", str(img), "-R", "2", "--scheme", "S",
                 "--format", "binary"]) == 0
    data = capsysbinary.readouterr().out
    assert histogram_from_bytes(data, parse_scheme("S")).bins[8] == 1.0


def test_extract_binary_rejects_manifests(tmp_path, capsys):
    img_dir, names = _write_images(tmp_path, count=1)
    manifest = tmp_path / "list.csv"
    manifest.write_text(f"{names[0]},0\n")
    assert main(["extract", str(manifest), "--format", "binary"]) == 1
    assert "binary" in capsys.readouterr().err


def test_extract_rejects_derivative_at_r1(tmp_path, capsys):
    img = tmp_path / "flat.pgm"
    save_pgm(gray(np.zeros((16, 16))), img)
    assert main(["extract", str(img), "-R", "1"]) == 1
    assert "R >= 2" in capsys.readouterr().err


def test_extract_uses_cache_dir_env(tmp_path, monkeypatch, capsys):
    img = tmp_path / "flat.pgm"
    save_pgm(gray(np.zeros((32, 32))), img)
    cache_dir = tmp_path / "cache"
    monkeypatch.setenv("CLDP_CACHE_DIR", str(cache_dir))
    assert main(["extract", str(img), "-R", "2"]) == 0
    capsys.readouterr()
    assert list(cache_dir.rglob("*.hist"))


def _synth(tmp_path, **kw):
    kw.setdefault("seed", 3)
    kw.setdefault("classes", 2)
    kw.setdefault("samples_per_class", 2)
    kw.setdefault("size", 32)
    return make_synthetic_suite(tmp_path / "suite", **kw)


def test_classify_adhoc_manifests_json(tmp_path, capsys):
    _synth(tmp_path)
    root = tmp_path / "suite"
    assert main([
        "classify",
        "--train", str(root / "train.csv"),
        "--test", str(root / "test.csv"),
        "--root", str(root / "images"),
        "--name", "demo",
        "-P", "8", "-R", "2", "--format", "json",
    ]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["suite"] == "demo"
    assert report["accuracy"] == 1.0
    assert set(report) == {
        "suite", "scheme", "P", "R", "accuracy", "per_class", "confusion", "ties",
    }


def test_classify_with_config_table_and_csv(tmp_path, capsys):
    _synth(tmp_path)
    cfg = str(tmp_path / "suite" / "suite.cfg")
    assert main(["classify", "--config", cfg, "-R", "2", "--scheme", "S/M"]) == 0
    table = capsys.readouterr().out
    assert "accuracy  100.00%" in table
    assert main(["classify", "--config", cfg, "-R", "2", "--scheme", "S/M",
                 "--format", "csv"]) == 0
    csv_text = capsys.readouterr().out
    lines = csv_text.splitlines()
    assert lines[0] == "scheme,P,R,suite,accuracy,ties"
    assert lines[1].startswith("S/M,8,2,synth-2x2-32px-seed3,1,")


def test_classify_config_conflicts_with_manifests(tmp_path, capsys):
    _synth(tmp_path)
    cfg = str(tmp_path / "suite" / "suite.cfg")
    assert main(["classify", "--config", cfg, "--train", "x.csv"]) == 1
    assert "mutually exclusive" in capsys.readouterr().err
    assert main(["classify", "--train", "x.csv"]) == 1
    assert "--config or both" in capsys.readouterr().err


def test_classify_missing_dataset_root_exits_2(tmp_path, capsys):
    cfg = tmp_path / "away.suite"
    cfg.write_text(
        "name = away\nroot = /missing/place\n"
        "train_manifest = t.txt\ntest_manifest = e.txt\n"
    )
    assert main(["classify", "--config", str(cfg), "-R", "2"]) == 2
    err = capsys.readouterr().err
    assert "/missing/place" in err and "OUTEX_ROOT" in err


def _matrix_config(tmp_path, schemes="CLBP_S, CLDP_S/D", geometries="(8,2)"):
    _synth(tmp_path)
    cfg = tmp_path / "m.matrix"
    cfg.write_text(
        f"schemes = {schemes}\n"
        f"geometries = {geometries}\n"
        f"suites = suite/suite.cfg\n"
    )
    return cfg


def test_bench_writes_table_and_csv(tmp_path, capsys):
    cfg = _matrix_config(tmp_path)
    out_csv = tmp_path / "cells.csv"
    assert main(["bench", str(cfg), "--out", str(out_csv)]) == 0
    captured = capsys.readouterr()
    lines = captured.out.splitlines()
    assert lines[0].split() == ["scheme", "(8,2)"]
    assert lines[1].startswith("CLBP_S")
    assert lines[3].startswith("Delta(acc)")
    assert "CLBP_S (8,2)" in captured.err  # progress
    csv_lines = out_csv.read_text().splitlines()
    assert csv_lines[0] == "scheme,P,R,suite,accuracy,ties"
    assert len(csv_lines) == 1 + 2  # one cell per scheme, no aggregates for 1 suite
    assert main(["bench", str(cfg), "--quiet"]) == 0
    assert capsys.readouterr().err == ""


def test_bench_outputs_identical_across_workers_and_cache(tmp_path, capsys):
    cfg = _matrix_config(tmp_path)

    def run(tag, extra):
        table = tmp_path / f"{tag}.table"
        csv_path = tmp_path / f"{tag}.csv"
        assert main(["bench", str(cfg), "--quiet", "--table", str(table),
                     "--out", str(csv_path)] + extra) == 0
        return table.read_bytes(), csv_path.read_bytes()

    base = run("w1", ["--workers", "1"])
    assert run("w8", ["--workers", "8"]) == base
    cache = str(tmp_path / "cache")
    assert run("cold", ["--cache-dir", cache]) == base
    assert run("warm", ["--cache-dir", cache]) == base
    capsys.readouterr()


def test_bench_missing_dataset_exits_2(tmp_path, capsys):
    suite_cfg = tmp_path / "away.suite"
    suite_cfg.write_text(
        "name = away\nroot = /missing/place\n"
        "train_manifest = t.txt\ntest_manifest = e.txt\n"
    )
    cfg = tmp_path / "m.matrix"
    cfg.write_text(
        "schemes = CLBP_S\ngeometries = (8,2)\nsuites = away.suite\n"
    )
    assert main(["bench", str(cfg), "--quiet"]) == 2
    assert "mogrify" in capsys.readouterr().err


def test_bench_failed_cells_exit_2(tmp_path, capsys):
    cfg = _matrix_config(tmp_path, schemes="CLBP_S")
    victim = next((tmp_path / "suite" / "images").iterdir())
    victim.write_bytes(b"not an image at all")
    out_csv = tmp_path / "cells.csv"
    assert main(["bench", str(cfg), "--quiet", "--out", str(out_csv)]) == 2
    assert "FAILED CLBP_S (8,2)" in capsys.readouterr().err
    assert "FAILED" in out_csv.read_text()


def test_enumerate_codes_table(capsys):
    assert main(["enumerate-codes", "-P", "8"]) == 0
    out = capsys.readouterr().out
    assert "total codes       256" in out
    assert "rotation classes  36" in out
    assert "riu2 bins         10" in out
    assert "uniform codes     58" in out
    assert "  9  198  (catch-all)" in out


def test_enumerate_codes_json(capsys):
    assert main(["enumerate-codes", "-P", "4", "--format", "json"]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["rotation_classes"] == 6
    assert stats["bin_populations"] == [1, 4, 4, 4, 1, 2]


def test_enumerate_codes_rejects_bad_p(capsys):
    assert main(["enumerate-codes", "-P", "3"]) == 1
    assert "cldp: error:" in capsys.readouterr().err


def test_synth_command(tmp_path, capsys):
    out_dir = tmp_path / "generated"
    assert main(["synth", str(out_dir), "--classes", "2",
                 "--samples-per-class", "2", "--size", "32"]) == 0
    out = capsys.readouterr().out
    assert "2 train + 2 test" not in out  # 2 classes x 2 samples = 4 per split
    assert "4 train + 4 test" in out
    assert (out_dir / "suite.cfg").is_file()
    assert len(list((out_dir / "images").iterdir())) == 8


def test_usage_errors_exit_1(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["extract"])  # missing input
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 1
    capsys.readouterr()


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert capsys.readouterr().out.startswith("cldp ")
