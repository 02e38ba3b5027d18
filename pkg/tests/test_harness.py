import json
import math

import numpy as np
import pytest

from rftopo import harness
from rftopo.cli import EXIT_ASSERT, main
from rftopo.harness import Aggregate, RunConfig, aggregate, compare_report


def small_config(tmp_path, **kw):
    base = dict(
        model="bargmann_fock", n=2, sides=(32.0, 32.0), shape=(64, 64), u_grid=(0.0, 1.0, 2.5),
        replicates=4, seed=11, metrics=("euler", "n_components", "b0", "b1", "n_nodal"),
        out_dir=str(tmp_path / "out"), kacrice_samples=10**4,
    )
    base.update(kw)
    return RunConfig(**base)


def test_report_is_identical_across_worker_counts(tmp_path):
    one = harness.run(small_config(tmp_path, out_dir=str(tmp_path / "a"), workers=1))
    two = harness.run(small_config(tmp_path, out_dir=str(tmp_path / "b"), workers=2))
    assert one.report_path.read_bytes() == two.report_path.read_bytes()
    assert one.records_path.read_bytes() == two.records_path.read_bytes()


def test_report_schema_and_float_format(tmp_path):
    res = harness.run(small_config(tmp_path))
    lines = res.report_path.read_text().splitlines()
    assert lines[0] == "model,n,domain,u,metric,emp_mean,emp_se,theory,ratio,z"
    row = lines[1].split(",")
    assert row[0] == "bargmann_fock" and row[1] == "2"
    assert float(row[5]) == res.rows[0].emp_mean
    manifest = json.loads(res.manifest_path.read_text())
    assert manifest["config"]["seed"] == 11


def test_compare_arithmetic():
    rows = compare_report({(1.0, "euler"): (5.0, 1.0, 10)}, {(1.0, "euler"): 4.0},
                          model="m", n=2, domain="d")
    assert rows[0].ratio == pytest.approx(1.25)
    assert rows[0].z == pytest.approx(1.0)
    assert rows[0].flags == ()


def test_compare_zero_theory_zero_spread():
    rows = compare_report({(0.0, "euler"): (0.0, 0.0, 10)}, {(0.0, "euler"): 0.0},
                          model="m", n=2, domain="d")
    r = rows[0]
    assert math.isnan(r.ratio) and r.z == 0.0
    assert "ratio undefined" in r.flags


def test_compare_unmatched_keys_raise():
    with pytest.raises(KeyError, match="unmatched"):
        compare_report({(0.0, "euler"): (1.0, 0.1, 3)}, {(1.0, "euler"): 0.0},
                       model="m", n=2, domain="d")


def test_single_replicate_is_flagged(tmp_path):
    cfg = small_config(tmp_path, replicates=1, u_grid=(1.0,), metrics=("n_components",))
    res = harness.run(cfg)
    assert len(res.rows) == 1
    assert res.rows[0].emp_se == 0.0
    assert "insufficient replicates" in res.rows[0].flags


def test_euler_at_zero_has_zero_theory(tmp_path):
    # 64^2 over-counts slightly at this spacing; 128^2 resolves the zero
    cfg = small_config(tmp_path, shape=(128, 128), replicates=40, u_grid=(0.0,), metrics=("euler",))
    row = harness.run(cfg).rows[0]
    assert row.theory == 0.0
    assert abs(row.z) <= 3


def test_aggregation_is_order_independent():
    rng = np.random.default_rng(0)
    reps = [[{"u": 1.0, "euler": float(v)}] for v in rng.normal(size=50)]
    a = aggregate(reps)[(1.0, "euler")]
    b = aggregate(reps[::-1])[(1.0, "euler")]
    assert a.count == b.count
    assert a.mean == pytest.approx(b.mean, rel=1e-12)
    assert a.stderr == pytest.approx(b.stderr, rel=1e-12)
    vals = [r[0]["euler"] for r in reps]
    assert a.mean == pytest.approx(np.mean(vals))
    assert a.stderr == pytest.approx(np.std(vals, ddof=1) / math.sqrt(50))


def test_aggregate_merge_matches_pooled():
    x = np.arange(10.0) ** 1.5
    left, right = Aggregate(), Aggregate()
    for v in x[:3]:
        left.add(v)
    for v in x[3:]:
        right.add(v)
    left.merge(right)
    assert left.mean == pytest.approx(x.mean())
    assert left.stderr == pytest.approx(x.std(ddof=1) / math.sqrt(10))


def test_cache_hit_skips_synthesis(tmp_path, monkeypatch):
    monkeypatch.setenv(harness.CACHE_ENV, str(tmp_path / "cache"))
    cfg = small_config(tmp_path, replicates=2)
    first = harness.run(cfg).report_path.read_bytes()
    assert len(list((tmp_path / "cache").glob("*.rftf"))) == 2

    def boom(*args, **kwargs):
        raise AssertionError("cache miss")

    monkeypatch.setattr(harness, "sample_torus", boom)
    assert harness.run(cfg).report_path.read_bytes() == first


def test_replicate_failure_names_the_seed(tmp_path, monkeypatch):
    def boom(*args, **kwargs):
        raise ValueError("synthetic failure")

    monkeypatch.setattr(harness, "sample_torus", boom)
    with pytest.raises(RuntimeError, match=r"replicate 0 \(master seed 11\)"):
        harness.run(small_config(tmp_path))


def test_config_validation():
    with pytest.raises(ValueError):
        RunConfig(replicates=0)
    with pytest.raises(ValueError):
        RunConfig(u_grid=(2.0, 1.0))
    with pytest.raises(ValueError):
        RunConfig(metrics=("volume",))
    with pytest.raises(ValueError):
        RunConfig.from_dict({"colour": "red"})


def test_check_rows_uses_larger_of_tolerances():
    rows = compare_report(
        {(1.0, "euler"): (10.4, 0.1, 10), (2.0, "euler"): (10.6, 0.1, 10), (3.0, "euler"): (12.0, 1.0, 10)},
        {(1.0, "euler"): 10.0, (2.0, "euler"): 10.0, (3.0, "euler"): 10.0},
        model="m", n=2, domain="d",
    )
    bad = harness.check_rows(rows, 0.05)
    assert [r.u for r in bad] == [2.0]


def test_cli_pipeline(tmp_path, capsys):
    common = ["--sides", "32,32", "--shape", "64,64", "--u-grid", "0,1", "--replicates", "2",
              "--seed", "3", "--metrics", "euler,n_components"]
    fields = tmp_path / "fields"
    assert main(["simulate", *common, "--out-dir", str(fields)]) == 0
    paths = sorted(str(p) for p in fields.glob("*.rftf"))
    assert len(paths) == 2
    records = tmp_path / "rec.jsonl"
    assert main(["analyze", *common, "--out", str(records), *paths]) == 0
    report = tmp_path / "report.csv"
    assert main(["compare", *common, "--records", str(records), "--out", str(report)]) == 0
    run_dir = tmp_path / "run"
    assert main(["run", *common, "--out-dir", str(run_dir)]) == 0
    assert report.read_bytes() == (run_dir / "report.csv").read_bytes()


def test_cli_assert_exit_code(tmp_path, monkeypatch):
    common = ["--sides", "32,32", "--shape", "64,64", "--u-grid", "1", "--replicates", "2",
              "--seed", "3", "--metrics", "euler", "--out-dir", str(tmp_path / "r")]
    assert main(["run", *common, "--rel-tol", "1e9", "--assert"]) == 0
    monkeypatch.setattr(harness, "theory_table", lambda config, keys: {k: 1e6 for k in keys})
    assert main(["run", *common]) == 0
    assert main(["run", *common, "--assert"]) == EXIT_ASSERT


def test_cli_config_file_overridden_by_flags(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"sides": [32, 32], "shape": [64, 64], "u_grid": [1.0], "replicates": 5,
                               "metrics": ["euler"], "out_dir": str(tmp_path / "r")}))
    assert main(["run", "--config", str(cfg), "--replicates", "2"]) == 0
    manifest = json.loads((tmp_path / "r" / "manifest.json").read_text())
    assert manifest["config"]["replicates"] == 2


def test_cli_predict_kacrice_spinglass(tmp_path):
    out = tmp_path / "p.csv"
    assert main(["predict", "--u-grid", "0,3", "--sides", "40,40", "--out", str(out)]) == 0
    text = out.read_text()
    assert text.startswith("u,metric,value")
    refined = [l for l in text.splitlines() if l.startswith("3,components_refined")][0]
    assert float(refined.split(",")[2]) == pytest.approx(3.386, rel=1e-3)
    out = tmp_path / "k.csv"
    assert main(["kacrice", "--n", "1", "--samples", "1000", "--out", str(out)]) == 0
    assert out.read_text().splitlines()[0] == "u,index,density,stderr,asymptotic"
    out = tmp_path / "s.csv"
    assert main(["spinglass", "--mode", "brute", "--p", "2", "--n", "4", "--samples", "500",
                 "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 9
