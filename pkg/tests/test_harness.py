import csv
import io
import json
import math
import time

import numpy as np
import pytest

from semiclassic_lab import harness
from semiclassic_lab.errors import BlowUpError, ConfigurationError
from semiclassic_lab.harness import ExperimentConfig, check_report, fit_slope, load_config, run_pair, sweep


def small(**kw) -> ExperimentConfig:
    base = dict(N=[16, 32], t_final=0.1, snapshot_every=0.05)
    base.update(kw)
    return ExperimentConfig(**base)


# ---------------------------------------------------------------- fit_slope


def test_fit_exact_power_laws():
    eps = [1 / 8, 1 / 16, 1 / 32, 1 / 64]
    f = fit_slope(eps, [3 * e for e in eps])
    assert f.slope == pytest.approx(1.0, abs=1e-12) and f.stderr < 1e-12 and f.points == 4
    assert math.exp(f.intercept) == pytest.approx(3.0)
    assert fit_slope(eps, [e**2 for e in eps]).slope == pytest.approx(2.0, abs=1e-12)


def test_fit_noisy():
    eps = np.array([1 / 8, 1 / 16, 1 / 32, 1 / 64])
    noise = np.random.default_rng(7).normal(size=4)
    f = fit_slope(eps, eps * (1 + 0.05 * noise))
    assert 0.9 <= f.slope <= 1.1
    assert f.stderr > 0


def test_fit_degenerate():
    f = fit_slope([0.1, 0.1], [1.0, 2.0])
    assert f.slope is None and "identical" in f.reason
    f = fit_slope([0.1], [1.0])
    assert f.slope is None and f.points == 1
    two = fit_slope([0.1, 0.05], [0.4, 0.1])
    assert two.slope == pytest.approx(2.0) and two.stderr is None and two.reason


def test_fit_excludes_nonpositive():
    with pytest.warns(RuntimeWarning, match="nonpositive"):
        f = fit_slope([0.1, 0.05, 0.025, 0.0125], [1.0, 0.0, 0.25, -1.0])
    assert f.points == 2 and len(f.excluded) == 2
    assert f.slope == pytest.approx(1.0)


def test_fit_drop_coarsest():
    eps = [1 / 8, 1 / 16, 1 / 32, 1 / 64]
    vals = [10.0, 1 / 16, 1 / 32, 1 / 64]
    f = fit_slope(eps, vals, drop_coarsest=True)
    assert f.slope == pytest.approx(1.0, abs=1e-12) and f.points == 3
    assert f.excluded == [{"eps": 1 / 8, "value": 10.0, "why": "coarsest dropped"}]


# ---------------------------------------------------------------- config


def test_presets():
    std, free = load_config("standard"), load_config("free")
    assert std.eps_list == [1 / 16, 1 / 32, 1 / 64]
    assert [std.grid(i).n for i in range(3)] == [128, 256, 512]
    assert std.build_potential().fourier_coeffs == {1: 0.5, -1: 0.5}
    assert free.build_potential().is_zero
    assert free.slope_band == [0.8, 1.2] and std.slope_band == [0.7, 1.3]
    assert std.check_time == 0.5


@pytest.mark.parametrize(
    "kw, match",
    [
        (dict(d=2), "dimension"),
        (dict(N=[32, 16]), "decreasing"),
        (dict(N=[16, 16]), "decreasing"),
        (dict(N=[]), "non-empty"),
        (dict(points=[32]), "resolve"),
        (dict(points=[128, 256]), "one size per N"),
        (dict(resolution=2.0), "resolve"),
        (dict(dt_factor=0.2), "dt_factor"),
        (dict(dt_factor=0.0), "dt_factor"),
        (dict(metrics=["trace", "entropy"]), "unknown metrics"),
        (dict(profile="lorentzian"), "profile"),
        (dict(potential={"type": "yukawa"}), "potential"),
        (dict(t_final=-1.0), "t_final"),
    ],
)
def test_config_validation(kw, match):
    base = dict(N=[16])
    base.update(kw)
    with pytest.raises(ConfigurationError, match=match):
        ExperimentConfig(**base)


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigurationError, match="not found"):
        load_config(tmp_path / "none.toml")
    p = tmp_path / "c.toml"
    p.write_text("[grid]\nlength = 2.0\ncolour = 'red'\n")
    with pytest.raises(ConfigurationError, match="colour"):
        load_config(p)
    p.write_text("frequency = 3\n")
    with pytest.raises(ConfigurationError, match="frequency"):
        load_config(p)
    p.write_text("grid = 3\n")
    with pytest.raises(ConfigurationError, match="table"):
        load_config(p)


def test_config_fourier_potential_and_round_trip(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text(
        '[sweep]\nN = [16]\n[potential]\ntype = "fourier"\ncoeffs = { "1" = [0.5, 0.25], "-1" = [0.5, -0.25] }\n'
        '[profile]\nname = "gaussian"\nsigma_x = 0.3\n'
    )
    cfg = load_config(p)
    assert cfg.build_potential().fourier_coeffs == {1: 0.5 + 0.25j, -1: 0.5 - 0.25j}
    assert cfg.profile == "gaussian" and cfg.profile_params == {"sigma_x": 0.3}
    assert ExperimentConfig(**cfg.to_dict()) == cfg


# ---------------------------------------------------------------- run_pair


def test_zero_horizon_distances_vanish():
    res = run_pair(ExperimentConfig(N=[16], t_final=0.0, potential={"type": "zero"}), 0)
    assert res.times == [0.0]
    for name, vals in res.metrics.items():
        assert vals[0] <= 1e-10, name


def test_pair_fields_and_normalization():
    res = run_pair(small(potential={"type": "cosine"}), 0)
    m = res.metrics
    assert res.times == pytest.approx([0.0, 0.05, 0.1])
    np.testing.assert_allclose(m["trace_distance_per_N"], np.array(m["trace_distance"]) / 16)
    np.testing.assert_allclose(m["hs_distance_per_sqrtN"], np.array(m["hs_distance"]) / 4)
    np.testing.assert_allclose(m["observable_sup_per_N"], np.array(m["observable_sup"]) / 16)
    assert all(v >= 0 for vals in m.values() for v in vals)
    # HS distance equals the Wigner L2 distance up to the exact sqrt(2 pi / eps) factor
    np.testing.assert_allclose(m["hs_distance"], math.sqrt(2 * np.pi * 16) * np.array(m["wigner_l2"]), rtol=1e-8, atol=1e-14)
    assert m["trace_distance"][-1] >= m["hs_distance"][-1]
    c = res.conserved
    assert c["hartree_trace_drift"] < 1e-10 * 16 and c["vlasov_mass_drift"] < 1e-12
    assert res.initial["kappa_l1"] >= 0 and res.initial["clip_magnitude"] < 0.05
    assert res.hartree is not None and res.vlasov is not None
    assert json.loads(json.dumps(res.summary(), default=float))["eps"] == 1 / 16


def test_metric_subset():
    res = run_pair(small(metrics=["hs"]), 0, keep_snapshots=False)
    assert set(res.metrics) == {"hs_distance", "hs_distance_per_sqrtN"}
    assert res.hartree is None


def test_free_hs_growth_envelope():
    cfg = ExperimentConfig(N=[16, 32], potential={"type": "zero"}, t_final=0.5, snapshot_every=0.1)
    runs = [run_pair(cfg, i, keep_snapshots=False) for i in range(2)]
    t = np.array(runs[0].times)
    hs = [np.array(r.metrics["hs_distance_per_sqrtN"]) for r in runs]
    assert hs[0][0] < 1e-12 and np.all(np.diff(hs[0]) > 0)
    # envelope C eps exp(c t) fitted on the coarser eps ...
    c, logC = np.polyfit(t[1:], np.log(hs[0][1:] / runs[0].eps), 1)
    C = np.max(hs[0][1:] / (runs[0].eps * np.exp(c * t[1:])))
    assert 0 < c < 10
    # ... bounds the finer eps with the same constants
    assert np.all(hs[1] <= C * runs[1].eps * np.exp(c * t))


def test_smoke_run_time():
    start = time.perf_counter()
    res = run_pair(load_config("standard"), 0, keep_snapshots=False)
    assert res.n == 128 and res.times[-1] == pytest.approx(0.5)
    assert time.perf_counter() - start < 60


def test_refinement_changes_distances_little():
    base = ExperimentConfig(N=[16], t_final=0.5, snapshot_every=0.1)
    fine = ExperimentConfig(N=[16], points=[256], t_final=0.5, snapshot_every=0.1)
    a, b = run_pair(base, 0, False), run_pair(fine, 0, False)
    assert b.n == 256
    for name in a.metrics:
        for va, vb in zip(a.metrics[name][1:], b.metrics[name][1:]):
            assert abs(va - vb) < 0.1 * va, name


# ---------------------------------------------------------------- sweep


@pytest.fixture(scope="module")
def small_report():
    return sweep(small(potential={"type": "cosine"}))


def test_report_structure(small_report):
    rep = small_report
    assert rep.complete and not rep.failures and rep.schema == "semiclassic-lab/1"
    assert [r["eps"] for r in rep.runs] == [1 / 16, 1 / 32]
    for metric in ("trace_distance_per_N", "hs_distance_per_sqrtN", "observable_sup_per_N", "wigner_l2"):
        fit = rep.slope(metric, 0.1)
        assert fit.points == 2 and fit.slope > 0
    assert rep.slope("hs_distance_per_sqrtN", 0.0) is None
    data = json.loads(rep.to_json())
    assert data["config"]["N"] == [16, 32] and data["created"]
    assert all(r["value"] >= 0 for r in rep.records)


def test_report_csv(small_report, tmp_path):
    rows = list(csv.DictReader(io.StringIO(small_report.to_csv())))
    assert list(rows[0]) == ["eps", "N", "t", "metric", "value"]
    assert len(rows) == len(small_report.records) == 2 * 3 * 7
    j, c = small_report.write(tmp_path)
    assert j.read_text() == small_report.to_json() and c.read_text() == small_report.to_csv()


def test_check_report(small_report):
    res = check_report(small_report, band=(1.5, 2.5), t=0.1)
    assert res["pass"] and set(res["families"]) == {
        "trace_distance_per_N", "hs_distance_per_sqrtN", "observable_sup_per_N", "wigner_l2"
    }
    assert not check_report(small_report, band=(0.7, 1.3), t=0.1)["pass"]
    assert not check_report(small_report, band=(1.5, 2.5), t=0.07)["pass"]


def _strip(report):
    d = json.loads(report.to_json())
    d.pop("created")
    d.pop("check")  # set by check_report on the shared fixture
    d["config"].pop("workers")
    return d


def test_determinism_across_workers(small_report, monkeypatch):
    monkeypatch.setattr(harness.os, "cpu_count", lambda: 4)
    pooled = sweep(small(potential={"type": "cosine"}), workers=2)
    assert _strip(pooled) == _strip(small_report)
    assert pooled.to_csv() == small_report.to_csv()


def test_partial_failure_marks_incomplete(monkeypatch):
    real = harness.run_pair

    def flaky(cfg, i, keep_snapshots=True):
        if i == 1:
            raise BlowUpError("non-finite kernel", step=2)
        return real(cfg, i, keep_snapshots)

    monkeypatch.setattr(harness, "run_pair", flaky)
    rep = sweep(small())
    assert not rep.complete and len(rep.runs) == 1
    assert rep.failures[0]["error"] == "BlowUpError" and rep.failures[0]["N"] == 32
    assert rep.slope("hs_distance_per_sqrtN", 0.1).slope is None
    assert not check_report(rep, band=(-10, 10), t=0.1)["pass"]
