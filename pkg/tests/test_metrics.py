import csv
import json
import math
import re

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ggopt import coding, ggdist, gginit, metrics, nn
from ggopt.coding import QuantSpec
from ggopt.ggdist import GGParams
from ggopt.harness.datasets import blobs
from ggopt.training import EpochLog

SPEC = QuantSpec(8, 0)


class TestTensorStats:
    def test_constant(self):
        s = metrics.tensor_stats(np.full(50, 0.3), SPEC)
        q = math.floor(0.3 * 256)
        assert s.discrete_entropy_bits == 0
        assert s.avg_hm_bits == 1.0
        assert s.avg_eg_bits == coding.eg_code_length(coding.zigzag_map(q), 0)
        assert s.fit is None

    def test_ratios_recomputable(self):
        x = ggdist.sample(GGParams(0, 0.05, 1.0), 5000, np.random.default_rng(0))
        s = metrics.tensor_stats(x, SPEC)
        assert s.avg_eg_bits == coding.rate(x, SPEC)
        assert s.c_eg == pytest.approx(1 - s.avg_eg_bits / s.fl_bits, abs=1e-12)
        assert s.c_hm == pytest.approx(1 - s.avg_hm_bits / s.fl_bits, abs=1e-12)
        assert s.fit is not None and s.element_count == 5000

    def test_entropy_direction(self):
        rng = np.random.default_rng(1)
        lo = ggdist.sample(GGParams.from_sigma(0.1, 0.1), 10**5, rng)
        hi = ggdist.sample(GGParams.from_sigma(0.1, 2.0), 10**5, rng)
        assert metrics.tensor_stats(lo, SPEC).discrete_entropy_bits < metrics.tensor_stats(hi, SPEC).discrete_entropy_bits

    def test_empty(self):
        with pytest.raises(ValueError):
            metrics.tensor_stats([], SPEC)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-4, 4), min_size=2, max_size=300))
    def test_properties(self, xs):
        s = metrics.tensor_stats(np.array(xs), SPEC)
        q = coding.quantize(np.array(xs), SPEC).values
        distinct = len(np.unique(q))
        assert 0 <= s.discrete_entropy_bits <= math.log2(distinct) + 1e-12
        if distinct >= 2:
            assert s.discrete_entropy_bits - 1e-12 <= s.avg_hm_bits < s.discrete_entropy_bits + 1

    def test_to_dict_json(self):
        s = metrics.tensor_stats(np.random.default_rng(0).normal(size=2000), SPEC)
        d = json.loads(json.dumps(s.to_dict()))
        assert set(d["fit"]) == {"mu", "beta", "nu", "goodness", "sample_count"}


class TestFits:
    def test_gaussian_nested(self):
        x = np.random.default_rng(0).normal(size=10**5)
        r = metrics.fit_pair(x)
        assert r["gg"].goodness == pytest.approx(r["gaussian"].goodness, rel=0.05, abs=2e-3)

    def test_laplace(self):
        x = np.random.default_rng(0).laplace(size=10**5)
        r = metrics.fit_pair(x)
        assert r["gg"].goodness < r["gaussian"].goodness

    @pytest.mark.parametrize("seed", range(10))
    def test_heavy_tailed_synthetic(self, seed):
        nu = 0.5 + seed * 0.09  # spans [0.5, 1.31]
        x = ggdist.sample(GGParams(0, 1, nu), 20000, np.random.default_rng(seed))
        assert metrics.fit_pair(x)["gg_beats_gaussian"]

    def test_gaussian_fit_params(self):
        x = np.random.default_rng(0).normal(2, 3, 5000)
        f = metrics.gaussian_fit(x)
        assert f.params.nu == 2.0 and f.params.mu == pytest.approx(x.mean())
        assert ggdist.variance(f.params) == pytest.approx(x.var())


def small_trained():
    rng = np.random.default_rng(0)
    data = blobs(2, 0.5, 1500, rng)
    m = nn.build_model(nn.mlp_layers([2, 32, 32, 2]), shard_points=[2])
    return gginit.init_model(m, gginit.InitSpec(), rng), data


def test_fig1_report_files(tmp_path):
    m, data = small_trained()
    rep = metrics.fig1_report(m, data, np.random.default_rng(1), tmp_path)
    assert set(rep) == {"weights", "activations", "gradients"}
    summary = json.loads((tmp_path / "fig1.json").read_text())
    assert set(summary["weights"]) >= {"gg", "gaussian", "gg_beats_gaussian"}
    rows = list(csv.reader(open(tmp_path / "fig1_hist.csv")))
    assert rows[0][0] == "quantity" and len(rows) == 1 + 3 * ggdist.HIST_BINS
    mass = sum(float(r[3]) for r in rows[1:] if r[0] == "weights")
    assert mass == pytest.approx(1.0, abs=0.01)


def test_fig1_strict():
    m, data = small_trained()
    rep = metrics.fig1_report(m, data, np.random.default_rng(1))
    if all(r["gg_beats_gaussian"] for r in rep.values()):
        metrics.fig1_report(m, data, np.random.default_rng(1), strict=True)
    else:
        with pytest.raises(AssertionError):
            metrics.fig1_report(m, data, np.random.default_rng(1), strict=True)


def fake_logs(n, offset=0.0):
    return [EpochLog(i, 1.0 / (i + 1) + offset, 0.5, 3.0 - 0.1 * i, 2.0, 4.0, 1e-3, 1.0) for i in range(n)]


class TestReport:
    def test_files(self, tmp_path):
        s = metrics.emit_run_report(fake_logs(10), {"w": metrics.tensor_stats(np.arange(2000) / 3000, SPEC)},
                                    tmp_path, fake_logs(10, 0.1), config={"a": 1}, seed=3, mode="act")
        rows = (tmp_path / "run.csv").read_text().splitlines()
        assert rows[0] == ",".join(metrics.RUN_CSV_FIELDS)
        assert len(rows) == 11
        back = json.loads((tmp_path / "summary.json").read_text())
        assert back == json.loads(json.dumps(s))
        assert back["seed"] == 3 and back["config"] == {"a": 1} and back["rate_metric"] == "act_rate_bits"

    def test_svg_polylines(self, tmp_path):
        metrics.emit_run_report(fake_logs(6), None, tmp_path, fake_logs(6, 0.2), mode="gct")
        for name in ("loss.svg", "rate.svg"):
            svg = (tmp_path / name).read_text()
            assert svg.startswith("<?xml") and 'version="1.1"' in svg
            lines = re.findall(r'points="([^"]+)"', svg)
            assert len(lines) == 2
            for pts in lines:
                xs = [float(p.split(",")[0]) for p in pts.split()]
                assert xs == sorted(xs) and len(xs) == 6

    def test_single_series(self, tmp_path):
        metrics.emit_run_report(fake_logs(3), None, tmp_path)
        assert len(re.findall("<polyline", (tmp_path / "loss.svg").read_text())) == 1

    def test_nan_rate_falls_back(self, tmp_path):
        logs = [EpochLog(i, 1.0, float("nan"), float("nan"), 2.0, 4.0, 0.0, 1.0) for i in range(3)]
        s = metrics.emit_run_report(logs, None, tmp_path, mode="act")
        assert s["final"]["accuracy"] is None
        assert "<polyline" in (tmp_path / "rate.svg").read_text()

    def test_errors(self, tmp_path):
        with pytest.raises(ValueError):
            metrics.emit_run_report([], None, tmp_path)
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError):
            metrics.emit_run_report(fake_logs(2), None, blocker / "sub")
