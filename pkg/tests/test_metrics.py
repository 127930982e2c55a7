import json

import numpy as np
import pytest

from specflow.data import gen_sines
from specflow.metrics import (
    MetricProtocol,
    MetricReport,
    correlational_score,
    discriminative_score,
    marginal_score,
    mmd_report,
    predictive_score,
    write_report,
)


def sines(n, seed):
    return gen_sines(n, rng=np.random.default_rng(seed)).values


class TestMarginal:
    def test_identical_sets_zero(self):
        x = sines(100, 0)
        assert marginal_score(x, x.copy()) == 0.0

    def test_symmetry(self):
        a, b = sines(100, 1), sines(100, 2)
        assert marginal_score(a, b) == pytest.approx(marginal_score(b, a))

    def test_two_bin_point_masses(self):
        # all real mass at 0, all generated mass at 1: with two equal-width
        # bins the densities are [2, 0] vs [0, 2], mean abs difference 2.
        real = np.zeros((10, 3, 1))
        gen = np.ones((10, 3, 1))
        assert marginal_score(real, gen, bins=2) == pytest.approx(2.0)

    def test_rejects_channel_mismatch(self):
        with pytest.raises(ValueError):
            marginal_score(np.zeros((4, 3, 2)), np.zeros((4, 3, 1)))


class TestCorrelational:
    def test_identical_sets_zero(self):
        x = sines(200, 3)
        assert correlational_score(x, x.copy()) == 0.0

    def test_duplicated_channel_construction(self):
        # real: two perfectly correlated channels; gen: exactly orthogonal
        # channels -> off-diagonal difference 1, score (d^2-d)/d^2 = 0.5
        base = np.array([1.0, -1.0, 2.0, -2.0]).reshape(1, 4, 1)
        real = np.concatenate([base, base], axis=2)
        a = np.array([1.0, 1.0, -1.0, -1.0]).reshape(1, 4, 1)
        b = np.array([1.0, -1.0, 1.0, -1.0]).reshape(1, 4, 1)
        gen = np.concatenate([a, b], axis=2)
        assert correlational_score(real, gen) == pytest.approx(0.5)

    def test_affine_invariance(self):
        # positive per-channel rescaling; negative scales would flip signs
        a, b = sines(150, 4), sines(150, 5)
        scaled = b * np.array([2.0, 3.0, 0.5, 10.0, 1.0]) + np.array([1.0, 0.0, -4.0, 2.0, 0.3])
        assert correlational_score(a, b) == pytest.approx(correlational_score(a, scaled), abs=1e-9)

    def test_zero_variance_channel_warns_and_scores(self):
        real = sines(50, 6)
        gen = real.copy()
        gen[..., 0] = 1.0  # constant channel
        with pytest.warns(UserWarning, match="zero-variance"):
            score = correlational_score(real, gen)
        assert np.isfinite(score)


class TestRecurrentScores:
    def test_discriminative_range_and_determinism(self):
        proto = MetricProtocol(seed=0, epochs=2, batch_size=64)
        real, gen = sines(80, 7), sines(80, 8)
        a = discriminative_score(real, gen, proto)
        b = discriminative_score(real, gen, proto)
        assert 0.0 <= a.value <= 0.5
        assert a.value == b.value

    def test_discriminative_separable_case(self):
        proto = MetricProtocol(seed=1, epochs=30, batch_size=32)
        real = sines(128, 9)
        gen = np.full_like(real, 0.25)
        report = discriminative_score(real, gen, proto)
        assert report.value >= 0.25

    def test_discriminative_needs_minimum_sizes(self):
        proto = MetricProtocol(epochs=1)
        with pytest.raises(ValueError):
            discriminative_score(sines(32, 0), sines(80, 1), proto)

    def test_predictive_nonnegative_and_deterministic(self):
        proto = MetricProtocol(seed=2, epochs=2, batch_size=64)
        real, gen = sines(80, 10), sines(80, 11)
        a = predictive_score(real, gen, proto)
        assert a.value >= 0.0
        assert a.value == predictive_score(real, gen, proto).value

    def test_predictive_needs_length_three(self):
        proto = MetricProtocol(epochs=1)
        short = sines(80, 12)[:, :2]
        with pytest.raises(ValueError):
            predictive_score(short, short, proto)

    def test_repeats_populate_std(self):
        proto = MetricProtocol(seed=3, epochs=1, repeats=2, batch_size=64)
        report = discriminative_score(sines(80, 13), sines(80, 14), proto)
        assert report.std >= 0.0
        assert report.protocol["repeats"] == 2


class TestMmdReport:
    def test_identical_zero(self):
        x = sines(64, 15)
        assert abs(mmd_report(x, x.copy())) <= 1e-7

    def test_flattening_matches_manual(self):
        from specflow.mmdflow import mmd2

        a, b = sines(32, 16), sines(32, 17)
        manual = mmd2(a.reshape(32, -1), b.reshape(32, -1), 1.0)
        assert mmd_report(a, b, 1.0) == pytest.approx(manual)


class TestReportLog:
    def test_append_jsonl(self, tmp_path):
        path = tmp_path / "results.jsonl"
        write_report(path, MetricReport("demo", 0.5, 0.1, {"seed": 0}))
        write_report(path, MetricReport("demo2", 1.5, 0.0, {}))
        lines = path.read_text().strip().splitlines()
        assert len(lines) == 2
        first = json.loads(lines[0])
        assert first["name"] == "demo" and first["value"] == 0.5

    def test_rejects_nonfinite_value(self):
        with pytest.raises(ValueError):
            MetricReport("bad", float("nan"), 0.0)
