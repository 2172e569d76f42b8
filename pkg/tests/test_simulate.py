"""Monte Carlo harness: determinism, generators, and the study drivers."""

import math
import os

import numpy as np
import pytest

from lanova.simulate import (
    BernoulliNormal,
    ExpPower,
    Laplace,
    SimConfig,
    bernoulli_normal_grid,
    bias_study,
    exp_power_grid,
    generate_dataset,
    misspecification_study,
    power_agreement_study,
    replicate_rng,
    risk_study,
    special_case_rate_study,
    test_calibration_study as calibration_study,
)


class TestDistributions:
    def test_laplace_moment_oracle(self):
        x = Laplace(1.0).sample(replicate_rng(123, 0), 1_000_000)
        assert x.var() == pytest.approx(1.0, abs=0.01)
        excess = float(((x - x.mean()) ** 4).mean() / x.var() ** 2 - 3.0)
        assert excess == pytest.approx(3.0, abs=0.1)

    def test_laplace_scales_with_variance(self):
        x = Laplace(4.0).sample(replicate_rng(9, 0), 200_000)
        assert x.var() == pytest.approx(4.0, rel=0.03)

    def test_exp_power_reduces_to_laplace_and_normal(self):
        assert ExpPower(1.0, 1.0).excess_kurtosis == pytest.approx(3.0, abs=1e-12)
        assert ExpPower(2.0, 2.0).excess_kurtosis == pytest.approx(0.0, abs=1e-12)

    def test_exp_power_moment_oracle(self):
        # light-tailed member: fourth moments converge fast enough to pin
        dist = ExpPower(1.0, 1.5)
        x = dist.sample(replicate_rng(31, 2), 1_000_000)
        assert x.var() == pytest.approx(1.0, abs=0.01)
        excess = float(((x - x.mean()) ** 4).mean() / x.var() ** 2 - 3.0)
        assert excess == pytest.approx(dist.excess_kurtosis, abs=0.1)
        assert dist.excess_kurtosis == pytest.approx(0.7620, abs=1e-3)

    def test_exp_power_heavy_member_is_heavy(self):
        dist = ExpPower(1.0, 0.5)
        assert dist.excess_kurtosis == pytest.approx(22.2, abs=0.05)
        x = dist.sample(replicate_rng(7, 1), 1_000_000)
        assert x.var() == pytest.approx(1.0, abs=0.03)

    def test_exp_power_validation(self):
        with pytest.raises(ValueError):
            ExpPower(1.0, 0.0)

    def test_bernoulli_normal_moments(self):
        dist = BernoulliNormal(0.25, 2.0)
        assert dist.variance == pytest.approx(0.5)
        assert dist.excess_kurtosis == pytest.approx(9.0)
        x = dist.sample(replicate_rng(5, 0), 400_000)
        assert float((x == 0).mean()) == pytest.approx(0.75, abs=0.005)
        assert x.var() == pytest.approx(0.5, rel=0.03)

    def test_bernoulli_normal_validation(self):
        with pytest.raises(ValueError):
            BernoulliNormal(1.5, 1.0)
        with pytest.raises(ValueError):
            BernoulliNormal(0.0, 1.0).excess_kurtosis


class TestGenerateDataset:
    def test_deterministic(self):
        cfg = SimConfig(dims=(6, 5), c_dist=Laplace(1.0), n_reps=3, seed=42)
        y1, m1, c1 = generate_dataset(cfg, 1)
        y2, m2, c2 = generate_dataset(cfg, 1)
        np.testing.assert_array_equal(y1.values, y2.values)
        np.testing.assert_array_equal(c1.values, c2.values)

    def test_reps_differ(self):
        cfg = SimConfig(dims=(6, 5), c_dist=Laplace(1.0), n_reps=3, seed=42)
        y1, _, _ = generate_dataset(cfg, 0)
        y2, _, _ = generate_dataset(cfg, 1)
        assert not np.array_equal(y1.values, y2.values)

    def test_truth_is_interaction_only(self):
        cfg = SimConfig(dims=(5, 4), c_dist=Laplace(1.0), n_reps=1, seed=0)
        _, m, c = generate_dataset(cfg, 0)
        np.testing.assert_array_equal(m.values, c.values)

    def test_empty_interaction(self):
        cfg = SimConfig(dims=(5, 4), c_dist=BernoulliNormal(0.0, 1.0), n_reps=1, seed=0)
        y, _, c = generate_dataset(cfg, 0)
        np.testing.assert_array_equal(c.values, 0.0)
        assert y.values.std() > 0

    def test_tensor_dims(self):
        cfg = SimConfig(dims=(4, 3, 2), c_dist=Laplace(1.0), n_reps=1, seed=1)
        y, _, _ = generate_dataset(cfg, 0)
        assert y.dims == (4, 3, 2)


class TestReplicateRng:
    def test_keys_give_distinct_streams(self):
        a = replicate_rng(1, 0, 0).normal(size=4)
        b = replicate_rng(1, 0, 1).normal(size=4)
        c = replicate_rng(1, 1, 0).normal(size=4)
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_reproducible(self):
        np.testing.assert_array_equal(
            replicate_rng(3, 2, 1).normal(size=4),
            replicate_rng(3, 2, 1).normal(size=4),
        )


class TestSpecialCaseRates:
    def test_small_design_rates(self):
        cfg = SimConfig(dims=(25, 25), c_dist=Laplace(1.0), n_reps=300, seed=2)
        res = special_case_rate_study(cfg, sigma2_c_grid=(0.5, 1.5))
        assert res.study == "special-cases"
        by_s2c = {row["sigma2_c"]: row for row in res.rows}
        # the 10^4-rep rates are 13.7% and near zero
        assert 0.077 <= by_s2c[0.5]["rate_clipped_c"] <= 0.197
        assert by_s2c[1.5]["rate_clipped_c"] <= 0.02
        # noise-variance clipping is rare but real at stronger signal
        for row in res.rows:
            assert row["rate_clipped_z"] <= 0.05
            assert 0.0 <= row["se_clipped_c"] <= 0.05


class TestCalibration:
    def test_level_small_design(self):
        cfg = SimConfig(dims=(25, 25), c_dist=Laplace(1.0), n_reps=400, seed=3)
        res = calibration_study(cfg, sigma2_c_grid=(1.0,))
        level = res.rows[0]["level"]
        assert 0.04 <= level <= 0.13

    def test_half_alpha_rejects_half(self):
        cfg = SimConfig(dims=(25, 25), c_dist=Laplace(1.0), n_reps=400, seed=4)
        res = calibration_study(cfg, sigma2_c_grid=(1.0,), alpha=0.5)
        assert 0.42 <= res.rows[0]["level"] <= 0.58


class TestBiasStudy:
    def test_matches_closed_form(self):
        cfg = SimConfig(dims=(10, 10), c_dist=Laplace(1.0), n_reps=2000, seed=3)
        res = bias_study(cfg)
        row = res.rows[0]
        dev = abs(row["observed_mean"] - row["predicted_mean"])
        assert dev <= 3.0 * row["se"]
        assert row["predicted_mean"] < 1.0

    def test_requires_laplace(self):
        cfg = SimConfig(dims=(10, 10), c_dist=BernoulliNormal(0.5, 1.0), n_reps=10)
        with pytest.raises(ValueError):
            bias_study(cfg)


class TestPowerAgreement:
    def test_rows_and_coherence(self):
        # coarse coherence only; the tight comparison against the
        # closed forms lives in the acceptance suite
        cfg = SimConfig(dims=(20, 20), c_dist=Laplace(1.0), n_reps=200, seed=5)
        res = power_agreement_study(cfg)
        assert res.study == "power-agreement"
        assert len(res.rows) == 5
        by_phi = {}
        for row in res.rows:
            assert 0.0 <= row["empirical"] <= 1.0
            assert 0.0 < row["theoretical"] < 1.0
            assert row["cells"] == 400
            assert abs(row["empirical"] - row["theoretical"]) < 0.2
            if row["dist"] == "laplace":
                by_phi[row["phi2"]] = row["empirical"]
        assert by_phi[2.0] > by_phi[0.5]


class TestRiskStudy:
    def test_orderings_and_structure(self):
        cfg = SimConfig(dims=(25, 25), c_dist=Laplace(1.0), n_reps=60, seed=11)
        grid = (BernoulliNormal(0.1, 0.5), BernoulliNormal(0.9, 2.0))
        table = risk_study(cfg, grid)
        assert table.labels[0] == "lanova"
        sparse, dense = table.points
        # sparse weak interactions: the penalized fit beats keeping Y
        assert sparse.mse["lanova"] < sparse.mse["mle"]
        assert sparse.mse["lanova"] < sparse.mse["low_rank_1"]
        assert sparse.mse["lanova"] < sparse.mse["low_rank_5"]
        # dense strong interactions: it beats discarding them
        assert dense.mse["lanova"] < dense.mse["additive"]
        for point in table.points:
            for label in table.labels:
                assert point.mse[label] >= 0.0
                assert point.se[label] > 0.0
            for label in table.labels[1:]:
                want = math.log(point.mse[label] / point.mse["lanova"])
                assert table.log_relative_risk(point, label) == pytest.approx(want)
        rows = table.rows
        assert len(rows) == 2
        assert set(table.fieldnames) == set(rows[0])

    def test_deterministic_and_thread_invariant(self):
        cfg = SimConfig(dims=(15, 15), c_dist=Laplace(1.0), n_reps=20, seed=7)
        grid = (BernoulliNormal(0.3, 1.0),)
        first = risk_study(cfg, grid)
        again = risk_study(cfg, grid)
        assert first.points[0].mse == again.points[0].mse
        old = os.environ.get("LANOVA_THREADS")
        os.environ["LANOVA_THREADS"] = "4"
        try:
            threaded = risk_study(cfg, grid)
        finally:
            if old is None:
                del os.environ["LANOVA_THREADS"]
            else:
                os.environ["LANOVA_THREADS"] = old
        assert first.points[0].mse == threaded.points[0].mse
        assert first.points[0].se == threaded.points[0].se


class TestMisspecification:
    def test_ratio_approaches_kurtosis_limit(self):
        cfg = SimConfig(dims=(120, 120), c_dist=Laplace(1.0), n_reps=10, seed=5)
        res = misspecification_study(
            cfg, (ExpPower(1.0, 0.5), BernoulliNormal(0.5, 1.0))
        )
        for row in res.rows:
            assert row["median_ratio"] == pytest.approx(
                row["predicted_ratio"], rel=0.15
            )
        preds = [row["predicted_ratio"] for row in res.rows]
        assert preds[0] == pytest.approx(math.sqrt(22.2 / 3.0), abs=1e-3)
        assert preds[1] == pytest.approx(1.0, abs=1e-12)

    def test_rejects_normal_tails(self):
        cfg = SimConfig(dims=(20, 20), c_dist=Laplace(1.0), n_reps=5, seed=0)
        with pytest.raises(ValueError):
            misspecification_study(cfg, (BernoulliNormal(1.0, 1.0),))


class TestGrids:
    def test_bernoulli_normal_grid(self):
        grid = bernoulli_normal_grid()
        assert len(grid) == 33
        pis = sorted({d.pi_c for d in grid})
        assert pis == [round(0.1 * k, 1) for k in range(11)]
        assert sorted({d.tau2_c for d in grid}) == [0.5, 1.0, 2.0]

    def test_exp_power_grid(self):
        grid = exp_power_grid()
        assert len(grid) == 30
        qs = sorted({d.q_c for d in grid})
        assert qs == [0.1, 0.3, 0.5, 0.7, 0.9, 1.1, 1.3, 1.5, 1.7, 1.9]
