import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfplace.channel import ChannelParams
from cfplace.metrics import (
    RateReport,
    asymptotic_rates,
    canonical_order,
    compare_reports,
    evaluate_placement,
    improvement_ratio,
    rate_percentile,
)
from cfplace.scenario import UserDensity, experiment1_density

PARAMS = ChannelParams(constant_c=1e4)
DENSITY = UserDensity.from_arrays([1.0], [[0.0, 0.0]], [np.eye(2) * 100.0 ** 2])
GRID = np.array([[x, y] for x in (-150.0, -50.0, 50.0, 150.0) for y in (-150.0, -50.0, 50.0, 150.0)])


def run(placement=GRID, mc=200, seed=3, powers=(0.0, 20.0), **kw):
    return evaluate_placement(placement, DENSITY, PARAMS, 4, powers, mc, seed, **kw)


class TestPercentile:
    def test_hand_values(self):
        assert rate_percentile([1.0, 2.0, 3.0, 4.0, 5.0], 0.05) == pytest.approx(1.2)
        assert rate_percentile([7.0], 0.05) == 7.0

    def test_uniform_quantile(self):
        x = np.random.default_rng(0).random(200_000)
        assert rate_percentile(x, 0.05) == pytest.approx(0.05, abs=2e-3)

    @pytest.mark.parametrize("q", [0.0, 1.0, -0.1])
    def test_bad_quantile(self, q):
        with pytest.raises(ValueError):
            rate_percentile([1.0, 2.0], q)

    def test_empty(self):
        with pytest.raises(ValueError):
            rate_percentile([], 0.05)


class TestImprovement:
    def test_value(self):
        assert improvement_ratio(110.0, 100.0) == pytest.approx(10.0)

    def test_sign_antisymmetry(self):
        assert np.sign(improvement_ratio(3.0, 2.0)) == -np.sign(improvement_ratio(2.0, 3.0))
        assert improvement_ratio(2.0, 2.0) == 0.0

    def test_nonpositive_baseline(self):
        with pytest.raises(ValueError):
            improvement_ratio(1.0, 0.0)

    def test_compare_reports_rows(self):
        a, b = run(seed=1), run(seed=2)
        rows = compare_reports(a, b)
        assert [r["rho_r_db"] for r in rows] == [0.0, 20.0]
        assert compare_reports(a, a)[0]["sum_rate_improvement_pct"] == 0.0


class TestEvaluate:
    def test_shapes_and_units(self):
        rep = run()
        assert rep.sum_rate.shape == rep.likely95_rate.shape == (2,)
        assert rep.rates.shape == (200, 4, 2)
        assert np.all(rep.sum_rate > 0) and np.all(np.diff(rep.sum_rate) > 0)
        assert np.all(rep.likely95_rate <= rep.sum_rate / 4)

    def test_seeded_reproducible(self):
        a, b = run(), run()
        np.testing.assert_array_equal(a.sum_rate, b.sum_rate)
        np.testing.assert_array_equal(a.likely95_rate, b.likely95_rate)

    def test_ap_permutation_invariant(self):
        perm = np.random.default_rng(5).permutation(len(GRID))
        np.testing.assert_array_equal(run().sum_rate, run(GRID[perm]).sum_rate)

    def test_low_power_is_linear(self):
        rep = run(powers=(-110.0, -100.0))
        assert rep.sum_rate[1] / rep.sum_rate[0] == pytest.approx(10.0, rel=1e-3)

    def test_more_trials_agree_within_three_stderr(self):
        a = run(mc=400, seed=11)
        b = run(mc=800, seed=12)
        se = np.hypot(a.stderr_sum, b.stderr_sum)
        assert np.all(np.abs(a.sum_rate - b.sum_rate) < 3 * se)

    def test_per_user_mode(self):
        rep = run(mc=100, likely95_mode="per_user", fading_per_drop=8)
        assert rep.likely95_mode == "per_user"
        assert np.all(rep.likely95_rate > 0)

    def test_too_few_aps(self):
        with pytest.raises(ValueError):
            run(placement=GRID[:3])

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            run(likely95_mode="median")

    def test_sum_rate_below_asymptotic_bound(self):
        rep = run(mc=400, powers=(20.0,))
        users = np.random.default_rng(0).multivariate_normal([0, 0], np.eye(2) * 1e4, size=20_000)
        bound = 4 * asymptotic_rates(GRID, users, PARAMS, 100.0).mean()
        assert rep.sum_rate[0] < bound


class TestReportIO:
    def test_roundtrip(self):
        rep = run(mc=50)
        back = RateReport.from_dict(json.loads(rep.to_json(include_samples=True)))
        np.testing.assert_array_equal(back.sum_rate, rep.sum_rate)
        np.testing.assert_allclose(back.rates, rep.rates)

    def test_csv_header(self):
        assert run(mc=20).to_csv().splitlines()[0] == "rho_r_db,sum_rate,likely95_rate,stderr_sum,stderr_95"

    def test_at(self):
        rep = run(mc=20)
        assert rep.at(20.0)["sum_rate"] == rep.sum_rate[1]


def test_canonical_order():
    q = np.array([[1.0, 2.0], [0.0, 5.0], [1.0, -1.0]])
    np.testing.assert_array_equal(canonical_order(q), [[0.0, 5.0], [1.0, -1.0], [1.0, 2.0]])


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0.0, 50.0), min_size=2, max_size=200), st.floats(0.01, 0.99))
def test_percentile_matches_sorted_interpolation(xs, q):
    s = np.sort(xs)
    h = (len(s) - 1) * q
    lo = int(np.floor(h))
    hi = min(lo + 1, len(s) - 1)
    expected = s[lo] + (h - lo) * (s[hi] - s[lo])
    assert rate_percentile(xs, q) == pytest.approx(expected, abs=1e-9)


def test_experiment_density_runs():
    rep = evaluate_placement(GRID, experiment1_density(), PARAMS, 4, [10.0], 20, 0, keep_samples=False)
    assert rep.rates is None
