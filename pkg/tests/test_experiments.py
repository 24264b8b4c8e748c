import numpy as np
import pytest

from cfplace.experiments import (
    EXPERIMENT3_METHODS,
    PRESET_CONSTANT_C,
    evaluate,
    experiment1,
    experiment4,
    improvement_rows,
    improvements_csv,
    place,
    preset_config,
    stream_seed,
    training_users,
)
from cfplace.scenario import ConfigError, load_config


def quick(name, **kw):
    base = dict(mc_iterations=40, repair_mc_iterations=20, num_users_placement=400)
    base.update(kw)
    cfg = preset_config(name, **base)
    return cfg.with_overrides(restarts=2)


class TestStreams:
    def test_distinct_and_stable(self):
        assert stream_seed(1, "eval") == stream_seed(1, "eval")
        assert len({stream_seed(1, "eval"), stream_seed(1, "repair"), stream_seed(2, "eval")}) == 3

    def test_unknown_stream(self):
        with pytest.raises(KeyError):
            stream_seed(1, "other")

    def test_training_users_follow_seed(self):
        cfg = quick("experiment1")
        np.testing.assert_array_equal(training_users(cfg), training_users(cfg))
        assert not np.array_equal(training_users(cfg), training_users(cfg.with_overrides(seed=2)))


class TestPresets:
    @pytest.mark.parametrize("name", ["experiment1", "experiment2", "experiment3", "experiment4"])
    def test_preset_matches_shipped_config(self, name):
        from pathlib import Path

        path = Path(__file__).resolve().parents[1] / "configs" / f"{name}.json"
        assert load_config(path).digest() == preset_config(name).digest()
        assert preset_config(name).channel.constant_c == PRESET_CONSTANT_C

    def test_unknown(self):
        with pytest.raises(ConfigError):
            preset_config("experiment9")

    def test_experiment4_needs_mismatch(self):
        with pytest.raises(ConfigError):
            experiment4(quick("experiment4", mismatch_density=None))


class TestPlace:
    def test_refined_methods_share_base(self):
        cfg = quick("experiment3", num_users_placement=200)
        cfg = cfg.with_overrides(ascent=cfg.ascent.__class__(max_iters=5, tail_fraction=0.1))
        out = place(cfg, ["lloyd", "lloyd+maxsum", "lloyd+maxmin"])
        assert list(out) == ["lloyd", "lloyd+maxsum", "lloyd+maxmin"]
        assert out["lloyd+maxsum"].info["start"] == "lloyd"
        assert out["lloyd+maxmin"].info["best_objective"] >= out["lloyd+maxmin"].info["start_objective"]
        for o in out.values():
            assert o.placement.shape == (32, 2)

    def test_pdfvq_info(self):
        out = place(quick("experiment1"), ["pdfvq"])["pdfvq"]
        levels = np.array(out.info["integer_levels"])
        assert np.prod(levels, axis=1).sum() == len(out.placement) <= 32

    def test_mse_repair_is_deterministic(self):
        cfg = quick("experiment1", repair_score="mse")
        a = place(cfg, ["pdfvq"])["pdfvq"].placement
        np.testing.assert_array_equal(a, place(cfg, ["pdfvq"])["pdfvq"].placement)

    def test_methods_listed(self):
        assert len(EXPERIMENT3_METHODS) == 9


@pytest.fixture(scope="module")
def result():
    return experiment1(quick("experiment1"))


class TestExperiments:
    def test_rows(self, result):
        assert {r["method"] for r in result.improvements} == {"tsvq", "pdfvq"}
        assert len(result.improvements) == 2 * len(result.config.power_grid_db)
        row = result.improvement("tsvq")
        assert row["rho_r_db"] == result.config.top_power_db

    def test_same_eval_stream_for_every_method(self, result):
        assert len({r.seed for r in result.reports.values()}) == 1

    def test_evaluate_reproducible(self, result):
        cfg = result.config
        rep = evaluate(cfg, result.placements["lloyd"].placement)
        np.testing.assert_array_equal(rep.sum_rate, result.reports["lloyd"].sum_rate)

    def test_csv(self, result):
        text = improvements_csv(result.improvements)
        assert text.splitlines()[0] == "method,baseline,rho_r_db,sum_rate_improvement_pct,likely95_improvement_pct"

    def test_self_improvement_zero(self, result):
        rep = result.reports["lloyd"]
        rows = improvement_rows(rep, rep, "lloyd", "lloyd")
        assert all(r["sum_rate_improvement_pct"] == 0.0 for r in rows)

    def test_experiment4_keys(self):
        res = experiment4(quick("experiment4"))
        assert set(res.reports) == {"pdfvq[A]@A", "pdfvq[A]@B", "pdfvq[B]@B"}
        assert {r["baseline"] for r in res.improvements} == {"pdfvq[B]@B", "pdfvq[A]@A"}
