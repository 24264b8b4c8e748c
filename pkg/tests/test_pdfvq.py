import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfplace import pdfvq
from cfplace.pdfvq import (
    allocation_plan,
    assemble_codebook,
    budget_repair,
    cluster_allocation,
    cluster_spectrum,
    dimension_allocation,
    fixed_point_residual,
    load_codebook_cache,
    lloyd_max_scalar,
    lloyd_max_standard,
    repair_candidates,
    save_codebook_cache,
)
from cfplace.scenario import UserDensity, experiment1_density, experiment2_density, experiment4_densities
from oracles import experiment2_cluster_sums, sample_lloyd_max


def rot(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


class TestAllocation:
    def test_single_cluster_gets_everything(self):
        d = UserDensity.from_arrays([1.0], [[0, 0]], [np.diag([4.0, 1.0])])
        np.testing.assert_allclose(cluster_allocation(d, 18), [18.0])

    def test_experiment1(self):
        counts = cluster_allocation(experiment1_density(), 32)
        np.testing.assert_allclose(counts, [14.85, 8.57, 8.57], atol=0.01)
        plan = allocation_plan(experiment1_density(), 32)
        np.testing.assert_allclose(plan.continuous_levels, [[3.85, 3.85], [2.93, 2.93], [2.93, 2.93]], atol=0.01)

    def test_experiment2_against_hand_oracle(self):
        counts = cluster_allocation(experiment2_density(), 32)
        np.testing.assert_allclose(counts, experiment2_cluster_sums(), rtol=1e-12)
        np.testing.assert_allclose(counts, [14.40, 9.29, 8.31], rtol=0.02)
        assert counts.sum() == pytest.approx(32.0, rel=1e-12)

    def test_experiment2_second_cluster_axes(self):
        spec = cluster_spectrum(experiment2_density().components[1].covariance)
        np.testing.assert_allclose(spec.eigvals, 1e4 * np.array([7 / 3, 2 / 3]), rtol=1e-12)
        np.testing.assert_allclose(spec.eigvals / spec.c, [1.871, 0.535], atol=1e-3)
        b2 = math.log2(cluster_allocation(experiment2_density(), 32)[1])
        bits, levels = dimension_allocation(b2, spec)
        np.testing.assert_allclose(levels, [4.17, 2.23], atol=0.01)
        assert bits.sum() == pytest.approx(b2, rel=1e-12)

    def test_spherical_split_is_even(self):
        bits, levels = dimension_allocation(3.0, cluster_spectrum(25.0 * np.eye(2)))
        np.testing.assert_allclose(bits, [1.5, 1.5])
        assert levels[0] == pytest.approx(levels[1])

    def test_experiment4_plans(self):
        a, b = experiment4_densities()
        for d in (a, b):
            plan = allocation_plan(d, 18)
            assert np.prod(plan.continuous_levels) == pytest.approx(18.0, rel=1e-12)


class TestSpectrum:
    def test_descending_and_sign_convention(self):
        spec = cluster_spectrum(np.array([[1.0, 0.9], [0.9, 3.0]]))
        assert spec.eigvals[0] >= spec.eigvals[1]
        for j in range(2):
            col = spec.eigvecs[:, j]
            assert col[np.flatnonzero(np.abs(col) > 1e-15)[0]] > 0
        np.testing.assert_allclose(spec.eigvecs @ np.diag(spec.eigvals) @ spec.eigvecs.T,
                                   [[1.0, 0.9], [0.9, 3.0]], atol=1e-12)

    def test_spherical_is_identity(self):
        np.testing.assert_array_equal(cluster_spectrum(np.eye(2) * 7).eigvecs, np.eye(2))


class TestLloydMax:
    def test_one_level(self):
        np.testing.assert_array_equal(lloyd_max_scalar(1, 9.0).codepoints, [0.0])

    def test_two_levels(self):
        y = lloyd_max_standard(2)
        np.testing.assert_allclose(y, [-np.sqrt(2 / np.pi), np.sqrt(2 / np.pi)], atol=1e-10)

    def test_four_levels_known_table(self):
        # classical tabulated optimum for N(0, 1), V = 4
        np.testing.assert_allclose(lloyd_max_standard(4), [-1.510, -0.4528, 0.4528, 1.510], atol=1e-3)

    def test_four_levels_against_sample_lloyd(self):
        ref = sample_lloyd_max(4, n=1_000_000, seed=1)
        np.testing.assert_allclose(lloyd_max_standard(4), ref, atol=5e-3)

    @pytest.mark.parametrize("V", [2, 3, 5, 8, 16])
    def test_fixed_point(self, V):
        assert fixed_point_residual(lloyd_max_standard(V)) < 1e-8

    def test_scaling(self):
        np.testing.assert_allclose(lloyd_max_scalar(3, 4.0).codepoints, 2.0 * lloyd_max_standard(3))

    def test_symmetric(self):
        y = lloyd_max_standard(7)
        np.testing.assert_array_equal(y, -y[::-1])

    def test_cache_roundtrip(self, tmp_path):
        p = tmp_path / "lm.json"
        save_codebook_cache(p, max_levels=6)
        doc = json.loads(p.read_text())
        assert doc["format"] == "cfplace-lloyd-max/1"
        assert load_codebook_cache(p) == 6

    def test_cache_regenerated_when_corrupt(self, tmp_path):
        p = tmp_path / "lm.json"
        p.write_text("{not json")
        assert load_codebook_cache(p, max_levels=4) == 0
        assert len(json.loads(p.read_text())["codebooks"]) == 4

    def test_bad_level_count(self):
        with pytest.raises(ValueError):
            lloyd_max_standard(0)


class TestCodebook:
    def test_two_by_two_spherical(self):
        d = UserDensity.from_arrays([1.0], [[10.0, -5.0]], [9.0 * np.eye(2)])
        pl = assemble_codebook(d, [[2, 2]])
        a = 3.0 * np.sqrt(2 / np.pi)
        expected = np.array([[10 - a, -5 - a], [10 - a, -5 + a], [10 + a, -5 - a], [10 + a, -5 + a]])
        np.testing.assert_allclose(pl, expected, atol=1e-9)

    def test_sign_flip_symmetry(self):
        d = UserDensity.from_arrays([1.0], [[0.0, 0.0]], [np.diag([4.0, 1.0])])
        pl = assemble_codebook(d, [[3, 4]])
        key = lambda a: sorted(map(tuple, np.round(a, 9)))  # noqa: E731
        assert key(pl) == key(pl * [-1, 1]) == key(pl * [1, -1])

    def test_rotation_equivariance(self):
        lam = np.diag([9.0, 1.0])
        R = rot(0.3)
        rotated = UserDensity.from_arrays([1.0], [[0, 0]], [R @ lam @ R.T])
        base = UserDensity.from_arrays([1.0], [[0, 0]], [lam])
        spec = cluster_spectrum(rotated.components[0].covariance)
        pl_rot = assemble_codebook(rotated, [[4, 2]])
        pl_base = assemble_codebook(base, [[4, 2]])
        # the rotated spectrum's first axis is R e1 up to the sign convention
        sign = np.sign(spec.eigvecs[:, 0] @ R[:, 0]), np.sign(spec.eigvecs[:, 1] @ R[:, 1])
        mapped = (pl_base * np.array(sign)) @ R.T
        np.testing.assert_allclose(np.sort(pl_rot, axis=0), np.sort(mapped, axis=0), atol=1e-12)

    def test_count_matches_levels(self):
        pl = assemble_codebook(experiment1_density(), [[4, 4], [2, 4], [2, 4]])
        assert pl.shape == (32, 2)


class TestRepair:
    def test_integral_plan_skips_search(self):
        d = UserDensity.from_arrays([1.0], [[0, 0]], [np.eye(2)])
        plan = allocation_plan(d, 4)
        calls = []
        res = budget_repair(plan, d, 4, lambda pl: calls.append(1) or 0.0)
        np.testing.assert_array_equal(res.levels, [[2, 2]])
        assert calls == []

    def test_experiment1_candidates_include_published_choice(self):
        plan = allocation_plan(experiment1_density(), 32)
        cands = [c.tolist() for c in repair_candidates(plan.continuous_levels, 32)]
        assert [[4, 4], [2, 4], [2, 4]] in cands

    def test_experiment2_candidates_include_published_choice(self):
        d = experiment2_density()
        plan = allocation_plan(d, 32)
        # published table: x = (4, 2, 4), y = (4, 4, 2); cluster 2's long axis points mostly along y
        spec = plan.spectra[1]
        assert abs(spec.eigvecs[1, 0]) > abs(spec.eigvecs[0, 0])
        cands = [c.tolist() for c in repair_candidates(plan.continuous_levels, 32)]
        assert [[4, 4], [4, 2], [4, 2]] in cands

    def test_candidates_fit_budget_and_are_maximal(self):
        plan = allocation_plan(experiment2_density(), 32)
        for c in repair_candidates(plan.continuous_levels, 32):
            assert np.prod(c, axis=1).sum() <= 32

    def test_best_score_wins_with_lexicographic_ties(self):
        d = experiment1_density()
        plan = allocation_plan(d, 32)
        res = budget_repair(plan, d, 32, lambda pl: 1.0)
        assert tuple(res.levels.ravel()) == min(k for k, _ in res.candidates)
        res = budget_repair(allocation_plan(d, 32), d, 32, lambda pl: float(len(pl)))
        assert np.prod(res.levels, axis=1).sum() == max(np.prod(np.reshape(k, (-1, 2)), axis=1).sum()
                                                         for k, _ in res.candidates)

    def test_plan_keeps_integer_levels(self):
        d = experiment1_density()
        plan = allocation_plan(d, 32)
        budget_repair(plan, d, 32, lambda pl: -np.abs(pl).sum())
        assert plan.total_aps <= 32
        assert assemble_codebook(d, plan).shape == (plan.total_aps, 2)


@settings(max_examples=40, deadline=None)
@given(
    w=st.lists(st.floats(0.05, 1.0), min_size=1, max_size=4),
    scale=st.floats(0.1, 100.0),
    M=st.integers(4, 64),
)
def test_allocation_identities(w, scale, M):
    w = np.array(w) / np.sum(w)
    rng = np.random.default_rng(len(w) * 1000 + M)
    covs = []
    for _ in w:
        a = rng.normal(size=(2, 2))
        covs.append(a @ a.T + 0.1 * np.eye(2))
    d = UserDensity.from_arrays(w, rng.normal(size=(len(w), 2)) * 100, covs)
    plan = allocation_plan(d, M)
    assert plan.cluster_levels.sum() == pytest.approx(M, rel=1e-9)
    np.testing.assert_allclose(np.prod(plan.continuous_levels, axis=1), plan.cluster_levels, rtol=1e-9)
    np.testing.assert_allclose(plan.dim_bits.sum(axis=1), plan.cluster_bits, rtol=1e-9, atol=1e-12)
    # scaling every covariance leaves the allocation unchanged
    scaled = UserDensity.from_arrays(w, d.means, [scale * c for c in covs])
    np.testing.assert_allclose(allocation_plan(scaled, M).continuous_levels, plan.continuous_levels, rtol=1e-9)
