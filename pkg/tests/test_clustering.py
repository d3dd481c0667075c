"""Similarity scoring and cluster extraction against independent oracles."""

import numpy as np
import pytest

from emupipe import (
    UNDEFINED,
    Cluster,
    ModelRun,
    cluster_for_run,
    extract_clusters,
    group_runs,
    min_output_correlation,
    pearson,
    score_group,
)
from emupipe.errors import LengthMismatch, NoRuns

from conftest import make_run


class TestPearson:
    def test_matches_numpy_corrcoef(self):
        rng = np.random.default_rng(60)
        for _ in range(50):
            a = rng.normal(size=rng.integers(2, 200))
            b = rng.normal(size=len(a)) + 0.5 * a
            assert pearson(a, b) == pytest.approx(np.corrcoef(a, b)[0, 1], abs=1e-12)

    def test_perfect_and_inverse(self):
        a = np.array([1.0, 2.0, 3.0, 4.0])
        assert pearson(a, 3 * a + 1) == 1.0
        assert pearson(a, -a) == -1.0

    def test_undefined_cases(self):
        assert pearson([1.0], [2.0]) is None
        assert pearson([], []) is None
        assert pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0]) is None
        assert pearson([1.0, 2.0, 3.0], [5.0, 5.0, 5.0]) is None

    def test_result_clipped_to_valid_range(self):
        # numerically r can creep past 1; the result must not
        a = np.array([1.0, 1.0 + 1e-15, 1.0 + 2e-15])
        r = pearson(a, a)
        assert r is not None and -1.0 <= r <= 1.0

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            pearson([1.0, 2.0], [1.0, 2.0, 3.0])


class TestMinOutputCorrelation:
    def test_is_the_minimum_over_variables(self, short_split):
        a = make_run("a", n_days=400, seed=61)
        b = make_run("b", n_days=400, seed=61)
        outputs = {k: v.copy() for k, v in b.outputs.items()}
        outputs["soil_loss"] = outputs["soil_loss"][::-1].copy()
        object.__setattr__(b, "outputs", outputs)
        lo, hi = a.dates[0], a.dates[-1]
        score = min_output_correlation(a, b, (lo, hi))
        per_var = [pearson(a.outputs[v], b.outputs[v]) for v in a.outputs]
        assert score == pytest.approx(min(per_var))

    def test_identical_runs_score_one(self):
        a = make_run("a", n_days=300, seed=62)
        assert min_output_correlation(a, a, (a.dates[0], a.dates[-1])) == 1.0

    def test_restricted_to_shared_training_days(self):
        a = make_run("a", n_days=200, seed=63, start="2000-01-01")
        b = make_run("b", n_days=200, seed=63, start="2000-03-01")
        # identical seeds but offset dates: only the overlap is compared,
        # where the series differ, so the score is below 1
        score = min_output_correlation(a, b, ("2000-01-01", "2000-12-31"))
        assert score is not None and score < 0.999

    def test_disjoint_windows_undefined(self):
        a = make_run("a", n_days=30, seed=64, start="2000-01-01")
        b = make_run("b", n_days=30, seed=64, start="2001-01-01")
        assert min_output_correlation(a, b, ("2000-01-01", "2001-12-31")) is None

    def test_constant_variable_undefined(self):
        a = make_run("a", n_days=50, seed=65)
        b = make_run("b", n_days=50, seed=66)
        outputs = {k: v.copy() for k, v in b.outputs.items()}
        outputs["Nleached"][:] = 0.0
        object.__setattr__(b, "outputs", outputs)
        assert min_output_correlation(a, b, (a.dates[0], a.dates[-1])) is None


class TestGrouping:
    def test_management_fields_do_not_split_groups(self):
        runs = [make_run("a", 10, 1, fertiliser_management=0),
                make_run("b", 10, 2, fertiliser_management=1,
                         pesticide_management=3, soil_management=2,
                         millmud_management=1)]
        groups = group_runs(runs)
        assert len(groups) == 1

    def test_non_management_fields_do_split(self):
        runs = [make_run("a", 10, 1),
                make_run("b", 10, 2, soil_type="clay"),
                make_run("c", 10, 3, planting_year=1999),
                make_run("d", 10, 4, conductivity=7)]
        assert len(group_runs(runs)) == 4

    def test_empty_rejected(self):
        with pytest.raises(NoRuns):
            group_runs([])


def chained_run(run_id, base, wiggle_seed, noise):
    """A run correlated with `base` in all outputs, degraded by noise."""
    rng = np.random.default_rng(wiggle_seed)
    outputs = {}
    for var, col in base.outputs.items():
        col = col * rng.uniform(0.5, 2.0) + noise * rng.normal(size=len(col)) * col.std()
        outputs[var] = np.abs(col)
    return ModelRun(run_id=run_id, key=base.key, dates=base.dates,
                    forcings=base.forcings, outputs=outputs)


class TestExtractClusters:
    def test_matches_union_find_oracle_on_random_groups(self, short_split):
        rng = np.random.default_rng(67)
        for trial in range(25):
            base = make_run("r00", n_days=4 * 365, seed=100 + trial)
            n = int(rng.integers(2, 8))
            runs = [base] + [
                chained_run(f"r{i:02d}", base, rng.integers(1 << 30),
                            noise=float(rng.uniform(0.0, 3.0)))
                for i in range(1, n)]
            threshold = float(rng.uniform(0.2, 0.99))

            clusters = extract_clusters(runs, threshold, split=short_split)

            matrix = score_group(runs, short_split.range_for("train"))
            parent = list(range(n))

            def find(i):
                while parent[i] != i:
                    parent[i] = parent[parent[i]]
                    i = parent[i]
                return i

            for i in range(n):
                for j in range(i + 1, n):
                    if matrix.values[i, j] != UNDEFINED and matrix.values[i, j] >= threshold:
                        parent[find(i)] = find(j)
            oracle = {}
            for i in range(n):
                oracle.setdefault(find(i), set()).add(matrix.run_ids[i])
            got = {frozenset(c.run_ids) for c in clusters}
            assert got == {frozenset(s) for s in oracle.values()}, f"trial {trial}"

    def test_every_run_in_exactly_one_cluster(self, archive, short_split):
        clusters = extract_clusters(archive, 0.95, split=short_split)
        seen = [rid for c in clusters for rid in c.run_ids]
        assert sorted(seen) == sorted(r.run_id for r in archive)

    def test_proportional_plans_cluster_together(self, archive, short_split):
        clusters = extract_clusters(archive, 0.95, split=short_split)
        by_run = {rid: c.cluster_id for c in clusters for rid in c.run_ids}
        for soil in ("loam", "clay"):
            assert by_run[f"{soil}_m0"] == by_run[f"{soil}_m1"] == by_run[f"{soil}_m2"]
            assert by_run[f"{soil}_m5"] != by_run[f"{soil}_m0"]

    def test_threshold_one_isolates_non_identical_runs(self, short_split):
        base = make_run("a", n_days=4 * 365, seed=68)
        other = chained_run("b", base, 69, noise=0.5)
        clusters = extract_clusters([base, other], 1.0, split=short_split)
        assert sorted(len(c.run_ids) for c in clusters) == [1, 1]

    def test_clique_mode_is_at_least_as_fine(self, short_split):
        rng = np.random.default_rng(70)
        base = make_run("r0", n_days=4 * 365, seed=71)
        runs = [base] + [chained_run(f"r{i}", base, rng.integers(1 << 30),
                                     noise=float(rng.uniform(0, 2)))
                         for i in range(1, 7)]
        for threshold in (0.3, 0.6, 0.9):
            comp = extract_clusters(runs, threshold, split=short_split)
            cliq = extract_clusters(runs, threshold, split=short_split, mode="clique")
            assert len(cliq) >= len(comp)
            comp_of = {rid: c.cluster_id for c in comp for rid in c.run_ids}
            for c in cliq:
                assert len({comp_of[rid] for rid in c.run_ids}) == 1

    def test_cluster_ids_deterministic(self, archive, short_split):
        a = extract_clusters(archive, 0.9, split=short_split)
        b = extract_clusters(archive, 0.9, split=short_split)
        assert [c.to_dict() for c in a] == [c.to_dict() for c in b]

    def test_bad_threshold_and_mode(self, archive, short_split):
        with pytest.raises(ValueError, match="threshold"):
            extract_clusters(archive, 1.5, split=short_split)
        with pytest.raises(ValueError, match="mode"):
            extract_clusters(archive, 0.9, split=short_split, mode="loose")

    def test_runs_never_cross_group_boundaries(self, archive, short_split):
        # even at a threshold that links everything, soils stay apart
        clusters = extract_clusters(archive, -1.0, split=short_split)
        for cluster in clusters:
            soils = {rid.split("_")[0] for rid in cluster.run_ids}
            assert len(soils) == 1

    def test_cluster_for_run(self, archive, short_split):
        clusters = extract_clusters(archive, 0.95, split=short_split)
        assert "loam_m0" in cluster_for_run(clusters, "loam_m0").run_ids
        with pytest.raises(KeyError):
            cluster_for_run(clusters, "nope")

    def test_dict_round_trip(self, archive, short_split):
        cluster = extract_clusters(archive, 0.95, split=short_split)[0]
        assert Cluster.from_dict(cluster.to_dict()) == cluster


class TestScoreMatrix:
    def test_symmetric_unit_diagonal(self, archive, short_split):
        group = [r for r in archive if r.run_id.startswith("loam")]
        matrix = score_group(group, short_split.range_for("train"))
        np.testing.assert_array_equal(matrix.values, matrix.values.T)
        np.testing.assert_array_equal(np.diag(matrix.values), 1.0)

    def test_score_lookup_and_sentinel(self, short_split):
        a = make_run("a", n_days=400, seed=72)
        b = make_run("b", n_days=400, seed=73)
        outputs = {k: v.copy() for k, v in b.outputs.items()}
        outputs["runoff"][:] = 0.0
        object.__setattr__(b, "outputs", outputs)
        matrix = score_group([a, b], (a.dates[0], a.dates[-1]))
        assert matrix.score("a", "b") is None
        assert matrix.values[0, 1] == UNDEFINED
        assert matrix.score("a", "a") == 1.0
