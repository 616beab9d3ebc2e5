import math

import numpy as np
import pytest
from scipy import stats

from app.core.evaluation import (
    DEFAULT_GRIDS,
    Grid,
    HitTable,
    accuracy_f1,
    argmax_rule_error,
    assign_cell,
    assign_cells,
    bayes_error_grid,
    empirical_distortion,
    evaluate_mechanism,
    monte_carlo_rule_error,
    standard_grids,
)
from app.core.info_theory import bayes_error
from app.core.mechanisms import IdentityObfuscator, LaplaceObfuscator, PlanarLaplace, laplace_sample
from app.core.model import CondTable, Location, Region
from app.errors import ContractError
from app.utils.rng import SeedFanout

REGION = Region(side=6500.0)


class TestGrid:
    """Cell assignment."""

    def test_centre_point(self):
        assert assign_cell(Grid(region=REGION, cells_per_side=13), Location(x=0, y=0)) == 6 * 13 + 6

    def test_interior_boundary_goes_to_the_lower_cell(self):
        grid = Grid(region=REGION, cells_per_side=2)
        assert assign_cell(grid, np.array([0.0, 1.0])) == 2
        assert assign_cell(grid, np.array([0.1, 1.0])) == 3
        assert assign_cell(grid, np.array([1.0, 0.0])) == 1

    def test_rows_follow_y(self):
        grid = Grid(region=REGION, cells_per_side=4)
        cells, _ = assign_cells(grid, [[-3000.0, 3000.0], [3000.0, -3000.0]])
        np.testing.assert_array_equal(cells, [12, 3])

    def test_region_edge_is_not_clamped(self):
        cells, clamped = assign_cells(Grid(region=REGION, cells_per_side=4), [[-3250.0, -3250.0], [3250.0, 3250.0]])
        np.testing.assert_array_equal(cells, [0, 15])

    def test_outside_points_are_clamped_and_counted(self):
        cells, clamped = assign_cells(Grid(region=REGION, cells_per_side=4), [[4000.0, 0.0], [0.0, -9000.0], [0, 0]])
        np.testing.assert_array_equal(cells, [1 * 4 + 3, 1, 5])
        assert clamped == 2

    def test_standard_grids(self):
        grids = standard_grids(REGION)
        assert [g.cells_per_side for g in grids] == list(DEFAULT_GRIDS)
        assert grids[-1].cell_side == pytest.approx(25.0)

    def test_uniform_points_fill_the_cells_uniformly(self):
        rng = np.random.default_rng(21)
        grid = Grid(region=REGION, cells_per_side=13)
        cells = [assign_cell(grid, point) for point in rng.uniform(-3250.0, 3250.0, size=(10_000, 2))]
        counts = np.bincount(cells, minlength=grid.num_cells)
        assert stats.chisquare(counts).pvalue > 0.01


class TestBayesErrorGrid:
    """Bayes error from hit counts."""

    def test_single_cell_with_equal_classes(self):
        assert bayes_error_grid(HitTable(counts=np.array([[5, 5, 5, 5]]))) == pytest.approx(0.75)

    def test_pure_cells(self):
        assert bayes_error_grid(HitTable(counts=np.array([[4, 0], [0, 7], [0, 0]]))) == 0.0

    def test_mixed_cells(self):
        assert bayes_error_grid(HitTable(counts=np.array([[3, 1], [0, 4]]))) == pytest.approx(0.125)

    def test_invariant_to_relabelling(self):
        rng = np.random.default_rng(0)
        counts = rng.integers(0, 10, size=(20, 4))
        base = bayes_error_grid(HitTable(counts=counts))
        assert bayes_error_grid(HitTable(counts=counts[:, rng.permutation(4)])) == pytest.approx(base)
        assert bayes_error_grid(HitTable(counts=counts[rng.permutation(20)])) == pytest.approx(base)

    def test_zero_hits(self):
        with pytest.raises(ContractError):
            bayes_error_grid(HitTable.empty(4, 2))

    def test_from_hits_and_merge(self):
        grid = Grid(region=REGION, cells_per_side=2)
        a = HitTable.from_hits(grid, [[-100, -100], [100, 100]], [0, 1], 2)
        b = HitTable.from_hits(grid, [[-100, -100], [5000, 5000]], [1, 1], 2)
        merged = a.merge(b)
        assert merged.total == 4
        assert merged.clamped == 1
        np.testing.assert_array_equal(merged.counts[0], [1, 1])
        np.testing.assert_array_equal(merged.counts[3], [0, 2])

    def test_merge_shape_mismatch(self):
        with pytest.raises(ContractError):
            HitTable.empty(4, 2).merge(HitTable.empty(4, 3))


class TestEvaluateMechanism:
    """Bayes-error matrices of mechanisms."""

    def test_identity_on_separated_clusters(self, small_splits, fanout):
        frame = evaluate_mechanism(IdentityObfuscator(), small_splits.test, standard_grids(REGION, [260]), [1, 10],
                                   fanout)
        assert frame.index.name == "obf_count"
        assert list(frame.index) == [1, 10]
        assert list(frame.columns) == [260]
        assert frame.loc[10, 260] == 0.0

    def test_single_cell_grid_gives_chance_error(self, small_splits, fanout):
        frame = evaluate_mechanism(IdentityObfuscator(), small_splits.test, standard_grids(REGION, [1]), [3], fanout)
        assert frame.loc[3, 1] == pytest.approx(0.75)

    def test_laplace_counts_are_nested_and_reproducible(self, small_splits):
        mech = LaplaceObfuscator(PlanarLaplace(epsilon="ln2/100"))
        grids = standard_grids(REGION, [13, 65])
        a = evaluate_mechanism(mech, small_splits.test, grids, [5, 2], SeedFanout(4))
        b = evaluate_mechanism(mech, small_splits.test, grids, [2], SeedFanout(4))
        threaded = evaluate_mechanism(mech, small_splits.test, grids, [2, 5], SeedFanout(4), workers=2)

        assert list(a.index) == [2, 5]
        assert a.loc[2, 65] == b.loc[2, 65]
        assert a.equals(threaded)
        assert ((a >= 0.0) & (a <= 0.75)).all().all()
        assert a.attrs["clamped"] == {13: {2: 0, 5: 0}, 65: {2: 0, 5: 0}}

    def test_matches_manual_binning(self, small_splits):
        mech = LaplaceObfuscator(PlanarLaplace(epsilon=0.01))
        data = small_splits.test
        fanout = SeedFanout(8)
        grid = Grid(region=REGION, cells_per_side=65)
        hits = [laplace_sample(mech.mechanism, data.xy, fanout.stream("evaluation", r)) for r in range(3)]
        table = HitTable.from_hits(grid, np.concatenate(hits), np.tile(data.class_ids, 3), data.num_classes)

        frame = evaluate_mechanism(mech, data, [grid], [3], fanout)
        assert frame.loc[3, 65] == pytest.approx(bayes_error_grid(table))

    def test_requires_grids_and_counts(self, small_splits, fanout):
        with pytest.raises(ContractError):
            evaluate_mechanism(IdentityObfuscator(), small_splits.test, [], [1], fanout)
        with pytest.raises(ContractError):
            evaluate_mechanism(IdentityObfuscator(), small_splits.test, standard_grids(REGION, [13]), [0], fanout)


class TestAccuracyF1:
    """Classifier metrics."""

    def test_perfect_predictions(self):
        assert accuracy_f1(np.array([0, 1, 2, 3]), np.array([0, 1, 2, 3])) == (1.0, 1.0)

    def test_constant_prediction(self):
        accuracy, _ = accuracy_f1(np.zeros(8, dtype=int), np.repeat(np.arange(4), 2))
        assert accuracy == 0.25

    def test_hand_computed_confusion(self):
        accuracy, macro_f1 = accuracy_f1(np.array([0, 1, 1, 1, 2, 0]), np.array([0, 0, 1, 1, 2, 2]))
        assert accuracy == pytest.approx(4 / 6)
        assert macro_f1 == pytest.approx((0.5 + 0.8 + 2 / 3) / 3)

    def test_empty_input(self):
        with pytest.raises(ContractError):
            accuracy_f1(np.array([]), np.array([]))


class TestEmpiricalDistortion:
    """Mean displacement in meters."""

    def test_no_displacement(self):
        xy = np.random.default_rng(0).normal(size=(10, 2))
        assert empirical_distortion(xy, xy) == 0.0

    def test_constant_displacement(self):
        w = np.zeros((5, 2))
        z = np.column_stack([np.full(5, 60.0), np.full(5, 80.0)])
        assert empirical_distortion(w, z) == pytest.approx(100.0)

    def test_laplace_mean(self):
        m = PlanarLaplace(epsilon="ln2/180")
        w = np.zeros((100_000, 2))
        z = laplace_sample(m, w, np.random.default_rng(0))
        assert empirical_distortion(w, z) == pytest.approx(519.37, rel=0.02)

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            empirical_distortion(np.zeros((2, 2)), np.zeros((3, 2)))


class TestDecisionRules:
    """Errors of explicit guessing rules."""

    def test_post_processing_cannot_beat_the_observation(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            joint_xz = rng.random((3, 5))
            joint_xz /= joint_xz.sum()
            pred = CondTable.from_unnormalized(rng.random((5, 3)))
            assert bayes_error(joint_xz) <= bayes_error(joint_xz @ pred.matrix) + 1e-9
            assert bayes_error(joint_xz) <= argmax_rule_error(joint_xz, pred) + 1e-9

    def test_map_rule_reaches_the_bayes_error(self):
        joint_xz = np.array([[0.3, 0.1], [0.2, 0.4]])
        posterior = CondTable.from_unnormalized(joint_xz.T)
        assert argmax_rule_error(joint_xz, posterior) == pytest.approx(bayes_error(joint_xz))

    def test_monte_carlo_estimate(self):
        joint_xz = np.array([[0.3, 0.1, 0.05], [0.2, 0.25, 0.1]])
        pred = CondTable(matrix=[[0, 1], [1, 0], [0.5, 0.5]])
        exact = argmax_rule_error(joint_xz, pred)
        estimate = monte_carlo_rule_error(joint_xz, pred, 50_000, np.random.default_rng(1))
        assert estimate == pytest.approx(exact, abs=0.01)
        assert not math.isnan(estimate)

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            argmax_rule_error(np.full((2, 2), 0.25), CondTable.identity(3))
