import numpy as np
import pytest

from app.core.info_theory import mutual_info
from app.core.model import CondTable, posterior_from_xz
from app.core.oracle import (
    PAYOFF_CLASSIFIERS,
    PAYOFF_GENERATORS,
    TinyInstance,
    game_value_bounds,
    mechanism_bayes_error,
    mechanism_distortion,
    optimal_bayes_mechanism,
    payoff_tables_demo,
    solve,
    square_instance,
    two_point_instance,
)
from app.errors import ContractError
from app.utils.rng import SeedFanout


def hexagon_instance(L):
    angles = np.arange(6) * np.pi / 3
    return TinyInstance(locations=np.column_stack([100 * np.cos(angles), 100 * np.sin(angles)]),
                        prior=(1 / 6,) * 6, assignment=tuple(range(6)), L=L)


def triangle_instance(L=30.0):
    return TinyInstance(locations=[[0, 0], [100, 0], [0, 100]], prior=(0.5, 0.3, 0.2), assignment=(0, 1, 2), L=L)


class TestInstances:
    """Tiny instance construction."""

    def test_two_point_data_model(self):
        inst = two_point_instance()
        np.testing.assert_array_equal(inst.data_model(), np.diag([0.5, 0.5]))
        assert inst.distances()[0, 1] == pytest.approx(100.0)

    def test_square_distances(self):
        d = square_instance().distances()
        assert d[0, 1] == pytest.approx(300.0)
        assert d[0, 2] == pytest.approx(300.0 * np.sqrt(2))

    def test_shared_location(self):
        inst = TinyInstance(locations=[[0, 0], [50, 0]], prior=(0.25, 0.25, 0.5), assignment=(0, 0, 1), L=0.0)
        np.testing.assert_allclose(inst.location_prior().probs, [0.5, 0.5])

    def test_at_most_six_locations(self):
        with pytest.raises(ValueError):
            TinyInstance(locations=np.zeros((7, 2)), prior=(1.0,), assignment=(0,), L=1.0)

    def test_prior_and_assignment_are_checked(self):
        with pytest.raises(ValueError):
            TinyInstance(locations=[[0, 0]], prior=(0.5, 0.6), assignment=(0, 0), L=1.0)
        with pytest.raises(ValueError):
            TinyInstance(locations=[[0, 0]], prior=(1.0,), assignment=(1,), L=1.0)


class TestTwoPoint:
    """Two individuals 100 m apart."""

    def test_optimal_mechanism_swaps_two_fifths(self):
        mech, error = optimal_bayes_mechanism(two_point_instance(L=40.0))
        assert error == pytest.approx(0.4, abs=1e-9)
        np.testing.assert_allclose(mech.matrix, [[0.6, 0.4], [0.4, 0.6]], atol=1e-9)

    def test_budget_is_respected(self):
        inst = two_point_instance(L=40.0)
        mech, _ = optimal_bayes_mechanism(inst)
        assert mechanism_distortion(inst, mech.matrix) <= 40.0 + 1e-9

    @pytest.mark.parametrize("L", [50.0, 80.0, 1000.0])
    def test_large_budget_reaches_chance(self, L):
        assert optimal_bayes_mechanism(two_point_instance(L=L))[1] == pytest.approx(0.5, abs=1e-9)

    def test_zero_budget_is_the_identity(self):
        mech, error = optimal_bayes_mechanism(two_point_instance(L=0.0))
        assert error == 0.0
        np.testing.assert_array_equal(mech.matrix, np.eye(2))

    @pytest.mark.parametrize("method", ["lp", "ascent"])
    def test_other_solvers_agree(self, method):
        result = solve(two_point_instance(L=40.0), method=method, restarts=4)
        assert result.bayes_error == pytest.approx(0.4, abs=1e-2)
        assert result.distortion_m <= 40.0 + 1e-6
        assert result.method == method

    def test_negative_budget(self):
        with pytest.raises(ContractError):
            optimal_bayes_mechanism(two_point_instance(L=-1.0))

    def test_bad_resolution(self):
        with pytest.raises(ContractError):
            optimal_bayes_mechanism(two_point_instance(), resolution=0.0)


class TestLargerInstances:
    """Square, triangle and hexagon instances."""

    def test_square_budget_value(self):
        _, error = optimal_bayes_mechanism(square_instance(L=173.0), method="lp")
        assert error == pytest.approx(173.0 / 300.0, abs=1e-6)

    def test_square_generous_budget(self):
        _, error = optimal_bayes_mechanism(square_instance(L=1e4), method="lp")
        assert error == pytest.approx(0.75, abs=1e-9)

    def test_hexagon_generous_budget(self):
        _, error = optimal_bayes_mechanism(hexagon_instance(L=1e4), method="lp")
        assert error == pytest.approx(5 / 6, abs=1e-9)

    @pytest.mark.slow
    def test_ascent_is_close_to_the_linear_programme(self):
        inst = square_instance(L=173.0)
        mech, error = optimal_bayes_mechanism(inst, method="ascent", restarts=8, fanout=SeedFanout(0), workers=2)
        assert error == pytest.approx(173.0 / 300.0, abs=0.03)
        assert mechanism_distortion(inst, mech.matrix) <= 173.0 + 1e-6

    def test_auto_picks_ascent_for_four_locations(self):
        result = solve(square_instance(L=1e4), restarts=2)
        assert result.bayes_error <= 0.75 + 1e-9

    def test_lattice_matches_the_linear_programme(self):
        inst = triangle_instance()
        lattice, lattice_error = optimal_bayes_mechanism(inst, method="lattice", resolution=0.1)
        _, lp_error = optimal_bayes_mechanism(inst, method="lp")
        assert lattice_error <= lp_error + 1e-9
        assert lattice_error >= lp_error - 0.1
        assert mechanism_distortion(inst, lattice.matrix) <= inst.L + 1e-9

    def test_lattice_refuses_huge_searches(self):
        with pytest.raises(ContractError):
            optimal_bayes_mechanism(square_instance(), method="lattice")

    def test_value_bounds(self):
        error, mi = game_value_bounds(two_point_instance(L=40.0))
        assert error == pytest.approx(0.4, abs=1e-9)
        assert mi >= 0.0
        error, _ = game_value_bounds(square_instance(L=1e4))
        assert error == pytest.approx(0.75, abs=1e-9)

    def test_bayes_error_of_a_given_mechanism(self):
        inst = two_point_instance()
        assert mechanism_bayes_error(inst, np.full((2, 2), 0.5)) == pytest.approx(0.5)
        assert mechanism_distortion(inst, np.full((2, 2), 0.5)) == pytest.approx(50.0)


class TestPayoffTables:
    """Deterministic strategies of the two-user game."""

    def test_table_shapes(self):
        tables = payoff_tables_demo()
        assert set(tables) == {"success", "mi_bits", "one_minus_bayes"}
        for frame in tables.values():
            assert list(frame.index) == list(PAYOFF_GENERATORS)
            assert list(frame.columns) == list(PAYOFF_CLASSIFIERS)

    def test_values(self):
        tables = payoff_tables_demo()
        success, mi, one_minus_bayes = tables["success"], tables["mi_bits"], tables["one_minus_bayes"]

        assert success.loc["identity", "identity"] == 1.0
        assert success.loc["identity", "swap"] == 0.0
        assert success.loc["swap", "swap"] == 1.0
        assert success.loc["collapse-a", "identity"] == 0.5
        assert mi.loc["identity", "identity"] == pytest.approx(1.0)
        assert mi.loc["identity", "swap"] == pytest.approx(1.0)
        assert mi.loc["collapse-b", "swap"] == pytest.approx(0.0)
        assert one_minus_bayes.loc["identity", "swap"] == pytest.approx(1.0)
        assert one_minus_bayes.loc["collapse-a", "all-B"] == pytest.approx(0.5)

    def test_success_is_never_above_one_minus_bayes(self):
        tables = payoff_tables_demo()
        assert (tables["success"] <= tables["one_minus_bayes"] + 1e-12).all().all()


def feasible_random_mechanism(inst, rng):
    """A random row-stochastic matrix pulled towards the identity until it meets the budget."""
    noise = CondTable.from_unnormalized(rng.random((inst.num_locations, inst.num_locations))).matrix
    cost = mechanism_distortion(inst, noise)
    weight = 1.0 if cost <= inst.L else inst.L / cost
    return weight * noise + (1 - weight) * np.eye(inst.num_locations)


class TestOptimalityConditions:
    """What every optimum of a tiny instance satisfies."""

    @pytest.mark.parametrize("L", [10.0, 25.0, 40.0, 49.0, 80.0])
    def test_lattice_optimum_spends_the_budget_or_reaches_chance(self, L):
        inst = two_point_instance(L=L)
        resolution = 1e-3
        mech, error = optimal_bayes_mechanism(inst, resolution=resolution, method="lattice")
        distortion = mechanism_distortion(inst, mech.matrix)
        band = 2 * resolution * inst.distances().max()
        spent = L - band - 1e-9 <= distortion <= L + 1e-9
        assert spent or error == pytest.approx(1 - max(inst.prior), abs=1e-12)

    @pytest.mark.parametrize("inst", [triangle_instance(), square_instance(), hexagon_instance(50.0)],
                             ids=["triangle", "square", "hexagon"])
    def test_exact_optimum_spends_the_budget_or_reaches_chance(self, inst):
        result = solve(inst, method="lp")
        spent = result.distortion_m == pytest.approx(inst.L, abs=1e-4)
        assert spent or result.bayes_error == pytest.approx(1 - max(inst.prior), abs=1e-9)

    @pytest.mark.parametrize("inst", [two_point_instance(L=40.0), triangle_instance(), square_instance()],
                             ids=["two-point", "triangle", "square"])
    def test_posterior_classifier_never_learns_more_than_the_observation(self, inst):
        rng = np.random.default_rng(5)
        optimum, _ = optimal_bayes_mechanism(inst, method="lp")
        candidates = [optimum.matrix] + [feasible_random_mechanism(inst, rng) for _ in range(20)]
        leak_z, leak_y = [], []
        for mech in candidates:
            assert mechanism_distortion(inst, mech) <= inst.L + 1e-6
            joint_xz = inst.data_model() @ mech
            posterior, _ = posterior_from_xz(joint_xz)
            leak_z.append(mutual_info(joint_xz))
            leak_y.append(mutual_info(joint_xz @ posterior.matrix))
        assert all(y <= z + 1e-9 for y, z in zip(leak_y, leak_z))
        assert min(leak_y) <= min(leak_z) + 1e-9
