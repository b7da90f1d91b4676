import math

import numpy as np
import pytest

from hvsim.ensembles import (Ensemble, EnsembleRegistry, SimulationError, Slot, TrajectoryPopulation,
                             VelocityVector, compare_settings, exchange_trajectories, mean_velocity,
                             mean_velocity_se, simulate_trajectories, verify_componentwise_locality,
                             verify_velocity_invariance)
from hvsim.samplers import TrialBatch, generate_trials
from hvsim.spin import SpinOutcome, born_table, make_epr_state

N = 10_000


def zero_drift(x):
    return np.zeros_like(x)


@pytest.fixture(scope="module")
def population():
    return simulate_trajectories(2 * N, zero_drift, 0.5, 0.01, 50, 3, dim=3)


def run_exchange(a, b, seed=21, n=N):
    trials = generate_trials("coupled", a, b, n, seed)
    before = EnsembleRegistry.from_sources(trials.source_1)
    return before, exchange_trajectories(before, trials), trials


class TestSimulate:
    def test_deterministic_limit(self):
        pop = simulate_trajectories(5, lambda x: np.full_like(x, 1.5), 0.0, 0.1, 20, 1, x0=2.0)
        np.testing.assert_allclose(pop.positions[:, -1, 0], 2.0 + 1.5 * 2.0, rtol=1e-12)

    def test_wiener_moments(self):
        D, dt, steps = 0.5, 0.01, 100
        pop = simulate_trajectories(N, zero_drift, D, dt, steps, 4)
        disp = pop.positions[:, -1, 0] - pop.positions[:, 0, 0]
        T = dt * steps
        assert abs(disp.mean()) < 4 * math.sqrt(2 * D * T / N)
        assert disp.var(ddof=1) == pytest.approx(2 * D * T, rel=0.1)

    def test_same_seed_identical(self):
        a = simulate_trajectories(300, zero_drift, 1.0, 0.01, 10, 9, dim=2)
        b = simulate_trajectories(300, zero_drift, 1.0, 0.01, 10, 9, dim=2, chunk=7, workers=3)
        assert a.digest() == b.digest()
        assert a.digest() != simulate_trajectories(300, zero_drift, 1.0, 0.01, 10, 10, dim=2).digest()

    def test_non_finite_drift_aborts(self):
        with pytest.raises(SimulationError, match="trajectory"):
            simulate_trajectories(4, lambda x: np.full_like(x, np.inf), 0.0, 0.1, 3, 1)

    @pytest.mark.parametrize("kwargs", [dict(n=0), dict(dt=0.0), dict(diffusion_coeff=-1.0)])
    def test_rejects_bad_arguments(self, kwargs):
        args = dict(n=2, drift=zero_drift, diffusion_coeff=1.0, dt=0.1, steps=2, rng=1)
        args.update(kwargs)
        with pytest.raises(ValueError):
            simulate_trajectories(**args)

    def test_positions_read_only(self, population):
        with pytest.raises(ValueError):
            population.positions[0, 0, 0] = 1.0


class TestMeanVelocity:
    def test_constant_members(self):
        pop = simulate_trajectories(10, lambda x: np.full_like(x, 0.3), 0.0, 0.1, 10, 1)
        assert mean_velocity(Ensemble((Slot.R1, SpinOutcome.UP), np.arange(10)), pop).components[0] == pytest.approx(0.3, rel=1e-12)

    def test_symmetric_pair(self):
        pos = np.array([[[0.0], [1.0]], [[0.0], [-1.0]]])
        pop = TrajectoryPopulation(pos, 1.0)
        assert mean_velocity(Ensemble((Slot.R1, SpinOutcome.UP), np.array([0, 1])), pop).components[0] == 0.0

    def test_diffusive_mean_small(self, population):
        e = Ensemble((Slot.R1, SpinOutcome.UP), np.arange(N))
        v = mean_velocity(e, population).components
        assert np.all(np.abs(v) < 4 * mean_velocity_se(e, population))

    def test_empty_rejected(self, population):
        with pytest.raises(ValueError):
            mean_velocity(Ensemble((Slot.R1, SpinOutcome.UP), np.array([], dtype=int)), population)

    def test_vector_rejects_non_finite(self):
        with pytest.raises(ValueError):
            VelocityVector([math.nan])


class TestExchange:
    def test_counts_at_right_angle(self):
        _, after, _ = run_exchange(0.0, math.pi / 2)
        expected = born_table(make_epr_state(math.pi / 2)).as_tuple()
        for count, p in zip(after.joint_counts().values(), expected):
            assert abs(count - N * p) <= 4 * math.sqrt(N * p * (1 - p))

    def test_same_axis_keeps_source_split(self):
        before, after, _ = run_exchange(0.0, 0.0)
        counts = after.joint_counts()
        assert counts["pp"] == 0 and counts["mm"] == 0
        for k in ("pm", "mp"):
            assert abs(counts[k] - N / 2) <= 4 * math.sqrt(N / 4)
        # same two-ensemble structure; the coupling ignores the source so labels are redrawn
        assert set(k for k, v in before.joint_counts().items() if v) == {"pm", "mp"}

    def test_empty_trials_identity(self):
        before, _, _ = run_exchange(0.0, 1.0, n=50)
        after = exchange_trajectories(before, [])
        np.testing.assert_array_equal(after.spin_r1, before.spin_r1)
        np.testing.assert_array_equal(after.spin_r2, before.spin_r2)

    def test_unknown_pair_rejected(self):
        before, _, trials = run_exchange(0.0, 1.0, n=50)
        shifted = generate_trials("coupled", 0.0, 1.0, 5, 1, start=1000)
        with pytest.raises(ValueError, match="unknown"):
            exchange_trajectories(before, shifted)
        with pytest.raises(ValueError):
            exchange_trajectories(before, TrialBatch.concat([trials, trials]))

    def test_positions_untouched(self, population):
        digest = population.digest()
        run_exchange(0.0, math.pi / 2)
        assert population.digest() == digest

    def test_count_conservation_and_weights(self):
        before, after, _ = run_exchange(0.0, math.pi / 3)
        for reg in (before, after):
            reg.check_invariants()
            assert sum(reg.joint_counts().values()) == N
        target = born_table(make_epr_state(math.pi / 3)).as_tuple()
        for w, p in zip(after.weights().values(), target):
            assert abs(w - p) <= 4 * math.sqrt(p * (1 - p) / N)

    def test_weights_with_norms(self):
        reg = EnsembleRegistry.from_sources(np.array([1, -1, 1, 1], dtype=np.int8),
                                            norm_sq_integrals={"pp": 2.0, "pm": 4.0, "mp": 0.5, "mm": 1.0})
        assert reg.weights() == {"pp": 0.0, "pm": 0.75 / 4.0, "mp": 0.25 / 0.5, "mm": 0.0}
        reg.check_invariants()

    def test_snapshot(self, population):
        _, after, _ = run_exchange(0.0, math.pi / 2)
        snap = after.snapshot(population)
        assert snap["pairs"] == N and len(snap["ensembles"]) == 4
        assert all(len(e["mean_velocity"]) == 3 for e in snap["ensembles"])


class TestVelocityInvariance:
    def test_random_permutation(self, population):
        rng = np.random.default_rng(5)
        before = EnsembleRegistry.from_sources(rng.choice([-1, 1], N).astype(np.int8))
        after = before.replace_spins(rng.permutation(before.spin_r1), rng.permutation(before.spin_r2))
        assert verify_velocity_invariance(before, after, population).passed

    def test_identical_trajectories(self):
        pop = simulate_trajectories(200, lambda x: np.full_like(x, 0.7), 0.0, 0.1, 10, 1, dim=2)
        before, after, _ = run_exchange(0.0, math.pi / 2, n=100)
        rep = verify_velocity_invariance(before, after, pop)
        assert rep.passed
        for row in rep.ensembles:
            assert row["deviation"] == [0.0, 0.0]

    def test_coupled_exchange(self, population):
        before, after, _ = run_exchange(0.0, math.pi / 2)
        rep = verify_velocity_invariance(before, after, population)
        assert rep.passed and len(rep.ensembles) == 4
        assert all(max(r["deviation_in_se"]) < 5 for r in rep.ensembles)

    def test_detects_velocity_sorted_labels(self, population):
        before = EnsembleRegistry.from_sources(np.ones(N, dtype=np.int8))
        v = population.velocities()[:N, 0]
        after = before.replace_spins(np.where(v > 0, 1, -1), before.spin_r2)
        assert not verify_velocity_invariance(before, after, population).passed


class TestComponentwiseLocality:
    def test_tuple_semantics(self):
        family = [VelocityVector([float(i), 0.5]) for i in range(3)]
        rep = verify_componentwise_locality(family, family)
        assert rep.componentwise and rep.passed
        assert rep.perturbation_checks == 12

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            verify_componentwise_locality([VelocityVector([1.0])], [])

    def test_remote_setting_changes_only_counts(self, population):
        _, after1, _ = run_exchange(0.0, math.pi / 2, seed=21)
        _, after2, _ = run_exchange(0.0, math.pi / 4, seed=21)
        family = [VelocityVector(v) for v in population.velocities()[:4]]
        rep = verify_componentwise_locality(family, family, after1, after2, population)
        assert rep.passed
        assert rep.settings_comparison["counts_passed"]

    def test_identical_inputs_empty_diff(self, population):
        _, after, _ = run_exchange(0.0, math.pi / 2)
        cmp = compare_settings(after, after, population)
        assert cmp["count_difference"] == 0
        assert all(r["deviation"] == [0.0, 0.0, 0.0] for r in cmp["mean_velocities"])
