"""Hidden-variable models of the two-particle spin experiment."""

from .ensembles import (EnsembleRegistry, TrajectoryPopulation, VelocityVector, exchange_trajectories,
                        mean_velocity, simulate_trajectories, verify_componentwise_locality,
                        verify_velocity_invariance)
from .lhv import (DeterministicStrategy, StrategyMixture, bell_sum_same_particle, enumerate_strategies,
                  same_particle_joint, substitute_events, verify_bell_bound)
from .locality import (BellEstimate, Decision, TestReport, anticorrelation_check, bell_statistic,
                       no_signaling_test, passive_locality_test)
from .samplers import (CouplingTable, ModelId, SourceRecord, TrialBatch, TrialRecord, build_coupling,
                       coupled_sample, frechet_feasibility, generate_trials, independent_flip_sample,
                       sample_source)
from .spin import (Axis, BornTable, EprState, PathSample, SpinOutcome, born_table, ensemble_weight,
                   make_epr_state, phase_integral, singlet_joint, singlet_state, transition_probability)
from .streams import CounterStream

__version__ = "0.1.0"
