"""banditxd: two-arm contextual bandit experiment design with privacy.

Simulates per-feature successive-elimination experiment designs that trade
cumulative regret against treatment-effect estimation error, including a
differentially private variant, plus reference baselines and a reproducible
Monte Carlo harness for Pareto sweeps, normality checks and privacy audits.
"""

from .baselines import RctPolicy, SeOnlyPolicy, UcbPolicy
from .conse import ConsePolicy, Estimate
from .dpconse import DpConsePolicy
from .engine import PolicyConfig, RunTrace, kernel_available, resolve_backend, run_replication
from .harness import (
    MetricsReport,
    ParetoPoint,
    aggregate,
    normality_test,
    pareto_sweep,
    privacy_audit,
    replication_seed,
    run_many,
)
from .instance import (
    ArrivalProcess,
    AssumptionReport,
    InstanceSpec,
    RewardDist,
    build_instance,
    load_instance,
    make_hard_pair,
    sample_feature,
    sample_reward,
    validate_assumption,
)
from .mechanism import Schedule, lap_plus_pmf, sample_lap_plus, sample_laplace, schedule

__version__ = "0.1.0"

__all__ = [
    "ArrivalProcess",
    "AssumptionReport",
    "ConsePolicy",
    "DpConsePolicy",
    "Estimate",
    "InstanceSpec",
    "MetricsReport",
    "ParetoPoint",
    "PolicyConfig",
    "RctPolicy",
    "RewardDist",
    "RunTrace",
    "Schedule",
    "SeOnlyPolicy",
    "UcbPolicy",
    "aggregate",
    "build_instance",
    "kernel_available",
    "lap_plus_pmf",
    "load_instance",
    "make_hard_pair",
    "normality_test",
    "pareto_sweep",
    "privacy_audit",
    "replication_seed",
    "resolve_backend",
    "run_many",
    "run_replication",
    "sample_feature",
    "sample_lap_plus",
    "sample_laplace",
    "sample_reward",
    "schedule",
    "validate_assumption",
]
