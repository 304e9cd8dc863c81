"""Monte Carlo harness: replication batches, metrics, sweeps and audits.

Reproducibility rule: the random stream of replication ``r`` in a batch is
seeded by the key ``(master_seed, stream, r)`` fed to numpy's SeedSequence,
so results are bitwise-stable across runs and across parallelism degrees.
Sweeps reuse the same replication seeds for every grid point (common random
numbers), which tightens cross-point comparisons.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import kolmogorov, ndtr

from . import mechanism
from .conse import FLAG_FINAL, FLAG_MISSING
from .dpconse import NOISE_KINDS
from .engine import PolicyConfig, RunTrace, run_replication
from .instance import ArrivalProcess, InstanceSpec, RewardDist

__all__ = [
    "replication_seed",
    "run_many",
    "aggregate",
    "MetricsReport",
    "pareto_sweep",
    "ParetoPoint",
    "normality_test",
    "NormalityReport",
    "privacy_audit",
    "AuditReport",
    "audit_event_triples",
]


def replication_seed(master_seed: int, rep: int, stream: int = 0) -> tuple[int, int, int]:
    """Seed key for one replication; feed to numpy SeedSequence as a list."""
    return (int(master_seed), int(stream), int(rep))


def _run_block(args):
    inst, cfg, seed_keys, backend, record_events = args
    return [
        run_replication(inst, cfg, key, backend=backend, record_events=record_events)
        for key in seed_keys
    ]


def run_many(
    inst: InstanceSpec,
    cfg: PolicyConfig,
    reps: int,
    master_seed: int,
    stream: int = 0,
    parallel: int = 1,
    backend: str | None = None,
    record_events: bool = False,
) -> list[RunTrace]:
    """Run ``reps`` independent replications, ordered by replication index."""
    if reps < 1:
        raise ValueError(f"reps must be >= 1, got {reps}")
    if parallel < 1:
        raise ValueError(f"parallel must be >= 1, got {parallel}")
    keys = [replication_seed(master_seed, r, stream) for r in range(reps)]
    if parallel == 1 or reps < 2 * parallel:
        return _run_block((inst, cfg, keys, backend, record_events))
    blocks = np.array_split(np.arange(reps), parallel)
    jobs = [(inst, cfg, [keys[i] for i in block], backend, record_events) for block in blocks]
    out: list[RunTrace] = []
    with ProcessPoolExecutor(max_workers=parallel) as pool:
        for traces in pool.map(_run_block, jobs):
            out.extend(traces)
    return out


def _fsum_mean(values) -> float:
    return math.fsum(values) / len(values)


def _fsum_se(values, mean: float) -> float:
    n = len(values)
    if n < 2:
        return math.nan
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return math.sqrt(var / n)


@dataclass
class MetricsReport:
    """Aggregated Monte Carlo statistics for a batch of replications."""

    policy: str
    alpha: float
    epsilon: float | None
    m: int
    n: int
    n_reps: int
    mean_regret: float
    se_regret: float
    mse: np.ndarray
    se_mse: np.ndarray
    mse_counts: np.ndarray
    missing_counts: np.ndarray
    est_means: np.ndarray
    max_mse: float
    se_max_mse: float
    product: float
    product_per_feature: float
    standardized: np.ndarray
    standardized_by_feature: list[np.ndarray] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "policy": self.policy,
            "alpha": self.alpha,
            "epsilon": self.epsilon,
            "M": self.m,
            "n": self.n,
            "replications": self.n_reps,
            "mean_regret": self.mean_regret,
            "se_regret": self.se_regret,
            "mse": self.mse.tolist(),
            "se_mse": self.se_mse.tolist(),
            "scored_counts": self.mse_counts.tolist(),
            "missing_counts": self.missing_counts.tolist(),
            "estimate_means": self.est_means.tolist(),
            "max_mse": self.max_mse,
            "se_max_mse": self.se_max_mse,
            "product": self.product,
            "product_per_feature": self.product_per_feature,
        }


def aggregate(traces: list[RunTrace], inst: InstanceSpec, missing_mode: str = "exclude") -> MetricsReport:
    """Reduce traces into regret/error metrics.

    ``missing_mode="exclude"`` drops missing-flagged estimates from the MSE
    (their count is still reported); ``"strict"`` scores them at (0 - gap)^2.
    All reductions use exactly-rounded summation, so the report is invariant
    to the ordering of the trace list.
    """
    if not traces:
        raise ValueError("cannot aggregate an empty trace list")
    if len(traces) < 2:
        raise ValueError("aggregate needs at least 2 traces")
    if missing_mode not in ("exclude", "strict"):
        raise ValueError(f"unknown missing_mode {missing_mode!r}")
    first = traces[0]
    for tr in traces:
        if tr.n != inst.n or tr.m != inst.m:
            raise ValueError("trace does not match the instance dimensions")
    regrets = [tr.final_regret for tr in traces]
    mean_regret = _fsum_mean(regrets)
    se_regret = _fsum_se(regrets, mean_regret)
    m = inst.m
    delta = inst.delta
    varsum = inst.variances[:, 0] + inst.variances[:, 1]
    mse = np.full(m, math.nan)
    se_mse = np.full(m, math.nan)
    counts = np.zeros(m, dtype=np.int64)
    missing = np.zeros(m, dtype=np.int64)
    est_means = np.full(m, math.nan)
    std_by_feature: list[np.ndarray] = []
    for j0 in range(m):
        errors = []
        values = []
        std = []
        for tr in traces:
            flag = tr.est_flags[j0]
            if flag == FLAG_MISSING:
                missing[j0] += 1
                if missing_mode == "exclude":
                    continue
            val = float(tr.estimates[j0])
            values.append(val)
            errors.append((val - delta[j0]) ** 2)
            if flag == FLAG_FINAL and tr.est_samples[j0] >= 2 and varsum[j0] > 0:
                # One arm is pulled per RCT period, so samples/2 is the
                # effective paired-sample count that the limiting
                # N(0, var0 + var1) normalization refers to.
                std.append(
                    math.sqrt(tr.est_samples[j0] / 2.0) * (val - delta[j0]) / math.sqrt(varsum[j0])
                )
        counts[j0] = len(errors)
        if errors:
            mse[j0] = _fsum_mean(errors)
            se_mse[j0] = _fsum_se(errors, mse[j0])
            est_means[j0] = _fsum_mean(values)
        std_by_feature.append(np.array(std))
    if np.all(np.isnan(mse)):
        raise ValueError("no scored estimates in any feature; cannot compute MSE")
    max_j = int(np.nanargmax(mse))
    max_mse = float(mse[max_j])
    return MetricsReport(
        policy=first.policy,
        alpha=first.alpha,
        epsilon=first.epsilon,
        m=m,
        n=inst.n,
        n_reps=len(traces),
        mean_regret=mean_regret,
        se_regret=se_regret,
        mse=mse,
        se_mse=se_mse,
        mse_counts=counts,
        missing_counts=missing,
        est_means=est_means,
        max_mse=max_mse,
        se_max_mse=float(se_mse[max_j]),
        product=max_mse * mean_regret,
        product_per_feature=max_mse * mean_regret / m,
        standardized=np.concatenate(std_by_feature) if std_by_feature else np.array([]),
        standardized_by_feature=std_by_feature,
    )


@dataclass(frozen=True)
class ParetoPoint:
    policy: str
    alpha: float
    epsilon: float | None
    m: int
    n: int
    mean_regret: float
    se_regret: float
    max_mse: float
    se_mse: float
    product: float


def pareto_sweep(
    inst: InstanceSpec,
    policy: str,
    alpha_grid,
    reps: int,
    master_seed: int,
    epsilon: float | None = None,
    parallel: int = 1,
    backend: str | None = None,
) -> list[ParetoPoint]:
    """One (regret, max-MSE, product) point per alpha, sorted by alpha."""
    grid = sorted(float(a) for a in alpha_grid)
    if not grid:
        raise ValueError("alpha grid must not be empty")
    if reps < 50:
        raise ValueError(f"pareto_sweep needs reps >= 50, got {reps}")
    if policy not in ("conse", "dpconse"):
        raise ValueError(f"pareto sweep supports conse/dpconse, got {policy!r}")
    points = []
    for alpha in grid:
        cfg = PolicyConfig(kind=policy, alpha=alpha, epsilon=epsilon if policy == "dpconse" else None)
        traces = run_many(inst, cfg, reps, master_seed, parallel=parallel, backend=backend)
        rep = aggregate(traces, inst)
        points.append(
            ParetoPoint(
                policy=policy,
                alpha=alpha,
                epsilon=cfg.epsilon,
                m=inst.m,
                n=inst.n,
                mean_regret=rep.mean_regret,
                se_regret=rep.se_regret,
                max_mse=rep.max_mse,
                se_mse=rep.se_max_mse,
                product=rep.product,
            )
        )
    return points


@dataclass(frozen=True)
class NormalityReport:
    ks_statistic: float
    p_value: float
    mean: float
    variance: float
    n_samples: int

    def as_dict(self) -> dict:
        return {
            "ks_statistic": self.ks_statistic,
            "p_value": self.p_value,
            "mean": self.mean,
            "variance": self.variance,
            "n_samples": self.n_samples,
        }


def normality_test(samples) -> NormalityReport:
    """One-sample Kolmogorov-Smirnov test against the standard normal.

    The statistic is the max deviation between the empirical CDF and the
    standard normal CDF; the p-value uses the asymptotic Kolmogorov
    distribution, adequate at the sample sizes required here.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("samples must be one-dimensional")
    if len(x) < 200:
        raise ValueError(f"normality test needs >= 200 samples, got {len(x)}")
    mean = _fsum_mean(x.tolist())
    var = math.fsum((v - mean) ** 2 for v in x.tolist()) / (len(x) - 1)
    if var == 0.0:
        raise ValueError("degenerate sample: zero variance")
    xs = np.sort(x)
    n = len(xs)
    cdf = ndtr(xs)
    grid = np.arange(n, dtype=np.float64)
    d_plus = np.max((grid + 1.0) / n - cdf)
    d_minus = np.max(cdf - grid / n)
    d = float(max(d_plus, d_minus))
    p = float(kolmogorov(math.sqrt(n) * d))
    return NormalityReport(ks_statistic=d, p_value=p, mean=mean, variance=var, n_samples=n)


# --- privacy audit -------------------------------------------------------------


@dataclass(frozen=True)
class AuditTriple:
    """A neighboring pair of fixed datasets plus an output-event predicate."""

    name: str
    description: str
    m: int
    n: int
    alpha: float
    features_a: np.ndarray  # 1-based feature per period
    features_b: np.ndarray
    rewards_a: np.ndarray  # (n, 2) fixed reward tables
    rewards_b: np.ndarray
    predicate_kind: str  # one of rct_length_ge, estimate_gt, last_action_is

    predicate_arg: float = 0.0
    predicate_feature: int = 1

    def evaluate(self, trace: RunTrace) -> bool:
        j0 = self.predicate_feature - 1
        if self.predicate_kind == "rct_length_ge":
            return bool(trace.t_j[j0] >= self.predicate_arg)
        if self.predicate_kind == "estimate_gt":
            return bool(trace.estimates[j0] > self.predicate_arg)
        if self.predicate_kind == "last_action_is":
            return bool(trace.actions[-1] == int(self.predicate_arg))
        raise ValueError(f"unknown predicate {self.predicate_kind!r}")


def audit_event_triples(n: int = 64) -> list[AuditTriple]:
    """Three neighboring-dataset/event triples exercising distinct channels.

    Each pair of datasets differs in exactly one period's (feature, reward)
    record.  The first works through the RCT-length channel, the second
    through the estimate-release channel and the third through the greedy
    tail's action channel.
    """
    half = n // 2
    # 1: feature flip changes the learned occurrence counts.
    feats_a = np.array([1 + (t % 2) for t in range(n)], dtype=np.int64)  # 1,2,1,2,...
    feats_b = feats_a.copy()
    t0 = 10
    feats_b[t0 - 1] = 1 if feats_a[t0 - 1] == 2 else 2
    rew = np.tile([0.25, 0.75], (n, 1))
    f_half = np.bincount(feats_a[:half], minlength=3)[1:]
    triple1 = AuditTriple(
        name="rct-length-channel",
        description="one period's feature flipped; event: realized RCT length of feature 2 >= its unflipped target",
        m=2,
        n=n,
        alpha=0.0,
        features_a=feats_a,
        features_b=feats_b,
        rewards_a=rew,
        rewards_b=rew.copy(),
        predicate_kind="rct_length_ge",
        predicate_arg=float(min(f_half)),
        predicate_feature=2,
    )
    # 2: reward flip in the RCT window shifts the released estimate.
    feats_one = np.ones(n, dtype=np.int64)
    rew_a = np.tile([0.25, 0.75], (n, 1))
    rew_b = rew_a.copy()
    rew_b[39, 1] = 0.0  # period 40, treated arm
    triple2 = AuditTriple(
        name="release-channel",
        description="one second-half reward flipped; event: released gap estimate > 0.5",
        m=1,
        n=n,
        alpha=0.0,
        features_a=feats_one,
        features_b=feats_one.copy(),
        rewards_a=rew_a,
        rewards_b=rew_b,
        predicate_kind="estimate_gt",
        predicate_arg=0.5,
        predicate_feature=1,
    )
    # 3: reward flip steers the greedy tail's tie-break arm.
    rew3_a = np.tile([0.5, 0.51], (n, 1))
    rew3_b = rew3_a.copy()
    rew3_b[6, 1] = 0.0  # period 7, treated arm
    triple3 = AuditTriple(
        name="action-channel",
        description="one first-half reward flipped; event: final-period action plays the treated arm",
        m=1,
        n=n,
        alpha=1.0,
        features_a=feats_one,
        features_b=feats_one.copy(),
        rewards_a=rew3_a,
        rewards_b=rew3_b,
        predicate_kind="last_action_is",
        predicate_arg=1.0,
        predicate_feature=1,
    )
    return [triple1, triple2, triple3]


def _audit_instance(triple: AuditTriple, which: str) -> tuple[InstanceSpec, np.ndarray]:
    feats = triple.features_a if which == "a" else triple.features_b
    rewards = triple.rewards_a if which == "a" else triple.rewards_b
    arrival = ArrivalProcess(n=triple.n, m=triple.m, kind="oblivious-sequence", sequence=feats)
    dists = tuple(
        (RewardDist(kind="point", value=0.5), RewardDist(kind="point", value=0.5))
        for _ in range(triple.m)
    )
    return InstanceSpec(arrival=arrival, rewards=dists), rewards


def _event_probability(triple, which, epsilon, trials, master_seed, stream, backend) -> tuple[float, float]:
    inst, table = _audit_instance(triple, which)
    cfg = PolicyConfig(kind="dpconse", alpha=triple.alpha, epsilon=epsilon)
    hits = 0
    for trial in range(trials):
        trace = run_replication(
            inst,
            cfg,
            (master_seed, stream, trial),
            backend=backend,
            record_actions=True,
            reward_table=table,
        )
        if triple.evaluate(trace):
            hits += 1
    p = hits / trials
    se = math.sqrt(max(p * (1.0 - p), 1.0 / trials) / trials)
    return p, se


@dataclass
class AuditReport:
    """Privacy audit results.

    The statistical event test is a falsification test: it can expose a
    privacy violation but never proves the guarantee.
    """

    epsilon: float
    laplace_ratio: dict
    lap_plus_ratios: list[dict]
    event_tests: list[dict]
    passed: bool

    def as_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "laplace_ratio": self.laplace_ratio,
            "lap_plus_ratios": self.lap_plus_ratios,
            "event_tests": self.event_tests,
            "passed": self.passed,
            "note": "statistical event tests are falsification-only, not a proof",
        }


def lap_plus_max_ratio(m_lo: float, m_hi: float, epsilon: float, tail: float = 1e-12) -> float:
    """Max pmf ratio between two noisy-count distributions on common support."""
    vals_lo, p_lo = mechanism.lap_plus_support_pmf(m_lo, epsilon, tail)
    vals_hi, p_hi = mechanism.lap_plus_support_pmf(m_hi, epsilon, tail)
    top = min(vals_lo[-1], vals_hi[-1])
    a = p_lo[: top + 1]
    b = p_hi[: top + 1]
    mask = (a > 0) & (b > 0)
    return float(np.max(np.maximum(a[mask] / b[mask], b[mask] / a[mask])))


def privacy_audit(
    epsilon: float,
    trials: int = 20000,
    master_seed: int = 0,
    m_grid=(1.0, 3.7, 100.0),
    batch_length: int = 1776,
    include_event_test: bool = True,
    backend: str | None = None,
) -> AuditReport:
    """Audit the mechanism layer and (optionally) end-to-end event ratios.

    (a) analytic: a batch-mean release with Laplace scale 2/(eps*R) under a
    mean shift of 1/R has log-density ratio exactly eps/2;
    (b) numeric: noisy-count pmf ratios under floor shifts of 1 stay <= e^eps;
    (c) statistical: for each built-in neighboring triple, the event
    probability under one dataset must not exceed e^eps times the other
    plus 1/n, within 3 pooled standard errors.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    r = batch_length
    scale = 2.0 / (epsilon * r)
    shift = 1.0 / r
    ratio = mechanism.laplace_log_density_ratio(scale, shift)
    # numeric check on the densities themselves over a grid
    xs = np.linspace(-6 * scale, 6 * scale, 2001)
    logf = -np.abs(xs) / scale
    logf_shift = -np.abs(xs - shift) / scale
    grid_max = float(np.max(np.abs(logf - logf_shift)))
    laplace_section = {
        "scale": scale,
        "shift": shift,
        "log_ratio": ratio,
        "bound": epsilon / 2.0,
        "grid_max": grid_max,
        "pass": bool(abs(ratio - epsilon / 2.0) < 1e-12 and grid_max <= ratio + 1e-12),
    }
    lap_plus_section = []
    for m in m_grid:
        worst = max(
            lap_plus_max_ratio(m, m + 1.0, epsilon),
            lap_plus_max_ratio(max(m - 1.0, 1e-9), m, epsilon) if m > 1 else 0.0,
        )
        lap_plus_section.append(
            {"m": m, "max_ratio": worst, "bound": math.exp(epsilon), "pass": bool(worst <= math.exp(epsilon) + 1e-9)}
        )
    event_section = []
    if include_event_test:
        for idx, triple in enumerate(audit_event_triples()):
            p_a, se_a = _event_probability(triple, "a", epsilon, trials, master_seed, 2 * idx, backend)
            p_b, se_b = _event_probability(triple, "b", epsilon, trials, master_seed, 2 * idx + 1, backend)
            delta_budget = 1.0 / triple.n
            bound = math.exp(epsilon)
            ok_ab = p_a <= bound * p_b + delta_budget + 3.0 * (se_a + bound * se_b)
            ok_ba = p_b <= bound * p_a + delta_budget + 3.0 * (se_b + bound * se_a)
            event_section.append(
                {
                    "name": triple.name,
                    "description": triple.description,
                    "trials": trials,
                    "p_a": p_a,
                    "p_b": p_b,
                    "se_a": se_a,
                    "se_b": se_b,
                    "pass": bool(ok_ab and ok_ba),
                }
            )
    passed = (
        laplace_section["pass"]
        and all(row["pass"] for row in lap_plus_section)
        and all(row["pass"] for row in event_section)
    )
    return AuditReport(
        epsilon=epsilon,
        laplace_ratio=laplace_section,
        lap_plus_ratios=lap_plus_section,
        event_tests=event_section,
        passed=passed,
    )


def classify_noise_log(trace: RunTrace) -> dict:
    """Count a private run's randomized releases by kind; raise on unknowns."""
    if trace.noise_log is None:
        raise ValueError("trace has no noise log (not a private run?)")
    counts = {kind: 0 for kind in NOISE_KINDS}
    for entry in trace.noise_log:
        kind = entry["noise_kind"]
        if kind not in counts:
            raise ValueError(f"unaccounted noise source {kind!r}")
        counts[kind] += 1
    return counts
