"""Bandit instances: feature arrival processes and per-(feature, arm) rewards.

An instance couples an arrival process over a finite feature set {1..M} with
a pair of reward distributions (control arm 0, treatment arm 1) per feature.
All types are immutable after construction and safe to share across parallel
replications; random streams are always supplied by the caller.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ArrivalProcess",
    "RewardDist",
    "InstanceSpec",
    "AssumptionReport",
    "build_instance",
    "load_instance",
    "sample_feature",
    "sample_reward",
    "validate_assumption",
    "make_hard_pair",
]

ARRIVAL_KINDS = ("stationary", "seasonal-block", "oblivious-sequence")
REWARD_KINDS = ("bernoulli", "truncated-gaussian", "point")

_PROB_TOL = 1e-12


def _check_prob_vector(p: np.ndarray, m: int, what: str) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (m,):
        raise ValueError(f"{what} must have length {m}, got shape {p.shape}")
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise ValueError(f"{what} entries must lie in [0, 1]")
    if abs(float(p.sum()) - 1.0) > _PROB_TOL:
        raise ValueError(f"{what} must sum to 1 (got {p.sum()!r})")
    p.setflags(write=False)
    return p


@dataclass(frozen=True)
class ArrivalProcess:
    """Feature arrival process over periods t = 1..n.

    ``kind`` selects the parameterization:

    * ``stationary``: one probability vector ``p`` used every period.
    * ``seasonal-block``: ``blocks`` is a list of (length, probability vector)
      pairs cycled over t, the last partial block truncated at n.
    * ``oblivious-sequence``: ``sequence`` gives the (1-based) feature index
      for every period; each per-period distribution is degenerate.
    """

    n: int
    m: int
    kind: str
    p: np.ndarray | None = None
    blocks: tuple[tuple[int, np.ndarray], ...] | None = None
    sequence: np.ndarray | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"horizon must be positive, got {self.n}")
        if self.m < 1:
            raise ValueError(f"feature count must be positive, got {self.m}")
        if self.kind == "stationary":
            if self.p is None:
                raise ValueError("stationary arrival requires a probability vector")
            object.__setattr__(self, "p", _check_prob_vector(self.p, self.m, "arrival p"))
        elif self.kind == "seasonal-block":
            if not self.blocks:
                raise ValueError("seasonal-block arrival requires at least one block")
            checked = []
            for i, (length, vec) in enumerate(self.blocks):
                length = int(length)
                if length < 1:
                    raise ValueError(f"block {i} length must be positive")
                checked.append((length, _check_prob_vector(np.asarray(vec), self.m, f"block {i} p")))
            object.__setattr__(self, "blocks", tuple(checked))
        elif self.kind == "oblivious-sequence":
            if self.sequence is None:
                raise ValueError("oblivious-sequence arrival requires a sequence")
            seq = np.asarray(self.sequence, dtype=np.int64)
            if seq.shape != (self.n,):
                raise ValueError(f"sequence must have length n={self.n}, got shape {seq.shape}")
            if np.any(seq < 1) or np.any(seq > self.m):
                raise ValueError("sequence entries must be feature indices in 1..M")
            seq.setflags(write=False)
            object.__setattr__(self, "sequence", seq)
        else:
            raise ValueError(f"unknown arrival kind {self.kind!r}; expected one of {ARRIVAL_KINDS}")

    def prob_vector(self, t: int) -> np.ndarray:
        """Per-period distribution P_X^t over features, t in 1..n."""
        if not 1 <= t <= self.n:
            raise ValueError(f"period {t} outside 1..{self.n}")
        if self.kind == "stationary":
            return self.p
        if self.kind == "seasonal-block":
            lengths = [length for length, _ in self.blocks]
            cycle = sum(lengths)
            pos = (t - 1) % cycle
            for length, vec in self.blocks:
                if pos < length:
                    return vec
                pos -= length
            raise AssertionError("unreachable")
        onehot = np.zeros(self.m)
        onehot[int(self.sequence[t - 1]) - 1] = 1.0
        return onehot

    def expected_counts(self, m_periods: int) -> np.ndarray:
        """Exact expected occurrence counts f_j(m) = sum_{t<=m} p_j^t."""
        if not 0 <= m_periods <= self.n:
            raise ValueError(f"period count {m_periods} outside 0..{self.n}")
        if self.kind == "stationary":
            return m_periods * self.p
        if self.kind == "seasonal-block":
            counts = np.zeros(self.m)
            lengths = [length for length, _ in self.blocks]
            cycle = sum(lengths)
            full, rem = divmod(m_periods, cycle)
            if full:
                per_cycle = np.zeros(self.m)
                for length, vec in self.blocks:
                    per_cycle += length * vec
                counts += full * per_cycle
            for length, vec in self.blocks:
                if rem <= 0:
                    break
                take = min(length, rem)
                counts += take * vec
                rem -= take
            return counts
        counts = np.zeros(self.m)
        np.add.at(counts, self.sequence[:m_periods] - 1, 1.0)
        return counts

    def sample_sequence(self, rng: np.random.Generator) -> np.ndarray:
        """Draw one full arrival sequence (1-based indices) for all n periods."""
        if self.kind == "oblivious-sequence":
            return self.sequence.copy()
        out = np.empty(self.n, dtype=np.int64)
        for t in range(1, self.n + 1):
            out[t - 1] = sample_feature(self, t, rng)
        return out


@dataclass(frozen=True)
class RewardDist:
    """One arm's reward distribution over [0, 1].

    ``mean`` is the nominal mean used for the stored treatment gap.  For the
    clipped Gaussian the realized mean can differ when the clipping is
    asymmetric; ``exact_mean``/``variance`` report the moments of the actual
    sampling distribution.
    """

    kind: str
    mean: float = 0.0
    sd: float = 0.0
    value: float = 0.0

    def __post_init__(self):
        if self.kind == "bernoulli":
            if not 0.0 <= self.mean <= 1.0:
                raise ValueError(f"bernoulli mean must lie in [0, 1], got {self.mean}")
        elif self.kind == "truncated-gaussian":
            if not 0.0 <= self.mean <= 1.0:
                raise ValueError(f"gaussian mean must lie in [0, 1], got {self.mean}")
            if self.sd <= 0.0:
                raise ValueError(f"gaussian sd must be > 0, got {self.sd}")
        elif self.kind == "point":
            if not 0.0 <= self.value <= 1.0:
                raise ValueError(f"point mass must lie in [0, 1], got {self.value}")
        else:
            raise ValueError(f"unknown reward kind {self.kind!r}; expected one of {REWARD_KINDS}")

    @property
    def nominal_mean(self) -> float:
        return self.value if self.kind == "point" else self.mean

    def exact_mean(self) -> float:
        if self.kind != "truncated-gaussian":
            return self.nominal_mean
        mu, sd = self.mean, self.sd
        a, b = -mu / sd, (1.0 - mu) / sd
        phi_a, phi_b = _std_pdf(a), _std_pdf(b)
        cap_a, cap_b = _std_cdf(a), _std_cdf(b)
        return (1.0 - cap_b) + mu * (cap_b - cap_a) - sd * (phi_b - phi_a)

    def variance(self) -> float:
        if self.kind == "bernoulli":
            return self.mean * (1.0 - self.mean)
        if self.kind == "point":
            return 0.0
        mu, sd = self.mean, self.sd
        a, b = -mu / sd, (1.0 - mu) / sd
        phi_a, phi_b = _std_pdf(a), _std_pdf(b)
        cap_a, cap_b = _std_cdf(a), _std_cdf(b)
        inside = cap_b - cap_a
        ex2 = (1.0 - cap_b) + (mu * mu + sd * sd) * inside
        ex2 += 2.0 * mu * sd * (phi_a - phi_b) + sd * sd * (a * phi_a - b * phi_b)
        return ex2 - self.exact_mean() ** 2

    def sample(self, rng: np.random.Generator) -> float:
        if self.kind == "bernoulli":
            return 1.0 if rng.random() < self.mean else 0.0
        if self.kind == "point":
            return self.value
        r = self.mean + self.sd * rng.standard_normal()
        return min(max(r, 0.0), 1.0)


def _std_pdf(x: float) -> float:
    return math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def _std_cdf(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


@dataclass(frozen=True)
class InstanceSpec:
    """A validated bandit instance with derived per-feature gaps and variances."""

    arrival: ArrivalProcess
    rewards: tuple[tuple[RewardDist, RewardDist], ...]
    delta: np.ndarray = field(init=False)
    variances: np.ndarray = field(init=False)

    def __post_init__(self):
        if len(self.rewards) != self.arrival.m:
            raise ValueError(
                f"rewards must list {self.arrival.m} features, got {len(self.rewards)}"
            )
        delta = np.array([pair[1].nominal_mean - pair[0].nominal_mean for pair in self.rewards])
        var = np.array([[pair[0].variance(), pair[1].variance()] for pair in self.rewards])
        delta.setflags(write=False)
        var.setflags(write=False)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "variances", var)

    @property
    def n(self) -> int:
        return self.arrival.n

    @property
    def m(self) -> int:
        return self.arrival.m

    def optimal_arm(self, j: int) -> int | None:
        """Best arm for feature j (1-based); None when the gap is zero."""
        d = self.delta[j - 1]
        if d == 0.0:
            return None
        return 1 if d > 0 else 0


def build_instance(doc: dict) -> InstanceSpec:
    """Validate a structured instance description and derive gap/variance data.

    Expected document shape::

        {"horizon": n, "features": M,
         "arrival": {"kind": ..., "p": [...] | "blocks": [[len, [...]], ...]
                     | "sequence": [...]},
         "rewards": [[{"kind": ..., ...}, {"kind": ..., ...}], ...]}
    """
    if not isinstance(doc, dict):
        raise ValueError("instance document must be a mapping")
    for key in ("horizon", "features", "arrival", "rewards"):
        if key not in doc:
            raise ValueError(f"instance document missing field {key!r}")
    n = int(doc["horizon"])
    m = int(doc["features"])
    arr_doc = doc["arrival"]
    if not isinstance(arr_doc, dict) or "kind" not in arr_doc:
        raise ValueError("arrival must be a mapping with a 'kind' field")
    kind = arr_doc["kind"]
    if kind == "stationary":
        arrival = ArrivalProcess(n=n, m=m, kind=kind, p=np.asarray(arr_doc.get("p"), dtype=np.float64))
    elif kind == "seasonal-block":
        blocks = tuple((int(b[0]), np.asarray(b[1], dtype=np.float64)) for b in arr_doc.get("blocks", ()))
        arrival = ArrivalProcess(n=n, m=m, kind=kind, blocks=blocks)
    elif kind == "oblivious-sequence":
        arrival = ArrivalProcess(n=n, m=m, kind=kind, sequence=np.asarray(arr_doc.get("sequence"), dtype=np.int64))
    else:
        raise ValueError(f"unknown arrival kind {kind!r}; expected one of {ARRIVAL_KINDS}")
    rewards_doc = doc["rewards"]
    if len(rewards_doc) != m:
        raise ValueError(f"rewards must list {m} features, got {len(rewards_doc)}")
    rewards = []
    for j, pair in enumerate(rewards_doc, start=1):
        if len(pair) != 2:
            raise ValueError(f"feature {j} must give exactly two arm distributions")
        rewards.append((_reward_from_doc(pair[0], j, 0), _reward_from_doc(pair[1], j, 1)))
    return InstanceSpec(arrival=arrival, rewards=tuple(rewards))


def _reward_from_doc(rd: dict, j: int, arm: int) -> RewardDist:
    if not isinstance(rd, dict) or "kind" not in rd:
        raise ValueError(f"reward for feature {j} arm {arm} must be a mapping with 'kind'")
    kind = rd["kind"]
    try:
        if kind == "bernoulli":
            return RewardDist(kind=kind, mean=float(rd["mean"]))
        if kind == "truncated-gaussian":
            return RewardDist(kind=kind, mean=float(rd["mean"]), sd=float(rd["sd"]))
        if kind == "point":
            return RewardDist(kind=kind, value=float(rd["value"]))
    except KeyError as exc:
        raise ValueError(f"reward for feature {j} arm {arm} missing parameter {exc}") from exc
    raise ValueError(f"unknown reward kind {kind!r} for feature {j} arm {arm}")


def load_instance(path) -> InstanceSpec:
    """Read an instance document from a JSON file."""
    import json

    with open(path) as fh:
        return build_instance(json.load(fh))


def sample_feature(arrival: ArrivalProcess, t: int, rng: np.random.Generator) -> int:
    """Draw the period-t feature index (1-based) from P_X^t."""
    if not 1 <= t <= arrival.n:
        raise ValueError(f"period {t} outside 1..{arrival.n}")
    if arrival.kind == "oblivious-sequence":
        return int(arrival.sequence[t - 1])
    p = arrival.prob_vector(t)
    u = rng.random()
    acc = 0.0
    for j in range(arrival.m - 1):
        acc += p[j]
        if u < acc:
            return j + 1
    return arrival.m


def sample_reward(inst: InstanceSpec, j: int, arm: int, rng: np.random.Generator) -> float:
    """Draw one reward for (feature j, arm) from the configured distribution."""
    if not 1 <= j <= inst.m:
        raise ValueError(f"feature index {j} outside 1..{inst.m}")
    if arm not in (0, 1):
        raise ValueError(f"arm must be 0 or 1, got {arm}")
    return inst.rewards[j - 1][arm].sample(rng)


@dataclass(frozen=True)
class AssumptionReport:
    """Result of checking the seasonal-balance arrival assumption.

    Each feature must have its full-horizon expected count within (C1, C2)
    times its first-half count, and the minimum full-horizon count must clear
    a log-n floor.
    """

    c1: float
    c2: float
    log_floor_coeff: float
    n: int
    f_half: np.ndarray
    f_full: np.ndarray
    ratios: np.ndarray
    ratio_pass: np.ndarray
    f_min: float
    log_floor: float
    floor_pass: bool
    passed: bool

    def as_dict(self) -> dict:
        return {
            "c1": self.c1,
            "c2": self.c2,
            "log_floor_coeff": self.log_floor_coeff,
            "horizon": self.n,
            "f_half": self.f_half.tolist(),
            "f_full": self.f_full.tolist(),
            "ratios": [None if math.isnan(r) else r for r in self.ratios.tolist()],
            "ratio_pass": self.ratio_pass.tolist(),
            "f_min": self.f_min,
            "log_floor": self.log_floor,
            "floor_pass": self.floor_pass,
            "passed": self.passed,
        }


def validate_assumption(
    arrival: ArrivalProcess,
    c1: float = 1.5,
    c2: float = 3.0,
    log_floor_coeff: float = 1.0,
) -> AssumptionReport:
    """Check the two-halves balance condition on exact expected counts.

    A feature with zero expected full-horizon occurrences fails explicitly
    rather than raising a division error.
    """
    if not c1 > 1.0 or not c2 > 1.0:
        raise ValueError("C1 and C2 must both exceed 1")
    if c1 >= c2:
        raise ValueError(f"C1 must be smaller than C2, got {c1} >= {c2}")
    if log_floor_coeff <= 0:
        raise ValueError("log_floor_coeff must be > 0")
    n = arrival.n
    f_half = arrival.expected_counts(n // 2)
    f_full = arrival.expected_counts(n)
    ratios = np.full(arrival.m, math.nan)
    ratio_pass = np.zeros(arrival.m, dtype=bool)
    for j in range(arrival.m):
        if f_full[j] <= 0.0 or f_half[j] <= 0.0:
            continue  # explicit failure, ratio left undefined
        ratios[j] = f_full[j] / f_half[j]
        ratio_pass[j] = c1 < ratios[j] < c2
    f_min = float(f_full.min())
    log_floor = log_floor_coeff * math.log(n)
    floor_pass = f_min >= log_floor
    ratios.setflags(write=False)
    ratio_pass.setflags(write=False)
    return AssumptionReport(
        c1=c1,
        c2=c2,
        log_floor_coeff=log_floor_coeff,
        n=n,
        f_half=f_half,
        f_full=f_full,
        ratios=ratios,
        ratio_pass=ratio_pass,
        f_min=f_min,
        log_floor=log_floor,
        floor_pass=floor_pass,
        passed=bool(ratio_pass.all() and floor_pass),
    )


def make_hard_pair(xi: float, phi: float, horizon: int = 4096) -> tuple[InstanceSpec, InstanceSpec]:
    """Two single-feature instances separated only in the treated arm's mean.

    The control arm is shared bitwise between the two instances and the
    treated means differ by exactly 2*phi, giving gaps xi and xi + 2*phi.
    Used as a stress pair for estimator discrimination tests.
    """
    if not 0.0 < xi <= 1.0:
        raise ValueError(f"xi must lie in (0, 1], got {xi}")
    if not 0.0 <= phi <= 0.25:
        raise ValueError(f"phi must lie in [0, 1/4], got {phi}")
    if xi + 2.0 * phi > 1.0:
        raise ValueError(
            f"gap {xi + 2.0 * phi} exceeds the maximum gap of 1 achievable with rewards in [0, 1]"
        )
    mu0 = (1.0 - xi - 2.0 * phi) / 2.0
    control = RewardDist(kind="bernoulli", mean=mu0)
    arrival = ArrivalProcess(n=horizon, m=1, kind="stationary", p=np.array([1.0]))
    near = InstanceSpec(arrival=arrival, rewards=((control, RewardDist(kind="bernoulli", mean=mu0 + xi)),))
    far = InstanceSpec(
        arrival=arrival,
        rewards=((control, RewardDist(kind="bernoulli", mean=mu0 + xi + 2.0 * phi)),),
    )
    return near, far
