"""Replication engine: environment tables, backend selection and drivers.

Two interchangeable backends run a replication: a compiled kernel
(``banditxd._kernel``, built from Cython) and a pure-Python driver that
exercises the policy classes directly.  Both consume the random stream in
exactly the same order, so a given (instance, policy, seed) produces
bitwise-identical traces on either backend.  Selection happens at import
time (``BANDITXD_BACKEND`` overrides: auto, cython, python).
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import mechanism
from .baselines import DEFAULT_UCB_CONSTANT, RctPolicy, SeOnlyPolicy, UcbPolicy
from .conse import FLAG_FINAL, FLAG_MISSING, FLAG_UNDER_SAMPLED, ConsePolicy
from .dpconse import DpConsePolicy
from .instance import InstanceSpec, sample_feature

try:  # compiled kernel is optional; the pure-Python backend is always available
    from . import _kernel
except ImportError:  # pragma: no cover - depends on the build environment
    _kernel = None

__all__ = [
    "PolicyConfig",
    "RunTrace",
    "run_replication",
    "build_policy",
    "kernel_available",
    "resolve_backend",
    "POLICY_KINDS",
]

POLICY_KINDS = ("conse", "dpconse", "rct", "ucb", "se-only")
_POLICY_CODES = {name: i for i, name in enumerate(POLICY_KINDS)}
_ARRIVAL_CODES = {"stationary": 0, "seasonal-block": 1, "oblivious-sequence": 2}
_REWARD_CODES = {"bernoulli": 0, "truncated-gaussian": 1, "point": 2}
_FLAG_NAMES = (FLAG_FINAL, FLAG_UNDER_SAMPLED, FLAG_MISSING)
_EVENT_NAMES = ("pull", "eliminate", "epoch", "phase", "estimate")
_NOISE_NAMES = ("batch_mean", "batch_length", "rct_length", "release")

_SCHED_EPOCHS = 70
_SCHED_CAP = 2 ** 60


def kernel_available() -> bool:
    return _kernel is not None


def resolve_backend(backend: str | None = None) -> str:
    """Pick the concrete backend: explicit request > env var > auto."""
    choice = backend or os.environ.get("BANDITXD_BACKEND", "auto")
    if choice not in ("auto", "cython", "python"):
        raise ValueError(f"unknown backend {choice!r}; expected auto, cython or python")
    if choice == "auto":
        return "cython" if kernel_available() else "python"
    if choice == "cython" and not kernel_available():
        raise RuntimeError("compiled kernel requested but banditxd._kernel is not built")
    return choice


@dataclass(frozen=True)
class PolicyConfig:
    """Which policy to run and with what knobs."""

    kind: str
    alpha: float = 0.5
    epsilon: float | None = None
    c_ucb: float = DEFAULT_UCB_CONSTANT
    rct_length_multiplier: float = 1.0
    horizon: int | None = None

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy {self.kind!r}; expected one of {POLICY_KINDS}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.kind == "dpconse":
            if self.epsilon is None or self.epsilon <= 0:
                raise ValueError("dpconse requires epsilon > 0")
        elif self.epsilon is not None:
            raise ValueError(f"epsilon is only meaningful for dpconse, not {self.kind!r}")


def build_policy(cfg: PolicyConfig, n: int, m: int, rng: np.random.Generator):
    if cfg.kind == "conse":
        return ConsePolicy(cfg.alpha, n, m, rng)
    if cfg.kind == "dpconse":
        return DpConsePolicy(cfg.alpha, cfg.epsilon, n, m, rng, cfg.rct_length_multiplier)
    if cfg.kind == "rct":
        return RctPolicy(n, m, rng)
    if cfg.kind == "ucb":
        return UcbPolicy(n, m, rng, cfg.c_ucb)
    return SeOnlyPolicy(n, m, rng)


@dataclass
class RunTrace:
    """Everything one replication produced."""

    policy: str
    n: int
    m: int
    alpha: float
    epsilon: float | None
    seed_key: tuple
    backend: str
    final_regret: float
    checkpoint_ts: np.ndarray
    checkpoint_regret: np.ndarray
    estimates: np.ndarray
    est_flags: list[str]
    est_samples: np.ndarray
    rct_counts: np.ndarray
    fhat: np.ndarray
    occurrences: np.ndarray
    subopt_first: np.ndarray
    subopt_total: np.ndarray
    elim_epoch: np.ndarray
    elim_arm: np.ndarray
    viable: np.ndarray
    t_min: int
    t_j: np.ndarray
    events: list[dict] | None = None
    actions: np.ndarray | None = None
    noise_log: list[dict] | None = None

    def events_by_kind(self, kind: str) -> list[dict]:
        if self.events is None:
            raise ValueError("trace was recorded without an event log")
        return [e for e in self.events if e["event"] == kind]


def checkpoint_periods(n: int, points: int = 257) -> np.ndarray:
    ts = np.unique(np.round(np.linspace(1, n, min(n, points))).astype(np.int64))
    return ts


_SCHED_CACHE: dict[tuple, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}


def _schedule_tables(n: int, epsilon: float | None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    key = (n, epsilon)
    cached = _SCHED_CACHE.get(key)
    if cached is not None:
        return cached
    r = np.zeros(_SCHED_EPOCHS, dtype=np.int64)
    h = np.zeros(_SCHED_EPOCHS)
    c = np.zeros(_SCHED_EPOCHS)
    for e in range(1, _SCHED_EPOCHS):
        sched = mechanism.schedule(e, n, epsilon)
        r[e] = min(sched.r, _SCHED_CAP)
        h[e] = sched.h
        c[e] = sched.c if sched.c is not None else 0.0
    for arr in (r, h, c):
        arr.setflags(write=False)
    if len(_SCHED_CACHE) > 64:
        _SCHED_CACHE.clear()
    _SCHED_CACHE[key] = (r, h, c)
    return r, h, c


def _normalize_seed(seed) -> tuple:
    if isinstance(seed, (int, np.integer)):
        return (int(seed),)
    key = tuple(int(s) for s in seed)
    if not key:
        raise ValueError("seed key must not be empty")
    return key


def run_replication(
    inst: InstanceSpec,
    cfg: PolicyConfig,
    seed,
    *,
    backend: str | None = None,
    record_events: bool = False,
    record_actions: bool = False,
    reward_table: np.ndarray | None = None,
) -> RunTrace:
    """Run one replication of (instance, policy) under the given seed key.

    ``reward_table`` replaces the stochastic rewards with a fixed per-period
    table of shape (n, 2); used for replaying neighboring datasets in the
    privacy audit.
    """
    if cfg.horizon is not None and cfg.horizon != inst.n:
        raise ValueError(f"policy horizon {cfg.horizon} does not match instance horizon {inst.n}")
    if reward_table is not None:
        reward_table = np.ascontiguousarray(reward_table, dtype=np.float64)
        if reward_table.shape != (inst.n, 2):
            raise ValueError(f"reward table must have shape ({inst.n}, 2)")
        if reward_table.min() < 0.0 or reward_table.max() > 1.0:
            raise ValueError("reward table entries must lie in [0, 1]")
    seed_key = _normalize_seed(seed)
    chosen = resolve_backend(backend)
    bitgen = np.random.PCG64(np.random.SeedSequence(list(seed_key)))
    runner = _run_cython if chosen == "cython" else _run_python
    trace = runner(inst, cfg, bitgen, record_events, record_actions, reward_table)
    trace.seed_key = seed_key
    trace.backend = chosen
    return trace


def _draw_reward(inst, reward_table, t, j0, arm, rng):
    if reward_table is not None:
        return float(reward_table[t - 1, arm])
    return inst.rewards[j0][arm].sample(rng)


def _run_python(inst, cfg, bitgen, record_events, record_actions, reward_table) -> RunTrace:
    rng = np.random.Generator(bitgen)
    n, m = inst.n, inst.m
    policy = build_policy(cfg, n, m, rng)
    delta = inst.delta
    opt = np.where(delta > 0, 1, np.where(delta < 0, 0, -1)).astype(np.int8)
    ck_ts = checkpoint_periods(n)
    ck_reg = np.zeros(len(ck_ts))
    ck_i = 0
    regret = 0.0
    occurrences = np.zeros(m, dtype=np.int64)
    subopt_first = np.zeros(m, dtype=np.int64)
    subopt_total = np.zeros(m, dtype=np.int64)
    events: list[dict] | None = [] if record_events else None
    actions = np.full(n, -1, dtype=np.int8) if record_actions else None
    half = n // 2
    for t in range(1, n + 1):
        j = sample_feature(inst.arrival, t, rng)
        j0 = j - 1
        arm = policy.act(t, j)
        reward = _draw_reward(inst, reward_table, t, j0, arm, rng)
        evs = policy.update(t, j, arm, reward)
        if events is not None:
            events.extend(evs)
        if actions is not None:
            actions[t - 1] = arm
        occurrences[j0] += 1
        if opt[j0] >= 0 and arm != opt[j0]:
            regret += abs(float(delta[j0]))
            subopt_total[j0] += 1
            if t <= half:
                subopt_first[j0] += 1
        if ck_i < len(ck_ts) and t == ck_ts[ck_i]:
            ck_reg[ck_i] = regret
            ck_i += 1
    estimates = policy.finalize()
    return _trace_from_policy(
        inst, cfg, policy, estimates, regret, ck_ts, ck_reg,
        occurrences, subopt_first, subopt_total, events, actions,
    )


def _trace_from_policy(
    inst, cfg, policy, estimates, regret, ck_ts, ck_reg,
    occurrences, subopt_first, subopt_total, events, actions,
) -> RunTrace:
    m = inst.m
    est_value = np.array([e.value for e in estimates])
    est_flags = [e.flag for e in estimates]
    est_samples = np.array([e.samples for e in estimates], dtype=np.int64)
    if isinstance(policy, ConsePolicy):
        if isinstance(policy, SeOnlyPolicy):
            rct_counts = policy._cum_cnt.copy()
        else:
            rct_counts = policy._rct_cnt.copy()
        fhat = policy._fhat.copy()
        t_min = int(policy._t_min)
        t_j = policy._rct_len.copy()
        elim_epoch = policy._elim_epoch.copy()
        elim_arm = policy._elim_arm.copy()
        viable = policy._viable.copy()
    else:
        rct_counts = policy._cnt.copy()
        fhat = np.zeros(m, dtype=np.int64)
        t_min = 0
        t_j = np.zeros(m, dtype=np.int64)
        elim_epoch = np.zeros(m, dtype=np.int64)
        elim_arm = np.full(m, -1, dtype=np.int8)
        viable = np.full(m, 2, dtype=np.int8)
    noise_log = policy.noise_log if isinstance(policy, DpConsePolicy) else None
    return RunTrace(
        policy=cfg.kind,
        n=inst.n,
        m=m,
        alpha=cfg.alpha,
        epsilon=cfg.epsilon,
        seed_key=(),
        backend="python",
        final_regret=regret,
        checkpoint_ts=ck_ts,
        checkpoint_regret=ck_reg,
        estimates=est_value,
        est_flags=est_flags,
        est_samples=est_samples,
        rct_counts=rct_counts,
        fhat=fhat,
        occurrences=occurrences,
        subopt_first=subopt_first,
        subopt_total=subopt_total,
        elim_epoch=elim_epoch,
        elim_arm=elim_arm,
        viable=viable,
        t_min=t_min,
        t_j=t_j,
        events=events,
        actions=actions,
        noise_log=noise_log,
    )


def _compile_tables(inst: InstanceSpec, cfg: PolicyConfig, reward_table) -> dict:
    n, m = inst.n, inst.m
    arrival = inst.arrival
    a_kind = _ARRIVAL_CODES[arrival.kind]
    stat_p = np.zeros(0)
    period_row = np.zeros(0, dtype=np.int32)
    row_p = np.zeros((0, m))
    obl_seq = np.zeros(0, dtype=np.int64)
    if arrival.kind == "stationary":
        stat_p = np.ascontiguousarray(arrival.p, dtype=np.float64)
    elif arrival.kind == "seasonal-block":
        lengths = np.array([length for length, _ in arrival.blocks], dtype=np.int64)
        row_p = np.ascontiguousarray([vec for _, vec in arrival.blocks], dtype=np.float64)
        ends = np.cumsum(lengths)
        pos = np.arange(n, dtype=np.int64) % int(ends[-1])
        period_row = np.searchsorted(ends, pos, side="right").astype(np.int32)
    else:
        obl_seq = np.ascontiguousarray(arrival.sequence - 1, dtype=np.int64)
    rkind = np.zeros((m, 2), dtype=np.int8)
    rp1 = np.zeros((m, 2))
    rp2 = np.zeros((m, 2))
    for j0, (d0, d1) in enumerate(inst.rewards):
        for arm, dist in ((0, d0), (1, d1)):
            rkind[j0, arm] = _REWARD_CODES[dist.kind]
            rp1[j0, arm] = dist.value if dist.kind == "point" else dist.mean
            rp2[j0, arm] = dist.sd
    if reward_table is not None:
        rkind[:] = 3
        rtable = reward_table
    else:
        rtable = np.zeros((0, 2))
    delta = np.ascontiguousarray(inst.delta, dtype=np.float64)
    opt = np.where(delta > 0, 1, np.where(delta < 0, 0, -1)).astype(np.int8)
    needs_sched = cfg.kind in ("conse", "dpconse", "se-only")
    if needs_sched:
        sched_r, sched_h, sched_c = _schedule_tables(n, cfg.epsilon)
    else:
        sched_r = np.zeros(_SCHED_EPOCHS, dtype=np.int64)
        sched_h = np.zeros(_SCHED_EPOCHS)
        sched_c = np.zeros(_SCHED_EPOCHS)
    return {
        "a_kind": a_kind, "stat_p": stat_p, "period_row": period_row, "row_p": row_p,
        "obl_seq": obl_seq, "rkind": rkind, "rp1": rp1, "rp2": rp2, "rtable": rtable,
        "delta": delta, "opt": opt, "sched_r": sched_r, "sched_h": sched_h, "sched_c": sched_c,
    }


def _run_cython(inst, cfg, bitgen, record_events, record_actions, reward_table) -> RunTrace:
    n, m = inst.n, inst.m
    tb = _compile_tables(inst, cfg, reward_table)
    ck_ts = checkpoint_periods(n)
    ck_reg = np.zeros(len(ck_ts))
    est_value = np.zeros(m)
    est_flag = np.zeros(m, dtype=np.int8)
    est_samples = np.zeros(m, dtype=np.int64)
    rct_counts = np.zeros((m, 2), dtype=np.int64)
    fhat = np.zeros(m, dtype=np.int64)
    occurrences = np.zeros(m, dtype=np.int64)
    subopt_first = np.zeros(m, dtype=np.int64)
    subopt_total = np.zeros(m, dtype=np.int64)
    elim_epoch = np.zeros(m, dtype=np.int64)
    elim_arm = np.full(m, -1, dtype=np.int8)
    viable = np.full(m, 2, dtype=np.int8)
    scalars_out = np.zeros(2, dtype=np.int64)  # t_min, event count
    t_j = np.zeros(m, dtype=np.int64)
    ev_cap = (3 * n + 6 * m + 16) if record_events else 0
    ev_t = np.zeros(ev_cap, dtype=np.int64)
    ev_feature = np.zeros(ev_cap, dtype=np.int16)
    ev_arm = np.zeros(ev_cap, dtype=np.int8)
    ev_value = np.zeros(ev_cap)
    ev_aux = np.zeros(ev_cap, dtype=np.int64)
    ev_kind = np.zeros(ev_cap, dtype=np.int8)
    is_dp = cfg.kind == "dpconse"
    nl_cap = (3 * n + 4 * m + 16) if is_dp else 0
    nl_kind = np.zeros(nl_cap, dtype=np.int8)
    nl_feature = np.zeros(nl_cap, dtype=np.int16)
    nl_epoch = np.zeros(nl_cap, dtype=np.int16)
    nl_arm = np.zeros(nl_cap, dtype=np.int8)
    nl_scale = np.zeros(nl_cap)
    nl_m = np.zeros(nl_cap)
    nl_draw = np.zeros(nl_cap)
    nl_count = np.zeros(1, dtype=np.int64)
    actions = np.full(n, -1, dtype=np.int8) if record_actions else np.zeros(0, dtype=np.int8)
    final_regret = _kernel.simulate(
        n, m, _POLICY_CODES[cfg.kind], cfg.alpha,
        cfg.epsilon if cfg.epsilon is not None else 0.0,
        cfg.c_ucb, cfg.rct_length_multiplier,
        tb["a_kind"], tb["stat_p"], tb["period_row"], tb["row_p"], tb["obl_seq"],
        tb["rkind"], tb["rp1"], tb["rp2"], tb["rtable"],
        tb["delta"], tb["opt"],
        tb["sched_r"], tb["sched_h"], tb["sched_c"],
        ck_ts, bitgen,
        1 if record_events else 0, 1 if record_actions else 0,
        ck_reg, est_value, est_flag, est_samples, rct_counts, fhat,
        occurrences, subopt_first, subopt_total,
        elim_epoch, elim_arm, viable, t_j, scalars_out,
        ev_t, ev_feature, ev_arm, ev_value, ev_aux, ev_kind,
        nl_kind, nl_feature, nl_epoch, nl_arm, nl_scale, nl_m, nl_draw, nl_count,
        actions,
    )
    events = None
    if record_events:
        events = _events_to_dicts(
            scalars_out[1], ev_t, ev_feature, ev_arm, ev_value, ev_aux, ev_kind
        )
    noise_log = None
    if is_dp:
        noise_log = _noise_to_dicts(
            nl_count[0], nl_kind, nl_feature, nl_epoch, nl_arm, nl_scale, nl_m, nl_draw
        )
    return RunTrace(
        policy=cfg.kind, n=n, m=m, alpha=cfg.alpha, epsilon=cfg.epsilon,
        seed_key=(), backend="cython", final_regret=float(final_regret),
        checkpoint_ts=ck_ts, checkpoint_regret=ck_reg,
        estimates=est_value, est_flags=[_FLAG_NAMES[f] for f in est_flag],
        est_samples=est_samples, rct_counts=rct_counts, fhat=fhat,
        occurrences=occurrences, subopt_first=subopt_first, subopt_total=subopt_total,
        elim_epoch=elim_epoch, elim_arm=elim_arm, viable=viable,
        t_min=int(scalars_out[0]), t_j=t_j,
        events=events,
        actions=actions if record_actions else None,
        noise_log=noise_log,
    )


def _events_to_dicts(count, ev_t, ev_feature, ev_arm, ev_value, ev_aux, ev_kind) -> list[dict]:
    out = []
    for i in range(int(count)):
        kind = _EVENT_NAMES[ev_kind[i]]
        t = int(ev_t[i])
        j = int(ev_feature[i])
        if kind == "pull":
            out.append({"t": t, "feature": j, "arm": int(ev_arm[i]), "reward": float(ev_value[i]), "event": kind})
        elif kind == "eliminate":
            out.append({"t": t, "feature": j, "arm": int(ev_arm[i]), "event": kind, "epoch": int(ev_aux[i])})
        elif kind == "epoch":
            out.append({"t": t, "feature": j, "event": kind, "epoch": int(ev_aux[i])})
        elif kind == "phase":
            out.append({"t": t, "event": kind, "t_min": int(ev_aux[i])})
        else:
            out.append({"t": t, "feature": j, "event": kind, "value": float(ev_value[i]), "samples": int(ev_aux[i])})
    return out


def _noise_to_dicts(count, nl_kind, nl_feature, nl_epoch, nl_arm, nl_scale, nl_m, nl_draw) -> list[dict]:
    out = []
    for i in range(int(count)):
        out.append(
            {
                "noise_kind": _NOISE_NAMES[nl_kind[i]],
                "feature": int(nl_feature[i]),
                "epoch": int(nl_epoch[i]),
                "arm": int(nl_arm[i]),
                "scale_or_eps": float(nl_scale[i]),
                "m": float(nl_m[i]),
                "draw": float(nl_draw[i]),
            }
        )
    return out
