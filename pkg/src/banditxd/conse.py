"""Two-phase contextual successive elimination with a learned RCT tail.

Phase 1 (periods 1..n//2) runs batched successive elimination independently
per feature while counting feature occurrences.  At the half-horizon the
occurrence counts fix a common RCT length; phase 2 runs a fresh uniform RCT
of that length per feature, emits the treatment-gap estimate from exactly
those RCT samples, and then plays greedily.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import mechanism

__all__ = ["ConsePolicy", "Estimate"]

FLAG_FINAL = "final"
FLAG_UNDER_SAMPLED = "under-sampled"
FLAG_MISSING = "missing"


@dataclass(frozen=True)
class Estimate:
    """Per-feature treatment-gap estimate with provenance flag."""

    feature: int
    value: float
    flag: str
    samples: int


class ConsePolicy:
    """Per-feature successive elimination, then an RCT of learned length.

    One instance drives a single replication; mutation is single threaded.
    ``act``/``update`` must be called in matched pairs with t = 1..n.
    """

    requires_epsilon = False

    def __init__(self, alpha: float, n: int, m: int, rng: np.random.Generator):
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
        if n < 4:
            raise ValueError(f"horizon must be >= 4, got {n}")
        if m < 1:
            raise ValueError(f"feature count must be >= 1, got {m}")
        self.alpha = float(alpha)
        self.n = int(n)
        self.m = int(m)
        self.half = self.n // 2
        self._rng = rng
        self._t = 0
        self._pending: tuple[int, int, int] | None = None
        self._second_half = False
        # 2 = both arms viable, otherwise the code of the committed arm.
        self._viable = np.full(m, 2, dtype=np.int8)
        self._epoch = np.zeros(m, dtype=np.int64)
        self._batch_r = np.zeros(m, dtype=np.int64)
        self._batch_sum = np.zeros((m, 2))
        self._batch_cnt = np.zeros((m, 2), dtype=np.int64)
        self._cum_sum = np.zeros((m, 2))
        self._cum_cnt = np.zeros((m, 2), dtype=np.int64)
        self._n_occ = np.zeros(m, dtype=np.int64)
        self._rct_sum = np.zeros((m, 2))
        self._rct_cnt = np.zeros((m, 2), dtype=np.int64)
        self._rct_len = np.zeros(m, dtype=np.int64)
        self._fhat = np.zeros(m, dtype=np.int64)
        self._t_min = 0
        self._emitted = np.zeros(m, dtype=bool)
        self._est_value = np.zeros(m)
        self._est_flag = [None] * m
        self._est_samples = np.zeros(m, dtype=np.int64)
        self._elim_epoch = np.zeros(m, dtype=np.int64)
        self._elim_arm = np.full(m, -1, dtype=np.int8)
        self._schedules: dict[int, mechanism.Schedule] = {}

    # -- hooks overridden by the private variant ------------------------------

    def _schedule_epsilon(self) -> float | None:
        return None

    def _batch_target(self, j0: int) -> int:
        e = int(self._epoch[j0])
        return 0 if e == 0 else self._sched(e).r

    def _elimination_allowed(self, j0: int) -> bool:
        return True

    def _elim_stats(self, j0: int, t: int) -> tuple[float, float, float]:
        sched = self._sched(int(self._epoch[j0]))
        m0 = self._batch_mean(j0, 0)
        m1 = self._batch_mean(j0, 1)
        return m0, m1, 2.0 * sched.h

    def _on_epoch_advanced(self, j0: int, t: int) -> None:
        pass

    def _tmin_floor(self) -> float:
        return math.log(self.n)

    def _assign_rct_lengths(self, t: int, events: list[dict]) -> None:
        self._rct_len[:] = self._t_min

    def _release(self, j0: int, raw: float, samples: int) -> float:
        return raw

    # -- public protocol -------------------------------------------------------

    def act(self, t: int, j: int) -> int:
        """Choose the arm for the period-t arrival of feature j (both 1-based)."""
        if t != self._t + 1:
            raise RuntimeError(f"act called at t={t}, expected t={self._t + 1}")
        if not 1 <= j <= self.m:
            raise ValueError(f"feature index {j} outside 1..{self.m}")
        if self._pending is not None:
            raise RuntimeError("act called twice without an update in between")
        j0 = j - 1
        if t <= self.half:
            arm = self._coin() if self._viable[j0] == 2 else int(self._viable[j0])
        else:
            if self._n_occ[j0] + 1 <= self._rct_len[j0]:
                arm = self._coin()
            else:
                arm = self._tail_arm(j0)
        self._pending = (t, j, arm)
        return arm

    def update(self, t: int, j: int, arm: int, reward: float) -> list[dict]:
        """Consume the observed reward; returns the events this step produced."""
        if self._pending is None or self._pending != (t, j, arm):
            raise RuntimeError("update does not match the preceding act")
        if not 0.0 <= reward <= 1.0:
            raise ValueError(f"reward must lie in [0, 1], got {reward}")
        self._pending = None
        self._t = t
        j0 = j - 1
        events = [{"t": t, "feature": j, "arm": arm, "reward": reward, "event": "pull"}]
        self._n_occ[j0] += 1
        if t <= self.half:
            self._first_half_step(t, j0, arm, reward, events)
            if t == self.half:
                self._transition(t, events)
        else:
            self._second_half_step(t, j0, arm, reward, events)
        return events

    def finalize(self) -> list[Estimate]:
        """Per-feature estimates once the horizon is exhausted."""
        if self._t != self.n:
            raise RuntimeError(f"finalize called at t={self._t}, horizon is {self.n}")
        out = []
        for j0 in range(self.m):
            if not self._emitted[j0]:
                self._fallback_estimate(j0)
            out.append(
                Estimate(
                    feature=j0 + 1,
                    value=float(self._est_value[j0]),
                    flag=self._est_flag[j0],
                    samples=int(self._est_samples[j0]),
                )
            )
        return out

    # -- internals ---------------------------------------------------------------

    def _sched(self, epoch: int) -> mechanism.Schedule:
        sched = self._schedules.get(epoch)
        if sched is None:
            sched = mechanism.schedule(epoch, self.n, self._schedule_epsilon())
            self._schedules[epoch] = sched
        return sched

    def _coin(self) -> int:
        return 1 if self._rng.random() < 0.5 else 0

    def _batch_mean(self, j0: int, arm: int) -> float:
        cnt = self._batch_cnt[j0, arm]
        return float(self._batch_sum[j0, arm] / cnt) if cnt else 0.0

    def _tail_arm(self, j0: int) -> int:
        if self._viable[j0] != 2:
            return int(self._viable[j0])
        c0, c1 = self._cum_cnt[j0]
        m0 = float(self._cum_sum[j0, 0] / c0) if c0 else 0.0
        m1 = float(self._cum_sum[j0, 1] / c1) if c1 else 0.0
        return 1 if m1 >= m0 else 0

    def _first_half_step(self, t: int, j0: int, arm: int, reward: float, events: list[dict]) -> None:
        self._cum_sum[j0, arm] += reward
        self._cum_cnt[j0, arm] += 1
        if self._viable[j0] != 2:
            return
        self._batch_sum[j0, arm] += reward
        self._batch_cnt[j0, arm] += 1
        self._batch_r[j0] += 1
        if self._batch_r[j0] < self._batch_target(j0):
            return
        epoch = int(self._epoch[j0])
        if epoch >= 1 and self._elimination_allowed(j0):
            m0, m1, threshold = self._elim_stats(j0, t)
            top = m0 if m0 >= m1 else m1
            removed = -1
            if top - m0 > threshold:
                removed = 0
            elif top - m1 > threshold:
                removed = 1
            if removed >= 0:
                self._viable[j0] = 1 - removed
                self._elim_epoch[j0] = epoch
                self._elim_arm[j0] = removed
                events.append(
                    {"t": t, "feature": j0 + 1, "arm": removed, "event": "eliminate", "epoch": epoch}
                )
        self._epoch[j0] += 1
        self._batch_r[j0] = 0
        self._batch_sum[j0] = 0.0
        self._batch_cnt[j0] = 0
        self._on_epoch_advanced(j0, t)
        events.append({"t": t, "feature": j0 + 1, "event": "epoch", "epoch": int(self._epoch[j0])})

    def _transition(self, t: int, events: list[dict]) -> None:
        self._fhat[:] = self._n_occ
        floor = self._tmin_floor()
        if self.alpha == 1.0:
            smallest = 1.0
        else:
            g = self._fhat.astype(np.float64) ** (1.0 - self.alpha)
            smallest = float(g.min())
        self._t_min = int(math.ceil(max(floor, smallest)))
        self._second_half = True
        self._n_occ[:] = 0
        self._rct_sum[:] = 0.0
        self._rct_cnt[:] = 0
        events.append({"t": t, "event": "phase", "t_min": self._t_min})
        self._assign_rct_lengths(t, events)

    def _second_half_step(self, t: int, j0: int, arm: int, reward: float, events: list[dict]) -> None:
        target = int(self._rct_len[j0])
        if self._n_occ[j0] > target:
            return  # greedy tail: no statistics are updated
        self._rct_sum[j0, arm] += reward
        self._rct_cnt[j0, arm] += 1
        if self._n_occ[j0] == target and not self._emitted[j0]:
            raw = self._rct_diff(j0)
            value = self._release(j0, raw, target)
            self._store_estimate(j0, value, FLAG_FINAL, target)
            events.append(
                {"t": t, "feature": j0 + 1, "event": "estimate", "value": value, "samples": target}
            )

    def _rct_diff(self, j0: int) -> float:
        c0, c1 = self._rct_cnt[j0]
        m0 = float(self._rct_sum[j0, 0] / c0) if c0 else 0.0
        m1 = float(self._rct_sum[j0, 1] / c1) if c1 else 0.0
        return m1 - m0

    def _store_estimate(self, j0: int, value: float, flag: str, samples: int) -> None:
        self._emitted[j0] = True
        self._est_value[j0] = value
        self._est_flag[j0] = flag
        self._est_samples[j0] = samples

    def _fallback_estimate(self, j0: int) -> None:
        collected = int(self._n_occ[j0])
        if collected == 0 or self._rct_cnt[j0, 0] == 0 or self._rct_cnt[j0, 1] == 0:
            self._store_estimate(j0, 0.0, FLAG_MISSING, collected)
            return
        raw = self._rct_diff(j0)
        self._store_estimate(j0, self._release(j0, raw, collected), FLAG_UNDER_SAMPLED, collected)

    # -- read-only views used by tests and the harness ---------------------------

    @property
    def phase(self) -> str:
        return "second-half" if self._second_half else "first-half"

    @property
    def t_min(self) -> int:
        return self._t_min

    @property
    def fhat(self) -> np.ndarray:
        return self._fhat.copy()

    def viable(self, j: int) -> tuple[int, ...]:
        code = int(self._viable[j - 1])
        return (0, 1) if code == 2 else (code,)

    def epoch(self, j: int) -> int:
        return int(self._epoch[j - 1])

    def rct_length(self, j: int) -> int:
        return int(self._rct_len[j - 1])
