"""Reference policies anchoring the two ends of the regret/error tradeoff.

``rct`` assigns arms uniformly forever (best accuracy, linear regret),
``ucb`` chases the empirical best arm (logarithmic regret, poor and biased
estimates) and ``se-only`` runs the elimination phase over the whole horizon
without any RCT tail.  All report the plain difference of per-arm running
means as their gap estimate, which for the adaptive policies is a useful
negative control for unbiasedness checks.
"""

from __future__ import annotations

import math

import numpy as np

from .conse import FLAG_FINAL, FLAG_MISSING, ConsePolicy, Estimate

__all__ = ["RctPolicy", "UcbPolicy", "SeOnlyPolicy", "DEFAULT_UCB_CONSTANT"]

DEFAULT_UCB_CONSTANT = math.sqrt(2.0)


class _CountingPolicy:
    """Shared bookkeeping: per-(feature, arm) counts/means and the act/update clock."""

    requires_epsilon = False

    def __init__(self, n: int, m: int, rng: np.random.Generator):
        if n < 1:
            raise ValueError(f"horizon must be positive, got {n}")
        if m < 1:
            raise ValueError(f"feature count must be positive, got {m}")
        self.n = int(n)
        self.m = int(m)
        self._rng = rng
        self._t = 0
        self._pending: tuple[int, int, int] | None = None
        self._sum = np.zeros((m, 2))
        self._cnt = np.zeros((m, 2), dtype=np.int64)

    def _choose(self, t: int, j0: int) -> int:
        raise NotImplementedError

    def act(self, t: int, j: int) -> int:
        if t != self._t + 1:
            raise RuntimeError(f"act called at t={t}, expected t={self._t + 1}")
        if not 1 <= j <= self.m:
            raise ValueError(f"feature index {j} outside 1..{self.m}")
        if self._pending is not None:
            raise RuntimeError("act called twice without an update in between")
        arm = self._choose(t, j - 1)
        self._pending = (t, j, arm)
        return arm

    def update(self, t: int, j: int, arm: int, reward: float) -> list[dict]:
        if self._pending is None or self._pending != (t, j, arm):
            raise RuntimeError("update does not match the preceding act")
        if not 0.0 <= reward <= 1.0:
            raise ValueError(f"reward must lie in [0, 1], got {reward}")
        self._pending = None
        self._t = t
        self._sum[j - 1, arm] += reward
        self._cnt[j - 1, arm] += 1
        return [{"t": t, "feature": j, "arm": arm, "reward": reward, "event": "pull"}]

    def finalize(self) -> list[Estimate]:
        if self._t != self.n:
            raise RuntimeError(f"finalize called at t={self._t}, horizon is {self.n}")
        out = []
        for j0 in range(self.m):
            c0, c1 = self._cnt[j0]
            samples = int(c0 + c1)
            if c0 == 0 or c1 == 0:
                out.append(Estimate(feature=j0 + 1, value=0.0, flag=FLAG_MISSING, samples=samples))
                continue
            value = float(self._sum[j0, 1] / c1 - self._sum[j0, 0] / c0)
            out.append(Estimate(feature=j0 + 1, value=value, flag=FLAG_FINAL, samples=samples))
        return out

    def mean(self, j: int, arm: int) -> float:
        cnt = self._cnt[j - 1, arm]
        return float(self._sum[j - 1, arm] / cnt) if cnt else 0.0

    def count(self, j: int, arm: int) -> int:
        return int(self._cnt[j - 1, arm])


class RctPolicy(_CountingPolicy):
    """Uniform 50/50 assignment on every period."""

    def _choose(self, t: int, j0: int) -> int:
        return 1 if self._rng.random() < 0.5 else 0


class UcbPolicy(_CountingPolicy):
    """Index policy: empirical mean plus an exploration bonus, unpulled arms first."""

    def __init__(self, n: int, m: int, rng: np.random.Generator, c_ucb: float = DEFAULT_UCB_CONSTANT):
        if c_ucb <= 0:
            raise ValueError(f"c_ucb must be > 0, got {c_ucb}")
        super().__init__(n, m, rng)
        self.c_ucb = float(c_ucb)

    def _choose(self, t: int, j0: int) -> int:
        c0, c1 = self._cnt[j0]
        if c0 == 0:
            return 0
        if c1 == 0:
            return 1
        log_t = math.log(t)
        u0 = self._sum[j0, 0] / c0 + self.c_ucb * math.sqrt(log_t / c0)
        u1 = self._sum[j0, 1] / c1 + self.c_ucb * math.sqrt(log_t / c1)
        return 1 if u1 > u0 else 0


class SeOnlyPolicy(ConsePolicy):
    """The elimination phase run over the whole horizon; no RCT, no phase switch.

    Estimates are differences of cumulative per-arm means, so unlike the
    two-phase policy they are adaptively collected (and biased accordingly).
    """

    def __init__(self, n: int, m: int, rng: np.random.Generator):
        super().__init__(alpha=1.0, n=n, m=m, rng=rng)
        self.half = self.n  # every period uses the elimination rule

    def _transition(self, t: int, events: list[dict]) -> None:
        pass  # no second phase

    def finalize(self) -> list[Estimate]:
        if self._t != self.n:
            raise RuntimeError(f"finalize called at t={self._t}, horizon is {self.n}")
        out = []
        for j0 in range(self.m):
            c0, c1 = self._cum_cnt[j0]
            samples = int(c0 + c1)
            if c0 == 0 or c1 == 0:
                out.append(Estimate(feature=j0 + 1, value=0.0, flag=FLAG_MISSING, samples=samples))
                continue
            value = float(self._cum_sum[j0, 1] / c1 - self._cum_sum[j0, 0] / c0)
            out.append(Estimate(feature=j0 + 1, value=value, flag=FLAG_FINAL, samples=samples))
        return out
