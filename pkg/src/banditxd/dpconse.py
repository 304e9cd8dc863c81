"""Differentially private variant of the two-phase elimination policy.

Privatizes four release channels: batch means (Laplace), batch lengths
(nonnegative discrete noise), RCT lengths (same) and the final gap estimate
(Laplace).  Every randomized release is appended to an audit log so runs can
be checked for unaccounted noise sources.
"""

from __future__ import annotations

import math

import numpy as np

from . import mechanism
from .conse import FLAG_MISSING, ConsePolicy

__all__ = ["DpConsePolicy"]

NOISE_BATCH_MEAN = "batch_mean"
NOISE_BATCH_LENGTH = "batch_length"
NOISE_RCT_LENGTH = "rct_length"
NOISE_RELEASE = "release"
NOISE_KINDS = (NOISE_BATCH_MEAN, NOISE_BATCH_LENGTH, NOISE_RCT_LENGTH, NOISE_RELEASE)


class DpConsePolicy(ConsePolicy):
    """Elimination on privatized batch means with randomized batch/RCT lengths.

    ``rct_length_multiplier`` scales the target length handed to the
    nonnegative noise generator that draws each feature's realized RCT
    length (the default of 1 uses the learned length itself).
    """

    requires_epsilon = True

    def __init__(
        self,
        alpha: float,
        epsilon: float,
        n: int,
        m: int,
        rng: np.random.Generator,
        rct_length_multiplier: float = 1.0,
    ):
        if epsilon is None or epsilon <= 0:
            raise ValueError(f"epsilon must be > 0, got {epsilon}")
        if rct_length_multiplier <= 0:
            raise ValueError("rct_length_multiplier must be > 0")
        super().__init__(alpha, n, m, rng)
        self.epsilon = float(epsilon)
        self.rct_length_multiplier = float(rct_length_multiplier)
        self._batch_real = np.zeros(m, dtype=np.int64)  # realized batch lengths, epoch 0 empty
        self._noise_log: list[dict] = []

    # -- hook implementations ---------------------------------------------------

    def _schedule_epsilon(self) -> float:
        return self.epsilon

    def _batch_target(self, j0: int) -> int:
        return int(self._batch_real[j0])

    def _elimination_allowed(self, j0: int) -> bool:
        # A realized batch length of zero means the boundary fired with no
        # usable data; skip the elimination test for that epoch.
        return self._batch_real[j0] > 0

    def _elim_stats(self, j0: int, t: int) -> tuple[float, float, float]:
        epoch = int(self._epoch[j0])
        sched = self._sched(epoch)
        scale = 2.0 / (self.epsilon * sched.r)  # nominal batch length, as specified
        noisy = []
        for arm in (0, 1):
            draw = mechanism.sample_laplace(scale, self._rng)
            self._log(NOISE_BATCH_MEAN, j0 + 1, epoch=epoch, arm=arm, scale_or_eps=scale, draw=draw)
            noisy.append(self._batch_mean(j0, arm) + draw)
        return noisy[0], noisy[1], 2.0 * sched.h + 2.0 * sched.c

    def _on_epoch_advanced(self, j0: int, t: int) -> None:
        epoch = int(self._epoch[j0])
        sched = self._sched(epoch)
        drawn = mechanism.sample_lap_plus(sched.r, self.epsilon, self._rng)
        self._batch_real[j0] = drawn
        self._log(
            NOISE_BATCH_LENGTH, j0 + 1, epoch=epoch, scale_or_eps=self.epsilon, m=float(sched.r), draw=float(drawn)
        )

    def _tmin_floor(self) -> float:
        return math.log(self.n) / self.epsilon

    def _assign_rct_lengths(self, t: int, events: list[dict]) -> None:
        target = self.rct_length_multiplier * self._t_min
        for j0 in range(self.m):
            drawn = mechanism.sample_lap_plus(target, self.epsilon, self._rng)
            self._rct_len[j0] = drawn
            self._log(
                NOISE_RCT_LENGTH, j0 + 1, scale_or_eps=self.epsilon, m=float(target), draw=float(drawn)
            )
            if drawn == 0:
                # No RCT samples will ever be collected; release nothing.
                self._store_estimate(j0, 0.0, FLAG_MISSING, 0)
                events.append(
                    {"t": t, "feature": j0 + 1, "event": "estimate", "value": 0.0, "samples": 0}
                )

    def _release(self, j0: int, raw: float, samples: int) -> float:
        scale = 2.0 / (self.epsilon * samples)
        draw = mechanism.sample_laplace(scale, self._rng)
        self._log(NOISE_RELEASE, j0 + 1, scale_or_eps=scale, draw=draw)
        return raw + draw

    # -- audit log ---------------------------------------------------------------

    def _log(self, kind, feature, epoch=0, arm=-1, scale_or_eps=0.0, m=0.0, draw=0.0):
        self._noise_log.append(
            {
                "noise_kind": kind,
                "feature": feature,
                "epoch": epoch,
                "arm": arm,
                "scale_or_eps": scale_or_eps,
                "m": m,
                "draw": draw,
            }
        )

    @property
    def noise_log(self) -> list[dict]:
        return list(self._noise_log)

    def realized_batch_length(self, j: int) -> int:
        return int(self._batch_real[j - 1])
