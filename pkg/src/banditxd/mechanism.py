"""Epoch schedules and randomization primitives.

Everything in this module is deterministic given its inputs (the samplers
take an explicit random stream), so the same objects can be shared freely
across parallel replications.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Schedule",
    "schedule",
    "sample_laplace",
    "lap_plus_pmf",
    "lap_plus_support_pmf",
    "sample_lap_plus",
    "laplace_log_density_ratio",
]


@dataclass(frozen=True)
class Schedule:
    """Per-epoch quantities driving batched elimination.

    ``delta`` is the target gap 2**-epoch, ``r`` the integer batch length,
    ``h`` the confidence half-width and ``c`` the privacy slack (present only
    when a privacy parameter was supplied).
    """

    epoch: int
    n: int
    delta: float
    r: int
    h: float
    c: float | None = None
    epsilon: float | None = None


def schedule(epoch: int, n: int, epsilon: float | None = None) -> Schedule:
    """Compute the batch schedule for one epoch.

    The batch length is the larger of a gap-squared term and a linear-in-gap
    term (the latter scaled by 1/epsilon in the private variant), ceiled to an
    integer before the final +1.  ``h`` and ``c`` are computed from the
    integer batch length.  Natural logarithms throughout.
    """
    if epoch < 1:
        raise ValueError(f"epoch must be >= 1, got {epoch}")
    if n < 3:
        raise ValueError(f"horizon must be >= 3, got {n}")
    if epsilon is not None and epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    delta = 2.0 ** -epoch
    log16 = math.log(16.0 * n * epoch * epoch)
    log8 = math.log(8.0 * n * epoch * epoch)
    gap_term = 32.0 * log16 / (delta * delta)
    if epsilon is None:
        lin_term = 8.0 * log8 / delta
    else:
        lin_term = 8.0 * log8 / (epsilon * delta)
    r = math.ceil(max(gap_term, lin_term)) + 1
    h = math.sqrt(log16 / (2.0 * r))
    c = None if epsilon is None else log8 / (r * epsilon)
    return Schedule(epoch=epoch, n=n, delta=delta, r=r, h=h, c=c, epsilon=epsilon)


def _laplace_from_uniform(u: float, scale: float) -> float:
    # Exact inverse CDF; u in [0, 1).  Mirrored bitwise by the compiled kernel.
    if u < 0.5:
        if u <= 0.0:
            u = 5e-324
        return scale * math.log(2.0 * u)
    return -scale * math.log(2.0 * (1.0 - u))


def sample_laplace(scale: float, rng: np.random.Generator, size: int | None = None):
    """Zero-mean Laplace draw(s) with the given scale via exact inverse CDF."""
    if scale <= 0:
        raise ValueError(f"scale must be > 0, got {scale}")
    if size is None:
        return _laplace_from_uniform(rng.random(), scale)
    u = rng.random(size)
    u = np.maximum(u, 5e-324)
    return np.where(u < 0.5, scale * np.log(2.0 * u), -scale * np.log(2.0 * (1.0 - u)))


def _lap_plus_params(m: float, epsilon: float) -> tuple[int, float, float]:
    if m <= 0:
        raise ValueError(f"m must be > 0, got {m}")
    if epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    floor_m = math.floor(m)
    q = math.exp(-0.5 * epsilon)
    norm = (1.0 - q) / (1.0 + q - q ** (floor_m + 1))
    return floor_m, q, norm


def lap_plus_pmf(m: float, epsilon: float, value: int) -> float:
    """Probability that the truncated two-sided geometric noise equals ``value``.

    The support is floor(m) + k for integer k >= -floor(m); any value below 0
    has probability 0.  The normalizer is the one forced by the pmf summing
    to 1 over that support.
    """
    floor_m, q, norm = _lap_plus_params(m, epsilon)
    if value < 0:
        return 0.0
    k = value - floor_m
    return norm * q ** abs(k)


def lap_plus_support_pmf(m: float, epsilon: float, tail: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """Tabulate (values, probabilities) covering all but ``tail`` mass."""
    floor_m, q, norm = _lap_plus_params(m, epsilon)
    # K chosen so the untabulated upper tail q^(K+1)/(1-q) * norm < tail.
    k_hi = int(math.ceil(math.log(max(tail * (1.0 - q) / norm, 5e-324)) / math.log(q))) + 1
    values = np.arange(0, floor_m + k_hi + 1, dtype=np.int64)
    probs = norm * q ** np.abs(values - floor_m)
    return values, probs


def _lap_plus_from_uniform(u: float, m: float, epsilon: float) -> int:
    # Inverse CDF on the truncated two-sided geometric; u in [0, 1).
    # Mirrored bitwise by the compiled kernel: keep the operation order stable.
    floor_m = math.floor(m)
    q = math.exp(-0.5 * epsilon)
    log_q = math.log(q)
    q_top = q ** (floor_m + 1.0)
    total = (1.0 + q - q_top) / (1.0 - q)
    target = u * total
    neg_mass = (q - q_top) / (1.0 - q)
    if target < neg_mass:
        # cumulative mass of {-floor_m..k} is (q^-k - q^(floor_m+1)) / (1-q)
        w = target * (1.0 - q) + q_top
        if w < 5e-324:
            w = 5e-324
        k = math.ceil(-math.log(w) / log_q)
        if k < -floor_m:
            k = -floor_m
        elif k > -1:
            k = -1
        while k > -floor_m and (q ** float(-(k - 1)) - q_top) / (1.0 - q) >= target:
            k -= 1
        while (q ** float(-k) - q_top) / (1.0 - q) < target:
            k += 1
    else:
        # cumulative mass of {-floor_m..k} is (1 + q - q^(floor_m+1) - q^(k+1)) / (1-q)
        w = 1.0 + q - q_top - target * (1.0 - q)
        if w < 5e-324:
            w = 5e-324
        k = math.ceil(math.log(w) / log_q - 1.0)
        if k < 0:
            k = 0
        while k > 0 and (1.0 + q - q_top - q ** (float(k - 1) + 1.0)) / (1.0 - q) >= target:
            k -= 1
        while (1.0 + q - q_top - q ** (float(k) + 1.0)) / (1.0 - q) < target:
            k += 1
    return int(floor_m) + int(k)


def sample_lap_plus(m: float, epsilon: float, rng: np.random.Generator, size: int | None = None):
    """Draw floor(m) plus two-sided geometric noise, truncated to stay >= 0."""
    _lap_plus_params(m, epsilon)  # validate
    if size is None:
        return _lap_plus_from_uniform(rng.random(), m, epsilon)
    return np.array([_lap_plus_from_uniform(u, m, epsilon) for u in rng.random(size)], dtype=np.int64)


def laplace_log_density_ratio(scale: float, shift: float) -> float:
    """Worst-case |log f(x) / f(x - shift)| for a Laplace density of the given scale."""
    if scale <= 0:
        raise ValueError(f"scale must be > 0, got {scale}")
    return abs(shift) / scale
