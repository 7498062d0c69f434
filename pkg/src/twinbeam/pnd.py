"""Truncated joint photon-number distributions and their moment statistics.

A :class:`JointPND` holds ``p(n_S, n_I)`` on ``0..n_max_S x 0..n_max_I`` plus
the probability mass dropped by truncation.  :class:`Marginal` holds any
one-dimensional derived distribution: an arm marginal, or the distribution
of ``n_S + n_I`` / ``n_S - n_I`` (the latter on a signed support).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import stats

from .errors import DomainError, UndefinedStatisticError

DEFAULT_EPS_TRUNC = 1e-12
NORM_TOL = 1e-9

MarginalLabel = Literal["signal", "idler", "sum", "difference"]


def _frozen(arr) -> np.ndarray:
    out = np.array(arr, dtype=float, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class JointPND:
    """Joint signal-idler photon-number distribution on a truncated support.

    Parameters
    ----------
    probs : array_like, shape (n_max_s + 1, n_max_i + 1)
        ``probs[n_s, n_i]``; entries must be nonnegative.
    tail_mass : float
        Probability discarded by truncation.  ``probs.sum() + tail_mass``
        must equal one within ``1e-9``.
    """

    probs: np.ndarray
    tail_mass: float = 0.0

    def __post_init__(self):
        probs = _frozen(self.probs)
        if probs.ndim != 2 or probs.size == 0:
            raise DomainError(f"probs must be a non-empty 2-D array, got shape {probs.shape}")
        if not np.all(np.isfinite(probs)):
            raise DomainError("probs contains non-finite entries")
        if np.any(probs < 0):
            raise DomainError(f"probs has negative entries (min {probs.min():.3e})")
        if not (0.0 <= self.tail_mass < 1.0):
            raise DomainError(f"tail_mass must lie in [0, 1), got {self.tail_mass}")
        total = math.fsum(probs.ravel()) + self.tail_mass
        if abs(total - 1.0) > NORM_TOL:
            raise DomainError(f"probabilities plus tail mass sum to {total!r}, not 1")
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "tail_mass", float(self.tail_mass))

    @classmethod
    def from_array(cls, arr, normalize: bool = True) -> "JointPND":
        """Build from a nonnegative array, rescaling it to unit mass if asked."""
        arr = np.asarray(arr, dtype=float)
        if normalize:
            if np.any(arr < 0):
                raise DomainError("cannot normalize an array with negative entries")
            total = arr.sum()
            if not np.isfinite(total) or total <= 0:
                raise DomainError("array has no positive mass to normalize")
            arr = arr / total
        return cls(arr)

    @property
    def n_max_s(self) -> int:
        return self.probs.shape[0] - 1

    @property
    def n_max_i(self) -> int:
        return self.probs.shape[1] - 1

    @property
    def mass(self) -> float:
        return math.fsum(self.probs.ravel())

    def padded(self, n_max_s: int, n_max_i: int) -> "JointPND":
        """Return the same distribution embedded in a larger support."""
        if n_max_s < self.n_max_s or n_max_i < self.n_max_i:
            raise DomainError("padding cannot shrink the support")
        out = np.zeros((n_max_s + 1, n_max_i + 1))
        out[: self.n_max_s + 1, : self.n_max_i + 1] = self.probs
        return JointPND(out, self.tail_mass)

    def to_dict(self) -> dict:
        return {
            "n_max_s": self.n_max_s,
            "n_max_i": self.n_max_i,
            "tail_mass": self.tail_mass,
            "probs": self.probs.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "JointPND":
        try:
            shape = (int(data["n_max_s"]) + 1, int(data["n_max_i"]) + 1)
            probs = np.asarray(data["probs"], dtype=float)
            tail = float(data.get("tail_mass", 0.0))
        except (KeyError, TypeError, ValueError) as exc:
            raise DomainError(f"malformed joint distribution: {exc}") from exc
        if probs.size != shape[0] * shape[1]:
            raise DomainError(
                f"probs has {probs.size} entries, expected {shape[0]}x{shape[1]}")
        return cls(probs.reshape(shape), tail)


@dataclass(frozen=True, eq=False)
class Marginal:
    """One-dimensional distribution derived from a joint distribution.

    ``probs[k]`` is the probability of the value ``k - offset``; the offset is
    nonzero only for the difference distribution, whose support is
    ``[-n_max_I, n_max_S]``.
    """

    probs: np.ndarray
    label: MarginalLabel
    offset: int = 0
    tail_mass: float = 0.0

    def __post_init__(self):
        probs = _frozen(self.probs)
        if probs.ndim != 1 or probs.size == 0:
            raise DomainError("marginal probabilities must be a non-empty 1-D array")
        if np.any(probs < 0):
            raise DomainError("marginal has negative entries")
        object.__setattr__(self, "probs", probs)

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.probs.size) - self.offset

    @property
    def mass(self) -> float:
        return math.fsum(self.probs)

    def mean(self) -> float:
        return math.fsum(self.support * self.probs) / self.mass

    def variance(self) -> float:
        dev = self.support - self.mean()
        return math.fsum(dev * dev * self.probs) / self.mass

    def moment(self, k: int) -> float:
        return math.fsum(self.support.astype(float) ** k * self.probs) / self.mass


def _check_trunc_args(mu: float, eps_trunc: float) -> None:
    if not np.isfinite(mu) or mu < 0:
        raise DomainError(f"mean pair number must be >= 0, got {mu}")
    if not (0 < eps_trunc < 1):
        raise DomainError(f"truncation tolerance must lie in (0, 1), got {eps_trunc}")


def _diagonal(weights: np.ndarray, tail: float) -> JointPND:
    return JointPND(np.diag(weights), tail)


def make_poisson_pairs(mu: float, eps_trunc: float = DEFAULT_EPS_TRUNC) -> JointPND:
    """Perfectly paired photons with Poissonian pair-number statistics.

    ``p(n, n) = mu**n exp(-mu) / n!``; the support ends at the first ``n_max``
    whose upper Poisson tail is below ``eps_trunc``.
    """
    _check_trunc_args(mu, eps_trunc)
    if mu == 0:
        return _diagonal(np.ones(1), 0.0)
    n_max = int(stats.poisson.isf(eps_trunc, mu))
    while stats.poisson.sf(n_max, mu) >= eps_trunc:
        n_max += 1
    while n_max > 0 and stats.poisson.sf(n_max - 1, mu) < eps_trunc:
        n_max -= 1
    n = np.arange(n_max + 1)
    return _diagonal(stats.poisson.pmf(n, mu), float(stats.poisson.sf(n_max, mu)))


def make_gaussian_pairs(mu: float, eps_trunc: float = DEFAULT_EPS_TRUNC) -> JointPND:
    """Perfectly paired photons with geometric (single-mode thermal) statistics.

    ``p(n, n) = mu**n / (mu + 1)**(n + 1)``, truncated where the geometric
    tail ``(mu / (mu + 1))**(n_max + 1)`` drops below ``eps_trunc``.
    """
    _check_trunc_args(mu, eps_trunc)
    if mu == 0:
        return _diagonal(np.ones(1), 0.0)
    log_ratio = math.log(mu) - math.log1p(mu)
    n_max = max(0, math.ceil(math.log(eps_trunc) / log_ratio) - 1)
    while (n_max + 1) * log_ratio >= math.log(eps_trunc):
        n_max += 1
    n = np.arange(n_max + 1)
    weights = np.exp(n * log_ratio - math.log1p(mu))
    return _diagonal(weights, math.exp((n_max + 1) * log_ratio))


def product_distribution(m_s: Marginal, m_i: Marginal) -> JointPND:
    """Joint distribution of independent arms with the given marginals."""
    for m in (m_s, m_i):
        if m.offset != 0:
            raise DomainError(f"{m.label} marginal has a signed support")
        if abs(m.mass + m.tail_mass - 1.0) > NORM_TOL:
            raise DomainError(f"{m.label} marginal is not normalized (mass {m.mass!r})")
    tail = 1.0 - (1.0 - m_s.tail_mass) * (1.0 - m_i.tail_mass)
    return JointPND(np.outer(m_s.probs, m_i.probs), tail)


def marginals(p: JointPND) -> tuple[Marginal, Marginal]:
    """Signal and idler marginals (row and column sums)."""
    # the tail cannot be split between arms, so it is charged to both
    return (Marginal(p.probs.sum(axis=1), "signal", tail_mass=p.tail_mass),
            Marginal(p.probs.sum(axis=0), "idler", tail_mass=p.tail_mass))


def diff_distribution(p: JointPND) -> Marginal:
    """Distribution of ``n_S - n_I`` on ``[-n_max_I, n_max_S]``."""
    rows, cols = p.probs.shape
    out = np.zeros(rows + cols - 1)
    offset = cols - 1
    for n_s in range(rows):
        # n_s - n_i + offset runs from n_s + offset down to n_s
        out[n_s: n_s + cols] += p.probs[n_s, ::-1]
    return Marginal(out, "difference", offset=offset, tail_mass=p.tail_mass)


def sum_distribution(p: JointPND) -> Marginal:
    """Distribution of ``n_S + n_I`` on ``[0, n_max_S + n_max_I]``."""
    rows, cols = p.probs.shape
    out = np.zeros(rows + cols - 1)
    for n_s in range(rows):
        out[n_s: n_s + cols] += p.probs[n_s]
    return Marginal(out, "sum", tail_mass=p.tail_mass)


def _arm_moments(probs: np.ndarray):
    total = math.fsum(probs.ravel())
    n_s = np.arange(probs.shape[0], dtype=float)
    n_i = np.arange(probs.shape[1], dtype=float)
    row, col = probs.sum(axis=1), probs.sum(axis=0)
    mean_s = math.fsum(n_s * row) / total
    mean_i = math.fsum(n_i * col) / total
    d_s, d_i = n_s - mean_s, n_i - mean_i
    var_s = math.fsum(d_s * d_s * row) / total
    var_i = math.fsum(d_i * d_i * col) / total
    cov = math.fsum((np.outer(d_s, d_i) * probs).ravel()) / total
    return mean_s, mean_i, var_s, var_i, cov


def _degenerate(var: float, mean: float) -> bool:
    return var <= 1e-14 * (1.0 + mean * mean)


def joint_covariance(probs: np.ndarray) -> float:
    """Normalized covariance of a 2-D nonnegative array treated as a distribution."""
    mean_s, mean_i, var_s, var_i, cov = _arm_moments(np.asarray(probs, dtype=float))
    if _degenerate(var_s, mean_s) or _degenerate(var_i, mean_i):
        raise UndefinedStatisticError(
            f"covariance undefined: arm variances are {var_s:.3e} and {var_i:.3e}")
    return float(np.clip(cov / math.sqrt(var_s * var_i), -1.0, 1.0))


def covariance(p: JointPND) -> float:
    """Normalized signal-idler covariance, in ``[-1, 1]``.

    Raises
    ------
    UndefinedStatisticError
        If either arm has zero variance.
    """
    return joint_covariance(p.probs)


def s_coefficient(m: Marginal) -> float:
    """Statistics coefficient ``<n^2>/<n>^2 - 1/<n>`` (1 for Poisson, 2 for thermal)."""
    mean = m.mean()
    if mean <= 0:
        raise UndefinedStatisticError(f"S coefficient undefined for mean {mean!r}")
    return m.moment(2) / mean**2 - 1.0 / mean


def variance_identity_check(p: JointPND) -> tuple[float, float, float, float]:
    """Variances of ``n_S -/+ n_I`` computed directly and from arm moments.

    Returns ``(var_diff, var_sum, rhs_diff, rhs_sum)`` where the right-hand
    sides are ``Var(n_S) + Var(n_I) -/+ 2 sqrt(Var(n_S) Var(n_I)) C``.
    """
    var_diff = diff_distribution(p).variance()
    var_sum = sum_distribution(p).variance()
    mean_s, mean_i, var_s, var_i, cov = _arm_moments(p.probs)
    if _degenerate(var_s, mean_s) or _degenerate(var_i, mean_i):
        # C is undefined but the cross term is still the raw covariance (zero)
        cross = cov
    else:
        scale = math.sqrt(var_s * var_i)
        c_rho = cov / scale
        cross = scale * c_rho
    return var_diff, var_sum, var_s + var_i - 2 * cross, var_s + var_i + 2 * cross


def total_variation(p, q) -> float:
    """Total-variation distance between two arrays, zero-padded to a common shape."""
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    shape = tuple(max(a, b) for a, b in zip(p.shape, q.shape))
    pp, qq = np.zeros(shape), np.zeros(shape)
    pp[tuple(slice(0, s) for s in p.shape)] = p
    qq[tuple(slice(0, s) for s in q.shape)] = q
    return 0.5 * math.fsum(np.abs(pp - qq).ravel())
