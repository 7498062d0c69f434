"""Forward model of lossy, noisy, multiplexed photon-number detection.

Each arm is a loss beamsplitter followed by a symmetric ``1 x N`` multiport
and ``N`` identical on/off detectors.  In the infinite-pixel limit the per-arm
response kernel is

    K(c, n) = sum_l Binom(l; n, T*eta) * Poisson(c - l; D)

and for finite ``N`` it is the inclusion-exclusion sum over detector subsets.
The joint detected distribution is ``f = K_S p K_I^T``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Literal, Sequence

import numpy as np
from scipy import stats

from .errors import DomainError, TruncationError
from .pnd import JointPND, Marginal, joint_covariance, s_coefficient, sum_distribution

F_TRUNC_TOL = 1e-9

Origin = Literal["analytic", "monte_carlo", "file"]


@dataclass(frozen=True)
class DetectionChain:
    """Apparatus parameters of one arm.

    Only the product ``T * eta`` enters the detection statistics, so that is
    what is stored; use :meth:`from_components` to pass them separately.

    Parameters
    ----------
    t_eta : float
        Overall detection efficiency ``T * eta`` in ``[0, 1]``.
    pixels : int or None
        Number of detectors ``N`` behind the multiport; ``None`` selects the
        infinite-pixel limit.
    dark : float
        Per-detector dark-count probability ``d`` for finite ``N``; the overall
        mean noise count ``D = N d`` in the infinite limit.
    """

    t_eta: float
    pixels: int | None = None
    dark: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "t_eta", float(self.t_eta))
        object.__setattr__(self, "dark", float(self.dark))
        if not (0.0 <= self.t_eta <= 1.0):
            raise DomainError(f"T*eta must lie in [0, 1], got {self.t_eta}")
        if self.pixels is None:
            if not (np.isfinite(self.dark) and self.dark >= 0):
                raise DomainError(f"noise mean D must be finite and >= 0, got {self.dark}")
        else:
            if int(self.pixels) != self.pixels or self.pixels < 1:
                raise DomainError(f"pixel count must be a positive integer, got {self.pixels}")
            object.__setattr__(self, "pixels", int(self.pixels))
            if not (0.0 <= self.dark < 1.0):
                raise DomainError(f"dark-count probability must lie in [0, 1), got {self.dark}")

    @classmethod
    def from_components(cls, transmissivity: float, efficiency: float,
                        pixels: int | None = None, dark: float = 0.0) -> "DetectionChain":
        for name, val in (("transmissivity", transmissivity), ("efficiency", efficiency)):
            if not (0.0 <= val <= 1.0):
                raise DomainError(f"{name} must lie in [0, 1], got {val}")
        return cls(transmissivity * efficiency, pixels, dark)

    @property
    def infinite(self) -> bool:
        return self.pixels is None

    def to_dict(self) -> dict:
        return {"t_eta": self.t_eta, "pixels": self.pixels, "dark": self.dark}

    @classmethod
    def from_dict(cls, data: dict) -> "DetectionChain":
        return cls(data["t_eta"], data.get("pixels"), data.get("dark", 0.0))


@dataclass(frozen=True, eq=False)
class CoincidenceDistribution:
    """Joint histogram of click counts ``f(c_S, c_I)``.

    Analytic distributions store probabilities and ``shots=None``; empirical
    ones store integer counts together with the number of shots.
    """

    freqs: np.ndarray
    origin: Origin = "analytic"
    shots: int | None = None

    def __post_init__(self):
        freqs = np.array(self.freqs, dtype=float, copy=True)
        if freqs.ndim != 2 or freqs.size == 0:
            raise DomainError(f"freqs must be a non-empty 2-D array, got shape {freqs.shape}")
        if not np.all(np.isfinite(freqs)) or np.any(freqs < 0):
            raise DomainError("freqs must be finite and nonnegative")
        if self.shots is not None:
            if int(self.shots) != self.shots or self.shots < 1:
                raise DomainError(f"shot count must be a positive integer, got {self.shots}")
            if np.any(freqs != np.round(freqs)):
                raise DomainError("empirical histograms must hold integer counts")
            if freqs.sum() != self.shots:
                raise DomainError(
                    f"histogram holds {int(freqs.sum())} counts but shots={self.shots}")
            object.__setattr__(self, "shots", int(self.shots))
        freqs.flags.writeable = False
        object.__setattr__(self, "freqs", freqs)

    @property
    def c_max_s(self) -> int:
        return self.freqs.shape[0] - 1

    @property
    def c_max_i(self) -> int:
        return self.freqs.shape[1] - 1

    def probabilities(self) -> np.ndarray:
        """Frequencies normalized by the shot count (analytic: as stored)."""
        if self.shots is None:
            return self.freqs
        return self.freqs / self.shots

    def padded(self, c_max_s: int, c_max_i: int) -> "CoincidenceDistribution":
        if c_max_s < self.c_max_s or c_max_i < self.c_max_i:
            if np.any(self.freqs[c_max_s + 1:, :]) or np.any(self.freqs[:, c_max_i + 1:]):
                raise DomainError("cannot shrink a histogram with mass beyond the new bounds")
        out = np.zeros((c_max_s + 1, c_max_i + 1))
        rs, ri = min(c_max_s, self.c_max_s) + 1, min(c_max_i, self.c_max_i) + 1
        out[:rs, :ri] = self.freqs[:rs, :ri]
        return CoincidenceDistribution(out, self.origin, self.shots)

    def to_dict(self) -> dict:
        freqs = self.freqs.ravel()
        values = [int(v) for v in freqs] if self.shots is not None else freqs.tolist()
        return {
            "c_max_s": self.c_max_s,
            "c_max_i": self.c_max_i,
            "origin": self.origin,
            "shots": self.shots,
            "freqs": values,
        }

    @classmethod
    def from_dict(cls, data: dict, origin: Origin | None = None) -> "CoincidenceDistribution":
        try:
            shape = (int(data["c_max_s"]) + 1, int(data["c_max_i"]) + 1)
            freqs = np.asarray(data["freqs"], dtype=float)
            shots = data.get("shots")
            org = origin or data.get("origin", "file")
        except (KeyError, TypeError, ValueError) as exc:
            raise DomainError(f"malformed coincidence histogram: {exc}") from exc
        if freqs.size != shape[0] * shape[1]:
            raise DomainError(
                f"freqs has {freqs.size} entries, expected {shape[0]}x{shape[1]}")
        freqs = freqs.reshape(shape)
        if shots is None and np.all(freqs == np.round(freqs)) and freqs.sum() > 1.5:
            # bare integer counts without a recorded shot count
            shots = int(freqs.sum())
        return cls(freqs, org, shots)


# ---------------------------------------------------------------------------
# response kernels
# ---------------------------------------------------------------------------

def _check_counts(c: int, n: int) -> None:
    if c < 0 or n < 0 or int(c) != c or int(n) != n:
        raise DomainError(f"counts must be nonnegative integers, got c={c}, n={n}")


def k_coeff_infinite(c: int, n: int, t_eta: float, noise: float) -> float:
    """Probability of ``c`` clicks from ``n`` photons in the infinite-pixel limit."""
    _check_counts(c, n)
    if not (0.0 <= t_eta <= 1.0):
        raise DomainError(f"T*eta must lie in [0, 1], got {t_eta}")
    if not (np.isfinite(noise) and noise >= 0):
        raise DomainError(f"noise mean must be finite and >= 0, got {noise}")
    terms = []
    for l in range(min(c, n) + 1):
        b = math.comb(n, l) * t_eta**l * (1.0 - t_eta) ** (n - l)
        k = c - l
        terms.append(b * noise**k * math.exp(-noise) / math.factorial(k))
    return math.fsum(terms)


def _finite_prefactor_log(c: int, pixels: int, dark: float) -> float:
    log_binom = math.lgamma(pixels + 1) - math.lgamma(c + 1) - math.lgamma(pixels - c + 1)
    return log_binom + (pixels - c) * math.log1p(-dark)


def _finite_sum_exact(c: int, n: int, pixels: int, t_eta: float, dark: float) -> Fraction:
    te, d = Fraction(t_eta), Fraction(dark)
    total = Fraction(0)
    for l in range(c + 1):
        base = 1 - te + l * te / pixels
        total += math.comb(c, l) * (-1) ** (c - l) * (1 - d) ** (c - l) * base**n
    return total


def k_coeff_finite(c: int, n: int, pixels: int, t_eta: float, dark: float) -> float:
    """Probability of ``c`` clicks among ``pixels`` identical detectors from ``n`` photons.

    Evaluates the inclusion-exclusion sum

        C(N, c) (1-d)^(N-c) sum_l C(c, l) (-1)^(c-l) (1-d)^(c-l) (1 - T eta + l T eta / N)^n

    in floating point when it is well conditioned, and in exact rational
    arithmetic otherwise (the sum is a ``c``-th finite difference with step
    ``T eta / N`` and cancels catastrophically for large ``N``).
    """
    _check_counts(c, n)
    if int(pixels) != pixels or pixels < 1:
        raise DomainError(f"pixel count must be a positive integer, got {pixels}")
    if c > pixels:
        raise DomainError(f"cannot register {c} clicks with {pixels} detectors")
    if not (0.0 <= t_eta <= 1.0):
        raise DomainError(f"T*eta must lie in [0, 1], got {t_eta}")
    if not (0.0 <= dark < 1.0):
        raise DomainError(f"dark-count probability must lie in [0, 1), got {dark}")

    terms = [math.comb(c, l) * (-1) ** (c - l) * (1.0 - dark) ** (c - l)
             * (1.0 - t_eta + l * t_eta / pixels) ** n for l in range(c + 1)]
    total = math.fsum(terms)
    scale = math.fsum(abs(t) for t in terms)
    if scale == 0.0:
        return 0.0
    if abs(total) > 1e-4 * scale:
        if total <= 0.0:
            return 0.0
        log_abs = math.log(total)
    else:
        exact = _finite_sum_exact(c, n, pixels, t_eta, dark)
        if exact <= 0:
            return 0.0
        log_abs = math.log(exact.numerator) - math.log(exact.denominator)
    return math.exp(_finite_prefactor_log(c, pixels, dark) + log_abs)


@dataclass(frozen=True)
class Detector:
    """One detector behind a multiport output, for the explicit-enumeration path."""

    t_sq: float  # intensity transmissivity |t_i|^2 from multiport input
    eta: float
    dark: float = 0.0


MAX_ORACLE_PHOTONS = 20
MAX_ORACLE_DETECTORS = 8
MAX_ORACLE_CONFIGS = 2_000_000


def _compositions(n: int, bins: int):
    """All tuples of ``bins`` nonnegative integers summing to ``n``."""
    for cuts in itertools.combinations(range(n + bins - 1), bins - 1):
        prev = -1
        out = []
        for cut in cuts:
            out.append(cut - prev - 1)
            prev = cut
        out.append(n + bins - 1 - prev - 1)
        yield out


def exact_multidetector_prob(n: int, detected: set[int] | Sequence[int],
                             detectors: Sequence[Detector], transmissivity: float) -> float:
    """Probability that exactly the detectors in ``detected`` click.

    Brute force: every photon independently passes the loss beamsplitter,
    picks a multiport output and is either detected there or lost; all
    multinomial photon configurations are enumerated and combined with
    each detector's dark-count outcome.
    """
    m = len(detectors)
    detected = set(detected)
    if n < 0 or int(n) != n:
        raise DomainError(f"photon number must be a nonnegative integer, got {n}")
    if not detected <= set(range(m)):
        raise DomainError("detected set refers to unknown detectors")
    if n > MAX_ORACLE_PHOTONS or m > MAX_ORACLE_DETECTORS:
        raise DomainError(f"enumeration limited to n <= {MAX_ORACLE_PHOTONS} "
                          f"and <= {MAX_ORACLE_DETECTORS} detectors")
    if math.comb(n + m, m) > MAX_ORACLE_CONFIGS:
        raise DomainError("too many photon configurations to enumerate")
    if sum(det.t_sq for det in detectors) > 1.0 + 1e-12:
        raise DomainError("multiport transmissivities exceed unity")

    hit_prob = [transmissivity * det.t_sq * det.eta for det in detectors]
    lost_prob = 1.0 - sum(hit_prob)
    probs = [lost_prob] + hit_prob
    log_nfact = math.lgamma(n + 1)

    total = []
    for counts in _compositions(n, m + 1):
        weight = 1.0
        for k, p in zip(counts, probs):
            if k:
                if p == 0.0:
                    weight = 0.0
                    break
                weight *= p**k
        if weight == 0.0:
            continue
        weight *= math.exp(log_nfact - sum(math.lgamma(k + 1) for k in counts))
        for i, det in enumerate(detectors):
            hit = counts[i + 1] > 0
            if i in detected:
                weight *= 1.0 if hit else det.dark
            else:
                weight *= 0.0 if hit else 1.0 - det.dark
            if weight == 0.0:
                break
        total.append(weight)
    return math.fsum(total)


@lru_cache(maxsize=64)
def _kernel_cached(chain: DetectionChain, c_max: int, n_max: int) -> np.ndarray:
    if chain.infinite:
        n = np.arange(n_max + 1)
        l = np.arange(c_max + 1)[:, None]
        binom = stats.binom.pmf(l, n[None, :], chain.t_eta)
        noise = stats.poisson.pmf(np.arange(c_max + 1), chain.dark)
        kern = np.zeros((c_max + 1, n_max + 1))
        # fixed accumulation order over the number of detected photons
        for j in range(c_max + 1):
            kern[j:, :] += noise[: c_max + 1 - j, None] * binom[j][None, :]
    else:
        if c_max > chain.pixels:
            raise DomainError(f"c_max={c_max} exceeds the pixel count {chain.pixels}")
        kern = np.array([[k_coeff_finite(c, n, chain.pixels, chain.t_eta, chain.dark)
                          for n in range(n_max + 1)] for c in range(c_max + 1)])
    kern.flags.writeable = False
    return kern


def kernel_matrix(chain: DetectionChain, c_max: int, n_max: int) -> np.ndarray:
    """Response matrix ``K[c, n]`` for ``0 <= c <= c_max``, ``0 <= n <= n_max`` (cached)."""
    if c_max < 0 or n_max < 0:
        raise DomainError("kernel bounds must be nonnegative")
    return _kernel_cached(chain, int(c_max), int(n_max))


def default_c_max(chain: DetectionChain, n_max: int, tol: float = F_TRUNC_TOL) -> int:
    """Smallest ``c_max`` whose kernel keeps all but ``tol`` of every column ``n <= n_max``."""
    if not chain.infinite:
        upper = chain.pixels
    else:
        # mean + generous spread of binomial plus noise counts
        mean = n_max * chain.t_eta + chain.dark
        upper = int(mean + 12 * math.sqrt(mean + 1) + 20)
        upper = min(upper, n_max + int(stats.poisson.isf(tol * 1e-3, chain.dark)) + 1)
    while True:
        kern = kernel_matrix(chain, upper, n_max)
        residual = 1.0 - np.cumsum(kern, axis=0)
        ok = np.all(residual < tol, axis=1)
        if ok.any():
            return int(np.argmax(ok))
        if not chain.infinite:
            return upper
        upper *= 2


def forward_map(p: JointPND, chain_s: DetectionChain, chain_i: DetectionChain,
                c_max: int | tuple[int, int] | None = None) -> CoincidenceDistribution:
    """Detected coincidence distribution ``f = K_S p K_I^T``.

    Parameters
    ----------
    c_max : int, pair of int, or None
        Histogram bounds per arm.  ``None`` picks the smallest bounds that
        keep the neglected mass below ``1e-9``.

    Raises
    ------
    TruncationError
        If the requested bounds drop more than ``1e-9`` of the detected mass.
    """
    if c_max is None:
        c_s = default_c_max(chain_s, p.n_max_s)
        c_i = default_c_max(chain_i, p.n_max_i)
    elif isinstance(c_max, tuple):
        c_s, c_i = c_max
    else:
        c_s = c_i = int(c_max)
    k_s = kernel_matrix(chain_s, c_s, p.n_max_s)
    k_i = kernel_matrix(chain_i, c_i, p.n_max_i)

    # fixed summation order, independent of BLAS threading
    half = np.zeros((p.n_max_s + 1, c_i + 1))
    for n_i in range(p.n_max_i + 1):
        half += p.probs[:, n_i, None] * k_i[None, :, n_i]
    f = np.zeros((c_s + 1, c_i + 1))
    for n_s in range(p.n_max_s + 1):
        f += k_s[:, n_s, None] * half[n_s][None, :]

    residual = p.mass - math.fsum(f.ravel())
    if residual > F_TRUNC_TOL:
        raise TruncationError(f"c_max=({c_s}, {c_i}) truncates the detected distribution",
                              residual)
    return CoincidenceDistribution(f, "analytic")


def detected_statistics(f: CoincidenceDistribution) -> tuple[float, float, float, float]:
    """``(C_f, S_f_S, S_f_I, S_f_plus)`` of a coincidence histogram."""
    probs = f.probabilities()
    joint = JointPND(probs / probs.sum())
    c_f = joint_covariance(probs)
    m_s = Marginal(probs.sum(axis=1), "signal")
    m_i = Marginal(probs.sum(axis=0), "idler")
    return c_f, s_coefficient(m_s), s_coefficient(m_i), s_coefficient(sum_distribution(joint))
