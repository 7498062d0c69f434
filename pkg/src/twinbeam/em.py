"""Expectation-Maximization inversion of the detection map.

Starting from ``rho``, each step multiplies every cell by the back-projected
ratio of measured to predicted frequencies:

    rho'(n_S, n_I) = rho(n_S, n_I) * sum_{i_S, i_I} f(i_S, i_I) K_S(i_S, n_S) K_I(i_I, n_I)
                                                  / (K_S rho K_I^T)(i_S, i_I)

which never increases the Kullback-Leibler divergence between the measured
and predicted histograms.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .detection import CoincidenceDistribution, DetectionChain, kernel_matrix
from .errors import DomainError, NumericalDegeneracyError
from .pnd import JointPND

log = logging.getLogger(__name__)

UNDERFLOW = 1e-300
# a divergence this small is round-off: the model reproduces the data
KL_FLOOR = 1e-14
N_MAX_CAP = 200


@dataclass(frozen=True, eq=False)
class EMConfig:
    """Reconstruction settings.

    ``n_max_s``/``n_max_i`` left as ``None`` are chosen by
    :func:`heuristic_n_max`.  ``init`` is ``"uniform"`` or a starting
    :class:`JointPND` (zero-padded to the reconstruction support).
    """

    n_max_s: int | None = None
    n_max_i: int | None = None
    max_iterations: int = 10_000
    stop_tolerance: float = 1e-9
    init: str | JointPND = "uniform"

    def __post_init__(self):
        if self.max_iterations < 1:
            raise DomainError("max_iterations must be at least 1")
        if not self.stop_tolerance > 0:
            raise DomainError("stop_tolerance must be positive")
        for bound in (self.n_max_s, self.n_max_i):
            if bound is not None and bound < 0:
                raise DomainError("support bounds must be nonnegative")
        if isinstance(self.init, str) and self.init != "uniform":
            raise DomainError(f"unknown initialization {self.init!r}")


@dataclass(eq=False)
class EMResult:
    rho: JointPND
    kl_trace: np.ndarray
    iterations_run: int
    converged: bool
    kl_initial: float = field(default=math.nan)

    def to_dict(self) -> dict:
        out = self.rho.to_dict()
        out.update({
            "kl_trace": [float(v) for v in self.kl_trace],
            "iterations": self.iterations_run,
            "converged": self.converged,
        })
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "EMResult":
        try:
            return cls(JointPND.from_dict(data), np.asarray(data["kl_trace"], dtype=float),
                       int(data["iterations"]), bool(data["converged"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise DomainError(f"malformed EM result: {exc}") from exc


def heuristic_n_max(c_max: int, t_eta: float, cap: int = N_MAX_CAP) -> int:
    """Support bound ``c_max/(T eta) + 5 sqrt(c_max)/(T eta)``, capped and at least ``c_max``."""
    if t_eta <= 0:
        return cap
    bound = math.ceil((c_max + 5 * math.sqrt(c_max)) / t_eta)
    return max(c_max, min(bound, cap))


def _kl(f: np.ndarray, model: np.ndarray, mask: np.ndarray) -> float:
    fm, mm = f[mask], model[mask]
    if np.any(mm <= 0):
        return math.inf
    return math.fsum(fm * np.log(fm / mm))


def kl_divergence(f: CoincidenceDistribution, f_model: CoincidenceDistribution) -> float:
    """``sum f log(f / f_model)`` with ``0 log 0 = 0``.

    Returns ``inf`` when ``f_model`` vanishes on a bin where ``f`` does not.
    """
    if f.freqs.shape != f_model.freqs.shape:
        raise DomainError(
            f"histogram supports differ: {f.freqs.shape} vs {f_model.freqs.shape}")
    p, q = f.probabilities(), f_model.probabilities()
    return _kl(p, q, p > 0)


def _normalized_freqs(f: CoincidenceDistribution) -> np.ndarray:
    probs = np.asarray(f.probabilities(), dtype=float)
    total = probs.sum()
    if not np.isfinite(total) or total <= 0:
        raise DomainError("histogram has no mass to normalize")
    return probs / total


def _update(rho, f, mask, k_s, k_i, model):
    denom = model[mask]
    if np.any(denom < UNDERFLOW):
        bad = np.argwhere(mask & (model < UNDERFLOW))[0]
        raise NumericalDegeneracyError(
            f"predicted frequency underflows at bin (c_S, c_I) = ({bad[0]}, {bad[1]})")
    ratio = np.zeros_like(f)
    ratio[mask] = f[mask] / denom
    new = rho * (k_s.T @ ratio @ k_i)
    return new / new.sum()


def em_step(rho: JointPND, f: CoincidenceDistribution,
            k_s: np.ndarray, k_i: np.ndarray) -> JointPND:
    """One multiplicative EM update of ``rho`` against histogram ``f``."""
    fn = _normalized_freqs(f)
    if k_s.shape != (fn.shape[0], rho.probs.shape[0]) or \
            k_i.shape != (fn.shape[1], rho.probs.shape[1]):
        raise DomainError("kernel shapes do not match histogram and support")
    model = k_s @ rho.probs @ k_i.T
    return JointPND(_update(rho.probs, fn, fn > 0, k_s, k_i, model))


def _initial(cfg: EMConfig, shape) -> np.ndarray:
    if isinstance(cfg.init, JointPND):
        init = cfg.init.probs
        if init.shape[0] > shape[0] or init.shape[1] > shape[1]:
            raise DomainError("initial distribution exceeds the reconstruction support")
        out = np.zeros(shape)
        out[: init.shape[0], : init.shape[1]] = init
        return out / out.sum()
    return np.full(shape, 1.0 / (shape[0] * shape[1]))


def reconstruct(f: CoincidenceDistribution, chain_s: DetectionChain,
                chain_i: DetectionChain, cfg: EMConfig | None = None,
                callback=None) -> EMResult:
    """Iterate :func:`em_step` until the relative KL decrease drops below tolerance.

    ``callback(iteration, rho_array, kl)`` is called after every step if given.
    Running out of iterations is reported through ``converged=False``.
    """
    cfg = cfg or EMConfig()
    fn = _normalized_freqs(f)
    c_s, c_i = fn.shape[0] - 1, fn.shape[1] - 1
    n_s = cfg.n_max_s if cfg.n_max_s is not None else heuristic_n_max(c_s, chain_s.t_eta)
    n_i = cfg.n_max_i if cfg.n_max_i is not None else heuristic_n_max(c_i, chain_i.t_eta)
    k_s = np.ascontiguousarray(kernel_matrix(chain_s, c_s, n_s))
    k_i = np.ascontiguousarray(kernel_matrix(chain_i, c_i, n_i))

    mask = fn > 0
    rho = _initial(cfg, (n_s + 1, n_i + 1))
    model = k_s @ rho @ k_i.T
    kl_prev = kl_initial = _kl(fn, model, mask)
    trace = []
    converged = False
    for it in range(1, cfg.max_iterations + 1):
        rho = _update(rho, fn, mask, k_s, k_i, model)
        model = k_s @ rho @ k_i.T
        kl = _kl(fn, model, mask)
        trace.append(kl)
        if callback is not None:
            callback(it, rho, kl)
        stalled = math.isfinite(kl_prev) and kl_prev - kl <= cfg.stop_tolerance * kl_prev
        if kl <= KL_FLOOR or stalled:
            converged = True
            break
        kl_prev = kl
    log.info("EM finished after %d iterations (KL %.3e, converged=%s)", it, kl, converged)
    return EMResult(JointPND(rho), np.array(trace), it, converged, kl_initial)
