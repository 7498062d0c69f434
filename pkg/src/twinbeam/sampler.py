"""Monte Carlo simulation of the twin-beam detection apparatus.

Shots are grouped into fixed blocks of :data:`BLOCK_SIZE`.  Every block draws
from its own Philox stream, keyed by the seed with the block index in the
counter, so any shot can be regenerated on its own and a run gives the same
histogram however the blocks are spread over workers.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .detection import CoincidenceDistribution, DetectionChain
from .errors import DomainError
from .pnd import JointPND, make_gaussian_pairs, make_poisson_pairs

log = logging.getLogger(__name__)

BLOCK_SIZE = 4096
THREADS_ENV = "TWINBEAM_THREADS"


@dataclass(frozen=True, eq=False)
class SimulationConfig:
    source: JointPND
    chain_s: DetectionChain
    chain_i: DetectionChain
    shots: int
    seed: int = 0

    def __post_init__(self):
        if int(self.shots) != self.shots or self.shots < 1:
            raise DomainError(f"shots must be a positive integer, got {self.shots}")
        if int(self.seed) != self.seed or not (0 <= self.seed < 2**64):
            raise DomainError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    @classmethod
    def from_model(cls, model: str, mu: float, chain_s, chain_i, shots, seed=0):
        makers = {"poisson_pairs": make_poisson_pairs, "gaussian_pairs": make_gaussian_pairs}
        if model not in makers:
            raise DomainError(f"unknown source model {model!r}")
        return cls(makers[model](mu), chain_s, chain_i, shots, seed)


@dataclass
class _SourceTable:
    cdf: np.ndarray
    n_cols: int
    last_index: int


def _source_table(p: JointPND) -> _SourceTable:
    cdf = np.cumsum(p.probs.ravel())
    return _SourceTable(cdf, p.probs.shape[1], cdf.size - 1)


def _block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, 0, block]))


def _arm_clicks(rng: np.random.Generator, photons: np.ndarray,
                chain: DetectionChain) -> np.ndarray:
    """Click counts for one arm given the photon number of every shot."""
    shots = photons.size
    total = int(photons.sum())
    owner = np.repeat(np.arange(shots), photons)
    # each photon reaches a detector and fires it with probability T*eta
    detected = rng.random(total) < chain.t_eta
    if chain.infinite:
        counts = np.bincount(owner[detected], minlength=shots)
        return counts + rng.poisson(chain.dark, shots)
    # uniform routing over the multiport outputs; coincident photons on one
    # detector produce a single click
    outputs = np.minimum((rng.random(total) * chain.pixels).astype(np.int64), chain.pixels - 1)
    keys = owner[detected].astype(np.int64) * chain.pixels + outputs[detected]
    hit_shots = np.unique(keys) // chain.pixels
    hits = np.bincount(hit_shots, minlength=shots)
    return hits + rng.binomial(chain.pixels - hits, chain.dark)


def _simulate_block(cfg: SimulationConfig, table: _SourceTable, block: int):
    rng = _block_rng(cfg.seed, block)
    u = rng.random(BLOCK_SIZE)
    flat = np.searchsorted(table.cdf, u, side="right")
    in_tail = flat > table.last_index
    # the truncation tail is lumped onto the largest index pair
    flat = np.minimum(flat, table.last_index)
    n_s, n_i = np.divmod(flat, table.n_cols)
    c_s = _arm_clicks(rng, n_s, cfg.chain_s)
    c_i = _arm_clicks(rng, n_i, cfg.chain_i)
    return c_s, c_i, in_tail


def _n_blocks(shots: int) -> int:
    return -(-shots // BLOCK_SIZE)


def per_shot_counts(cfg: SimulationConfig, shot_index: int) -> tuple[int, int]:
    """Click counts ``(c_S, c_I)`` of a single shot, identical to those in :func:`simulate`."""
    if not (0 <= shot_index < cfg.shots):
        raise DomainError(f"shot index {shot_index} outside [0, {cfg.shots})")
    block, pos = divmod(int(shot_index), BLOCK_SIZE)
    c_s, c_i, _ = _simulate_block(cfg, _source_table(cfg.source), block)
    return int(c_s[pos]), int(c_i[pos])


@dataclass
class SimulationResult:
    histogram: CoincidenceDistribution
    tail_draws: int = 0
    blocks: int = field(default=0)


def _default_workers() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def simulate_detailed(cfg: SimulationConfig, workers: int | None = None) -> SimulationResult:
    table = _source_table(cfg.source)
    n_blocks = _n_blocks(cfg.shots)
    workers = workers or _default_workers()

    def run(block):
        c_s, c_i, in_tail = _simulate_block(cfg, table, block)
        keep = min(BLOCK_SIZE, cfg.shots - block * BLOCK_SIZE)
        return c_s[:keep], c_i[:keep], int(np.count_nonzero(in_tail[:keep]))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, range(n_blocks)))
    else:
        parts = [run(b) for b in range(n_blocks)]

    c_max_s = max(int(part[0].max()) for part in parts)
    c_max_i = max(int(part[1].max()) for part in parts)
    hist = np.zeros((c_max_s + 1) * (c_max_i + 1), dtype=np.int64)
    tail_draws = 0
    for c_s, c_i, tail in parts:
        hist += np.bincount(c_s * (c_max_i + 1) + c_i, minlength=hist.size)
        tail_draws += tail
    if tail_draws:
        log.warning("%d shots fell in the truncation tail of the source", tail_draws)
    dist = CoincidenceDistribution(hist.reshape(c_max_s + 1, c_max_i + 1),
                                   "monte_carlo", cfg.shots)
    return SimulationResult(dist, tail_draws, n_blocks)


def simulate(cfg: SimulationConfig, workers: int | None = None) -> CoincidenceDistribution:
    """Empirical coincidence histogram of ``cfg.shots`` simulated pulses.

    Deterministic for a fixed seed, whatever the number of workers.
    """
    return simulate_detailed(cfg, workers).histogram


@dataclass(frozen=True)
class ChiSquareResult:
    statistic: float
    dof: int
    p_value: float
    total_variation: float


def chi_square_test(empirical: CoincidenceDistribution, analytic: CoincidenceDistribution,
                    min_expected: float = 5.0) -> ChiSquareResult:
    """Pearson goodness-of-fit of an empirical histogram against analytic frequencies.

    Bins whose expected count is below ``min_expected`` are pooled into one
    extra bin (dropped if it is still below the threshold).
    """
    if empirical.shots is None:
        raise DomainError("chi-square test needs an empirical histogram with a shot count")
    c_s = max(empirical.c_max_s, analytic.c_max_s)
    c_i = max(empirical.c_max_i, analytic.c_max_i)
    observed = empirical.padded(c_s, c_i).freqs.ravel()
    probs = analytic.padded(c_s, c_i).probabilities().ravel()
    probs = probs / probs.sum()
    expected = probs * empirical.shots
    big = expected >= min_expected
    obs = list(observed[big])
    exp = list(expected[big])
    rest_exp = expected[~big].sum()
    if rest_exp >= min_expected:
        obs.append(observed[~big].sum())
        exp.append(rest_exp)
    obs, exp = np.array(obs), np.array(exp)
    exp *= obs.sum() / exp.sum()
    stat = float(np.sum((obs - exp) ** 2 / exp))
    dof = obs.size - 1
    tv = 0.5 * float(np.abs(observed / empirical.shots - probs).sum())
    return ChiSquareResult(stat, dof, float(stats.chi2.sf(stat, dof)), tv)


def click_probability_single_pixel(source: JointPND, chain: DetectionChain,
                                   arm: str = "signal") -> float:
    """``P(click) = 1 - sum_n p(n) (1-d)(1-T eta)^n`` for a one-detector arm."""
    if chain.pixels != 1:
        raise DomainError("closed form applies to a single detector")
    probs = source.probs.sum(axis=1 if arm == "signal" else 0)
    n = np.arange(probs.size)
    no_click = (1 - chain.dark) * math.fsum(probs * (1 - chain.t_eta) ** n)
    return 1.0 - no_click / probs.sum()
