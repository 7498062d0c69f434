"""Joint integrated-intensity quasi-distributions ``P(W_S, W_I, s)``.

For ordering parameter ``-1 < s < 1`` the distribution is the Laguerre series

    P = 4/(1-s)^2 exp(-2(W_S+W_I)/(1-s))
        * sum rho(a, b) ((s+1)/(s-1))^(a+b) L_a(4 W_S/(1-s^2)) L_b(4 W_I/(1-s^2))

with ``L_n`` the ordinary Laguerre polynomials.  At ``s = -1`` it reduces to a
mixture of Poisson kernels in ``W``, evaluated in closed form.  Terms are
carried as sign and log-magnitude, rescaled by the largest term at each
point and accumulated with Neumaier compensated summation.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericalOverflowError
from .pnd import JointPND, marginals

CANCELLATION_RATIO = 1e-8
_RESCALE = 1e150


class CancellationWarning(RuntimeWarning):
    """The series result is tiny compared with its largest term."""


def _check_s(s: float) -> float:
    s = float(s)
    if not (-1.0 <= s < 1.0):
        if s >= 1.0:
            raise DomainError("normal ordering (s >= 1) needs generalized functions "
                              "and is not supported")
        raise DomainError(f"ordering parameter must lie in [-1, 1), got {s}")
    return s


def laguerre_log_table(n_max: int, x) -> tuple[np.ndarray, np.ndarray]:
    """Signs and log-magnitudes of ``L_0 .. L_n_max`` at every point of ``x``.

    Uses the three-term recurrence ``(k+1) L_{k+1} = (2k+1-x) L_k - k L_{k-1}``
    on rescaled values so that large ``n * x`` does not overflow.  Returns two
    arrays of shape ``(n_max + 1,) + x.shape``; zeros have log-magnitude ``-inf``.
    """
    x = np.asarray(x, dtype=float)
    signs = np.empty((n_max + 1,) + x.shape)
    logs = np.empty((n_max + 1,) + x.shape)
    prev = np.zeros_like(x)
    cur = np.ones_like(x)
    log_scale = np.zeros_like(x)
    signs[0], logs[0] = 1.0, 0.0
    with np.errstate(divide="ignore"):
        for k in range(n_max):
            prev, cur = cur, ((2 * k + 1 - x) * cur - k * prev) / (k + 1)
            big = np.maximum(np.abs(cur), np.abs(prev))
            over = big > _RESCALE
            if np.any(over):
                scale = np.where(over, big, 1.0)
                cur, prev = cur / scale, prev / scale
                log_scale = log_scale + np.log(scale)
            signs[k + 1] = np.sign(cur)
            logs[k + 1] = np.log(np.abs(cur)) + log_scale
    return signs, logs


def laguerre_eval(n: int, x: float) -> float:
    """Laguerre polynomial ``L_n(x)`` (may overflow to ``inf`` for huge arguments)."""
    if n < 0 or int(n) != n:
        raise DomainError(f"Laguerre order must be a nonnegative integer, got {n}")
    signs, logs = laguerre_log_table(int(n), float(x))
    with np.errstate(over="ignore"):
        return float(signs[-1] * np.exp(logs[-1]))


def _support(rho: JointPND):
    a, b = np.nonzero(rho.probs)
    return a, b, np.log(rho.probs[a, b])


def _grid_log_sum(a, b, base_log, base_sign, log_s, sgn_s, log_i, sgn_i):
    """Compensated sum over support terms at every grid point.

    Term ``k`` at point ``(i, j)`` has log-magnitude
    ``base_log[k] + log_s[a[k], i] + log_i[b[k], j]`` and the matching sign.
    Returns ``(scaled_sum, log_scale)``: the sum equals
    ``scaled_sum * exp(log_scale)`` and the largest term is ``exp(log_scale)``.
    """
    shape = (log_s.shape[1], log_i.shape[1])
    top = np.full(shape, -np.inf)
    for k in range(a.size):
        np.maximum(top, base_log[k] + log_s[a[k]][:, None] + log_i[b[k]][None, :], out=top)
    safe_top = np.where(np.isfinite(top), top, 0.0)
    total = np.zeros(shape)
    comp = np.zeros(shape)
    for k in range(a.size):
        lt = base_log[k] + log_s[a[k]][:, None] + log_i[b[k]][None, :]
        term = (base_sign[k] * sgn_s[a[k]][:, None] * sgn_i[b[k]][None, :]) * np.exp(lt - safe_top)
        # Neumaier summation
        new = total + term
        comp += np.where(np.abs(total) >= np.abs(term), (total - new) + term, (term - new) + total)
        total = new
    return total + comp, top


@dataclass(frozen=True, eq=False)
class IntensityGrid:
    w_s_axis: np.ndarray
    w_i_axis: np.ndarray
    values: np.ndarray
    s: float
    cancellation_points: int = 0

    def __post_init__(self):
        for axis in (self.w_s_axis, self.w_i_axis):
            if axis.ndim != 1 or np.any(axis < 0) or np.any(np.diff(axis) <= 0):
                raise DomainError("intensity axes must be nonnegative and strictly increasing")
        if self.values.shape != (self.w_s_axis.size, self.w_i_axis.size):
            raise DomainError("grid values do not match the axes")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("grid values must be finite")

    def to_dict(self) -> dict:
        return {
            "s": self.s,
            "w_s_axis": self.w_s_axis.tolist(),
            "w_i_axis": self.w_i_axis.tolist(),
            "values": self.values.ravel().tolist(),
            "cancellation_points": self.cancellation_points,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "IntensityGrid":
        ws = np.asarray(data["w_s_axis"], dtype=float)
        wi = np.asarray(data["w_i_axis"], dtype=float)
        values = np.asarray(data["values"], dtype=float).reshape(ws.size, wi.size)
        return cls(ws, wi, values, float(data["s"]), int(data.get("cancellation_points", 0)))

    def to_csv(self, path) -> None:
        """Write ``W_S`` down the first column, ``W_I`` across the header row."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["W_S\\W_I"] + [repr(float(w)) for w in self.w_i_axis])
            for w, row in zip(self.w_s_axis, self.values):
                writer.writerow([repr(float(w))] + [repr(float(v)) for v in row])


def _series_grid(rho: JointPND, s: float, w_s: np.ndarray, w_i: np.ndarray):
    a, b, log_rho = _support(rho)
    scale = 4.0 / (1.0 - s * s)
    sgn_s, log_s = laguerre_log_table(rho.n_max_s, scale * w_s)
    sgn_i, log_i = laguerre_log_table(rho.n_max_i, scale * w_i)
    order = a + b
    base_log = log_rho + order * math.log((1.0 + s) / (1.0 - s))  # |(s+1)/(s-1)|
    base_sign = np.where(order % 2, -1.0, 1.0)
    scaled, top = _grid_log_sum(a, b, base_log, base_sign, log_s, sgn_s, log_i, sgn_i)

    log_env = (math.log(4.0) - 2.0 * math.log(1.0 - s)
               - 2.0 * (w_s[:, None] + w_i[None, :]) / (1.0 - s))
    with np.errstate(over="ignore", invalid="ignore"):
        values = np.where(np.isfinite(top), scaled * np.exp(top + log_env), 0.0)
    bad = ~np.isfinite(values)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        terms = base_log + log_s[a, i] + log_i[b, j]
        k = int(np.argmax(terms))
        raise NumericalOverflowError(
            f"non-finite series at W=({w_s[i]}, {w_i[j]}); largest term "
            f"(n_S, n_I)=({a[k]}, {b[k]})")
    return values, np.isfinite(top) & (np.abs(scaled) < CANCELLATION_RATIO)


def antinormal_closed_form(rho: JointPND, w_s: float, w_i: float) -> float:
    """``P(W_S, W_I, -1) = sum rho(a, b) Pois(a; W_S) Pois(b; W_I)`` (never negative)."""
    if w_s < 0 or w_i < 0:
        raise DomainError("integrated intensities must be nonnegative")
    return float(_antinormal_grid(rho, np.array([float(w_s)]), np.array([float(w_i)]))[0, 0])


def _log_poisson_kernel(n_max: int, w: np.ndarray) -> np.ndarray:
    n = np.arange(n_max + 1)[:, None]
    lgam = np.array([math.lgamma(k + 1) for k in range(n_max + 1)])[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        logw = np.where(n == 0, 0.0, n * np.log(w[None, :]))
    return logw - lgam - w[None, :]


def _antinormal_grid(rho: JointPND, w_s: np.ndarray, w_i: np.ndarray) -> np.ndarray:
    a, b, log_rho = _support(rho)
    ks = _log_poisson_kernel(rho.n_max_s, w_s)
    ki = _log_poisson_kernel(rho.n_max_i, w_i)
    scaled, top = _grid_log_sum(a, b, log_rho, np.ones(a.size),
                                ks, np.ones_like(ks), ki, np.ones_like(ki))
    return np.where(np.isfinite(top), scaled * np.exp(np.where(np.isfinite(top), top, 0.0)), 0.0)


def _is_symmetric(rho: JointPND) -> bool:
    p = rho.probs
    return p.shape[0] == p.shape[1] and np.array_equal(p, p.T)


def quasi_distribution(rho: JointPND, s: float, w_s: float, w_i: float) -> float:
    """``P(W_S, W_I, s)`` at one point; ``s = -1`` uses the closed form."""
    s = _check_s(s)
    if w_s < 0 or w_i < 0:
        raise DomainError("integrated intensities must be nonnegative")
    if w_s < w_i and _is_symmetric(rho):
        # same summation order for (a, b) and (b, a), so symmetry holds bitwise
        w_s, w_i = w_i, w_s
    if s == -1.0:
        return antinormal_closed_form(rho, w_s, w_i)
    values, flagged = _series_grid(rho, s, np.array([float(w_s)]), np.array([float(w_i)]))
    if flagged.any():
        warnings.warn(f"cancellation in the Laguerre series at W=({w_s}, {w_i})",
                      CancellationWarning, stacklevel=2)
    return float(values[0, 0])


def default_w_max(rho: JointPND) -> float:
    m_s, m_i = marginals(rho)
    return max(2.5 * (m_s.mean() + m_i.mean()), 5.0)


def grid_scan(rho: JointPND, s: float = 0.0, w_max: float | None = None,
              points_per_axis: int = 201) -> IntensityGrid:
    """Evaluate ``P(W_S, W_I, s)`` on the uniform grid ``[0, w_max]^2``."""
    s = _check_s(s)
    if w_max is None:
        w_max = default_w_max(rho)
    if not w_max > 0:
        raise DomainError(f"w_max must be positive, got {w_max}")
    if points_per_axis < 2:
        raise DomainError("need at least two points per axis")
    axis = np.linspace(0.0, w_max, int(points_per_axis))
    if s == -1.0:
        values, mask = _antinormal_grid(rho, axis, axis), np.zeros((axis.size,) * 2, bool)
    else:
        values, mask = _series_grid(rho, s, axis, axis)
    if _is_symmetric(rho):
        # mirror the W_S >= W_I half so the grid is exactly symmetric
        values = np.tril(values) + np.tril(values, -1).T
        mask = np.tril(mask) | np.tril(mask, -1).T
    flagged = int(np.count_nonzero(mask))
    if flagged:
        warnings.warn(f"{flagged} grid points lost more than 8 digits to cancellation",
                      CancellationWarning, stacklevel=2)
    return IntensityGrid(axis, axis.copy(), values, s, flagged)


@dataclass(frozen=True)
class NegativityReport:
    min_value: float
    min_location: tuple[float, float]
    negative_fraction: float


def negativity_report(grid: IntensityGrid) -> NegativityReport:
    """Minimum of the grid, where it occurs, and the fraction of negative points."""
    k = np.unravel_index(np.argmin(grid.values), grid.values.shape)
    return NegativityReport(
        float(grid.values[k]),
        (float(grid.w_s_axis[k[0]]), float(grid.w_i_axis[k[1]])),
        float(np.count_nonzero(grid.values < 0) / grid.values.size),
    )
