"""Worst-case volatility pricing for one asset.

Solves ``v_t + 1/2 sup_{sigma^2} sigma^2 a(s) v_ss = 0`` backward from the
payoff, with ``a(s) = s^2`` for quoted (relative) volatility and ``a = 1``
for the arithmetic class.  The supremum picks the upper volatility where
the second difference is nonnegative and the lower one elsewhere.
"""
import dataclasses
import enum
import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
import pandas as pd
from scipy.linalg import solve_banded

from robusthedge.claims import Claim
from robusthedge.errors import InfeasibleNumericsError, UncertaintySpecError
from robusthedge.models import (
    ControlPolicy,
    UncertaintySpec,
    VolatilityBox,
    simulate_array,
)
from robusthedge.superhedge import HedgeReport

logger = logging.getLogger(__name__)


class Stepper(enum.Enum):
    IMPLICIT = 'implicit'
    EXPLICIT = 'explicit'


@dataclass(frozen=True)
class BsbGrid:
    n_t: int
    n_s: int
    s_max: float

    def __post_init__(self) -> None:
        if self.n_t < 1 or self.n_s < 3 or not self.s_max > 0:
            raise UncertaintySpecError(
                f"Invalid grid {self}: need n_t >= 1, n_s >= 3, s_max > 0."
            )

    @classmethod
    def from_string(cls, text: str) -> 'BsbGrid':
        try:
            n_t, n_s, s_max = text.split(',')
            return cls(int(n_t), int(n_s), float(s_max))
        except ValueError:
            raise UncertaintySpecError(
                f"Expected a grid as 'n_t,n_s,s_max', got '{text}'."
            )

    def refined(self) -> 'BsbGrid':
        return BsbGrid(2 * self.n_t, 2 * self.n_s, self.s_max)


@dataclass(frozen=True)
class BsbSurface:
    times: np.ndarray
    spots: np.ndarray
    # Shape (len(times), len(spots)).
    values: np.ndarray
    deltas: np.ndarray

    def _time_index(self, t: float) -> int:
        dt = self.times[1] - self.times[0]
        index = int(round(t / dt))
        return min(max(index, 0), len(self.times) - 1)

    def price_at(self, t: float, s: float) -> float:
        row = self.values[self._time_index(t)]
        return float(np.interp(s, self.spots, row))

    def delta_at(self, t: float, s: np.ndarray) -> np.ndarray:
        row = self.deltas[self._time_index(t)]
        return np.interp(s, self.spots, row)

    def to_frame(self) -> pd.DataFrame:
        times, spots = np.meshgrid(self.times, self.spots, indexing='ij')
        return pd.DataFrame(
            {
                'time': times.ravel(),
                'spot': spots.ravel(),
                'value': self.values.ravel(),
                'delta': self.deltas.ravel(),
            }
        )

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> 'BsbSurface':
        times = np.unique(frame['time'].to_numpy(dtype=float))
        spots = np.unique(frame['spot'].to_numpy(dtype=float))
        ordered = frame.sort_values(['time', 'spot'])
        shape = (times.size, spots.size)
        return cls(
            times=times,
            spots=spots,
            values=ordered['value'].to_numpy(dtype=float).reshape(shape),
            deltas=ordered['delta'].to_numpy(dtype=float).reshape(shape),
        )


def variance_bounds(spec: UncertaintySpec) -> Tuple[float, float]:
    if spec.dim != 1:
        raise UncertaintySpecError(
            'The volatility PDE is one-dimensional; use a tree family for '
            'several assets.'
        )
    if isinstance(spec.volatility, VolatilityBox):
        return spec.volatility.lower[0], spec.volatility.upper[0]
    variances = [m[0][0] for m in spec.volatility.matrices]
    return min(variances), max(variances)


def _worst_variance(
    v: np.ndarray, low: float, high: float
) -> np.ndarray:
    gamma = v[2:] - 2.0 * v[1:-1] + v[:-2]
    return np.where(gamma >= 0, high, low)


def _implicit_step(
    v_next: np.ndarray,
    variance: np.ndarray,
    scale: np.ndarray,
    boundary: float,
) -> np.ndarray:
    """One backward step with the diffusion frozen at ``variance``.

    Unknowns are ``v_1 .. v_{N-1}``; the node next to ``s_max`` has no
    curvature, and ``v_N`` is extrapolated linearly afterwards.
    """
    lam = 0.5 * variance * scale
    m = lam.size
    lam[-1] = 0.0
    banded = np.zeros((3, m))
    banded[0, 1:] = -lam[:-1]
    banded[1] = 1.0 + 2.0 * lam
    banded[2, :-1] = -lam[1:]
    rhs = v_next[1:-1].copy()
    rhs[0] += lam[0] * boundary
    v = np.empty_like(v_next)
    v[0] = boundary
    v[1:-1] = solve_banded((1, 1), banded, rhs)
    v[-1] = 2.0 * v[-2] - v[-3]
    return v


def _explicit_step(
    v_next: np.ndarray,
    variance: np.ndarray,
    scale: np.ndarray,
    boundary: float,
) -> np.ndarray:
    lam = 0.5 * variance * scale
    v = v_next.copy()
    v[1:-1] += lam * (v_next[2:] - 2.0 * v_next[1:-1] + v_next[:-2])
    v[0] = boundary
    v[-1] = 2.0 * v[-2] - v[-3]
    return v


def bsb_solve(
    spec: UncertaintySpec,
    claim: Claim,
    grid: BsbGrid,
    stepper: Stepper = Stepper.IMPLICIT,
) -> BsbSurface:
    low, high = variance_bounds(spec)
    times = np.linspace(0.0, spec.horizon, grid.n_t + 1)
    spots = np.linspace(0.0, grid.s_max, grid.n_s + 1)
    dt = spec.horizon / grid.n_t
    ds = grid.s_max / grid.n_s
    level = spots[1:-1] ** 2 if spec.relative else np.ones(grid.n_s - 1)
    scale = dt * level / ds**2
    if stepper is Stepper.EXPLICIT:
        bound = stability_bound(spec, grid)
        if dt > bound:
            raise InfeasibleNumericsError(
                f"Explicit stepping is unstable: dt={dt:.3g} exceeds "
                f"{bound:.3g}. Refine n_t or use the implicit stepper."
            )
    values = np.empty((grid.n_t + 1, grid.n_s + 1))
    values[-1] = claim.payoff(spots)
    boundary = float(claim.payoff(np.zeros(1))[0])
    for k in range(grid.n_t - 1, -1, -1):
        v_next = values[k + 1]
        variance = _worst_variance(v_next, low, high)
        if stepper is Stepper.EXPLICIT:
            values[k] = _explicit_step(v_next, variance, scale, boundary)
            continue
        v = _implicit_step(v_next, variance, scale, boundary)
        # One Picard pass with the curvature of the new iterate.
        variance = _worst_variance(v, low, high)
        values[k] = _implicit_step(v_next, variance, scale, boundary)
    deltas = np.gradient(values, ds, axis=1)
    logger.debug(
        "Solved %dx%d grid, root value range [%g, %g]",
        grid.n_t,
        grid.n_s,
        values[0].min(),
        values[0].max(),
    )
    return BsbSurface(times=times, spots=spots, values=values, deltas=deltas)


def richardson_error(
    spec: UncertaintySpec, claim: Claim, grid: BsbGrid, s0: float
) -> float:
    """Price change at ``(0, s0)`` when both grid sizes double."""
    coarse = bsb_solve(spec, claim, grid).price_at(0.0, s0)
    fine = bsb_solve(spec, claim, grid.refined()).price_at(0.0, s0)
    return abs(fine - coarse)


def verify_bsb_hedge(
    spec: UncertaintySpec,
    surface: BsbSurface,
    claim: Claim,
    policy: ControlPolicy,
    n: int,
    seed: int,
    eps: float,
) -> HedgeReport:
    """Delta-hedge the surface price along simulated paths.

    Paths rebalance on the surface's time grid; deltas outside the space
    grid are those of its edges.
    """
    steps = len(surface.times) - 1
    simulation = dataclasses.replace(spec, steps=steps)
    paths = simulate_array(simulation, policy, n, seed)[:, :, 0]
    s0 = spec.s0[0]
    wealth = np.full(n, surface.price_at(0.0, s0))
    for k in range(steps):
        hedge = surface.delta_at(surface.times[k], paths[:, k])
        wealth += hedge * (paths[:, k + 1] - paths[:, k])
    slack = wealth - claim.payoff(paths[:, -1])
    violations = int(np.count_nonzero(slack < -eps))
    if violations:
        logger.warning(
            "%d of %d paths end below the claim by more than %g.",
            violations,
            n,
            eps,
        )
    return HedgeReport(
        checked=n,
        violations=violations,
        min_slack=float(slack.min()),
    )


def stability_bound(spec: UncertaintySpec, grid: BsbGrid) -> float:
    """Largest explicit time step for the grid."""
    _, high = variance_bounds(spec)
    ds = grid.s_max / grid.n_s
    return ds**2 / (high * (grid.s_max**2 if spec.relative else 1.0))

