"""Dense two-phase simplex for the tiny node-level programs.

Problems are stated in standard form: minimize ``c @ x`` subject to
``A @ x == b`` and ``x >= 0``.  Bland's rule picks entering and leaving
variables, so the pivot sequence is fully determined by the input.
"""
import enum
import logging
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence

import numpy as np

from robusthedge.errors import InfeasibleNumericsError

logger = logging.getLogger(__name__)

PIVOT_TOLERANCE = 1e-9
COST_TOLERANCE = 1e-11
PHASE_ONE_TOLERANCE = 1e-9


class LPStatus(enum.Enum):
    OPTIMAL = 'optimal'
    INFEASIBLE = 'infeasible'
    UNBOUNDED = 'unbounded'


@dataclass(frozen=True)
class LPResult:
    status: LPStatus
    x: Optional[np.ndarray] = None
    objective: float = float('nan')

    @property
    def is_optimal(self) -> bool:
        return self.status is LPStatus.OPTIMAL


class SimplexTableau:
    def __init__(
        self, matrix: np.ndarray, rhs: np.ndarray, basis: List[int]
    ) -> None:
        self.matrix = matrix
        self.rhs = rhs
        self.basis = basis

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]

    def pivot(self, row: int, col: int) -> None:
        self.rhs[row] /= self.matrix[row, col]
        self.matrix[row] /= self.matrix[row, col]
        for k in range(self.rows):
            factor = self.matrix[k, col]
            if k != row and factor != 0.0:
                self.matrix[k] -= factor * self.matrix[row]
                self.rhs[k] -= factor * self.rhs[row]
        self.basis[row] = col

    def reduced_costs(self, cost: np.ndarray) -> np.ndarray:
        return cost - cost[self.basis] @ self.matrix

    def bland_step(self, cost: np.ndarray, columns: Sequence[int]) -> str:
        reduced = self.reduced_costs(cost)
        entering = next(
            (j for j in columns if reduced[j] < -COST_TOLERANCE), None
        )
        if entering is None:
            return 'optimal'
        column = self.matrix[:, entering]
        candidates = [
            (self.rhs[i] / column[i], self.basis[i], i)
            for i in range(self.rows)
            if column[i] > PIVOT_TOLERANCE
        ]
        if not candidates:
            return 'unbounded'
        best_ratio = min(ratio for ratio, _, _ in candidates)
        # Ties (up to rounding) leave by the smallest variable index.
        _, _, row = min(
            (c for c in candidates if c[0] <= best_ratio + COST_TOLERANCE),
            key=lambda c: c[1],
        )
        self.pivot(row, entering)
        return 'go_on'

    def run(self, cost: np.ndarray, columns: Iterable[int]) -> str:
        allowed = sorted(columns)
        limit = 100 * (self.matrix.shape[1] + self.rows) + 100
        for _ in range(limit):
            state = self.bland_step(cost, allowed)
            if state != 'go_on':
                return state
        raise InfeasibleNumericsError('The simplex method did not terminate.')

    def drop_rows(self, rows: Sequence[int]) -> None:
        keep = [i for i in range(self.rows) if i not in set(rows)]
        self.matrix = self.matrix[keep]
        self.rhs = self.rhs[keep]
        self.basis = [self.basis[i] for i in keep]


def solve(
    c: Sequence[float],
    a_eq: np.ndarray,
    b_eq: Sequence[float],
) -> LPResult:
    cost = np.asarray(c, dtype=float)
    n = cost.size
    a = np.asarray(a_eq, dtype=float).reshape(-1, n)
    b = np.asarray(b_eq, dtype=float).ravel()
    m = a.shape[0]
    if m == 0:
        if np.any(cost < -COST_TOLERANCE):
            return LPResult(LPStatus.UNBOUNDED)
        return LPResult(LPStatus.OPTIMAL, np.zeros(n), 0.0)
    flip = b < 0
    a[flip] *= -1.0
    b = np.where(flip, -b, b)
    tableau = SimplexTableau(
        matrix=np.hstack([a, np.eye(m)]),
        rhs=b.copy(),
        basis=list(range(n, n + m)),
    )
    phase_one_cost = np.concatenate([np.zeros(n), np.ones(m)])
    tableau.run(phase_one_cost, range(n + m))
    infeasibility = float(phase_one_cost[tableau.basis] @ tableau.rhs)
    if infeasibility > PHASE_ONE_TOLERANCE * max(1.0, float(b.max())):
        logger.debug("LP infeasible, phase one residual %g", infeasibility)
        return LPResult(LPStatus.INFEASIBLE)
    _drive_out_artificials(tableau, n)
    phase_two_cost = np.concatenate([cost, np.zeros(m)])
    if tableau.run(phase_two_cost, range(n)) == 'unbounded':
        return LPResult(LPStatus.UNBOUNDED)
    x = np.zeros(n + m)
    x[tableau.basis] = tableau.rhs
    x = np.maximum(x[:n], 0.0)
    return LPResult(LPStatus.OPTIMAL, x, float(cost @ x))


def _drive_out_artificials(tableau: SimplexTableau, n: int) -> None:
    redundant = []
    for row in range(tableau.rows):
        if tableau.basis[row] < n:
            continue
        candidates = np.nonzero(
            np.abs(tableau.matrix[row, :n]) > PIVOT_TOLERANCE
        )[0]
        if candidates.size:
            tableau.pivot(row, int(candidates[0]))
        else:
            redundant.append(row)
    if redundant:
        tableau.drop_rows(redundant)
