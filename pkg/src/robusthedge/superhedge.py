"""Robust superhedging on tree families.

At a node with a full-mass martingale weight on its supported children the
dual measures are the weights dominated by one; their sup is the classical
one-step price.  At a node without one, mass is forced out: the slack of a
sub-probability weight sits on the cemetery point ``S = 0`` with value 0
and the martingale condition reads ``sum q_c S_c = S_v``.  Backward
induction over the quasi-sure support gives the value process ``Z``; the
hedges follow from the one-step minimax problem or from the covariation
of ``(S, Z)``.
"""
import itertools
import math
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import (
    Any,
    Dict,
    FrozenSet,
    List,
    Mapping,
    Optional,
    Sequence,
    Set,
    Tuple,
)

import numpy as np

from robusthedge import lp
from robusthedge.claims import Claim
from robusthedge.constants import (
    DEFAULT_TOLERANCE,
    MAX_ENUMERATION_PERIODS,
    PROBABILITY_TOLERANCE,
    SUPERMARTINGALE_SLACK,
)
from robusthedge.deflator import ChildWeights, KilledMeasure
from robusthedge.errors import (
    InfeasibleNumericsError,
    MatrixError,
    OversizeTreeError,
    TreeFamilyError,
)
from robusthedge.models import (
    ModelLaw,
    Node,
    TreeFamily,
    condition,
    enumerate_paths,
    supports,
)
from robusthedge.na1 import na1_check

logger = logging.getLogger(__name__)

# Projections whose constraint residual exceeds this are infeasible.
PROJECTION_RESIDUAL = 1e-9


@dataclass(frozen=True)
class ValueProcess:
    root: str
    values: Mapping[str, float]
    measure: KilledMeasure
    warnings: Tuple[str, ...] = ()
    # Nodes whose value needed the cemetery point (S = 0, value 0).
    forced: FrozenSet[str] = frozenset()

    @property
    def root_value(self) -> float:
        return self.values[self.root]


@dataclass(frozen=True)
class HedgeStrategy:
    hedges: Mapping[str, Tuple[float, ...]]
    # Smallest one-step surplus Z_v + H dS_c - Z_c over supported children.
    residuals: Mapping[str, float] = field(default_factory=dict)

    def hedge_at(self, node_id: str, dim: int) -> np.ndarray:
        if node_id not in self.hedges:
            return np.zeros(dim)
        return np.asarray(self.hedges[node_id], dtype=float)


@dataclass(frozen=True)
class CovariationEstimate:
    c_s: np.ndarray
    c_sz: np.ndarray
    clock: float


@dataclass(frozen=True)
class HedgeReport:
    checked: int
    violations: int
    min_slack: float
    monotone: Optional[bool] = None

    @property
    def violation_rate(self) -> float:
        if self.checked == 0:
            return 0.0
        return self.violations / self.checked

    def to_dict(self) -> Dict[str, Any]:
        return {
            'checked': self.checked,
            'violations': self.violations,
            'violation_rate': self.violation_rate,
            'min_slack': self.min_slack,
            'monotone': self.monotone,
        }


def pinv(m: np.ndarray, tol: float = DEFAULT_TOLERANCE) -> np.ndarray:
    """Moore-Penrose inverse of a symmetric matrix via its eigenbasis."""
    matrix = np.atleast_2d(np.asarray(m, dtype=float))
    if matrix.shape[0] != matrix.shape[1]:
        raise MatrixError(f"Expected a square matrix, got {matrix.shape}.")
    scale = max(1.0, float(np.abs(matrix).max(initial=0.0)))
    if not np.allclose(matrix, matrix.T, rtol=0.0, atol=tol * scale):
        raise MatrixError('The matrix is not symmetric.')
    eigenvalues, basis = np.linalg.eigh((matrix + matrix.T) / 2.0)
    top = float(np.abs(eigenvalues).max(initial=0.0))
    if top == 0.0:
        return np.zeros_like(matrix)
    keep = np.abs(eigenvalues) > tol * top
    inverted = np.zeros_like(eigenvalues)
    inverted[keep] = 1.0 / eigenvalues[keep]
    return np.asarray((basis * inverted) @ basis.T)


def _zero_tolerance(node: Node) -> float:
    return 1e-12 * max(1.0, float(np.abs(node.state).max()))


def _envelope_1d(
    increments: np.ndarray, z: np.ndarray, tol: float
) -> Optional[Tuple[float, np.ndarray]]:
    """Upper concave envelope of the points ``(dS_c, Z_c)`` at 0.

    None when 0 lies outside the range of the increments.
    """
    ds = increments[:, 0]
    k = ds.size
    best = -np.inf
    weights = np.zeros(k)
    for i in np.nonzero(np.abs(ds) <= tol)[0]:
        if z[i] > best:
            best = float(z[i])
            weights = np.zeros(k)
            weights[i] = 1.0
    below = np.nonzero(ds < -tol)[0]
    above = np.nonzero(ds > tol)[0]
    for i, j in itertools.product(below, above):
        lam = ds[j] / (ds[j] - ds[i])
        value = lam * z[i] + (1.0 - lam) * z[j]
        if value > best:
            best = float(value)
            weights = np.zeros(k)
            weights[i] = lam
            weights[j] = 1.0 - lam
    if best == -np.inf:
        return None
    return best, weights


def _node_sup_lp(
    increments: np.ndarray, z: np.ndarray
) -> Optional[Tuple[float, np.ndarray]]:
    k, d = increments.shape
    a_eq = np.vstack([increments.T, np.ones((1, k))])
    b_eq = np.concatenate([np.zeros(d), [1.0]])
    result = lp.solve(-z, a_eq, b_eq)
    if result.status is lp.LPStatus.INFEASIBLE:
        return None
    if not result.is_optimal or result.x is None:
        raise InfeasibleNumericsError(
            f"Node pricing program ended as {result.status.value}."
        )
    return max(float(-result.objective), 0.0), result.x


def _full_mass_sup(
    fam: TreeFamily, node: Node, increments: np.ndarray, z: np.ndarray
) -> Optional[Tuple[float, np.ndarray]]:
    """Sup of ``q . z`` over probability weights with ``q . dS = 0``."""
    if fam.dim == 1:
        return _envelope_1d(increments, z, _zero_tolerance(node))
    return _node_sup_lp(increments, z)


def _with_cemetery(
    node: Node, increments: np.ndarray, z: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    # The cemetery sits at S = 0 and pays nothing.
    return np.vstack([increments, -node.state]), np.append(z, 0.0)


def has_martingale_weight(
    fam: TreeFamily, node_id: str, children: Sequence[str]
) -> bool:
    """Whether some probability on ``children`` keeps S a martingale."""
    increments = fam.increments(node_id, children)
    found = _full_mass_sup(
        fam, fam.nodes[node_id], increments, np.zeros(len(children))
    )
    return found is not None


def _node_sup(
    fam: TreeFamily, node_id: str, children: Sequence[str], z: np.ndarray
) -> Tuple[float, np.ndarray, bool]:
    """Node value, child weights and whether mass loss was forced.

    Mass only leaves for the cemetery when no full-mass martingale weight
    exists on the supported children.
    """
    node = fam.nodes[node_id]
    increments = fam.increments(node_id, children)
    found = _full_mass_sup(fam, node, increments, z)
    if found is not None:
        return found[0], found[1], False
    found = _full_mass_sup(fam, node, *_with_cemetery(node, increments, z))
    if found is None:
        return 0.0, np.zeros(len(children)), True
    return found[0], found[1][:-1], True


def _terminal_values(fam: TreeFamily, claim: Claim) -> Dict[str, float]:
    return {
        node_id: claim.node_payoff(fam.nodes[node_id])
        for node_id in fam.terminal_nodes()
        if node_id in fam.quasi_sure
    }


def _full_weights(
    fam: TreeFamily, node_id: str, children: Sequence[str], q: np.ndarray
) -> ChildWeights:
    by_child = dict(zip(children, q))
    full = tuple(
        float(max(by_child.get(c, 0.0), 0.0))
        for c in fam.nodes[node_id].children
    )
    mass = sum(full)
    if mass > 1.0:
        full = tuple(w / mass for w in full)
    return full, max(1.0 - sum(full), 0.0)


def sublinear_price_tree(
    fam: TreeFamily, claim: Claim, check_na1: bool = True
) -> ValueProcess:
    warnings: List[str] = []
    if check_na1 and not na1_check(fam).holds:
        message = 'The family admits arbitrage of the first kind.'
        logger.warning(message)
        warnings.append(message)
    values = _terminal_values(fam, claim)
    weights: Dict[str, ChildWeights] = {}
    forced: Set[str] = set()
    for level in reversed(fam.levels[: fam.horizon]):
        for node_id in level:
            if node_id not in fam.quasi_sure:
                continue
            children = supports(fam, node_id)
            z = np.array([values[c] for c in children])
            value, q, lost = _node_sup(fam, node_id, children, z)
            values[node_id] = value
            weights[node_id] = _full_weights(fam, node_id, children, q)
            if lost:
                forced.add(node_id)
                message = (
                    f'Node {node_id} has no martingale measure; its value '
                    f'sends mass {weights[node_id][1]:.6g} to the cemetery.'
                )
                logger.warning(message)
                warnings.append(message)
    return ValueProcess(
        root=fam.root,
        values=values,
        measure=KilledMeasure(weights),
        warnings=tuple(warnings),
        forced=frozenset(forced),
    )


def root_price(fam: TreeFamily, claim: Claim) -> float:
    return sublinear_price_tree(fam, claim).root_value


@lru_cache(maxsize=32)
def simplex_grid(step: float, k: int) -> np.ndarray:
    """Points of the ``(k - 1)``-simplex with coordinates on a step grid."""
    n = int(round(1.0 / step))
    points = [
        c
        for c in itertools.product(range(n + 1), repeat=k - 1)
        if sum(c) <= n
    ]
    grid = np.array([list(c) + [n - sum(c)] for c in points], dtype=float)
    grid /= n
    grid.setflags(write=False)
    return grid


def project_to_martingale(
    points: np.ndarray, increments: np.ndarray
) -> np.ndarray:
    """Project rows onto ``{sum = 1, weighted increments = 0}``.

    Each row is projected within its own support; rows whose support
    cannot carry the constraint come back as NaN.
    """
    m, n = points.shape
    constraints = np.vstack([np.ones(n), increments.T])
    target = np.zeros(constraints.shape[0])
    target[0] = 1.0
    out = np.full((m, n), np.nan)
    bits = np.arange(n)
    codes = (points > 0).astype(np.int64) @ (np.int64(1) << bits)
    for code in np.unique(codes):
        rows = np.nonzero(codes == code)[0]
        pattern = ((code >> bits) & 1).astype(bool)
        a = constraints[:, pattern]
        gram = np.linalg.pinv(a @ a.T)
        block = points[np.ix_(rows, pattern)]
        projected = block - (block @ a.T - target) @ gram @ a
        residual = np.abs(projected @ a.T - target).max(axis=1)
        feasible = residual <= PROJECTION_RESIDUAL
        full = np.full((rows.size, n), np.nan)
        full[np.ix_(feasible, pattern)] = projected[feasible]
        full[np.ix_(feasible, ~pattern)] = 0.0
        out[rows] = full
    return out


def _grid_sup(
    increments: np.ndarray, z: np.ndarray, grid_step: float
) -> Optional[float]:
    grid = simplex_grid(grid_step, z.size)
    projected = project_to_martingale(grid, increments)
    valid = np.nan_to_num(projected, nan=-1.0).min(axis=1) >= (
        -PROBABILITY_TOLERANCE
    )
    if not valid.any():
        return None
    candidates = np.clip(projected[valid], 0.0, None)
    return max(float((candidates @ z).max()), 0.0)


def dual_enumerate(
    fam: TreeFamily, claim: Claim, grid_step: float
) -> float:
    """Brute-force dual value over gridded killed measures.

    Nodes without a full-mass martingale weight are searched with the
    cemetery point as an extra column.
    """
    if fam.horizon > MAX_ENUMERATION_PERIODS:
        raise OversizeTreeError(fam.horizon, MAX_ENUMERATION_PERIODS)
    values = _terminal_values(fam, claim)
    for level in reversed(fam.levels[: fam.horizon]):
        for node_id in level:
            if node_id not in fam.quasi_sure:
                continue
            node = fam.nodes[node_id]
            children = supports(fam, node_id)
            increments = fam.increments(node_id, children)
            z = np.array([values[c] for c in children])
            if has_martingale_weight(fam, node_id, children):
                best = _grid_sup(increments, z, grid_step)
            else:
                best = _grid_sup(
                    *_with_cemetery(node, increments, z), grid_step
                )
            values[node_id] = 0.0 if best is None else best
    return values[fam.root]


def _ell_one_hedge(
    increments: np.ndarray, z: np.ndarray, capital: float
) -> Optional[np.ndarray]:
    """Least l1-norm h with capital + h dS_c >= z_c for all c."""
    k, d = increments.shape
    # Columns: h+ (d), h- (d), surplus (k).
    a_eq = np.hstack([increments, -increments, -np.eye(k)])
    b_eq = z - capital
    cost = np.concatenate([np.ones(2 * d), np.zeros(k)])
    result = lp.solve(cost, a_eq, b_eq)
    if not result.is_optimal or result.x is None:
        return None
    return np.asarray(result.x[:d] - result.x[d : 2 * d])


def _hedge_1d(
    increments: np.ndarray, z: np.ndarray, capital: float, tol: float
) -> np.ndarray:
    ds = increments[:, 0]
    ratios = (z - capital) / np.where(np.abs(ds) > tol, ds, 1.0)
    lower = ratios[ds > tol].max(initial=-np.inf)
    upper = ratios[ds < -tol].min(initial=np.inf)
    if lower > upper:
        # Rounding only; the interval is nonempty at the exact value.
        return np.array([(lower + upper) / 2.0])
    return np.array([float(np.clip(0.0, lower, upper))])


def _hedge_multi(
    increments: np.ndarray, z: np.ndarray, capital: float
) -> np.ndarray:
    scale = max(1.0, abs(capital), float(np.abs(z).max(initial=0.0)))
    for padding in (0.0, 1e-12, 1e-10):
        hedge = _ell_one_hedge(increments, z, capital + padding * scale)
        if hedge is not None:
            return hedge
    raise InfeasibleNumericsError('No hedge attains the node value.')


def _surplus(
    increments: np.ndarray, z: np.ndarray, capital: float, hedge: np.ndarray
) -> float:
    if z.size == 0:
        return capital
    return float((capital + increments @ hedge - z).min())


def extract_strategy_envelope(
    fam: TreeFamily, value: ValueProcess
) -> HedgeStrategy:
    hedges: Dict[str, Tuple[float, ...]] = {}
    residuals: Dict[str, float] = {}
    for node_id in fam.breadth_first:
        node = fam.nodes[node_id]
        if node.is_leaf or node_id not in fam.quasi_sure:
            continue
        children = supports(fam, node_id)
        increments = fam.increments(node_id, children)
        z = np.array([value.values[c] for c in children])
        capital = value.values[node_id]
        rows, targets = increments, z
        if node_id in value.forced:
            # Wealth must also stay nonnegative at the cemetery point.
            rows, targets = _with_cemetery(node, increments, z)
        if fam.dim == 1:
            hedge = _hedge_1d(rows, targets, capital, _zero_tolerance(node))
        else:
            hedge = _hedge_multi(rows, targets, capital)
        hedges[node_id] = tuple(float(h) for h in hedge)
        residuals[node_id] = _surplus(increments, z, capital, hedge)
    return HedgeStrategy(hedges=hedges, residuals=residuals)


def covariation_estimates(
    fam: TreeFamily, value: ValueProcess, q: KilledMeasure
) -> Dict[str, CovariationEstimate]:
    """One-step conditional covariances of ``(S, Z)`` given survival."""
    estimates = {}
    d = fam.dim
    for node_id in fam.breadth_first:
        if node_id not in q or node_id not in value.values:
            continue
        weights = q.child_weights(node_id)
        alive = float(weights.sum())
        if alive <= PROBABILITY_TOLERANCE:
            estimates[node_id] = CovariationEstimate(
                np.zeros((d, d)), np.zeros(d), 0.0
            )
            continue
        charged = [
            (c, w)
            for c, w in zip(fam.nodes[node_id].children, weights)
            if w > 0
        ]
        children = [c for c, _ in charged]
        w = np.array([w for _, w in charged]) / alive
        ds = fam.increments(node_id, children)
        dz = np.array([value.values[c] for c in children])
        ds_centered = ds - w @ ds
        dz_centered = dz - w @ dz
        c_s = (ds_centered * w[:, None]).T @ ds_centered
        c_sz = ds_centered.T @ (w * dz_centered)
        estimates[node_id] = CovariationEstimate(
            c_s=c_s, c_sz=c_sz, clock=float(np.trace(c_s))
        )
    return estimates


def extract_strategy_covariation(
    fam: TreeFamily, value: ValueProcess, q: KilledMeasure
) -> HedgeStrategy:
    hedges: Dict[str, Tuple[float, ...]] = {}
    residuals: Dict[str, float] = {}
    for node_id, estimate in covariation_estimates(fam, value, q).items():
        hedge = pinv(estimate.c_s) @ estimate.c_sz
        hedges[node_id] = tuple(float(h) for h in hedge)
        children = supports(fam, node_id)
        if children:
            z = np.array([value.values[c] for c in children])
            residuals[node_id] = _surplus(
                fam.increments(node_id, children),
                z,
                value.values[node_id],
                hedge,
            )
    return HedgeStrategy(hedges=hedges, residuals=residuals)


def verify_superhedge(
    fam: TreeFamily,
    capital: float,
    strategy: HedgeStrategy,
    claim: Claim,
    value: Optional[ValueProcess] = None,
    tolerance: float = DEFAULT_TOLERANCE,
) -> HedgeReport:
    """Replay the hedge on every quasi-sure path of the tree.

    With ``value`` given, also checks that ``Z - Z_0 - (H . S)`` never
    increases along a path.
    """
    violations = 0
    min_slack = np.inf
    monotone = True if value is not None else None
    paths = enumerate_paths(fam)
    for path in paths:
        wealth = capital
        for parent, child in zip(path, path[1:]):
            step = fam.nodes[child].state - fam.nodes[parent].state
            gain = float(strategy.hedge_at(parent, fam.dim) @ step)
            wealth += gain
            if value is not None:
                move = value.values[child] - value.values[parent] - gain
                if move > tolerance:
                    monotone = False
        slack = wealth - claim.node_payoff(fam.nodes[path[-1]])
        min_slack = min(min_slack, slack)
        if slack < -tolerance:
            violations += 1
    return HedgeReport(
        checked=len(paths),
        violations=violations,
        min_slack=float(min_slack),
        monotone=monotone,
    )


def supermartingale_check(
    fam: TreeFamily, value: ValueProcess, q: KilledMeasure
) -> Tuple[bool, float]:
    """Whether ``Z`` is a supermartingale under ``q``.

    Charging a child outside the quasi-sure support is a violation with
    an infinite gap.
    """
    worst = 0.0
    alive = q.alive_mass(fam)
    for node_id in fam.breadth_first:
        if node_id not in q or alive[node_id] <= 0:
            continue
        if node_id not in value.values:
            continue
        expected = 0.0
        for c, w in zip(fam.nodes[node_id].children, q.child_weights(node_id)):
            if w <= 0:
                continue
            if c not in value.values:
                return False, math.inf
            expected += w * value.values[c]
        scale = max(1.0, abs(value.values[node_id]))
        worst = max(worst, (expected - value.values[node_id]) / scale)
    return worst <= SUPERMARTINGALE_SLACK, worst


def truncate(fam: TreeFamily, t: int) -> TreeFamily:
    """The family observed up to time ``t``."""
    if not 0 <= t <= fam.horizon:
        raise TreeFamilyError(f"Time {t} is outside the tree horizon.")
    kept = {v: n for v, n in fam.nodes.items() if n.time <= t}
    nodes = {
        v: Node(
            id=n.id,
            time=n.time,
            value=n.value,
            parent=n.parent,
            children=n.children if n.time < t else (),
        )
        for v, n in kept.items()
    }
    models = tuple(
        ModelLaw(
            name=model.name,
            transitions={
                v: p
                for v, p in model.transitions.items()
                if v in nodes and nodes[v].time < t
            },
        )
        for model in fam.models
    )
    return TreeFamily(
        nodes=nodes, root=fam.root, models=models, origin=fam.origin
    )


def dpp_check(fam: TreeFamily, claim: Claim, t: int) -> float:
    """Gap between one-pass pricing and pricing in two stages at ``t``."""
    one_pass = sublinear_price_tree(fam, claim, check_na1=False).root_value
    inner = {
        node_id: sublinear_price_tree(
            condition(fam, node_id), claim, check_na1=False
        ).root_value
        for node_id in fam.levels[t]
        if node_id in fam.quasi_sure
    }
    outer = sublinear_price_tree(
        truncate(fam, t),
        Claim('node-values', {'values': inner}),
        check_na1=False,
    ).root_value
    return abs(one_pass - outer)


def _sample_weight(
    rng: np.random.Generator, increments: np.ndarray, tries: int
) -> Optional[np.ndarray]:
    draws = rng.dirichlet(np.ones(increments.shape[0]), size=tries)
    projected = project_to_martingale(draws, increments)
    accepted = np.nonzero(
        np.nan_to_num(projected, nan=-1.0).min(axis=1) >= 0
    )[0]
    if not accepted.size:
        return None
    return np.asarray(projected[accepted[0]])


def sample_killed_measure(
    fam: TreeFamily, rng: np.random.Generator, max_tries: int = 1000
) -> KilledMeasure:
    """Random member of the dual class, by rejection sampling.

    Dirichlet draws over the supported children and the cemetery are
    projected onto the martingale constraint; negative projections are
    redrawn.  The cemetery moves nothing where a full-mass martingale
    weight exists and sits at ``S = 0`` elsewhere.  Half of the nodes are
    then thinned child by child, which keeps the weight in the class.
    """
    weights: Dict[str, ChildWeights] = {}
    for node_id in fam.breadth_first:
        node = fam.nodes[node_id]
        if node.is_leaf or node_id not in fam.quasi_sure:
            continue
        children = supports(fam, node_id)
        increments = fam.increments(node_id, children)
        if has_martingale_weight(fam, node_id, children):
            cemetery = np.zeros(fam.dim)
        else:
            cemetery = -node.state
        pi = _sample_weight(
            rng, np.vstack([increments, cemetery]), max_tries
        )
        if pi is None:
            pi = np.zeros(len(children) + 1)
            pi[-1] = 1.0
        q = pi[:-1]
        if rng.random() < 0.5:
            q = q * rng.random(q.size)
        weights[node_id] = _full_weights(fam, node_id, children, q)
    return KilledMeasure(weights)
