"""Deflators, killed measures and the exit-measure construction."""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import (
    Any,
    Dict,
    Iterable,
    List,
    Mapping,
    Optional,
    Sequence,
    Tuple,
)

import numpy as np
import pandas as pd
from scipy.stats import norm

from robusthedge.constants import (
    BESSEL_BLOCK_SIZE,
    PROBABILITY_TOLERANCE,
    SCHEMA_VERSION,
    SUPERMARTINGALE_SLACK,
)
from robusthedge.documents import check_schema_version
from robusthedge.errors import DeflatorError, LevelSequenceError
from robusthedge.models import ModelLaw, TreeFamily
from robusthedge.pathspace import Path, lifetime

logger = logging.getLogger(__name__)

ChildWeights = Tuple[Tuple[float, ...], float]


@dataclass(frozen=True)
class Deflator:
    values: Mapping[str, float]
    # Optional nonincreasing factor D; the deflator is then values * D.
    decreasing: Optional[Mapping[str, float]] = None

    def __post_init__(self) -> None:
        errors = [
            f'Deflator value at {node_id} must be > 0, got {value}.'
            for node_id, value in self.values.items()
            if not value > 0 or not math.isfinite(value)
        ]
        if self.decreasing is not None:
            errors.extend(
                f'Factor at {node_id} must lie in (0, 1], got {value}.'
                for node_id, value in self.decreasing.items()
                if not 0 < value <= 1
            )
            missing = set(self.values) - set(self.decreasing)
            if missing:
                errors.append(f'Factor missing at nodes {sorted(missing)}.')
        if errors:
            raise DeflatorError('\n'.join(errors))

    @classmethod
    def normalized(
        cls,
        values: Mapping[str, float],
        root: str,
        decreasing: Optional[Mapping[str, float]] = None,
    ) -> 'Deflator':
        scale = values[root]
        return cls(
            values={k: v / scale for k, v in values.items()},
            decreasing=decreasing,
        )

    def __contains__(self, node_id: str) -> bool:
        return node_id in self.values

    def total(self, node_id: str) -> float:
        try:
            value = self.values[node_id]
        except KeyError:
            raise DeflatorError(f"No deflator value at node {node_id}.")
        if self.decreasing is None:
            return value
        return value * self.decreasing[node_id]

    def to_dict(self) -> Dict[str, Any]:
        result: Dict[str, Any] = {
            'schema-version': SCHEMA_VERSION,
            'values': dict(self.values),
        }
        if self.decreasing is not None:
            result['decreasing'] = dict(self.decreasing)
        return result

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'Deflator':
        check_schema_version(data)
        decreasing = data.get('decreasing')
        return cls(
            values={k: float(v) for k, v in data['values'].items()},
            decreasing=None
            if decreasing is None
            else {k: float(v) for k, v in decreasing.items()},
        )


@dataclass(frozen=True)
class KilledMeasure:
    # node id -> (child weights, cemetery mass)
    weights: Mapping[str, ChildWeights]

    def __post_init__(self) -> None:
        errors = []
        for node_id, (children, cemetery) in self.weights.items():
            if min(children, default=0.0) < 0 or cemetery < 0:
                errors.append(f'Negative weight at node {node_id}.')
            elif not math.isclose(
                sum(children) + cemetery,
                1.0,
                rel_tol=0.0,
                abs_tol=PROBABILITY_TOLERANCE,
            ):
                errors.append(
                    f'Weights at node {node_id} sum to '
                    f'{sum(children) + cemetery}, expected 1.'
                )
        if errors:
            raise DeflatorError('\n'.join(errors))

    def __contains__(self, node_id: str) -> bool:
        return node_id in self.weights

    def child_weights(self, node_id: str) -> np.ndarray:
        return np.asarray(self.weights[node_id][0], dtype=float)

    def cemetery(self, node_id: str) -> float:
        return self.weights[node_id][1]

    def alive_mass(self, fam: TreeFamily) -> Dict[str, float]:
        """Q(node reached and no cemetery jump yet) for every node."""
        mass = {node_id: 0.0 for node_id in fam.nodes}
        mass[fam.root] = 1.0
        for node_id in fam.breadth_first:
            if node_id not in self.weights or mass[node_id] == 0.0:
                continue
            children = fam.nodes[node_id].children
            for child, q in zip(children, self.weights[node_id][0]):
                mass[child] = mass[node_id] * q
        return mass

    def total_cemetery_mass(self, fam: TreeFamily) -> float:
        mass = self.alive_mass(fam)
        return 1.0 - sum(mass[v] for v in fam.terminal_nodes())

    def to_dict(self) -> Dict[str, Any]:
        return {
            'schema-version': SCHEMA_VERSION,
            'weights': {
                node_id: {'children': list(children), 'cemetery': cemetery}
                for node_id, (children, cemetery) in sorted(
                    self.weights.items()
                )
            },
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'KilledMeasure':
        check_schema_version(data)
        return cls(
            weights={
                node_id: (
                    tuple(float(q) for q in entry['children']),
                    float(entry['cemetery']),
                )
                for node_id, entry in data['weights'].items()
            }
        )


def _alive_internal(fam: TreeFamily, model: ModelLaw) -> List[str]:
    reach = fam.reach[model.name]
    return [
        v
        for v in fam.breadth_first
        if reach[v] > 0 and not fam.nodes[v].is_leaf
    ]


def _expected_child_value(
    fam: TreeFamily, model: ModelLaw, y: Deflator, node_id: str
) -> float:
    children = fam.nodes[node_id].children
    return sum(
        p * y.total(c)
        for c, p in zip(children, model.transitions[node_id])
        if p > 0
    )


def is_supermartingale_deflator(
    fam: TreeFamily, model: ModelLaw, y: Deflator
) -> Tuple[bool, float]:
    worst = 0.0
    for node_id in _alive_internal(fam, model):
        excess = _expected_child_value(fam, model, y, node_id) - y.total(
            node_id
        )
        worst = max(worst, excess)
    return worst <= SUPERMARTINGALE_SLACK, worst


def follmer_extend(
    fam: TreeFamily, model: ModelLaw, y: Deflator
) -> KilledMeasure:
    weights: Dict[str, ChildWeights] = {}
    for node_id in _alive_internal(fam, model):
        parent_value = y.total(node_id)
        children = fam.nodes[node_id].children
        q = tuple(
            p * y.total(c) / parent_value if p > 0 else 0.0
            for c, p in zip(children, model.transitions[node_id])
        )
        remainder = 1.0 - sum(q)
        if remainder < -PROBABILITY_TOLERANCE:
            raise DeflatorError(
                f"The deflator grows in expectation at node {node_id} "
                f"(cemetery mass {remainder})."
            )
        weights[node_id] = (q, max(remainder, 0.0))
    return KilledMeasure(weights)


def density_process(
    fam: TreeFamily, model: ModelLaw, q: KilledMeasure
) -> Deflator:
    """Recover Y from a killed measure prior-to-lifetime equivalent to P."""
    values = {fam.root: 1.0}
    for node_id in _alive_internal(fam, model):
        if node_id not in q:
            raise DeflatorError(f"The killed measure skips node {node_id}.")
        children = fam.nodes[node_id].children
        for c, p, w in zip(
            children, model.transitions[node_id], q.child_weights(node_id)
        ):
            if p > 0:
                if w <= 0:
                    raise DeflatorError(
                        f"The killed measure does not charge {c}."
                    )
                values[c] = values[node_id] * w / p
    return Deflator(values)


def is_prior_to_zeta_equivalent(
    fam: TreeFamily, model: ModelLaw, q: KilledMeasure
) -> bool:
    for node_id in _alive_internal(fam, model):
        if node_id not in q:
            return False
        for p, w in zip(
            model.transitions[node_id], q.child_weights(node_id)
        ):
            if (p > 0) != (w > 0):
                return False
    return True


def density_identity_residual(
    fam: TreeFamily,
    model: ModelLaw,
    y: Deflator,
    q: KilledMeasure,
    t: int,
    event: Iterable[str],
) -> float:
    level = set(fam.levels[t])
    event = list(event)
    outside = [v for v in event if v not in level]
    if outside:
        raise DeflatorError(f"Nodes {outside} are not time-{t} nodes.")
    reach = fam.reach[model.name]
    alive = q.alive_mass(fam)
    q_side = sum(alive[v] for v in event)
    p_side = sum(reach[v] * y.total(v) for v in event if reach[v] > 0)
    return abs(q_side - p_side)


def multiplicative_decomposition(
    fam: TreeFamily, model: ModelLaw, y: Deflator
) -> Deflator:
    """Split a positive supermartingale into martingale times a
    predictable nonincreasing factor.

    The factor moves by the one-step ratio ``E[Y_next] / Y`` observed at
    the parent, so it is known one step ahead.
    """
    ok, worst = is_supermartingale_deflator(fam, model, y)
    if not ok:
        raise DeflatorError(
            f"Not a supermartingale (worst excess {worst:.3g})."
        )
    factor = {fam.root: 1.0}
    martingale = {fam.root: y.total(fam.root)}
    for node_id in _alive_internal(fam, model):
        ratio = _expected_child_value(fam, model, y, node_id) / y.total(
            node_id
        )
        ratio = min(ratio, 1.0)
        children = fam.nodes[node_id].children
        for c, p in zip(children, model.transitions[node_id]):
            if p > 0:
                factor[c] = factor[node_id] * ratio
                martingale[c] = y.total(c) / factor[c]
    return Deflator(martingale, decreasing=factor)


def check_factorization(
    fam: TreeFamily, model: ModelLaw, y: Deflator
) -> List[str]:
    """Problems with a factored deflator; empty when the axioms hold."""
    if y.decreasing is None:
        return ['The deflator carries no decreasing factor.']
    problems = []
    for node_id in _alive_internal(fam, model):
        children = fam.nodes[node_id].children
        probs = model.transitions[node_id]
        d_parent = y.decreasing[node_id]
        expected = sum(
            p * y.values[c] for c, p in zip(children, probs) if p > 0
        )
        if abs(expected - y.values[node_id]) > SUPERMARTINGALE_SLACK * max(
            1.0, y.values[node_id]
        ):
            problems.append(f'Martingale part fails at {node_id}.')
        charged = [c for c, p in zip(children, probs) if p > 0]
        ceiling = d_parent + PROBABILITY_TOLERANCE
        if any(y.decreasing[c] > ceiling for c in charged):
            problems.append(f'Factor increases after {node_id}.')
        if len({y.decreasing[c] for c in charged}) > 1:
            problems.append(f'Factor is not predictable at {node_id}.')
    return problems


@dataclass(frozen=True)
class AnnouncementReport:
    levels: Tuple[float, ...]
    # Per path, the first time below each level (None if never).
    times: Tuple[Tuple[Optional[float], ...], ...]
    lifetimes: Tuple[float, ...]
    violations: int

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for i, (times, zeta) in enumerate(zip(self.times, self.lifetimes)):
            row: Dict[str, Any] = {'path': i, 'lifetime': zeta}
            for level, tau in zip(self.levels, times):
                row[f'tau_{level:g}'] = tau
            rows.append(row)
        return pd.DataFrame(rows)


def announce_lifetime(
    paths: Sequence[Path],
    levels: Sequence[float],
    resolution: float = 0.0,
    coordinate: int = 0,
) -> AnnouncementReport:
    levels = tuple(float(e) for e in levels)
    if not levels or any(e <= 0 for e in levels):
        raise LevelSequenceError('Levels must be positive.')
    if any(b >= a for a, b in zip(levels, levels[1:])):
        raise LevelSequenceError(
            f'Levels must be strictly decreasing, got {levels}.'
        )
    all_times = []
    lifetimes = []
    violations = 0
    for path in paths:
        zeta = lifetime(path).time
        times: List[Optional[float]] = []
        for level in levels:
            times.append(
                next(
                    (
                        t
                        for t, value in zip(path.grid, path.values)
                        if value is not None
                        and 0 <= value[coordinate] < level
                    ),
                    None,
                )
            )
        if math.isfinite(zeta) and any(
            tau is None or tau >= zeta
            for tau, level in zip(times, levels)
            if level > resolution
        ):
            violations += 1
        all_times.append(tuple(times))
        lifetimes.append(zeta)
    return AnnouncementReport(
        levels=levels,
        times=tuple(all_times),
        lifetimes=tuple(lifetimes),
        violations=violations,
    )


def simulate_absorbed_paths(
    horizon: float, steps: int, n: int, seed: int, x0: float = 1.0
) -> List[Path]:
    """Brownian motion from ``x0`` sent to the cemetery on hitting 0."""
    if horizon <= 0 or steps < 1 or n < 1:
        raise DeflatorError('Need horizon > 0, steps >= 1 and n >= 1.')
    dt = horizon / steps
    grid = tuple(float(t) for t in np.linspace(0.0, horizon, steps + 1))
    paths = []
    for stream in np.random.SeedSequence(seed).spawn(n):
        rng = np.random.default_rng(stream)
        walk = x0 + np.concatenate(
            [[0.0], np.cumsum(math.sqrt(dt) * rng.standard_normal(steps))]
        )
        hits = np.nonzero(walk <= 0)[0]
        death = int(hits[0]) if hits.size else len(grid)
        values = tuple(
            (float(x),) if i < death else None for i, x in enumerate(walk)
        )
        paths.append(Path(grid=grid, values=values))
    return paths


@dataclass(frozen=True)
class BesselReport:
    horizon: float
    samples: int
    seed: int
    estimate: float
    standard_error: float
    oracle: float
    cemetery_mass: float
    cemetery_oracle: float

    @property
    def z_score(self) -> float:
        if self.standard_error == 0:
            return 0.0
        return (self.estimate - self.oracle) / self.standard_error

    def to_dict(self) -> Dict[str, Any]:
        return {
            'horizon': self.horizon,
            'samples': self.samples,
            'seed': self.seed,
            'estimate': self.estimate,
            'standard_error': self.standard_error,
            'oracle': self.oracle,
            'cemetery_mass': self.cemetery_mass,
            'cemetery_oracle': self.cemetery_oracle,
            'z_score': self.z_score,
        }

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([self.to_dict()])


def _bessel_block(
    stream: np.random.SeedSequence, size: int, horizon: float
) -> Tuple[float, float]:
    rng = np.random.default_rng(stream)
    endpoint = math.sqrt(horizon) * rng.standard_normal((size, 3))
    endpoint[:, 0] += 1.0
    y = 1.0 / np.linalg.norm(endpoint, axis=1)
    return float(y.sum()), float((y * y).sum())


def inverse_bessel_demo(
    horizon: float, n: int, seed: int, workers: int = 1
) -> BesselReport:
    """Mass loss of the exit measure built from 1 / BES(3).

    Block sizes are fixed, so the result depends only on ``(seed, n)``.
    """
    if horizon <= 0:
        raise DeflatorError(f"The horizon must be > 0, got {horizon}.")
    if n < 1:
        raise DeflatorError('At least one sample is needed.')
    sizes = [BESSEL_BLOCK_SIZE] * (n // BESSEL_BLOCK_SIZE)
    if n % BESSEL_BLOCK_SIZE:
        sizes.append(n % BESSEL_BLOCK_SIZE)
    streams = np.random.SeedSequence(seed).spawn(len(sizes))
    jobs = list(zip(streams, sizes))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            sums = list(
                pool.map(lambda job: _bessel_block(*job, horizon), jobs)
            )
    else:
        sums = [_bessel_block(s, size, horizon) for s, size in jobs]
    total = math.fsum(s for s, _ in sums)
    total_sq = math.fsum(s for _, s in sums)
    mean = total / n
    variance = max(total_sq / n - mean * mean, 0.0)
    standard_error = math.sqrt(variance / n)
    survival = 2.0 * float(norm.cdf(1.0 / math.sqrt(horizon))) - 1.0
    logger.debug(
        "Bessel demo: %d samples in %d blocks, mean %.6f", n, len(jobs), mean
    )
    return BesselReport(
        horizon=horizon,
        samples=n,
        seed=seed,
        estimate=mean,
        standard_error=standard_error,
        oracle=survival,
        cemetery_mass=1.0 - mean,
        cemetery_oracle=2.0 * float(norm.sf(1.0 / math.sqrt(horizon))),
    )
