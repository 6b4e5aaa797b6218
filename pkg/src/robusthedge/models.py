"""Nondominated model families.

Two representations are provided: finite scenario trees carrying several
transition laws (``TreeFamily``), and the canonical class of Itô processes
with drift and volatility uncertainty (``UncertaintySpec`` plus a
``ControlPolicy`` that selects one law from it for simulation).
"""
import logging
import math
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import (
    Any,
    Callable,
    Dict,
    List,
    Mapping,
    Optional,
    Protocol,
    Sequence,
    Set,
    Tuple,
    Union,
)

import numpy as np

from robusthedge.constants import PROBABILITY_TOLERANCE, SCHEMA_VERSION
from robusthedge.documents import check_schema_version
from robusthedge.errors import (
    ConditioningError,
    PastingError,
    PolicyError,
    TreeFamilyError,
    UncertaintySpecError,
)
from robusthedge.pathspace import Path

logger = logging.getLogger(__name__)

Vector = Tuple[float, ...]


@dataclass(frozen=True)
class Node:
    id: str
    time: int
    value: Vector
    parent: Optional[str]
    children: Tuple[str, ...] = ()

    @property
    def is_leaf(self) -> bool:
        return not self.children

    @property
    def state(self) -> np.ndarray:
        return np.asarray(self.value, dtype=float)


@dataclass(frozen=True)
class ModelLaw:
    name: str
    # Probability vectors aligned with each internal node's children.
    transitions: Mapping[str, Tuple[float, ...]]

    def probabilities(self, node_id: str) -> np.ndarray:
        return np.asarray(self.transitions[node_id], dtype=float)

    def charged(self, fam: 'TreeFamily', node_id: str) -> Tuple[str, ...]:
        children = fam.nodes[node_id].children
        # Leaves carry no transition vector.
        probs = self.transitions.get(node_id, ())
        return tuple(c for c, p in zip(children, probs) if p > 0)


@dataclass(frozen=True)
class TreeFamily:
    nodes: Mapping[str, Node]
    root: str
    models: Tuple[ModelLaw, ...]
    # Value of the node this family was conditioned on, if any.
    origin: Optional[Vector] = None

    def __post_init__(self) -> None:
        errors = _structure_errors(self)
        if not errors:
            errors = _model_errors(self)
        if not errors:
            errors = _reachability_errors(self)
        if errors:
            raise TreeFamilyError('\n'.join(errors))

    @property
    def root_node(self) -> Node:
        return self.nodes[self.root]

    @property
    def dim(self) -> int:
        return len(self.root_node.value)

    @cached_property
    def horizon(self) -> int:
        return max(node.time for node in self.nodes.values())

    @cached_property
    def breadth_first(self) -> Tuple[str, ...]:
        order = []
        queue = deque([self.root])
        while queue:
            node_id = queue.popleft()
            order.append(node_id)
            queue.extend(self.nodes[node_id].children)
        return tuple(order)

    @cached_property
    def levels(self) -> Tuple[Tuple[str, ...], ...]:
        levels: List[List[str]] = [[] for _ in range(self.horizon + 1)]
        for node_id in self.breadth_first:
            levels[self.nodes[node_id].time].append(node_id)
        return tuple(tuple(level) for level in levels)

    @cached_property
    def reach(self) -> Dict[str, Dict[str, float]]:
        return {
            model.name: reach_probability(self, model) for model in self.models
        }

    @cached_property
    def quasi_sure(self) -> Set[str]:
        return {
            node_id
            for probs in self.reach.values()
            for node_id, p in probs.items()
            if p > 0
        }

    def model(self, name: str) -> ModelLaw:
        for model in self.models:
            if model.name == name:
                return model
        raise TreeFamilyError(f"Unknown model: {name}")

    def children(self, node_id: str) -> Tuple[Node, ...]:
        return tuple(self.nodes[c] for c in self.nodes[node_id].children)

    def increments(
        self, node_id: str, children: Optional[Sequence[str]] = None
    ) -> np.ndarray:
        node = self.nodes[node_id]
        if children is None:
            children = node.children
        if not children:
            return np.zeros((0, self.dim))
        values = np.array([self.nodes[c].value for c in children], float)
        return values - node.state

    def relative_value(self, node_id: str) -> np.ndarray:
        state = self.nodes[node_id].state
        if self.origin is None:
            return state
        return state - np.asarray(self.origin)

    def terminal_nodes(self) -> Tuple[str, ...]:
        return self.levels[self.horizon]

    def subtree(self, node_id: str) -> Tuple[str, ...]:
        order = []
        queue = deque([node_id])
        while queue:
            current = queue.popleft()
            order.append(current)
            queue.extend(self.nodes[current].children)
        return tuple(order)

    def to_dict(self) -> Dict[str, Any]:
        result: Dict[str, Any] = {
            'schema-version': SCHEMA_VERSION,
            'nodes': [
                {
                    'id': node_id,
                    'time': self.nodes[node_id].time,
                    'S': list(self.nodes[node_id].value),
                }
                for node_id in self.breadth_first
            ],
            'edges': [
                [node_id, child]
                for node_id in self.breadth_first
                for child in self.nodes[node_id].children
            ],
            'models': [
                {
                    'name': model.name,
                    'probabilities': {
                        node_id: dict(
                            zip(
                                self.nodes[node_id].children,
                                model.transitions[node_id],
                            )
                        )
                        for node_id in self.breadth_first
                        if node_id in model.transitions
                    },
                }
                for model in self.models
            ],
        }
        if self.origin is not None:
            result['origin'] = list(self.origin)
        return result


def _structure_errors(fam: TreeFamily) -> List[str]:
    errors = []
    if fam.root not in fam.nodes:
        return [f'Root node "{fam.root}" is not defined.']
    root = fam.nodes[fam.root]
    if root.parent is not None:
        errors.append('The root node cannot have a parent.')
    if root.time != 0:
        errors.append('The root node must sit at time 0.')
    dims = {len(node.value) for node in fam.nodes.values()}
    if len(dims) != 1:
        errors.append('All nodes must carry values of the same dimension.')
    for node in fam.nodes.values():
        if not all(math.isfinite(x) for x in node.value):
            errors.append(f'Node "{node.id}" has a non-finite value.')
        if node.id != fam.root:
            parent = fam.nodes.get(node.parent or '')
            if parent is None or node.id not in parent.children:
                errors.append(f'Node "{node.id}" is dangling.')
        for child_id in node.children:
            child = fam.nodes.get(child_id)
            if child is None:
                errors.append(
                    f'Node "{node.id}" links to unknown child "{child_id}".'
                )
            elif child.parent != node.id or child.time != node.time + 1:
                errors.append(
                    f'Edge {node.id} -> {child_id} breaks the time grid.'
                )
    if errors:
        return errors
    seen: Set[str] = set()
    queue = deque([fam.root])
    while queue:
        current = queue.popleft()
        if current in seen:
            return [f'The tree has a cycle through "{current}".']
        seen.add(current)
        queue.extend(fam.nodes[current].children)
    unreachable = sorted(set(fam.nodes) - seen)
    if unreachable:
        errors.append(f'Nodes not connected to the root: {unreachable}')
    return errors


def _model_errors(fam: TreeFamily) -> List[str]:
    errors = []
    if not fam.models:
        errors.append('A tree family needs at least one model.')
    names = [model.name for model in fam.models]
    if len(set(names)) != len(names):
        errors.append('Model names must be unique.')
    for model in fam.models:
        for node in fam.nodes.values():
            if node.is_leaf:
                continue
            probs = model.transitions.get(node.id)
            if probs is None:
                errors.append(
                    f'Model "{model.name}" has no transition at {node.id}.'
                )
                continue
            if len(probs) != len(node.children):
                errors.append(
                    f'Model "{model.name}" at {node.id}: expected '
                    f'{len(node.children)} probabilities, got {len(probs)}.'
                )
            elif min(probs) < 0 or not math.isclose(
                sum(probs), 1.0, rel_tol=0.0, abs_tol=PROBABILITY_TOLERANCE
            ):
                errors.append(
                    f'Model "{model.name}" at {node.id}: probabilities '
                    f'must be nonnegative and sum to 1, got {list(probs)}.'
                )
        extra = set(model.transitions) - set(fam.nodes)
        if extra:
            errors.append(
                f'Model "{model.name}" references unknown nodes '
                f'{sorted(extra)}.'
            )
    return errors


def _reachability_errors(fam: TreeFamily) -> List[str]:
    return [
        f'Node "{node_id}" is reachable but ends before the horizon.'
        for node_id in sorted(fam.quasi_sure)
        if fam.nodes[node_id].is_leaf
        and fam.nodes[node_id].time < fam.horizon
    ]


def reach_probability(fam: TreeFamily, model: ModelLaw) -> Dict[str, float]:
    reach = {fam.root: 1.0}
    for node_id in fam.breadth_first:
        node = fam.nodes[node_id]
        if node.is_leaf:
            continue
        for child, p in zip(node.children, model.transitions[node_id]):
            reach[child] = reach[node_id] * p
    return reach


def quasi_sure_nodes(fam: TreeFamily) -> Tuple[str, ...]:
    return tuple(v for v in fam.breadth_first if v in fam.quasi_sure)


def cylinder_probabilities(
    fam: TreeFamily, model: ModelLaw, t: int
) -> Dict[str, float]:
    reach = fam.reach[model.name]
    return {node_id: reach[node_id] for node_id in fam.levels[t]}


def supports(fam: TreeFamily, node_id: str) -> Tuple[str, ...]:
    """Children charged by at least one model that reaches the node."""
    node = fam.nodes[node_id]
    charged: Set[str] = set()
    for model in fam.models:
        if fam.reach[model.name][node_id] > 0:
            charged.update(model.charged(fam, node_id))
    return tuple(c for c in node.children if c in charged)


def conditional_expectation(
    fam: TreeFamily, model: ModelLaw, g: Mapping[str, float], t: int
) -> Dict[str, float]:
    values = {node_id: float(g[node_id]) for node_id in fam.terminal_nodes()}
    for level in reversed(fam.levels[t : fam.horizon]):
        for node_id in level:
            node = fam.nodes[node_id]
            values[node_id] = float(
                sum(
                    p * values[c]
                    for c, p in zip(node.children, model.transitions[node_id])
                )
            )
    return {node_id: values[node_id] for node_id in fam.levels[t]}


def expectation(
    fam: TreeFamily, model: ModelLaw, g: Mapping[str, float]
) -> float:
    return conditional_expectation(fam, model, g, 0)[fam.root]


def condition(fam: TreeFamily, node_id: str) -> TreeFamily:
    if node_id not in fam.nodes:
        raise ConditioningError(f"Unknown node: {node_id}")
    anchor = fam.nodes[node_id]
    members = fam.subtree(node_id)
    models = tuple(
        ModelLaw(
            name=model.name,
            transitions={
                v: model.transitions[v]
                for v in members
                if not fam.nodes[v].is_leaf
            },
        )
        for model in fam.models
        if fam.reach[model.name][node_id] > 0
    )
    if not models:
        raise ConditioningError(
            f"Node {node_id} has zero mass under every model."
        )
    nodes = {
        v: Node(
            id=v,
            time=fam.nodes[v].time - anchor.time,
            value=fam.nodes[v].value,
            parent=None if v == node_id else fam.nodes[v].parent,
            children=fam.nodes[v].children,
        )
        for v in members
    }
    return TreeFamily(
        nodes=nodes, root=node_id, models=models, origin=anchor.value
    )


def paste(
    fam: TreeFamily,
    base: ModelLaw,
    s: int,
    kernel: Mapping[str, ModelLaw],
) -> ModelLaw:
    if not 0 <= s <= fam.horizon:
        raise PastingError(f"Time {s} is outside the tree horizon.")
    reach = reach_probability(fam, base)
    level = set(fam.levels[s])
    missing = [v for v in fam.levels[s] if reach[v] > 0 and v not in kernel]
    if missing:
        raise PastingError(f"The kernel does not cover nodes {missing}.")
    transitions = dict(base.transitions)
    for node_id, law in kernel.items():
        if node_id not in level:
            raise PastingError(
                f"Kernel entry {node_id} is not a time-{s} node."
            )
        subtree = set(fam.subtree(node_id))
        foreign = set(law.transitions) - subtree
        if foreign:
            raise PastingError(
                f"Kernel law at {node_id} references foreign nodes "
                f"{sorted(foreign)}."
            )
        for v in subtree:
            if fam.nodes[v].is_leaf:
                continue
            probs = law.transitions.get(v)
            if probs is None or len(probs) != len(fam.nodes[v].children):
                raise PastingError(
                    f"Kernel law at {node_id} has no usable transition "
                    f"at {v}."
                )
            transitions[v] = tuple(probs)
    return ModelLaw(name=f'{base.name}@{s}', transitions=transitions)


def _node_id(parent: str, index: int) -> str:
    return f'{parent}.{index}'


def lattice_family(
    s0: float,
    factors: Sequence[float],
    periods: int,
    models: Mapping[str, Sequence[float]],
) -> TreeFamily:
    """Non-recombining multiplicative lattice with time-homogeneous laws."""
    if periods < 1:
        raise TreeFamilyError('A lattice needs at least one period.')
    nodes: Dict[str, Node] = {}
    frontier = [('n', None, (float(s0),))]
    for t in range(periods + 1):
        next_frontier = []
        for node_id, parent, value in frontier:
            children: Tuple[str, ...] = ()
            if t < periods:
                children = tuple(
                    _node_id(node_id, i) for i in range(len(factors))
                )
                next_frontier.extend(
                    (child, node_id, (value[0] * factor,))
                    for child, factor in zip(children, factors)
                )
            nodes[node_id] = Node(node_id, t, value, parent, children)
        frontier = next_frontier
    laws = tuple(
        ModelLaw(
            name=name,
            transitions={
                node.id: tuple(float(p) for p in probs)
                for node in nodes.values()
                if not node.is_leaf
            },
        )
        for name, probs in models.items()
    )
    return TreeFamily(nodes=nodes, root='n', models=laws)


def volatility_lattice_family(
    s0: float,
    sigma_lo: float,
    sigma_hi: float,
    dt: float,
    periods: int,
) -> TreeFamily:
    """Trinomial lattice whose factors span the volatility interval.

    One model per end of the interval; both charge the outer branches, so
    every node keeps a strictly positive martingale measure.
    """
    if not 0 < sigma_lo <= sigma_hi:
        raise TreeFamilyError('Need 0 < sigma_lo <= sigma_hi.')
    up = math.exp(sigma_hi * math.sqrt(dt))
    down = 1.0 / up
    models = {}
    for name, sigma in (('sigma_lo', sigma_lo), ('sigma_hi', sigma_hi)):
        weight = (sigma / sigma_hi) ** 2
        p_up = weight * (1 - down) / (up - down)
        p_down = weight * (up - 1) / (up - down)
        models[name] = (p_up, 1.0 - p_up - p_down, p_down)
    return lattice_family(s0, (up, 1.0, down), periods, models)


def random_tree_family(
    rng: np.random.Generator,
    periods: int = 2,
    max_children: int = 3,
    n_models: int = 2,
    dim: int = 1,
    s0: float = 100.0,
    centered: bool = True,
    sparse: bool = True,
    vol: float = 0.2,
) -> TreeFamily:
    """Random family for property checks.

    ``centered`` places every parent at the barycenter of its children so
    that a full-support model is free of arbitrage; ``sparse`` lets models
    put zero mass on some children.
    """
    nodes: Dict[str, Node] = {}
    frontier = [('n', None, np.full(dim, float(s0)))]
    transitions: List[Dict[str, Tuple[float, ...]]] = [
        {} for _ in range(n_models)
    ]
    for t in range(periods + 1):
        next_frontier = []
        for node_id, parent, value in frontier:
            children: Tuple[str, ...] = ()
            if t < periods:
                k = int(rng.integers(1, max_children + 1))
                noise = vol * value * rng.standard_normal((k, dim))
                if centered:
                    noise -= noise.mean(axis=0)
                children = tuple(_node_id(node_id, i) for i in range(k))
                next_frontier.extend(
                    (child, node_id, value + shift)
                    for child, shift in zip(children, noise)
                )
                for table in transitions:
                    table[node_id] = _random_probabilities(rng, k, sparse)
            nodes[node_id] = Node(
                node_id, t, tuple(float(x) for x in value), parent, children
            )
        frontier = next_frontier
    models = tuple(
        ModelLaw(name=f'model{i}', transitions=table)
        for i, table in enumerate(transitions)
    )
    return TreeFamily(nodes=nodes, root='n', models=models)


def _random_probabilities(
    rng: np.random.Generator, k: int, sparse: bool
) -> Tuple[float, ...]:
    probs = rng.dirichlet(np.ones(k))
    if sparse and k > 1:
        mask = rng.random(k) < 0.3
        if mask.all():
            mask[int(rng.integers(k))] = False
        probs = np.where(mask, 0.0, probs)
    probs = probs / probs.sum()
    return tuple(float(p) for p in probs)


def build_tree_family(document: Mapping[str, Any]) -> TreeFamily:
    check_schema_version(document)
    generator = document.get('generator')
    if generator is not None:
        return _build_from_generator(generator)
    errors: List[str] = []
    raw_nodes = document.get('nodes', [])
    values: Dict[str, Vector] = {}
    times: Dict[str, int] = {}
    for raw in raw_nodes:
        node_id = str(raw['id'])
        if node_id in values:
            errors.append(f'Duplicate node id "{node_id}".')
        s = raw['S']
        values[node_id] = tuple(
            float(x) for x in (s if isinstance(s, list) else [s])
        )
        times[node_id] = int(raw['time'])
    if document.get('nonnegative', False):
        errors.extend(
            f'Node "{node_id}" has a negative value.'
            for node_id, value in values.items()
            if min(value) < 0
        )
    parents: Dict[str, str] = {}
    children: Dict[str, List[str]] = {node_id: [] for node_id in values}
    for parent, child in document.get('edges', []):
        if parent not in values or child not in values:
            errors.append(f'Edge {parent} -> {child} is dangling.')
            continue
        if child in parents:
            errors.append(f'Node "{child}" has more than one parent.')
        parents[child] = parent
        children[parent].append(child)
    roots = [node_id for node_id in values if node_id not in parents]
    if len(roots) != 1:
        errors.append(f'Expected exactly one root, found {sorted(roots)}.')
    models = []
    for raw in document.get('models', []):
        table = {}
        for parent, probs in raw.get('probabilities', {}).items():
            if parent not in children:
                errors.append(
                    f'Model "{raw.get("name")}" references unknown node '
                    f'"{parent}".'
                )
                continue
            unknown = set(probs) - set(children[parent])
            if unknown:
                errors.append(
                    f'Model "{raw.get("name")}" at {parent}: unknown '
                    f'children {sorted(unknown)}.'
                )
            table[parent] = tuple(
                float(probs.get(c, 0.0)) for c in children[parent]
            )
        models.append(ModelLaw(name=str(raw['name']), transitions=table))
    if errors:
        raise TreeFamilyError('\n'.join(errors))
    nodes = {
        node_id: Node(
            id=node_id,
            time=times[node_id],
            value=values[node_id],
            parent=parents.get(node_id),
            children=tuple(children[node_id]),
        )
        for node_id in values
    }
    origin = document.get('origin')
    return TreeFamily(
        nodes=nodes,
        root=roots[0],
        models=tuple(models),
        origin=None if origin is None else tuple(float(x) for x in origin),
    )


def _build_from_generator(block: Mapping[str, Any]) -> TreeFamily:
    kind = block.get('type')
    if kind == 'lattice':
        models = block['models']
        if isinstance(models, list):
            models = {f'model{i}': probs for i, probs in enumerate(models)}
        return lattice_family(
            s0=float(block['s0']),
            factors=[float(f) for f in block['factors']],
            periods=int(block['periods']),
            models=models,
        )
    if kind == 'volatility-lattice':
        sigma_lo, sigma_hi = block['sigma']
        return volatility_lattice_family(
            s0=float(block['s0']),
            sigma_lo=float(sigma_lo),
            sigma_hi=float(sigma_hi),
            dt=float(block['dt']),
            periods=int(block['periods']),
        )
    raise TreeFamilyError(f'Unknown generator type: {kind}')


@dataclass(frozen=True)
class VolatilityBox:
    # Per-component bounds on the diagonal of sigma sigma^T.
    lower: Vector
    upper: Vector

    @property
    def sigma_bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.sqrt(self.lower), np.sqrt(self.upper)

    def errors(self) -> List[str]:
        errors = []
        if len(self.lower) != len(self.upper):
            errors.append('Volatility bounds differ in dimension.')
        if any(lo <= 0 for lo in self.lower):
            errors.append('Lower volatility bounds must be > 0.')
        if any(hi < lo for lo, hi in zip(self.lower, self.upper)):
            errors.append('Upper volatility bounds must be >= lower ones.')
        return errors

    def contains(self, vol: np.ndarray, tol: float = 1e-10) -> bool:
        cov = np.einsum('nij,nkj->nik', vol, vol)
        diag = np.diagonal(cov, axis1=1, axis2=2)
        off = cov - np.einsum('ni,ij->nij', diag, np.eye(cov.shape[1]))
        return bool(
            np.all(diag >= np.asarray(self.lower) - tol)
            and np.all(diag <= np.asarray(self.upper) + tol)
            and np.all(np.abs(off) <= tol)
        )

    def to_dict(self) -> Dict[str, Any]:
        return {'lower': list(self.lower), 'upper': list(self.upper)}


@dataclass(frozen=True)
class VolatilityMatrices:
    matrices: Tuple[Tuple[Vector, ...], ...]

    def errors(self) -> List[str]:
        errors = []
        for i, m in enumerate(self.matrices):
            matrix = np.asarray(m, dtype=float)
            if not np.allclose(matrix, matrix.T):
                errors.append(f'Volatility matrix {i} is not symmetric.')
            elif np.linalg.eigvalsh(matrix).min() <= 0:
                errors.append(f'Volatility matrix {i} is not positive.')
        if not self.matrices:
            errors.append('The volatility set is empty.')
        return errors

    @property
    def sigma_bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        diag = np.array([np.diag(np.asarray(m)) for m in self.matrices])
        return np.sqrt(diag.min(axis=0)), np.sqrt(diag.max(axis=0))

    def contains(self, vol: np.ndarray, tol: float = 1e-10) -> bool:
        cov = np.einsum('nij,nkj->nik', vol, vol)
        allowed = np.asarray(self.matrices, dtype=float)
        gaps = np.abs(cov[:, None] - allowed[None]).max(axis=(2, 3))
        return bool(np.all(gaps.min(axis=1) <= tol))

    def to_dict(self) -> Dict[str, Any]:
        return {'matrices': [[list(r) for r in m] for m in self.matrices]}


VolatilitySet = Union[VolatilityBox, VolatilityMatrices]


@dataclass(frozen=True)
class UncertaintySpec:
    drift_lower: Vector
    drift_upper: Vector
    volatility: VolatilitySet
    horizon: float
    steps: int
    s0: Vector
    relative: bool = False

    def __post_init__(self) -> None:
        errors = self.volatility.errors()
        d = len(self.s0)
        if len(self.drift_lower) != d or len(self.drift_upper) != d:
            errors.append('Drift bounds must match the dimension of s0.')
        if not all(
            math.isfinite(lo) and math.isfinite(hi) and lo <= hi
            for lo, hi in zip(self.drift_lower, self.drift_upper)
        ):
            errors.append('The drift set must be a bounded, nonempty box.')
        if self.horizon <= 0:
            errors.append('The horizon must be > 0.')
        if self.steps < 1:
            errors.append('At least one time step is needed.')
        if errors:
            raise UncertaintySpecError('\n'.join(errors))

    @property
    def dim(self) -> int:
        return len(self.s0)

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.steps + 1)

    def contains_drift(self, drift: np.ndarray, tol: float = 1e-12) -> bool:
        return bool(
            np.all(drift >= np.asarray(self.drift_lower) - tol)
            and np.all(drift <= np.asarray(self.drift_upper) + tol)
        )

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'UncertaintySpec':
        check_schema_version(data)
        s0 = data['s0']
        s0 = tuple(float(x) for x in (s0 if isinstance(s0, list) else [s0]))
        d = len(s0)
        drift = data.get('drift', {'lower': [0.0] * d, 'upper': [0.0] * d})
        raw_vol = data['volatility']
        volatility: VolatilitySet
        if 'matrices' in raw_vol:
            volatility = VolatilityMatrices(
                tuple(
                    tuple(tuple(float(x) for x in row) for row in m)
                    for m in raw_vol['matrices']
                )
            )
        else:
            volatility = VolatilityBox(
                lower=tuple(float(x) for x in raw_vol['lower']),
                upper=tuple(float(x) for x in raw_vol['upper']),
            )
        return cls(
            drift_lower=tuple(float(x) for x in drift['lower']),
            drift_upper=tuple(float(x) for x in drift['upper']),
            volatility=volatility,
            horizon=float(data['horizon']),
            steps=int(data['steps']),
            s0=s0,
            relative=bool(data.get('relative', False)),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            'schema-version': SCHEMA_VERSION,
            'drift': {
                'lower': list(self.drift_lower),
                'upper': list(self.drift_upper),
            },
            'volatility': self.volatility.to_dict(),
            'horizon': self.horizon,
            'steps': self.steps,
            's0': list(self.s0),
            'relative': self.relative,
        }


@dataclass
class HistoryDigest:
    running_min: np.ndarray
    running_max: np.ndarray

    def update(self, x: np.ndarray) -> None:
        np.minimum(self.running_min, x, out=self.running_min)
        np.maximum(self.running_max, x, out=self.running_max)


class ControlPolicy(Protocol):
    def control(
        self,
        t: float,
        x: np.ndarray,
        history: HistoryDigest,
        draws: np.ndarray,
    ) -> Tuple[np.ndarray, np.ndarray]: ...


def _default_drift(spec: UncertaintySpec) -> np.ndarray:
    return np.clip(0.0, spec.drift_lower, spec.drift_upper)


@dataclass
class ConstantPolicy:
    drift: np.ndarray
    vol: np.ndarray

    def control(
        self,
        t: float,
        x: np.ndarray,
        history: HistoryDigest,
        draws: np.ndarray,
    ) -> Tuple[np.ndarray, np.ndarray]:
        n = x.shape[0]
        drift = np.broadcast_to(self.drift, x.shape)
        vol = np.broadcast_to(self.vol, (n,) + self.vol.shape)
        return drift, vol


@dataclass
class UniformVolatilityPolicy:
    """Draws each component's volatility uniformly between its bounds at
    every step, independently across paths."""

    spec: UncertaintySpec
    drift: Optional[np.ndarray] = None

    def control(
        self,
        t: float,
        x: np.ndarray,
        history: HistoryDigest,
        draws: np.ndarray,
    ) -> Tuple[np.ndarray, np.ndarray]:
        lo, hi = self.spec.volatility.sigma_bounds
        sigma = lo + draws * (hi - lo)
        drift = _default_drift(self.spec) if self.drift is None else self.drift
        return (
            np.broadcast_to(drift, x.shape),
            np.einsum('ni,ij->nij', sigma, np.eye(x.shape[1])),
        )


@dataclass
class BangBangVolatilityPolicy:
    spec: UncertaintySpec
    # Returns a boolean mask of paths that get the upper volatility.
    selector: Callable[[float, np.ndarray], np.ndarray]

    def control(
        self,
        t: float,
        x: np.ndarray,
        history: HistoryDigest,
        draws: np.ndarray,
    ) -> Tuple[np.ndarray, np.ndarray]:
        lo, hi = self.spec.volatility.sigma_bounds
        high = np.asarray(self.selector(t, x), dtype=bool).reshape(-1, 1)
        sigma = np.where(high, hi, lo)
        return (
            np.broadcast_to(_default_drift(self.spec), x.shape),
            np.einsum('ni,ij->nij', sigma, np.eye(x.shape[1])),
        )


@dataclass
class _Draws:
    normals: np.ndarray
    uniforms: np.ndarray


def _path_draws(spec: UncertaintySpec, n: int, seed: int) -> _Draws:
    # One independent stream per path index.
    streams = [
        np.random.default_rng(s)
        for s in np.random.SeedSequence(seed).spawn(n)
    ]
    shape = (spec.steps, spec.dim)
    normals = []
    uniforms = []
    for rng in streams:
        normals.append(rng.standard_normal(shape))
        uniforms.append(rng.random(shape))
    return _Draws(np.stack(normals), np.stack(uniforms))


def simulate_array(
    spec: UncertaintySpec, policy: ControlPolicy, n: int, seed: int
) -> np.ndarray:
    """Euler-Maruyama trajectories, shape ``(n, steps + 1, d)``."""
    if n < 1:
        raise UncertaintySpecError('At least one path is needed.')
    draws = _path_draws(spec, n, seed)
    dt = spec.dt
    out = np.empty((n, spec.steps + 1, spec.dim))
    x = np.tile(np.asarray(spec.s0, dtype=float), (n, 1))
    out[:, 0] = x
    history = HistoryDigest(x.copy(), x.copy())
    for k in range(spec.steps):
        t = k * dt
        drift, vol = policy.control(t, x, history, draws.uniforms[:, k])
        if not spec.contains_drift(drift):
            raise PolicyError(f'Drift leaves the drift set at t={t}.')
        if not spec.volatility.contains(vol):
            raise PolicyError(
                f'Volatility leaves the volatility set at t={t}.'
            )
        shock = np.einsum('nij,nj->ni', vol, draws.normals[:, k])
        increment = drift * dt + math.sqrt(dt) * shock
        x = x + x * increment if spec.relative else x + increment
        history.update(x)
        out[:, k + 1] = x
    return out


def simulate_paths(
    spec: UncertaintySpec, policy: ControlPolicy, n: int, seed: int
) -> List[Path]:
    trajectories = simulate_array(spec, policy, n, seed)
    grid = tuple(float(t) for t in spec.grid)
    return [
        Path(grid=grid, values=tuple(tuple(map(float, row)) for row in path))
        for path in trajectories
    ]


def enumerate_paths(fam: TreeFamily) -> List[Tuple[str, ...]]:
    """Root-to-horizon node sequences inside the quasi-sure support."""
    paths: List[Tuple[str, ...]] = []
    stack: List[Tuple[str, ...]] = [(fam.root,)]
    while stack:
        current = stack.pop()
        children = supports(fam, current[-1])
        if not children:
            paths.append(current)
            continue
        stack.extend(current + (c,) for c in reversed(children))
    return paths
