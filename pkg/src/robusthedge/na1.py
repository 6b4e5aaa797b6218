"""No arbitrage of the first kind on tree families.

On a finite tree every local martingale is a martingale, so the existence
of a strictly positive deflator reduces to a full-mass martingale measure
with strictly positive weights at every node a model charges.  Mass loss
is a continuous-time effect; see ``deflator.inverse_bessel_demo``.
"""
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from robusthedge import lp
from robusthedge.constants import (
    CERTIFICATE_STRICTNESS,
    FEASIBILITY_THRESHOLD,
    SUPERMARTINGALE_SLACK,
)
from robusthedge.deflator import KilledMeasure
from robusthedge.errors import TreeFamilyError
from robusthedge.models import ModelLaw, TreeFamily, supports

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FeasibilityRecord:
    model: str
    node: str
    # Aligned with the node's children, zero where the model puts no mass.
    weights: Optional[Tuple[float, ...]]
    margin: float

    @property
    def feasible(self) -> bool:
        return self.weights is not None

    def to_dict(self) -> Dict[str, Any]:
        return {
            'model': self.model,
            'node': self.node,
            'weights': None if self.weights is None else list(self.weights),
            'margin': self.margin,
        }


@dataclass(frozen=True)
class ArbitrageCertificate:
    node: str
    model: str
    hedge: Tuple[float, ...]
    children: Tuple[str, ...]
    claim: Tuple[float, ...]
    quasi_sure: bool

    def to_dict(self) -> Dict[str, Any]:
        return {
            'node': self.node,
            'model': self.model,
            'hedge': list(self.hedge),
            'initial_capital': 0.0,
            'claim': dict(zip(self.children, self.claim)),
            'quasi_sure': self.quasi_sure,
        }


@dataclass(frozen=True)
class Na1Report:
    holds: bool
    records: Tuple[FeasibilityRecord, ...]
    measures: Optional[Dict[str, KilledMeasure]] = None
    certificate: Optional[ArbitrageCertificate] = None

    def __post_init__(self) -> None:
        if (self.measures is None) == (self.certificate is None):
            raise TreeFamilyError(
                'A report carries either measures or a certificate.'
            )

    def to_dict(self) -> Dict[str, Any]:
        result: Dict[str, Any] = {
            'holds': self.holds,
            'records': [record.to_dict() for record in self.records],
        }
        if self.measures is not None:
            result['measures'] = {
                name: measure.to_dict()['weights']
                for name, measure in self.measures.items()
            }
        if self.certificate is not None:
            result['certificate'] = self.certificate.to_dict()
        return result


def node_feasibility(
    s_v: Sequence[float], children: Sequence[Sequence[float]]
) -> Optional[np.ndarray]:
    """Strictly positive martingale weights for one step, if any.

    Solves ``max t`` over ``q_c = t + s_c`` with ``s_c >= 0``, full mass
    and zero mean increment.
    """
    values = np.atleast_2d(np.asarray(children, dtype=float))
    k = values.shape[0]
    if k == 0:
        return None
    increments = values - np.asarray(s_v, dtype=float)
    # Columns: t, s_1..s_k.
    mass_row = np.concatenate([[float(k)], np.ones(k)])
    moment_rows = np.hstack(
        [increments.sum(axis=0)[:, None], increments.T]
    )
    a_eq = np.vstack([mass_row, moment_rows])
    b_eq = np.concatenate([[1.0], np.zeros(increments.shape[1])])
    cost = np.concatenate([[-1.0], np.zeros(k)])
    result = lp.solve(cost, a_eq, b_eq)
    if not result.is_optimal or result.x is None:
        return None
    t = result.x[0]
    if t <= FEASIBILITY_THRESHOLD:
        return None
    weights = t + result.x[1:]
    return np.asarray(weights / weights.sum())


def _separating_hedge(
    increments: np.ndarray, charged: Sequence[int]
) -> Tuple[np.ndarray, float]:
    """Best hedge with wealth in [0, 1] at every listed child.

    Returns the hedge and the total wealth on the ``charged`` rows.
    """
    k, d = increments.shape
    # Columns: h+ (d), h- (d), w (k), u (k).
    n = 2 * d + 2 * k
    wealth_rows = np.zeros((k, n))
    wealth_rows[:, :d] = -increments
    wealth_rows[:, d : 2 * d] = increments
    wealth_rows[:, 2 * d : 2 * d + k] = np.eye(k)
    cap_rows = np.zeros((k, n))
    cap_rows[:, 2 * d : 2 * d + k] = np.eye(k)
    cap_rows[:, 2 * d + k :] = np.eye(k)
    a_eq = np.vstack([wealth_rows, cap_rows])
    b_eq = np.concatenate([np.zeros(k), np.ones(k)])
    cost = np.zeros(n)
    cost[[2 * d + i for i in charged]] = -1.0
    result = lp.solve(cost, a_eq, b_eq)
    if not result.is_optimal or result.x is None:
        return np.zeros(d), 0.0
    hedge = result.x[:d] - result.x[d : 2 * d]
    return hedge, -result.objective


def _certificate(
    fam: TreeFamily, model: ModelLaw, node_id: str
) -> ArbitrageCertificate:
    charged = model.charged(fam, node_id)
    children = supports(fam, node_id)
    quasi_sure = True
    increments = fam.increments(node_id, children)
    hedge, gain = _separating_hedge(
        increments, [children.index(c) for c in charged]
    )
    if gain <= CERTIFICATE_STRICTNESS:
        # Only possible when another model moves the price the other way.
        logger.info(
            "No quasi-sure certificate at %s; using the support of %s.",
            node_id,
            model.name,
        )
        children = charged
        quasi_sure = False
        increments = fam.increments(node_id, children)
        hedge, _ = _separating_hedge(increments, range(len(children)))
    scale = np.abs(hedge).max()
    if scale > 0:
        hedge = hedge / scale
    wealth = increments @ hedge
    return ArbitrageCertificate(
        node=node_id,
        model=model.name,
        hedge=tuple(float(h) for h in hedge),
        children=tuple(children),
        claim=tuple(float(w) for w in wealth),
        quasi_sure=quasi_sure,
    )


def na1_check(fam: TreeFamily) -> Na1Report:
    records: List[FeasibilityRecord] = []
    measures: Dict[str, KilledMeasure] = {}
    for model in fam.models:
        reach = fam.reach[model.name]
        weights: Dict[str, Tuple[Tuple[float, ...], float]] = {}
        for node_id in fam.breadth_first:
            node = fam.nodes[node_id]
            if node.is_leaf or reach[node_id] == 0:
                continue
            charged = model.charged(fam, node_id)
            values = [fam.nodes[c].value for c in charged]
            q = node_feasibility(node.value, values)
            if q is None:
                records.append(
                    FeasibilityRecord(model.name, node_id, None, 0.0)
                )
                logger.info(
                    "NA1 fails at node %s under model %s.",
                    node_id,
                    model.name,
                )
                return Na1Report(
                    holds=False,
                    records=tuple(records),
                    certificate=_certificate(fam, model, node_id),
                )
            by_child = dict(zip(charged, q))
            full = tuple(float(by_child.get(c, 0.0)) for c in node.children)
            records.append(
                FeasibilityRecord(model.name, node_id, full, float(q.min()))
            )
            weights[node_id] = (full, 0.0)
        measures[model.name] = KilledMeasure(weights)
    return Na1Report(holds=True, records=tuple(records), measures=measures)


def certificate_validate(
    fam: TreeFamily, cert: ArbitrageCertificate
) -> bool:
    if cert.node not in fam.nodes:
        return False
    known = set(fam.nodes[cert.node].children)
    if not set(cert.children) <= known:
        return False
    if cert.quasi_sure:
        required = supports(fam, cert.node)
    else:
        try:
            required = fam.model(cert.model).charged(fam, cert.node)
        except TreeFamilyError:
            return False
    checked = tuple(dict.fromkeys(tuple(cert.children) + tuple(required)))
    hedge = np.asarray(cert.hedge, dtype=float)
    wealth = dict(zip(checked, fam.increments(cert.node, checked) @ hedge))
    if any(w < -SUPERMARTINGALE_SLACK for w in wealth.values()):
        return False
    for child, claimed in zip(cert.children, cert.claim):
        if abs(wealth[child] - claimed) > SUPERMARTINGALE_SLACK:
            return False
    charged = set(supports(fam, cert.node))
    return any(
        wealth[c] > CERTIFICATE_STRICTNESS for c in checked if c in charged
    )


def martingale_defect(fam: TreeFamily, q: KilledMeasure) -> float:
    """Largest one-step drift of ``S 1_{t < zeta}`` under ``q``.

    The cemetery sits at ``S = 0``, so its mass moves the price by
    ``-S_v``.
    """
    worst = 0.0
    for node_id in fam.breadth_first:
        node = fam.nodes[node_id]
        if node_id not in q or node.is_leaf:
            continue
        drift = q.child_weights(node_id) @ fam.increments(node_id)
        drift = drift - q.cemetery(node_id) * node.state
        worst = max(worst, float(np.abs(drift).max(initial=0.0)))
    return worst
