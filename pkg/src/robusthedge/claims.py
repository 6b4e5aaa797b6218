import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Mapping

import numpy as np

from robusthedge.constants import SCHEMA_VERSION
from robusthedge.documents import check_schema_version
from robusthedge.errors import ClaimError
from robusthedge.models import Node

logger = logging.getLogger(__name__)

# Required parameters per payoff kind.
CLAIM_KINDS: Dict[str, List[str]] = {
    'constant': ['value'],
    'call': ['strike'],
    'put': ['strike'],
    'digital': ['strike'],
    'basket-call': ['strike', 'weights'],
    'node-values': ['values'],
}


@dataclass(frozen=True)
class Claim:
    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        errors = _claim_errors(self.kind, self.params)
        if errors:
            raise ClaimError('\n'.join(errors))

    @classmethod
    def from_string(cls, text: str) -> 'Claim':
        """Parse the short ``kind:strike`` form, e.g. ``call:100``."""
        kind, _, argument = text.partition(':')
        if kind == 'constant':
            return cls(kind, {'value': _parse_float(argument, text)})
        if kind in ('call', 'put', 'digital'):
            return cls(kind, {'strike': _parse_float(argument, text)})
        raise ClaimError(f"Cannot parse payoff '{text}'.")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'Claim':
        check_schema_version(data)
        if 'kind' not in data:
            raise ClaimError('A claim needs a "kind".')
        params = {k: v for k, v in data.items() if k not in _RESERVED}
        return cls(kind=data['kind'], params=params)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'schema-version': SCHEMA_VERSION,
            'kind': self.kind,
            **self.params,
        }

    def payoff(self, values: np.ndarray) -> np.ndarray:
        """Vectorized payoff of terminal states, shape ``(n,)``."""
        if self.kind == 'node-values':
            raise ClaimError('A node-values claim has no state payoff.')
        states = np.asarray(values, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        return _PAYOFFS[self.kind](self.params, states)

    def node_payoff(self, node: Node) -> float:
        if self.kind == 'node-values':
            try:
                result = float(self.params['values'][node.id])
            except KeyError:
                raise ClaimError(f"No payoff given for node {node.id}.")
        else:
            result = float(self.payoff(np.asarray([node.value]))[0])
        if not math.isfinite(result) or result < 0:
            raise ClaimError(
                f"Payoff at node {node.id} must be finite and >= 0, "
                f"got {result}."
            )
        return result


_RESERVED = ('kind', 'schema-version')


def _parse_float(argument: str, text: str) -> float:
    try:
        return float(argument)
    except ValueError:
        raise ClaimError(f"Cannot parse payoff '{text}'.")


def _claim_errors(kind: str, params: Mapping[str, Any]) -> List[str]:
    if kind not in CLAIM_KINDS:
        return [
            f'Unknown claim kind "{kind}", expected one of '
            f'{", ".join(CLAIM_KINDS)}.'
        ]
    errors = [
        f'Claim kind "{kind}" requires parameter "{name}".'
        for name in CLAIM_KINDS[kind]
        if name not in params
    ]
    if errors:
        return errors
    if kind == 'constant' and not float(params['value']) >= 0:
        errors.append('A constant claim must be >= 0.')
    if kind == 'digital' and not float(params.get('payout', 1.0)) >= 0:
        errors.append('A digital payout must be >= 0.')
    if kind == 'node-values':
        errors.extend(
            f'Payoff at node {node_id} must be >= 0, got {value}.'
            for node_id, value in params['values'].items()
            if not float(value) >= 0
        )
    return errors


def _asset(params: Mapping[str, Any], states: np.ndarray) -> np.ndarray:
    return states[:, int(params.get('asset', 0))]


def _constant(params: Mapping[str, Any], states: np.ndarray) -> np.ndarray:
    return np.full(states.shape[0], float(params['value']))


def _call(params: Mapping[str, Any], states: np.ndarray) -> np.ndarray:
    return np.maximum(_asset(params, states) - float(params['strike']), 0.0)


def _put(params: Mapping[str, Any], states: np.ndarray) -> np.ndarray:
    return np.maximum(float(params['strike']) - _asset(params, states), 0.0)


def _digital(params: Mapping[str, Any], states: np.ndarray) -> np.ndarray:
    hit = _asset(params, states) >= float(params['strike'])
    return np.where(hit, float(params.get('payout', 1.0)), 0.0)


def _basket_call(
    params: Mapping[str, Any], states: np.ndarray
) -> np.ndarray:
    weights = np.asarray(params['weights'], dtype=float)
    if weights.shape != (states.shape[1],):
        raise ClaimError(
            f"Basket weights have shape {weights.shape}, states have "
            f"{states.shape[1]} components."
        )
    return np.maximum(states @ weights - float(params['strike']), 0.0)


_PAYOFFS: Dict[
    str, Callable[[Mapping[str, Any], np.ndarray], np.ndarray]
] = {
    'constant': _constant,
    'call': _call,
    'put': _put,
    'digital': _digital,
    'basket-call': _basket_call,
}
