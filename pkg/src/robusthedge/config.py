import json
import os
from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, List, Mapping, Optional, Union

from robusthedge.constants import (
    COMMANDS,
    DEFAULT_GRID_STEP,
    DEFAULT_SEED,
    DEFAULT_TOLERANCE,
)
from robusthedge.errors import ValidationError

# Inputs each command cannot run without; a "payoff" short form stands in
# for a "claim" document.  ``verify-hedge`` takes either a tree (model,
# prices, claim) or a surface (spec, surface, claim).
REQUIRED_INPUTS: Dict[str, List[str]] = {
    'na1': ['model'],
    'price-tree': ['model', 'claim'],
    'price-bsb': ['spec', 'claim'],
    'duality': ['model', 'claim'],
    'verify-hedge': [],
    'follmer-demo': [],
}
FILE_KEYS = ('model', 'claim', 'spec', 'prices', 'surface')
MAX_SEED = 2**64


@dataclass(frozen=True)
class RunConfig:
    command: str
    model: Optional[str] = None
    claim: Optional[str] = None
    spec: Optional[str] = None
    payoff: Optional[str] = None
    grid: Optional[str] = None
    grid_step: float = DEFAULT_GRID_STEP
    samples: Optional[int] = None
    seed: int = DEFAULT_SEED
    out: Optional[str] = None
    tolerance: float = DEFAULT_TOLERANCE
    prices: Optional[str] = None
    surface: Optional[str] = None
    stepper: str = 'implicit'
    horizon: float = 1.0
    workers: int = 1

    def to_dict(self) -> Dict[str, Any]:
        return {
            key.replace('_', '-'): value
            for key, value in asdict(self).items()
            if value is not None
        }


def _key_lines(text: str) -> Dict[str, int]:
    lines: Dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if stripped.startswith('"') and '":' in stripped:
            lines.setdefault(stripped[1 : stripped.index('":')], lineno)
    return lines


def _located(message: str, key: str, lines: Mapping[str, int]) -> str:
    if key in lines:
        return f'line {lines[key]}: {message}'
    return message


def validate_config(
    raw: Union[str, Mapping[str, Any]],
    overrides: Optional[Mapping[str, Any]] = None,
) -> RunConfig:
    """Build a RunConfig, reporting every problem at once.

    ``raw`` is either JSON text (problems then carry line numbers) or an
    already parsed mapping.  ``overrides`` win over ``raw``.
    """
    lines: Dict[str, int] = {}
    if isinstance(raw, str):
        try:
            data = json.loads(raw) if raw.strip() else {}
        except json.JSONDecodeError as e:
            raise ValidationError(
                [f'line {e.lineno}: {e.msg}'], subject='configuration'
            )
        if not isinstance(data, dict):
            raise ValidationError(
                ['The configuration must be a JSON object.'],
                subject='configuration',
            )
        lines = _key_lines(raw)
    else:
        data = dict(raw)
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    known = {f.name.replace('_', '-'): f for f in fields(RunConfig)}
    errors = []
    values: Dict[str, Any] = {}
    for key, value in data.items():
        name = key.replace('_', '-')
        if name not in known:
            errors.append(_located(f'Unknown key "{key}".', key, lines))
            continue
        values[known[name].name] = value
    errors.extend(_value_errors(values, lines))
    if errors:
        raise ValidationError(errors, subject='configuration')
    return RunConfig(**values)


def _value_errors(
    values: Mapping[str, Any], lines: Mapping[str, int]
) -> List[str]:
    errors = []

    def report(key: str, message: str) -> None:
        for name in (key, key.replace('_', '-')):
            if name in lines:
                errors.append(f'line {lines[name]}: {message}')
                return
        errors.append(message)

    command = values.get('command')
    if command not in COMMANDS:
        report(
            'command',
            f'The "command" value must be one of: {", ".join(COMMANDS)}, '
            f'received: "{command}"',
        )
    for key in ('tolerance', 'grid_step', 'horizon'):
        if key in values and not _is_positive(values[key]):
            report(key, f'The "{key}" value must be a number > 0.')
    if 'grid_step' in values and _is_positive(values['grid_step']):
        if values['grid_step'] > 1:
            report('grid_step', 'The "grid-step" value must be <= 1.')
    for key in ('samples', 'workers'):
        if key in values and not (
            isinstance(values[key], int) and values[key] >= 1
        ):
            report(key, f'The "{key}" value must be an integer >= 1.')
    seed = values.get('seed', DEFAULT_SEED)
    if not (isinstance(seed, int) and 0 <= seed < MAX_SEED):
        report('seed', 'The "seed" value must be an unsigned 64-bit integer.')
    if values.get('stepper', 'implicit') not in ('implicit', 'explicit'):
        report('stepper', 'The "stepper" must be "implicit" or "explicit".')
    for key in FILE_KEYS:
        path = values.get(key)
        if path is not None and not os.path.isfile(str(path)):
            report(key, f'The {key} file does not exist: {path}')
    for key in REQUIRED_INPUTS.get(str(command), []):
        if key == 'claim' and values.get('payoff') is not None:
            continue
        if values.get(key) is None:
            report(key, f'The "{command}" command requires "{key}".')
    if command == 'verify-hedge':
        tree = values.get('model') and values.get('prices') and (
            values.get('claim') or values.get('payoff')
        )
        surface = values.get('spec') and values.get('surface')
        if not tree and not surface:
            report(
                'command',
                'The "verify-hedge" command requires either model, prices '
                'and a claim, or spec and surface.',
            )
        elif not tree and not (values.get('payoff') or values.get('claim')):
            report('payoff', 'Hedging a surface requires a payoff.')
    return errors


def _is_positive(value: Any) -> bool:
    return (
        isinstance(value, (int, float))
        and not isinstance(value, bool)
        and value > 0
    )


def load_config(
    filename: Optional[str], overrides: Mapping[str, Any]
) -> RunConfig:
    if filename is None:
        return validate_config({}, overrides)
    if not os.path.isfile(filename):
        raise ValidationError(
            [f'The config file does not exist: {filename}'],
            subject='configuration',
        )
    with open(filename) as f:
        return validate_config(f.read(), overrides)
