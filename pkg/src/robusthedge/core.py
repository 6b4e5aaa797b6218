import logging
import math
import time
from dataclasses import dataclass, field
from typing import IO, Any, Callable, Dict, List, Optional

import jinja2
import numpy as np
import pandas as pd

from robusthedge import bsb, deflator, na1, superhedge
from robusthedge.claims import Claim
from robusthedge.config import RunConfig
from robusthedge.constants import (
    DEFAULT_BESSEL_SAMPLES,
    DEFAULT_BSB_GRID,
    DEFAULT_SAMPLES,
    DEFAULT_SUMMARY_TEMPLATE,
    EXIT_NA1_FAILURE,
    EXIT_OK,
)
from robusthedge.documents import dump_document, load_document
from robusthedge.errors import ValidationError
from robusthedge.models import (
    TreeFamily,
    UncertaintySpec,
    UniformVolatilityPolicy,
    build_tree_family,
)

logger = logging.getLogger(__name__)

# Paths and levels of the announcement check run by follmer-demo.
ANNOUNCEMENT_PATHS = 200
ANNOUNCEMENT_STEPS = 1000
ANNOUNCEMENT_LEVELS = (0.5, 0.25, 0.125)


@dataclass
class RunReport:
    command: str
    config: Dict[str, Any]
    results: Dict[str, Any] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)
    exit_code: int = EXIT_OK
    duration: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        # The wall clock stays out so artifacts are reproducible.
        return {
            'command': self.command,
            'config': self.config,
            'results': self.results,
            'warnings': self.warnings,
            'exit_code': self.exit_code,
        }


def load_tree_family(filename: str) -> TreeFamily:
    return build_tree_family(load_document(filename))


def load_claim(filename: str) -> Claim:
    return Claim.from_dict(load_document(filename))


def load_uncertainty_spec(filename: str) -> UncertaintySpec:
    return UncertaintySpec.from_dict(load_document(filename))


def resolve_claim(config: RunConfig) -> Claim:
    if config.claim is not None:
        return load_claim(config.claim)
    if config.payoff is not None:
        return Claim.from_string(config.payoff)
    raise ValidationError(['No claim or payoff given.'], 'configuration')


def resolve_grid(config: RunConfig) -> bsb.BsbGrid:
    if config.grid is None:
        return bsb.BsbGrid(*DEFAULT_BSB_GRID)
    return bsb.BsbGrid.from_string(config.grid)


def _write_text(filename: str, contents: str) -> None:
    with open(filename, 'w') as f:
        f.write(contents)


def write_frame(filename: str, frame: pd.DataFrame) -> None:
    frame.to_csv(filename, index=False, lineterminator='\n')


def value_frame(
    fam: TreeFamily,
    value: superhedge.ValueProcess,
    strategy: superhedge.HedgeStrategy,
) -> pd.DataFrame:
    rows = []
    for node_id in fam.breadth_first:
        if node_id not in value.values:
            continue
        node = fam.nodes[node_id]
        row: Dict[str, Any] = {'node': node_id, 'time': node.time}
        for i, s in enumerate(node.value):
            row[f'S_{i + 1}'] = s
        row['Z'] = value.values[node_id]
        hedge = strategy.hedge_at(node_id, fam.dim)
        for i, h in enumerate(hedge):
            row[f'H_{i + 1}'] = h
        rows.append(row)
    return pd.DataFrame(rows)


def strategy_from_frame(frame: pd.DataFrame) -> superhedge.HedgeStrategy:
    columns = sorted(
        (c for c in frame.columns if c.startswith('H_')),
        key=lambda c: int(c[2:]),
    )
    hedges = {
        str(row['node']): tuple(float(row[c]) for c in columns)
        for _, row in frame.iterrows()
    }
    return superhedge.HedgeStrategy(hedges=hedges)


def run_na1(config: RunConfig, report: RunReport) -> None:
    assert config.model is not None
    fam = load_tree_family(config.model)
    result = na1.na1_check(fam)
    report.results['holds'] = result.holds
    report.results['nodes_checked'] = len(result.records)
    if result.certificate is not None:
        report.results['failing_node'] = result.certificate.node
        report.exit_code = EXIT_NA1_FAILURE
    if config.out is not None:
        _write_text(config.out, dump_document(result.to_dict()))


def run_price_tree(config: RunConfig, report: RunReport) -> None:
    assert config.model is not None
    fam = load_tree_family(config.model)
    claim = resolve_claim(config)
    value = superhedge.sublinear_price_tree(fam, claim)
    strategy = superhedge.extract_strategy_envelope(fam, value)
    report.warnings.extend(value.warnings)
    report.results['root_price'] = value.root_value
    report.results['root_hedge'] = list(strategy.hedges.get(fam.root, ()))
    report.results['nodes'] = len(value.values)
    if config.out is not None:
        write_frame(config.out, value_frame(fam, value, strategy))


def run_price_bsb(config: RunConfig, report: RunReport) -> None:
    assert config.spec is not None
    spec = load_uncertainty_spec(config.spec)
    claim = resolve_claim(config)
    grid = resolve_grid(config)
    surface = bsb.bsb_solve(
        spec, claim, grid, stepper=bsb.Stepper(config.stepper)
    )
    s0 = spec.s0[0]
    report.results['price'] = surface.price_at(0.0, s0)
    report.results['delta'] = float(surface.delta_at(0.0, np.array([s0]))[0])
    report.results['grid'] = [grid.n_t, grid.n_s, grid.s_max]
    if config.out is not None:
        write_frame(config.out, surface.to_frame())


def run_duality(config: RunConfig, report: RunReport) -> None:
    assert config.model is not None
    fam = load_tree_family(config.model)
    claim = resolve_claim(config)
    value = superhedge.sublinear_price_tree(fam, claim)
    dual = superhedge.dual_enumerate(fam, claim, config.grid_step)
    terminal = [
        claim.node_payoff(fam.nodes[v])
        for v in fam.terminal_nodes()
        if v in fam.quasi_sure
    ]
    allowed = config.grid_step * max(terminal, default=0.0)
    gap = value.root_value - dual
    report.warnings.extend(value.warnings)
    report.results.update(
        {
            'primal': value.root_value,
            'dual': dual,
            'gap': gap,
            'gap_within_tolerance': bool(
                -config.tolerance <= gap <= allowed + config.tolerance
            ),
        }
    )
    if config.out is not None:
        _write_text(config.out, dump_document(report.results))


def _verify_tree(config: RunConfig, report: RunReport) -> None:
    assert config.model is not None and config.prices is not None
    fam = load_tree_family(config.model)
    claim = resolve_claim(config)
    frame = pd.read_csv(config.prices, dtype={'node': str})
    strategy = strategy_from_frame(frame)
    capital = float(frame.loc[frame['node'] == fam.root, 'Z'].iloc[0])
    result = superhedge.verify_superhedge(
        fam, capital, strategy, claim, tolerance=config.tolerance
    )
    report.results.update(result.to_dict())
    report.results['capital'] = capital


def _verify_surface(config: RunConfig, report: RunReport) -> None:
    assert config.spec is not None and config.surface is not None
    spec = load_uncertainty_spec(config.spec)
    claim = resolve_claim(config)
    surface = bsb.BsbSurface.from_frame(pd.read_csv(config.surface))
    coarse = bsb.BsbGrid(
        max((len(surface.times) - 1) // 2, 1),
        max((len(surface.spots) - 1) // 2, 3),
        float(surface.spots[-1]),
    )
    s0 = spec.s0[0]
    grid_error = abs(
        surface.price_at(0.0, s0)
        - bsb.bsb_solve(spec, claim, coarse).price_at(0.0, s0)
    )
    eps = max(config.tolerance, 3.0 * grid_error)
    result = bsb.verify_bsb_hedge(
        spec,
        surface,
        claim,
        UniformVolatilityPolicy(spec),
        n=config.samples or DEFAULT_SAMPLES,
        seed=config.seed,
        eps=eps,
    )
    report.results.update(result.to_dict())
    report.results['eps'] = eps


def run_verify_hedge(config: RunConfig, report: RunReport) -> None:
    if config.prices is not None:
        _verify_tree(config, report)
    else:
        _verify_surface(config, report)
    if report.results['violations']:
        report.warnings.append(
            f"{report.results['violations']} hedge violations found."
        )
    if config.out is not None:
        _write_text(config.out, dump_document(report.results))


def run_follmer_demo(config: RunConfig, report: RunReport) -> None:
    result = deflator.inverse_bessel_demo(
        config.horizon,
        config.samples or DEFAULT_BESSEL_SAMPLES,
        config.seed,
        workers=config.workers,
    )
    report.results.update(result.to_dict())
    paths = deflator.simulate_absorbed_paths(
        config.horizon, ANNOUNCEMENT_STEPS, ANNOUNCEMENT_PATHS, config.seed
    )
    resolution = 5.0 * math.sqrt(config.horizon / ANNOUNCEMENT_STEPS)
    announcement = deflator.announce_lifetime(
        paths, ANNOUNCEMENT_LEVELS, resolution=resolution
    )
    report.results['announcement_violations'] = announcement.violations
    if abs(result.z_score) > 3:
        report.warnings.append(
            f'The estimate is {result.z_score:.2f} standard errors away '
            f'from the closed form.'
        )
    if config.out is not None:
        write_frame(config.out, result.to_frame())


RUNNERS: Dict[str, Callable[[RunConfig, RunReport], None]] = {
    'na1': run_na1,
    'price-tree': run_price_tree,
    'price-bsb': run_price_bsb,
    'duality': run_duality,
    'verify-hedge': run_verify_hedge,
    'follmer-demo': run_follmer_demo,
}


def dispatch(config: RunConfig) -> RunReport:
    report = RunReport(command=config.command, config=config.to_dict())
    start = time.perf_counter()
    RUNNERS[config.command](config, report)
    report.duration = time.perf_counter() - start
    if config.out is not None:
        _write_text(
            f'{config.out}.report.json', dump_document(report.to_dict())
        )
    return report


def render_summary(
    report: RunReport,
    out: IO[str],
    template_contents: Optional[str] = None,
) -> None:
    template = jinja2.Template(template_contents or DEFAULT_SUMMARY_TEMPLATE)
    out.write(
        template.render(report=report.to_dict(), duration=report.duration)
    )
