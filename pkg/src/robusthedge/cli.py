import argparse
import logging
import sys
from importlib import metadata
from typing import Any, Callable, Dict, Optional

from robusthedge import core
from robusthedge.config import load_config
from robusthedge.constants import (
    COMMANDS,
    EXIT_INFEASIBLE_NUMERICS,
    EXIT_INPUT_ERROR,
)
from robusthedge.errors import InfeasibleNumericsError, RobustHedgeError

SUB_CMD_FUNC = Callable[[argparse.Namespace], int]
OVERRIDE_FLAGS = (
    'model',
    'claim',
    'spec',
    'payoff',
    'grid',
    'grid_step',
    'samples',
    'seed',
    'out',
    'tolerance',
    'prices',
    'surface',
    'stepper',
    'horizon',
    'workers',
)


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    values = {key: getattr(args, key, None) for key in OVERRIDE_FLAGS}
    values['command'] = args.command
    return values


def cmd_run(args: argparse.Namespace) -> int:
    try:
        config = load_config(args.config, _overrides(args))
        report = core.dispatch(config)
    except InfeasibleNumericsError as e:
        sys.stderr.write(f"{e}\n")
        return EXIT_INFEASIBLE_NUMERICS
    except (RobustHedgeError, OSError) as e:
        sys.stderr.write(f"{e}\n")
        return EXIT_INPUT_ERROR
    core.render_summary(report, sys.stdout)
    return report.exit_code


def _add_common_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        '--config', help='A JSON file with the run configuration.'
    )
    parser.add_argument('--out', help='Where to write the primary artifact.')
    parser.add_argument('--seed', type=int, help='The RNG seed.')
    parser.add_argument(
        '--tolerance', type=float, help='Numerical tolerance for checks.'
    )
    parser.add_argument(
        '-v', '--verbose', action='store_true', help='Log debug output.'
    )


def _add_tree_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--model', help='A tree family JSON document.')
    parser.add_argument('--claim', help='A claim JSON document.')
    parser.add_argument(
        '--payoff',
        help="A short claim form such as 'call:100' instead of --claim.",
    )


def _add_pde_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--spec', help='An uncertainty spec JSON document.')
    parser.add_argument('--grid', help="The PDE grid as 'n_t,n_s,s_max'.")
    parser.add_argument(
        '--stepper', choices=('implicit', 'explicit'), default=None
    )


def create_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description='Robust superhedging under model uncertainty.'
    )
    parser.add_argument(
        '--version', action='version', version=metadata.version(__package__)
    )
    subparser = parser.add_subparsers(dest='command')

    na1 = subparser.add_parser(
        'na1', help='Check no-arbitrage on a tree family.'
    )
    _add_common_arguments(na1)
    na1.add_argument('--model', help='A tree family JSON document.')

    price_tree = subparser.add_parser(
        'price-tree', help='Superhedging price and hedge on a tree family.'
    )
    _add_common_arguments(price_tree)
    _add_tree_arguments(price_tree)

    price_bsb = subparser.add_parser(
        'price-bsb', help='Worst-case volatility price on a PDE grid.'
    )
    _add_common_arguments(price_bsb)
    _add_pde_arguments(price_bsb)
    price_bsb.add_argument('--claim', help='A claim JSON document.')
    price_bsb.add_argument('--payoff', help="A claim such as 'call:100'.")

    duality = subparser.add_parser(
        'duality', help='Compare the primal price with the dual sup.'
    )
    _add_common_arguments(duality)
    _add_tree_arguments(duality)
    duality.add_argument(
        '--grid-step', type=float, help='Simplex step for the dual search.'
    )

    verify = subparser.add_parser(
        'verify-hedge',
        help='Check a hedge on every tree path or on simulated paths.',
    )
    _add_common_arguments(verify)
    _add_tree_arguments(verify)
    _add_pde_arguments(verify)
    verify.add_argument('--prices', help='A price-tree CSV artifact.')
    verify.add_argument('--surface', help='A price-bsb CSV artifact.')
    verify.add_argument('--samples', type=int, help='Number of paths.')

    follmer = subparser.add_parser(
        'follmer-demo', help='Mass loss of the inverse Bessel process.'
    )
    _add_common_arguments(follmer)
    follmer.add_argument('--samples', type=int, help='Number of draws.')
    follmer.add_argument('--horizon', type=float, help='The horizon T.')
    follmer.add_argument(
        '--workers', type=int, help='Threads drawing sample blocks.'
    )

    for name in COMMANDS:
        subparser.choices[name].set_defaults(func=cmd_run)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = create_parser()
    if argv is None:
        argv = sys.argv[1:]
    args = parser.parse_args(argv)
    if not hasattr(args, 'func'):
        parser.print_help()
        return 0
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format='%(levelname)s %(name)s: %(message)s',
    )
    handler: SUB_CMD_FUNC = args.func
    return handler(args)


if __name__ == '__main__':
    sys.exit(main())
