import argparse
import logging
import sys
from typing import Dict, List, Optional

from adaptive_driver import ParameterSweep, adaptive_solve, build_run_config, load_run_config
from app import configure_logging, environment_overrides
from models import CavitationError, ConfigError, NonConvergenceError
from verification import run_suite

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_CONFIG = 2
EXIT_NONCONVERGENCE = 3
EXIT_ERROR = 4


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting"""

    def error(self, message):
        raise ConfigError(message)


def _add_run_flags(parser: argparse.ArgumentParser):
    parser.add_argument('--method', choices=('nitsche', 'penalty'))
    parser.add_argument('--degree', type=int, choices=(1, 2))
    parser.add_argument('--beta', type=float)
    parser.add_argument('--alpha', type=float)
    parser.add_argument('--penalty-eps', dest='penalty_eps', type=float)
    parser.add_argument('--rounds', type=int)
    parser.add_argument('--output', help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog='cavitation', description="Adaptive finite elements for cavitation in lubrication")
    parser.add_argument('--log-level', dest='log_level')
    commands = parser.add_subparsers(dest='command', parser_class=_Parser)
    commands.required = True

    solve = commands.add_parser('solve', help="adaptive run from a configuration file")
    solve.add_argument('config')
    _add_run_flags(solve)

    sweep = commands.add_parser('sweep', help="adaptive runs over a list of alpha or penalty values")
    sweep.add_argument('config', nargs='?')
    sweep.add_argument('--parameter', choices=ParameterSweep.PARAMETERS, default='alpha')
    sweep.add_argument('--values', type=float, nargs='+', required=True)
    sweep.add_argument('--workers', type=int, default=2)
    _add_run_flags(sweep)

    verify = commands.add_parser('verify', help="manufactured-solution and structural checks")
    verify.add_argument('--benchmark', action='store_true', help="also run the adaptive benchmark")
    verify.add_argument('--refinements', type=int, default=4)
    return parser


def _overrides(args) -> Dict[str, Dict[str, object]]:
    return {
        'solver': {'method': args.method, 'alpha': args.alpha, 'penalty_eps': args.penalty_eps},
        'adaptive': {'degree': args.degree, 'beta': args.beta, 'rounds': args.rounds},
        'output': {'directory': args.output},
    }


def _run_config(args):
    if args.config:
        return load_run_config(args.config, _overrides(args))
    sections: Dict[str, Dict[str, object]] = {}
    for layer in (environment_overrides(), _overrides(args)):
        for section, values in layer.items():
            sections.setdefault(section, {}).update({k: v for k, v in values.items() if v is not None})
    return build_run_config(sections)


def _solve(args) -> int:
    report = adaptive_solve(_run_config(args))
    final = report.final
    print(f"{len(report.rounds)} rounds, {final.ndofs} dofs, eta {final.eta_total:.4e}, "
          f"max p {final.p_max:.4f}, cavitated fraction {report.cavitated_fraction:.3f}")
    return EXIT_OK


def _sweep(args) -> int:
    results = ParameterSweep(_run_config(args), args.parameter, args.values, args.workers).run()
    for result in results:
        if result['report'] is None:
            print(f"{args.parameter}={result['value']:g}: failed, {result['error']}")
            continue
        final = result['report'].final
        status = 'ok' if result['converged'] else 'not converged'
        summary = f"eta {final.eta_total:.4e}, max p {final.p_max:.4f}" if final else "no rounds"
        print(f"{args.parameter}={result['value']:g}: {status}, {summary}")
    if any(r['report'] is None for r in results):
        return EXIT_ERROR
    if not all(r['converged'] for r in results):
        return EXIT_NONCONVERGENCE
    return EXIT_OK


def _verify(args) -> int:
    passed, results = run_suite(benchmark=args.benchmark, refinements=args.refinements)
    for result in results:
        print(f"{result['name']}: {'passed' if result['passed'] else 'FAILED'}")
    return EXIT_OK if passed else EXIT_VERIFY_FAILED


def cli_main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        configure_logging(args.log_level)
        handler = {'solve': _solve, 'sweep': _sweep, 'verify': _verify}[args.command]
        return handler(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NonConvergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except CavitationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(cli_main())
