import argparse
import sys
from typing import Dict, List, Optional

from config.network_config import COMMANDS
from config.settings import Config
from stages.coordinator_stage import CoordinatorStage
from utils.helpers import LoggingUtils


class _Parser(argparse.ArgumentParser):
    """argparse parser whose usage errors exit with status 2 through main()"""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog='symnet',
                     description='Compositional symbolic models and safety controllers for networks of switched systems')
    parser.add_argument('command', help=f"one of: {', '.join(COMMANDS)}")
    parser.add_argument('config', help='network configuration file')
    parser.add_argument('--out', help='output directory (default: <config dir>/out/<config stem>)')
    parser.add_argument('--workers', type=int, default=Config.WORKERS, help='worker processes for data-parallel stages')
    parser.add_argument('--psi', type=float, help='override [spec] psi')
    parser.add_argument('--policy', choices=['lex', 'random', 'fair'], help='override [simulation] policy')
    parser.add_argument('--seed', type=int, help='override [simulation] seed')
    parser.add_argument('--tol', type=float, help='eigenvalue tolerance for matrix inequality checks')
    parser.add_argument('--set', action='append', default=[], metavar='SECTION.KEY=VALUE',
                        help='override any config field (repeatable)')
    parser.add_argument('--log-level', default='WARNING', help='logging level (default: WARNING)')
    return parser


def _parse_sets(items: List[str]) -> Dict[str, str]:
    overrides = {}
    for item in items:
        key, sep, value = item.partition('=')
        if not sep or not key.strip():
            raise _UsageError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    return overrides


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command not in COMMANDS:
            parser.print_usage(sys.stderr)
            raise _UsageError(f"unknown command {args.command!r}; expected one of {', '.join(COMMANDS)}")
        if args.workers < 1:
            raise _UsageError("--workers must be >= 1")
        flags = {
            'out': args.out, 'workers': args.workers, 'psi': args.psi, 'policy': args.policy,
            'seed': args.seed, 'tol': args.tol, 'set': _parse_sets(args.set),
        }
        LoggingUtils.configure(args.log_level)
    except _UsageError as exc:
        print(f"symnet: error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"symnet: error: {exc}", file=sys.stderr)
        return 2

    coordinator = CoordinatorStage()
    result = coordinator.execute(args.command, args.config, flags)
    for line in coordinator.summary_lines():
        print(line)
    if not result['success']:
        error = result.get('error') or {}
        print(f"symnet: {error.get('error_type', 'Error')}: {error.get('error_message', 'failed')}", file=sys.stderr)
    return result['exit_code']


if __name__ == "__main__":
    sys.exit(main())
