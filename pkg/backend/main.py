"""
main.py — Command-line entry point

    python backend/main.py simulate  --config scenarios/fig3a.yaml --output runs/fig3a
    python backend/main.py spectrum  --figure fig4 --jobs 4
    python backend/main.py spectrum  --config chain30.yaml --from-summary runs/fig4/summary.json
    python backend/main.py zpm-table --output runs/zpm

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 steady state not reached (only with --require-converged).
"""
import argparse
import json
import logging
import sys

from core.config import settings
from core.errors import SelfOrgError
from scenario import from_mapping, load_config, load_figure_preset
from services.runner import COMMANDS, execute

logger = logging.getLogger("main")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="selforg",
        description=f"{settings.APP_NAME} v{settings.APP_VERSION}",
    )
    parser.add_argument("command", choices=COMMANDS)
    source = parser.add_mutually_exclusive_group()
    source.add_argument("--config", help="YAML scenario file")
    source.add_argument("--figure", help="named preset (fig2a, fig2c, fig3a, ... fig8)")
    parser.add_argument("--output", help="output directory (default: output.directory)")
    parser.add_argument("--jobs", type=int, default=settings.JOBS, help="parallel realizations")
    parser.add_argument("--require-converged", action="store_true",
                        help="exit 4 when no steady state is reached")
    parser.add_argument("--from-summary", help="spectrum: analyse a stored summary.json instead of simulating")
    parser.add_argument("--log-level", default=settings.LOG_LEVEL)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    try:
        if args.figure:
            preset_command, cfg = load_figure_preset(args.figure)
            if preset_command != args.command:
                logger.warning(f"Preset {args.figure} is meant for '{preset_command}', running '{args.command}'")
        elif args.config:
            cfg = load_config(args.config, args.command)
        else:
            cfg = from_mapping({})

        result = execute(
            args.command, cfg,
            output_dir=args.output,
            jobs=args.jobs,
            require_converged=args.require_converged,
            from_summary=args.from_summary,
        )
    except SelfOrgError as exc:
        print(json.dumps(exc.to_dict(), default=str), file=sys.stderr)
        return exc.exit_code
    except Exception as exc:
        logger.exception("Unexpected failure")
        print(json.dumps({"success": False, "kind": "internal", "error": str(exc)}), file=sys.stderr)
        return 1

    print(json.dumps(result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
