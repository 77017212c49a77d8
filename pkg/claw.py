"""
Command-line front end: claw {metrics,steer,bv,trace} <scenario.json>.

Exit codes: 0 pass, 1 configuration error, 2 hypothesis failure,
3 solver failure, 4 verification failure.
"""
import argparse
import os
import sys
import logging

import export_utils
import scenario_utils
from errors import ClawError
from settings_utils import configure_logging, load_settings

# Configure logging
logger = logging.getLogger(__name__)


def _parse_n(text: str):
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got '{text}'")
    if not values or any(v <= 0 for v in values):
        raise argparse.ArgumentTypeError("mollification indices must be positive")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="claw", description="Source-control synthesis for scalar balance laws")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("scenario", help="scenario JSON file")
        p.add_argument("--dx", type=float, default=None, help="spatial resolution of the classical solver")
        p.add_argument("--out", default=None, help="output directory (default: <output_dir>/<scenario name>)")
        p.add_argument("--json", action="store_true", help="print the report as JSON")
        p.add_argument("--pdf", action="store_true", help="also write report.pdf")
        p.add_argument("--latex", action="store_true", help="also write bounds.tex")
        return p

    common(sub.add_parser("metrics", help="bracket norms, argsup witnesses, controllability times"))
    for name, text in (("steer", "synthesize, solve and verify a full steering run"),
                       ("trace", "boundary traces of the steered classical solution")):
        p = common(sub.add_parser(name, help=text))
        p.add_argument("--force", action="store_true", help="run even when the hypotheses fail")
        p.add_argument("--strategy", choices=scenario_utils.STRATEGIES, default=None)
    p = common(sub.add_parser("bv", help="mollify-synthesize-solve convergence table for BV data"))
    p.add_argument("--n", type=_parse_n, default=None, help="mollification indices, e.g. 25,50,100")
    p.add_argument("--strategy", choices=scenario_utils.STRATEGIES, default=None)
    return parser


def _summary(result: dict) -> str:
    report = result["report"]
    lines = [f"{report.get('command')} {report.get('scenario')} ({report.get('flux')}, {report.get('regime')}): "
             f"{'ok' if result['ok'] else 'FAILED'} [exit {result['exit_code']}]"]
    if result["error"]:
        lines.append(f"  {result['error']}")
    for entry in report.get("intervals", []):
        lines.append(f"  [|f|] on {entry['interval']} = {entry['value']} (witness k = {entry['k_witness']})")
    for pair in report.get("pairs", []):
        lines.append(f"  T* for intervals {pair['intervals']} = {pair['T_star']}")
    for key, value in sorted((report.get("times") or {}).items()):
        lines.append(f"  {key} = {value}")
    for row in export_utils.bound_rows(report):
        lines.append("  {:<44} claimed {:>12}  measured {:>12}  {}".format(*row))
    return "\n".join(lines)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    settings = load_settings()
    configure_logging(settings)
    try:
        scn = scenario_utils.load_scenario(args.scenario, settings)
    except ClawError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    if args.dx is not None:
        scn.dx = args.dx

    if args.command == "metrics":
        result = scenario_utils.cmd_metrics(scn, args.out, settings)
    elif args.command == "steer":
        result = scenario_utils.cmd_steer(scn, args.out, settings, args.force, args.strategy)
    elif args.command == "trace":
        result = scenario_utils.cmd_trace(scn, args.out, settings, args.force, args.strategy)
    else:
        result = scenario_utils.cmd_bv_pipeline(scn, args.n, args.out, settings, args.strategy)

    out_dir = os.path.dirname(result["files"]["report"]) if result["files"] else None
    if out_dir and args.pdf:
        with open(os.path.join(out_dir, "report.pdf"), "wb") as f:
            f.write(export_utils.create_pdf(result["report"]).getvalue())
    if out_dir and args.latex:
        _, code = export_utils.create_latex(result["report"])
        with open(os.path.join(out_dir, "bounds.tex"), "w") as f:
            f.write(code)

    if args.json:
        print(export_utils.dumps(result["report"]))
    else:
        print(_summary(result))
    return result["exit_code"]


if __name__ == "__main__":
    sys.exit(main())
