"""Command-line entry point.

    persisters [global flags] <command> [global flags]

Commands: simulate, spectrum, sweep, equilibria, reproduce-fig1, converge.
Without ``--config`` the two-panel experiment parameters are used. Exit status
is 0 on success, 2 for configuration errors and 3 for numerical failures; in
the failing cases a JSON error record goes to stderr and, when the output
directory is known, to ``error.json`` there.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
import traceback
from pathlib import Path

from .config import config_from_dict, default_config, load_config
from .errors import AssemblyError, ConfigError, GridError, NumericalError, ParameterError
from .runner import default_jobs, run_scenario

COMMANDS = {
    "simulate": "simulate",
    "spectrum": "spectrum",
    "sweep": "sweep",
    "equilibria": "equilibria",
    "reproduce-fig1": "reproduce_fig1",
    "converge": "convergence",
}

_SCHEME_ALIASES = {"flux": "flux_form", "central": "paper_central", "flux_form": "flux_form", "paper_central": "paper_central"}


def _global_flags(parser: argparse.ArgumentParser) -> None:
    # SUPPRESS lets the same flags appear before or after the command
    g = parser.add_argument_group("global options")
    g.add_argument("--config", metavar="PATH", default=argparse.SUPPRESS, help="YAML run configuration")
    g.add_argument("--out", metavar="DIR", default=argparse.SUPPRESS, help="output directory (overrides output_dir)")
    g.add_argument("--jobs", type=int, metavar="N", default=argparse.SUPPRESS, help="worker processes for sweeps")
    g.add_argument("--scheme", choices=sorted(_SCHEME_ALIASES), default=argparse.SUPPRESS, help="advection scheme")
    g.add_argument("--exact", action="store_true", default=argparse.SUPPRESS, help="write CSVs at full precision")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="seed for randomized initial conditions")
    g.add_argument("--dump-matrices", action="store_true", default=argparse.SUPPRESS, help="also write A.csv and N.csv")
    g.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="persisters", description=__doc__.split("\n\n")[0])
    _global_flags(parser)
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    helps = {
        "simulate": "integrate the semi-discrete system from an initial condition",
        "spectrum": "spectral bound scan and threshold resource R*",
        "sweep": "parameter grid of spectrum or equilibria runs",
        "equilibria": "washout and positive equilibria",
        "reproduce-fig1": "no-persister and only-persister runs with heatmaps",
        "converge": "grid and time-step refinement study",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        _global_flags(p)
        if name in ("simulate", "reproduce-fig1"):
            p.add_argument("--t-end", type=float, default=None, help="final time")
        if name == "spectrum":
            p.add_argument("--bracket", type=float, nargs=2, metavar=("LO", "HI"), default=None)
    return parser


def _resolve(args) -> tuple:
    scenario = COMMANDS[args.command]
    path = getattr(args, "config", None)
    if path is None:
        cfg = default_config(scenario)
        base = Path(".")
    else:
        cfg = load_config(path)
        base = Path(path).parent
    raw = copy.deepcopy(cfg.resolved)
    if cfg.scenario != scenario:
        raw["scenario"] = {"type": scenario}
        if path is None or cfg.scenario == "equilibria":
            raw["output_dir"] = f"runs/{scenario}"
    if getattr(args, "scheme", None):
        raw["scheme"] = _SCHEME_ALIASES[args.scheme]
    if getattr(args, "seed", None) is not None:
        raw["seed"] = args.seed
    if getattr(args, "exact", False):
        raw["exact"] = True
    if getattr(args, "dump_matrices", False):
        raw["dump_matrices"] = True
    if getattr(args, "out", None):
        raw["output_dir"] = args.out
    if getattr(args, "t_end", None) is not None:
        raw["solver"]["t_end"] = args.t_end
    if getattr(args, "bracket", None) is not None:
        raw["scenario"]["bracket"] = list(args.bracket)
    jobs = getattr(args, "jobs", None) or default_jobs()
    return config_from_dict(raw, base_dir=base), jobs


def _emit_error(exc: Exception, code: int, out_dir) -> None:
    record = {
        "error": type(exc).__name__,
        "message": str(exc),
        "exit_code": code,
    }
    for attr in ("field", "line"):
        if getattr(exc, attr, None) is not None:
            record[attr] = getattr(exc, attr)
    text = json.dumps(record)
    print(text, file=sys.stderr)
    if out_dir is not None:
        try:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            (Path(out_dir) / "error.json").write_text(text + "\n", encoding="utf-8")
        except OSError:
            pass


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    out_dir = getattr(args, "out", None)
    try:
        cfg, jobs = _resolve(args)
        out_dir = cfg.output_dir
        run_dir = run_scenario(cfg, jobs=jobs)
    except (ConfigError, ParameterError, GridError, AssemblyError) as exc:
        _emit_error(exc, 2, out_dir)
        return 2
    except NumericalError as exc:
        _emit_error(exc, 3, out_dir)
        return 3
    except Exception as exc:  # anything else still gets a machine-readable record
        logging.getLogger(__name__).debug(traceback.format_exc())
        _emit_error(exc, 3, out_dir)
        return 3
    with open(run_dir / "manifest.json", encoding="utf-8") as fh:
        results = json.load(fh)["results"]
    print(json.dumps({"run_dir": str(run_dir), "results": _headline(cfg.scenario, results)}))
    return 0


def _headline(scenario: str, results: dict) -> dict:
    keys = {
        "simulate": ("final_N", "final_N_alpha", "final_R", "steady_state_detected"),
        "spectrum": ("R_star", "strictly_increasing", "min_increment"),
        "sweep": ("points", "key", "spread"),
        "equilibria": ("regime", "R_positive", "N_alpha_hat"),
        "reproduce_fig1": ("regime", "equilibrium"),
        "convergence": ("spatial_order", "temporal_order", "max_abs_s_threshold"),
    }[scenario]
    return {k: results.get(k) for k in keys}


if __name__ == "__main__":
    sys.exit(main())
