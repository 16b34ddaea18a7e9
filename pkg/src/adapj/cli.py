"""Command-line entry point.

Every subcommand writes its CSV outputs and a ``report.json`` into ``--out``.
Failures exit nonzero and print ``{"error": <category>, "message": ...}`` on
stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from dataclasses import asdict, fields, is_dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .adaptive import AdapJConfig, DegenerateDataError, matrices_to_csv
from .core import RangeError, WorkspaceError, dataset_to_csv
from .harness import (
    CONTROLLER_KINDS,
    DEFAULT_RATIOS,
    SWEEP_CONTROLLERS,
    DisturbanceProtocol,
    EmptyReportError,
    ExperimentConfig,
    TrajectorySpec,
    bench_step_time,
    make_controller,
    prepare,
    run_babbling,
    run_disturbance_protocol,
    run_sweep,
    run_tracking,
    timing_csv,
)
from .linapprox import demo_table
from .plant import FingerPlantConfig, IntegrationFault, SoftPlant
from .rnn import RnnConfig, TrainingDivergence, weights_to_csv

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("adapj")

EXIT_CODES = {
    "config_error": 2,
    "data_error": 3,
    "integration_fault": 4,
    "controller_fault": 5,
    "training_divergence": 6,
    "io_error": 7,
    "empty_report": 8,
}


class CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


# ---------------------------------------------------------------------------
# Config file


def _build(cls, table: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = set(table) - known
    if unknown:
        raise CliError("config_error", f"unknown keys in [{section}]: {sorted(unknown)}")
    return cls(**table)


def load_config(path: str | None) -> tuple[ExperimentConfig, dict]:
    """Parse a TOML file into an ExperimentConfig plus the raw extra sections.

    Sections: ``[experiment]``, ``[plant]``, ``[adapj]``, ``[rnn]``,
    ``[trajectory]`` (with an optional ``[trajectory.params]`` table),
    ``[disturbance]``, ``[sweep]`` and ``[bench]``.
    """
    raw = {}
    if path:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except OSError as exc:
            raise CliError("io_error", f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise CliError("config_error", f"invalid TOML in {path}: {exc}") from exc
    allowed = {"experiment", "plant", "adapj", "rnn", "trajectory", "disturbance", "sweep",
               "bench"}
    if set(raw) - allowed:
        raise CliError("config_error", f"unknown sections: {sorted(set(raw) - allowed)}")
    try:
        kw = dict(raw.get("experiment", {}))
        nested = {"plant", "adapj", "rnn", "trajectory", "disturbance"}
        if set(kw) & nested:
            raise CliError("config_error", "nested configs belong in their own sections")
        kw["plant"] = _build(FingerPlantConfig, raw.get("plant", {}), "plant")
        kw["adapj"] = _build(AdapJConfig, raw.get("adapj", {}), "adapj")
        kw["rnn"] = _build(RnnConfig, raw.get("rnn", {}), "rnn")
        kw["trajectory"] = _build(TrajectorySpec, raw.get("trajectory", {}), "trajectory")
        cfg = _build(ExperimentConfig, kw, "experiment")
    except (TypeError, ValueError) as exc:
        if isinstance(exc, CliError):
            raise
        raise CliError("config_error", str(exc)) from exc
    return cfg, raw


def _jsonable(obj):
    if is_dataclass(obj) and not isinstance(obj, type):
        return {k: _jsonable(v) for k, v in asdict(obj).items()}
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    if isinstance(obj, (str, int, float, bool)) or obj is None:
        return obj
    return repr(obj)


def _versions() -> dict:
    import scipy

    return {"adapj": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _write(out: Path, name: str, text: str):
    with open(out / name, "w", newline="\n") as fh:
        fh.write(text)


def _write_report(out: Path, command: str, cfg, results: dict):
    doc = {"command": command, "results": _jsonable(results), "config": _jsonable(cfg),
           "versions": _versions()}
    _write(out, "report.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _blocks_csv(blocks: dict) -> str:
    lines = ["block,row,col,value"]
    for name, blk in blocks.items():
        blk = np.atleast_2d(blk)
        for i in range(blk.shape[0]):
            for j in range(blk.shape[1]):
                lines.append(f"{name},{i},{j},{float(blk[i, j])!r}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Subcommands


def cmd_babble(args, cfg, raw, out):
    n = args.n or cfg.babble_samples
    ds = run_babbling(SoftPlant(cfg.plant), n, cfg.seed, step=cfg.babble_step,
                      mode=cfg.babble_mode)
    _write(out, "babbling.csv", dataset_to_csv(ds))
    peak = float(np.abs(ds.states).max())
    _write_report(out, "babble", cfg, {"samples": n, "max_abs_state": peak})


def cmd_init(args, cfg, raw, out):
    kind = cfg.controller
    prep = prepare(cfg, (kind,))
    if kind == "adapj":
        _write(out, "matrices.csv", matrices_to_csv(prep.adapj))
        summary = {"A0": prep.adapj.A0, "A1": prep.adapj.A1, "B0": prep.adapj.B0}
    elif kind == "jacobian":
        _write(out, "matrices.csv", _blocks_csv({"J": prep.jacobian}))
        summary = {"J": prep.jacobian}
    elif kind == "mpc":
        st = prep.mpc
        _write(out, "matrices.csv", _blocks_csv({"P0": st.P0, "P1": st.P1, "P2": st.P2}))
        summary = {"P0": st.P0, "P1": st.P1, "P2": st.P2}
    else:
        w = prep.rnn100 if kind == "rnn100" else prep.rnn
        _write(out, "weights.csv", weights_to_csv(w))
        summary = {"parameters": w.n_params()}
    _write_report(out, "init", cfg, {"controller": kind, **summary})


def cmd_track(args, cfg, raw, out):
    prep = prepare(cfg, (cfg.controller,))
    rep = run_tracking(cfg, prep, make_controller(cfg.controller, prep, cfg))
    _write(out, "timeseries.csv", rep.to_csv())
    _write(out, "params_final.csv", _blocks_csv(rep.params))
    _write_report(out, "track", cfg, rep.aggregates())
    if rep.status != "ok":
        raise CliError(rep.status, rep.error)
    print(f"{cfg.controller}: MAE {rep.mae:.4f} mm over {len(rep.t)} steps")


def cmd_sweep(args, cfg, raw, out):
    sw = dict(raw.get("sweep", {}))
    stiff = args.stiffness or sw.get("stiffness_ratios", DEFAULT_RATIOS)
    damp = args.damping or sw.get("damping_ratios", DEFAULT_RATIOS)
    ctrls = args.controllers or sw.get("controllers", SWEEP_CONTROLLERS)
    seeds = args.seeds or sw.get("seeds", [cfg.seed])
    workers = args.workers or sw.get("workers", 1)
    res = run_sweep(cfg, stiff, damp, ctrls, seeds, workers)
    _write(out, "sweep.csv", res.to_csv())
    _write(out, "adapj_params.csv", res.params_csv())
    _write_report(out, "sweep", cfg, {
        "stiffness_ratios": stiff, "damping_ratios": damp, "controllers": ctrls,
        "seeds": seeds, "rows": [asdict(r) for r in res.rows]})
    for r in res.rows:
        print(f"{r.axis:9s} {r.ratio:6.3g} {r.controller:9s} seed {r.seed}: MAE {r.mae:.4f}")


def cmd_disturb(args, cfg, raw, out):
    try:
        proto = DisturbanceProtocol(**raw.get("disturbance", {}))
    except TypeError as exc:
        raise CliError("config_error", f"[disturbance]: {exc}") from exc
    res = run_disturbance_protocol(cfg, proto)
    _write(out, "timeseries.csv", res.report.to_csv())
    _write(out, "rounds.csv", res.to_csv())
    _write_report(out, "disturb", {"experiment": cfg, "protocol": proto}, {
        **res.report.aggregates(), "round_mae": res.round_mae,
        "round_mean_action": res.round_mean_action, "shift": res.shift,
        "shift_se": res.shift_se, "shift_z": res.shift_z})
    print(res.to_csv(), end="")


def cmd_bench(args, cfg, raw, out):
    iters = args.iterations or raw.get("bench", {}).get("iterations", 2000)
    kinds = args.controllers or raw.get("bench", {}).get("controllers", ["adapj", "mpc", "rnn"])
    prep = prepare(cfg, kinds)
    ctrls = {k: make_controller(k, prep, cfg) for k in kinds}
    rows = bench_step_time(ctrls, iters)
    _write(out, "timing.csv", timing_csv(rows))
    _write_report(out, "bench", cfg, {"rows": [asdict(r) for r in rows]})
    print(timing_csv(rows), end="")


def cmd_linapprox(args, cfg, raw, out):
    ind, cpl, rows = demo_table()
    lines = ["x,y,z,err_independent,err_coupled"]
    lines += [",".join(repr(float(v)) for v in row) for row in rows]
    _write(out, "grid_errors.csv", "\n".join(lines) + "\n")
    _write_report(out, "linapprox", None, {"mae_independent": ind, "mae_coupled": cpl})
    print(f"independent-plane MAE {ind:.5f}\ncoupled-plane MAE {cpl:.5f}")


COMMANDS = {
    "babble": cmd_babble,
    "init": cmd_init,
    "track": cmd_track,
    "sweep": cmd_sweep,
    "disturb": cmd_disturb,
    "bench": cmd_bench,
    "linapprox": cmd_linapprox,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file")
    common.add_argument("--seed", type=int, help="overrides [experiment].seed")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--controller", choices=CONTROLLER_KINDS)
    common.add_argument("--no-update", action="store_true",
                        help="freeze online updates (ablation)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="adapj", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    b = sub.add_parser("babble", parents=[common], help="collect a babbling dataset")
    b.add_argument("--n", type=int, help="number of samples")
    sub.add_parser("init", parents=[common], help="fit a controller and dump its parameters")
    sub.add_parser("track", parents=[common], help="closed-loop tracking run")
    s = sub.add_parser("sweep", parents=[common], help="stiffness/damping ratio sweep")
    s.add_argument("--stiffness", type=float, nargs="+", help="stiffness ratios")
    s.add_argument("--damping", type=float, nargs="+", help="damping ratios")
    s.add_argument("--controllers", nargs="+",
                   choices=CONTROLLER_KINDS + ("adapj_frozen",))
    s.add_argument("--seeds", type=int, nargs="+")
    s.add_argument("--workers", type=int)
    sub.add_parser("disturb", parents=[common], help="five-round disturbance protocol")
    be = sub.add_parser("bench", parents=[common], help="per-step compute time")
    be.add_argument("--iterations", type=int)
    be.add_argument("--controllers", nargs="+", choices=CONTROLLER_KINDS)
    sub.add_parser("linapprox", parents=[common], help="tangent-plane error table")
    return p


def _category(exc: BaseException) -> str:
    if isinstance(exc, CliError):
        return exc.category
    if isinstance(exc, IntegrationFault):
        return "integration_fault"
    if isinstance(exc, TrainingDivergence):
        return "training_divergence"
    if isinstance(exc, EmptyReportError):
        return "empty_report"
    if isinstance(exc, (DegenerateDataError, RangeError, WorkspaceError)):
        return "data_error"
    if isinstance(exc, OSError):
        return "io_error"
    if isinstance(exc, (ValueError, TypeError)):
        return "config_error"
    return "controller_fault"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg, raw = load_config(args.config)
        over = {}
        if args.seed is not None:
            if args.seed < 0:
                raise CliError("config_error", "--seed must be nonnegative")
            over["seed"] = args.seed
        if args.controller:
            over["controller"] = args.controller
        if args.no_update:
            over["update_enabled"] = False
        cfg = replace(cfg, **over)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, cfg, raw, out)
    except Exception as exc:  # noqa: BLE001 (mapped to an exit category)
        cat = _category(exc)
        print(json.dumps({"error": cat, "message": str(exc)}), file=sys.stderr)
        if args.verbose:
            log.exception("failed")
        return EXIT_CODES.get(cat, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
