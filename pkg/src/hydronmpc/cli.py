"""Command-line interface.

Subcommands: collect (plant data), train (offline SSMP + fresh residual),
eval (prediction ARMSE per checkpoint), control (closed-loop experiment),
bench (timing tables), serve/drive (UDP control loop pair).

Exit codes: 0 ok, 1 configuration error, 2 runtime fault.  All CSV output
is byte-deterministic for a fixed seed; wall-clock timing always goes to
plain-text sidecar files.
"""

from __future__ import annotations

import argparse
import sys
import threading
from dataclasses import replace
from pathlib import Path

import numpy as np

from .bench import (
    DEFAULT_GRID,
    backend_compare,
    timing_bench,
    write_bench_csv,
    write_bench_report,
)
from .dataset import (
    _FLOAT_FMT,
    EpisodeStore,
    build_windows,
    fit_normalizer,
    load_store,
    save_store,
)
from .errors import ConfigError, HydroNmpcError
from .experiment import run_experiment
from .model_io import load_model, save_model
from .nmpc import NmpcController, ReferenceTrajectory
from .plant import (
    PidController,
    PlantParams,
    Workspace,
    collect_closed_loop,
    collect_open_loop,
    pid_step,
)
from .residual import ResidualModel
from .scenario import (
    load_controller_config,
    load_scenario,
    reference_fn,
    reference_samples,
)
from .ssmp import SsmpModel, prediction_armse, split_store, train_offline
from .udp import udp_drive, udp_serve

_DATA_DIR = Path(__file__).parent / "data"


def resolve_scenario(name: str) -> Path:
    """Accept a filesystem path or the name of a packaged scenario."""
    direct = Path(name)
    if direct.is_file():
        return direct
    for candidate in (_DATA_DIR / "scenarios" / name,
                      _DATA_DIR / "scenarios" / f"{name}.scn"):
        if candidate.is_file():
            return candidate
    packaged = sorted(p.stem for p in (_DATA_DIR / "scenarios").glob("*.scn"))
    raise ConfigError(f"scenario {name!r} not found; packaged scenarios: "
                      f"{', '.join(packaged)}")


def resolve_config(name: str) -> Path:
    direct = Path(name)
    if direct.is_file():
        return direct
    for candidate in (_DATA_DIR / name, _DATA_DIR / f"{name}.cfg"):
        if candidate.is_file():
            return candidate
    raise ConfigError(f"controller config {name!r} not found")


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_hidden(text: str) -> tuple:
    try:
        dims = tuple(int(p) for p in text.split(",") if p.strip())
    except ValueError as exc:
        raise ConfigError(f"bad hidden sizes {text!r}") from exc
    if not dims or any(d < 1 for d in dims):
        raise ConfigError(f"bad hidden sizes {text!r}")
    return dims


def _load_checkpoint(path):
    if path is None:
        raise ConfigError("an NMPC run needs --model pointing at a "
                          "checkpoint produced by `hydronmpc train`")
    if not Path(path).is_file():
        raise ConfigError(f"model checkpoint {path} does not exist")
    model, residual = load_model(str(path))
    if residual is None:
        raise ConfigError(f"checkpoint {path} carries no residual model")
    return model, residual


def _scenario_with_overrides(args) -> "Scenario":
    scn = load_scenario(resolve_scenario(args.scenario))
    updates = {}
    if getattr(args, "controller", None):
        updates["controller"] = args.controller
    if getattr(args, "gear", None):
        updates["gear"] = args.gear
    if getattr(args, "name", None):
        updates["name"] = args.name
    return replace(scn, **updates) if updates else scn


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_collect(args) -> int:
    params, ws = PlantParams(), Workspace()
    store = EpisodeStore()
    if args.mode in ("open", "mixed"):
        n = args.episodes if args.mode == "open" else args.episodes // 2
        for ep in collect_open_loop(params, ws, n, args.steps, args.seed,
                                    load=args.load).episodes:
            store.add(ep)
    if args.mode in ("closed", "mixed"):
        n = args.episodes if args.mode == "closed" \
            else args.episodes - args.episodes // 2
        for ep in collect_closed_loop(params, ws, n, args.steps,
                                      args.seed + 1,
                                      load=args.load).episodes:
            store.add(ep)
    target = _out_dir(args) / args.data_dir
    save_store(str(target), store)
    print(f"collected {len(store)} episodes / {store.total_steps()} steps "
          f"({args.mode}) -> {target}")
    return 0


def cmd_train(args) -> int:
    data = Path(args.data) if args.data else _out_dir(args) / "dataset"
    if not (data / "manifest.txt").is_file():
        raise ConfigError(f"no dataset manifest under {data}; "
                          "run `hydronmpc collect` first")
    store = load_store(str(data))
    norm = fit_normalizer(store)
    model = SsmpModel.create(args.h, args.horizon, norm,
                             np.random.default_rng(args.seed),
                             lstm_hidden=args.lstm_hidden,
                             head_hidden=_parse_hidden(args.head_hidden),
                             absolute_targets=args.absolute)
    result = train_offline(model, store, args.iterations,
                           batch_size=args.batch_size,
                           learning_rate=args.lr, seed=args.seed,
                           val_fraction=args.val_fraction)
    residual = ResidualModel.create(args.h, args.horizon, norm,
                                    np.random.default_rng(args.seed + 1),
                                    hidden=_parse_hidden(args.residual_hidden))
    out = _out_dir(args)
    stem = args.out or ("model_h%d_n%d%s.bin"
                        % (args.h, args.horizon,
                           "_abs" if args.absolute else ""))
    ckpt = out / stem
    save_model(str(ckpt), model, residual)
    trace = out / (ckpt.stem + "_train.csv")
    lines = ["iteration,batch_loss"]
    lines += [f"{it},{_FLOAT_FMT % loss}" for it, loss in result.trace]
    trace.write_text("\n".join(lines) + "\n")
    print(f"trained h={args.h} N={args.horizon} on {result.n_train_windows} "
          f"windows ({result.n_val_windows} validation); "
          f"val loss {result.initial_val_loss:.6g} -> {result.val_loss:.6g}")
    print(f"checkpoint -> {ckpt}")
    return 0


def cmd_eval(args) -> int:
    data = Path(args.data) if args.data else _out_dir(args) / "dataset"
    store = load_store(str(data))
    _, val = split_store(store, args.val_fraction)
    if len(val) == 0:
        raise ConfigError("validation split is empty; collect more episodes")
    rows = []
    for path in args.models:
        if not Path(path).is_file():
            raise ConfigError(f"model checkpoint {path} does not exist")
        model, _ = load_model(path)
        windows = build_windows(val, model.h, model.n_horizon)
        armse = prediction_armse(model, windows)
        rows.append((Path(path).name, model.h, model.n_horizon,
                     int(model.absolute_targets), len(windows), armse))
        print(f"{Path(path).name}: h={model.h} N={model.n_horizon} "
              f"windows={len(windows)} armse={armse:.6g}")
    out = _out_dir(args) / args.out
    lines = ["model,h,n_horizon,absolute,n_windows,armse"]
    lines += ["%s,%d,%d,%d,%d,%s" % (*row[:5], _FLOAT_FMT % row[5])
              for row in rows]
    out.write_text("\n".join(lines) + "\n")
    print(f"eval table -> {out}")
    return 0


def cmd_control(args) -> int:
    scn = _scenario_with_overrides(args)
    setup = load_controller_config(resolve_config(args.config))
    model = residual = None
    if scn.controller == "nmpc":
        model, residual = _load_checkpoint(args.model)
    result = run_experiment(scn, setup, model=model, residual=residual,
                            out_dir=_out_dir(args),
                            extraction=args.extraction)
    s = result.summary
    print(f"{scn.name} [{scn.controller}] cycles={s['cycles']} "
          f"rmse=({s['rmse_swing']:.4f}, {s['rmse_boom']:.4f}, "
          f"{s['rmse_arm']:.4f}) final_e={s['final_e']:.4f} "
          f"gear_switches={s['gear_switches']} faults={s['faults']}")
    print(f"trace -> {result.trace_path}")
    return 0


def cmd_bench(args) -> int:
    grid = DEFAULT_GRID if args.grid == "full" else (DEFAULT_GRID[0],)
    rows = timing_bench(grid=grid, repetitions=args.repetitions,
                        seed=args.seed, k1=args.k1,
                        update_loops=args.update_loops)
    backends = backend_compare(repetitions=min(args.repetitions, 300),
                               seed=args.seed)
    out = _out_dir(args)
    write_bench_csv(out / "bench_grid.csv", rows)
    write_bench_report(out / "bench_report.txt", rows, backends)
    print((out / "bench_report.txt").read_text().rstrip())
    return 0


def _make_handler(args, scn, setup):
    """(state, t) -> (valves, gear_index) closure for udp_serve."""
    params = PlantParams()
    gears = np.asarray(setup.constraints.gears)
    ref = reference_fn(scn)
    if scn.controller == "nmpc":
        model, residual = _load_checkpoint(args.model)
        controller = NmpcController(
            model, residual, setup.weights, setup.constraints, setup.config,
            PidController.canonical(params),
            initial_gear=params.gear_speed(scn.gear),
            extraction=args.extraction)

        def handler(state, t):
            samples = reference_samples(scn, t, setup.config.n_horizon)
            traj = ReferenceTrajectory.from_samples(samples, dt=scn.dt)
            command, _ = controller.cycle(state, traj, ref(t), now=t)
            gear_index = int(np.argmin(np.abs(gears - command[3])))
            return command[:3], gear_index
    else:
        pid = PidController.canonical(params)
        gear_index = int(np.argmin(np.abs(
            gears - params.gear_speed(scn.gear))))

        def handler(state, t):
            u = pid_step(pid, ref(t), state[:3], dt=scn.dt)
            return u, gear_index
    return handler


def _write_stats_csv(path, stats) -> None:
    names = ("received", "sent", "malformed", "stale", "timeouts",
             "failsafe_ticks")
    path.write_text(",".join(names) + "\n"
                    + ",".join(str(getattr(stats, n)) for n in names) + "\n")


def cmd_serve(args) -> int:
    scn = _scenario_with_overrides(args)
    setup = load_controller_config(resolve_config(args.config))
    handler = _make_handler(args, scn, setup)
    print(f"serving {scn.controller} on {args.host}:{args.port} "
          f"(scenario {scn.name})")
    stats = udp_serve(handler, (args.host, args.port),
                      max_cycles=args.max_cycles)
    out = _out_dir(args) / f"{scn.name}_serve_stats.csv"
    _write_stats_csv(out, stats)
    print(f"served {stats.sent} commands; stats -> {out}")
    return 0


def cmd_drive(args) -> int:
    scn = _scenario_with_overrides(args)
    cycles = args.cycles or scn.n_cycles
    params = PlantParams()
    target = (args.host, args.port)
    server = None
    if args.with_server:
        setup = load_controller_config(resolve_config(args.config))
        handler = _make_handler(args, scn, setup)
        box, ready = {}, threading.Event()

        def on_bound(addr):
            box["addr"] = addr
            ready.set()

        server = threading.Thread(
            target=udp_serve, args=(handler,), daemon=True,
            kwargs=dict(bind=(args.host, args.port), max_cycles=cycles,
                        on_bound=on_bound))
        server.start()
        if not ready.wait(5.0):
            raise ConfigError("embedded server failed to start")
        target = box["addr"]
    silence = None
    if args.silence:
        try:
            start, end = (int(p) for p in args.silence.split(","))
        except ValueError as exc:
            raise ConfigError("--silence wants START,END ticks") from exc
        silence = (start, end)
    records, stats = udp_drive(
        params, target, cycles, q0=scn.start, gear=scn.gear,
        load_fn=scn.load_at, dt=scn.dt, drop_rate=args.drop_rate,
        drop_seed=args.seed, silence=silence,
        failsafe_after=args.failsafe_after, realtime=args.realtime)
    if server is not None:
        server.join(5.0)
    out = _out_dir(args)
    trace = out / f"{scn.name}_drive_trace.csv"
    header = ("seq,t," + ",".join(f"q_{n}" for n in ("swing", "boom", "arm"))
              + ",qd_swing,qd_boom,qd_arm,qdd_swing,qdd_boom,qdd_arm"
              + ",u_swing,u_boom,u_arm,omega,received,injected_drop,"
              + "timeout,failsafe")
    table = np.column_stack([
        [r.seq for r in records], [r.t for r in records],
        np.array([r.state for r in records]),
        np.array([r.applied for r in records]),
        [float(r.received) for r in records],
        [float(r.injected_drop) for r in records],
        [float(r.timeout) for r in records],
        [float(r.failsafe) for r in records]])
    np.savetxt(trace, table, fmt=_FLOAT_FMT, delimiter=",", header=header,
               comments="")
    stats_path = out / f"{scn.name}_drive_stats.csv"
    _write_stats_csv(stats_path, stats)
    print(f"drove {cycles} cycles against {target[0]}:{target[1]}; "
          f"received {stats.received}, timeouts {stats.timeouts}, "
          f"failsafe ticks {stats.failsafe_ticks}")
    print(f"trace -> {trace}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0,
                        help="seed for every random choice (default 0)")
    common.add_argument("--out-dir", default="out",
                        help="directory for artifacts (default ./out)")
    common.add_argument("--config", default="controller.cfg",
                        help="controller config file or packaged name")

    parser = argparse.ArgumentParser(
        prog="hydronmpc",
        description="Learning-based NMPC toolkit with a surrogate "
                    "hydraulic-excavator plant")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", parents=[common],
                       help="record plant episodes into a dataset")
    p.add_argument("--episodes", type=int, default=40)
    p.add_argument("--steps", type=int, default=400)
    p.add_argument("--mode", choices=("open", "closed", "mixed"),
                   default="mixed")
    p.add_argument("--load", type=float, default=0.0)
    p.add_argument("--data-dir", default="dataset",
                   help="dataset directory name under --out-dir")
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("train", parents=[common],
                       help="train the offline predictor")
    p.add_argument("--data", default=None,
                   help="dataset directory (default <out-dir>/dataset)")
    p.add_argument("--h", type=int, default=10)
    p.add_argument("--horizon", type=int, default=10)
    p.add_argument("--iterations", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--lstm-hidden", type=int, default=64)
    p.add_argument("--head-hidden", default="128,128")
    p.add_argument("--residual-hidden", default="64,64")
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--absolute", action="store_true",
                   help="ablation: predict absolute angles, not deltas")
    p.add_argument("--out", default=None, help="checkpoint filename")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common],
                       help="prediction ARMSE of checkpoints on held-out data")
    p.add_argument("--data", default=None)
    p.add_argument("--models", nargs="+", required=True)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--out", default="eval.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("control", parents=[common],
                       help="closed-loop run of a scenario")
    p.add_argument("--scenario", default="noload")
    p.add_argument("--model", default=None)
    p.add_argument("--controller", choices=("nmpc", "pid"), default=None,
                   help="override the scenario's controller")
    p.add_argument("--gear", choices=("low", "medium", "high"), default=None,
                   help="override the scenario's gear")
    p.add_argument("--name", default=None, help="override the run name")
    p.add_argument("--extraction", choices=("mean", "first"), default="mean")
    p.set_defaults(func=cmd_control)

    p = sub.add_parser("bench", parents=[common],
                       help="timing benchmarks and backend comparison")
    p.add_argument("--repetitions", type=int, default=1000)
    p.add_argument("--grid", choices=("full", "smoke"), default="full")
    p.add_argument("--k1", type=int, default=30)
    p.add_argument("--update-loops", type=int, default=10)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("serve", parents=[common],
                       help="answer UDP state packets with commands")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, required=True)
    p.add_argument("--scenario", default="noload")
    p.add_argument("--model", default=None)
    p.add_argument("--controller", choices=("nmpc", "pid"), default=None)
    p.add_argument("--gear", choices=("low", "medium", "high"), default=None)
    p.add_argument("--name", default=None)
    p.add_argument("--extraction", choices=("mean", "first"), default="mean")
    p.add_argument("--max-cycles", type=int, default=None)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("drive", parents=[common],
                       help="run the plant against a UDP controller")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=0)
    p.add_argument("--scenario", default="noload")
    p.add_argument("--model", default=None)
    p.add_argument("--controller", choices=("nmpc", "pid"), default=None)
    p.add_argument("--gear", choices=("low", "medium", "high"), default=None)
    p.add_argument("--name", default=None)
    p.add_argument("--extraction", choices=("mean", "first"), default="mean")
    p.add_argument("--cycles", type=int, default=None)
    p.add_argument("--drop-rate", type=float, default=0.0)
    p.add_argument("--silence", default=None,
                   help="START,END tick window with discarded replies")
    p.add_argument("--failsafe-after", type=float, default=1.0)
    p.add_argument("--realtime", action="store_true",
                   help="pace the loop to the scenario's dt")
    p.add_argument("--with-server", action="store_true",
                   help="start the matching controller in this process")
    p.set_defaults(func=cmd_drive)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (HydroNmpcError, OSError) as exc:
        print(f"runtime fault: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
