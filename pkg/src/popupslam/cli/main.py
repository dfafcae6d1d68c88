"""Command-line front end.

Subcommands: simulate, run, evaluate, select-edges, fuse-depth. Exit codes:
0 success, 1 usage error, 2 bad input data or config, 3 solver failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..boundary import BoundaryCurve, greedy_select, postprocess_edges
from ..errors import ConfigError, DataFormatError, InvalidSpec, PopupSlamError, SingularSystem
from ..fusion import fuse_depth_map
from ..geometry import Pose
from ..kernels import backend_name
from ..sim import evaluate as sim_evaluate
from ..sim import generate_corridor, simulate_dataset
from .config import load_config
from .dataset import parse_dataset, write_dataset
from .graphfile import dump_graph, load_graph
from .meshio import save_mesh
from .pipeline import run_pipeline
from .trajectory import load_trajectory, save_trajectory

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_SOLVER = 3


class _Parser(argparse.ArgumentParser):
    """argparse that exits 1 on usage errors instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    p = _Parser(prog="popup-slam", description="Monocular plane SLAM from ground-wall boundaries")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sim = sub.add_parser("simulate", help="generate a corridor dataset")
    sim.add_argument("--config", type=Path, help="YAML config (corridor/noise/camera sections)")
    sim.add_argument("--seed", type=int, help="override config seed")
    sim.add_argument("--out", type=Path, required=True, help="output directory")

    run = sub.add_parser("run", help="run the mapping pipeline")
    src = run.add_mutually_exclusive_group(required=True)
    src.add_argument("--dataset", type=Path, help="dataset file to process")
    src.add_argument("--scenario", action="store_true", help="simulate the configured corridor first")
    run.add_argument("--config", type=Path, help="YAML config file")
    run.add_argument("--seed", type=int, help="override config seed")
    run.add_argument("--no-loop", action="store_true", help="disable loop closure")
    run.add_argument("--no-repopup", action="store_true", help="disable measurement regeneration")
    run.add_argument("--out", type=Path, required=True, help="output directory")

    ev = sub.add_parser("evaluate", help="compare an estimate against scenario truth")
    ev.add_argument("--config", type=Path, help="YAML config with the corridor section")
    ev.add_argument("--seed", type=int, help="override config seed")
    ev.add_argument("--trajectory", type=Path, required=True, help="estimated trajectory file")
    ev.add_argument("--graph", type=Path, help="estimated graph for plane metrics")
    ev.add_argument("--depth", action="store_true", help="also compare rendered depth")
    ev.add_argument("--out", type=Path, help="write the JSON report here instead of stdout")

    se = sub.add_parser("select-edges", help="run boundary edge selection only")
    se.add_argument("--dataset", type=Path, required=True)
    se.add_argument("--config", type=Path, help="YAML config file")
    se.add_argument("--out", type=Path, required=True, help="output dataset of selected edges")

    fd = sub.add_parser("fuse-depth", help="fuse an external depth map with a pop-up depth map")
    fd.add_argument("--depth", type=Path, required=True, help="external depth .npy")
    fd.add_argument("--var", type=Path, required=True, help="external variance .npy")
    fd.add_argument("--popup-depth", type=Path, required=True)
    fd.add_argument("--popup-var", type=Path, required=True)
    fd.add_argument("--var-max", type=float, default=0.25, help="external variance acceptance cap")
    fd.add_argument("--out", type=Path, required=True, help="output prefix")
    return p


def _config_from_args(args):
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "no_loop", False):
        overrides["loop.enabled"] = False
    if getattr(args, "no_repopup", False):
        overrides["pipeline.repopup"] = False
    return load_config(getattr(args, "config", None), overrides=overrides)


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _cmd_simulate(args) -> int:
    cfg = _config_from_args(args)
    truth = generate_corridor(
        cfg.corridor.spec(),
        frame_spacing=cfg.corridor.frame_spacing,
        intrinsics=cfg.camera.intrinsics(),
        loop_overrun=cfg.corridor.loop_overrun,
    )
    obs = simulate_dataset(truth, cfg.noise.model(cfg.seed))
    args.out.mkdir(parents=True, exist_ok=True)
    write_dataset(args.out / "dataset.txt", truth.intrinsics, obs)
    save_trajectory(args.out / "truth_trajectory.txt", truth.trajectory)
    print(
        f"simulated {len(obs)} frames, {len(truth.walls)} walls "
        f"-> {args.out / 'dataset.txt'}"
    )
    return EXIT_OK


def _cmd_run(args) -> int:
    cfg = _config_from_args(args)
    if args.dataset is not None:
        ds = parse_dataset(args.dataset)
        intr = ds.intrinsics or cfg.camera.intrinsics()
        frames = ds.frames
        initial = None
    else:
        truth = generate_corridor(
            cfg.corridor.spec(),
            frame_spacing=cfg.corridor.frame_spacing,
            intrinsics=cfg.camera.intrinsics(),
            loop_overrun=cfg.corridor.loop_overrun,
        )
        frames = simulate_dataset(truth, cfg.noise.model(cfg.seed))
        intr = truth.intrinsics
        initial = truth.trajectory[0]
    result = run_pipeline(frames, intr, cfg, initial_pose=initial)

    args.out.mkdir(parents=True, exist_ok=True)
    save_trajectory(args.out / "trajectory.txt", result.trajectory)
    save_mesh(args.out / "map.ply", result.graph.landmarks.values())
    dump_graph(args.out / "graph.txt", result.graph)
    with open(args.out / "report.json", "w") as fh:
        json.dump(result.stats, fh, indent=2, default=_json_default)
        fh.write("\n")
    print(
        f"processed {result.stats['frames']} frames on {backend_name()} backend: "
        f"{result.stats['n_landmarks']} landmarks, {result.stats['merges']} merges, "
        f"{result.stats['runtime_s']:.2f}s -> {args.out}"
    )
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    cfg = _config_from_args(args)
    truth = generate_corridor(
        cfg.corridor.spec(),
        frame_spacing=cfg.corridor.frame_spacing,
        intrinsics=cfg.camera.intrinsics(),
        loop_overrun=cfg.corridor.loop_overrun,
    )
    est = [pose for _, pose in load_trajectory(args.trajectory)]
    landmarks = None
    if args.graph is not None:
        landmarks = list(load_graph(args.graph).landmarks.values())
    report = sim_evaluate(truth, est, landmarks, with_depth=args.depth)
    payload = report.as_dict()
    text = json.dumps(payload, indent=2, default=_json_default)
    if args.out is not None:
        args.out.write_text(text + "\n")
        print(f"report -> {args.out}")
    else:
        print(text)
    return EXIT_OK


def _cmd_select_edges(args) -> int:
    cfg = _config_from_args(args)
    params = cfg.selection.params()
    ds = parse_dataset(args.dataset)
    n_in = n_out = 0
    with open(args.out, "w") as fh:
        fh.write("# selected boundary edges\n")
        for rec in ds.frames:
            n_in += len(rec.edges)
            edges = list(rec.edges)
            if rec.xi is not None and len(rec.xi) >= 2 and edges:
                chosen = greedy_select(edges, BoundaryCurve(rec.xi), params)
                edges = postprocess_edges(chosen, params)
            n_out += len(edges)
            for e in edges:
                fh.write(
                    f"EDGE {rec.frame_id} {e.a[0]:.9g} {e.a[1]:.9g} {e.b[0]:.9g} {e.b[1]:.9g}\n"
                )
    print(f"selected {n_out}/{n_in} edges over {len(ds.frames)} frames -> {args.out}")
    return EXIT_OK


def _cmd_fuse_depth(args) -> int:
    try:
        d_ext = np.load(args.depth)
        v_ext = np.load(args.var)
        d_pop = np.load(args.popup_depth)
        v_pop = np.load(args.popup_var)
    except ValueError as exc:
        raise DataFormatError(f"bad npy input: {exc}") from None
    depth, var = fuse_depth_map(d_ext, v_ext, d_pop, v_pop, var_max=args.var_max)
    out_depth = args.out.parent / (args.out.name + "_depth.npy")
    out_var = args.out.parent / (args.out.name + "_var.npy")
    np.save(out_depth, depth)
    np.save(out_var, var)
    n_ext = int(np.sum(np.isfinite(v_ext) & (v_ext <= args.var_max)))
    print(
        f"fused {depth.size} pixels ({n_ext} external accepted) -> {out_depth}, {out_var}"
    )
    return EXIT_OK


_COMMANDS = {
    "simulate": _cmd_simulate,
    "run": _cmd_run,
    "evaluate": _cmd_evaluate,
    "select-edges": _cmd_select_edges,
    "fuse-depth": _cmd_fuse_depth,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _COMMANDS[args.command](args)
    except SingularSystem as exc:
        print(f"error: the optimization problem is singular: {exc}", file=sys.stderr)
        if exc.blame:
            print(f"  unconstrained: {exc.blame}", file=sys.stderr)
        return EXIT_SOLVER
    except (DataFormatError, ConfigError, InvalidSpec) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except PopupSlamError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
