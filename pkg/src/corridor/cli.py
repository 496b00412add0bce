"""Command-line entry point.

Every subcommand writes its output atomically next to ``<out>.manifest.json``,
which records the command line, the resolved config, input and output paths,
the seed and wall times. Exit codes: 0 success, 1 domain error (bad or
missing input, failed check), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from ._json import dumps
from .annotation import (
    annotate_corridor,
    corridor_to_records,
    load_corridor,
    refine_corridor,
)
from .config import Settings, load_settings, with_overrides
from .evaluation import aggregate, evaluate
from .planner import PlanRequest, fit_weights, load_plan, plan, reference_from_positions
from .qp import DegenerateGradientWarning
from .render import render_svg
from .scene import (
    KINDS,
    gen_scene,
    load_scene,
    obstacle_points_at,
    scene_to_dict,
    to_local_frame,
)


class DomainError(Exception):
    """Input that parses as a command line but cannot be processed."""


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("CORRIDOR_THREADS", "1")))
    except ValueError:
        return 1


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


class _Run:
    """Collects outputs in memory and commits them only when the command succeeds."""

    def __init__(self, args, settings: Settings, argv):
        self.args = args
        self.settings = settings
        self.argv = list(argv)
        self.start = time.time()
        self.t0 = time.perf_counter()
        self.inputs: dict[str, object] = {}
        self.outputs: list[tuple[Path, str]] = []
        self.extra: dict[str, object] = {}

    def read(self, role: str, path):
        if path is None:
            raise DomainError(f"--{role} is required")
        p = Path(path)
        if not p.is_file():
            raise DomainError(f"{role} file not found: {p}")
        self.inputs.setdefault(role, [])
        self.inputs[role].append(str(p))
        return p

    def emit(self, path, text: str) -> None:
        self.outputs.append((Path(path), text))

    def commit(self) -> None:
        main = self.outputs[0][0]
        manifest = {
            "command": self.args.command,
            "argv": self.argv,
            "version": __version__,
            "config": self.settings.to_dict(),
            "config_file": self.args.config,
            "seed": getattr(self.args, "seed", None),
            "inputs": self.inputs,
            "outputs": [str(p) for p, _ in self.outputs],
            "wall_time": {"started_unix": self.start, "elapsed_s": time.perf_counter() - self.t0},
            **self.extra,
        }
        for path, text in self.outputs:
            _write_atomic(path, text)
        _write_atomic(main.with_name(main.name + ".manifest.json"), json.dumps(manifest, indent=1) + "\n")


def _request(scene, corridor, reference) -> PlanRequest:
    if len(corridor) != scene.horizon:
        raise DomainError(f"corridor has {len(corridor)} steps, scene horizon is {scene.horizon}")
    return PlanRequest(scene.initial_state(), reference, corridor, scene.footprint)


def _load_reference(run: _Run, path, scene) -> np.ndarray:
    if path is None:
        return scene.future_states()
    data = np.asarray(json.loads(run.read("reference", path).read_text(encoding="utf-8")), dtype=float)
    if data.ndim != 2 or data.shape[0] != scene.horizon or data.shape[1] not in (2, 4):
        raise DomainError(f"reference must be {scene.horizon} rows of (x, y) or (x, y, theta, v)")
    if data.shape[1] == 2:
        return reference_from_positions(scene.initial_state(), data, scene.dt)
    return data


# --- subcommands -------------------------------------------------------------


def cmd_gen(run: _Run) -> None:
    a = run.args
    scene = gen_scene(a.seed, a.kind)
    run.emit(a.out, dumps(scene_to_dict(scene)))


def cmd_annotate(run: _Run) -> None:
    a, ann = run.args, run.settings.annotation
    scene = load_scene(run.read("scene", a.scene))
    corridor = annotate_corridor(scene, ann.delta_obs, ann.boundary, ann.t_ego)
    run.extra["degenerate"] = list(corridor.degenerate)
    run.emit(a.out, dumps(corridor_to_records(corridor)))


def cmd_refine(run: _Run) -> None:
    """Shrink a predicted corridor so the scene's obstacles at each step lie outside it."""
    a, ann = run.args, run.settings.annotation
    scene = load_scene(run.read("scene", a.scene))
    predicted = load_corridor(run.read("corridor", a.corridor))
    if len(predicted) != scene.horizon:
        raise DomainError(f"corridor has {len(predicted)} steps, scene horizon is {scene.horizon}")
    origin = scene.ego_pose_at(0.0)
    obstacles = [
        to_local_frame(obstacle_points_at(scene, (k + 1) * scene.dt, ann.delta_obs).points, origin)
        for k in range(scene.horizon)
    ]
    refined = refine_corridor(predicted, obstacles)
    run.extra["degenerate"] = list(refined.degenerate)
    run.emit(a.out, dumps(corridor_to_records(refined)))


def cmd_plan(run: _Run) -> None:
    a = run.args
    scene = load_scene(run.read("scene", a.scene))
    corridor = load_corridor(run.read("corridor", a.corridor))
    req = _request(scene, corridor, _load_reference(run, a.reference, scene))
    res = plan(req, run.settings.planner)
    run.extra["status"] = res.status
    run.emit(a.out, dumps(res.to_dict()))


def cmd_eval(run: _Run) -> None:
    a = run.args
    scenes = a.scene or []
    plans = a.plan or []
    if not scenes or len(scenes) != len(plans):
        raise DomainError("eval needs matching --scene and --plan lists")
    pairs = [(run.read("scene", s), run.read("plan", p)) for s, p in zip(scenes, plans)]
    grid = run.settings.grid

    def one(pair):
        scene = load_scene(pair[0])
        result = load_plan(pair[1])
        if len(result["trajectory"]) != scene.horizon:
            raise DomainError(f"{pair[1]}: trajectory length differs from the scene horizon")
        return evaluate(result["trajectory"], scene, grid), result["solve_time_s"]

    with ThreadPoolExecutor(_threads()) as pool:
        rows = list(pool.map(one, pairs))  # order preserved: aggregation is deterministic
    report = aggregate([r for r, _ in rows], [t for _, t in rows])
    run.emit(a.out, dumps(report.to_dict()))


def cmd_gradcheck(run: _Run) -> None:
    from .experiments import all_gradchecks

    checks = all_gradchecks(run.args.seed, run.settings)
    rows = [
        {"name": c.name, "cases": c.cases, "max_rel_err": c.max_rel_err, "threshold": c.threshold, "passed": c.passed}
        for c in checks
    ]
    run.extra["passed"] = all(c.passed for c in checks)
    run.emit(run.args.out, dumps({"checks": rows, "passed": run.extra["passed"]}))
    for r in rows:
        print(f"{'PASS' if r['passed'] else 'FAIL'} {r['name']}: max rel err {r['max_rel_err']:.3e} (< {r['threshold']:g})")


def cmd_fit(run: _Run) -> None:
    from .experiments import fit_dataset

    a = run.args
    try:
        data = fit_dataset(a.count, a.seed, run.settings, a.kind)
    except RuntimeError as exc:
        raise DomainError(str(exc)) from exc
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", DegenerateGradientWarning)
        res = fit_weights(data, run.settings.planner, a.steps, a.lr)
    run.extra["degenerate_gradient_warnings"] = sum(issubclass(w.category, DegenerateGradientWarning) for w in caught)
    out = {
        "Q_diag": res.Q_diag,
        "R_diag": res.R_diag,
        "initial_loss": res.history[0],
        "final_loss": res.history[-1],
        "history": res.history,
        "skipped": res.skipped,
    }
    run.emit(a.out, dumps(out))
    print(f"imitation loss {res.history[0]:.6f} -> {res.history[-1]:.6f} over {a.steps} steps")


def cmd_render(run: _Run) -> None:
    a = run.args
    scene = load_scene(run.read("scene", a.scene))
    corridor = load_corridor(run.read("corridor", a.corridor)) if a.corridor else None
    reference = _load_reference(run, a.reference, scene) if a.reference else None
    trajectory = load_plan(run.read("plan", a.plan))["trajectory"] if a.plan else None
    title = Path(a.scene).stem
    run.emit(a.out, render_svg(scene, corridor, reference, trajectory, title=title))


COMMANDS = {
    "gen": (cmd_gen, "generate a synthetic scene"),
    "annotate": (cmd_annotate, "annotate a scene with its ground-truth corridor"),
    "refine": (cmd_refine, "shrink a predicted corridor against the scene's obstacles"),
    "plan": (cmd_plan, "optimize a reference trajectory inside a corridor"),
    "eval": (cmd_eval, "collision rates, L2 and solve times for planned scenes"),
    "gradcheck": (cmd_gradcheck, "run every finite-difference gradient suite"),
    "fit": (cmd_fit, "learn the tracking weights Q and R by descent through the QP"),
    "render": (cmd_render, "SVG overlay of scene, corridor and trajectories"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="corridor", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def common(p, out_help):
        p.add_argument("--out", required=True, help=out_help)
        p.add_argument("--config", help="JSON config file; unspecified keys keep their defaults")
        p.add_argument("--grid-res", type=float, help="BEV cell size in metres (overrides the config)")

    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        if name == "gen":
            common(p, "scene JSON to write")
            p.add_argument("--kind", choices=KINDS, default="straight")
            p.add_argument("--seed", type=int, default=0)
        elif name == "annotate":
            common(p, "corridor JSON to write")
            p.add_argument("--scene", required=True)
        elif name == "refine":
            common(p, "refined corridor JSON to write")
            p.add_argument("--scene", required=True)
            p.add_argument("--corridor", required=True, help="predicted corridor")
        elif name == "plan":
            common(p, "plan JSON to write")
            p.add_argument("--scene", required=True)
            p.add_argument("--corridor", required=True)
            p.add_argument("--reference", help="JSON rows (x, y) or (x, y, theta, v); default: logged future")
        elif name == "eval":
            common(p, "metrics report JSON to write")
            p.add_argument("--scene", nargs="+", required=True)
            p.add_argument("--plan", nargs="+", required=True)
        elif name == "gradcheck":
            common(p, "gradient-check report JSON to write")
            p.add_argument("--seed", type=int, default=0)
        elif name == "fit":
            common(p, "fitted weights JSON to write")
            p.add_argument("--kind", choices=KINDS, default="cut-in")
            p.add_argument("--seed", type=int, default=0)
            p.add_argument("--steps", type=int, default=100)
            p.add_argument("--lr", type=float, default=1e-2)
            p.add_argument("--count", type=int, default=20, help="number of training scenes")
        elif name == "render":
            common(p, "SVG file to write")
            p.add_argument("--scene", required=True)
            p.add_argument("--corridor")
            p.add_argument("--plan")
            p.add_argument("--reference")
    return parser


def run(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: 0 for --help/--version, 2 for usage errors
        return int(exc.code or 0)
    if getattr(args, "steps", 0) < 0 or getattr(args, "count", 1) < 1:
        parser.print_usage(sys.stderr)
        print("corridor: error: --steps must be >= 0 and --count >= 1", file=sys.stderr)
        return 2
    try:
        settings = with_overrides(load_settings(args.config), args.grid_res)
        job = _Run(args, settings, argv)
        COMMANDS[args.command][0](job)
        job.commit()
    except (DomainError, ValueError, OSError, KeyError, TypeError) as exc:
        print(f"corridor {args.command}: error: {exc}", file=sys.stderr)
        return 1
    if job.extra.get("passed") is False:  # a failed check is a domain outcome, report kept
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
