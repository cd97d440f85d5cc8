"""Command-line front end: simulate, discover, evaluate and export.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import cgp, dynsys, engine, kalman, llmsearch
from .dsl import generic_signature, parse, to_text, validate
from .dsl.errors import DslError

log = logging.getLogger("evofilter")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _split_size(text):
    try:
        n, t = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected TRAJECTORIES,STEPS, got {text!r}") from None
    if n < 1 or t < 1:
        raise argparse.ArgumentTypeError("split sizes must be positive")
    return n, t


def _system_args(p):
    p.add_argument("--scenario", default="gaussian", choices=dynsys.SCENARIOS)
    p.add_argument("--dt", type=float, default=1.0)
    p.add_argument("--sigma-a", type=float, default=1.0, help="process acceleration std")
    p.add_argument("--sigma-z", type=float, default=1.0, help="measurement noise std")
    p.add_argument(
        "--delay-range", type=float, nargs=2, default=(0.0, 1.0), metavar=("LO", "HI")
    )


def build_parser():
    p = _Parser(prog="evofilter", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="write one simulated trajectory as CSV")
    _system_args(s)
    s.add_argument("--steps", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="output CSV (default stdout)")

    d = sub.add_parser("discover", help="run the evolutionary search")
    d.add_argument("--config", help="JSON file with engine settings")
    d.add_argument("--seed", type=int)
    d.add_argument("--method", choices=engine.METHODS)
    d.add_argument("--task", choices=kalman.TASK_TAGS)
    d.add_argument("--scenario", choices=dynsys.SCENARIOS)
    d.add_argument("--mode", choices=engine.MODES)
    d.add_argument("--iters", type=int, help="number of iterations")
    d.add_argument("--budget", type=int, help="evaluation budget over all islands")
    d.add_argument("--workers", type=int)
    d.add_argument("--backend", help="mock:<path> or http:<url>")
    d.add_argument("--model", default="default", help="model name sent to an http backend")
    d.add_argument("--top", type=int, default=10, help="programs to write out")
    d.add_argument("--out", help="run directory (default runs/<method>-<task>-s<seed>)")

    e = sub.add_parser("evaluate", help="score a .mdsl program on simulated data")
    e.add_argument("program")
    e.add_argument("--task", choices=kalman.TASK_TAGS)
    _system_args(e)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--split", default="test", choices=kalman.SPLITS)
    e.add_argument("--train-size", type=_split_size, default=kalman.DEFAULT_SIZES["train"])
    e.add_argument(
        "--validation-size", type=_split_size, default=kalman.DEFAULT_SIZES["validation"]
    )
    e.add_argument("--test-size", type=_split_size, default=kalman.DEFAULT_SIZES["test"])
    e.add_argument("--per-step", help="write the per-step MSE curve to this CSV")
    e.add_argument("--report", help="also write the report to this file")

    x = sub.add_parser("export", help="convert between genotype JSON and .mdsl")
    x.add_argument("source", help="genotype .json or program .mdsl")
    x.add_argument("--format", choices=("dsl", "json"), default="dsl")
    x.add_argument("--task", choices=kalman.TASK_TAGS, help="signature for decoding")
    x.add_argument("--generic", action="store_true", help="decode with i_k/o_k names")
    x.add_argument("--max-nodes", type=int, help="genotype length when encoding")
    x.add_argument("--out", help="output file (default stdout)")
    return p


def _write(path, text):
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


# ---------------------------------------------------------------- simulate


def cmd_simulate(args):
    if args.steps < 1:
        raise UsageError("--steps must be at least 1")
    try:
        system = dynsys.make_system(args.dt, args.sigma_a, args.sigma_z)
        scenario = dynsys.Scenario(args.scenario, tuple(args.delay_range))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    traj = dynsys.simulate(system, scenario, args.steps, args.seed)
    rows = ["t,x_pos,x_vel,z_pos,z_vel"]
    for k, (x, z) in enumerate(zip(traj.states, traj.observations), start=1):
        rows.append(",".join([str(k)] + [repr(float(v)) for v in (*x, *z)]))
    _write(args.out, "\n".join(rows) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------- discover


def load_config(path):
    """Engine settings from a JSON object; unknown keys are rejected."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    return data


def _discover_config(args):
    data = load_config(args.config) if args.config else {}
    overrides = {
        "seed": args.seed,
        "method": args.method,
        "task": args.task,
        "scenario": args.scenario,
        "mode": args.mode,
        "iterations": args.iters,
        "eval_budget": args.budget,
        "workers": args.workers,
    }
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return engine.EngineConfig.from_dict(data)
    except engine.ConfigError as exc:
        raise UsageError(f"config: {exc}") from None


def _make_backend(args, cfg):
    if cfg.method != "llm":
        if args.backend:
            log.warning("--backend is ignored by the %s method", cfg.method)
        return None
    if not args.backend:
        raise UsageError("the llm method needs --backend mock:<path> or http:<url>")
    try:
        bcfg = llmsearch.BackendConfig.from_spec(args.backend, model=args.model)
        return llmsearch.make_backend(bcfg)
    except (ValueError, OSError) as exc:
        raise UsageError(f"backend: {exc}") from None


def write_run(result, cfg, out, top=10):
    """Write manifest.json, fitness_history.csv and the top programs."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(
        json.dumps(result.manifest, indent=2, sort_keys=True, default=str) + "\n"
    )
    with open(out / "fitness_history.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "island", "best", "median", "evals"])
        for r in result.fitness_history:
            w.writerow(
                [r["iteration"], r["island"], repr(float(r["best"])), repr(float(r["median"])), r["evals"]]
            )
    for rank, (cand, prog, val) in enumerate(result.top[:top]):
        stem = f"top{rank:02d}"
        header = f"# validation {val.mean:.9g}  train {cand.fitness:.9g}  origin {cand.origin}\n"
        (out / f"{stem}.mdsl").write_text(header + to_text(prog))
        if isinstance(cand.payload, cgp.Genotype):
            doc = {"task": cfg.task, "genotype": cand.payload.to_dict()}
            (out / f"{stem}.genotype.json").write_text(json.dumps(doc, indent=1) + "\n")
    return out


def cmd_discover(args):
    cfg = _discover_config(args)
    backend = _make_backend(args, cfg)
    out = args.out or f"runs/{cfg.method}-{cfg.task}-s{cfg.seed}"
    result = engine.run_discovery(cfg, backend)
    write_run(result, cfg, out, args.top)
    m = result.manifest
    print(f"run directory: {out}")
    print(f"manifest hash: {m['hash']}")
    print(f"evaluations:   {m['eval_counts']['total']}")
    print(f"best validation {result.validation.mean:.6f}  test {result.test}")
    print(f"reference validation {m['reference_fitness']['validation']:.6f}")
    print(to_text(result.best_program), end="")
    return EXIT_OK


# ---------------------------------------------------------------- evaluate


def _read_program(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise RuntimeError(f"cannot read {path}: {exc}") from None
    try:
        return parse(text, name=Path(path).stem)
    except DslError as exc:
        raise RuntimeError(f"{path}: {exc}") from None


def _infer_task(program):
    n_out = len(program.signature.outputs)
    if n_out == 2:
        return "predict"
    if n_out == len(kalman.FULL_OUTPUTS):
        return "full"
    raise UsageError(f"cannot infer the task from {n_out} outputs; pass --task")


def format_report(name, task, scenario, split, report, reference, obs_mse):
    lines = [
        f"program:   {name}",
        f"task:      {task}",
        f"scenario:  {scenario}",
        f"split:     {split} ({len(report.per_trajectory)} trajectories)",
        f"mse:       {report}",
        f"reference: {reference}",
        f"observation baseline: {obs_mse:.6f}",
        "per-trajectory mse:",
    ]
    lines += [f"  {i:3d} {v:.6f}" for i, v in enumerate(report.per_trajectory)]
    return "\n".join(lines) + "\n"


def cmd_evaluate(args):
    program = _read_program(args.program)
    task = kalman.make_task(args.task or _infer_task(program))
    problems = validate(program, task.signature_for(program))
    if problems:
        raise RuntimeError(f"{args.program}: " + "; ".join(map(str, problems)))
    try:
        system = dynsys.make_system(args.dt, args.sigma_a, args.sigma_z)
        scenario = dynsys.Scenario(args.scenario, tuple(args.delay_range))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    sizes = {"train": args.train_size, "validation": args.validation_size, "test": args.test_size}
    data = kalman.make_datasets(system, scenario, args.seed, sizes)
    report = kalman.evaluate_candidate(program, task, data, args.split)
    ref = kalman.evaluate_candidate(task.reference_program(), task, data, args.split)
    obs = dynsys.observation_mse(data.split(args.split).trajectories)
    text = format_report(program.name, task.tag, scenario.tag, args.split, report, ref, obs)
    sys.stdout.write(text)
    if args.report:
        Path(args.report).write_text(text)
    if not report.ok:
        return EXIT_FAIL
    if args.per_step:
        steps = np.arange(1, len(report.per_step) + 1)
        rows = ["t,mse,reference_mse"]
        rows += [
            f"{t},{float(a)!r},{float(b)!r}" for t, a, b in zip(steps, report.per_step, ref.per_step)
        ]
        Path(args.per_step).write_text("\n".join(rows) + "\n")
    return EXIT_OK


# ------------------------------------------------------------------ export


def _load_genotype(path):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise RuntimeError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise RuntimeError(f"{path}: not valid JSON ({exc})") from None
    task = None
    if isinstance(doc, dict) and "genotype" in doc:
        task, doc = doc.get("task"), doc["genotype"]
    try:
        return cgp.Genotype.from_dict(doc), task
    except (KeyError, TypeError, ValueError) as exc:
        raise RuntimeError(f"{path}: not a genotype ({exc})") from None


def cmd_export(args):
    if args.source.endswith(".mdsl"):
        program = _read_program(args.source)
        try:
            g = cgp.encode(program, args.max_nodes)
        except ValueError as exc:
            raise RuntimeError(f"cannot encode {args.source}: {exc}") from None
        task = args.task or _infer_task(program)
    else:
        g, task = _load_genotype(args.source)
        task = args.task or task
    if args.format == "json":
        doc = {"task": task, "genotype": g.to_dict()} if task else g.to_dict()
        _write(args.out, json.dumps(doc, indent=1) + "\n")
        print(f"active nodes: {len(g.active)} of {g.max_nodes}", file=sys.stderr)
        return EXIT_OK
    if task is None:
        if not args.generic:
            raise UsageError("pass --task or --generic to choose the decoding signature")
        sig = generic_signature(g.num_inputs, len(g.outputs))
    else:
        t = kalman.make_task(task)
        if len(t.signature.inputs) != g.num_inputs or len(t.signature.outputs) != len(g.outputs):
            raise UsageError(f"genotype arity does not match task {task!r}")
        sig = t.generic_signature if args.generic else t.signature
    program = cgp.decode(g, sig)
    _write(args.out, to_text(program))
    n_alias = len(program.statements) - len(g.active)
    print(
        f"statements: {len(program.statements)}  active nodes: {len(g.active)}"
        f"  output aliases: {n_alias}",
        file=sys.stderr,
    )
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "discover": cmd_discover,
    "evaluate": cmd_evaluate,
    "export": cmd_export,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"evofilter: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"evofilter: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RuntimeError, OSError, llmsearch.BackendError) as exc:
        print(f"evofilter: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
