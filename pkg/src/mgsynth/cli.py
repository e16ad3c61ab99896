"""Command-line runner: evolve, evaluate, bench and render.

Exit status is 0 on success, 2 for invalid configuration or input and 3 when
a run fails at runtime.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from .cycles import parse_cycle, reference_cycle
from .evaluate import (
    REPORT_HEADER,
    BatchEvaluator,
    TreeEvaluator,
    rank_metric,
    report_row,
    run_iterative,
    run_preconditioned,
)
from .gp import SearchConfig, evolve, latest_checkpoint, pareto_front
from .grammar import GrammarError, compile_tree, deserialize, grammar_for_problem, serialize, type_check
from .problems import DEFAULT_LEVELS, PROBLEMS, make_problem
from .render import program_dot

log = logging.getLogger("mgsynth")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

BENCH_HEADER = ["cycle", "n", "t", "rho", "converged"]


def front_header(mode: str) -> list:
    return ["tree", "t", "rho" if mode == "t,rho" else "n", "rank_metric"]


class ConfigError(Exception):
    """Invalid configuration, command-line values or input files."""


# --------------------------------------------------------------------------
# configuration

DEFAULT_CONFIG = {
    "problem": {"name": "poisson2d", "depth": "5", "level": ""},
    "search": {
        "mu": "256",
        "lambda": "256",
        "generations": "250",
        "initial_population": "2048",
        "crossover_probability": str(2.0 / 3.0),
        "terminal_mutation_probability": str(1.0 / 3.0),
        "init_depth_min": "10",
        "init_depth_max": "40",
        "mutation_depth_min": "1",
        "mutation_depth_max": "8",
        "max_size": "150",
        "generalization_interval": "0",
        "levels": "",
        "seed": "0",
        "workers": "1",
        "random_search": "no",
    },
    "evaluation": {
        "cost_model": "wall",
        "repeats": "3",
        "max_iter": "",
        "epsilon": "",
        "mode": "",
        "smoothers": "",
        "stagnation": "5",
        "early_solve": "yes",
    },
    "output": {"top": "50", "checkpoints": "yes"},
}


@dataclass
class RunManifest:
    """Everything needed to reproduce one run."""

    problem: str
    depth: int
    level: int | None
    search: SearchConfig
    evaluator: TreeEvaluator
    out: str | None = None
    top: int = 50
    checkpoints: bool = True
    extra: dict = field(default_factory=dict)

    @property
    def schedule(self) -> tuple:
        return self.search.levels or (self.level,)


def _int_list(text: str) -> tuple:
    text = text.strip()
    if not text:
        return ()
    return tuple(int(v) for v in text.replace(";", ",").split(","))


def _opt(value: str, cast):
    value = value.strip()
    return cast(value) if value else None


def load_config(path: str | None) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    cp.read_dict(DEFAULT_CONFIG)
    if path is not None:
        if not os.path.isfile(path):
            raise ConfigError(f"config file {path!r} not found")
        try:
            cp.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path!r}: {exc}") from exc
    return cp


def build_manifest(cp: configparser.ConfigParser, args) -> RunManifest:
    """Merge the config file with command-line overrides and validate the result."""
    try:
        p = cp["problem"]
        s = cp["search"]
        e = cp["evaluation"]
        name = getattr(args, "problem", None) or p.get("name")
        if name not in PROBLEMS:
            raise ConfigError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}")
        depth = p.getint("depth")
        level = _opt(p.get("level"), int)
        levels = _int_list(getattr(args, "levels", None) or s.get("levels"))
        if levels and level is None:
            level = levels[-1]
        if level is None:
            level = DEFAULT_LEVELS[name]
        if level - depth + 1 < 1:
            raise ConfigError(f"level {level} is too small for {depth} grid levels")
        seed = args.seed if getattr(args, "seed", None) is not None else s.getint("seed")
        workers = args.workers if getattr(args, "workers", None) is not None else s.getint("workers")
        search = SearchConfig(
            mu=s.getint("mu"),
            lam=s.getint("lambda"),
            generations=s.getint("generations"),
            initial_population_size=s.getint("initial_population"),
            crossover_probability=s.getfloat("crossover_probability"),
            terminal_mutation_probability=s.getfloat("terminal_mutation_probability"),
            init_depth=(s.getint("init_depth_min"), s.getint("init_depth_max")),
            mutation_depth=(s.getint("mutation_depth_min"), s.getint("mutation_depth_max")),
            max_size=s.getint("max_size"),
            generalization_interval=s.getint("generalization_interval"),
            levels=levels,
            seed=seed,
            workers=workers,
            random_search=s.getboolean("random_search"),
        )
        epsilon = getattr(args, "epsilon", None)
        if epsilon is None:
            epsilon = _opt(e.get("epsilon"), float)
        if epsilon is not None and not 0 < epsilon < 1:
            raise ConfigError("epsilon must lie in (0, 1)")
        smoothers = tuple(v.strip() for v in e.get("smoothers").split(",") if v.strip()) or None
        cost_model = e.get("cost_model")
        if cost_model not in ("wall", "ops"):
            raise ConfigError(f"unknown cost model {cost_model!r}")
        mode = _opt(e.get("mode"), str)
        if mode is not None and mode not in ("t,rho", "t,n"):
            raise ConfigError(f"unknown fitness mode {mode!r}")
        evaluator = TreeEvaluator(
            problem=name,
            depth=depth,
            smoothers=smoothers,
            mode=mode,
            epsilon=epsilon,
            max_iter=_opt(e.get("max_iter"), int),
            repeats=e.getint("repeats"),
            cost_model=cost_model,
            default_level=level,
            early_solve=e.getboolean("early_solve"),
            stagnation=_opt(e.get("stagnation"), int),
        )
        top = getattr(args, "top", None)
        if top is None:
            top = cp["output"].getint("top")
        return RunManifest(name, depth, level, search, evaluator, getattr(args, "out", None), top,
                           cp["output"].getboolean("checkpoints"))
    except (ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


# --------------------------------------------------------------------------
# tree files

def write_tree_file(path: str, key: str, problem: str, depth: int):
    with open(path, "w") as fh:
        fh.write(f"# problem: {problem}\n# depth: {depth}\n{key}\n")


def read_tree_file(path: str) -> dict:
    """Parse a tree file: ``# key: value`` header lines followed by the serialization."""
    if not os.path.isfile(path):
        raise ConfigError(f"tree file {path!r} not found")
    header, body = {}, []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                k, _, v = line[1:].partition(":")
                header[k.strip()] = v.strip()
            else:
                body.append(line)
    if not body:
        raise ConfigError(f"tree file {path!r} holds no tree")
    header["tree"] = " ".join(body)
    if "depth" in header:
        header["depth"] = int(header["depth"])
    return header


def _load_tree(args, cp):
    info = read_tree_file(args.tree)
    if args.problem is None and "problem" in info:
        args.problem = info["problem"]
    if "depth" in info:
        cp["problem"]["depth"] = str(info["depth"])
    if getattr(args, "level", None) is not None:
        cp["problem"]["level"] = str(args.level)
    man = build_manifest(cp, args)
    problem = make_problem(man.problem, man.level, depth=man.depth)
    pset = grammar_for_problem(problem, man.evaluator.smoothers, early_solve=man.evaluator.early_solve)
    try:
        tree = deserialize(info["tree"], pset)
    except GrammarError as exc:
        raise ConfigError(f"invalid tree: {exc}") from exc
    ok, diags = type_check(tree, pset)
    if not ok:
        raise ConfigError("tree does not type-check: " + "; ".join(map(str, diags)))
    return man, problem, pset, tree


# --------------------------------------------------------------------------
# CSV helpers

def _open_out(path):
    if path is None or path == "-":
        return sys.stdout, False
    return open(path, "w", newline=""), True


def _write_csv(path, header, rows):
    fh, close = _open_out(path)
    try:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    finally:
        if close:
            fh.close()


def _num(v) -> str:
    return repr(float(v))


# --------------------------------------------------------------------------
# subcommands

def cmd_evolve(args) -> int:
    cp = load_config(args.config)
    if args.generations is not None:
        cp["search"]["generations"] = str(args.generations)
    man = build_manifest(cp, args)
    out = man.out or "run"
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "run.ini"), "w") as fh:
        cp["problem"]["name"] = man.problem
        cp["problem"]["level"] = str(man.level)
        cp["search"]["seed"] = str(man.search.seed)
        cp["search"]["levels"] = ",".join(map(str, man.search.levels))
        cp.write(fh)

    ev = man.evaluator
    first = man.schedule[0]
    pset = ev.pset(ev.problem_at(first))
    ckdir = os.path.join(out, "checkpoints") if man.checkpoints else None
    resume = None
    if args.resume:
        resume = latest_checkpoint(args.resume) if os.path.isdir(args.resume) else args.resume
        if resume is None or not os.path.isfile(resume):
            raise ConfigError(f"no checkpoint found at {args.resume!r}")

    def progress(g, population):
        best = min(p.fitness for p in population)
        log.info("generation %d: best t=%.3g", g, best[0])

    with BatchEvaluator(ev, man.search.workers) as batch:
        result = evolve(man.search, pset, batch, checkpoint_dir=ckdir, resume=resume, on_generation=progress)

    level = result.level if result.level is not None else man.level
    eps = ev.epsilon_at(level)
    mode = ev.fitness_mode
    front = sorted(pareto_front(result.population), key=lambda p: (p.fitness, p.key))
    _write_csv(os.path.join(out, "front.csv"), front_header(mode),
               [[p.key, _num(p.fitness[0]), _num(p.fitness[1]), _num(rank_metric(p.fitness, eps, mode))]
                for p in front])
    _write_csv(os.path.join(out, "population.csv"), front_header(mode),
               [[p.key, _num(p.fitness[0]), _num(p.fitness[1]), _num(rank_metric(p.fitness, eps, mode))]
                for p in result.population])
    with open(os.path.join(out, "archive.json"), "w") as fh:
        json.dump({lv: {k: list(f) for k, f in d.items()} for lv, d in result.archive.items()}, fh)

    if man.top > 0:
        # final evaluation of the most promising individuals seen on the last level
        store = result.archive.get(str(level), result.archive.get("default", {}))
        ranked = sorted(store.items(), key=lambda kv: (rank_metric(kv[1], eps, mode), kv[0]))
        ranked = [kv for kv in ranked if np.isfinite(rank_metric(kv[1], eps, mode))][: man.top]
        rows = []
        for key, _ in ranked:
            rep = ev.report(key, level)
            rows.append(report_row(key, level, rep, eps, mode))
        rows.sort(key=lambda r: r[-1])
        _write_csv(os.path.join(out, "final.csv"), REPORT_HEADER, rows)
    print(f"{len(front)} front members written to {os.path.join(out, 'front.csv')}")
    return EXIT_OK


def _evaluate_program(program, problem, man):
    ev = man.evaluator
    if problem.preconditioned:
        return run_preconditioned(program, problem, ev.epsilon, ev.max_iter or 20000, ev.repeats, ev.cost_model)
    return run_iterative(program, problem, ev.epsilon, ev.max_iter or 100, ev.repeats, ev.cost_model)


def cmd_evaluate(args) -> int:
    cp = load_config(args.config)
    man, problem, pset, tree = _load_tree(args, cp)
    rep = _evaluate_program(compile_tree(tree, pset), problem, man)
    eps = problem.epsilon if man.evaluator.epsilon is None else man.evaluator.epsilon
    row = report_row(serialize(tree), problem.l_max, rep, eps, man.evaluator.fitness_mode)
    _write_csv(args.out, REPORT_HEADER, [row])
    return EXIT_OK


def cmd_bench(args) -> int:
    cp = load_config(args.config)
    if args.level is not None:
        cp["problem"]["level"] = str(args.level)
    man = build_manifest(cp, args)
    try:
        cycles = [(c, parse_cycle(c)) for c in _split_cycles(args.cycles)]
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    problem = make_problem(man.problem, man.level, depth=man.depth)
    rows = []
    for text, (gamma, nu1, nu2) in cycles:
        program = reference_cycle(problem, gamma, nu1, nu2, args.smoother, args.omega)
        rep = _evaluate_program(program, problem, man)
        rows.append([text, rep.n, _num(rep.t), _num(rep.rho), bool(rep.converged)])
    _write_csv(args.out, BENCH_HEADER, rows)
    return EXIT_OK


def _split_cycles(text: str) -> list:
    # commas separate cycles and smoothing counts alike, so split at closing parentheses
    out, cur = [], ""
    for ch in text or "":
        cur += ch
        if ch == ")":
            out.append(cur.strip(" ,"))
            cur = ""
    if cur.strip(" ,"):
        out.append(cur.strip(" ,"))
    return out


def cmd_render(args) -> int:
    cp = load_config(args.config)
    man, problem, pset, tree = _load_tree(args, cp)
    text = program_dot(compile_tree(tree, pset))
    fh, close = _open_out(args.out)
    try:
        fh.write(text)
    finally:
        if close:
            fh.close()
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point

def _common(p):
    p.add_argument("--problem", choices=sorted(PROBLEMS), help="benchmark problem")
    p.add_argument("--config", help="INI-style configuration file")
    p.add_argument("--epsilon", type=float, help="target residual reduction")
    p.add_argument("--out", help="output file (directory for evolve); '-' or absent means stdout")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mgsynth", description="Grammar-guided evolution of multigrid solvers.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evolve", help="run the evolutionary search")
    _common(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--levels", help="comma-separated level schedule, e.g. 5,6")
    p.add_argument("--generations", type=int)
    p.add_argument("--top", type=int, help="number of most promising individuals to re-evaluate at the end")
    p.add_argument("--resume", help="checkpoint file or directory to continue from")
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("evaluate", help="evaluate a tree file")
    p.add_argument("tree")
    _common(p)
    p.add_argument("--level", type=int)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="evaluate classical reference cycles")
    _common(p)
    p.add_argument("--level", type=int)
    p.add_argument("--cycles", default="V(1,1)", help='e.g. "V(1,0),V(2,2),W(1,1),F(1,1)"')
    p.add_argument("--smoother", default="rbgs")
    p.add_argument("--omega", type=float, default=1.0)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("render", help="draw a tree's cycle as a DOT graph")
    p.add_argument("tree")
    _common(p)
    p.add_argument("--level", type=int)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"mgsynth: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        print(f"mgsynth: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
