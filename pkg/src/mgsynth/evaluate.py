"""Running generated programs as solvers and turning the outcome into fitness values."""
from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass

import numpy as np

from .components import CoarseSolverSpec
from .ir import ExecutionContext, Executor, SolverProgram

BIG = 1e100
DIVERGENCE_FACTOR = 1e12
OPS_SECONDS = 1e-9  # nominal seconds per counted operation in the deterministic cost model
PRECONDITIONED_MAX_ITER = 20000


@dataclass
class SolveReport:
    iterations: int
    time_per_iteration: float
    convergence_factor: float
    converged: bool
    final_relative_residual: float

    @property
    def n(self) -> int:
        return self.iterations

    @property
    def t(self) -> float:
        return self.time_per_iteration

    @property
    def rho(self) -> float:
        return self.convergence_factor


@dataclass(frozen=True)
class Fitness:
    objectives: tuple
    mode: str = "t,rho"

    def __getitem__(self, i):
        return self.objectives[i]

    @property
    def finite(self) -> bool:
        return self.objectives[0] < BIG and self.objectives[1] < BIG


SENTINEL = (BIG, BIG)


def make_context(problem, preconditioner: bool = False) -> ExecutionContext:
    spec = CoarseSolverSpec(kind=problem.coarse_solver)
    return ExecutionContext(problem.hierarchy(preconditioner=preconditioner), problem.restriction,
                            problem.prolongation, spec)


def _norm(v) -> float:
    return float(np.linalg.norm(v.ravel()))


def _check_levels(program: SolverProgram, problem):
    if program.levels > problem.depth:
        raise ValueError(f"program spans {program.levels} levels but the problem hierarchy has {problem.depth}")


def _hopeless(n, rel, epsilon, max_iter, stagnation) -> bool:
    # extrapolate the observed average rate; abort runs that cannot reach epsilon in time
    if stagnation is None or n < stagnation:
        return False
    if rel >= 1.0:
        return True
    return n * math.log(epsilon) / math.log(rel) > 2 * max_iter


def _iterate(program, problem, epsilon, max_iter, stagnation=None):
    """One full solve; returns (iterations, converged, relative residual, work per iteration, context).

    With ``stagnation = k`` the run is abandoned after ``k`` or more
    iterations once the average contraction so far projects more than
    ``2 * max_iter`` iterations to reach ``epsilon``.
    """
    ctx = make_context(problem)
    ex = Executor(program, ctx)
    A = problem.operator(problem.l_max)
    b = problem.rhs().astype(ctx.dtype)
    x = np.zeros_like(b)
    r0 = _norm(b - A.apply(x))
    if r0 == 0.0:
        return 0, True, 0.0, 0.0, ctx
    rel = 1.0
    n = 0
    start = ctx.work
    with np.errstate(all="ignore"):
        while rel > epsilon and n < max_iter:
            x = ex.run(x, b)
            n += 1
            rel = _norm(b - A.apply(x)) / r0
            if not np.isfinite(rel) or rel > DIVERGENCE_FACTOR:
                return n, False, rel, (ctx.work - start) / n, ctx
            if rel > epsilon and _hopeless(n, rel, epsilon, max_iter, stagnation):
                return n, False, rel, (ctx.work - start) / n, ctx
    return n, rel <= epsilon and ctx.coarse_failures == 0, rel, (ctx.work - start) / max(n, 1), ctx


def run_iterative(program: SolverProgram, problem, epsilon=None, max_iter=100, repeats=3,
                  cost_model="wall", warmup=True, stagnation=None) -> SolveReport:
    """Apply the program as a stationary iteration from ``x = 0`` until the residual drops by ``epsilon``.

    ``cost_model="wall"`` times ``repeats`` full solves with a monotonic clock;
    ``"ops"`` reports a deterministic operation count scaled to nominal seconds.
    With ``warmup`` an untimed solve precedes the timed ones.  ``stagnation``
    enables the early abort of ``_iterate``.
    """
    _check_levels(program, problem)
    epsilon = problem.epsilon if epsilon is None else epsilon
    n, converged, rel, work, _ = _iterate(program, problem, epsilon, max_iter, stagnation)
    rho = rel ** (1.0 / n) if n > 0 and np.isfinite(rel) and rel > 0 else (1.0 if n == 0 else float("inf"))
    if n > 0 and rel == 0.0:
        rho = 0.0
    if cost_model == "ops":
        t = work * OPS_SECONDS
    elif cost_model == "wall":
        t = float("inf")
        if converged and n > 0:
            t = _time_solves(program, problem, n, repeats, warmup)
    else:
        raise ValueError(f"unknown cost model {cost_model!r}")
    return SolveReport(n, t, rho, converged, rel)


def _time_solves(program, problem, n, repeats, warmup) -> float:
    ctx = make_context(problem)
    ex = Executor(program, ctx)
    b = problem.rhs().astype(ctx.dtype)
    runs = []
    for rep in range(repeats + (1 if warmup else 0)):
        x = np.zeros_like(b)
        t0 = time.perf_counter()
        for _ in range(n):
            x = ex.run(x, b)
        runs.append((time.perf_counter() - t0) / n)
    if warmup:
        runs = runs[1:]
    return float(np.mean(runs))


def preconditioned_bicgstab(A, b, precondition, epsilon, max_iter=PRECONDITIONED_MAX_ITER):
    """Right-preconditioned BiCGSTAB from ``x = 0``; returns (x, iterations, converged, relative residual).

    Stops when ``||r_i|| / ||r_0|| < epsilon``.  A vanishing denominator or a
    non-finite residual counts as breakdown and ends the run unconverged.
    """
    x = np.zeros_like(b)
    r = b - A.apply(x)
    r0 = _norm(r)
    if r0 == 0.0:
        return x, 0, True, 0.0
    r_hat = r.copy()
    alpha = rho_prev = omega = 1.0
    p = np.zeros_like(r)
    q = np.zeros_like(r)
    rel = 1.0
    with np.errstate(all="ignore"):
        for i in range(1, max_iter + 1):
            rho = np.vdot(r_hat, r)
            if rho == 0 or omega == 0:
                return x, i - 1, False, rel
            beta = (rho / rho_prev) * (alpha / omega)
            p = r + beta * (p - omega * q)
            y = precondition(p)
            q = A.apply(y)
            denom = np.vdot(r_hat, q)
            if denom == 0:
                return x, i - 1, False, rel
            alpha = rho / denom
            h = x + alpha * y
            s = r - alpha * q
            z = precondition(s)
            t = A.apply(z)
            tt = np.vdot(t, t)
            if tt == 0:
                return h, i, False, _norm(s) / r0
            omega = np.vdot(t, s) / tt
            x = h + omega * z
            r = s - omega * t
            rho_prev = rho
            rel = _norm(r) / r0
            if not np.isfinite(rel):
                return x, i, False, rel
            if rel < epsilon:
                return x, i, True, rel
    return x, max_iter, False, rel


def run_preconditioned(program: SolverProgram | None, problem, epsilon=None, max_iter=PRECONDITIONED_MAX_ITER,
                       repeats=3, cost_model="wall", warmup=True) -> SolveReport:
    """BiCGSTAB on ``A`` with one application of ``program`` (on the ``M`` hierarchy) per preconditioner solve.

    ``program=None`` runs unpreconditioned BiCGSTAB.
    """
    epsilon = problem.epsilon if epsilon is None else epsilon
    A = problem.operator(problem.l_max)
    b = problem.rhs().astype(complex)

    def build():
        if program is None:
            return (lambda v: v), None
        _check_levels(program, problem)
        ctx = make_context(problem, preconditioner=True)
        ex = Executor(program, ctx)
        return (lambda v: ex.run(np.zeros_like(v), v)), ctx

    precondition, ctx = build()
    start = time.perf_counter()
    work0 = 0.0 if ctx is None else ctx.work
    _, n, converged, rel = preconditioned_bicgstab(A, b, precondition, epsilon, max_iter)
    elapsed = time.perf_counter() - start
    if ctx is not None and ctx.coarse_failures:
        converged = False
    rho = rel ** (1.0 / n) if n > 0 and rel > 0 and np.isfinite(rel) else 1.0
    if cost_model == "ops":
        nnz = sum(len(s) for s in [A.stencil]) * A.grid.size
        work = (0.0 if ctx is None else ctx.work - work0) + 2 * n * nnz
        t = work / max(n, 1) * OPS_SECONDS
    elif cost_model == "wall":
        times = [elapsed / max(n, 1)]
        if converged and n > 0:
            times = []
            for _ in range(repeats):
                precondition, _ = build()
                t0 = time.perf_counter()
                preconditioned_bicgstab(A, b, precondition, epsilon, max_iter)
                times.append((time.perf_counter() - t0) / n)
        t = float(np.mean(times)) if converged else float("inf")
    else:
        raise ValueError(f"unknown cost model {cost_model!r}")
    return SolveReport(n, t, rho, converged, rel)


def fitness_of(report: SolveReport, mode: str = "t,rho") -> Fitness:
    """(t, rho) or (t, n) objectives; unconverged runs get the sentinel pair."""
    if mode not in ("t,rho", "t,n"):
        raise ValueError(f"unknown fitness mode {mode!r}")
    if not report.converged or not np.isfinite(report.t):
        return Fitness(SENTINEL, mode)
    second = report.rho if mode == "t,rho" else float(report.n)
    return Fitness((float(report.t), float(second)), mode)


def iterations_needed(rho: float, epsilon: float) -> float:
    """Iterations for a residual reduction of ``epsilon`` at convergence factor ``rho``."""
    if rho <= 0.0:
        return 1.0
    if rho >= 1.0:
        return math.inf
    return math.log(epsilon) / math.log(rho)


def rank_metric(fitness, epsilon: float, mode: str | None = None) -> float:
    """Estimated solving time ``t * ln(eps) / ln(rho)`` (or ``t * n`` in (t, n) mode)."""
    if isinstance(fitness, Fitness):
        mode = mode or fitness.mode
        t, second = fitness.objectives
    else:
        t, second = fitness
        mode = mode or "t,rho"
    if t >= BIG or second >= BIG:
        return math.inf
    if mode == "t,n":
        return t * second
    if second >= 1.0:
        return math.inf
    return t * iterations_needed(second, epsilon)


def report_row(key: str, level: int, report: SolveReport, epsilon: float, mode: str = "t,rho") -> list:
    fit = fitness_of(report, mode)
    return [key, level, report.n, report.t, report.rho, bool(report.converged), rank_metric(fit, epsilon)]


REPORT_HEADER = ["tree", "level", "n", "t", "rho", "converged", "rank_metric"]


# --------------------------------------------------------------------------
# evaluation of serialized trees, optionally spread over worker processes

PIN_ENV = "MGSYNTH_PIN_WORKERS"


@dataclass
class TreeEvaluator:
    """Picklable callable ``(key, level) -> fitness pair`` for one benchmark.

    Problems, grammars and compiled programs are cached per process.  Any
    exception while compiling or running a tree yields the sentinel fitness.
    """

    problem: str
    depth: int = 5
    smoothers: tuple | None = None
    mode: str | None = None
    epsilon: float | None = None
    max_iter: int | None = None
    repeats: int = 3
    cost_model: str = "wall"
    default_level: int | None = None
    early_solve: bool = True
    stagnation: int | None = 5

    def __post_init__(self):
        self._problems = {}
        self._psets = {}

    def __getstate__(self):
        state = dict(self.__dict__)
        state["_problems"] = {}
        state["_psets"] = {}
        return state

    @property
    def fitness_mode(self) -> str:
        if self.mode is not None:
            return self.mode
        return "t,n" if self.problem == "helmholtz2d" else "t,rho"

    def problem_at(self, level):
        from .problems import make_problem

        level = self.default_level if level is None else level
        if level not in self._problems:
            self._problems[level] = make_problem(self.problem, level, depth=self.depth)
        return self._problems[level]

    def pset(self, problem):
        from .grammar import grammar_for_problem

        key = problem.depth
        if key not in self._psets:
            self._psets[key] = grammar_for_problem(problem, self.smoothers, early_solve=self.early_solve)
        return self._psets[key]

    def report(self, key: str, level=None) -> SolveReport:
        from .grammar import compile_tree, deserialize

        problem = self.problem_at(level)
        pset = self.pset(problem)
        program = compile_tree(deserialize(key, pset), pset)
        if problem.preconditioned:
            return run_preconditioned(program, problem, self.epsilon, self.max_iter or PRECONDITIONED_MAX_ITER,
                                      self.repeats, self.cost_model)
        return run_iterative(program, problem, self.epsilon, self.max_iter or 100, self.repeats, self.cost_model,
                             stagnation=self.stagnation)

    def __call__(self, key: str, level=None) -> tuple:
        try:
            rep = self.report(key, level)
        except (ValueError, ArithmeticError, FloatingPointError, np.linalg.LinAlgError):
            return SENTINEL
        return fitness_of(rep, self.fitness_mode).objectives

    def epsilon_at(self, level=None) -> float:
        return self.problem_at(level).epsilon if self.epsilon is None else self.epsilon


def _pin_worker(counter, ncpu):
    with counter.get_lock():
        slot = counter.value
        counter.value += 1
    try:
        os.sched_setaffinity(0, {slot % ncpu})
    except (AttributeError, OSError):
        pass


def _eval_one(args):
    evaluator, key, level = args
    return evaluator(key, level)


class BatchEvaluator:
    """``(keys, level) -> fitness list`` using a process pool when ``workers > 1``.

    Results are returned in input order, so the search is unaffected by the
    number of workers.  Setting ``MGSYNTH_PIN_WORKERS=1`` pins each worker to
    its own core.
    """

    def __init__(self, evaluator: TreeEvaluator, workers: int = 1):
        self.evaluator = evaluator
        self.workers = max(1, int(workers))
        self.calls = 0
        self.invocations = 0
        self._pool = None

    def _get_pool(self):
        if self._pool is None:
            import multiprocessing as mp
            from concurrent.futures import ProcessPoolExecutor

            ctx = mp.get_context("fork") if hasattr(os, "fork") else mp.get_context()
            init, initargs = None, ()
            if os.environ.get(PIN_ENV, "0") not in ("", "0", "false", "no"):
                init, initargs = _pin_worker, (ctx.Value("i", 0), os.cpu_count() or 1)
            self._pool = ProcessPoolExecutor(self.workers, mp_context=ctx, initializer=init, initargs=initargs)
        return self._pool

    def __call__(self, keys, level=None) -> list:
        self.calls += 1
        self.invocations += len(keys)
        if self.workers == 1 or len(keys) <= 1:
            return [self.evaluator(k, level) for k in keys]
        pool = self._get_pool()
        return list(pool.map(_eval_one, [(self.evaluator, k, level) for k in keys]))

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
