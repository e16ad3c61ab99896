"""Acceptance checks; each records one PASS/FAIL line, repeated in the terminal summary."""
import os
import time

import numpy as np
import pytest

from mgsynth.components import make_prolongation, make_restriction
from mgsynth.cycles import reference_cycle
from mgsynth.evaluate import (
    BatchEvaluator,
    TreeEvaluator,
    make_context,
    rank_metric,
    run_iterative,
    run_preconditioned,
)
from mgsynth.gp import SearchConfig, evolve, nsga2_fronts, pareto_front
from mgsynth.grammar import compile_tree, count_lower_bound, cycle_tokens, deserialize, grammar_for_problem
from mgsynth.grid import (
    GridDesc,
    GridFunction,
    Stencil,
    assemble_matrix,
    assemble_prolongation,
    assemble_restriction,
    diag,
    diag_inv,
    lower,
    prolong_apply,
    restrict_apply,
    stencil_add,
    stencil_apply,
    stencil_mult,
    stencil_scale,
    stencil_sub,
    upper,
)
from mgsynth.ir import Executor
from mgsynth.problems import make_problem

from oracles import brute_force_fronts, to_vector


RESULTS = []


def report(name, ok, detail=""):
    line = f"{name}: {'PASS' if ok else 'FAIL'} {detail}".rstrip()
    RESULTS.append(line)
    print("\n" + line)
    assert ok, detail


def _rel(a, b):
    scale = max(np.abs(b).max(), 1e-300)
    return np.abs(a - b).max() / scale


def _random_stencil(rng, ndim):
    offsets = {tuple(int(v) for v in rng.integers(-1, 2, ndim)) for _ in range(rng.integers(1, 3**ndim + 1))}
    return Stencil({o: float(rng.standard_normal()) for o in offsets})


def test_ac1_oracle_equivalence():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        ndim = int(rng.integers(1, 4))
        level = int(rng.integers(2, 4)) if ndim < 3 else 2
        fine = GridDesc.from_level(level, ndim)  # at most 7 points per dimension
        coarse = fine.coarsen()
        a, b = _random_stencil(rng, ndim), _random_stencil(rng, ndim)
        u = rng.standard_normal(fine.dims)
        v = rng.standard_normal(coarse.dims)
        A, B = assemble_matrix(a, fine), assemble_matrix(b, fine)
        uv = to_vector(u)
        worst = max(worst, _rel(to_vector(stencil_apply(a, GridFunction(fine, u)).values[0]), A @ uv))
        R, P = make_restriction(ndim), make_prolongation(ndim)
        got_r = restrict_apply(R, GridFunction(fine, u), coarse).values[0]
        got_p = prolong_apply(P, GridFunction(coarse, v), fine).values[0]
        worst = max(worst, _rel(to_vector(got_r), assemble_restriction(R, fine, coarse) @ uv))
        worst = max(worst, _rel(to_vector(got_p), assemble_prolongation(P, coarse, fine) @ to_vector(v)))
        alpha = float(rng.standard_normal())
        worst = max(worst, _rel(assemble_matrix(stencil_add(a, b), fine), A + B))
        worst = max(worst, _rel(assemble_matrix(stencil_sub(a, b), fine), A - B))
        worst = max(worst, _rel(assemble_matrix(stencil_scale(alpha, a), fine), alpha * A))
        D, L, U = (assemble_matrix(f(a), fine) for f in (diag, lower, upper))
        worst = max(worst, _rel(D + L + U, A))
        assert np.allclose(L, np.tril(L)) and np.allclose(U, np.triu(U))
        if a.weight((0,) * ndim) != 0:
            worst = max(worst, _rel(assemble_matrix(diag_inv(a), fine), np.diag(1 / np.diag(A))))
        # composition is exact on interior rows, where no neighbour falls outside the grid
        AB = assemble_matrix(stencil_mult(a, b), fine)
        inner = np.all((np.indices(fine.dims) >= 2) & (np.indices(fine.dims) < np.array(fine.dims).reshape(
            (-1,) + (1,) * ndim) - 2), axis=0)
        rows = np.flatnonzero(inner.ravel(order="F"))
        if rows.size:
            worst = max(worst, _rel(AB[rows], (A @ B)[rows]))
    h = 0.25
    lap = Stencil({(0, 0): 4 / h**2, (1, 0): -1 / h**2, (-1, 0): -1 / h**2, (0, 1): -1 / h**2, (0, -1): -1 / h**2})
    T = 4 * np.eye(3) - np.eye(3, k=1) - np.eye(3, k=-1)
    expected = (np.kron(np.eye(3), T) - np.kron(np.eye(3, k=1) + np.eye(3, k=-1), np.eye(3))) / h**2
    exact = np.array_equal(assemble_matrix(lap, GridDesc((3, 3), (h, h))), expected)
    elapsed = time.perf_counter() - t0
    report("AC1 oracle equivalence", worst <= 1e-12 and exact and elapsed < 10,
           f"max rel err {worst:.1e}, 3x3 Poisson exact={exact}, {elapsed:.1f}s")


def _count(problem, gamma, nu1, nu2, omega):
    return run_iterative(reference_cycle(problem, gamma, nu1, nu2, "rbgs", omega), problem,
                         repeats=1, cost_model="ops").n


def test_ac2_reference_iteration_counts():
    t0 = time.perf_counter()
    p2 = make_problem("poisson2d", 9)
    got = {
        "2D V(1,0)": (_count(p2, 1, 1, 0, 1.15), 21),
        "2D V(1,1)": (_count(p2, 1, 1, 1, 1.15), 9),
        "2D V(2,1)": (_count(p2, 1, 2, 1, 1.15), 7),
        "2D V(2,2)": (_count(p2, 1, 2, 2, 1.15), 6),
        "3D V(2,2)": (_count(make_problem("poisson3d", 5), 1, 2, 2, 1.25), 7),
        "elasticity V(3,3)": (_count(make_problem("elasticity2d", 7), 1, 3, 3, 1.25), 7),
    }
    elapsed = time.perf_counter() - t0
    ok = all(abs(n - want) <= 1 for n, want in got.values()) and elapsed < 120
    detail = ", ".join(f"{k}={n} (want {w})" for k, (n, w) in got.items())
    report("AC2 reference iteration counts", ok, f"{detail}, {elapsed:.0f}s")


def test_elasticity_count_on_a_finer_hierarchy():
    # with a finer coarsest grid the elasticity V(3,3) count reaches the reference value
    n = _count(make_problem("elasticity2d", 9), 1, 3, 3, 1.25)
    assert abs(n - 7) <= 1


@pytest.mark.parametrize("cycle", [(1, 1, 1), (1, 2, 2), (2, 1, 1)])
def test_ac3_grammar_ir_equivalence(cycle):
    problem = make_problem("poisson2d", 6)
    pset = grammar_for_problem(problem, ("jacobi", "rbgs"))
    gamma, nu1, nu2 = cycle
    program = compile_tree(deserialize(cycle_tokens(problem.depth, gamma, nu1, nu2, "rbgs", 1.15), pset), pset)
    ref = reference_cycle(problem, gamma, nu1, nu2, "rbgs", 1.15)
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(5):
        x = rng.standard_normal(problem.operator(6).shape)
        b = rng.standard_normal(x.shape)
        got = Executor(program, make_context(problem)).run(x, b)
        want = Executor(ref, make_context(problem)).run(x, b)
        worst = max(worst, _rel(got, want))
    name = {(1, 1, 1): "V(1,1)", (1, 2, 2): "V(2,2)", (2, 1, 1): "W(1,1)"}[cycle]
    report(f"AC3 grammar/IR equivalence {name}", worst <= 1e-12, f"max rel diff {worst:.1e}")


def test_ac4_search_space_estimate():
    value = count_lower_bound(2, 4, 30)
    report("AC4 search-space estimate", 2.64e24 <= value <= 2.66e24, f"count={float(value):.4e}")


def test_ac5_nsga2_fronts():
    rng = np.random.default_rng(5)
    ok = True
    for _ in range(100):
        n = int(rng.integers(1, 51))
        fits = [tuple(f) for f in rng.integers(0, 8, (n, 2)).astype(float)]
        ok &= [sorted(f) for f in nsga2_fronts(fits)] == brute_force_fronts(fits)
    report("AC5 NSGA-II fronts", bool(ok), "100 random populations")


def _ac6_run(seed):
    ev = TreeEvaluator("poisson2d", 5, ("jacobi", "rbgs"), default_level=6, repeats=1, cost_model="ops")
    problem = ev.problem_at(6)
    pset = ev.pset(problem)
    cfg = SearchConfig(mu=16, lam=16, generations=25, initial_population_size=64, seed=seed)
    res = evolve(cfg, pset, BatchEvaluator(ev, 1))
    eps = problem.epsilon
    initial = list(res.archive[next(iter(res.archive))].values())[: cfg.initial_population_size]
    metrics = np.array([rank_metric(f, eps, "t,rho") for f in initial])
    median = float(np.median(metrics))
    finite_median = float(np.median(metrics[np.isfinite(metrics)]))
    front = pareto_front(res.population)
    best = min(rank_metric(p.fitness, eps, "t,rho") for p in front)
    worst_rho = max(p.fitness[1] for p in front)
    return median, finite_median, best, worst_rho


@pytest.mark.slow
def test_ac6_evolution_smoke():
    t0 = time.perf_counter()
    passes, lines = 0, []
    for seed in range(10):
        median, finite_median, best, worst_rho = _ac6_run(seed)
        ok = best * 2 <= median and worst_rho < 0.5
        passes += ok
        lines.append(f"seed {seed}: {'pass' if ok else 'fail'} median {median:.3g} (finite {finite_median:.3g}) "
                     f"best {best:.3g} max front rho {worst_rho:.3f}")
    elapsed = time.perf_counter() - t0
    print("\n" + "\n".join(lines))
    report("AC6 evolution smoke test", passes >= 9, f"{passes}/10 seeds pass, {elapsed:.0f}s")


def test_ac7_helmholtz_pipeline():
    t0 = time.perf_counter()
    problem = make_problem("helmholtz2d", 7)
    pre = run_preconditioned(reference_cycle(problem, 1, 0, 1, "rbgs", 1.25), problem, repeats=1, cost_model="ops")
    plain = run_preconditioned(None, problem, repeats=1, cost_model="ops")
    ok = pre.converged and (not plain.converged or plain.n > pre.n)
    elapsed = time.perf_counter() - t0
    report("AC7 Helmholtz pipeline", ok and elapsed < 300,
           f"preconditioned n={pre.n}, unpreconditioned n={plain.n} converged={plain.converged}, {elapsed:.0f}s")


def _ac8_run(tmp, workers, resume=None, generations=3):
    ev = TreeEvaluator("poisson2d", 3, ("jacobi", "rbgs"), default_level=5, repeats=1, cost_model="ops")
    pset = ev.pset(ev.problem_at(5))
    cfg = SearchConfig(mu=8, lam=8, generations=generations, initial_population_size=16,
                       init_depth=(4, 12), seed=11, workers=workers)
    with BatchEvaluator(ev, workers) as batch:
        res = evolve(cfg, pset, batch, checkpoint_dir=tmp, resume=resume)
    rows = sorted((p.key, repr(p.fitness)) for p in pareto_front(res.population))
    return "\n".join(",".join(r) for r in rows)


def test_ac8_determinism_and_restart(tmp_path):
    t0 = time.perf_counter()
    d1, d4, dr = (str(tmp_path / n) for n in ("w1", "w4", "restart"))
    f1 = _ac8_run(d1, 1)
    f4 = _ac8_run(d4, 4)
    _ac8_run(dr, 1, generations=1)
    fr = _ac8_run(dr, 1, resume=os.path.join(dr, "checkpoint_0001.json"))
    same_ck = all(
        open(os.path.join(d1, n), "rb").read() == open(os.path.join(dr, n), "rb").read()
        for n in ("checkpoint_0002.json", "checkpoint_0003.json"))
    elapsed = time.perf_counter() - t0
    ok = f1 == f4 and f1 == fr and same_ck and elapsed < 300
    report("AC8 determinism and restart", ok,
           f"workers 1 vs 4 equal={f1 == f4}, restart equal={f1 == fr}, checkpoints identical={same_ck}, "
           f"{elapsed:.0f}s")


def test_ac9_generalization_schedule():
    ev = TreeEvaluator("poisson2d", 3, ("jacobi", "rbgs"), repeats=1, cost_model="ops")
    pset = ev.pset(ev.problem_at(5))
    cfg = SearchConfig(mu=8, lam=8, generations=7, initial_population_size=16, init_depth=(4, 12),
                       levels=(5, 6), generalization_interval=5, seed=2)
    levels_seen = []

    class Counting(BatchEvaluator):
        def __call__(self, keys, level=None):
            levels_seen.append((level, len(keys)))
            return super().__call__(keys, level)

    with Counting(ev, 1) as batch:
        res = evolve(cfg, pset, batch)
    # initial 16, then 8 children for generations 1..4 on level 5; at generation 5 the
    # population of 8 is re-evaluated on level 6 before its 8 children
    expected = [(5, 16)] + [(5, 8)] * 4 + [(6, 8), (6, 8)] + [(6, 8)] * 2
    finite = sum(np.isfinite(p.fitness[0]) and p.fitness[0] < 1e100 for p in res.population)
    ok = levels_seen == expected and batch.invocations == 16 + 8 * 7 + 8 and finite >= cfg.mu / 2
    report("AC9 generalization schedule", ok,
           f"batches={levels_seen}, invocations={batch.invocations}, finite={finite}/{cfg.mu}")
