"""Grammar-guided evolutionary synthesis of geometric multigrid solvers.

The package is organised bottom-up: ``grid`` (grids and stencils),
``components`` (smoothers, transfers, Krylov solvers), ``ir`` (multigrid
states and program generation), ``grammar`` (typed productions and
derivation trees), ``gp`` (tree operators and NSGA-II search),
``evaluate`` (fitness of solver programs), ``problems`` and ``cycles``
(benchmarks and classical cycles), ``render`` and ``cli``.
"""
from .cycles import parse_cycle, reference_cycle, reference_state
from .evaluate import (
    BatchEvaluator,
    SolveReport,
    TreeEvaluator,
    rank_metric,
    run_iterative,
    run_preconditioned,
)
from .gp import SearchConfig, evolve, nsga2_fronts, pareto_front
from .grammar import (
    DerivationTree,
    compile_tree,
    count_lower_bound,
    cycle_tokens,
    deserialize,
    generate_grammar,
    grammar_for_problem,
    serialize,
)
from .ir import generate_program
from .problems import PROBLEMS, make_problem

__version__ = "0.1.0"

__all__ = [
    "BatchEvaluator",
    "DerivationTree",
    "PROBLEMS",
    "SearchConfig",
    "SolveReport",
    "TreeEvaluator",
    "compile_tree",
    "count_lower_bound",
    "cycle_tokens",
    "deserialize",
    "evolve",
    "generate_grammar",
    "generate_program",
    "grammar_for_problem",
    "make_problem",
    "nsga2_fronts",
    "pareto_front",
    "parse_cycle",
    "rank_metric",
    "reference_cycle",
    "reference_state",
    "run_iterative",
    "run_preconditioned",
    "serialize",
]
