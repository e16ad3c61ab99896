"""Classical V-, W- and F-cycles assembled from the state-transition functions.

These serve as baselines for the search and as an independent construction
path against which compiled derivation trees are cross-checked.
"""
from __future__ import annotations

from .components import omega_index
from .ir import (
    Entity,
    MultigridState,
    generate_program,
    initial_state,
    mk_apply,
    mk_cgc,
    mk_coarse_grid_solver,
    mk_coarsening,
    mk_residual,
    mk_update,
)

SMOOTHER_ALIASES = {
    "rbgs": ("jacobi", "red-black"),
    "rb-gs": ("jacobi", "red-black"),
    "rb-gauss-seidel": ("jacobi", "red-black"),
    "jacobi": ("jacobi", None),
    "collective-jacobi": ("collective-jacobi", None),
}


def smoother_parts(smoother: str):
    """Split a smoother name into (inverse-splitting entity name, partition)."""
    key = smoother.lower()
    if key in SMOOTHER_ALIASES:
        return SMOOTHER_ALIASES[key]
    if key.startswith("block"):
        return key, None
    raise ValueError(f"unknown smoother {smoother!r}")


def _smooth(state: MultigridState, name, partition, w) -> MultigridState:
    if state.c is None:
        state = mk_residual(Entity("operator", state.level), state)
    state = mk_apply(Entity("smoother", state.level, name), state)
    return mk_update(w, partition, state)


def _cycle(state: MultigridState, coarsest: int, gamma, nu1, nu2, name, partition, w, fcycle):
    lv = state.level
    for _ in range(nu1):
        state = _smooth(state, name, partition, w)
    if state.c is None:
        state = mk_residual(Entity("operator", lv), state)
    one = omega_index(1.0)
    if lv + 1 == coarsest:
        state = mk_coarse_grid_solver(Entity("coarse-solver", lv + 1), Entity("restriction", lv),
                                      Entity("prolongation", lv), state)
        state = mk_update(one, None, state)
    else:
        state = mk_apply(Entity("restriction", lv), state)
        coarse = mk_coarsening(Entity("operator", lv + 1), Entity("approximation", lv + 1), state)
        if fcycle:
            coarse = _cycle(coarse, coarsest, 1, nu1, nu2, name, partition, w, True)
            coarse = _cycle(coarse, coarsest, 1, nu1, nu2, name, partition, w, False)
        else:
            for _ in range(gamma):
                coarse = _cycle(coarse, coarsest, gamma, nu1, nu2, name, partition, w, False)
        state = mk_update(one, None, mk_cgc(Entity("prolongation", lv), coarse))
    for _ in range(nu2):
        state = _smooth(state, name, partition, w)
    return state


def reference_state(levels: int, gamma=1, nu1=1, nu2=1, smoother="rbgs", omega=1.0) -> MultigridState:
    """Final IR state of one cycle on ``levels`` grids.

    ``gamma`` is 1 (V), 2 (W) or ``"F"`` for the F-cycle, which on each level
    recurses once with an F-cycle and once with a V-cycle.
    """
    if levels < 2:
        raise ValueError("a cycle needs at least two levels")
    fcycle = isinstance(gamma, str)
    if fcycle and gamma.upper() != "F":
        raise ValueError(f"unknown cycle type {gamma!r}")
    if not fcycle and gamma not in (1, 2):
        raise ValueError("gamma must be 1, 2 or 'F'")
    name, partition = smoother_parts(smoother)
    return _cycle(initial_state(), levels - 1, gamma, nu1, nu2, name, partition, omega_index(omega), fcycle)


def reference_cycle(problem, gamma=1, nu1=1, nu2=1, smoother="rbgs", omega=1.0):
    """Program of one V/W/F-cycle over the problem's hierarchy."""
    return generate_program(reference_state(problem.depth, gamma, nu1, nu2, smoother, omega))


def parse_cycle(spec: str):
    """``"V(2,2)"`` -> ``(1, 2, 2)``; ``"W(1,1)"`` -> ``(2, 1, 1)``; ``"F(1,1)"`` -> ``("F", 1, 1)``."""
    s = spec.strip().upper()
    if len(s) < 5 or s[0] not in "VWF" or s[1] != "(" or s[-1] != ")":
        raise ValueError(f"cannot parse cycle {spec!r}")
    nu = s[2:-1].split(",")
    if len(nu) != 2:
        raise ValueError(f"cannot parse cycle {spec!r}")
    gamma = {"V": 1, "W": 2, "F": "F"}[s[0]]
    return gamma, int(nu[0]), int(nu[1])
