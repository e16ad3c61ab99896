"""Typed context-free grammar over the multigrid state-transition functions.

Every variable of the grammar exists in an unguarded and a guarded version.
Derivations start from the unguarded finest-level state and can only end in
the initial-state terminal, whose output type is guarded.  Primitives map
guarded inputs to guarded outputs, except for the coarse-grid solver which
also maps a guarded input to an unguarded output.  Hence every complete
derivation applies the coarse-grid solver at least once.

Trees are stored as depth-first token lists.  Production and terminal names
spell out their level relative to the finest grid (``h``, ``2h``, ...), so a
tree compiles against any grammar of the same depth.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .components import OMEGA_COUNT, block_shapes, omega_from_index
from .ir import (
    Entity,
    SolverProgram,
    generate_program,
    initial_state,
    level_name,
    mk_apply,
    mk_cgc,
    mk_coarse_grid_solver,
    mk_coarsening,
    mk_residual,
    mk_update,
)


class GrammarError(ValueError):
    pass


class TreeSyntaxError(GrammarError):
    """Malformed token stream; ``index`` is the position of the offending token."""

    def __init__(self, message: str, index: int):
        super().__init__(f"token {index}: {message}")
        self.index = index


@dataclass(frozen=True)
class TypeTag:
    identifier: str
    guard: bool = False

    def __str__(self):
        return self.identifier + ("!" if self.guard else "")


@dataclass(frozen=True)
class Primitive:
    name: str
    inputs: tuple
    output: TypeTag
    build: Callable = field(compare=False, repr=False)

    @property
    def arity(self) -> int:
        return len(self.inputs)


@dataclass(frozen=True)
class Terminal:
    name: str
    output: TypeTag
    value: object = field(compare=False, repr=False)

    arity = 0
    inputs = ()


OMEGA = TypeTag("omega")
PARTITION = TypeTag("P")

DEFAULT_SMOOTHERS = ("jacobi", "rbgs")


def smoother_terminal_names(menu, ndim: int, components: int = 1, max_block_terms: int = 6) -> list:
    """Inverse-splitting terminals (without level suffix) offered by a smoother menu."""
    names = []
    menu = [m.lower() for m in menu]
    for m in menu:
        if m in ("jacobi", "rbgs", "rb-gs", "rb-gauss-seidel"):
            names.append("jacobi")
        elif m in ("collective-jacobi", "jacobi-collective"):
            names.append("collective-jacobi")
        elif m == "block-jacobi":
            for shape in block_shapes(ndim, max_block_terms):
                if any(s > 1 for s in shape):
                    names.append("block" + "x".join(str(s) for s in shape))
        else:
            raise GrammarError(f"unknown smoother {m!r}")
    return list(dict.fromkeys(names))


def partition_terminal_names(menu) -> list:
    menu = [m.lower() for m in menu]
    names = ["none"]
    if any(m in ("rbgs", "rb-gs", "rb-gauss-seidel") for m in menu):
        names.append("rb")
    return names


def omega_name(index: int) -> str:
    return f"w{omega_from_index(index):g}"


class PrimitiveSet:
    """Productions and terminals of one grammar, indexed by output type."""

    def __init__(self, depth: int, start: TypeTag):
        self.depth = depth
        self.start = start
        self.primitives: dict = {}
        self.terminals: dict = {}
        self._by_name: dict = {}

    def add_primitive(self, prim: Primitive):
        if prim.name in self._by_name:
            raise GrammarError(f"duplicate production name {prim.name}")
        self.primitives.setdefault(prim.output, []).append(prim)
        self._by_name[prim.name] = prim

    def add_terminal(self, term: Terminal):
        if term.name in self._by_name:
            raise GrammarError(f"duplicate terminal name {term.name}")
        self.terminals.setdefault(term.output, []).append(term)
        self._by_name[term.name] = term

    def lookup(self, name: str):
        return self._by_name.get(name)

    def productions(self):
        return [p for ps in self.primitives.values() for p in ps]

    def all_terminals(self):
        return [t for ts in self.terminals.values() for t in ts]

    def types(self) -> set:
        out = set(self.primitives) | set(self.terminals)
        for p in self.productions():
            out.update(p.inputs)
        return out

    def __repr__(self):
        return f"PrimitiveSet(depth={self.depth}, productions={len(self.productions())}, terminals={len(self.all_terminals())})"


def _types(level: int):
    lv = level_name(level)
    return {
        "s": (TypeTag(f"s_{lv}"), TypeTag(f"s_{lv}", True)),
        "c": (TypeTag(f"c_{lv}"), TypeTag(f"c_{lv}", True)),
        "B": TypeTag(f"B_{lv}"),
    }


def generate_grammar(depth: int, smoothers=DEFAULT_SMOOTHERS, ndim: int = 2, components: int = 1,
                     early_solve: bool = True, omega_indices=None, max_block_terms: int = 6) -> PrimitiveSet:
    """Grammar for multigrid methods on a hierarchy of ``depth`` levels.

    Per level ``i`` (0 = finest, ``depth - 1`` = coarsest):

    * ``smooth_i``: ``s_i <- update(omega, P, apply(B_i, c_i))``
    * ``residual_i``: ``c_i <- residual(A_i, s_i)``
    * ``coarsening_i``: ``c_i <- coarsening(A_i, x0_i, apply(R, c_{i-1}))`` for ``1 <= i <= depth - 2``
    * ``cgc_i``: ``s_i <- update(omega, none, cgc(P, s_{i+1}))`` for ``i <= depth - 3``
    * ``cgs_i``: ``s_i <- update(omega, none, P A^{-1}_{i+1} R c_i)`` at ``i = depth - 2``, and
      at every ``i < depth - 2`` when ``early_solve`` is set

    Guarded versions carry a ``_g`` suffix; ``cgs_i_g`` is the transition from a
    guarded input to an unguarded output.
    """
    if depth < 2:
        raise GrammarError("a multigrid grammar needs at least two levels")
    types = [_types(i) for i in range(depth - 1)]
    pset = PrimitiveSet(depth, types[0]["s"][0])
    pset.smoother_menu = tuple(smoothers)
    pset.early_solve = early_solve

    indices = range(OMEGA_COUNT) if omega_indices is None else omega_indices
    for k in indices:
        pset.add_terminal(Terminal(omega_name(k), OMEGA, k))
    for p in partition_terminal_names(smoothers):
        pset.add_terminal(Terminal(p, PARTITION, None if p == "none" else "red-black"))
    pset.add_terminal(Terminal("x0_h", types[0]["s"][1], None))

    smoother_names = smoother_terminal_names(smoothers, ndim, components, max_block_terms)
    last = depth - 2
    for i in range(depth - 1):
        lv = level_name(i)
        T = types[i]
        for name in smoother_names:
            pset.add_terminal(Terminal(f"{name}_{lv}", T["B"], Entity("smoother", i, name)))
        for g, suffix in ((0, ""), (1, "_g")):
            s_t, c_t = T["s"][g], T["c"][g]
            pset.add_primitive(Primitive(f"smooth_{lv}{suffix}", (OMEGA, PARTITION, T["B"], c_t), s_t, _smooth))
            pset.add_primitive(Primitive(f"residual_{lv}{suffix}", (s_t,), c_t, _residual(i)))
            if 1 <= i <= last:
                pset.add_primitive(Primitive(f"coarsening_{lv}{suffix}", (types[i - 1]["c"][g],), c_t,
                                             _coarsening(i)))
            if i < last:
                pset.add_primitive(Primitive(f"cgc_{lv}{suffix}", (OMEGA, types[i + 1]["s"][g]), s_t, _cgc(i)))
            if i == last or early_solve:
                # the solve always yields an unguarded state
                pset.add_primitive(Primitive(f"cgs_{lv}{suffix}", (OMEGA, c_t), T["s"][0], _cgs(i)))
    _check_no_dead_types(pset)
    return pset


def grammar_for_problem(problem, smoothers=None, early_solve: bool = True, **kw) -> PrimitiveSet:
    if smoothers is None:
        smoothers = default_smoothers(problem)
    return generate_grammar(problem.depth, smoothers, problem.ndim, problem.components, early_solve, **kw)


def default_smoothers(problem) -> tuple:
    menu = ["jacobi", "rbgs", "block-jacobi"]
    if problem.components > 1:
        menu.insert(1, "collective-jacobi")
    return tuple(menu)


def _smooth(w, p, B, state):
    return mk_update(w, p, mk_apply(B, state))


def _residual(i):
    def build(state):
        return mk_residual(Entity("operator", i), state)
    return build


def _coarsening(i):
    def build(state):
        state = mk_apply(Entity("restriction", i - 1), state)
        return mk_coarsening(Entity("operator", i), Entity("approximation", i), state)
    return build


def _cgc(i):
    def build(w, state):
        return mk_update(w, None, mk_cgc(Entity("prolongation", i), state))
    return build


def _cgs(i):
    def build(w, state):
        state = mk_coarse_grid_solver(Entity("coarse-solver", i + 1), Entity("restriction", i),
                                      Entity("prolongation", i), state)
        return mk_update(w, None, state)
    return build


def _check_no_dead_types(pset: PrimitiveSet):
    # a type is productive if some terminal or some production with productive inputs yields it
    productive = set(pset.terminals)
    changed = True
    while changed:
        changed = False
        for p in pset.productions():
            if p.output not in productive and all(t in productive for t in p.inputs):
                productive.add(p.output)
                changed = True
    dead = [t for t in pset.types() if t not in productive]
    if dead:
        raise GrammarError(f"grammar has unproductive types: {sorted(map(str, dead))}")


def variable_types(depth: int) -> dict:
    """Unguarded and guarded TypeTag for every grammar variable."""
    out = {"S": (TypeTag("s_h"), TypeTag("s_h", True))}
    for i in range(depth - 1):
        T = _types(i)
        lv = level_name(i)
        out[f"s_{lv}"] = T["s"]
        out[f"c_{lv}"] = T["c"]
        out[f"B_{lv}"] = (T["B"], TypeTag(T["B"].identifier, True))
    lowest = level_name(depth - 1)
    out[f"c_{lowest}"] = (TypeTag(f"c_{lowest}"), TypeTag(f"c_{lowest}", True))
    out["P"] = (PARTITION, TypeTag(PARTITION.identifier, True))
    return out


# --------------------------------------------------------------------------
# derivation trees

class DerivationTree(list):
    """Depth-first list of primitives and terminals."""

    def __init__(self, nodes=()):
        super().__init__(nodes)

    @property
    def key(self) -> str:
        return " ".join(n.name for n in self)

    def __str__(self):
        return self.key

    def subtree_end(self, begin: int) -> int:
        total = self[begin].arity
        end = begin + 1
        while total > 0:
            total += self[end].arity - 1
            end += 1
        return end

    def subtree(self, begin: int) -> "DerivationTree":
        return DerivationTree(self[begin:self.subtree_end(begin)])

    @property
    def height(self) -> int:
        stack = [0]
        max_depth = 0
        for node in self:
            depth = stack.pop()
            max_depth = max(max_depth, depth)
            stack.extend([depth + 1] * node.arity)
        return max_depth

    def output_type(self, index: int) -> TypeTag:
        return self[index].output

    def expected_types(self, pset: PrimitiveSet) -> list:
        """Type required at each position by its parent (the start type at the root)."""
        req = []
        stack = [pset.start]
        for node in self:
            req.append(stack.pop())
            stack.extend(reversed(node.inputs))
        return req

    def count(self, prefix: str) -> int:
        return sum(1 for n in self if n.name.startswith(prefix))


def serialize(tree: DerivationTree) -> str:
    return tree.key


def deserialize(text: str, pset: PrimitiveSet) -> DerivationTree:
    """Parse a whitespace-separated token stream top-down against ``pset``."""
    tokens = text.split()
    if not tokens:
        raise TreeSyntaxError("empty token stream", 0)
    nodes = []
    stack = [pset.start]
    for i, tok in enumerate(tokens):
        if not stack:
            raise TreeSyntaxError(f"unexpected trailing token {tok!r}", i)
        want = stack.pop()
        node = pset.lookup(tok)
        if node is None:
            raise TreeSyntaxError(f"unknown symbol {tok!r}", i)
        if node.output != want:
            raise TreeSyntaxError(f"symbol {tok!r} yields {node.output} but {want} is required", i)
        nodes.append(node)
        stack.extend(reversed(node.inputs))
    if stack:
        raise TreeSyntaxError(f"token stream ends while {stack[-1]} is still required", len(tokens))
    return DerivationTree(nodes)


def type_check(tree, pset: PrimitiveSet):
    """``(ok, diagnostics)``: children match the input types of their parents and the root matches the start type."""
    diags = []
    stack = [pset.start]
    for i, node in enumerate(tree):
        if not stack:
            diags.append(f"node {i} ({node.name}) lies outside the tree")
            break
        want = stack.pop()
        if pset.lookup(node.name) is not node and pset.lookup(node.name) != node:
            diags.append(f"node {i} ({node.name}) is not part of this grammar")
        if node.output != want:
            diags.append(f"node {i} ({node.name}) yields {node.output}, expected {want}")
        stack.extend(reversed(node.inputs))
    if stack and not diags:
        diags.append(f"tree is incomplete; {len(stack)} argument(s) missing")
    return not diags, diags


def rebind(tree, pset: PrimitiveSet) -> DerivationTree:
    """The same token sequence resolved against another grammar of equal depth."""
    return deserialize(serialize(tree), pset)


def build_state(tree, pset: PrimitiveSet):
    """Evaluate the tree bottom-up into the final multigrid state."""
    ok, diags = type_check(tree, pset)
    if not ok:
        raise GrammarError("; ".join(diags))
    values = []
    for node in reversed(tree):
        if isinstance(node, Terminal):
            values.append(initial_state() if node.name == "x0_h" else node.value)
        else:
            args = [values.pop() for _ in range(node.arity)]
            values.append(node.build(*args))
    return values[0]


def compile_tree(tree, pset: PrimitiveSet) -> SolverProgram:
    """Derivation tree -> executable program."""
    return generate_program(build_state(tree, pset))


def count_lower_bound(n: int, i_min: int, i_max: int) -> int:
    """Lower bound on the number of distinct methods: sum of (3n)^i for i_min <= i <= i_max."""
    if n < 1 or i_min < 0 or i_max < i_min:
        raise ValueError("need n >= 1 and 0 <= i_min <= i_max")
    return sum((3 * n) ** i for i in range(i_min, i_max + 1))


# --------------------------------------------------------------------------
# trees of classical cycles

def cycle_tokens(depth: int, gamma=1, nu1=1, nu2=1, smoother="rbgs", omega=1.0) -> str:
    """Serialized derivation of a V/W/F-cycle, equivalent to ``cycles.reference_state``."""
    from .cycles import smoother_parts

    name, partition = smoother_parts(smoother)
    part = "rb" if partition else "none"
    w = f"w{omega:g}"
    fcycle = isinstance(gamma, str)
    last = depth - 2

    # build the token list bottom-up as nested expressions: each function takes the
    # serialized child state and returns the serialized parent state
    def smooth(i, c_expr, g):
        lv = level_name(i)
        return f"smooth_{lv}{g} {w} {part} {name}_{lv} {c_expr}"

    def residual(i, s_expr, g):
        return f"residual_{level_name(i)}{g} {s_expr}"

    def cycle(i, state, has_c, guarded, f):
        # state is a serialized expression of type s_i (has_c False) or c_i (has_c True)
        g = "_g" if guarded else ""
        for _ in range(nu1):
            c = state if has_c else residual(i, state, g)
            state, has_c = smooth(i, c, g), False
        c = state if has_c else residual(i, state, g)
        if i == last:
            state = f"cgs_{level_name(i)}{g} w1 {c}"
        else:
            coarse = f"coarsening_{level_name(i + 1)}{g} {c}"
            cg = guarded
            if f:
                coarse, cg = cycle(i + 1, coarse, True, cg, True)
                coarse, cg = cycle(i + 1, coarse, False, cg, False)
            else:
                has = True
                for _ in range(1 if fcycle else gamma):
                    coarse, cg = cycle(i + 1, coarse, has, cg, False)
                    has = False
            g = "_g" if cg else ""
            state = f"cgc_{level_name(i)}{g} w1 {coarse}"
        guarded = False
        for _ in range(nu2):
            state = smooth(i, residual(i, state, ""), "")
        return state, False

    state, _ = cycle(0, "x0_h", False, True, fcycle)
    return state
