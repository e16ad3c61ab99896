"""Multigrid states, state-transition functions and program generation.

A multigrid method is built as a chain of states ``(x, b, c, predecessor)``
where ``x`` and ``b`` are expressions for the current approximation and
right-hand side, ``c`` is an optional correction expression and
``predecessor`` is the state on the next finer level that is resumed by a
coarse-grid correction.  The expressions form a DAG whose shared nodes are
exactly the approximations and right-hand sides; :func:`generate_program`
turns that DAG into a list of assignments that evaluates each of them once.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .components import CoarseSolver, CoarseSolverSpec, make_smoother, omega_from_index, partition_masks
from .grid import sparse_prolongation_matrix, sparse_restriction_matrix


class IRError(ValueError):
    pass


def level_name(index: int) -> str:
    """Symbolic name of a level relative to the finest one: h, 2h, 4h, ..."""
    return "h" if index == 0 else f"{2**index}h"


# --------------------------------------------------------------------------
# IR nodes

@dataclass(frozen=True)
class Entity:
    """Leaf of the IR: approximation, rhs, operator, restriction, prolongation, smoother, coarse solver."""

    kind: str
    level: int
    name: str = ""

    def label(self) -> str:
        lv = level_name(self.level)
        if self.kind == "approximation":
            return f"x_{lv}" if self.level == 0 else f"x0_{lv}"
        if self.kind == "rhs":
            return f"b_{lv}"
        if self.kind == "operator":
            return f"A_{lv}"
        if self.kind == "restriction":
            return f"I_{lv}^{level_name(self.level + 1)}"
        if self.kind == "prolongation":
            return f"I_{level_name(self.level + 1)}^{lv}"
        if self.kind == "coarse-solver":
            return f"inv(A_{lv})"
        if self.kind == "smoother":
            return f"inv({smoother_symbol(self.name)}_{lv})"
        if self.kind == "identity":
            return "I"
        raise IRError(f"unknown entity kind {self.kind!r}")


def smoother_symbol(name: str) -> str:
    if name == "jacobi":
        return "D"
    if name == "collective-jacobi":
        return "Dc"
    if name.startswith("block"):
        return "D[" + name[len("block"):] + "]"
    return name


@dataclass(eq=False)
class Residual:
    op: Entity
    x: object
    b: object
    level: int


@dataclass(eq=False)
class Apply:
    op: Entity
    operand: object
    level: int


@dataclass(eq=False)
class Update:
    x: object
    c: object
    omega_index: int
    partition: str | None
    level: int


@dataclass(eq=False)
class CycleBoundary:
    """Right-hand side of a coarse error equation; remembers the state it descended from."""

    rhs: object
    predecessor: "MultigridState"
    level: int


@dataclass(frozen=True, eq=False)
class MultigridState:
    x: object
    b: object
    c: object = None
    predecessor: "MultigridState | None" = None
    level: int = 0

    def depth(self) -> int:
        d, s = 0, self.predecessor
        while s is not None:
            d, s = d + 1, s.predecessor
        return d


def initial_state() -> MultigridState:
    return MultigridState(Entity("approximation", 0), Entity("rhs", 0), None, None, 0)


def _expr_level(e) -> int:
    return e.level


def mk_residual(op: Entity, state: MultigridState) -> MultigridState:
    if state.c is not None:
        raise IRError("residual requested on a state whose correction is already set")
    if op.level != state.level:
        raise IRError("operator level does not match the state level")
    return replace(state, c=Residual(op, state.x, state.b, state.level))


def mk_apply(op: Entity, state: MultigridState) -> MultigridState:
    if state.c is None:
        raise IRError("apply requires a correction term")
    c_level = _expr_level(state.c)
    if op.kind == "restriction":
        if op.level != c_level:
            raise IRError("restriction level does not match the correction level")
        out_level = c_level + 1
    elif op.kind == "prolongation":
        if op.level != c_level - 1:
            raise IRError("prolongation level does not match the correction level")
        out_level = c_level - 1
    else:
        if op.level != c_level:
            raise IRError(f"{op.kind} level does not match the correction level")
        out_level = c_level
    return replace(state, c=Apply(op, state.c, out_level))


def mk_update(omega_index: int, partition, state: MultigridState) -> MultigridState:
    if state.c is None:
        raise IRError("update requires a correction term")
    if _expr_level(state.c) != state.level:
        raise IRError("correction lives on a different level than the approximation")
    omega_from_index(omega_index)
    if partition in ("none", ""):
        partition = None
    return replace(state, x=Update(state.x, state.c, omega_index, partition, state.level), c=None)


def mk_coarsening(op_coarse: Entity, x0_coarse: Entity, state: MultigridState) -> MultigridState:
    if state.c is None:
        raise IRError("coarsening requires a restricted correction term")
    lv = state.level + 1
    if _expr_level(state.c) != lv or op_coarse.level != lv or x0_coarse.level != lv:
        raise IRError("coarsening requires a correction on the next coarser level")
    pred = replace(state, c=None)
    b = CycleBoundary(state.c, pred, lv)
    return MultigridState(x0_coarse, b, Residual(op_coarse, x0_coarse, b, lv), pred, lv)


def mk_cgc(prolongation: Entity, state: MultigridState) -> MultigridState:
    if state.predecessor is None:
        raise IRError("coarse-grid correction requires a predecessor state")
    if state.c is not None:
        raise IRError("coarse-grid correction expects a state without pending correction")
    pred = state.predecessor
    if prolongation.kind != "prolongation" or prolongation.level != pred.level:
        raise IRError("prolongation does not connect the two levels")
    return MultigridState(pred.x, pred.b, Apply(prolongation, state.x, pred.level), pred.predecessor, pred.level)


def mk_coarse_grid_solver(solver: Entity, restriction: Entity, prolongation: Entity,
                          state: MultigridState) -> MultigridState:
    """``c <- P A^{-1} R c`` with the exact solve on the next coarser level."""
    s = mk_apply(restriction, state)
    if solver.kind != "coarse-solver" or solver.level != state.level + 1:
        raise IRError("coarse solver must act on the next coarser level")
    s = mk_apply(solver, s)
    return mk_apply(prolongation, s)


# --------------------------------------------------------------------------
# program representation

@dataclass(eq=False)
class Field:
    kind: str  # "x", "b", "t"
    level: int
    version: int
    name: str

    @property
    def key(self) -> str:
        return f"{self.name}#{self.version}"


@dataclass(eq=False)
class Zero:
    level: int


@dataclass(eq=False)
class Input:
    kind: str  # "x" or "b"


@dataclass(eq=False)
class ResidualExpr:
    op: Entity
    x: object
    b: object


@dataclass(eq=False)
class ApplyExpr:
    op: Entity
    operand: object


@dataclass(eq=False)
class Instruction:
    target: Field
    expr: object = None
    base: object = None
    omega_index: int | None = None
    partition: str | None = None

    @property
    def is_update(self) -> bool:
        return self.omega_index is not None


def _render(e) -> str:
    if isinstance(e, Field):
        return e.name
    if isinstance(e, Zero):
        return f"x0_{level_name(e.level)}"
    if isinstance(e, Input):
        return f"{e.kind}_h"
    if isinstance(e, ResidualExpr):
        return f"({_render(e.b)} - {e.op.label()} {_render(e.x)})"
    if isinstance(e, ApplyExpr):
        return f"{e.op.label()} {_render(e.operand)}"
    raise IRError(f"cannot render {e!r}")


@dataclass
class SolverProgram:
    instructions: list
    result: object
    levels: int

    def render(self) -> str:
        lines = []
        for ins in self.instructions:
            if ins.is_update:
                omega = omega_from_index(ins.omega_index)
                scale = "" if omega == 1.0 else f"{omega:g} * "
                line = f"{ins.target.name} = {_render(ins.base)} + {scale}{_render(ins.expr)}"
                if ins.partition:
                    line += f"  [{ins.partition}]"
            else:
                line = f"{ins.target.name} = {_render(ins.expr)}"
            lines.append(line)
        if not self.instructions or (isinstance(self.result, Input)):
            lines.append("return x_h")
        return "\n".join(lines)

    def __str__(self):
        return self.render()

    def entities(self):
        """All IR leaves referenced by the program (used to prepare an executor)."""
        seen = {}

        def walk(e):
            if isinstance(e, ResidualExpr):
                seen[e.op] = None
                walk(e.x)
                walk(e.b)
            elif isinstance(e, ApplyExpr):
                seen[e.op] = None
                walk(e.operand)

        for ins in self.instructions:
            walk(ins.expr)
        return list(seen)


def generate_program(final_state: MultigridState) -> SolverProgram:
    """Emit each approximation and right-hand side exactly once, in dependency order."""
    if final_state.level != 0 or final_state.c is not None or final_state.predecessor is not None:
        raise IRError("program generation needs a finest-level state without pending correction")

    # count parent edges so that shared non-materialized nodes become temporaries
    refs: dict = {}
    stack = [final_state.x]
    visited = set()
    while stack:
        node = stack.pop()
        if id(node) in visited:
            continue
        visited.add(id(node))
        for ch in _children(node):
            refs[id(ch)] = refs.get(id(ch), 0) + 1
            stack.append(ch)

    instructions: list = []
    mapped: dict = {}
    versions: dict = {}

    def new_field(kind, level):
        key = (kind, level)
        versions[key] = versions.get(key, 0) + 1
        name = f"{kind}_{level_name(level)}" if kind != "t" else f"t_{level_name(level)}_{versions[key] - 1}"
        return Field(kind, level, versions[key], name)

    def expr(node):
        # iterative post-order would complicate the code; depth stays small in practice
        if id(node) in mapped:
            return mapped[id(node)]
        if isinstance(node, Entity):
            if node.kind == "approximation":
                out = Input("x") if node.level == 0 else Zero(node.level)
            elif node.kind == "rhs":
                out = Input("b")
            else:
                raise IRError(f"entity {node.kind} cannot be used as a value")
        elif isinstance(node, Update):
            base = expr(node.x)
            corr = expr(node.c)
            tgt = new_field("x", node.level)
            instructions.append(Instruction(tgt, corr, base, node.omega_index, node.partition))
            out = tgt
        elif isinstance(node, CycleBoundary):
            val = expr(node.rhs)
            tgt = new_field("b", node.level)
            instructions.append(Instruction(tgt, val))
            out = tgt
        elif isinstance(node, Residual):
            out = ResidualExpr(node.op, expr(node.x), expr(node.b))
        elif isinstance(node, Apply):
            out = ApplyExpr(node.op, expr(node.operand))
        else:
            raise IRError(f"malformed IR node {node!r}")
        if refs.get(id(node), 0) > 1 and isinstance(out, (ResidualExpr, ApplyExpr)):
            tgt = new_field("t", node.level)
            instructions.append(Instruction(tgt, out))
            out = tgt
        mapped[id(node)] = out
        return out

    result = expr(final_state.x)
    return SolverProgram(instructions, result, 1 + max([i.target.level for i in instructions], default=0))


def _children(node):
    if isinstance(node, Residual):
        return (node.x, node.b)
    if isinstance(node, Apply):
        return (node.operand,)
    if isinstance(node, Update):
        return (node.x, node.c)
    if isinstance(node, CycleBoundary):
        return (node.rhs,)
    return ()


def evaluate_ir(node, ctx: "ExecutionContext", x, b):
    """Direct recursive evaluation of an IR expression, without sharing (test oracle)."""
    if isinstance(node, Entity):
        if node.kind == "approximation":
            return x if node.level == 0 else np.zeros(ctx.shape(node.level), dtype=ctx.dtype)
        if node.kind == "rhs":
            return b
        raise IRError("entity cannot be evaluated")
    if isinstance(node, CycleBoundary):
        return evaluate_ir(node.rhs, ctx, x, b)
    if isinstance(node, Residual):
        xv = evaluate_ir(node.x, ctx, x, b)
        return evaluate_ir(node.b, ctx, x, b) - ctx.operator(node.level).apply(xv)
    if isinstance(node, Apply):
        return ctx.apply_entity(node.op, evaluate_ir(node.operand, ctx, x, b))
    if isinstance(node, Update):
        xv = np.array(evaluate_ir(node.x, ctx, x, b), dtype=ctx.dtype, copy=True)
        omega = omega_from_index(node.omega_index)
        masks = partition_masks(node.partition, ctx.shape(node.level)[1:])
        for mask in masks:
            c = _eval_with_override(node.c, node.x, xv, ctx, x, b)
            if mask is None:
                xv = xv + omega * c
            else:
                xv[:, mask] += omega * c[:, mask]
        return xv
    raise IRError(f"malformed IR node {node!r}")


def _eval_with_override(node, target, value, ctx, x, b):
    if node is target:
        return value
    if isinstance(node, Residual):
        xv = _eval_with_override(node.x, target, value, ctx, x, b)
        return _eval_with_override(node.b, target, value, ctx, x, b) - ctx.operator(node.level).apply(xv)
    if isinstance(node, Apply):
        return ctx.apply_entity(node.op, _eval_with_override(node.operand, target, value, ctx, x, b))
    return evaluate_ir(node, ctx, x, b)


# --------------------------------------------------------------------------
# execution

@dataclass
class ExecutionContext:
    """Operators, transfer stencils, smoothers and coarse solvers of one hierarchy.

    ``levels`` is a list of :class:`~mgsynth.problems.Level` (finest first).
    ``work`` accumulates a deterministic operation count (stencil entries times
    grid points) that serves as a reproducible cost measure.
    """

    levels: list
    restriction: object
    prolongation: object
    coarse_spec: CoarseSolverSpec = field(default_factory=CoarseSolverSpec)
    work: float = 0.0
    _smoothers: dict = field(default_factory=dict, repr=False)
    _solvers: dict = field(default_factory=dict, repr=False)
    _transfers: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.dtype = np.result_type(*[lv.operator.dtype for lv in self.levels])
        self._nnz = []
        for lv in self.levels:
            st = lv.operator.stencil
            blocks = [st] if not hasattr(st, "block") else [s for r in st.block for s in r]
            self._nnz.append(sum(len(s) for s in blocks))

    def operator(self, level: int):
        if level >= len(self.levels):
            raise IRError(f"level {level_name(level)} is not part of the hierarchy")
        lv = self.levels[level]
        self.work += self._nnz[level] * lv.grid.size
        return lv.operator

    def shape(self, level: int):
        return self.levels[level].operator.shape

    def smoother(self, level: int, name: str):
        key = (level, name)
        if key not in self._smoothers:
            op = self.levels[level].operator
            if name.startswith("block"):
                shape = tuple(int(v) for v in name[len("block"):].split("x"))
                self._smoothers[key] = make_smoother(op, "block-jacobi", shape)
            else:
                self._smoothers[key] = make_smoother(op, name)
        return self._smoothers[key]

    def coarse_solver(self, level: int) -> CoarseSolver:
        if level not in self._solvers:
            self._solvers[level] = CoarseSolver(self.levels[level].operator, self.coarse_spec)
        return self._solvers[level]

    @property
    def coarse_failures(self) -> int:
        return sum(s.failures for s in self._solvers.values())

    def _transfer(self, kind: str, level: int):
        key = (kind, level)
        if key not in self._transfers:
            fine = self.levels[level].grid.dims
            coarse = self.levels[level + 1].grid.dims
            if kind == "restriction":
                self._transfers[key] = sparse_restriction_matrix(self.restriction, fine, coarse)
            else:
                self._transfers[key] = sparse_prolongation_matrix(self.prolongation, coarse, fine)
        return self._transfers[key]

    def apply_entity(self, op: Entity, v):
        if op.kind in ("restriction", "prolongation"):
            mat = self._transfer(op.kind, op.level)
            out_dims = self.levels[op.level + (op.kind == "restriction")].grid.dims
            self.work += mat.nnz * v.shape[0]
            return np.stack([(mat @ c.reshape(-1)).reshape(out_dims) for c in v])
        if op.kind == "smoother":
            sm = self.smoother(op.level, op.name)
            self.work += v.size * getattr(sm, "cost", 1)
            return sm.apply(v)
        if op.kind == "coarse-solver":
            solver = self.coarse_solver(op.level)
            before = solver.iterations
            out = solver.apply(v)
            self.work += (solver.iterations - before + 1) * self._nnz[op.level] * self.levels[op.level].grid.size
            return out
        if op.kind == "identity":
            return v
        if op.kind == "operator":
            return self.operator(op.level).apply(v)
        raise IRError(f"cannot apply entity of kind {op.kind!r}")


class Executor:
    """Runs a :class:`SolverProgram` on concrete arrays."""

    def __init__(self, program: SolverProgram, ctx: ExecutionContext):
        self.program = program
        self.ctx = ctx
        # drop intermediate fields after their last use
        last = {}
        for i, ins in enumerate(program.instructions):
            for f in _fields(ins.expr) + _fields(ins.base):
                last[f.key] = i
        self._last_use = last

    def run(self, x, b):
        env = {}
        ctx = self.ctx
        for i, ins in enumerate(self.program.instructions):
            if ins.is_update:
                val = self._update(ins, env, x, b)
            else:
                val = self._eval(ins.expr, env, x, b, None, None)
            env[ins.target.key] = val
            for f in _fields(ins.expr) + _fields(ins.base):
                if self._last_use.get(f.key) == i and f is not self.program.result:
                    env.pop(f.key, None)
        res = self.program.result
        if isinstance(res, Input):
            return x.copy()
        return env[res.key]

    def _update(self, ins, env, x, b):
        ctx = self.ctx
        base = self._eval(ins.base, env, x, b, None, None)
        omega = omega_from_index(ins.omega_index)
        if ins.partition is None:
            c = self._eval(ins.expr, env, x, b, None, None)
            return c * omega if base is None else base + omega * c
        shape = ctx.shape(ins.target.level)
        cur = np.zeros(shape, dtype=ctx.dtype) if base is None else np.array(base, dtype=ctx.dtype, copy=True)
        for mask in partition_masks(ins.partition, shape[1:]):
            c = self._eval(ins.expr, env, x, b, ins.base, cur)
            cur[:, mask] += omega * c[:, mask]
        return cur

    def _eval(self, e, env, x, b, target, value):
        if target is not None and e is target:
            return value
        if isinstance(e, Field):
            return env[e.key]
        if isinstance(e, Zero):
            return None
        if isinstance(e, Input):
            return x if e.kind == "x" else b
        if isinstance(e, ResidualExpr):
            xv = self._eval(e.x, env, x, b, target, value)
            bv = self._eval(e.b, env, x, b, target, value)
            if xv is None:
                return bv
            return bv - self.ctx.operator(e.op.level).apply(xv)
        if isinstance(e, ApplyExpr):
            v = self._eval(e.operand, env, x, b, target, value)
            if v is None:
                return None
            return self.ctx.apply_entity(e.op, v)
        raise IRError(f"malformed program expression {e!r}")


def _fields(e) -> list:
    if e is None:
        return []
    if isinstance(e, Field):
        return [e]
    if isinstance(e, ResidualExpr):
        return _fields(e.x) + _fields(e.b)
    if isinstance(e, ApplyExpr):
        return _fields(e.operand)
    return []
