"""Level-versus-step diagrams of solver programs in the DOT graph language.

Every update of a program becomes one node, placed in the row of its level.
Smoothing steps are labelled with the smoother and its relaxation factor,
coarse-grid solves are drawn as filled black nodes on the level they solve,
and coarse-grid corrections appear as small points whose incoming edge
carries the correction's relaxation factor.
"""
from __future__ import annotations

from .components import omega_from_index
from .ir import ApplyExpr, Field, SolverProgram, level_name


def _fmt(omega: float) -> str:
    return f"{omega:g}"


def _resolve(e, defs):
    # follow temporaries back to the expression that defined them
    while isinstance(e, Field) and e.kind == "t" and e.key in defs:
        e = defs[e.key]
    return e


def program_steps(program: SolverProgram) -> list:
    """Updates in execution order as ``(kind, level, label, omega)`` tuples.

    ``kind`` is ``"smooth"``, ``"solve"`` or ``"correct"``.
    """
    defs = {}
    steps = []
    for ins in program.instructions:
        if not ins.is_update:
            defs[ins.target.key] = ins.expr
            continue
        omega = omega_from_index(ins.omega_index)
        lv = ins.target.level
        e = _resolve(ins.expr, defs)
        if isinstance(e, ApplyExpr) and e.op.kind == "prolongation":
            inner = _resolve(e.operand, defs)
            if isinstance(inner, ApplyExpr) and inner.op.kind == "coarse-solver":
                steps.append(("solve", lv + 1, "solve", omega))
            else:
                steps.append(("correct", lv, "", omega))
        elif isinstance(e, ApplyExpr) and e.op.kind in ("smoother", "identity"):
            name = e.op.name if e.op.kind == "smoother" else "richardson"
            if ins.partition:
                name = f"{name} ({ins.partition})"
            steps.append(("smooth", lv, f"{name} ω={_fmt(omega)}", omega))
        else:
            steps.append(("smooth", lv, f"update ω={_fmt(omega)}", omega))
    return steps


def program_dot(program: SolverProgram, name: str = "cycle") -> str:
    """DOT text of the program's level-versus-step diagram."""
    steps = program_steps(program)
    lines = [f'digraph "{name}" {{', "  node [shape=circle, fontsize=10];"]
    rows: dict = {}
    for i, (kind, lv, label, _) in enumerate(steps):
        if kind == "solve":
            attrs = 'label="", style=filled, fillcolor=black, width=0.25'
        elif kind == "correct":
            attrs = 'label="", shape=point, width=0.1'
        else:
            attrs = f'label="{label}", shape=ellipse'
        lines.append(f"  s{i} [{attrs}, level=\"{level_name(lv)}\"];")
        rows.setdefault(lv, []).append(f"s{i}")
    for lv in sorted(rows):
        lines.append(f'  {{ rank=same; "{level_name(lv)}"; {"; ".join(rows[lv])}; }}')
        lines.append(f'  "{level_name(lv)}" [shape=plaintext];')
    levels = sorted(rows)
    for a, b in zip(levels, levels[1:]):
        lines.append(f'  "{level_name(a)}" -> "{level_name(b)}" [style=invis];')
    for i in range(1, len(steps)):
        kind, _, _, omega = steps[i]
        prev = steps[i - 1]
        if kind == "correct":
            lines.append(f'  s{i - 1} -> s{i} [label="ω={_fmt(omega)}"];')
        elif prev[0] == "solve":
            lines.append(f'  s{i - 1} -> s{i} [label="ω={_fmt(prev[3])}"];')
        else:
            lines.append(f"  s{i - 1} -> s{i};")
    lines.append("}")
    return "\n".join(lines) + "\n"
