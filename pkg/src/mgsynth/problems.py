"""Benchmark discretizations: Poisson 2D/3D, linear elasticity 2D, indefinite Helmholtz 2D.

Every problem is discretized by finite differences on the interior points of a
uniform grid over the unit square/cube with ``h = 1/2**l``.  Dirichlet data is
folded into the right-hand side, so operators see zero exterior values.  The
operator is rediscretized on every level of the hierarchy.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .components import make_prolongation, make_restriction
from .grid import GridDesc, GridOperator, Stencil, SystemStencil, apply_system_array

HELMHOLTZ_KH = 0.625
HELMHOLTZ_SHIFT = 0.5


def laplace_stencil(ndim: int, h: float) -> Stencil:
    """Negative Laplacian, ``(2d u_0 - sum of neighbours) / h**2``."""
    entries = {(0,) * ndim: 2.0 * ndim / h**2}
    for d in range(ndim):
        for s in (-1, 1):
            off = [0] * ndim
            off[d] = s
            entries[tuple(off)] = -1.0 / h**2
    return Stencil(entries)


def second_derivative_stencil(axis: int, h: float, ndim: int = 2) -> Stencil:
    """``[1 -2 1] / h**2`` along one axis."""
    entries = {(0,) * ndim: -2.0 / h**2}
    for s in (-1, 1):
        off = [0] * ndim
        off[axis] = s
        entries[tuple(off)] = 1.0 / h**2
    return Stencil(entries)


def mixed_derivative_stencil(h: float) -> Stencil:
    """Cross stencil for ``d^2/dxdy``: ``1/(4h^2) [[-1 0 1], [0 0 0], [1 0 -1]]`` (top row is +y)."""
    w = 1.0 / (4 * h**2)
    return Stencil({(1, 1): w, (-1, -1): w, (1, -1): -w, (-1, 1): -w})


@dataclass
class Level:
    """One level of a discretization hierarchy; ``index`` 0 is the finest."""

    index: int
    grid: GridDesc
    operator: GridOperator


@dataclass
class ProblemSpec:
    name: str
    ndim: int
    l_max: int
    components: int
    epsilon: float
    build_operator: Callable[[int], GridOperator]
    build_rhs: Callable[[], np.ndarray]
    depth: int = 5
    dtype: type = float
    coarse_solver: str = "cg"
    build_preconditioner: Callable[[int], GridOperator] | None = None
    params: dict = field(default_factory=dict)
    _ops: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.depth = max(1, min(self.depth, self.l_max))

    @property
    def l_min(self) -> int:
        return self.l_max - self.depth + 1

    @property
    def levels(self) -> list:
        return list(range(self.l_max, self.l_min - 1, -1))

    @property
    def unknowns(self) -> int:
        return self.components * (2**self.l_max - 1) ** self.ndim

    def grid(self, l: int) -> GridDesc:
        return GridDesc.from_level(l, self.ndim)

    def operator(self, l: int) -> GridOperator:
        key = ("A", l)
        if key not in self._ops:
            self._ops[key] = self.build_operator(l)
        return self._ops[key]

    def preconditioner(self, l: int) -> GridOperator:
        if self.build_preconditioner is None:
            raise ValueError(f"problem {self.name} has no preconditioning operator")
        key = ("M", l)
        if key not in self._ops:
            self._ops[key] = self.build_preconditioner(l)
        return self._ops[key]

    def rhs(self) -> np.ndarray:
        return self.build_rhs()

    @property
    def restriction(self) -> Stencil:
        return make_restriction(self.ndim, "full-weighting")

    @property
    def prolongation(self) -> Stencil:
        return make_prolongation(self.ndim)

    def hierarchy(self, preconditioner: bool = False) -> list:
        """Levels finest first; uses the preconditioning operator when requested."""
        get = self.preconditioner if preconditioner else self.operator
        return [Level(i, self.grid(l), get(l)) for i, l in enumerate(self.levels)]

    @property
    def preconditioned(self) -> bool:
        return self.build_preconditioner is not None

    def resized(self, l_max: int) -> "ProblemSpec":
        """The same problem discretized with a different finest level."""
        return make_problem(self.name, l_max, depth=self.depth)


def fold_dirichlet(stencil, grid: GridDesc, boundary_values: Callable, f: np.ndarray) -> np.ndarray:
    """``f - A g`` restricted to the interior, with ``g`` the boundary data on the grid frame.

    ``boundary_values(coords)`` returns an array ``(components, *shape)`` of
    Dirichlet data evaluated on the extended grid (interior included; the
    interior part is ignored).
    """
    ext_dims = tuple(n + 2 for n in grid.dims)
    axes = [h * np.arange(0, n) for n, h in zip(ext_dims, grid.spacing)]
    coords = np.meshgrid(*axes, indexing="ij")
    g = np.array(boundary_values(coords), dtype=float)
    if g.ndim == grid.ndim:
        g = g[np.newaxis]
    inner = (slice(None),) + tuple(slice(1, -1) for _ in ext_dims)
    g[inner] = 0.0
    ag = apply_system_array(stencil, g)
    return f - ag[inner]


def make_poisson_2d(l_max: int, depth: int = 5) -> ProblemSpec:
    """``-lap u = pi^2 cos(pi x) - 4 pi^2 sin(2 pi y)`` with ``u = cos(pi x) - sin(pi y)`` on the boundary."""

    def op(l):
        g = GridDesc.from_level(l, 2)
        return GridOperator(laplace_stencil(2, g.spacing[0]), g, name="A")

    def rhs():
        g = GridDesc.from_level(l_max, 2)
        x, y = g.coordinates()
        f = np.pi**2 * np.cos(np.pi * x) - 4 * np.pi**2 * np.sin(2 * np.pi * y)
        bc = lambda c: np.cos(np.pi * c[0]) - np.sin(np.pi * c[1])
        return fold_dirichlet(op(l_max).stencil, g, bc, f[np.newaxis])

    return ProblemSpec("poisson2d", 2, l_max, 1, 1e-12, op, rhs, depth=depth)


def make_poisson_3d(l_max: int, depth: int = 5) -> ProblemSpec:
    """``-lap u = x^2 - y^2/2 - z^2/2`` with homogeneous Dirichlet boundary."""

    def op(l):
        g = GridDesc.from_level(l, 3)
        return GridOperator(laplace_stencil(3, g.spacing[0]), g, name="A")

    def rhs():
        g = GridDesc.from_level(l_max, 3)
        x, y, z = g.coordinates()
        return (x**2 - 0.5 * y**2 - 0.5 * z**2)[np.newaxis]

    return ProblemSpec("poisson3d", 3, l_max, 1, 1e-12, op, rhs, depth=depth)


ELASTICITY_ALPHA = 195.0
ELASTICITY_BETA = 130.0


def elasticity_stencil(h: float, alpha=ELASTICITY_ALPHA, beta=ELASTICITY_BETA) -> SystemStencil:
    """Negated Navier-Lame operator so that the discrete system is positive definite."""
    lap = laplace_stencil(2, h)  # already the negative Laplacian
    dxx = second_derivative_stencil(0, h)
    dyy = second_derivative_stencil(1, h)
    dxy = mixed_derivative_stencil(h)
    ab = alpha + beta
    return SystemStencil([
        [-ab * dxx + alpha * lap, -ab * dxy],
        [-ab * dxy, -ab * dyy + alpha * lap],
    ])


def make_elasticity_2d(l_max: int, depth: int = 5) -> ProblemSpec:
    """Linear elasticity with ``u = 0``, ``v = 0.4 (1 - x) x y sin(pi x)`` on the boundary."""

    def op(l):
        g = GridDesc.from_level(l, 2)
        return GridOperator(elasticity_stencil(g.spacing[0]), g, name="A")

    def rhs():
        g = GridDesc.from_level(l_max, 2)

        def bc(c):
            x, y = c
            return np.stack([np.zeros_like(x), 0.4 * (1 - x) * x * y * np.sin(np.pi * x)])

        return fold_dirichlet(op(l_max).stencil, g, bc, np.zeros((2,) + g.dims))

    return ProblemSpec("elasticity2d", 2, l_max, 2, 1e-12, op, rhs, depth=depth)


def robin_factor(kh: float) -> complex:
    """Ghost value ratio ``u_0 / u_1`` from ``du/dn - i k u = 0`` centred midway between them."""
    return (1 + 0.5j * kh) / (1 - 0.5j * kh)


def helmholtz_operator(l: int, k: float, shift: complex = 0.0, name="A") -> GridOperator:
    """``(-lap - (1 + shift) k^2)`` with Dirichlet top/bottom and Robin left/right."""
    g = GridDesc.from_level(l, 2)
    h = g.spacing[0]
    kh = k * h
    st = laplace_stencil(2, h) + Stencil({(0, 0): -(1 + shift) * kh**2 / h**2})
    st = Stencil([(o, complex(w)) for o, w in st])
    diag_shift = np.zeros(g.dims, dtype=complex)
    gamma = robin_factor(kh)
    # the eliminated ghost node contributes -gamma u_1 / h^2 to the boundary-adjacent row
    diag_shift[0, :] += -gamma / h**2
    diag_shift[-1, :] += -gamma / h**2
    return GridOperator(st, g, diag_shift=diag_shift, name=name)


def helmholtz_level(k: float) -> int:
    l = math.log2(k / HELMHOLTZ_KH)
    if abs(l - round(l)) > 1e-9 or round(l) < 1:
        raise ValueError(f"wavenumber {k} does not give k h = {HELMHOLTZ_KH} on a dyadic grid")
    return int(round(l))


def make_helmholtz_2d(k: float = 80.0, depth: int = 5) -> ProblemSpec:
    """Indefinite Helmholtz with a point source at the centre, preconditioned by a shifted Laplacian."""
    l_max = helmholtz_level(k)

    def op(l):
        return helmholtz_operator(l, k, 0.0, name="A")

    def prec(l):
        return helmholtz_operator(l, k, HELMHOLTZ_SHIFT * 1j, name="M")

    def rhs():
        g = GridDesc.from_level(l_max, 2)
        b = np.zeros((1,) + g.dims, dtype=complex)
        mid = 2 ** (l_max - 1) - 1
        b[0, mid, mid] = 1.0 / g.spacing[0] ** 2
        return b

    eps = 1e-7 if k <= 160 else 1e-6
    return ProblemSpec("helmholtz2d", 2, l_max, 1, eps, op, rhs, depth=depth, dtype=complex,
                       coarse_solver="bicgstab", build_preconditioner=prec, params={"k": k})


PROBLEMS = {
    "poisson2d": make_poisson_2d,
    "poisson3d": make_poisson_3d,
    "elasticity2d": make_elasticity_2d,
    "helmholtz2d": make_helmholtz_2d,
}

DEFAULT_LEVELS = {"poisson2d": 9, "poisson3d": 5, "elasticity2d": 7, "helmholtz2d": 7}


def make_problem(name: str, l_max: int | None = None, depth: int = 5) -> ProblemSpec:
    """Look up a benchmark by registry name; Helmholtz is sized through ``l_max`` (``k = 0.625 * 2**l_max``)."""
    if name not in PROBLEMS:
        raise KeyError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}")
    if l_max is None:
        l_max = DEFAULT_LEVELS[name]
    if name == "helmholtz2d":
        return make_helmholtz_2d(HELMHOLTZ_KH * 2**l_max, depth=depth)
    return PROBLEMS[name](l_max, depth=depth)
