"""Smoothers, inter-grid transfer stencils and Krylov coarse-grid solvers."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .grid import GridDesc, GridFunction, GridOperator, Stencil

OMEGA_COUNT = 37


def omega_from_index(index: int) -> float:
    """Relaxation factor table ``0.1 + 0.05 i`` for ``i`` in ``[0, 36]``."""
    if not 0 <= index < OMEGA_COUNT:
        raise ValueError(f"relaxation index {index} outside [0, {OMEGA_COUNT - 1}]")
    return round(0.1 + 0.05 * index, 10)


def omega_index(omega: float) -> int:
    idx = round((omega - 0.1) / 0.05)
    if not 0 <= idx < OMEGA_COUNT or abs(omega_from_index(idx) - omega) > 1e-9:
        raise ValueError(f"relaxation factor {omega} is not in the table")
    return idx


SMOOTHER_KINDS = ("jacobi-pointwise", "jacobi-collective", "rb-gauss-seidel", "block-jacobi")
MAX_BLOCK_TERMS = 6


@dataclass(frozen=True)
class SmootherSpec:
    kind: str
    block_shape: tuple | None = None
    relaxation_index: int = 18

    def __post_init__(self):
        if self.kind not in SMOOTHER_KINDS:
            raise ValueError(f"unknown smoother kind {self.kind!r}")
        if (self.block_shape is not None) != (self.kind == "block-jacobi"):
            raise ValueError("block_shape is required for, and only for, block-jacobi")
        if self.block_shape is not None:
            shape = tuple(int(b) for b in self.block_shape)
            if any(b < 1 for b in shape) or math.prod(shape) > MAX_BLOCK_TERMS:
                raise ValueError(f"invalid block shape {shape}")
            object.__setattr__(self, "block_shape", shape)
        omega_from_index(self.relaxation_index)

    @property
    def omega(self) -> float:
        return omega_from_index(self.relaxation_index)


@dataclass(frozen=True)
class CoarseSolverSpec:
    kind: str = "cg"
    rel_tolerance: float = 1e-12
    max_iterations: int | None = None

    def __post_init__(self):
        if self.kind not in ("cg", "bicgstab"):
            raise ValueError(f"unknown coarse solver {self.kind!r}")
        if not 0 < self.rel_tolerance < 1:
            raise ValueError("rel_tolerance must lie in (0, 1)")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")


def block_shapes(ndim: int, max_terms: int = MAX_BLOCK_TERMS) -> list:
    """All rectangular block shapes with at least two and at most ``max_terms`` points."""
    shapes = []
    for shape in itertools.product(range(1, max_terms + 1), repeat=ndim):
        if 1 < math.prod(shape) <= max_terms:
            shapes.append(shape)
    return shapes


# --------------------------------------------------------------------------
# transfer operators

def _tensor_stencil(weights_1d, ndim: int, scale: float) -> Stencil:
    w = np.asarray(weights_1d, dtype=float)
    arr = w
    for _ in range(ndim - 1):
        arr = np.multiply.outer(arr, w)
    return Stencil.from_array(arr, scale=scale)


def make_restriction(ndim: int, kind: str = "full-weighting") -> Stencil:
    if ndim not in (1, 2, 3):
        raise ValueError(f"unsupported dimensionality {ndim}")
    if kind == "full-weighting":
        return _tensor_stencil([1, 2, 1], ndim, 1.0 / 4**ndim)
    if kind == "injection":
        return Stencil({(0,) * ndim: 1.0})
    if kind == "half-weighting":
        if ndim == 1:
            raise ValueError("half-weighting is defined for two and three dimensions")
        centre = 2.0 * ndim
        entries = {(0,) * ndim: centre}
        for d in range(ndim):
            for s in (-1, 1):
                off = [0] * ndim
                off[d] = s
                entries[tuple(off)] = 1.0
        total = centre + 2 * ndim
        return Stencil({k: v / total for k, v in entries.items()})
    raise ValueError(f"unknown restriction kind {kind!r}")


def make_prolongation(ndim: int) -> Stencil:
    """Multilinear interpolation, the tensor product of ``1/2 [1 2 1]``."""
    if ndim not in (1, 2, 3):
        raise ValueError(f"unsupported dimensionality {ndim}")
    return _tensor_stencil([1, 2, 1], ndim, 1.0 / 2**ndim)


# --------------------------------------------------------------------------
# smoothers

@lru_cache(maxsize=64)
def color_masks(dims: tuple):
    """Red/black masks: red points have an even sum of (1-based) grid indices."""
    idx = np.indices(dims).sum(axis=0) + len(dims)
    red = idx % 2 == 0
    red.setflags(write=False)
    black = ~red
    black.setflags(write=False)
    return red, black


def partition_masks(partition, dims):
    if partition in (None, "none"):
        return (None,)
    if partition in ("red-black", "rb"):
        return color_masks(tuple(dims))
    raise ValueError(f"unknown partition {partition!r}")


class PointJacobi:
    """``M = D``, the pointwise diagonal of every component (decoupled)."""

    name = "jacobi"
    cost = 1

    def __init__(self, op: GridOperator):
        d = op.point_diagonal()
        if np.any(d == 0):
            raise ZeroDivisionError("operator has a zero diagonal entry")
        self.inv_diag = 1.0 / d

    def apply(self, r):
        return self.inv_diag * r


class CollectiveJacobi:
    """``M`` couples all components at one grid point."""

    name = "collective-jacobi"

    def __init__(self, op: GridOperator):
        blocks = op.point_blocks()
        self.cost = op.components
        try:
            self.inv = np.linalg.inv(blocks)
        except np.linalg.LinAlgError as exc:
            raise ZeroDivisionError("singular pointwise block") from exc

    def apply(self, r):
        moved = np.moveaxis(r, 0, -1)
        return np.moveaxis(np.einsum("...ij,...j->...i", self.inv, moved), -1, 0)


class BlockJacobi:
    """``M`` is block diagonal over non-overlapping rectangular blocks of grid points.

    Blocks touching the upper grid edge are ragged; the missing points are
    padded with identity rows.  All components of a point belong to its block.
    """

    name = "block-jacobi"

    def __init__(self, op: GridOperator, block_shape):
        block_shape = tuple(int(b) for b in block_shape)
        if len(block_shape) != op.grid.ndim:
            raise ValueError("block shape dimensionality differs from the grid")
        self.block_shape = block_shape
        self.dims = op.grid.dims
        self.comp = op.components
        self.nblocks = tuple(-(-n // b) for n, b in zip(self.dims, block_shape))
        self.padded = tuple(nb * b for nb, b in zip(self.nblocks, block_shape))
        npts = math.prod(block_shape)
        m = self.comp * npts
        nb_total = math.prod(self.nblocks)

        valid = np.zeros(self.padded, dtype=bool)
        valid[tuple(slice(0, n) for n in self.dims)] = True
        valid = self._to_blocks(valid[np.newaxis])  # (nb_total, m)
        shift = None
        if op.diag_shift is not None:
            shift = self._to_blocks(self._pad(op.diag_shift))

        local = list(itertools.product(*[range(b) for b in block_shape]))
        pos = {p: k for k, p in enumerate(local)}
        mats = np.zeros((nb_total, m, m), dtype=op.dtype)
        for i in range(self.comp):
            for j in range(self.comp):
                for off, w in op.block(i, j):
                    for p in local:
                        q = tuple(a + b for a, b in zip(p, off))
                        if q not in pos:
                            continue
                        r, c = i * npts + pos[p], j * npts + pos[q]
                        mats[:, r, c] += w * (valid[:, r] & valid[:, c])
        if shift is not None:
            idx = np.arange(m)
            mats[:, idx, idx] += np.where(valid, shift, 0)
        idx = np.arange(m)
        mats[:, idx, idx] += ~valid
        flat = mats.reshape(nb_total, -1)
        uniq, inverse = np.unique(flat, axis=0, return_inverse=True)
        try:
            self.inv = np.linalg.inv(uniq.reshape(-1, m, m))
        except np.linalg.LinAlgError as exc:
            raise ZeroDivisionError("singular block matrix") from exc
        self.block_index = inverse.reshape(-1)
        self.cost = m
        self._gathered = self.inv[self.block_index] if len(self.inv) > 1 else None

    def _pad(self, arr):
        pads = [(0, 0)] + [(0, p - n) for p, n in zip(self.padded, self.dims)]
        return np.pad(arr, pads)

    def _to_blocks(self, arr):
        """``(comp, *padded)`` -> ``(nblocks, comp * prod(block_shape))``."""
        d = len(self.dims)
        shape = [arr.shape[0]]
        for nb, b in zip(self.nblocks, self.block_shape):
            shape += [nb, b]
        x = arr.reshape(shape)
        order = [1 + 2 * k for k in range(d)] + [0] + [2 + 2 * k for k in range(d)]
        return x.transpose(order).reshape(math.prod(self.nblocks), -1)

    def _from_blocks(self, vec):
        d = len(self.dims)
        x = vec.reshape(tuple(self.nblocks) + (self.comp,) + self.block_shape)
        order = [d]
        for k in range(d):
            order += [k, d + 1 + k]
        x = x.transpose(order).reshape((self.comp,) + self.padded)
        return x[(slice(None),) + tuple(slice(0, n) for n in self.dims)]

    def apply(self, r):
        vec = self._to_blocks(self._pad(r))
        if self._gathered is None:
            out = vec @ self.inv[0].T
        else:
            out = np.einsum("bij,bj->bi", self._gathered, vec)
        return self._from_blocks(out)


def make_smoother(op: GridOperator, kind: str, block_shape=None):
    """The inverse splitting ``M^{-1}`` for one smoother kind."""
    if kind in ("jacobi", "jacobi-pointwise", "rb-gauss-seidel"):
        return PointJacobi(op)
    if kind in ("collective-jacobi", "jacobi-collective"):
        return CollectiveJacobi(op)
    if kind == "block-jacobi":
        if block_shape is None:
            raise ValueError("block-jacobi needs a block shape")
        return BlockJacobi(op, block_shape)
    raise ValueError(f"unknown smoother kind {kind!r}")


def relax(op: GridOperator, smoother, x, b, omega, partition=None):
    """``x + omega M^{-1} (b - A x)``, one colour at a time when partitioned."""
    x = np.array(x, dtype=np.result_type(x, b, op.dtype), copy=True)
    for mask in partition_masks(partition, op.grid.dims):
        c = smoother.apply(b - op.apply(x))
        if mask is None:
            x += omega * c
        else:
            x[:, mask] += omega * c[:, mask]
    return x


def _as_operator(a, grid: GridDesc) -> GridOperator:
    return a if isinstance(a, GridOperator) else GridOperator(a, grid)


def smooth_jacobi(A, x: GridFunction, b: GridFunction, omega: float, partition=None,
                  collective: bool = False) -> GridFunction:
    op = _as_operator(A, x.grid)
    sm = CollectiveJacobi(op) if collective else PointJacobi(op)
    return GridFunction(x.grid, relax(op, sm, x.values, b.values, omega, partition))


def smooth_rbgs(A, x: GridFunction, b: GridFunction, omega: float) -> GridFunction:
    op = _as_operator(A, x.grid)
    return GridFunction(x.grid, relax(op, PointJacobi(op), x.values, b.values, omega, "red-black"))


def smooth_block_jacobi(A, x: GridFunction, b: GridFunction, omega: float, block_shape) -> GridFunction:
    op = _as_operator(A, x.grid)
    return GridFunction(x.grid, relax(op, BlockJacobi(op, block_shape), x.values, b.values, omega))


# --------------------------------------------------------------------------
# Krylov solvers

@dataclass
class KrylovResult:
    x: np.ndarray
    iterations: int
    converged: bool
    relative_residual: float
    breakdown: bool = False
    history: list = field(default_factory=list)


def _norm(v) -> float:
    return float(np.linalg.norm(v.ravel()))


def cg(apply, b, x0, rel_tol=1e-12, max_iter=None) -> KrylovResult:
    """Conjugate gradients on arrays; ``apply`` must be Hermitian positive definite."""
    x = np.array(x0, dtype=np.result_type(x0, b), copy=True)
    r = b - apply(x)
    rr = np.vdot(r, r)
    r0 = math.sqrt(abs(rr))
    if max_iter is None:
        max_iter = 2 * b.size
    if r0 == 0.0:
        return KrylovResult(x, 0, True, 0.0)
    p = r.copy()
    rel = 1.0
    for it in range(1, max_iter + 1):
        q = apply(p)
        pq = np.vdot(p, q)
        if pq == 0:
            return KrylovResult(x, it - 1, False, rel, breakdown=True)
        alpha = rr / pq
        x += alpha * p
        r -= alpha * q
        rr_new = np.vdot(r, r)
        rel = math.sqrt(abs(rr_new)) / r0
        if rel <= rel_tol:
            return KrylovResult(x, it, True, rel)
        p *= rr_new / rr
        p += r
        rr = rr_new
    return KrylovResult(x, max_iter, False, rel)


def bicgstab(apply, b, x0, rel_tol=1e-12, max_iter=None, precondition=None) -> KrylovResult:
    """Right-preconditioned BiCGSTAB on arrays.

    ``precondition(v)`` returns an approximation of ``M^{-1} v``; ``None``
    means the identity.  Inner products conjugate their first argument so the
    iteration is valid for complex non-Hermitian systems.
    """
    if precondition is None:
        def precondition(v):
            return v
    x = np.array(x0, dtype=np.result_type(x0, b, complex if np.iscomplexobj(b) else float), copy=True)
    r = b - apply(x)
    r0 = _norm(r)
    if max_iter is None:
        max_iter = 2 * b.size
    if r0 == 0.0:
        return KrylovResult(x, 0, True, 0.0)
    r_hat = r.copy()
    rho_prev = alpha = omega = 1.0
    p = np.zeros_like(r)
    q = np.zeros_like(r)
    rel = 1.0
    for it in range(1, max_iter + 1):
        rho = np.vdot(r_hat, r)
        if rho == 0 or omega == 0:
            return KrylovResult(x, it - 1, False, rel, breakdown=True)
        beta = (rho / rho_prev) * (alpha / omega)
        p = r + beta * (p - omega * q)
        y = precondition(p)
        q = apply(y)
        denom = np.vdot(r_hat, q)
        if denom == 0:
            return KrylovResult(x, it - 1, False, rel, breakdown=True)
        alpha = rho / denom
        h = x + alpha * y
        s = r - alpha * q
        if _norm(s) / r0 <= rel_tol:
            return KrylovResult(h, it, True, _norm(s) / r0)
        z = precondition(s)
        t = apply(z)
        tt = np.vdot(t, t)
        if tt == 0:
            return KrylovResult(h, it, False, _norm(s) / r0, breakdown=True)
        omega = np.vdot(t, s) / tt
        x = h + omega * z
        r = s - omega * t
        rho_prev = rho
        rel = _norm(r) / r0
        if not np.isfinite(rel):
            return KrylovResult(x, it, False, rel, breakdown=True)
        if rel <= rel_tol:
            return KrylovResult(x, it, True, rel)
    return KrylovResult(x, max_iter, False, rel)


def _solve_spec(solver, A, b: GridFunction, x0: GridFunction | None, spec: CoarseSolverSpec | None):
    spec = spec or CoarseSolverSpec()
    op = _as_operator(A, b.grid)
    x0v = np.zeros_like(b.values) if x0 is None else x0.values
    res = solver(op.apply, b.values, x0v, spec.rel_tolerance, spec.max_iterations or 2 * op.size)
    res.x = GridFunction(b.grid, res.x)
    return res


def cg_solve(A, b: GridFunction, x0: GridFunction | None = None, spec: CoarseSolverSpec | None = None):
    """CG on grid functions; returns a :class:`KrylovResult` whose ``x`` is a GridFunction."""
    return _solve_spec(cg, A, b, x0, spec)


def bicgstab_solve(A, b: GridFunction, x0: GridFunction | None = None, spec: CoarseSolverSpec | None = None):
    return _solve_spec(bicgstab, A, b, x0, spec)


class CoarseSolver:
    """Approximate ``A^{-1}`` on the coarsest level by a Krylov method from a zero guess."""

    def __init__(self, op: GridOperator, spec: CoarseSolverSpec | None = None):
        self.op = op
        self.spec = spec or CoarseSolverSpec()
        self.failures = 0
        self.iterations = 0

    def apply(self, r):
        fn = cg if self.spec.kind == "cg" else bicgstab
        max_iter = self.spec.max_iterations or 2 * self.op.size
        # work on flat vectors with the assembled matrix to keep per-iteration overhead low
        mat = self.op.sparse()
        flat = r.reshape(-1)
        res = fn(mat.dot, flat, np.zeros_like(flat, dtype=np.result_type(r, self.op.dtype)),
                 self.spec.rel_tolerance, max_iter)
        self.iterations += res.iterations
        if not res.converged:
            self.failures += 1
        return res.x.reshape(r.shape)
