"""Structured grids, grid functions and the stencil algebra.

A stencil is a finite set of ``(offset, weight)`` pairs.  Applying it to a
grid function ``u`` yields ``sum_k b_k u(x + a_k)`` at every grid point.
Grid functions store their values as arrays of shape ``(components, *dims)``
where axis ``1 + d`` runs along spatial dimension ``d``; flattening to a
vector uses the natural (x-fastest) ordering.
"""
from __future__ import annotations

import numbers
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

DIRICHLET = "dirichlet"
PERIODIC = "periodic"
_BOUNDARIES = (DIRICHLET, PERIODIC)


@dataclass(frozen=True)
class GridDesc:
    """Uniform Cartesian grid of interior points."""

    dims: tuple
    spacing: tuple
    level: int = 0

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        spacing = tuple(float(h) for h in self.spacing)
        if len(dims) != len(spacing) or not dims:
            raise ValueError("dims and spacing must be non-empty and of equal length")
        if any(n < 1 for n in dims):
            raise ValueError(f"grid dims must be positive, got {dims}")
        if any(h <= 0 for h in spacing):
            raise ValueError(f"grid spacing must be positive, got {spacing}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)

    @classmethod
    def from_level(cls, level: int, ndim: int) -> "GridDesc":
        """Grid with spacing ``1/2**level`` and ``2**level - 1`` interior points per dimension."""
        if level < 1:
            raise ValueError("level must be >= 1")
        n = 2**level - 1
        return cls((n,) * ndim, (1.0 / 2**level,) * ndim, level)

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    def coarsen(self) -> "GridDesc":
        if any(n % 2 == 0 or n < 3 for n in self.dims):
            raise ValueError(f"grid {self.dims} cannot be coarsened by a factor of two")
        return GridDesc(tuple((n - 1) // 2 for n in self.dims),
                        tuple(2 * h for h in self.spacing), self.level - 1)

    def refine(self) -> "GridDesc":
        return GridDesc(tuple(2 * n + 1 for n in self.dims),
                        tuple(h / 2 for h in self.spacing), self.level + 1)

    def coordinates(self):
        """Coordinates of the interior points, one array per dimension (indexing ``ij``)."""
        axes = [h * np.arange(1, n + 1) for n, h in zip(self.dims, self.spacing)]
        return np.meshgrid(*axes, indexing="ij")


def _as_offset(offset) -> tuple:
    if isinstance(offset, numbers.Integral):
        return (int(offset),)
    return tuple(int(a) for a in offset)


class Stencil:
    """Immutable finite set of ``(offset, weight)`` pairs with pairwise distinct offsets."""

    __slots__ = ("_entries", "_ndim")

    def __init__(self, entries: Mapping | Iterable = (), ndim: int | None = None):
        items = entries.items() if isinstance(entries, Mapping) else entries
        table: dict = {}
        for offset, weight in items:
            off = _as_offset(offset)
            if off in table:
                raise ValueError(f"duplicate stencil offset {off}")
            table[off] = weight
        dims = {len(off) for off in table}
        if len(dims) > 1:
            raise ValueError("stencil offsets have inconsistent dimensionality")
        if dims:
            d = dims.pop()
            if ndim is not None and ndim != d:
                raise ValueError(f"expected {ndim}-dimensional offsets, got {d}")
            ndim = d
        elif ndim is None:
            raise ValueError("an empty stencil needs an explicit ndim")
        self._entries = tuple(sorted(table.items()))
        self._ndim = int(ndim)

    @classmethod
    def from_array(cls, weights, center=None, scale=1.0) -> "Stencil":
        """Build a stencil from a dense weight array indexed ``[i_x, i_y, ...]``.

        Zero entries are skipped.  ``center`` defaults to the middle of the array.
        """
        arr = np.asarray(weights)
        if center is None:
            center = tuple(n // 2 for n in arr.shape)
        entries = []
        for idx in zip(*np.nonzero(arr)):
            entries.append((tuple(int(i - c) for i, c in zip(idx, center)), scale * arr[idx].item()))
        return cls(entries, ndim=arr.ndim)

    @property
    def ndim(self) -> int:
        return self._ndim

    @property
    def entries(self) -> tuple:
        return self._entries

    def items(self):
        return iter(self._entries)

    @property
    def offsets(self) -> list:
        return [off for off, _ in self._entries]

    @property
    def weights(self) -> list:
        return [w for _, w in self._entries]

    def weight(self, offset, default=0.0):
        off = _as_offset(offset)
        for o, w in self._entries:
            if o == off:
                return w
        return default

    def radius(self) -> tuple:
        if not self._entries:
            return (0,) * self._ndim
        offs = np.abs(np.array(self.offsets, dtype=int))
        return tuple(int(r) for r in offs.max(axis=0))

    def is_complex(self) -> bool:
        return any(isinstance(w, complex) or np.iscomplexobj(w) for w in self.weights)

    def __len__(self):
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    def __eq__(self, other):
        if not isinstance(other, Stencil):
            return NotImplemented
        return self._ndim == other._ndim and self._entries == other._entries

    def __hash__(self):
        return hash((self._ndim, self._entries))

    def __repr__(self):
        body = ", ".join(f"({off}, {w!r})" for off, w in self._entries)
        return f"Stencil({{{body}}})"

    def allclose(self, other: "Stencil", rtol=1e-12, atol=1e-14) -> bool:
        if self.ndim != other.ndim or set(self.offsets) != set(other.offsets):
            return False
        return all(np.isclose(w, other.weight(off), rtol=rtol, atol=atol) for off, w in self)

    def __add__(self, other):
        return stencil_add(self, other)

    def __sub__(self, other):
        return stencil_sub(self, other)

    def __neg__(self):
        return stencil_scale(-1.0, self)

    def __mul__(self, other):
        if isinstance(other, Stencil):
            return stencil_mult(self, other)
        return stencil_scale(other, self)

    def __rmul__(self, other):
        return stencil_scale(other, self)


def _check_same_dim(a: Stencil, b: Stencil):
    if a.ndim != b.ndim:
        raise ValueError(f"stencil dimensionality mismatch: {a.ndim} vs {b.ndim}")


def stencil_add(a: Stencil, b: Stencil) -> Stencil:
    """Combine weights at shared offsets; pass unshared entries through."""
    _check_same_dim(a, b)
    table = dict(a.entries)
    for off, w in b:
        table[off] = table[off] + w if off in table else w
    return Stencil(table, ndim=a.ndim)


def stencil_sub(a: Stencil, b: Stencil) -> Stencil:
    _check_same_dim(a, b)
    return stencil_add(a, stencil_scale(-1.0, b))


def stencil_scale(alpha, s: Stencil) -> Stencil:
    return Stencil([(off, alpha * w) for off, w in s], ndim=s.ndim)


def stencil_mult(a: Stencil, b: Stencil) -> Stencil:
    """Composition ``a o b``: all offset sums with products of weights, accumulated."""
    _check_same_dim(a, b)
    table: dict = {}
    for oa, wa in a:
        for ob, wb in b:
            off = tuple(x + y for x, y in zip(oa, ob))
            table[off] = table[off] + wa * wb if off in table else wa * wb
    return Stencil(table, ndim=a.ndim)


def identity_stencil(ndim: int) -> Stencil:
    return Stencil({(0,) * ndim: 1.0})


def diag(s: Stencil) -> Stencil:
    """Keep only the zero-offset entry, or the placeholder ``((0..0), 0)`` if absent."""
    zero = (0,) * s.ndim
    return Stencil({zero: s.weight(zero, 0.0)}, ndim=s.ndim)


def diag_inv(s: Stencil) -> Stencil:
    zero = (0,) * s.ndim
    w = s.weight(zero, None)
    if w is None or w == 0:
        raise ZeroDivisionError("stencil has no invertible diagonal entry")
    return Stencil({zero: 1.0 / w}, ndim=s.ndim)


def _sequential_key(off):
    # x-fastest ordering: the last axis is the most significant one
    return off[::-1]


def lower(s: Stencil) -> Stencil:
    """Entries whose offset precedes the centre in the sequential (x-fastest) point ordering.

    Assembled, this is the strictly lower triangle of the operator.
    """
    zero = (0,) * s.ndim
    return Stencil([(off, w) for off, w in s if _sequential_key(off) < zero], ndim=s.ndim)


def upper(s: Stencil) -> Stencil:
    zero = (0,) * s.ndim
    return Stencil([(off, w) for off, w in s if _sequential_key(off) > zero], ndim=s.ndim)


class SystemStencil:
    """Square block of stencils acting on a multi-component grid function."""

    def __init__(self, block: Sequence[Sequence[Stencil]]):
        rows = tuple(tuple(row) for row in block)
        m = len(rows)
        if m == 0 or any(len(r) != m for r in rows):
            raise ValueError("system stencil block must be square and non-empty")
        dims = {s.ndim for r in rows for s in r}
        if len(dims) != 1:
            raise ValueError("all blocks must share the same dimensionality")
        self.block = rows
        self.ndim = dims.pop()

    @property
    def components(self) -> int:
        return len(self.block)

    def __getitem__(self, ij):
        i, j = ij
        return self.block[i][j]

    def radius(self) -> tuple:
        radii = np.array([s.radius() for r in self.block for s in r])
        return tuple(int(x) for x in radii.max(axis=0))

    def is_complex(self) -> bool:
        return any(s.is_complex() for r in self.block for s in r)

    def __repr__(self):
        return f"SystemStencil({self.block!r})"


class GridFunction:
    """Values of one or more field components on a grid."""

    def __init__(self, grid: GridDesc, values=None, components: int = 1, dtype=float):
        self.grid = grid
        if values is None:
            values = np.zeros((components,) + grid.dims, dtype=dtype)
        values = np.asarray(values)
        if values.shape == grid.dims:
            values = values[np.newaxis]
        if values.shape[1:] != grid.dims:
            raise ValueError(f"values of shape {values.shape} do not fit grid {grid.dims}")
        self.values = values
        self.components = values.shape[0]

    @classmethod
    def from_vector(cls, grid: GridDesc, vec, components: int = 1) -> "GridFunction":
        vec = np.asarray(vec)
        if vec.size != components * grid.size:
            raise ValueError("vector length does not match grid")
        vals = np.stack([vec[c * grid.size:(c + 1) * grid.size].reshape(grid.dims, order="F")
                         for c in range(components)])
        return cls(grid, vals)

    def vector(self) -> np.ndarray:
        return np.concatenate([v.ravel(order="F") for v in self.values])

    def copy(self) -> "GridFunction":
        return GridFunction(self.grid, self.values.copy())

    def norm(self) -> float:
        return float(np.linalg.norm(self.values.ravel()))

    def __repr__(self):
        return f"GridFunction(dims={self.grid.dims}, components={self.components})"


# --------------------------------------------------------------------------
# array kernels shared by the public operations and the program executor

def _shift_slices(offset, shape):
    dst, src = [], []
    for a, n in zip(offset, shape):
        if abs(a) >= n:
            return None, None
        dst.append(slice(max(0, -a), n - max(0, a)))
        src.append(slice(max(0, a), n - max(0, -a)))
    return tuple(dst), tuple(src)


def apply_stencil_array(s: Stencil, u: np.ndarray, boundary: str = DIRICHLET, out=None):
    """``out(x) = sum_k b_k u(x + a_k)`` on a single-component array."""
    if u.ndim != s.ndim:
        raise ValueError(f"{s.ndim}-dimensional stencil applied to {u.ndim}-dimensional array")
    dtype = np.result_type(u.dtype, *[np.asarray(w).dtype for w in s.weights]) if len(s) else u.dtype
    if out is None:
        out = np.zeros(u.shape, dtype=dtype)
    if boundary == DIRICHLET:
        for off, w in s:
            dst, src = _shift_slices(off, u.shape)
            if dst is None:
                continue
            if w == 1:
                out[dst] += u[src]
            else:
                out[dst] += w * u[src]
    elif boundary == PERIODIC:
        for off, w in s:
            out += w * np.roll(u, tuple(-a for a in off), axis=tuple(range(u.ndim)))
    else:
        raise ValueError(f"unknown boundary policy {boundary!r}")
    return out


def apply_system_array(s, u: np.ndarray, boundary: str = DIRICHLET):
    """Apply a :class:`Stencil` or :class:`SystemStencil` to an array of shape ``(comp, *dims)``."""
    if isinstance(s, Stencil):
        if u.shape[0] != 1:
            raise ValueError("scalar stencil applied to a multi-component field")
        return apply_stencil_array(s, u[0], boundary)[np.newaxis]
    m = s.components
    if u.shape[0] != m:
        raise ValueError(f"system of {m} components applied to field with {u.shape[0]}")
    dtype = np.result_type(u.dtype, complex if s.is_complex() else float)
    out = np.zeros(u.shape, dtype=dtype)
    for i in range(m):
        for j in range(m):
            if len(s.block[i][j]):
                apply_stencil_array(s.block[i][j], u[j], boundary, out=out[i])
    return out


def _check_nested(fine_dims, coarse_dims):
    if len(fine_dims) != len(coarse_dims) or any(nf != 2 * nc + 1 for nf, nc in zip(fine_dims, coarse_dims)):
        raise ValueError(f"grids {fine_dims} and {coarse_dims} are not nested by a factor of two")


def restrict_array(r: Stencil, u_fine: np.ndarray, coarse_dims) -> np.ndarray:
    """Coarse point ``i`` reads the fine neighbourhood of fine point ``2i+1``."""
    _check_nested(u_fine.shape, coarse_dims)
    rad = r.radius()
    padded = np.pad(u_fine, [(p, p) for p in rad])
    dtype = np.result_type(u_fine.dtype, *[np.asarray(w).dtype for w in r.weights])
    out = np.zeros(tuple(coarse_dims), dtype=dtype)
    for off, w in r:
        idx = tuple(slice(1 + a + p, 1 + a + p + 2 * nc - 1, 2) for a, p, nc in zip(off, rad, coarse_dims))
        out += w * padded[idx]
    return out


def prolong_array(p: Stencil, u_coarse: np.ndarray, fine_dims) -> np.ndarray:
    """Scatter every coarse value to the fine neighbours of its coinciding fine point."""
    _check_nested(fine_dims, u_coarse.shape)
    rad = p.radius()
    dtype = np.result_type(u_coarse.dtype, *[np.asarray(w).dtype for w in p.weights])
    padded = np.zeros(tuple(n + 2 * q for n, q in zip(fine_dims, rad)), dtype=dtype)
    nc = u_coarse.shape
    for off, w in p:
        idx = tuple(slice(1 + a + q, 1 + a + q + 2 * n - 1, 2) for a, q, n in zip(off, rad, nc))
        padded[idx] += w * u_coarse
    inner = tuple(slice(q, q + n) for q, n in zip(rad, fine_dims))
    return padded[inner]


# --------------------------------------------------------------------------
# public operations on grid functions

def stencil_apply(s, u: GridFunction, boundary: str = DIRICHLET) -> GridFunction:
    if s.ndim != u.grid.ndim:
        raise ValueError(f"{s.ndim}-dimensional stencil applied to {u.grid.ndim}-dimensional grid")
    if boundary not in _BOUNDARIES:
        raise ValueError(f"unknown boundary policy {boundary!r}")
    return GridFunction(u.grid, apply_system_array(s, u.values, boundary))


def restrict_apply(r: Stencil, u_fine: GridFunction, coarse: GridDesc) -> GridFunction:
    vals = np.stack([restrict_array(r, v, coarse.dims) for v in u_fine.values])
    return GridFunction(coarse, vals)


def prolong_apply(p: Stencil, u_coarse: GridFunction, fine: GridDesc) -> GridFunction:
    vals = np.stack([prolong_array(p, v, fine.dims) for v in u_coarse.values])
    return GridFunction(fine, vals)


# --------------------------------------------------------------------------
# dense assembly (verification oracle)

def _flat_index(grid_dims, idx):
    """x-fastest linear index of integer index arrays ``idx`` (one per dimension)."""
    flat = np.zeros_like(idx[0])
    stride = 1
    for d, n in enumerate(grid_dims):
        flat = flat + idx[d] * stride
        stride *= n
    return flat


def _assemble_scalar(s: Stencil, grid: GridDesc, boundary: str, dtype):
    n = grid.size
    mat = np.zeros((n, n), dtype=dtype)
    pts = [a.ravel(order="F") for a in np.indices(grid.dims)]
    rows = _flat_index(grid.dims, pts)
    for off, w in s:
        nb = [p + a for p, a in zip(pts, off)]
        if boundary == PERIODIC:
            nb = [q % dim for q, dim in zip(nb, grid.dims)]
            mask = np.ones(n, dtype=bool)
        else:
            mask = np.all([(q >= 0) & (q < dim) for q, dim in zip(nb, grid.dims)], axis=0)
        cols = _flat_index(grid.dims, [q[mask] for q in nb])
        np.add.at(mat, (rows[mask], cols), w)
    return mat


def assemble_matrix(s, grid: GridDesc, boundary: str = DIRICHLET) -> np.ndarray:
    """Dense matrix ``M`` with ``M @ u.vector() == stencil_apply(s, u).vector()``.

    For a system stencil the unknowns are ordered component by component.
    """
    if isinstance(s, Stencil):
        return _assemble_scalar(s, grid, boundary, complex if s.is_complex() else float)
    m = s.components
    n = grid.size
    dtype = complex if s.is_complex() else float
    mat = np.zeros((m * n, m * n), dtype=dtype)
    for i in range(m):
        for j in range(m):
            mat[i * n:(i + 1) * n, j * n:(j + 1) * n] = _assemble_scalar(s.block[i][j], grid, boundary, dtype)
    return mat


def assemble_restriction(r: Stencil, fine: GridDesc, coarse: GridDesc) -> np.ndarray:
    _check_nested(fine.dims, coarse.dims)
    mat = np.zeros((coarse.size, fine.size), dtype=complex if r.is_complex() else float)
    pts = [a.ravel(order="F") for a in np.indices(coarse.dims)]
    rows = _flat_index(coarse.dims, pts)
    for off, w in r:
        nb = [2 * p + 1 + a for p, a in zip(pts, off)]
        mask = np.all([(q >= 0) & (q < dim) for q, dim in zip(nb, fine.dims)], axis=0)
        np.add.at(mat, (rows[mask], _flat_index(fine.dims, [q[mask] for q in nb])), w)
    return mat


def assemble_prolongation(p: Stencil, coarse: GridDesc, fine: GridDesc) -> np.ndarray:
    _check_nested(fine.dims, coarse.dims)
    mat = np.zeros((fine.size, coarse.size), dtype=complex if p.is_complex() else float)
    pts = [a.ravel(order="F") for a in np.indices(coarse.dims)]
    cols = _flat_index(coarse.dims, pts)
    for off, w in p:
        nb = [2 * q + 1 + a for q, a in zip(pts, off)]
        mask = np.all([(q >= 0) & (q < dim) for q, dim in zip(nb, fine.dims)], axis=0)
        np.add.at(mat, (_flat_index(fine.dims, [q[mask] for q in nb]), cols[mask]), w)
    return mat


def _shift_1d(a: int, n: int):
    """``n x n`` matrix with ones at ``(i, i + a)``."""
    return sp.eye(n, n, k=a, format="csr")


def _kron_all(mats):
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return out


def sparse_stencil_matrix(s: Stencil, dims) -> sp.csr_matrix:
    """Stencil as a sparse matrix acting on ``u.reshape(-1)`` (row-major flattening, Dirichlet)."""
    size = int(np.prod(dims))
    dtype = complex if s.is_complex() else float
    mat = sp.csr_matrix((size, size), dtype=dtype)
    for off, w in s:
        mat = mat + w * _kron_all([_shift_1d(a, n) for a, n in zip(off, dims)])
    return mat.tocsr()


def _select_1d(a: int, nf: int, nc: int):
    """``nc x nf`` matrix with ones at ``(i, 2i + 1 + a)`` where that fine index exists."""
    rows = np.arange(nc)
    cols = 2 * rows + 1 + a
    ok = (cols >= 0) & (cols < nf)
    return sp.csr_matrix((np.ones(ok.sum()), (rows[ok], cols[ok])), shape=(nc, nf))


def sparse_restriction_matrix(r: Stencil, fine_dims, coarse_dims) -> sp.csr_matrix:
    """Restriction kernel as a sparse matrix on row-major flattened arrays."""
    _check_nested(tuple(fine_dims), tuple(coarse_dims))
    mat = sp.csr_matrix((int(np.prod(coarse_dims)), int(np.prod(fine_dims))))
    for off, w in r:
        mat = mat + w * _kron_all([_select_1d(a, nf, nc) for a, nf, nc in zip(off, fine_dims, coarse_dims)])
    return mat.tocsr()


def sparse_prolongation_matrix(p: Stencil, coarse_dims, fine_dims) -> sp.csr_matrix:
    """Prolongation (scatter) kernel as a sparse matrix on row-major flattened arrays."""
    _check_nested(tuple(fine_dims), tuple(coarse_dims))
    mat = sp.csr_matrix((int(np.prod(coarse_dims)), int(np.prod(fine_dims))))
    for off, w in p:
        mat = mat + w * _kron_all([_select_1d(a, nf, nc) for a, nf, nc in zip(off, fine_dims, coarse_dims)])
    return mat.T.tocsr()


class GridOperator:
    """A (system) stencil bound to a grid, with an optional pointwise diagonal shift.

    The shift carries position-dependent boundary modifications (for instance
    eliminated Robin ghost points) that a constant stencil cannot express.
    """

    def __init__(self, stencil, grid: GridDesc, diag_shift=None, name: str = "A"):
        if stencil.ndim != grid.ndim:
            raise ValueError("operator stencil and grid dimensionality differ")
        self.stencil = stencil
        self.grid = grid
        self.name = name
        self.components = 1 if isinstance(stencil, Stencil) else stencil.components
        if diag_shift is not None:
            diag_shift = np.asarray(diag_shift)
            if diag_shift.shape == grid.dims:
                diag_shift = diag_shift[np.newaxis]
            if diag_shift.shape != (self.components,) + grid.dims:
                raise ValueError("diag_shift does not match the operator shape")
        self.diag_shift = diag_shift
        cplx = stencil.is_complex() or (diag_shift is not None and np.iscomplexobj(diag_shift))
        self.dtype = np.dtype(complex if cplx else float)
        self._sparse = None

    @property
    def shape(self):
        return (self.components,) + self.grid.dims

    @property
    def size(self) -> int:
        return self.components * self.grid.size

    def block(self, i: int, j: int) -> Stencil:
        if isinstance(self.stencil, Stencil):
            return self.stencil
        return self.stencil.block[i][j]

    def sparse(self) -> sp.csr_matrix:
        """The operator as a CSR matrix acting on ``u.reshape(-1)`` of a ``(comp, *dims)`` array."""
        if self._sparse is None:
            dims = self.grid.dims
            m = self.components
            blocks = [[sparse_stencil_matrix(self.block(i, j), dims) for j in range(m)] for i in range(m)]
            mat = sp.bmat(blocks, format="csr") if m > 1 else blocks[0][0]
            if self.diag_shift is not None:
                mat = (mat + sp.diags(self.diag_shift.reshape(-1))).tocsr()
            self._sparse = mat.astype(self.dtype)
        return self._sparse

    def apply(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u)
        if u.shape != self.shape:
            raise ValueError(f"operator of shape {self.shape} applied to array of shape {u.shape}")
        return (self.sparse() @ u.reshape(-1)).reshape(u.shape)

    def apply_stencil(self, u: np.ndarray) -> np.ndarray:
        """Matrix-free application through the stencil kernels (reference path)."""
        out = apply_system_array(self.stencil, u)
        if self.diag_shift is not None:
            out = out + self.diag_shift * u
        return out

    def __call__(self, u):
        if isinstance(u, GridFunction):
            return GridFunction(self.grid, self.apply(u.values))
        return self.apply(u)

    def point_diagonal(self) -> np.ndarray:
        """Diagonal entries, shape ``(components, *dims)``."""
        zero = (0,) * self.grid.ndim
        d = np.empty(self.shape, dtype=self.dtype)
        for c in range(self.components):
            d[c] = self.block(c, c).weight(zero, 0.0)
        if self.diag_shift is not None:
            d = d + self.diag_shift
        return d

    def point_blocks(self) -> np.ndarray:
        """Pointwise component coupling matrices, shape ``(*dims, comp, comp)``."""
        zero = (0,) * self.grid.ndim
        m = self.components
        blk = np.zeros(self.grid.dims + (m, m), dtype=self.dtype)
        for i in range(m):
            for j in range(m):
                blk[..., i, j] = self.block(i, j).weight(zero, 0.0)
            if self.diag_shift is not None:
                blk[..., i, i] += self.diag_shift[i]
        return blk

    def assemble(self) -> np.ndarray:
        mat = assemble_matrix(self.stencil, self.grid).astype(self.dtype)
        if self.diag_shift is not None:
            shift = GridFunction(self.grid, self.diag_shift).vector()
            mat[np.diag_indices_from(mat)] += shift
        return mat

    def __repr__(self):
        return f"GridOperator({self.name}, dims={self.grid.dims}, components={self.components})"
