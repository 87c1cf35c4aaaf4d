"""Periodic principal eigenvalue of the tilted linearized operator.

For a tilt vector z the operator acting on cell-periodic functions is

    L_z psi = div(A grad psi) - 2 (A z) . grad psi + q . grad psi
              + ( -div(A z) - q.z + z.A z + d_u f(x,0) ) psi,

obtained by substituting u = exp(-z.x) psi into the equation linearized at
u = 0.  (Note the first-order drift term enters as q.grad, which is what the
substitution produces.)  Its principal eigenvalue k(z), the one carrying a
positive periodic eigenfunction, feeds the directional-speed formula
c*(e) = min_{lambda>0} k(lambda e)/lambda.

Discretization: uniform periodic grid with M nodes per axis, h = 1/M;
conservative (flux-form) second-order differences with the diffusion
coefficient averaged to cell faces, centered differences for the drift, and
grid centered differences for div(A z).  The matrix decomposes as

    L(z) = K0 + sum_d z_d K1[d] + sum_{d<=e} z_d z_e K2[d,e]

with all components sharing one sparsity pattern, so scans over many z reuse
the sampled coefficient grids and assemble each L(z) by axpy on the data
array alone.

The eigenpair is extracted by diagonally shifted power iteration on
sigma I + L with sigma = ||L||_inf + 1: the shift makes the stencil
nonnegative whenever the mesh Peclet number |(q - 2Az)| h / (2 a) is at most
one, and the dominant eigenvalue sigma + k then carries the positive
eigenvector.  Convergence is declared on the infinity-norm residual of L
itself, so the shift never enters the reported eigenvalue.
"""

import threading
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .media import MediumSpec

__all__ = ["DiscreteOperator", "EigenResult", "NoConvergence",
           "NonPositiveEigenfunction", "assemble", "principal_eigen", "k_of",
           "clear_caches"]


class NoConvergence(Exception):
    def __init__(self, max_iter, residual):
        super().__init__(f"power iteration did not reach tolerance in "
                         f"{max_iter} iterations (last residual {residual:.3e})")
        self.max_iter = max_iter
        self.residual = residual


class NonPositiveEigenfunction(Exception):
    """Converged eigenfunction is not strictly positive: assembly bug or h too coarse."""


@dataclass(frozen=True)
class DiscreteOperator:
    N: int
    M: int
    z: tuple
    matrix: sp.csr_matrix
    medium_hash: str

    @property
    def h(self):
        return 1.0 / self.M

    def toarray(self):
        return self.matrix.toarray()


@dataclass(frozen=True)
class EigenResult:
    k: float
    psi: np.ndarray        # positive eigenfunction on the cell grid, max = 1
    residual: float
    M: int
    iterations: int


# ---------------------------------------------------------------------------
# Sampled coefficient grids and the z-decomposed stencil (cached per medium, M)
# ---------------------------------------------------------------------------

class _StencilComponents:
    """Shared sparsity pattern plus K0 / K1[d] / K2[d,e] value grids."""

    def __init__(self, medium, M):
        n_dim = medium.N
        h = 1.0 / M
        shape = (M,) * n_dim
        axes = [np.arange(M) * h for _ in range(n_dim)]
        mesh = tuple(np.meshgrid(*axes, indexing="ij"))

        a = {}
        for i in range(n_dim):
            for j in range(i, n_dim):
                grid = np.asarray(medium.a_entry(i, j).evaluate(mesh), dtype=float)
                a[i, j] = np.broadcast_to(grid, shape).copy()
        q = [np.broadcast_to(np.asarray(medium.q_entry(d).evaluate(mesh),
                                        dtype=float), shape).copy()
             for d in range(n_dim)]
        fu0 = np.broadcast_to(np.asarray(medium.fu0(mesh), dtype=float),
                              shape).copy()

        cross_pairs = [(d, e) for d in range(n_dim) for e in range(d + 1, n_dim)
                       if np.any(a[d, e] != 0.0)]

        offsets = [(0,) * n_dim]
        for d in range(n_dim):
            for s in (+1, -1):
                off = [0] * n_dim
                off[d] = s
                offsets.append(tuple(off))
        for d, e in cross_pairs:
            for sd in (+1, -1):
                for se in (+1, -1):
                    off = [0] * n_dim
                    off[d], off[e] = sd, se
                    offsets.append(tuple(off))
        self.offsets = offsets
        self.offset_index = {off: i for i, off in enumerate(offsets)}
        n = M ** n_dim
        n_off = len(offsets)

        def blank():
            return np.zeros((n_off, n))

        def fill(component, off, grid):
            component[self.offset_index[off]] += grid.ravel()

        K0 = blank()
        K1 = [blank() for _ in range(n_dim)]
        K2 = {}

        center = (0,) * n_dim
        inv_h2 = 1.0 / (h * h)
        inv_2h = 1.0 / (2.0 * h)

        def axis_offset(d, s):
            off = [0] * n_dim
            off[d] = s
            return tuple(off)

        # diffusion: flux form with face-averaged diagonal entries
        for d in range(n_dim):
            a_dd = a[d, d]
            a_plus = 0.5 * (a_dd + np.roll(a_dd, -1, axis=d))
            a_minus = np.roll(a_plus, 1, axis=d)
            fill(K0, axis_offset(d, +1), a_plus * inv_h2)
            fill(K0, axis_offset(d, -1), a_minus * inv_h2)
            fill(K0, center, -(a_plus + a_minus) * inv_h2)

        # diffusion: mixed second derivatives (nonzero off-diagonal A only)
        inv_4h2 = 1.0 / (4.0 * h * h)
        for d, e in cross_pairs:
            a_de = a[d, e]
            rp_d = np.roll(a_de, -1, axis=d)
            rm_d = np.roll(a_de, +1, axis=d)
            rp_e = np.roll(a_de, -1, axis=e)
            rm_e = np.roll(a_de, +1, axis=e)
            fill(K0, _pair_offset(n_dim, d, +1, e, +1), (rp_d + rp_e) * inv_4h2)
            fill(K0, _pair_offset(n_dim, d, +1, e, -1), -(rp_d + rm_e) * inv_4h2)
            fill(K0, _pair_offset(n_dim, d, -1, e, +1), -(rm_d + rp_e) * inv_4h2)
            fill(K0, _pair_offset(n_dim, d, -1, e, -1), (rm_d + rm_e) * inv_4h2)

        # drift q . grad (z-independent) and -2 (A z) . grad (linear in z)
        for d in range(n_dim):
            fill(K0, axis_offset(d, +1), q[d] * inv_2h)
            fill(K0, axis_offset(d, -1), -q[d] * inv_2h)
        for e in range(n_dim):
            for d in range(n_dim):
                a_de = a[min(d, e), max(d, e)]
                fill(K1[e], axis_offset(d, +1), -2.0 * a_de * inv_2h)
                fill(K1[e], axis_offset(d, -1), 2.0 * a_de * inv_2h)

        # zeroth order: fu0 + z-linear (-div(A z) - q.z) + z-quadratic z.Az
        fill(K0, center, fu0)
        for e in range(n_dim):
            div_col = np.zeros(shape)
            for d in range(n_dim):
                a_de = a[min(d, e), max(d, e)]
                div_col += (np.roll(a_de, -1, axis=d)
                            - np.roll(a_de, +1, axis=d)) * inv_2h
            fill(K1[e], center, -div_col - q[e])
        for d in range(n_dim):
            for e in range(d, n_dim):
                K2_de = blank()
                factor = 1.0 if d == e else 2.0
                fill(K2_de, center, factor * a[d, e])
                K2[d, e] = K2_de

        self.K0, self.K1, self.K2 = K0, K1, K2
        self.shape = shape
        self.n = n

        # one CSR template; per-z assembly just permutes a combined data vector
        idx = np.arange(n).reshape(shape)
        rows = np.concatenate([idx.ravel()] * n_off)
        cols = np.concatenate([
            np.roll(idx, shift=tuple(-o for o in off), axis=tuple(range(n_dim))).ravel()
            for off in offsets])
        template = sp.coo_matrix(
            (np.arange(rows.size, dtype=float), (rows, cols)),
            shape=(n, n)).tocsr()
        self.perm = template.data.astype(np.int64)
        self.indices = template.indices
        self.indptr = template.indptr

    def matrix_for(self, z):
        vals = self.K0.copy()
        for e, z_e in enumerate(z):
            if z_e != 0.0:
                vals += z_e * self.K1[e]
        for (d, e), K2_de in self.K2.items():
            w = z[d] * z[e]
            if w != 0.0:
                vals += w * K2_de
        data = vals.ravel()[self.perm]
        return sp.csr_matrix((data, self.indices, self.indptr),
                             shape=(self.n, self.n))


def _pair_offset(n_dim, d, sd, e, se):
    off = [0] * n_dim
    off[d], off[e] = sd, se
    return tuple(off)


class _LRU:
    def __init__(self, capacity):
        self.capacity = capacity
        self._data = OrderedDict()
        self._lock = threading.RLock()

    def get_or_compute(self, key, compute):
        with self._lock:
            if key in self._data:
                self._data.move_to_end(key)
                return self._data[key]
        value = compute()
        with self._lock:
            self._data[key] = value
            self._data.move_to_end(key)
            while len(self._data) > self.capacity:
                self._data.popitem(last=False)
        return value

    def clear(self):
        with self._lock:
            self._data.clear()

    def __len__(self):
        return len(self._data)


_STENCIL_CACHE = _LRU(capacity=32)
_K_CACHE = _LRU(capacity=10_000)


def clear_caches():
    _STENCIL_CACHE.clear()
    _K_CACHE.clear()


def _components(medium, M):
    return _STENCIL_CACHE.get_or_compute(
        (medium.content_hash, M), lambda: _StencilComponents(medium, M))


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------

def assemble(medium: MediumSpec, z, M: int) -> DiscreteOperator:
    """Assemble L_z on the M^N periodic cell grid."""
    if M < 8:
        raise ValueError("grid size M must be at least 8")
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if z.shape != (medium.N,):
        raise ValueError(f"z must have {medium.N} components")
    comp = _components(medium, M)
    return DiscreteOperator(N=medium.N, M=M, z=tuple(z),
                            matrix=comp.matrix_for(z),
                            medium_hash=medium.content_hash)


def principal_eigen(op: DiscreteOperator, tol: float = 1e-10,
                    max_iter: int = 200_000) -> EigenResult:
    """Dominant-real-part eigenpair by diagonally shifted power iteration.

    Iterates psi <- (sigma I + L) psi with sigma = ||L||_inf + 1, starting
    from the constant vector; stops when ||L psi - k psi||_inf / ||psi||_inf
    <= tol with k the Rayleigh quotient.  The eigenvalue is computed from L
    directly, so the large shift does not contaminate it.
    """
    L = op.matrix
    sigma = float(np.max(np.abs(L).sum(axis=1))) + 1.0
    psi = np.ones(L.shape[0])
    k = 0.0
    res = np.inf
    for it in range(1, max_iter + 1):
        y = L @ psi
        k = float(psi @ y) / float(psi @ psi)
        res = float(np.max(np.abs(y - k * psi))) / float(np.max(np.abs(psi)))
        if res <= tol:
            top = psi.max()
            if top <= 0.0:
                raise NonPositiveEigenfunction(
                    "eigenfunction has nonpositive maximum")
            psi = psi / top
            if not np.all(psi > 0.0):
                raise NonPositiveEigenfunction(
                    "eigenfunction changes sign: assembly bug or h too coarse")
            return EigenResult(k=k, psi=psi.reshape((op.M,) * op.N),
                               residual=res, M=op.M, iterations=it)
        psi = y + sigma * psi
        psi /= np.max(np.abs(psi))
    raise NoConvergence(max_iter, res)


def k_of(medium: MediumSpec, z, M: int, tol: float = 1e-10,
         max_iter: int = 200_000) -> float:
    """Memoized principal eigenvalue; cache key (medium, z rounded 1e-12, M)."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    key = (medium.content_hash, tuple(np.round(z, 12)), M, tol)

    def compute():
        return principal_eigen(assemble(medium, z, M), tol=tol,
                               max_iter=max_iter).k

    return _K_CACHE.get_or_compute(key, compute)
