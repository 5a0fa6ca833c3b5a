"""Triangular pseudo-Euclidean representations of Ito monoids.

A conditionally positive functional on a sampled monoid is realised by
operators on C + K + C of the form

    [[1, k*(b), l(b)],
     [0, j(b),  k(b)],
     [0, 0,     1   ]]

with the pseudo-adjoint ``B^dagger = g B^H g`` for the anti-diagonal metric g.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from .ito_algebra import (
    AlgebraElement,
    ItoAlgebra,
    l_value,
    monoid_mul,
    star,
)

DEFAULT_GNS_TOL = 1e-9
KEY_DIGITS = 12


# -- triangular operators ----------------------------------------------------

@dataclass(frozen=True, eq=False)
class TriangularOp:
    """Upper-triangular block operator with unit corners."""

    l: complex
    k_row: np.ndarray
    k_col: np.ndarray
    j_block: np.ndarray

    def __post_init__(self):
        kr = np.array(self.k_row, dtype=complex).reshape(-1)
        kc = np.array(self.k_col, dtype=complex).reshape(-1)
        j = np.array(self.j_block, dtype=complex).reshape(kr.size, kr.size)
        if kc.size != kr.size:
            raise ValueError("row and column parts must have equal length")
        object.__setattr__(self, "l", complex(self.l))
        object.__setattr__(self, "k_row", kr)
        object.__setattr__(self, "k_col", kc)
        object.__setattr__(self, "j_block", j)

    @property
    def dim_K(self) -> int:
        return self.k_row.size

    @classmethod
    def identity(cls, dim_K: int) -> "TriangularOp":
        z = np.zeros(dim_K, dtype=complex)
        return cls(0.0, z, z, np.eye(dim_K, dtype=complex))

    def to_matrix(self) -> np.ndarray:
        m = self.dim_K
        out = np.zeros((m + 2, m + 2), dtype=complex)
        out[0, 0] = out[-1, -1] = 1.0
        out[0, 1 : m + 1] = self.k_row
        out[0, -1] = self.l
        out[1 : m + 1, 1 : m + 1] = self.j_block
        out[1 : m + 1, -1] = self.k_col
        return out

    @classmethod
    def from_matrix(cls, mat: np.ndarray, tol: float = 1e-12) -> "TriangularOp":
        mat = np.asarray(mat, dtype=complex)
        m = mat.shape[0] - 2
        lower = np.tril(mat, -1)
        corner_err = max(abs(mat[0, 0] - 1), abs(mat[-1, -1] - 1))
        bad = np.max(np.abs(lower[1:, :1])) if m >= 0 else 0.0
        bad = max(bad, np.max(np.abs(mat[-1, :-1])) if mat.shape[0] > 1 else 0.0)
        if bad > tol or corner_err > tol:
            raise ValueError("matrix is not unit-corner block triangular")
        return cls(mat[0, -1], mat[0, 1 : m + 1], mat[1 : m + 1, -1], mat[1 : m + 1, 1 : m + 1])

    def quadruple(self) -> "Quadruple":
        return Quadruple(self.l, self.k_row, self.k_col, self.j_block - np.eye(self.dim_K))


def metric(dim_K: int) -> np.ndarray:
    """Anti-diagonal Minkowski metric on C + K + C."""
    g = np.zeros((dim_K + 2, dim_K + 2), dtype=complex)
    g[0, -1] = g[-1, 0] = 1.0
    g[1 : dim_K + 1, 1 : dim_K + 1] = np.eye(dim_K)
    return g


def pseudo_adjoint_matrix(B: np.ndarray) -> np.ndarray:
    g = metric(B.shape[0] - 2)
    return g @ B.conj().T @ g


def pseudo_adjoint(T: TriangularOp) -> TriangularOp:
    return TriangularOp(np.conj(T.l), np.conj(T.k_col), np.conj(T.k_row), T.j_block.conj().T)


def tri_mul(A: TriangularOp, B: TriangularOp) -> TriangularOp:
    if A.dim_K != B.dim_K:
        raise ValueError(f"dimension mismatch: {A.dim_K} vs {B.dim_K}")
    return TriangularOp(
        B.l + A.k_row @ B.k_col + A.l,
        A.k_row @ B.j_block + B.k_row,
        A.j_block @ B.k_col + A.k_col,
        A.j_block @ B.j_block,
    )


def op_distance(A: TriangularOp, B: TriangularOp) -> float:
    return float(np.max(np.abs(A.to_matrix() - B.to_matrix())))


def normal_order_factor(G: TriangularOp) -> tuple[TriangularOp, ...]:
    """Split G into corner, column, diagonal and row factors.

    ``G = corner(g_+^-) . column(g_+^o) . diag(G_o^o) . row(g_o^-)``.
    """
    m = G.dim_K
    z = np.zeros(m, dtype=complex)
    eye = np.eye(m, dtype=complex)
    corner = TriangularOp(G.l, z, z, eye)
    column = TriangularOp(0.0, z, G.k_col, eye)
    diag = TriangularOp(0.0, z, z, G.j_block)
    row = TriangularOp(0.0, G.k_row, z, eye)
    return corner, column, diag, row


# -- quadruples --------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Quadruple:
    """Four-slot data (l, k*, k, i) of an algebra element."""

    l: complex
    k_row: np.ndarray
    k_col: np.ndarray
    i_block: np.ndarray

    def __post_init__(self):
        kr = np.array(self.k_row, dtype=complex).reshape(-1)
        kc = np.array(self.k_col, dtype=complex).reshape(-1)
        i = np.array(self.i_block, dtype=complex).reshape(kr.size, kr.size)
        if kc.size != kr.size:
            raise ValueError("row and column parts must have equal length")
        object.__setattr__(self, "l", complex(self.l))
        object.__setattr__(self, "k_row", kr)
        object.__setattr__(self, "k_col", kc)
        object.__setattr__(self, "i_block", i)

    @property
    def dim_K(self) -> int:
        return self.k_row.size

    def triangular(self) -> TriangularOp:
        return TriangularOp(self.l, self.k_row, self.k_col, self.i_block + np.eye(self.dim_K))

    def as_array(self) -> np.ndarray:
        """The 2x2 block matrix [[l, k*], [k, i]]."""
        m = self.dim_K
        out = np.empty((m + 1, m + 1), dtype=complex)
        out[0, 0] = self.l
        out[0, 1:] = self.k_row
        out[1:, 0] = self.k_col
        out[1:, 1:] = self.i_block
        return out


def quadruple_mul(p: Quadruple, q: Quadruple) -> Quadruple:
    if p.dim_K != q.dim_K:
        raise ValueError(f"dimension mismatch: {p.dim_K} vs {q.dim_K}")
    return Quadruple(
        p.k_row @ q.k_col,
        p.k_row @ q.i_block,
        p.i_block @ q.k_col,
        p.i_block @ q.i_block,
    )


def quadruple_star(p: Quadruple) -> Quadruple:
    return Quadruple(np.conj(p.l), np.conj(p.k_col), np.conj(p.k_row), p.i_block.conj().T)


def quadruple_distance(p: Quadruple, q: Quadruple) -> float:
    return float(np.max(np.abs(p.as_array() - q.as_array())))


# -- GNS construction --------------------------------------------------------

def element_key(b: AlgebraElement) -> tuple:
    v = np.round(b.coeffs, KEY_DIGITS) + 0.0  # drop negative zeros
    return tuple(zip(v.real.tolist(), v.imag.tolist()))


@dataclass(eq=False)
class TriangularRep:
    """Canonical triangular representation built from a sample."""

    alg: ItoAlgebra
    sample: tuple[AlgebraElement, ...]
    W: np.ndarray
    gram_eigenvalues: np.ndarray
    tol: float
    _table: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def dim_K(self) -> int:
        return self.W.shape[1]

    @property
    def e_vector(self) -> np.ndarray:
        e = np.zeros(self.dim_K + 2, dtype=complex)
        e[-1] = 1.0
        return e

    def _lam(self, x: AlgebraElement) -> complex:
        return l_value(x)

    def gamma(self, x: AlgebraElement) -> np.ndarray:
        """Pairings l(b_c* x) computed from the monoid functional."""
        out = np.empty(len(self.sample), dtype=complex)
        for c, bc in enumerate(self.sample):
            bs = star(bc)
            out[c] = self._lam(monoid_mul(bs, x)) - self._lam(bs) - self._lam(x)
        return out

    def coord(self, x: AlgebraElement) -> np.ndarray:
        """Orthonormal coordinates of the class of k(x) in K."""
        return self.W.conj().T @ self.gamma(x)

    def closure_residual(self, x: AlgebraElement) -> float:
        """Squared norm of k(x) lost by projecting onto the sampled span."""
        xs = star(x)
        full = self._lam(monoid_mul(xs, x)) - self._lam(xs) - self._lam(x)
        return float(abs(full.real - np.linalg.norm(self.coord(x)) ** 2))

    def _build(self, b: AlgebraElement) -> TriangularOp:
        m = self.dim_K
        kb = self.coord(b)
        kstar = self.coord(star(b)).conj()
        j = np.empty((m, m), dtype=complex)
        for i in range(m):
            col = np.zeros(m, dtype=complex)
            for c, bc in enumerate(self.sample):
                if self.W[c, i] != 0:
                    col += self.W[c, i] * (self.coord(monoid_mul(b, bc)) - kb)
            j[:, i] = col
        return TriangularOp(l_value(b), kstar, kb, j)

    def op(self, b: AlgebraElement) -> TriangularOp:
        """TriangularOp of b, built on first request and cached."""
        if not b.parent.same_as(self.alg):
            raise ValueError("element belongs to a different algebra")
        key = element_key(b)
        with self._lock:
            hit = self._table.get(key)
        if hit is not None:
            return hit
        # the unit of the monoid is represented exactly
        T = TriangularOp.identity(self.dim_K) if not np.any(b.coeffs) else self._build(b)
        with self._lock:
            return self._table.setdefault(key, T)

    @property
    def table(self) -> dict:
        with self._lock:
            return dict(self._table)


def gns_construct(
    alg: ItoAlgebra, sample, tol: float = DEFAULT_GNS_TOL
) -> TriangularRep:
    """Canonical representation of l restricted to the monoid generated by sample."""
    elems = []
    seen = set()
    for b in sample:
        if not b.parent.same_as(alg):
            raise ValueError("sample element belongs to a different algebra")
        key = element_key(b)
        if key in seen or np.all(b.coeffs == 0):
            continue
        seen.add(key)
        elems.append(b)
    m = len(elems)
    gram = np.zeros((m, m), dtype=complex)
    for a_i, a in enumerate(elems):
        a_s = star(a)
        for c_i, c in enumerate(elems):
            gram[a_i, c_i] = l_value(monoid_mul(a_s, c)) - l_value(a_s) - l_value(c)
    gram = 0.5 * (gram + gram.conj().T)
    if m:
        lam, V = np.linalg.eigh(gram)
    else:
        lam, V = np.zeros(0), np.zeros((0, 0), dtype=complex)
    scale = max(1.0, float(np.max(np.abs(lam)))) if m else 1.0
    if m and lam[0] < -tol * scale:
        raise ValueError(
            f"not conditionally positive: Gram eigenvalue {lam[0]:.3e} below -{tol:g}"
        )
    keep = lam > tol * scale
    W = V[:, keep] / np.sqrt(lam[keep])
    rep = TriangularRep(alg, tuple(elems), W, lam, tol)
    rep.op(alg.zero())
    for b in elems:
        rep.op(b)
    return rep


def gram_of_k(rep: TriangularRep, elems) -> np.ndarray:
    ks = np.array([rep.op(b).k_col for b in elems]).reshape(len(elems), rep.dim_K)
    return ks.conj() @ ks.T


@dataclass
class CocycleReport:
    j_k: float
    kstar_j: float
    pairing: float
    homomorphism: float
    star_property: float
    closure: float

    def max_residual(self) -> float:
        return max(self.j_k, self.kstar_j, self.pairing, self.homomorphism, self.star_property)

    def passed(self, tol: float) -> bool:
        return self.max_residual() <= tol


def verify_cocycles(rep: TriangularRep, a: AlgebraElement, b: AlgebraElement) -> CocycleReport:
    """Residuals of the cocycle, pairing, product and star relations for (a, b)."""
    ab = monoid_mul(a, b)
    Ta, Tb, Tab = rep.op(a), rep.op(b), rep.op(ab)
    lam = l_value
    j_k = np.max(np.abs(Ta.j_block @ Tb.k_col - (Tab.k_col - Ta.k_col)), initial=0.0)
    ks_j = np.max(np.abs(Ta.k_row @ Tb.j_block - (Tab.k_row - Tb.k_row)), initial=0.0)
    pairing = abs(Ta.k_row @ Tb.k_col - (lam(ab) - lam(a) - lam(b)))
    hom = op_distance(tri_mul(Ta, Tb), Tab)
    st = max(
        op_distance(pseudo_adjoint(Ta), rep.op(star(a))),
        op_distance(pseudo_adjoint(Tb), rep.op(star(b))),
    )
    closure = max(rep.closure_residual(a), rep.closure_residual(b), rep.closure_residual(ab))
    return CocycleReport(float(j_k), float(ks_j), float(pairing), hom, st, closure)


def corner_identity_residual(rep: TriangularRep, b: AlgebraElement) -> float:
    """|e^dagger j(b) e - l(b)| with e the canonical zero-norm column."""
    e = rep.e_vector
    g = metric(rep.dim_K)
    val = e.conj() @ g @ rep.op(b).to_matrix() @ e
    return float(abs(val - l_value(b)))


# -- reduction of a general representation -----------------------------------

@dataclass
class ReductionReport:
    S: np.ndarray
    isometry_residual: float
    vector_residual: float
    canonical: list
    triangular_residual: float


def reduction_matrix(U: np.ndarray, e_o: np.ndarray, e_p: complex) -> np.ndarray:
    """Pseudo-isometry carrying a general representation to canonical form.

    The general cyclic vector is given by its covector ``(1, e_o, e_p)``.
    """
    U = np.atleast_2d(np.asarray(U, dtype=complex))
    e_o = np.asarray(e_o, dtype=complex).reshape(-1)
    n, m = U.shape
    S = np.zeros((n + 2, m + 2), dtype=complex)
    S[0, 0] = 1.0
    S[0, 1 : m + 1] = e_o @ U
    S[0, -1] = np.conj(e_p)
    S[1 : n + 1, 1 : m + 1] = -U
    S[1 : n + 1, -1] = e_o.conj()
    S[-1, -1] = 1.0
    return S


def general_pseudo_adjoint(S: np.ndarray) -> np.ndarray:
    """g_in S^H g_out for a map between spaces of possibly different size."""
    return metric(S.shape[1] - 2) @ S.conj().T @ metric(S.shape[0] - 2)


def reduce_to_canonical(
    j_general, U: np.ndarray, e_general, tol: float = 1e-10
) -> ReductionReport:
    """Bring matrices ``j_general`` with cyclic covector ``e_general`` to canonical form.

    ``e_general = (1, e_o, e_p)`` must have zero pseudo-norm, i.e.
    ``|e_o|^2 + 2 Re e_p = 0``.
    """
    e_general = np.asarray(e_general, dtype=complex).reshape(-1)
    if abs(e_general[0] - 1) > tol:
        raise ValueError("first component of the cyclic covector must be 1")
    e_o, e_p = e_general[1:-1], e_general[-1]
    norm = float(np.vdot(e_o, e_o).real + 2 * e_p.real)
    if abs(norm) > tol * max(1.0, abs(e_p)):
        raise ValueError(f"cyclic vector is not pseudo-null: |e_o|^2 + 2 Re e_p = {norm:.3e}")
    S = reduction_matrix(U, e_o, e_p)
    Sd = general_pseudo_adjoint(S)
    iso = float(np.max(np.abs(Sd @ S - np.eye(S.shape[1]))))
    v = np.concatenate([[np.conj(e_p)], e_o.conj(), [1.0]])
    target = np.zeros(S.shape[1], dtype=complex)
    target[-1] = 1.0
    vec = float(np.max(np.abs(Sd @ v - target)))
    canonical = []
    tri_res = 0.0
    for J in j_general:
        C = Sd @ np.asarray(J, dtype=complex) @ S
        lower = np.tril(C, -1)
        tri_res = max(
            tri_res,
            float(np.max(np.abs(lower[1:, :1]), initial=0.0)),
            float(np.max(np.abs(C[-1, :-1]), initial=0.0)),
            abs(C[0, 0] - 1),
            abs(C[-1, -1] - 1),
        )
        canonical.append(TriangularOp.from_matrix(C, tol=np.inf))
    return ReductionReport(S, iso, vec, canonical, float(tri_res))


# -- preset state representations --------------------------------------------

@dataclass(frozen=True, eq=False)
class PoissonStateRep:
    """Per-point data i(b) = B, k(b) = B e, k*(b) = e^H B, l(b) = e^H B e."""

    e: np.ndarray

    def quadruple(self, B) -> Quadruple:
        B = np.atleast_2d(np.asarray(B, dtype=complex))
        e = self.e
        return Quadruple(e.conj() @ B @ e, e.conj() @ B, B @ e, B)

    def triangular(self, B) -> TriangularOp:
        return self.quadruple(B).triangular()


def poisson_state_rep(e) -> PoissonStateRep:
    e = np.asarray(e, dtype=complex).reshape(-1)
    return PoissonStateRep(e)


@dataclass(frozen=True, eq=False)
class GaussianStateRep:
    """Per-point data for b = (beta, eta): i = 0, k(b) = R eta, k*(b) = (R eta#)^H.

    ``R`` is the square root of the covariance metric, ``eta# = C conj(eta)``
    and ``l(b) = beta + (eta, theta)`` with the symmetrised pairing
    ``(eta, theta) = (<eta#|theta> + <theta#|eta>) / 2``.
    """

    theta: np.ndarray
    C: np.ndarray
    G: np.ndarray
    R: np.ndarray

    @property
    def dim_H(self) -> int:
        return self.theta.size

    def sharp(self, eta) -> np.ndarray:
        return self.C @ np.conj(np.asarray(eta, dtype=complex).reshape(-1))

    def pairing(self, xi, zeta) -> complex:
        return complex(np.conj(xi) @ self.G @ zeta)

    def l(self, beta, eta) -> complex:
        eta = np.asarray(eta, dtype=complex).reshape(-1)
        th = self.theta
        return complex(beta) + 0.5 * (
            self.pairing(self.sharp(eta), th) + self.pairing(self.sharp(th), eta)
        )

    def star(self, beta, eta):
        return np.conj(beta), self.sharp(eta)

    def quadruple(self, beta, eta) -> Quadruple:
        eta = np.asarray(eta, dtype=complex).reshape(-1)
        k = self.R @ eta
        kstar = (self.R @ self.sharp(eta)).conj()
        return Quadruple(self.l(beta, eta), kstar, k, np.zeros((self.dim_H, self.dim_H)))

    def triangular(self, beta, eta) -> TriangularOp:
        return self.quadruple(beta, eta).triangular()


def gaussian_state_rep(dim_H: int, theta, involution=None, metric_G=None, tol: float = 1e-12):
    theta = np.asarray(theta, dtype=complex).reshape(-1)
    if theta.size != dim_H:
        raise ValueError("theta length must equal dim_H")
    C = np.eye(dim_H, dtype=complex) if involution is None else np.asarray(involution, dtype=complex)
    if np.max(np.abs(C @ np.conj(C) - np.eye(dim_H)), initial=0.0) > 1e-10:
        raise ValueError("involution matrix C must satisfy C conj(C) = I")
    G = np.eye(dim_H, dtype=complex) if metric_G is None else np.asarray(metric_G, dtype=complex)
    if np.max(np.abs(G - G.conj().T), initial=0.0) > 1e-10:
        raise ValueError("covariance metric must be Hermitian")
    lam, V = np.linalg.eigh(G)
    if dim_H and lam[0] < -tol * max(1.0, float(np.max(np.abs(lam)))):
        raise ValueError(f"indefinite Gaussian form: eigenvalue {lam[0]:.3e}")
    R = (V * np.sqrt(np.clip(lam, 0, None))) @ V.conj().T
    return GaussianStateRep(theta, C, G, R)
