"""Germ matrices and the non-adapted Ito product formula on a grid.

Relative to a grid point x the Fock space splits into chains without x and
chains through x, ``F = F_x' + C_x (F_x' (x) K)``.  An operator Z is then
described by a corner ``c`` acting on ``F_x'`` and four germs:

    P Z P = c + dx Z_pm,   P Z C_x = dx Z_cm,
    A_x Z P = Z_pc,        A_x Z C_x = Z_cc,

so that ``Z = c + i_x(Z_pm, Z_cm, Z_pc, Z_cc)``.  Products of operators
correspond to the product :func:`germ_mul` of (corner, germ) pairs, which
carries explicit ``dx`` corrections; as dx -> 0 it reduces to plain
triangular block multiplication.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chain_fock import (
    FockSpace,
    FockVector,
    all_chains,
    annihilator_matrix,
    chain_minus,
    chain_union,
    chain_weight,
    creator_matrix,
    weighted_adjoint,
)
from .ito_algebra import ItoAlgebra
from .kernel_calc import (
    KernelTable,
    epsilon_matrix,
    extend_identity,
    fock_adjoint,
    in_chain,
    out_chain,
)
from .qs_integral import (
    ATOMIC_SLOTS,
    IntegrandQuadruple,
    _reorder_block,
    point_integral,
)

GERM_SLOTS = ("pm", "cm", "pc", "cc")


@dataclass(eq=False)
class GermMatrix:
    """Corner operator and germs of an operator at a grid point."""

    space: FockSpace
    x: int
    corner: np.ndarray
    pm: np.ndarray
    cm: np.ndarray
    pc: np.ndarray
    cc: np.ndarray

    @property
    def dx(self) -> float:
        return float(self.space.grid.weights[self.x])

    def quadruple(self) -> IntegrandQuadruple:
        return IntegrandQuadruple(
            self.space,
            {self.x: self.pm},
            {self.x: self.cm},
            {self.x: self.pc},
            {self.x: self.cc},
        )

    def operator(self) -> np.ndarray:
        """Reassembled operator corner + i_x(germs)."""
        return self.corner + point_integral(self.quadruple(), self.x)

    def __sub__(self, other: "GermMatrix") -> "GermMatrix":
        return GermMatrix(
            self.space,
            self.x,
            self.corner - other.corner,
            self.pm - other.pm,
            self.cm - other.cm,
            self.pc - other.pc,
            self.cc - other.cc,
        )

    def __add__(self, other: "GermMatrix") -> "GermMatrix":
        return GermMatrix(
            self.space,
            self.x,
            self.corner + other.corner,
            self.pm + other.pm,
            self.cm + other.cm,
            self.pc + other.pc,
            self.cc + other.cc,
        )

    def distance(self, other: "GermMatrix", with_corner: bool = True) -> float:
        parts = list(GERM_SLOTS) + (["corner"] if with_corner else [])
        return max(float(np.max(np.abs(getattr(self, p) - getattr(other, p)))) for p in parts)


def identity_germ(space: FockSpace, x: int) -> GermMatrix:
    """Germs of the identity operator."""
    return germs_of_operator(space, np.eye(space.dim), x)


def germ_mul(X: GermMatrix, Y: GermMatrix, dx: float | None = None) -> GermMatrix:
    """Germs of the product of the operators described by X and Y.

    With ``dx = 0`` this is the plain triangular block product.
    """
    h = X.dx if dx is None else dx
    cX, cY = X.corner, Y.corner
    return GermMatrix(
        X.space,
        X.x,
        cX @ cY,
        X.pm @ cY + cX @ Y.pm + X.cm @ Y.pc + h * X.pm @ Y.pm,
        cX @ Y.cm + X.cm @ Y.cc + h * X.pm @ Y.cm,
        X.pc @ cY + X.cc @ Y.pc + h * X.pc @ Y.pm,
        X.cc @ Y.cc + h * X.pc @ Y.cm,
    )


def germ_dagger(X: GermMatrix) -> GermMatrix:
    """Germs of the adjoint operator; slots reflect as (cm, pc) -> (pc, cm)*."""
    s = X.space
    w0 = s.weights
    w1 = s.leg_weights(1)
    return GermMatrix(
        s,
        X.x,
        weighted_adjoint(X.corner, w0, w0),
        weighted_adjoint(X.pm, w0, w0),
        weighted_adjoint(X.pc, w0, w1),
        weighted_adjoint(X.cm, w1, w0),
        weighted_adjoint(X.cc, w1, w1),
    )


def germs_of_operator(space: FockSpace, Z: np.ndarray, x: int, corner=None) -> GermMatrix:
    """Germs of a dense operator.

    The split of ``P Z P`` into corner and ``dx Z_pm`` is not determined by
    Z alone; by default the whole block is placed in the corner.
    """
    dx = float(space.grid.weights[x])
    P = space.projector_without((x,))
    A = annihilator_matrix(space, (x,))
    C = creator_matrix(space, (x,))
    ZP = P @ Z @ P
    c = ZP if corner is None else np.asarray(corner)
    return GermMatrix(space, x, c, (ZP - c) / dx, P @ Z @ C / dx, A @ Z @ P, A @ Z @ C)


# -- germs of kernels --------------------------------------------------------------

def point_derivative(K: KernelTable, x: int, slot: str) -> np.ndarray:
    """eps of the point derivative K(. + x_slot), with the x leg last."""
    space = K.space()
    g = K.grid
    d = g.d
    idx = ATOMIC_SLOTS[slot]
    ax = [(), (), (), ()]
    ax[idx] = (x,)
    mi, mo = len(in_chain(ax)), len(out_chain(ax))
    out = np.zeros((space.dim * d ** mo, space.dim * d ** mi), dtype=complex)
    for key, block in K.sorted_items():
        if x not in key[idx]:
            continue
        rest = list(key)
        rest[idx] = chain_minus(key[idx], (x,))
        rest = tuple(rest)
        ci, co = in_chain(rest), out_chain(rest)
        if not (space.contains(ci) and space.contains(co)):
            continue
        blk = _reorder_block(
            block,
            K.dim_H,
            d,
            out_chain(key),
            (co, tuple(out_chain(ax))),
            in_chain(key),
            (ci, tuple(in_chain(ax))),
        )
        coef = chain_weight(g, rest[0]) * chain_weight(g, rest[1])
        ro = space.offsets[co] * d ** mo
        ri = space.offsets[ci] * d ** mi
        out[ro : ro + blk.shape[0], ri : ri + blk.shape[1]] += coef * blk
    return out


def kernel_germs(K: KernelTable, x: int) -> GermMatrix:
    """Corner eps(K restricted to chains avoiding x) and point-derivative germs."""
    without = KernelTable(
        K.grid, K.dim_H, {k: v for k, v in K.entries.items() if x not in set().union(*map(set, k))}
    )
    space = K.space()
    return GermMatrix(
        space,
        x,
        epsilon_matrix(without),
        point_derivative(K, x, "pm"),
        point_derivative(K, x, "cm"),
        point_derivative(K, x, "pc"),
        point_derivative(K, x, "cc"),
    )


def germs(K_process, x: int) -> tuple[GermMatrix, GermMatrix]:
    """(T(x), G(x)): germs of the kernel at t(x) and at the next cut."""
    g = K_process(np.inf).grid
    if not 0 <= x < g.n:
        raise ValueError(f"point {x} outside the grid")
    T = kernel_germs(K_process(float(g.times[x])), x)
    G = kernel_germs(K_process(g.next_cut(x)), x)
    return T, G


def cut_times(grid, t: float) -> list:
    return [float(grid.times[x]) for x in grid.before(t)]


# -- strong form --------------------------------------------------------------------

@dataclass
class StrongReport:
    residual: float
    continuum_residual: float
    corner_defect: float
    decomposition_defect: float
    lhs_norm: float

    def passed(self, tol: float) -> bool:
        return self.residual <= tol and self.corner_defect <= tol


def _germ_integrand(Z: GermMatrix) -> np.ndarray:
    return point_integral(Z.quadruple(), Z.x)


def ito_check_strong(K_process, t: float, order: str = "TTdag") -> StrongReport:
    """Compare T_t T_t^dag - T_0 T_0^dag with the sum of i_x over germ products.

    ``order="TdagT"`` checks T^dag T instead.  The continuum residual uses
    the dx-free germ product and is reported for information.
    """
    K_inf = K_process(np.inf)
    g = K_inf.grid
    space = K_inf.space()
    t0 = float(g.times[0]) if g.n else 0.0
    T0 = epsilon_matrix(K_process(t0))
    Tt = epsilon_matrix(K_process(t))

    def sq(Z):
        Zd = fock_adjoint(space, Z)
        return Z @ Zd if order == "TTdag" else Zd @ Z

    lhs = sq(Tt) - sq(T0)
    rhs = np.zeros_like(lhs)
    rhs_c = np.zeros_like(lhs)
    corner_defect = 0.0
    decomp = 0.0
    for x in g.before(t):
        T, G = germs(K_process, x)
        corner_defect = max(corner_defect, float(np.max(np.abs(T.corner - G.corner))))
        decomp = max(
            decomp,
            float(np.max(np.abs(T.operator() - epsilon_matrix(K_process(float(g.times[x])))))),
            float(np.max(np.abs(G.operator() - epsilon_matrix(K_process(g.next_cut(x)))))),
        )
        for dx, acc in ((None, rhs), (0.0, rhs_c)):
            if order == "TTdag":
                gg = germ_mul(G, germ_dagger(G), dx) - germ_mul(T, germ_dagger(T), dx)
            else:
                gg = germ_mul(germ_dagger(G), G, dx) - germ_mul(germ_dagger(T), T, dx)
            acc += _germ_integrand(gg)
    return StrongReport(
        float(np.max(np.abs(lhs - rhs))),
        float(np.max(np.abs(lhs - rhs_c))),
        corner_defect,
        decomp,
        float(np.max(np.abs(lhs))),
    )


def germ_identity_residual(T: GermMatrix, G: GermMatrix) -> float:
    """|(G G^dag - T T^dag) - (T D^dag + D T^dag + D D^dag)| with D = G - T."""
    D = G - T
    lhs = germ_mul(G, germ_dagger(G)) - germ_mul(T, germ_dagger(T))
    rhs = germ_mul(T, germ_dagger(D)) + germ_mul(D, germ_dagger(T)) + germ_mul(D, germ_dagger(D))
    return lhs.distance(rhs)


# -- weak form ----------------------------------------------------------------------

@dataclass
class WeakReport:
    residual: float
    continuum_residual: float
    annihilation_residual: float
    lhs: float


def ito_check_weak(D: IntegrandQuadruple, T0: np.ndarray, h, t: float) -> WeakReport:
    """Both sides of ||T_t h||^2 - ||T_0 h||^2 for T_t = T_0 + i_0^t(D).

    Per point x with T = T_{t(x)}, u = D_pm h + D_cm a(x) h and
    v = D_pc h + D_cc a(x) h, the increment equals

        2 dx Re<T h|u> + 2 dx Re<a(x) T h|v> + dx |v|^2_{x'}
        + dx^2 |u|^2 + 2 dx^2 Re<a(x) u|v>,

    where the norm of v runs over chains avoiding x.  The continuum residual
    drops the dx^2 terms and the restriction on v.
    """
    space = D.space
    g = space.grid
    hv = h.to_dense() if isinstance(h, FockVector) else np.asarray(h, dtype=complex)
    W = space.weights
    W1 = space.leg_weights(1)

    def ip(a, b, w):
        return complex(np.conj(a) @ (w * b))

    T = np.asarray(T0, dtype=complex).copy()
    rhs = 0.0
    rhs_c = 0.0
    ann = 0.0
    lhs0 = ip(T @ hv, T @ hv, W).real
    for x in g.before(t):
        dx = float(g.weights[x])
        A = annihilator_matrix(space, (x,))
        C = creator_matrix(space, (x,))
        P1 = np.kron(space.projector_without((x,)), np.eye(g.d))
        ah = A @ hv
        u = D.get("pm", x) @ hv + D.get("cm", x) @ ah
        v = D.get("pc", x) @ hv + D.get("cc", x) @ ah
        Th = T @ hv
        aTh = A @ Th
        # a(x) T h from the germs of T at x
        P = space.projector_without((x,))
        ann = max(ann, float(np.max(np.abs(aTh - (A @ T @ P @ hv + A @ T @ C @ ah)))))
        common = 2 * dx * ip(Th, u, W).real + 2 * dx * ip(aTh, v, W1).real
        rhs += (
            common
            + dx * ip(P1 @ v, P1 @ v, W1).real
            + dx * dx * ip(u, u, W).real
            + 2 * dx * dx * ip(A @ u, v, W1).real
        )
        rhs_c += common + dx * ip(v, v, W1).real
        T = T + point_integral(D, x)
    lhs = ip(T @ hv, T @ hv, W).real - lhs0
    return WeakReport(abs(lhs - rhs), abs(lhs - rhs_c), ann, lhs)


# -- adapted form -------------------------------------------------------------------

def kernel_adaptedness_defect(K: KernelTable, t: float) -> float:
    """Distance of K from the adapted pattern at the cut t.

    Adapted kernels vanish on entries with future points in the (+,-),
    (o,-) or (+,o) slots and satisfy K(w + s) = K(w) (x) I for future points
    s in the (o,o) slot.
    """
    g = K.grid
    future = set(x for x in range(g.n) if g.times[x] >= t)
    worst = 0.0
    for key, block in K.entries.items():
        if future & set(key[0] + key[1] + key[2]):
            worst = max(worst, float(np.max(np.abs(block), initial=0.0)))
            continue
        fut = tuple(x for x in key[3] if x in future)
        if not fut:
            continue
        base = (key[0], key[1], key[2], chain_minus(key[3], fut))
        bblock = K.entries.get(base)
        if bblock is None:
            worst = max(worst, float(np.max(np.abs(block), initial=0.0)))
            continue
        exp = extend_identity(bblock, K.dim_H, g.d, in_chain(base), out_chain(base), fut)
        worst = max(worst, float(np.max(np.abs(block - exp))))
    # every past entry must be extended by identities over all future points
    for key, block in K.entries.items():
        if future & set().union(*map(set, key)):
            continue
        room = g.n_max - len(key[3]) - max(len(key[1]), len(key[2]))
        for s in all_chains(sorted(future), max(room, 0)):
            if not s:
                continue
            k2 = (key[0], key[1], key[2], chain_union(key[3], s))
            if k2 not in K.entries:
                worst = max(worst, float(np.max(np.abs(block), initial=0.0)))
    return worst


@dataclass
class AdaptedReport:
    residual: float
    adaptedness_defect: float
    germ_defect: float

    def passed(self, tol: float) -> bool:
        return self.residual <= tol and self.adaptedness_defect <= tol


def ito_check_adapted(K_process, t: float, tol: float = 1e-11) -> AdaptedReport:
    """T_t^dag T_t - T_0^dag T_0 = sum_x i_x(G^dag G - (T^dag T) (x) 1).

    The kernel at each cut must be adapted to that cut; the defect is
    reported and the germ pattern of the adapted case (only the (o,o) germ
    survives and equals T (x) I) is measured.
    """
    K_inf = K_process(np.inf)
    g = K_inf.grid
    space = K_inf.space()
    t0 = float(g.times[0]) if g.n else 0.0
    cuts = [t0] + [g.next_cut(x) for x in g.before(t)]
    defect = max(kernel_adaptedness_defect(K_process(c), c) for c in cuts)
    T0 = epsilon_matrix(K_process(t0))
    Tt = epsilon_matrix(K_process(t))
    lhs = fock_adjoint(space, Tt) @ Tt - fock_adjoint(space, T0) @ T0
    rhs = np.zeros_like(lhs)
    germ_defect = 0.0
    eye_d = np.eye(g.d)
    for x in g.before(t):
        T, G = germs(K_process, x)
        c = T.corner
        cTc = fock_adjoint(space, c) @ c
        TT = GermMatrix(
            space,
            x,
            cTc,
            np.zeros_like(T.pm),
            np.zeros_like(T.cm),
            np.zeros_like(T.pc),
            np.kron(cTc, eye_d),
        )
        germ_defect = max(
            germ_defect,
            float(np.max(np.abs(T.pm))),
            float(np.max(np.abs(T.cm))),
            float(np.max(np.abs(T.pc))),
            float(np.max(np.abs(T.cc - np.kron(c, eye_d)))),
        )
        rhs += _germ_integrand(germ_mul(germ_dagger(G), G) - TT)
    if defect > tol:
        raise ValueError(f"kernel process is not adapted (defect {defect:.3e})")
    return AdaptedReport(float(np.max(np.abs(lhs - rhs))), defect, germ_defect)


# -- functional Ito formula ---------------------------------------------------------

def functional_ito_poly(X: np.ndarray, D, alg: ItoAlgebra, m: int) -> np.ndarray:
    """Coefficients D^(m)_j of d(X^m) by the recursion

        D^(n+1)_j = X D^(n)_j + D_j X^n + sum_{i,k} c[j,i,k] D_i D^(n)_k.
    """
    X = np.asarray(X, dtype=complex)
    D = np.asarray(D, dtype=complex)
    if D.shape[0] != alg.dim:
        raise ValueError("one coefficient matrix per algebra basis element is required")
    if m < 1:
        raise ValueError("m must be at least 1")
    cur = D.copy()
    Xn = X.copy()
    for _ in range(1, m):
        nxt = np.einsum("ab,jbc->jac", X, cur) + np.einsum("jab,bc->jac", D, Xn)
        nxt += np.einsum("jik,iab,kbc->jac", alg.c, D, cur)
        cur = nxt
        Xn = Xn @ X
    return cur


def left_regular(alg: ItoAlgebra) -> np.ndarray:
    """Matrices of left multiplication by e_j on the unitalisation C u + a."""
    n = alg.dim
    L = np.zeros((n, n + 1, n + 1), dtype=complex)
    for j in range(n):
        L[j, 1 + j, 0] = 1.0
        L[j, 1:, 1:] = alg.c[:, j, :]
    return L


def functional_ito_direct(X: np.ndarray, D, alg: ItoAlgebra, m: int) -> np.ndarray:
    """Coefficients of ((X + D)^m - X^m) along e_j computed in A (x) (C u + a)."""
    X = np.asarray(X, dtype=complex)
    D = np.asarray(D, dtype=complex)
    n, s = alg.dim, X.shape[0]
    L = left_regular(alg)
    Z = np.kron(X, np.eye(n + 1))
    for j in range(n):
        Z = Z + np.kron(D[j], L[j])
    Zm = np.linalg.matrix_power(Z, m).reshape(s, n + 1, s, n + 1)
    # column block u, row block e_j
    return np.stack([Zm[:, 1 + j, :, 0] for j in range(n)])
