"""Quantum stochastic evolution equations solved by chronological kernel products.

A generator assigns to every grid point x a triangular operator matrix

    S(x) = [[I, S_cm, S_pm], [0, S_cc, S_pc], [0, 0, I]]

in the (-, o, +) layout, with blocks acting between H and H (x) K_x (the K
leg trails the H index).  The per-point kernel F_x carries S(x) at x and the
identity on every other point, so that eps(F_x) is the one-step propagator.
The non-stochastic part S_pm drives the evolution family U_s^t.

On a grid with weights dx the multiplication table has dt dt = dx dt, so the
unitarity conditions pick up explicit dx terms; ``weight = 0`` everywhere
below selects the continuum formulas.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations, product

import numpy as np
from scipy.linalg import expm

from .chain_fock import FockSpace, Grid, all_chains, chain_union, chain_weight
from .ito_formula import GermMatrix, germ_mul, kernel_germs
from .kernel_calc import (
    KernelTable,
    NormQuadruple,
    bound_pr,
    epsilon_matrix,
    extend_identity,
    identity_kernel,
    kernel_mul,
    norm_alpha,
    orthonormal,
    projective_norm,
    table_distance,
)
from .qs_integral import key_points

SERIES_CUTOFF = 0.5


def _mat(a) -> np.ndarray:
    return np.atleast_2d(np.asarray(a, dtype=complex))


def _maxabs(a) -> float:
    a = np.asarray(a)
    return float(np.max(np.abs(a))) if a.size else 0.0


# -- generator blocks ----------------------------------------------------------------

@dataclass(eq=False)
class SBlocks:
    """Entries of a triangular generator at one point.

    ``pm``: H -> H, ``cm``: H K -> H, ``pc``: H -> H K, ``cc``: H K -> H K.
    ``H`` optionally keeps the pseudo-selfadjoint data the blocks came from.
    """

    pm: np.ndarray
    cm: np.ndarray
    pc: np.ndarray
    cc: np.ndarray
    H: dict | None = None

    def __post_init__(self):
        for name in ("pm", "cm", "pc", "cc"):
            setattr(self, name, _mat(getattr(self, name)))
        n = self.pm.shape[0]
        if self.pm.shape != (n, n) or n == 0:
            raise ValueError("S_pm must be a square block on H")
        m = self.cc.shape[0]
        if self.cc.shape != (m, m) or m % n:
            raise ValueError("S_cc must be square on H (x) K")
        if self.cm.shape != (n, m) or self.pc.shape != (m, n):
            raise ValueError("S_cm must map H K -> H and S_pc must map H -> H K")

    @property
    def dim_H(self) -> int:
        return self.pm.shape[0]

    @property
    def d(self) -> int:
        return self.cc.shape[0] // self.pm.shape[0]

    @classmethod
    def identity(cls, dim_H: int = 1, d: int = 1) -> "SBlocks":
        m = dim_H * d
        return cls(
            np.zeros((dim_H, dim_H)), np.zeros((dim_H, m)), np.zeros((m, dim_H)), np.eye(m)
        )

    def triangular(self) -> np.ndarray:
        n, m = self.dim_H, self.cc.shape[0]
        M = np.zeros((2 * n + m, 2 * n + m), dtype=complex)
        M[:n, :n] = np.eye(n)
        M[:n, n : n + m] = self.cm
        M[:n, n + m :] = self.pm
        M[n : n + m, n : n + m] = self.cc
        M[n : n + m, n + m :] = self.pc
        M[n + m :, n + m :] = np.eye(n)
        return M

    def minus_identity(self, keep_pm: bool = True) -> "SBlocks":
        """The table S - 1; with ``keep_pm=False`` the corner is dropped too."""
        pm = self.pm if keep_pm else np.zeros_like(self.pm)
        return SBlocks(pm, self.cm, self.pc, self.cc - np.eye(self.cc.shape[0]))

    def distance(self, other: "SBlocks") -> float:
        return max(_maxabs(getattr(self, s) - getattr(other, s)) for s in ("pm", "cm", "pc", "cc"))


@dataclass(eq=False)
class GeneratorS:
    """Per-point generator blocks over a grid."""

    grid: Grid
    points: tuple

    def __post_init__(self):
        pts = tuple(self.points)
        if len(pts) != self.grid.n:
            raise ValueError("one generator block per grid point is required")
        if not pts:
            raise ValueError("empty grid")
        dh, d = pts[0].dim_H, pts[0].d
        for S in pts:
            if S.dim_H != dh or S.d != d:
                raise ValueError("generator blocks must share H and K")
        if d != self.grid.d:
            raise ValueError("generator K dimension does not match the grid multiplicity")
        self.points = pts

    @property
    def dim_H(self) -> int:
        return self.points[0].dim_H

    def at(self, x: int) -> SBlocks:
        return self.points[x]

    @classmethod
    def constant(cls, grid: Grid, S: SBlocks) -> "GeneratorS":
        return cls(grid, tuple(S for _ in range(grid.n)))

    def space(self) -> FockSpace:
        return FockSpace(self.grid, self.dim_H)


def _pseudo_adjoint_tri(M: np.ndarray, n: int) -> np.ndarray:
    """J M^H J for the metric exchanging the - and + blocks of size n."""
    size = M.shape[0]
    m = size - 2 * n
    J = np.zeros((size, size))
    J[:n, n + m :] = np.eye(n)
    J[n + m :, :n] = np.eye(n)
    J[n : n + m, n : n + m] = np.eye(m)
    return J @ M.conj().T @ J


def orthonormal_local(S: SBlocks, weight: float) -> np.ndarray:
    """[[1 + dx S_pm, sqrt(dx) S_cm], [sqrt(dx) S_pc, S_cc]]."""
    n = S.dim_H
    r = np.sqrt(weight)
    top = np.hstack([np.eye(n) + weight * S.pm, r * S.cm])
    bot = np.hstack([r * S.pc, S.cc])
    return np.vstack([top, bot])


# -- unitarity conditions ------------------------------------------------------------

@dataclass
class UnitarityReport:
    weight: float
    identities: dict
    assembly: float
    tol: float

    @property
    def max_residual(self) -> float:
        return max([self.assembly, *self.identities.values()])

    @property
    def passed(self) -> bool:
        return self.max_residual <= self.tol


def pseudo_unitarity_check(S: SBlocks, tol: float = 1e-12, weight: float = 0.0) -> UnitarityReport:
    """The four unitarity identities and the assembled S^dagger S = 1.

    With ``weight = dx > 0`` the identities carry the grid corrections and the
    assembly tests unitarity of the orthonormal local matrix.
    """
    h = float(weight)
    I_o = np.eye(S.cc.shape[0])
    ids = {
        "oo": _maxabs(S.cc.conj().T @ S.cc + h * S.cm.conj().T @ S.cm - I_o),
        "pm": _maxabs(S.pm.conj().T + S.pm + S.pc.conj().T @ S.pc + h * S.pm.conj().T @ S.pm),
        "om": _maxabs(S.cm.conj().T + S.cc.conj().T @ S.pc + h * S.cm.conj().T @ S.pm),
        "po": _maxabs(S.pc.conj().T @ S.cc + S.cm + h * S.pm.conj().T @ S.cm),
    }
    if h > 0:
        Q = orthonormal_local(S, h)
        assembly = _maxabs(Q.conj().T @ Q - np.eye(Q.shape[0]))
    else:
        M = S.triangular()
        assembly = _maxabs(_pseudo_adjoint_tri(M, S.dim_H) @ M - np.eye(M.shape[0]))
    return UnitarityReport(h, ids, assembly, tol)


# -- exp(iH) generators --------------------------------------------------------------

def phi_series(z, terms: int = 80):
    """sum_n (iz)^n / (n+1)!  ==  (e^{iz} - 1)/(iz)."""
    z = np.asarray(z, dtype=complex)
    term = np.ones_like(z)
    total = term.copy()
    for n in range(1, terms):
        term = term * 1j * z / (n + 1)
        total = total + term
    return total


def psi_series(z, terms: int = 80):
    """sum_n i^(n+2) z^n / (n+2)!  ==  (e^{iz} - 1 - iz)/z^2."""
    z = np.asarray(z, dtype=complex)
    term = np.full_like(z, -0.5)
    total = term.copy()
    for n in range(1, terms):
        term = term * 1j * z / (n + 2)
        total = total + term
    return total


def phi(z):
    """(e^{iz} - 1)/(iz) with the series below the cutoff."""
    z = np.asarray(z, dtype=complex)
    small = np.abs(z) < SERIES_CUTOFF
    safe = np.where(small, 1.0, z)
    return np.where(small, phi_series(z, 24), (np.exp(1j * safe) - 1) / (1j * safe))


def psi(z):
    """(e^{iz} - 1 - iz)/z^2 with the series below the cutoff."""
    z = np.asarray(z, dtype=complex)
    small = np.abs(z) < SERIES_CUTOFF
    safe = np.where(small, 1.0, z)
    return np.where(small, psi_series(z, 24), (np.exp(1j * safe) - 1 - 1j * safe) / safe ** 2)


def _hermitian_fn(H: np.ndarray, fn) -> np.ndarray:
    w, Q = np.linalg.eigh(H)
    return (Q * fn(w)) @ Q.conj().T


def _check_h(H_cc, H_pc, H_pm, H_cm, tol):
    H_cc, H_pc, H_pm = _mat(H_cc), _mat(H_pc), _mat(H_pm)
    H_cm = H_pc.conj().T if H_cm is None else _mat(H_cm)
    scale = 1.0 + max(_maxabs(H_cc), _maxabs(H_pc), _maxabs(H_pm))
    if _maxabs(H_cc - H_cc.conj().T) > tol * scale:
        raise ValueError("H is not pseudo-selfadjoint: H_oo is not Hermitian")
    if _maxabs(H_pm - H_pm.conj().T) > tol * scale:
        raise ValueError("H is not pseudo-selfadjoint: H_+- is not Hermitian")
    if H_cm.shape != H_pc.conj().T.shape or _maxabs(H_cm - H_pc.conj().T) > tol * scale:
        raise ValueError("H is not pseudo-selfadjoint: H_o- differs from H_+o*")
    SBlocks(H_pm, H_cm, H_pc, H_cc)  # shape validation
    return H_cc, H_pc, H_pm, H_cm


def exp_generator(H_cc, H_pc, H_pm, weight: float = 0.0, H_cm=None, tol: float = 1e-10) -> SBlocks:
    """Pseudo-unitary generator F = exp(iH) from pseudo-selfadjoint blocks.

    ``weight = 0`` gives the continuum blocks through spectral functions of
    H_oo.  ``weight = dx > 0`` exponentiates the orthonormal local matrix
    instead, which makes the grid propagator exactly unitary.
    """
    H_cc, H_pc, H_pm, H_cm = _check_h(H_cc, H_pc, H_pm, H_cm, tol)
    n = H_pm.shape[0]
    data = {"H_cc": H_cc, "H_pc": H_pc, "H_pm": H_pm, "H_cm": H_cm, "weight": float(weight)}
    if weight == 0:
        P1 = _hermitian_fn(H_cc, phi)
        P2 = _hermitian_fn(H_cc, psi)
        return SBlocks(
            H_cm @ P2 @ H_pc + 1j * H_pm,
            1j * H_cm @ P1,
            P1 @ (1j * H_pc),
            _hermitian_fn(H_cc, lambda w: np.exp(1j * w)),
            data,
        )
    if weight < 0:
        raise ValueError("weight must be nonnegative")
    r = np.sqrt(weight)
    Psi = np.block([[weight * H_pm, r * H_cm], [r * H_pc, H_cc]])
    Psi = (Psi + Psi.conj().T) / 2
    E = _hermitian_fn(Psi, lambda w: np.exp(1j * w))
    return SBlocks(
        (E[:n, :n] - np.eye(n)) / weight, E[:n, n:] / r, E[n:, :n] / r, E[n:, n:], data
    )


def exp_generator_expm(H_cc, H_pc, H_pm, weight: float = 0.0, H_cm=None) -> SBlocks:
    """Same generator from a dense matrix exponential (independent route)."""
    H_cc, H_pc, H_pm, H_cm = _check_h(H_cc, H_pc, H_pm, H_cm, 1e-10)
    n, m = H_pm.shape[0], H_cc.shape[0]
    if weight == 0:
        Ht = SBlocks(H_pm, H_cm, H_pc, H_cc).triangular()
        Ht[:n, :n] = 0
        Ht[n + m :, n + m :] = 0
        F = expm(1j * Ht)
        return SBlocks(F[:n, n + m :], F[:n, n : n + m], F[n : n + m, n + m :], F[n : n + m, n : n + m])
    r = np.sqrt(weight)
    E = expm(1j * np.block([[weight * H_pm, r * H_cm], [r * H_pc, H_cc]]))
    return SBlocks((E[:n, :n] - np.eye(n)) / weight, E[:n, n:] / r, E[n:, :n] / r, E[n:, n:])


def random_hamiltonian(rng, dim_H: int = 1, d: int = 1, scale: float = 1.0) -> dict:
    """Random pseudo-selfadjoint data (H_cc, H_pc, H_pm)."""
    m = dim_H * d

    def herm(k):
        A = rng.normal(size=(k, k)) + 1j * rng.normal(size=(k, k))
        return scale * (A + A.conj().T) / 2

    pc = scale * (rng.normal(size=(m, dim_H)) + 1j * rng.normal(size=(m, dim_H)))
    return {"H_cc": herm(m), "H_pc": pc, "H_pm": herm(dim_H)}


# -- Poisson / Brownian / Lebesgue decomposition ---------------------------------------

@dataclass
class Decomposition:
    """Three commuting pseudo-unitary parts of F = exp(iH) and the diagonalizer."""

    poisson: SBlocks
    brownian: SBlocks
    lebesgue: SBlocks
    F0: np.ndarray
    F_param: np.ndarray
    E: np.ndarray
    split_residual: float
    reassembly: float
    commutation: float
    orthogonality: float
    part_unitarity: float
    diagonalization: float
    grid_deviation: float = 0.0

    @property
    def max_residual(self) -> float:
        return max(
            self.reassembly, self.commutation, self.orthogonality, self.part_unitarity, self.diagonalization
        )


def _tri_plus_identity(L: SBlocks) -> np.ndarray:
    """Triangular matrix of 1 + L."""
    M = L.triangular()
    n, m = L.dim_H, L.cc.shape[0]
    M[n : n + m, n : n + m] += np.eye(m)
    return M


def decompose_evolution(S: SBlocks) -> Decomposition:
    """Split F - 1 into Poisson, Brownian and Lebesgue tables.

    Needs the H data of an :func:`exp_generator` output.  The split solves
    H_+o = H_oo F + iE with H_oo E = 0 in the least-squares sense; when the
    kernel condition fails the defect is reported as ``split_residual``.
    """
    if S.H is None:
        raise ValueError("decomposition needs the H blocks of the generator")
    H_cc, H_pc, H_pm, H_cm = (S.H[k] for k in ("H_cc", "H_pc", "H_pm", "H_cm"))
    n, m = H_pm.shape[0], H_cc.shape[0]
    Fp = np.linalg.pinv(H_cc, rcond=1e-12, hermitian=True) @ H_pc
    E = -1j * (H_pc - H_cc @ Fp)
    split = max(_maxabs(H_cc @ E), _maxabs(H_cm - (Fp.conj().T @ H_cc - 1j * E.conj().T)))
    F = exp_generator(H_cc, H_pc, H_pm, 0.0, H_cm) if S.H.get("weight", 0.0) else S
    Fs = Fp.conj().T
    Loo = _hermitian_fn(H_cc, lambda w: np.exp(1j * w)) - np.eye(m)
    L1 = SBlocks(Fs @ Loo @ Fp, Fs @ Loo, Loo @ Fp, Loo)
    L2 = SBlocks(-0.5 * E.conj().T @ E, E.conj().T, -E, np.zeros((m, m)))
    L3 = SBlocks(1j * (H_pm - Fs @ H_cc @ Fp), np.zeros((n, m)), np.zeros((m, n)), np.zeros((m, m)))
    parts = [_tri_plus_identity(L) for L in (L1, L2, L3)]
    eye = np.eye(2 * n + m)
    total = eye + sum(P - eye for P in parts)
    reassembly = _maxabs(total - F.triangular())
    comm = max(_maxabs(parts[i] @ parts[j] - parts[j] @ parts[i]) for i, j in ((0, 1), (0, 2), (1, 2)))
    orth = max(_maxabs((parts[i] - eye) @ (parts[j] - eye)) for i in range(3) for j in range(3) if i != j)
    unit = max(_maxabs(_pseudo_adjoint_tri(P, n) @ P - eye) for P in parts)
    K = Fs @ Fp / 2
    F0 = eye.astype(complex)
    F0[:n, n : n + m] = Fs
    F0[:n, n + m :] = -K
    F0[n : n + m, n + m :] = -Fp
    target = np.zeros_like(F0)
    target[n : n + m, n : n + m] = Loo
    diag = _maxabs(_pseudo_adjoint_tri(F0, n) @ (parts[0] - eye) @ F0 - target)
    return Decomposition(
        L1,
        L2,
        L3,
        F0,
        Fp,
        E,
        split,
        reassembly,
        comm,
        orth,
        unit,
        diag,
        S.distance(F) if F is not S else 0.0,
    )


# -- evolution family ------------------------------------------------------------------

@dataclass(eq=False)
class EvolutionFamily:
    """Discrete evolution U_s^t = sum over chains of prod S_pm, time ordered."""

    grid: Grid
    S_pm: tuple

    def __post_init__(self):
        self.S_pm = tuple(_mat(a) for a in self.S_pm)
        if len(self.S_pm) != self.grid.n:
            raise ValueError("one S_pm block per grid point is required")
        self.dim_H = self.S_pm[0].shape[0]

    def points(self, s: float, t: float) -> tuple:
        return tuple(x for x in range(self.grid.n) if s <= self.grid.times[x] < t)

    def U(self, s: float, t: float) -> np.ndarray:
        """Chronological chain sum over grid points in [s, t)."""
        pts = self.points(s, t)
        total = np.zeros((self.dim_H, self.dim_H), dtype=complex)
        for k in range(len(pts) + 1):
            for chain in combinations(pts, k):
                term = np.eye(self.dim_H, dtype=complex)
                for x in chain:
                    term = term @ self.S_pm[x]
                total += chain_weight(self.grid, chain) * term
        return total

    def U_product(self, s: float, t: float) -> np.ndarray:
        out = np.eye(self.dim_H, dtype=complex)
        for x in self.points(s, t):
            out = out @ (np.eye(self.dim_H) + self.grid.weights[x] * self.S_pm[x])
        return out

    def consistency_residual(self, r: float, s: float, t: float) -> float:
        return _maxabs(self.U(r, s) @ self.U(s, t) - self.U(r, t))

    def integral_residual(self, s: float, t: float) -> float:
        """U_s^t - I - sum_{s <= t(x) < t} U_s^{t(x)} S_pm(x) dx."""
        acc = np.eye(self.dim_H, dtype=complex)
        for x in self.points(s, t):
            acc = acc + self.U(s, self.grid.times[x]) @ self.S_pm[x] * self.grid.weights[x]
        return _maxabs(self.U(s, t) - acc)

    def kernel(self, points) -> KernelTable:
        return window_kernel(self.grid, self.S_pm, points)

    def fock(self, s: float, t: float) -> np.ndarray:
        """The evolution as an operator on H (x) F."""
        return epsilon_matrix(self.kernel(self.points(s, t)))


def evolution_family(grid: Grid, S_pm) -> EvolutionFamily:
    return EvolutionFamily(grid, tuple(S_pm))


# -- per-point and window kernels -------------------------------------------------------

def _free_cc(grid: Grid, used, base: int) -> tuple:
    free = [y for y in range(grid.n) if y not in set(used)]
    room = grid.n_max - base
    return all_chains(free, room) if room >= 0 else ()


_LOCAL = {
    "pm": ((), ()),
    "cm": ((0,), ()),
    "pc": ((), (0,)),
    "cc": ((0,), (0,)),
}


def point_kernel(S: GeneratorS, x: int) -> KernelTable:
    """F_x: the generator blocks at x, tensored with the identity elsewhere."""
    g, dh, d = S.grid, S.dim_H, S.grid.d
    Sx = S.at(x)
    ent = {}
    choices = [(None, np.eye(dh))] + [(s, getattr(Sx, s)) for s in ("pm", "cm", "pc", "cc")]
    for slot, blk in choices:
        li, lo = _LOCAL.get(slot, ((), ()))
        in_x = (x,) if li else ()
        out_x = (x,) if lo else ()
        base = max(len(in_x), len(out_x))
        for C in _free_cc(g, (x,), base):
            key = [(), (), (), C]
            if slot is not None:
                idx = ("pm", "cm", "pc", "cc").index(slot)
                key[idx] = chain_union(key[idx], (x,))
            ent[tuple(key)] = extend_identity(blk, dh, d, in_x, out_x, C)
    return KernelTable(g, dh, ent)


def window_kernel(grid: Grid, S_pm, points) -> KernelTable:
    """V over a set of points: time-ordered S_pm on chosen points, identity on the rest."""
    S_pm = [_mat(a) for a in S_pm]
    dh, d = S_pm[0].shape[0], grid.d
    pts = tuple(sorted(points))
    ent = {}
    for k in range(len(pts) + 1):
        for P in combinations(pts, k):
            blk = np.eye(dh, dtype=complex)
            for y in P:
                blk = blk @ S_pm[y]
            for C in _free_cc(grid, P, 0):
                ent[(P, (), (), C)] = extend_identity(blk, dh, d, (), (), C)
    return KernelTable(grid, dh, ent)


# -- chronological products --------------------------------------------------------------

def _k0_at(K0, S: GeneratorS, s: float) -> KernelTable:
    if callable(K0):
        return K0(s)
    return kernel_mul(K0, window_kernel(S.grid, [S.at(x).pm for x in range(S.grid.n)], S.grid.before(s)))


def _window_between(grid: Grid, x: int, s: float) -> tuple:
    return tuple(y for y in range(grid.n) if grid.times[x] < grid.times[y] < s)


def _propagated_point(S: GeneratorS, x: int, s: float) -> KernelTable:
    """F_x^s = F_x . V over the points strictly between t(x) and s."""
    S_pm = [S.at(y).pm for y in range(S.grid.n)]
    return kernel_mul(point_kernel(S, x), window_kernel(S.grid, S_pm, _window_between(S.grid, x, s)))


def _chrono_subset(K0, S: GeneratorS, t: float, Z: tuple, pts: tuple) -> dict:
    g = S.grid
    cuts = [float(g.times[z]) for z in Z] + [t]
    P = _k0_at(K0, S, cuts[0])
    for i, z in enumerate(Z):
        P = kernel_mul(P, _propagated_point(S, z, cuts[i + 1]))
    Zs = set(Z)
    past = set(pts)
    return {k: v for k, v in P.entries.items() if set(key_points(k)) & past == Zs}


def chrono_product(K0, S: GeneratorS, t: float, workers: int = 1) -> KernelTable:
    """K_t(w) = [K_0^{t(x1)} . F_{x1}^{t(x2)} ... F_{xn}^t](w), x1 < ... < xn the points of w before t.

    ``K0`` is either a kernel (propagated by the evolution family) or a
    callable s -> K_0^s; None stands for the identity.  Every subset Z of
    the past points contributes the entries of its product whose past
    points are exactly Z.
    """
    g = S.grid
    if K0 is None:
        K0 = identity_kernel(g, S.dim_H)
    pts = g.before(t)
    subsets = [Z for k in range(len(pts) + 1) for Z in combinations(pts, k)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda Z: _chrono_subset(K0, S, t, Z, pts), subsets))
    else:
        parts = [_chrono_subset(K0, S, t, Z, pts) for Z in subsets]
    ent = {}
    for part in parts:
        ent.update(part)
    return KernelTable(g, S.dim_H, ent)


def chrono_product_direct(K0, S: GeneratorS, t: float) -> KernelTable:
    """K_0 . F_{x1} ... F_{xn} over all past points, without the subset split."""
    g = S.grid
    if callable(K0):
        raise ValueError("the direct product needs the kernel K_0 itself")
    P = K0
    for x in g.before(t):
        P = kernel_mul(P, point_kernel(S, x))
    return P


def recurrence_residual(K0, S: GeneratorS, t: float) -> float:
    """K_t - K_0^t - sum_x K_{t(x)} . L_x^t, with L_x^t = (F_x - V_x) . V_(x,t)."""
    g = S.grid
    S_pm = [S.at(y).pm for y in range(g.n)]
    rhs = _k0_at(K0, S, t)
    for x in g.before(t):
        Lx = point_kernel(S, x) - window_kernel(g, S_pm, (x,))
        Lx_t = kernel_mul(Lx, window_kernel(g, S_pm, _window_between(g, x, t)))
        rhs = rhs + kernel_mul(chrono_product(K0, S, float(g.times[x])), Lx_t)
    return table_distance(chrono_product(K0, S, t), rhs)


# -- germs of generators and the fixed-point equation ----------------------------------------

def lift_local(space: FockSpace, B: np.ndarray, m_in: int, m_out: int) -> np.ndarray:
    """B (x) I_F as a map F (x) K^m_in -> F (x) K^m_out (legs trailing)."""
    dh, d = space.dim_H, space.grid.d
    a, b = d ** m_out, d ** m_in
    B4 = np.asarray(B, dtype=complex).reshape(dh, a, dh, b)
    out = np.zeros((space.dim * a, space.dim * b), dtype=complex)
    for c in space.chains:
        o, L = space.offsets[c], d ** len(c)
        blk = np.einsum("pkql,mn->pmkqnl", B4, np.eye(L)).reshape(dh * L * a, dh * L * b)
        out[o * a : o * a + blk.shape[0], o * b : o * b + blk.shape[1]] = blk
    return out


def generator_germs(space: FockSpace, A: SBlocks, x: int) -> GermMatrix:
    """Germ matrix with zero corner and germs A (x) I_F."""
    return GermMatrix(
        space,
        x,
        np.zeros((space.dim, space.dim), dtype=complex),
        lift_local(space, A.pm, 0, 0),
        lift_local(space, A.cm, 1, 0),
        lift_local(space, A.pc, 0, 1),
        lift_local(space, A.cc, 1, 1),
    )


def fixed_point_rhs(K0, S: GeneratorS, t: float) -> np.ndarray:
    """T_0^t + sum_x i_x(T(x) <> A(x)) U_(x,t): the right side of the fixed-point equation.

    A(x) = S(x) - 1 without its (+,-) entry; that part is carried by U.
    """
    g = S.grid
    space = S.space()
    fam = evolution_family(g, [S.at(y).pm for y in range(g.n)])
    out = epsilon_matrix(_k0_at(K0, S, t))
    for x in g.before(t):
        Tx = kernel_germs(chrono_product(K0, S, float(g.times[x])), x)
        Ax = generator_germs(space, S.at(x).minus_identity(keep_pm=False), x)
        step = germ_mul(Tx, Ax).operator()
        out = out + step @ epsilon_matrix(fam.kernel(_window_between(g, x, t)))
    return out


def unitarity_residual(space: FockSpace, T: np.ndarray) -> float:
    """max |T* T - I| in orthonormal coordinates."""
    Q = orthonormal(space, T)
    return _maxabs(Q.conj().T @ Q - np.eye(Q.shape[0]))


@dataclass
class QSDESolution:
    T: np.ndarray
    kernel: KernelTable
    fixed_point_residual: float
    unitarity_residual: float
    direct_residual: float
    recurrence: float | None = None
    info: dict = field(default_factory=dict)


def solve_qsde(
    K0,
    S: GeneratorS,
    t: float,
    evolution: EvolutionFamily | None = None,
    check_recurrence: bool = False,
    workers: int = 1,
) -> QSDESolution:
    """T_t = eps(K_t) from the chronological product, with its residual checks."""
    g = S.grid
    if evolution is not None:
        if not evolution.grid.same_as(g) or any(
            _maxabs(evolution.S_pm[x] - S.at(x).pm) > 0 for x in range(g.n)
        ):
            raise ValueError("inconsistent evolution family")
    if K0 is None:
        K0 = identity_kernel(g, S.dim_H)
    K = chrono_product(K0, S, t, workers)
    T = epsilon_matrix(K)
    space = S.space()
    direct = np.nan
    if not callable(K0):
        direct = _maxabs(T - epsilon_matrix(chrono_product_direct(K0, S, t)))
    sol = QSDESolution(
        T,
        K,
        _maxabs(T - fixed_point_rhs(K0, S, t)),
        unitarity_residual(space, T),
        float(direct),
    )
    if check_recurrence:
        sol.recurrence = recurrence_residual(K0, S, t)
    return sol


def exponential_step_residual(S: GeneratorS, t: float) -> float:
    """max over cuts of |T_{t'} - T_{t(x)} - i_x(T(x) <> (S(x) - 1))| for T_0 = I."""
    g = S.grid
    space = S.space()
    K0 = identity_kernel(g, S.dim_H)
    worst = 0.0
    for x in g.before(t):
        Kx = chrono_product(K0, S, float(g.times[x]))
        nxt = min(g.next_cut(x), t)
        Kn = chrono_product(K0, S, nxt)
        step = germ_mul(kernel_germs(Kx, x), generator_germs(space, S.at(x).minus_identity(), x))
        worst = max(worst, _maxabs(epsilon_matrix(Kn) - epsilon_matrix(Kx) - step.operator()))
    return worst


# -- adapted semi-tensor products and the norm estimate -----------------------------------

def semi_tensor_kernel(S: GeneratorS, t: float) -> KernelTable:
    """Adapted solution kernel V . F(x1) . V ... F(xn) . V with no (+,-) slot.

    Each past point of w enters through F_+o, F_oo or F_o-, the remaining
    past points through the evolution family between them, and points at or
    after t through the identity.
    """
    g, dh, d = S.grid, S.dim_H, S.grid.d
    fam = evolution_family(g, [S.at(y).pm for y in range(g.n)])
    past = g.before(t)
    future = [y for y in range(g.n) if y not in past]
    slot_of = {1: "cm", 2: "pc", 3: "cc"}
    ent = {}
    for assign in product(range(4), repeat=len(past)):
        chosen = [(x, slot_of[a]) for x, a in zip(past, assign) if a]
        taken = {x for x, _ in chosen}
        acc = np.eye(dh, dtype=complex)
        in_acc, out_acc = (), ()
        prev = -np.inf
        for x, slot in chosen + [(None, None)]:
            lo = prev
            hi = g.times[x] if x is not None else t
            win = [y for y in past if lo < g.times[y] < hi and y not in taken]
            V = np.eye(dh, dtype=complex)
            for y in win:
                V = V @ (np.eye(dh) + g.weights[y] * fam.S_pm[y])
            acc = acc @ extend_identity(V, dh, d, (), (), in_acc)
            if x is None:
                break
            li, lo_ = _LOCAL[slot]
            in_x = (x,) if li else ()
            out_x = (x,) if lo_ else ()
            blk = getattr(S.at(x), slot)
            acc = extend_identity(acc, dh, d, in_acc, out_acc, out_x) @ extend_identity(
                blk, dh, d, in_x, out_x, in_acc
            )
            in_acc, out_acc = chain_union(in_acc, in_x), chain_union(out_acc, out_x)
            prev = g.times[x]
        cm = tuple(x for x, s in chosen if s == "cm")
        pc = tuple(x for x, s in chosen if s == "pc")
        cc = tuple(x for x, s in chosen if s == "cc")
        base = max(len(cm) + len(cc), len(pc) + len(cc))
        room = g.n_max - base
        if room < 0:
            continue
        for C in all_chains(future, room):
            key = ((), cm, pc, chain_union(cc, C))
            ent[key] = extend_identity(acc, dh, d, chain_union(cm, cc), chain_union(cc, pc), C)
    return KernelTable(g, dh, ent)


def absorb_pm(K: KernelTable) -> KernelTable:
    """Sum the (+,-) slot into the remaining entries with its chain weight."""
    ent = {}
    for key, blk in K.sorted_items():
        k2 = ((),) + tuple(key[1:])
        val = chain_weight(K.grid, key[0]) * blk
        ent[k2] = ent[k2] + val if k2 in ent else val
    return KernelTable(K.grid, K.dim_H, ent)


def semi_tensor_residual(S: GeneratorS, t: float) -> dict:
    """Compare the adapted semi-tensor kernel with the chronological product."""
    K0 = identity_kernel(S.grid, S.dim_H)
    Kt = chrono_product(K0, S, t)
    K9 = semi_tensor_kernel(S, t)
    return {
        "kernel": table_distance(K9, absorb_pm(Kt)),
        "operator": _maxabs(epsilon_matrix(K9) - epsilon_matrix(Kt)),
    }


def estimate_exponent(S: GeneratorS, t: float, r=None) -> float:
    """(1/2) sum over past points of (|L_o-|^2 + |L_+o|^2) r dx."""
    g = S.grid
    r = np.ones(g.n) if r is None else np.broadcast_to(np.asarray(r, dtype=float), (g.n,))
    return 0.5 * sum(
        (np.linalg.norm(S.at(x).cm, 2) ** 2 + np.linalg.norm(S.at(x).pc, 2) ** 2) * r[x] * g.weights[x]
        for x in g.before(t)
    )


def adapted_norm_estimate(S: GeneratorS, t: float, r=None, p=None) -> dict:
    """Exponential bound on the adapted solution against its measured norm.

    The measured value is the norm of T_t from F(q) to F(1/q) with
    q = 1/r + p, the weight the projective estimate controls.
    """
    g = S.grid
    r = np.ones(g.n) if r is None else np.broadcast_to(np.asarray(r, dtype=float), (g.n,)).copy()
    p = np.ones(g.n) if p is None else np.broadcast_to(np.asarray(p, dtype=float), (g.n,)).copy()
    past = set(g.before(t))
    norm = lambda a: float(np.linalg.norm(a, 2)) if a.size else 0.0  # noqa: E731
    tiny = 1e-300
    alpha = NormQuadruple(
        np.full(g.n, tiny),
        np.array([max(norm(S.at(x).cm), tiny) if x in past else tiny for x in range(g.n)]),
        np.array([max(norm(S.at(x).pc), tiny) if x in past else tiny for x in range(g.n)]),
        np.array([max(norm(S.at(x).cc), tiny) if x in past else 1.0 for x in range(g.n)]),
    )
    exponent = estimate_exponent(S, t, r)
    bound = float(np.exp(exponent))
    K9 = semi_tensor_kernel(S, t)
    k_alpha = norm_alpha(K9, alpha)
    T = epsilon_matrix(K9)
    measured = projective_norm(S.space(), T, 1.0 / r + p)
    product_bound = bound_pr(g, alpha, r, np.maximum(p, alpha.cc), k_alpha)["product"]
    return {
        "exponent": float(exponent),
        "bound": bound,
        "kernel_alpha_norm": float(k_alpha),
        "product_bound": float(product_bound),
        "measured": float(measured),
        "holds": bool(measured <= bound * (1 + 1e-12)),
    }


# name kept for the public interface
estimate_three10 = adapted_norm_estimate
