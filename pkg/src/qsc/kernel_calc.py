"""Kernel tables and their Fock representation on a finite grid.

A kernel assigns an operator block to each quadruple of pairwise disjoint
chains ``w = (pm, cm, pc, cc)``, standing for the slots (+,-), (o,-), (+,o)
and (o,o).  The block maps ``H (x) K^(cm + cc)`` to ``H (x) K^(cc + pc)``, legs
ascending in each union.  The representation

    eps(K) h (k) = sum_{cc + pc = k} sum_{cm, pm} w(cm) w(pm) K(w) h(cc + cm)

is assembled as a dense matrix on the coordinates of :class:`FockSpace`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .chain_fock import (
    FockSpace,
    Grid,
    all_chains,
    chain_minus,
    chain_union,
    chain_weight,
    disjoint,
    weight_values,
    weighted_adjoint,
)
from .gns_rep import TriangularOp

SLOTS = ("pm", "cm", "pc", "cc")
MAX_PSEUDO_FOCK_DIM = 4096


def in_chain(key) -> tuple:
    return chain_union(key[1], key[3])


def out_chain(key) -> tuple:
    return chain_union(key[3], key[2])


def _norm_key(key) -> tuple:
    key = tuple(tuple(sorted(int(i) for i in c)) for c in key)
    if len(key) != 4:
        raise ValueError("kernel keys are quadruples of chains")
    if not disjoint(*key):
        raise ValueError(f"kernel key {key} has overlapping chains")
    return key


@dataclass(eq=False)
class KernelTable:
    """Sparse kernel: quadruple of chains -> dense operator block."""

    grid: Grid
    dim_H: int = 1
    entries: dict = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for key, block in self.entries.items():
            key = _norm_key(key)
            block = np.asarray(block, dtype=complex)
            shape = self.block_shape(key)
            if block.shape != shape:
                if block.size != shape[0] * shape[1]:
                    raise ValueError(f"block at {key} has shape {block.shape}, expected {shape}")
                block = block.reshape(shape)
            clean[key] = clean.get(key, 0) + block
        self.entries = clean

    def block_shape(self, key) -> tuple:
        d = self.grid.d
        return (
            self.dim_H * d ** (len(key[3]) + len(key[2])),
            self.dim_H * d ** (len(key[1]) + len(key[3])),
        )

    def space(self) -> FockSpace:
        return FockSpace(self.grid, self.dim_H)

    def get(self, key):
        return self.entries.get(_norm_key(key))

    def copy(self) -> "KernelTable":
        return KernelTable(self.grid, self.dim_H, {k: v.copy() for k, v in self.entries.items()})

    def scaled(self, c: complex) -> "KernelTable":
        return KernelTable(self.grid, self.dim_H, {k: c * v for k, v in self.entries.items()})

    def __add__(self, other: "KernelTable") -> "KernelTable":
        _check_compatible(self, other)
        ent = {k: v.copy() for k, v in self.entries.items()}
        for k, v in other.entries.items():
            ent[k] = ent[k] + v if k in ent else v.copy()
        return KernelTable(self.grid, self.dim_H, ent)

    def __sub__(self, other: "KernelTable") -> "KernelTable":
        return self + other.scaled(-1.0)

    def sorted_items(self):
        return sorted(self.entries.items(), key=lambda kv: kv[0])


def _check_compatible(K: KernelTable, L: KernelTable):
    if not K.grid.same_as(L.grid):
        raise ValueError("kernels live on different grids")
    if K.dim_H != L.dim_H:
        raise ValueError(f"initial-space dimensions differ: {K.dim_H} vs {L.dim_H}")


def table_distance(K: KernelTable, L: KernelTable) -> float:
    keys = set(K.entries) | set(L.entries)
    worst = 0.0
    for k in keys:
        a = K.entries.get(k)
        b = L.entries.get(k)
        if a is None:
            a = np.zeros_like(b)
        if b is None:
            b = np.zeros_like(a)
        worst = max(worst, float(np.max(np.abs(a - b), initial=0.0)))
    return worst


def identity_kernel(grid: Grid, dim_H: int = 1) -> KernelTable:
    ent = {}
    for c in grid.chains:
        n = dim_H * grid.d ** len(c)
        ent[((), (), (), c)] = np.eye(n, dtype=complex)
    return KernelTable(grid, dim_H, ent)


def scalar_kernel(grid: Grid, block, dim_H: int | None = None) -> KernelTable:
    """Kernel of B (x) I on H (x) F for an operator B on H."""
    block = np.atleast_2d(np.asarray(block, dtype=complex))
    dim_H = block.shape[0] if dim_H is None else dim_H
    ent = {}
    for c in grid.chains:
        ent[((), (), (), c)] = np.kron(block, np.eye(grid.d ** len(c)))
    return KernelTable(grid, dim_H, ent)


# -- Fock representation -------------------------------------------------------

def epsilon_matrix(K: KernelTable) -> np.ndarray:
    """Dense matrix of eps(K) in raw Fock coordinates."""
    space = K.space()
    out = np.zeros((space.dim, space.dim), dtype=complex)
    g = K.grid
    for key, block in K.sorted_items():
        ci, co = in_chain(key), out_chain(key)
        if not (space.contains(ci) and space.contains(co)):
            continue
        coef = chain_weight(g, key[0]) * chain_weight(g, key[1])
        out[space.block(co), space.block(ci)] += coef * block
    return out


def epsilon(K: KernelTable, h):
    """Apply eps(K) to a FockVector."""
    from .chain_fock import FockVector

    return FockVector.from_dense(h.space, epsilon_matrix(K) @ h.to_dense())


def fock_adjoint(space: FockSpace, M: np.ndarray) -> np.ndarray:
    """Adjoint of a dense operator on F with respect to the weighted inner product."""
    return weighted_adjoint(M, space.weights, space.weights)


def orthonormal(space: FockSpace, M: np.ndarray) -> np.ndarray:
    """Matrix of M in orthonormal coordinates sqrt(w) h."""
    s = np.sqrt(space.weights)
    return (s[:, None] * M) / s[None, :]


# -- involution and product ------------------------------------------------------

def reflect_key(key) -> tuple:
    pm, cm, pc, cc = key
    return (pm, pc, cm, cc)


def kernel_star(K: KernelTable) -> KernelTable:
    ent = {reflect_key(k): v.conj().T for k, v in K.entries.items()}
    return KernelTable(K.grid, K.dim_H, ent)


def kernel_mul(K: KernelTable, L: KernelTable) -> KernelTable:
    """Kernel of eps(K) eps(L) on the grid.

    Entries of K and L are paired whenever the input chain of K equals the
    output chain of L.  The product entry has output chain out(K), input
    chain in(L), (o,o) slot their intersection, and (+,-) slot every other
    point carried by either factor.  Its coefficient redistributes the chain
    weights so that eps is multiplicative; points that sit in an integrated
    slot of both factors contribute a single grid weight, which is the
    discrete counterpart of the diagonal the continuum product neglects.
    """
    _check_compatible(K, L)
    g = K.grid
    space = K.space()
    by_out = {}
    for lkey, lblock in L.sorted_items():
        by_out.setdefault(out_chain(lkey), []).append((lkey, lblock))
    ent = {}
    for kkey, kblock in K.sorted_items():
        mid = in_chain(kkey)
        if not space.contains(mid) or mid not in by_out:
            continue
        ok = out_chain(kkey)
        if not space.contains(ok):
            continue
        for lkey, lblock in by_out[mid]:
            il = in_chain(lkey)
            if not space.contains(il):
                continue
            ok_set, il_set = set(ok), set(il)
            cc = tuple(sorted(ok_set & il_set))
            pc = tuple(sorted(ok_set - il_set))
            cm = tuple(sorted(il_set - ok_set))
            carried = set().union(*map(set, kkey), *map(set, lkey))
            pm = tuple(sorted(carried - ok_set - il_set))
            num = (
                chain_weight(g, kkey[0])
                * chain_weight(g, kkey[1])
                * chain_weight(g, lkey[0])
                * chain_weight(g, lkey[1])
            )
            coef = num / (chain_weight(g, cm) * chain_weight(g, pm))
            key = (pm, cm, pc, cc)
            val = coef * (kblock @ lblock)
            ent[key] = ent[key] + val if key in ent else val
    return KernelTable(g, K.dim_H, ent)


# -- identity extension and Moebius transform ------------------------------------

def extend_identity(block, dim_H: int, d: int, in_c, out_c, extra) -> np.ndarray:
    """Tensor a block H K^in -> H K^out with the identity on the legs of ``extra``.

    The result maps ``H K^(in + extra)`` to ``H K^(out + extra)`` with legs in
    ascending point order on each side.
    """
    in_c, out_c, extra = tuple(in_c), tuple(out_c), tuple(extra)
    if not extra:
        return np.asarray(block, dtype=complex)
    no, ni, ne = len(out_c), len(in_c), len(extra)
    T = np.asarray(block, dtype=complex).reshape((dim_H,) + (d,) * no + (dim_H,) + (d,) * ni)
    eye = np.eye(d)
    for _ in range(ne):
        T = np.multiply.outer(T, eye)
    # axes: Ho, out legs, Hi, in legs, (e_out, e_in) pairs
    base = 2 + no + ni
    out_axes = [0] + list(range(1, 1 + no)) + [base + 2 * i for i in range(ne)]
    in_axes = [1 + no] + list(range(2 + no, 2 + no + ni)) + [base + 2 * i + 1 for i in range(ne)]
    new_out = out_c + extra
    new_in = in_c + extra
    so = [out_axes[0]] + [out_axes[1 + i] for i in np.argsort(new_out, kind="stable")]
    si = [in_axes[0]] + [in_axes[1 + i] for i in np.argsort(new_in, kind="stable")]
    T = np.transpose(T, so + si)
    return T.reshape(dim_H * d ** (no + ne), dim_H * d ** (ni + ne))


def _cc_supersets(grid: Grid, key, theta) -> list:
    pm, cm, pc, _ = key
    used = set(pm) | set(cm) | set(pc) | set(theta)
    free = [x for x in range(grid.n) if x not in used]
    room = grid.n_max - len(theta) - max(len(cm), len(pc))
    return [chain_union(theta, e) for e in all_chains(free, max(room, -1))] if room >= 0 else []


def mobius_to_kernel(M: KernelTable) -> KernelTable:
    """K(pm, cm, pc, cc) = sum over theta in cc of M(pm, cm, pc, theta) (x) I."""
    g, dh = M.grid, M.dim_H
    ent = {}
    for key, block in M.sorted_items():
        pm, cm, pc, theta = key
        for cc in _cc_supersets(g, key, theta):
            extra = chain_minus(cc, theta)
            val = extend_identity(
                block, dh, g.d, chain_union(cm, theta), chain_union(theta, pc), extra
            )
            k2 = (pm, cm, pc, cc)
            ent[k2] = ent[k2] + val if k2 in ent else val
    return KernelTable(g, dh, ent)


def mobius_to_mm(K: KernelTable) -> KernelTable:
    """Inverse transform: M(.., theta) = sum over s in theta of (-1)^|theta - s| K(.., s) (x) I."""
    g, dh = K.grid, K.dim_H
    ent = {}
    for key, block in K.sorted_items():
        pm, cm, pc, s = key
        for theta in _cc_supersets(g, key, s):
            extra = chain_minus(theta, s)
            sign = -1.0 if len(extra) % 2 else 1.0
            val = sign * extend_identity(
                block, dh, g.d, chain_union(cm, s), chain_union(s, pc), extra
            )
            k2 = (pm, cm, pc, theta)
            ent[k2] = ent[k2] + val if k2 in ent else val
    return KernelTable(g, dh, ent)


# -- exponential kernels, pseudo-Fock dilation and pi ----------------------------

def _slot_tensor(blocks, key, dim_H: int, d: int) -> np.ndarray:
    """Tensor product over the points of ``key`` of per-slot blocks, legs sorted.

    ``blocks[x]`` is a TriangularOp on K = C^d; scalar H only.
    """
    if dim_H != 1:
        raise ValueError("exponential kernels are defined for a scalar initial space")
    pm, cm, pc, cc = key
    coef = 1.0 + 0j
    for x in pm:
        coef *= blocks[x].l
    T = np.array([[coef]])
    out_c, in_c = (), ()
    for x in sorted(cm + pc + cc):
        G = blocks[x]
        if x in cm:
            piece, o, i = G.k_row.reshape(1, d), (), (x,)
        elif x in pc:
            piece, o, i = G.k_col.reshape(d, 1), (x,), ()
        else:
            piece, o, i = G.j_block, (x,), (x,)
        T = np.kron(T, piece)
        out_c += o
        in_c += i
    # kron over ascending points already yields ascending legs on both sides
    return T


def exponential_kernel(grid: Grid, blocks) -> KernelTable:
    """Kernel K(w) = prod over slots of the triangular entries of blocks[x]."""
    d = grid.d
    for G in blocks:
        if G.dim_K != d:
            raise ValueError("triangular blocks must act on K = C^d")
    ent = {}
    pts = range(grid.n)
    for assign in product(range(5), repeat=grid.n):
        # 0 absent, 1 pm, 2 cm, 3 pc, 4 cc
        slots = [tuple(x for x in pts if assign[x] == s) for s in range(1, 5)]
        key = tuple(slots)
        if max(len(in_chain(key)), len(out_chain(key))) > grid.n_max:
            continue
        ent[key] = _slot_tensor(blocks, key, 1, d)
    return KernelTable(grid, 1, ent)


def psi_block(G: TriangularOp, dx: float) -> np.ndarray:
    """Local raw matrix [[1 + dx l, dx k*], [k, j]] on C + K."""
    m = G.dim_K
    out = np.empty((m + 1, m + 1), dtype=complex)
    out[0, 0] = 1 + dx * G.l
    out[0, 1:] = dx * G.k_row
    out[1:, 0] = G.k_col
    out[1:, 1:] = G.j_block
    return out


def _product_index_map(space: FockSpace, local_index) -> np.ndarray:
    """For every raw Fock coordinate, its index in the tensor product of local spaces."""
    g = space.grid
    loc_dim = local_index(None, 0)[1]
    idx = np.empty(space.dim, dtype=int)
    for c in space.chains:
        pos = space.positions(c).reshape(-1)
        legs = list(product(range(g.d), repeat=len(c)))
        for p, leg in zip(pos, legs):
            digit = 0
            lk = dict(zip(c, leg))
            for x in range(g.n):
                code = local_index(lk.get(x), x)[0]
                digit = digit * loc_dim + code
            idx[p] = digit
    return idx


@dataclass
class PseudoFock:
    """Dense model of the triple-chain space over a small scalar grid."""

    space: FockSpace
    J: np.ndarray
    J_project: np.ndarray
    metric: np.ndarray

    def pseudo_inner(self, f: np.ndarray, h: np.ndarray) -> complex:
        return complex(np.conj(f) @ self.metric @ h)


def _guard(grid: Grid):
    if grid.n > 3 or (grid.d + 3) ** grid.n > MAX_PSEUDO_FOCK_DIM:
        raise ValueError("pseudo-Fock model limited to n <= 3 small grids")


def pseudo_fock(grid: Grid) -> PseudoFock:
    """Embedding J: F -> triple-chain space, its projection, and the pseudo-metric.

    Local triple-chain coordinates are (none, -, o_1..o_d, +).
    """
    _guard(grid)
    if grid.n_max != grid.n:
        raise ValueError("pseudo-Fock model requires n_max = n")
    d = grid.d
    space = FockSpace(grid, 1)
    L = d + 3
    fidx = _product_index_map(space, lambda leg, x: (0 if leg is None else 1 + leg, d + 1))
    # permutation from raw Fock coordinates to the product of local (C + K)
    P = np.zeros(((d + 1) ** grid.n, space.dim))
    P[fidx, np.arange(space.dim)] = 1.0
    J_loc = np.zeros((L, d + 1))
    J_loc[0, 0] = J_loc[L - 1, 0] = 1.0
    J_loc[2 : 2 + d, 1:] = np.eye(d)
    J = np.ones((1, 1))
    Jp = np.ones((1, 1))
    eta = np.ones((1, 1))
    for x in range(grid.n):
        dx = grid.weights[x]
        Jp_loc = np.zeros((d + 1, L))
        Jp_loc[0, 0] = 1.0
        Jp_loc[0, 1] = dx
        Jp_loc[1:, 2 : 2 + d] = np.eye(d)
        eta_loc = np.zeros((L, L))
        eta_loc[0, 0] = 1.0
        eta_loc[1, L - 1] = eta_loc[L - 1, 1] = dx
        eta_loc[2 : 2 + d, 2 : 2 + d] = dx * np.eye(d)
        J = np.kron(J, J_loc)
        Jp = np.kron(Jp, Jp_loc)
        eta = np.kron(eta, eta_loc)
    return PseudoFock(space, J @ P, P.T @ Jp, eta)


def pseudo_fock_dilate(grid: Grid, blocks) -> np.ndarray:
    """Decomposable action of per-point triangular operators on the triple-chain space."""
    _guard(grid)
    d = grid.d
    L = d + 3
    out = np.ones((1, 1), dtype=complex)
    for G in blocks:
        if G.dim_K != d:
            raise ValueError("triangular blocks must act on K = C^d")
        loc = np.zeros((L, L), dtype=complex)
        loc[0, 0] = 1.0
        loc[1:, 1:] = G.to_matrix()
        out = np.kron(out, loc)
    return out


def compression_residual(grid: Grid, blocks) -> float:
    """max |J^dagger G J - eps(exponential kernel of G)| in raw coordinates."""
    pf = pseudo_fock(grid)
    comp = pf.J_project @ pseudo_fock_dilate(grid, blocks) @ pf.J
    eps = epsilon_matrix(exponential_kernel(grid, blocks))
    return float(np.max(np.abs(comp - eps)))


def pi_rep(rep, g, grid: Grid) -> np.ndarray:
    """Dense pi(g) = eps(exponential kernel of T(g(x))) on scalar Fock space.

    ``rep`` maps a monoid element to its TriangularOp (e.g. TriangularRep.op),
    ``g`` lists one monoid element per grid point.
    """
    blocks = [rep(b) for b in g]
    return epsilon_matrix(exponential_kernel(grid, blocks))


# -- norms ----------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class NormQuadruple:
    pm: np.ndarray
    cm: np.ndarray
    pc: np.ndarray
    cc: np.ndarray

    def __post_init__(self):
        for name in SLOTS:
            v = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if np.any(v <= 0):
                raise ValueError("norm quadruple entries must be positive")
            object.__setattr__(self, name, v)

    def reflected(self) -> "NormQuadruple":
        return NormQuadruple(self.pm, self.pc, self.cm, self.cc)

    @classmethod
    def constant(cls, n: int, value: float = 1.0) -> "NormQuadruple":
        v = np.full(n, float(value))
        return cls(v, v, v, v)


def norm_alpha(K: KernelTable, alpha: NormQuadruple) -> float:
    worst = 0.0
    for key, block in K.entries.items():
        den = 1.0
        for name, chain in zip(SLOTS, key):
            den *= float(np.prod(getattr(alpha, name)[list(chain)]))
        nb = float(np.linalg.norm(block, 2))
        if nb:
            worst = max(worst, nb / den if den else np.inf)
    return worst


def bound_pr(grid: Grid, alpha: NormQuadruple, r, p, norm: float = 1.0) -> dict:
    """Projective bound of eps(K) from the alpha-norm.

    Returns the product form (exact chain sums on the grid) and the
    exponential majorant, both multiplied by ``norm``.
    """
    r = np.asarray(r, dtype=float)
    p = np.asarray(p, dtype=float)
    w = grid.weights
    if np.any(alpha.cc > p * (1 + 1e-12)):
        raise ValueError("alpha_oo must be bounded by p")
    prod_form = (
        np.prod(1 + alpha.pm * w)
        * np.sqrt(np.prod(1 + alpha.pc ** 2 * r * w) * np.prod(1 + alpha.cm ** 2 * r * w))
    )
    expo = np.exp(np.sum((alpha.pm + r * (alpha.pc ** 2 + alpha.cm ** 2) / 2) * w))
    return {"product": float(norm * prod_form), "exponential": float(norm * expo)}


def projective_norm(space: FockSpace, M: np.ndarray, q) -> float:
    """Norm of M as a map from F(q) to F(1/q)."""
    s = np.sqrt(space.weights)
    qv = weight_values(space, q)
    A = (s[:, None] * M) / s[None, :]
    A = A / np.sqrt(qv)[:, None] / np.sqrt(qv)[None, :]
    return float(np.linalg.norm(A, 2))
