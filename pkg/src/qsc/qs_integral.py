"""Single and multiple quantum stochastic integrals on a grid.

Operators are dense matrices in raw Fock coordinates.  A space with ``m``
extra K legs, ``F (x) K^m``, uses the index ``fock_index * d**m + legs``, so
the extra legs trail the Fock index.  Integrand quadruples hold, per grid
point x,

    D_pm(x): F -> F,        D_cm(x): F (x) K -> F,
    D_pc(x): F -> F (x) K,  D_cc(x): F (x) K -> F (x) K.

The integral over the cut ``t`` runs over points with ``t(x) < t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

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
    disjoint,
    leg_perm,
    weight_values,
    weighted_adjoint,
)
from .kernel_calc import KernelTable, in_chain, out_chain, reflect_key

ATOMIC_SLOTS = {"pm": 0, "cm": 1, "pc": 2, "cc": 3}


def atomic_key(x: int, slot: str) -> tuple:
    key = [(), (), (), ()]
    key[ATOMIC_SLOTS[slot]] = (int(x),)
    return tuple(key)


def key_points(key) -> tuple:
    return tuple(sorted(set().union(*map(set, key))))


def _normkey(key) -> tuple:
    return tuple(tuple(sorted(int(i) for i in c)) for c in key)


# -- integrand quadruples --------------------------------------------------------

@dataclass(eq=False)
class IntegrandQuadruple:
    """Per-point operator quadruples; missing entries are zero."""

    space: FockSpace
    pm: dict = field(default_factory=dict)
    cm: dict = field(default_factory=dict)
    pc: dict = field(default_factory=dict)
    cc: dict = field(default_factory=dict)

    def shape(self, slot: str) -> tuple:
        n, d = self.space.dim, self.space.grid.d
        return {
            "pm": (n, n),
            "cm": (n, n * d),
            "pc": (n * d, n),
            "cc": (n * d, n * d),
        }[slot]

    def get(self, slot: str, x: int) -> np.ndarray:
        val = getattr(self, slot).get(int(x))
        if val is None:
            return np.zeros(self.shape(slot), dtype=complex)
        val = np.asarray(val, dtype=complex)
        if val.shape != self.shape(slot):
            raise ValueError(f"D_{slot}({x}) has shape {val.shape}, expected {self.shape(slot)}")
        return val

    def points(self) -> list:
        return sorted(set(self.pm) | set(self.cm) | set(self.pc) | set(self.cc))


def point_integral(D: IntegrandQuadruple, x: int) -> np.ndarray:
    """i_x(D) = dx D_pm + dx D_cm A_x + C_x D_pc + C_x D_cc A_x."""
    space = D.space
    dx = space.grid.weights[x]
    A = annihilator_matrix(space, (x,))
    C = creator_matrix(space, (x,))
    return (
        dx * D.get("pm", x)
        + dx * D.get("cm", x) @ A
        + C @ D.get("pc", x)
        + C @ D.get("cc", x) @ A
    )


def single_integral_matrix(D: IntegrandQuadruple, t: float) -> np.ndarray:
    space = D.space
    out = np.zeros((space.dim, space.dim), dtype=complex)
    for x in space.grid.before(t):
        out += point_integral(D, x)
    return out


def single_integral(D: IntegrandQuadruple, t: float, h: FockVector) -> FockVector:
    return FockVector.from_dense(h.space, single_integral_matrix(D, t) @ h.to_dense())


def lambda_measure(kind: str, D: IntegrandQuadruple, points, h: FockVector) -> FockVector:
    """One of the four integrator actions restricted to a set of points."""
    space = D.space
    vec = h.to_dense()
    out = np.zeros(space.dim, dtype=complex)
    for x in sorted(set(int(p) for p in points)):
        dx = space.grid.weights[x]
        if kind == "preservation":
            out += dx * D.get("pm", x) @ vec
        elif kind == "annihilation":
            out += dx * D.get("cm", x) @ (annihilator_matrix(space, (x,)) @ vec)
        elif kind == "creation":
            out += creator_matrix(space, (x,)) @ (D.get("pc", x) @ vec)
        elif kind == "exchange":
            A = annihilator_matrix(space, (x,))
            out += creator_matrix(space, (x,)) @ (D.get("cc", x) @ (A @ vec))
        else:
            raise ValueError(f"unknown integrator kind {kind!r}")
    return FockVector.from_dense(space, out)


# -- multiple integrals ----------------------------------------------------------

@dataclass(eq=False)
class TableIntegrand:
    """Map from quadruples of chains to operators F K^in -> F K^out."""

    space: FockSpace
    entries: dict = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for key, val in self.entries.items():
            key = _normkey(key)
            if not disjoint(*key):
                raise ValueError(f"table {key} has overlapping chains")
            val = np.asarray(val, dtype=complex)
            if val.shape != self.shape(key):
                raise ValueError(f"B{key} has shape {val.shape}, expected {self.shape(key)}")
            clean[key] = val
        self.entries = clean

    def shape(self, key) -> tuple:
        n, d = self.space.dim, self.space.grid.d
        return (n * d ** len(out_chain(key)), n * d ** len(in_chain(key)))

    def sorted_items(self):
        return sorted(self.entries.items(), key=lambda kv: kv[0])


def atomic_table(D: IntegrandQuadruple, t: float = np.inf) -> TableIntegrand:
    ent = {}
    for x in D.space.grid.before(t):
        for slot in ATOMIC_SLOTS:
            if x in getattr(D, slot):
                ent[atomic_key(x, slot)] = D.get(slot, x)
    return TableIntegrand(D.space, ent)


def table_term(space: FockSpace, key, B: np.ndarray) -> np.ndarray:
    g = space.grid
    coef = chain_weight(g, key[0]) * chain_weight(g, key[1])
    return coef * creator_matrix(space, out_chain(key)) @ B @ annihilator_matrix(space, in_chain(key))


def multiple_integral_matrix(B: TableIntegrand, t: float) -> np.ndarray:
    space = B.space
    past = set(space.grid.before(t))
    out = np.zeros((space.dim, space.dim), dtype=complex)
    for key, val in B.sorted_items():
        if set(key_points(key)) <= past:
            out += table_term(space, key, val)
    return out


def multiple_integral(B: TableIntegrand, t: float, h: FockVector) -> FockVector:
    return FockVector.from_dense(h.space, multiple_integral_matrix(B, t) @ h.to_dense())


def table_star(B: TableIntegrand) -> TableIntegrand:
    space = B.space
    ent = {}
    for key, val in B.entries.items():
        w_in = space.leg_weights(len(in_chain(key)))
        w_out = space.leg_weights(len(out_chain(key)))
        ent[reflect_key(key)] = weighted_adjoint(val, w_in, w_out)
    return TableIntegrand(space, ent)


def _kron_legs(M: np.ndarray, m: int, d: int) -> np.ndarray:
    return np.kron(M, np.eye(d ** m)) if m and d > 1 else M


def qs_derivatives(B: TableIntegrand, x: int) -> dict:
    """D_slot(x) = i_0^{t(x)}(B(. + x_slot)) as dense matrices with the x leg last."""
    space = B.space
    g = space.grid
    d = g.d
    x = int(x)
    past = set(g.before(g.times[x]))
    out = {}
    for slot, idx in ATOMIC_SLOTS.items():
        ax = atomic_key(x, slot)
        m_in, m_out = len(in_chain(ax)), len(out_chain(ax))
        acc = np.zeros(
            (space.dim * d ** m_out, space.dim * d ** m_in), dtype=complex
        )
        for key, val in B.sorted_items():
            if x not in key[idx]:
                continue
            rest = list(key)
            rest[idx] = chain_minus(key[idx], (x,))
            rest = tuple(rest)
            if not set(key_points(rest)) <= past:
                continue
            coef = chain_weight(g, rest[0]) * chain_weight(g, rest[1])
            C = _kron_legs(creator_matrix(space, out_chain(rest)), m_out, d)
            A = _kron_legs(annihilator_matrix(space, in_chain(rest)), m_in, d)
            acc += coef * C @ val @ A
        out[slot] = acc
    return out


def derivative_quadruple(B: TableIntegrand, t: float = np.inf) -> IntegrandQuadruple:
    D = IntegrandQuadruple(B.space)
    for x in B.space.grid.before(t):
        for slot, val in qs_derivatives(B, x).items():
            getattr(D, slot)[x] = val
    return D


def reconstruction_residual(B: TableIntegrand, t: float) -> float:
    lhs = multiple_integral_matrix(B, t)
    b0 = B.entries.get(((), (), (), ()), np.zeros((B.space.dim, B.space.dim)))
    rhs = b0 + single_integral_matrix(derivative_quadruple(B, t), t)
    return float(np.max(np.abs(lhs - rhs)))


# -- counting integral and intertwining -------------------------------------------

@dataclass(eq=False)
class CountingIntegrand:
    """Kernel-valued integrand M(theta, upsilon).

    Stored as ``(theta, upsilon) -> block`` where the block is a kernel block
    over the joined quadruple ``theta + upsilon`` with ascending legs.
    """

    grid: object
    dim_H: int = 1
    entries: dict = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        probe = KernelTable(self.grid, self.dim_H)
        for (theta, ups), val in self.entries.items():
            theta, ups = _normkey(theta), _normkey(ups)
            joined = tuple(chain_union(a, b) for a, b in zip(theta, ups))
            if not disjoint(*theta, *ups):
                raise ValueError("theta and upsilon tables must be disjoint")
            val = np.asarray(val, dtype=complex).reshape(probe.block_shape(joined))
            clean[(theta, ups)] = val
        self.entries = clean


def joined_key(theta, ups) -> tuple:
    return tuple(chain_union(a, b) for a, b in zip(theta, ups))


def counting_integral(M: CountingIntegrand, t: float) -> KernelTable:
    """nu_0^t(w) = sum over theta inside w^t of M(theta, w - theta)."""
    past = set(M.grid.before(t))
    ent = {}
    for (theta, ups), val in sorted(M.entries.items()):
        if not set(key_points(theta)) <= past:
            continue
        key = joined_key(theta, ups)
        ent[key] = ent[key] + val if key in ent else val.copy()
    return KernelTable(M.grid, M.dim_H, ent)


def _reorder_block(block, dim_H: int, d: int, union_out, groups_out, union_in, groups_in):
    no, ni = len(union_out), len(union_in)
    T = np.asarray(block).reshape((dim_H,) + (d,) * no + (dim_H,) + (d,) * ni)
    po = leg_perm(union_out, groups_out)
    pi = [no + 1 + a for a in leg_perm(union_in, groups_in)]
    return np.transpose(T, po + pi).reshape(dim_H * d ** no, dim_H * d ** ni)


def table_from_counting(M: CountingIntegrand) -> TableIntegrand:
    """B(theta) = eps(M(theta, .)) acting on F (x) K^in(theta)."""
    g, dh = M.grid, M.dim_H
    space = FockSpace(g, dh)
    d = g.d
    grouped = {}
    for (theta, ups), val in M.entries.items():
        grouped.setdefault(theta, []).append((ups, val))
    ent = {}
    for theta, items in sorted(grouped.items()):
        mi, mo = len(in_chain(theta)), len(out_chain(theta))
        acc = np.zeros((space.dim * d ** mo, space.dim * d ** mi), dtype=complex)
        for ups, val in sorted(items, key=lambda kv: kv[0]):
            ci, co = in_chain(ups), out_chain(ups)
            if not (space.contains(ci) and space.contains(co)):
                continue
            blk = _reorder_block(
                val,
                dh,
                d,
                chain_union(co, out_chain(theta)),
                (co, out_chain(theta)),
                chain_union(ci, in_chain(theta)),
                (ci, in_chain(theta)),
            )
            coef = chain_weight(g, ups[0]) * chain_weight(g, ups[1])
            ro = space.offsets[co] * d ** mo
            ri = space.offsets[ci] * d ** mi
            acc[ro : ro + blk.shape[0], ri : ri + blk.shape[1]] += coef * blk
        ent[theta] = acc
    return TableIntegrand(space, ent)


# -- norms ------------------------------------------------------------------------

def projective_norm_legs(space: FockSpace, M: np.ndarray, p, m_in: int = 0, m_out: int = 0) -> float:
    """Norm of M : F(p) (x) K^m_in -> F(1/p) (x) K^m_out."""
    d = space.grid.d
    pv = weight_values(space, p)
    s_in = np.sqrt(np.repeat(space.weights * pv, d ** m_in))
    s_out = np.sqrt(np.repeat(space.weights / pv, d ** m_out))
    A = (s_out[:, None] * M) / s_in[None, :]
    return float(np.linalg.norm(A, 2)) if A.size else 0.0


def table_norm(B: TableIntegrand, p, r, s, t: float) -> float:
    """||B||^s_{p,t}(r): weighted sums over (+,-), (+,o), (o,-) and a sup over (o,o)."""
    space = B.space
    g = space.grid
    r = np.asarray(r, dtype=float)
    s = np.asarray(s, dtype=float)
    past = set(g.before(t))
    sup = {}
    for key, val in B.entries.items():
        if not set(key_points(key)) <= past:
            continue
        nrm = projective_norm_legs(space, val, p, len(in_chain(key)), len(out_chain(key)))
        val_s = float(np.prod(s[list(key[3])])) * nrm
        k3 = key[:3]
        sup[k3] = max(sup.get(k3, 0.0), val_s)
    inner = {}
    for (pm, cm, pc), v in sup.items():
        w = chain_weight(g, pc) * chain_weight(g, cm) * float(np.prod(r[list(chain_union(pc, cm))]))
        inner[pm] = inner.get(pm, 0.0) + w * v * v
    return float(sum(chain_weight(g, pm) * np.sqrt(v) for pm, v in inner.items()))


def quadruple_norms(D: IntegrandQuadruple, p, r, s, t: float) -> dict:
    """||D_pm||^(1), ||D_pc||^(2)(r), ||D_cm||^(2)(r), ||D_cc||^(inf)(s)."""
    space = D.space
    g = space.grid
    r = np.asarray(r, dtype=float)
    s = np.asarray(s, dtype=float)
    pts = g.before(t)
    n1 = sum(g.weights[x] * projective_norm_legs(space, D.get("pm", x), p) for x in pts)
    n2pc = np.sqrt(
        sum(g.weights[x] * r[x] * projective_norm_legs(space, D.get("pc", x), p, 0, 1) ** 2 for x in pts)
    )
    n2cm = np.sqrt(
        sum(g.weights[x] * r[x] * projective_norm_legs(space, D.get("cm", x), p, 1, 0) ** 2 for x in pts)
    )
    ninf = max(
        [s[x] * projective_norm_legs(space, D.get("cc", x), p, 1, 1) for x in pts], default=0.0
    )
    return {"pm": float(n1), "pc": float(n2pc), "cm": float(n2cm), "cc": float(ninf)}


def norm_estimates(B: TableIntegrand, p, r, s, t: float, q=None) -> dict:
    """Table norm, the measured ||iota_0^t(B)||_q and whether the bound holds.

    ``q`` defaults to 1/r + p + 1/s, the smallest weight the estimate allows.
    """
    space = B.space
    p = np.asarray(p, dtype=float)
    r = np.asarray(r, dtype=float)
    s = np.asarray(s, dtype=float)
    q = 1 / r + p + 1 / s if q is None else np.asarray(q, dtype=float)
    bound = table_norm(B, p, r, s, t)
    measured = projective_norm_legs(space, multiple_integral_matrix(B, t), q)
    return {"bound": bound, "measured": measured, "holds": measured <= bound * (1 + 1e-12) + 1e-14}


# -- adaptedness ------------------------------------------------------------------

def adaptedness_defect(space: FockSpace, T: np.ndarray, t: float) -> float:
    """Distance of T from the form T_past (x) I on past (x) future chains.

    T is adapted at t when it commutes with the future factorisation, i.e.
    it preserves future points and acts on them as the identity.
    """
    g = space.grid
    future = [x for x in range(g.n) if g.times[x] >= t]
    worst = 0.0
    for sig in all_chains(future, g.n_max):
        if not sig:
            continue
        A = annihilator_matrix(space, sig)
        k = g.d ** len(sig)
        lhs = A @ T
        rhs = np.kron(T, np.eye(k)) @ A
        P = np.kron(space.projector_without(sig), np.eye(k))
        worst = max(worst, float(np.max(np.abs(P @ (lhs - rhs)))))
    return worst
