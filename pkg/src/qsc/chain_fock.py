"""Discretised chain (Guichardet) spaces and truncated Fock vectors.

A grid is a finite set of points with strictly increasing times and positive
quadrature weights.  Chains are sorted tuples of point indices.  A Fock
vector assigns to every chain ``k`` of length at most ``n_max`` a tensor of
shape ``(dim_H,) + (d,) * len(k)``: the leading axis is the initial space and
the remaining axes are the per-point legs in ascending point order.

Dense coordinates list chains in a fixed order (by length, then
lexicographically), each block flattened in C order.  Inner products carry
the chain weight ``w(k) = prod_x dx``; the extra K legs used by annihilators
are unweighted.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations

import numpy as np

Chain = tuple


@dataclass(frozen=True, eq=False)
class Grid:
    times: np.ndarray
    weights: np.ndarray
    d: int = 1
    n_max: int | None = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).reshape(-1)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if t.size != w.size:
            raise ValueError("times and weights must have the same length")
        if t.size and np.any(np.diff(t) <= 0):
            raise ValueError("grid times must be strictly increasing")
        if np.any(~np.isfinite(t)) or np.any(~np.isfinite(w)):
            raise ValueError("grid times and weights must be finite")
        if np.any(w <= 0):
            raise ValueError("grid weights must be positive")
        if int(self.d) < 1:
            raise ValueError("multiplicity d must be a positive integer")
        n_max = t.size if self.n_max is None else int(self.n_max)
        if n_max < 0:
            raise ValueError("n_max must be nonnegative")
        t.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "n_max", min(n_max, t.size))

    @property
    def n(self) -> int:
        return self.times.size

    @classmethod
    def uniform(cls, n: int, T: float = 1.0, d: int = 1, n_max=None) -> "Grid":
        dt = T / n
        return cls(dt * np.arange(n), np.full(n, dt), d, n_max)

    def same_as(self, other: "Grid") -> bool:
        return self is other or (
            self.d == other.d
            and self.n_max == other.n_max
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.weights, other.weights)
        )

    def before(self, t: float) -> tuple:
        """Indices of points with t(x) < t."""
        return tuple(int(i) for i in np.nonzero(self.times < t)[0])

    def next_cut(self, x: int) -> float:
        """The first cut strictly after t(x): the next grid time, or +inf."""
        return float(self.times[x + 1]) if x + 1 < self.n else np.inf

    @cached_property
    def chains(self) -> tuple:
        return all_chains(range(self.n), self.n_max)


def all_chains(points, max_len: int) -> tuple:
    pts = sorted(points)
    out = []
    for k in range(0, min(max_len, len(pts)) + 1):
        out.extend(combinations(pts, k))
    return tuple(out)


def chain_weight(grid: Grid, chain) -> float:
    w = 1.0
    for i in chain:
        w *= grid.weights[i]
    return float(w)


def chain_union(a, b) -> tuple:
    return tuple(sorted(a + b))


def chain_minus(a, b) -> tuple:
    bs = set(b)
    return tuple(i for i in a if i not in bs)


def disjoint(*chains) -> bool:
    total = sum(len(c) for c in chains)
    return len(set().union(*map(set, chains))) == total


def subchains(chain) -> list:
    out = []
    for k in range(len(chain) + 1):
        out.extend(combinations(chain, k))
    return out


def leg_perm(order, groups) -> list:
    """Axis permutation taking sorted legs of ``order`` to the concatenation of groups.

    ``order`` is a sorted chain, ``groups`` a sequence of sorted sub-chains
    whose disjoint union is ``order``.  The leading H axis is kept first.
    """
    pos = {x: i + 1 for i, x in enumerate(order)}
    perm = [0]
    for g in groups:
        perm.extend(pos[x] for x in g)
    return perm


@dataclass(frozen=True, eq=False)
class FockSpace:
    """Dense coordinate system for truncated H (x) Fock space over a grid."""

    grid: Grid
    dim_H: int = 1

    @cached_property
    def chains(self) -> tuple:
        return self.grid.chains

    @cached_property
    def index(self) -> dict:
        return {c: i for i, c in enumerate(self.chains)}

    def shape(self, chain) -> tuple:
        return (self.dim_H,) + (self.grid.d,) * len(chain)

    def size(self, chain) -> int:
        return self.dim_H * self.grid.d ** len(chain)

    @cached_property
    def offsets(self) -> dict:
        off, pos = {}, 0
        for c in self.chains:
            off[c] = pos
            pos += self.size(c)
        return off

    @cached_property
    def dim(self) -> int:
        return sum(self.size(c) for c in self.chains)

    @cached_property
    def weights(self) -> np.ndarray:
        return np.concatenate(
            [np.full(self.size(c), chain_weight(self.grid, c)) for c in self.chains]
        )

    def leg_weights(self, m: int) -> np.ndarray:
        """Weights of F (x) K^m with unweighted K legs."""
        return np.repeat(self.weights, self.grid.d ** m)

    def block(self, chain) -> slice:
        o = self.offsets[chain]
        return slice(o, o + self.size(chain))

    def positions(self, chain) -> np.ndarray:
        """Dense indices of the entry at ``chain`` as a tensor of its shape."""
        o = self.offsets[chain]
        return o + np.arange(self.size(chain)).reshape(self.shape(chain))

    def contains(self, chain) -> bool:
        return len(chain) <= self.grid.n_max

    def same_as(self, other: "FockSpace") -> bool:
        return self is other or (self.dim_H == other.dim_H and self.grid.same_as(other.grid))

    def projector_without(self, points) -> np.ndarray:
        """Diagonal projector onto chains avoiding all given points."""
        pts = set(points)
        diag = np.concatenate(
            [np.full(self.size(c), float(not pts.intersection(c))) for c in self.chains]
        )
        return np.diag(diag)

    def projector_within(self, points) -> np.ndarray:
        """Diagonal projector onto chains contained in the given points."""
        pts = set(points)
        diag = np.concatenate(
            [np.full(self.size(c), float(set(c) <= pts)) for c in self.chains]
        )
        return np.diag(diag)


@dataclass(eq=False)
class FockVector:
    """Sparse map chain -> tensor on a Fock space."""

    space: FockSpace
    entries: dict = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for c, v in self.entries.items():
            c = tuple(int(i) for i in c)
            if list(c) != sorted(set(c)):
                raise ValueError(f"chain {c} is not strictly increasing")
            if not self.space.contains(c):
                raise ValueError(f"chain {c} exceeds n_max={self.space.grid.n_max}")
            v = np.asarray(v, dtype=complex)
            if v.shape != self.space.shape(c):
                v = v.reshape(self.space.shape(c))
            clean[c] = v
        self.entries = clean

    @classmethod
    def from_dense(cls, space: FockSpace, vec) -> "FockVector":
        vec = np.asarray(vec, dtype=complex).reshape(-1)
        if vec.size != space.dim:
            raise ValueError("dense vector size does not match the space")
        ent = {}
        for c in space.chains:
            blk = vec[space.block(c)]
            if np.any(blk != 0):
                ent[c] = blk.reshape(space.shape(c))
        return cls(space, ent)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.space.dim, dtype=complex)
        for c, v in self.entries.items():
            out[self.space.block(c)] = v.reshape(-1)
        return out

    def __getitem__(self, chain):
        chain = tuple(chain)
        if chain in self.entries:
            return self.entries[chain]
        return np.zeros(self.space.shape(chain), dtype=complex)


def vacuum(space: FockSpace, h0=None) -> FockVector:
    h0 = np.ones(1) if h0 is None else np.asarray(h0, dtype=complex)
    return FockVector(space, {(): h0.reshape(space.dim_H)})


def exp_vector(space: FockSpace, k, h0=None) -> FockVector:
    """Entries h0 (x) k(x1) (x) ... (x) k(xn), truncated at n_max."""
    g = space.grid
    k = np.asarray(k, dtype=complex).reshape(g.n, g.d)
    h0 = np.ones(space.dim_H) if h0 is None else np.asarray(h0, dtype=complex).reshape(-1)
    ent = {}
    for c in space.chains:
        t = h0
        for x in c:
            t = np.multiply.outer(t, k[x])
        ent[c] = t
    return FockVector(space, ent)


def _check_space(f: FockVector, h: FockVector):
    if not f.space.same_as(h.space):
        raise ValueError("Fock vectors live on different spaces")


def inner(f: FockVector, h: FockVector) -> complex:
    _check_space(f, h)
    total = 0j
    for c in f.space.chains:
        if c in f.entries and c in h.entries:
            total += chain_weight(f.space.grid, c) * np.vdot(f.entries[c], h.entries[c])
    return complex(total)


def weight_values(space: FockSpace, p) -> np.ndarray:
    """Dense per-coordinate values of the product weight p(k) = prod p(x)."""
    p = np.asarray(p, dtype=float).reshape(-1)
    if np.any(p <= 0):
        raise ValueError("weight functions must be strictly positive")
    return np.concatenate(
        [np.full(space.size(c), float(np.prod(p[list(c)]))) for c in space.chains]
    )


def norm_weighted(f: FockVector, p=None) -> float:
    g = f.space.grid
    total = 0.0
    for c, v in f.entries.items():
        pc = 1.0 if p is None else float(np.prod(np.asarray(p, dtype=float)[list(c)]))
        total += pc * chain_weight(g, c) * float(np.vdot(v, v).real)
    return float(np.sqrt(total))


# -- annihilation and creation -------------------------------------------------

def annihilate(sigma, h: FockVector) -> dict:
    """Map upsilon -> h(upsilon + sigma) for upsilon disjoint from sigma.

    Legs of the result are ordered: upsilon legs ascending, then sigma legs
    ascending.
    """
    sigma = tuple(sorted(sigma))
    space = h.space
    out = {}
    for c in space.chains:
        if set(c) & set(sigma):
            continue
        w = chain_union(c, sigma)
        if w not in h.entries:
            continue
        out[c] = np.transpose(h.entries[w], leg_perm(w, (c, sigma)))
    return out


def create(f: dict, space: FockSpace) -> FockVector:
    """[a* f](w) = sum over theta in w of f(theta, w - theta).

    ``f`` maps ``(theta, upsilon)`` to a tensor with upsilon legs first and
    theta legs after, matching :func:`annihilate`.
    """
    acc = {}
    for (theta, ups), v in f.items():
        theta, ups = tuple(theta), tuple(ups)
        if not disjoint(theta, ups):
            continue
        w = chain_union(theta, ups)
        if not space.contains(w):
            continue
        perm = leg_perm(w, (ups, theta))
        v = np.asarray(v, dtype=complex).reshape(space.shape(ups) + (space.grid.d,) * len(theta))
        val = np.transpose(v, np.argsort(perm))
        acc[w] = acc.get(w, 0) + val
    return FockVector(space, acc)


def adjoint_pairing(f: dict, h: FockVector) -> complex:
    """sum_theta w(theta) <f(theta, .) | annihilate(theta, h)>."""
    g = h.space.grid
    total = 0j
    for (theta, ups), v in f.items():
        theta, ups = tuple(theta), tuple(ups)
        if not disjoint(theta, ups):
            continue
        ah = annihilate(theta, h)
        if ups in ah:
            total += chain_weight(g, theta) * chain_weight(g, ups) * np.vdot(
                np.asarray(v).reshape(ah[ups].shape), ah[ups]
            )
    return complex(total)


def annihilation_norm(h: FockVector, r, p) -> float:
    """Norm of (theta, upsilon) -> h(theta + upsilon) with weights 1/r(theta), p(upsilon)."""
    g = h.space.grid
    r = np.asarray(r, dtype=float)
    p = np.asarray(p, dtype=float)
    total = 0.0
    for w, v in h.entries.items():
        nv = float(np.vdot(v, v).real) * chain_weight(g, w)
        for theta in subchains(w):
            ups = chain_minus(w, theta)
            total += nv * np.prod(1.0 / r[list(theta)]) * np.prod(p[list(ups)])
    return float(np.sqrt(total))


def sum_integral_sides(grid: Grid, f) -> tuple:
    """Both sides of the sum-integral identity for a two-chain function f.

    ``f`` is a dict ``(theta, upsilon) -> value`` (missing pairs are zero) or
    a callable.  Returns ``(sum_w w(w) sum_{theta in w} f(theta, w - theta),
    sum_{theta, upsilon disjoint} w(theta) w(upsilon) f(theta, upsilon))``.
    """
    get = f if callable(f) else (lambda a, b: f.get((a, b), 0.0))
    lhs = 0.0
    for w in grid.chains:
        inner_sum = 0.0
        for theta in subchains(w):
            inner_sum = inner_sum + get(theta, chain_minus(w, theta))
        lhs = lhs + chain_weight(grid, w) * inner_sum
    rhs = 0.0
    for theta in grid.chains:
        rest = chain_minus(tuple(range(grid.n)), theta)
        for ups in all_chains(rest, grid.n_max - len(theta)):
            rhs = rhs + chain_weight(grid, theta) * chain_weight(grid, ups) * get(theta, ups)
    return lhs, rhs


def sum_integral_check(grid: Grid, f) -> float:
    lhs, rhs = sum_integral_sides(grid, f)
    return float(np.max(np.abs(np.asarray(lhs) - np.asarray(rhs))))


# -- dense integrator matrices -------------------------------------------------

def annihilator_matrix(space: FockSpace, sigma) -> np.ndarray:
    """Dense A_sigma : F -> F (x) K^|sigma|, h -> h(. + sigma)."""
    sigma = tuple(sorted(sigma))
    m = len(sigma)
    dm = space.grid.d ** m
    A = np.zeros((space.dim * dm, space.dim))
    for c in space.chains:
        if set(c) & set(sigma):
            continue
        w = chain_union(c, sigma)
        if not space.contains(w):
            continue
        src = np.transpose(space.positions(w), leg_perm(w, (c, sigma))).reshape(-1)
        rows = space.offsets[c] * dm + np.arange(src.size)
        A[rows, src] = 1.0
    return A


def creator_matrix(space: FockSpace, sigma) -> np.ndarray:
    """Dense C_sigma : F (x) K^|sigma| -> F, (C g)(k) = g(k - sigma) for sigma in k."""
    return annihilator_matrix(space, sigma).T


def weighted_adjoint(M: np.ndarray, w_in: np.ndarray, w_out: np.ndarray) -> np.ndarray:
    """Adjoint of M: (C^n, w_in) -> (C^m, w_out) for weighted inner products."""
    return (M.conj().T * w_out[None, :]) / w_in[:, None]


def kron_eye_right(M: np.ndarray, k: int) -> np.ndarray:
    """M (x) I_k acting on the trailing leg index."""
    return np.kron(M, np.eye(k)) if k > 1 else M
