"""Finite-dimensional Ito *-algebras given by structure constants.

An algebra of dimension ``n`` is stored as a complex tensor ``c[j, i, k]``
such that ``e_i e_k = sum_j c[j, i, k] e_j``.  Basis index 0 is the time
differential ``d_t``; every basis element is self-adjoint, so the involution
is coefficient conjugation and ``l(a)`` is the coefficient of ``d_t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_PSD_TOL = 1e-9
RANK_CUTOFF = 1e-10


@dataclass(frozen=True, eq=False)
class ItoAlgebra:
    """Structure-constant description of an Ito algebra."""

    c: np.ndarray
    names: tuple[str, ...]
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        c = np.array(self.c, dtype=complex)
        if c.ndim != 3 or not (c.shape[0] == c.shape[1] == c.shape[2]):
            raise ValueError(f"structure tensor must be cubic, got shape {c.shape}")
        if c.shape[0] < 1:
            raise ValueError("algebra dimension must be positive")
        if len(self.names) != c.shape[0]:
            raise ValueError("number of basis names must equal the dimension")
        c.setflags(write=False)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def dim(self) -> int:
        return self.c.shape[0]

    def element(self, coeffs) -> "AlgebraElement":
        return AlgebraElement(np.asarray(coeffs, dtype=complex), self)

    def basis(self, i: int) -> "AlgebraElement":
        v = np.zeros(self.dim, dtype=complex)
        v[i] = 1.0
        return AlgebraElement(v, self)

    def zero(self) -> "AlgebraElement":
        return AlgebraElement(np.zeros(self.dim, dtype=complex), self)

    def same_as(self, other: "ItoAlgebra") -> bool:
        return self is other or (
            self.dim == other.dim and np.array_equal(self.c, other.c)
        )


@dataclass(frozen=True, eq=False)
class AlgebraElement:
    """Element ``sum_j coeffs[j] e_j`` of a parent algebra."""

    coeffs: np.ndarray
    parent: ItoAlgebra

    def __post_init__(self):
        v = np.array(self.coeffs, dtype=complex).reshape(-1)
        if v.shape[0] != self.parent.dim:
            raise ValueError(
                f"coefficient length {v.shape[0]} != algebra dimension {self.parent.dim}"
            )
        v.setflags(write=False)
        object.__setattr__(self, "coeffs", v)

    def __add__(self, other):
        _check_parent(self, other)
        return AlgebraElement(self.coeffs + other.coeffs, self.parent)

    def __sub__(self, other):
        _check_parent(self, other)
        return AlgebraElement(self.coeffs - other.coeffs, self.parent)

    def __neg__(self):
        return AlgebraElement(-self.coeffs, self.parent)

    def __mul__(self, scalar):
        return AlgebraElement(complex(scalar) * self.coeffs, self.parent)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return mul(self, other)

    def allclose(self, other, atol=1e-12) -> bool:
        return np.allclose(self.coeffs, other.coeffs, atol=atol, rtol=0)

    def __repr__(self):
        terms = [
            f"({v.real:+.6g}{v.imag:+.6g}j)*{n}"
            for v, n in zip(self.coeffs, self.parent.names)
            if v != 0
        ]
        return "AlgebraElement(" + (" ".join(terms) or "0") + ")"


def _check_parent(a: AlgebraElement, b: AlgebraElement):
    if not a.parent.same_as(b.parent):
        raise ValueError("elements belong to different algebras")


# -- presets -----------------------------------------------------------------

def hp_vacuum() -> ItoAlgebra:
    """Vacuum Hudson-Parthasarathy algebra on (d_t, M1, M2, M3)."""
    c = np.zeros((4, 4, 4), dtype=complex)
    c[0, 1:3, 1:3] = [[1, -1j], [1j, 1]]
    c[1, 1:, 1:] = 0.5 * np.array([[0, 0, 1], [0, 0, 1j], [1, -1j, 0]])
    c[2, 1:, 1:] = 0.5 * np.array([[0, 0, -1j], [0, 0, 1], [1j, 1, 0]])
    c[3, 3, 3] = 1.0
    return ItoAlgebra(c, ("dt", "M1", "M2", "M3"), {"kind": "hp_vacuum"})


def wiener() -> ItoAlgebra:
    """One-dimensional Wiener algebra: e*e = d_t."""
    c = np.zeros((2, 2, 2), dtype=complex)
    c[0, 1, 1] = 1.0
    return ItoAlgebra(c, ("dt", "e"), {"kind": "wiener"})


def poisson(lam: float) -> ItoAlgebra:
    """One-dimensional Poisson algebra of intensity lam: e*e = lam d_t + e."""
    lam = float(lam)
    if not np.isfinite(lam) or lam < 0:
        raise ValueError(f"Poisson intensity must be a nonnegative real, got {lam}")
    c = np.zeros((2, 2, 2), dtype=complex)
    c[0, 1, 1] = lam
    c[1, 1, 1] = 1.0
    return ItoAlgebra(c, ("dt", "e"), {"kind": "poisson", "lambda": lam})


def hp_basis_differentials(alg: ItoAlgebra) -> dict[str, AlgebraElement]:
    """Return dA-, dA+, dN, dt expressed in the self-adjoint HP basis."""
    e = [alg.basis(i) for i in range(alg.dim)]
    return {
        "dt": e[0],
        "dA-": 0.5 * (e[1] - 1j * e[2]),
        "dA+": 0.5 * (e[1] + 1j * e[2]),
        "dN": e[3],
    }


# -- arithmetic --------------------------------------------------------------

def mul(a: AlgebraElement, b: AlgebraElement) -> AlgebraElement:
    _check_parent(a, b)
    out = np.einsum("i,jik,k->j", a.coeffs, a.parent.c, b.coeffs)
    return AlgebraElement(out, a.parent)


def star(a: AlgebraElement) -> AlgebraElement:
    return AlgebraElement(np.conj(a.coeffs), a.parent)


def l_value(a: AlgebraElement) -> complex:
    return complex(a.coeffs[0])


def monoid_mul(a: AlgebraElement, b: AlgebraElement) -> AlgebraElement:
    """Unitalized product (u + a)(u + b) - u with the unit u represented by 0."""
    return a + b + mul(a, b)


def star_comp(a: AlgebraElement, b: AlgebraElement) -> AlgebraElement:
    """Hermitian operation a + b* + a b*."""
    bs = star(b)
    return a + bs + mul(a, bs)


# -- validation --------------------------------------------------------------

@dataclass
class CheckResult:
    name: str
    passed: bool
    violation: float
    tolerance: float


@dataclass
class ValidationReport:
    checks: list[CheckResult]
    ideal_rank: int
    ideal_trivial: bool

    @property
    def passed(self) -> bool:
        return all(ch.passed for ch in self.checks)

    def violation(self, name: str) -> float:
        for ch in self.checks:
            if ch.name == name:
                return ch.violation
        raise KeyError(name)


def _max_abs(x) -> float:
    x = np.asarray(x)
    return float(np.max(np.abs(x))) if x.size else 0.0


def hermitianity_violation(c: np.ndarray) -> float:
    return _max_abs(c - np.conj(np.swapaxes(c, 1, 2)))


def associativity_violation(c: np.ndarray) -> float:
    # e_n (e_k e_m) against (e_n e_k) e_m, component i
    left = np.einsum("inj,jkm->inkm", c, c)
    right = np.einsum("jnk,ijm->inkm", c, c)
    return _max_abs(left - right)


def degeneracy_violation(c: np.ndarray) -> float:
    return max(_max_abs(c[:, 0, :]), _max_abs(c[:, :, 0]))


def ideal_rank(alg: ItoAlgebra) -> int:
    """Rank of a -> (l(b a c))_{b,c} with b, c over the unit and the basis.

    The kernel of this map is the largest two-sided ideal annihilated by l;
    it is trivial exactly when the rank equals the dimension.
    """
    n = alg.dim
    c = alg.c
    # left multiplication by e_b and right multiplication by e_c as matrices
    left = [np.eye(n, dtype=complex)] + [c[:, b, :] for b in range(n)]
    right = [np.eye(n, dtype=complex)] + [c[:, :, k] for k in range(n)]
    rows = []
    for lb in left:
        for rc in right:
            # l(e_b a e_c) = (lb @ rc @ a)[0]
            rows.append((lb @ rc)[0])
    m = np.array(rows)
    s = np.linalg.svd(m, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > RANK_CUTOFF * s[0]))


def validate(alg: ItoAlgebra, tol: float = 1e-14) -> ValidationReport:
    c = alg.c
    checks = []
    for name, fn in (
        ("hermitianity", hermitianity_violation),
        ("associativity", associativity_violation),
        ("degeneracy", degeneracy_violation),
    ):
        v = fn(c)
        checks.append(CheckResult(name, v <= tol, v, tol))
    r = ideal_rank(alg)
    return ValidationReport(checks, r, r == alg.dim)


def conditional_positivity_check(
    alg: ItoAlgebra, sample, tol: float = DEFAULT_PSD_TOL
) -> tuple[bool, float]:
    """Check sum kappa_a l(a * c) conj(kappa_c) >= 0 whenever sum kappa = 0.

    The unit (zero element) is adjoined to the sample when absent.  Returns
    ``(passed, min_eigenvalue)`` of the form restricted to the zero-sum
    subspace.
    """
    elems = list(sample)
    if not any(np.all(a.coeffs == 0) for a in elems):
        elems = [alg.zero()] + elems
    m = len(elems)
    if m < 2:
        return True, 0.0
    L = np.empty((m, m), dtype=complex)
    for ia, a in enumerate(elems):
        for ic, b in enumerate(elems):
            L[ia, ic] = l_value(star_comp(a, b))
    # orthonormal basis of the complement of the all-ones vector
    q, _ = np.linalg.qr(np.column_stack([np.ones(m), np.eye(m)[:, : m - 1]]))
    basis = q[:, 1:]
    proj = basis.T @ L @ basis
    proj = 0.5 * (proj + proj.conj().T)
    lam_min = float(np.min(np.linalg.eigvalsh(proj)))
    return lam_min >= -tol, lam_min
