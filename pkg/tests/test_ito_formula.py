import numpy as np
import pytest

from qsc.chain_fock import FockSpace, Grid
from qsc.ito_algebra import ItoAlgebra, hp_vacuum, poisson, wiener
from qsc.ito_formula import (
    GERM_SLOTS,
    germ_dagger,
    germ_identity_residual,
    germ_mul,
    germs,
    germs_of_operator,
    identity_germ,
    ito_check_adapted,
    ito_check_strong,
    ito_check_weak,
    functional_ito_direct,
    functional_ito_poly,
    kernel_germs,
)
from qsc.kernel_calc import identity_kernel
from qsc.qs_integral import (
    CountingIntegrand,
    IntegrandQuadruple,
    counting_integral,
    qs_derivatives,
    table_from_counting,
)

from helpers import EMPTY, adapted_counting, crandn, random_counting, random_kernel

CASES = [(1, 2), (2, 1)]


def grid_for(d):
    return Grid([0.0, 1.0, 2.0], [0.3, 0.5, 0.2], d=d)


def random_germ(rng, space, x, scale=1.0):
    return germs_of_operator(space, crandn(rng, (space.dim, space.dim), scale), x)


def test_constant_process_has_equal_germs():
    rng = np.random.default_rng(0)
    K = random_kernel(rng, grid_for(1), 2)
    proc = lambda t: K  # noqa: E731
    for x in range(3):
        T, G = germs(proc, x)
        assert G.distance(T) == 0
    r = ito_check_strong(proc, np.inf)
    assert r.residual == 0 and r.lhs_norm == 0


def test_germ_algebra():
    rng = np.random.default_rng(1)
    space = FockSpace(grid_for(2), 1)
    x = 1
    A, B = random_germ(rng, space, x), random_germ(rng, space, x)
    I = identity_germ(space, x)
    assert germ_mul(A, I).distance(A) <= 1e-14 and germ_mul(I, A).distance(A) <= 1e-14
    assert germ_dagger(germ_dagger(A)).distance(A) <= 1e-14
    lhs = germ_dagger(germ_mul(A, B))
    rhs = germ_mul(germ_dagger(B), germ_dagger(A))
    scale = max(1.0, float(np.max(np.abs(lhs.corner))))
    assert lhs.distance(rhs) <= 1e-13 * scale
    # germ product matches the operator product
    assert np.max(np.abs(germ_mul(A, B).operator() - A.operator() @ B.operator())) <= 1e-12


@pytest.mark.parametrize("d,dim_H", CASES)
def test_germ_consistency_with_derivatives(d, dim_H):
    rng = np.random.default_rng(2 + d)
    g = grid_for(d)
    M = random_counting(rng, g, dim_H, entries=14)
    proc = lambda t: counting_integral(M, t)  # noqa: E731
    B = table_from_counting(M)
    for x in range(3):
        T, G = germs(proc, x)
        qd = qs_derivatives(B, x)
        for slot in GERM_SLOTS:
            assert np.max(np.abs((getattr(G, slot) - getattr(T, slot)) - qd[slot])) <= 1e-12
        assert germ_identity_residual(T, G) <= 1e-13 * max(1.0, np.max(np.abs(G.corner)) ** 2)


def test_single_point_germs_by_hand():
    g = Grid([0.0, 1.0], [0.4, 0.6])
    b = 0.3 - 0.5j
    # M puts a creation at point 0 into the kernel
    M = CountingIntegrand(g, 1, {(((), (), (0,), ()), EMPTY): [[b]], (EMPTY, EMPTY): [[1.0]]})
    proc = lambda t: counting_integral(M, t)  # noqa: E731
    T, G = germs(proc, 0)
    D = G - T
    space = FockSpace(g)
    # only the creation germ of the difference carries b, acting on the vacuum part of F
    assert np.all(D.pm == 0) and np.all(D.cm == 0) and np.all(D.cc == 0)
    expected = np.zeros((space.dim, space.dim), dtype=complex)
    expected[0, 0] = b
    assert np.allclose(D.pc, expected)


@pytest.mark.parametrize("d,dim_H", CASES)
def test_strong_ito_non_adapted(d, dim_H):
    rng = np.random.default_rng(4 + d)
    g = grid_for(d)
    for _ in range(3):
        M = random_counting(rng, g, dim_H, entries=14)
        proc = lambda t, M=M: counting_integral(M, t)  # noqa: E731
        for t in (1.5, np.inf):
            for order in ("TTdag", "TdagT"):
                r = ito_check_strong(proc, t, order)
                assert r.residual <= 1e-11
                assert r.corner_defect <= 1e-11
                assert r.lhs_norm > 0


@pytest.mark.parametrize("d,dim_H", CASES)
def test_strong_and_adapted_on_adapted_process(d, dim_H):
    rng = np.random.default_rng(6 + d)
    g = grid_for(d)
    M = adapted_counting(rng, g, dim_H)
    proc = lambda t: counting_integral(M, t)  # noqa: E731
    assert ito_check_strong(proc, np.inf).residual <= 1e-11
    r = ito_check_adapted(proc, np.inf)
    assert r.residual <= 1e-11 and r.adaptedness_defect == 0
    # in the adapted case the exchange germ is T (x) I and the mixed germs vanish
    for x in range(3):
        T, _ = germs(proc, x)
        assert r.germ_defect <= 1e-12


def test_adapted_vacuum_process():
    g = grid_for(1)
    I = identity_kernel(g, 2)
    r = ito_check_adapted(lambda t: I, np.inf)
    assert r.residual == 0 and r.adaptedness_defect == 0


def test_adaptedness_detector():
    rng = np.random.default_rng(8)
    g = grid_for(1)
    M = random_counting(rng, g, 1, entries=14)
    r = ito_check_adapted(lambda t: counting_integral(M, t), np.inf, tol=np.inf)
    assert r.adaptedness_defect > 1e-3


def test_adapted_exponential_process():
    from qsc.qsde_solver import GeneratorS, chrono_product, exp_generator, random_hamiltonian

    rng = np.random.default_rng(9)
    g = grid_for(1)
    S = GeneratorS(g, tuple(exp_generator(**random_hamiltonian(rng, 2, 1, 0.6), weight=g.weights[x])
                           for x in range(3)))
    proc = lambda t: chrono_product(None, S, t)  # noqa: E731
    r = ito_check_adapted(proc, np.inf)
    assert r.adaptedness_defect <= 1e-12
    assert r.residual <= 1e-11


@pytest.mark.parametrize("d,dim_H", CASES)
def test_weak_ito(d, dim_H):
    rng = np.random.default_rng(10 + d)
    space = FockSpace(grid_for(d), dim_H)
    zero = IntegrandQuadruple(space)
    T0 = crandn(rng, (space.dim, space.dim), 0.3)
    h = crandn(rng, space.dim, 0.5)
    assert ito_check_weak(zero, T0, h, np.inf).residual == 0
    for _ in range(5):
        D = IntegrandQuadruple(space)
        for x in range(3):
            for slot in ("pm", "cm", "pc", "cc"):
                getattr(D, slot)[x] = crandn(rng, D.shape(slot), 0.3)
        r = ito_check_weak(D, T0, h, np.inf)
        assert r.residual <= 1e-11
        assert r.annihilation_residual <= 1e-12


def test_weak_ito_scalar_wiener_case():
    rng = np.random.default_rng(12)
    space = FockSpace(grid_for(1))
    D = IntegrandQuadruple(space)
    for x in range(3):
        Dx = crandn(rng, (space.dim, space.dim), 0.4)
        D.cm[x] = Dx
        D.pc[x] = Dx
    r = ito_check_weak(D, np.eye(space.dim), crandn(rng, space.dim), np.inf)
    assert r.residual <= 1e-11


def test_strong_weak_consistency():
    rng = np.random.default_rng(13)
    g = grid_for(1)
    space = FockSpace(g, 2)
    M = random_counting(rng, g, 2, entries=14)
    proc = lambda t: counting_integral(M, t)  # noqa: E731
    from qsc.kernel_calc import epsilon_matrix, fock_adjoint

    T0, Tt = epsilon_matrix(proc(0.0)), epsilon_matrix(proc(np.inf))
    h = crandn(rng, space.dim)
    W = space.weights
    strong = fock_adjoint(space, Tt) @ Tt - fock_adjoint(space, T0) @ T0
    weak = np.vdot(Tt @ h, W * (Tt @ h)).real - np.vdot(T0 @ h, W * (T0 @ h)).real
    assert abs(np.vdot(h, W * (strong @ h)).real - weak) <= 1e-11


@pytest.mark.parametrize("alg", [hp_vacuum(), wiener(), poisson(1.3)], ids=["hp", "wiener", "poisson"])
def test_functional_ito_recursion_vs_direct(alg):
    rng = np.random.default_rng(14)
    X = crandn(rng, (2, 2))
    D = crandn(rng, (alg.dim, 2, 2))
    assert np.array_equal(functional_ito_poly(X, D, alg, 1), D)
    for m in range(1, 5):
        P = functional_ito_poly(X, D, alg, m)
        Q = functional_ito_direct(X, D, alg, m)
        assert np.max(np.abs(P - Q)) <= 1e-12 * max(1.0, np.max(np.abs(Q)))


def test_functional_ito_nilpotent_case():
    alg = ItoAlgebra(np.zeros((1, 1, 1), dtype=complex), ("dt",))
    rng = np.random.default_rng(15)
    X, D = crandn(rng, (3, 3)), crandn(rng, (1, 3, 3))
    for m in range(1, 5):
        mp = np.linalg.matrix_power
        expected = sum(mp(X, m - n) @ D[0] @ mp(X, n - 1) for n in range(1, m + 1))
        assert np.max(np.abs(functional_ito_poly(X, D, alg, m)[0] - expected)) <= 1e-12 * np.max(np.abs(expected))


def test_kernel_germs_reassemble_operator():
    rng = np.random.default_rng(16)
    g = grid_for(2)
    K = random_kernel(rng, g, 1, entries=10)
    from qsc.kernel_calc import epsilon_matrix

    for x in range(3):
        G = kernel_germs(K, x)
        assert np.max(np.abs(G.operator() - epsilon_matrix(K))) <= 1e-12
