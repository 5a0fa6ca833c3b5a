import numpy as np
import pytest

from qsc.chain_fock import FockSpace, FockVector, Grid, exp_vector, vacuum
from qsc.kernel_calc import KernelTable, epsilon_matrix, fock_adjoint, table_distance
from qsc.qs_integral import (
    ATOMIC_SLOTS,
    CountingIntegrand,
    IntegrandQuadruple,
    TableIntegrand,
    atomic_key,
    atomic_table,
    counting_integral,
    lambda_measure,
    multiple_integral,
    multiple_integral_matrix,
    norm_estimates,
    qs_derivatives,
    reconstruction_residual,
    single_integral,
    single_integral_matrix,
    table_from_counting,
    table_star,
)

from helpers import EMPTY, crandn, random_counting, random_key

GRID = Grid([0.0, 1.0, 2.0], [0.3, 0.5, 0.2])


def random_table(rng, space, entries=8, scale=1.0):
    shell = TableIntegrand(space)
    ent = {}
    for _ in range(entries):
        key = random_key(rng, space.grid)
        ent[key] = crandn(rng, shell.shape(key), scale)
    return TableIntegrand(space, ent)


def random_quadruple(rng, space, scale=1.0):
    D = IntegrandQuadruple(space)
    for x in range(space.grid.n):
        for slot in ATOMIC_SLOTS:
            getattr(D, slot)[x] = crandn(rng, D.shape(slot), scale)
    return D


def test_lambda_measures():
    space = FockSpace(Grid([0.0, 1.0], [0.4, 0.7]))
    k = np.array([0.5 + 1j, -2.0])
    D = IntegrandQuadruple(space)
    for x in range(2):
        D.pc[x] = k[x] * np.eye(space.dim)
        D.cm[x] = np.ones((space.dim, space.dim))
        D.pm[x] = 3.0 * np.eye(space.dim)
    v = vacuum(space)
    created = lambda_measure("creation", D, [0, 1], v)
    first_order = exp_vector(space, k)
    for x in range(2):
        assert created[(x,)][0] == first_order[(x,)][0]
    assert np.all(created[()] == 0) and np.all(created[(0, 1)] == 0)
    assert np.all(lambda_measure("annihilation", D, [0, 1], v).to_dense() == 0)
    h = FockVector(space, {c: [1.0 + len(c)] for c in space.chains})
    pres = lambda_measure("preservation", D, [0, 1], h)
    assert np.allclose(pres.to_dense(), 3.0 * (0.4 + 0.7) * h.to_dense())
    with pytest.raises(ValueError):
        lambda_measure("bogus", D, [0], h)


def test_single_integral_zero_and_wiener():
    space = FockSpace(GRID)
    zero = IntegrandQuadruple(space)
    h = FockVector(space, {c: [1.0] for c in space.chains})
    assert np.all(single_integral(zero, np.inf, h).to_dense() == 0)
    W = IntegrandQuadruple(space)
    for x in range(3):
        W.cm[x] = np.eye(space.dim)
        W.pc[x] = np.eye(space.dim)
    M = single_integral_matrix(W, np.inf)
    assert np.max(np.abs(fock_adjoint(space, M) - M)) <= 1e-15


@pytest.mark.parametrize("d,dim_H", [(1, 2), (2, 1)])
def test_atomic_tables_reduce_to_single_integral(d, dim_H):
    rng = np.random.default_rng(d)
    space = FockSpace(Grid([0.0, 1.0, 2.0], [0.3, 0.5, 0.2], d=d), dim_H)
    D = random_quadruple(rng, space)
    for t in (0.5, 1.5, np.inf):
        err = np.max(np.abs(single_integral_matrix(D, t) - multiple_integral_matrix(atomic_table(D), t)))
        assert err <= 1e-13


def test_empty_table_is_initial_operator():
    rng = np.random.default_rng(0)
    space = FockSpace(GRID, 2)
    T0 = crandn(rng, (space.dim, space.dim))
    B = TableIntegrand(space, {EMPTY: T0})
    h = FockVector(space, {c: crandn(rng, space.shape(c)) for c in space.chains})
    assert np.allclose(multiple_integral(B, 1.5, h).to_dense(), T0 @ h.to_dense())


def test_vacuum_adapted_table_reproduces_epsilon():
    rng = np.random.default_rng(1)
    g = Grid([0.0, 1.0, 2.0], [0.3, 0.5, 0.2], d=2)
    space = FockSpace(g, 2)
    from helpers import random_kernel

    K = random_kernel(rng, g, 2, entries=12)
    ent = {}
    for key, blk in K.entries.items():
        shape = TableIntegrand(space).shape(key)
        B = np.zeros(shape, dtype=complex)
        B[: blk.shape[0], : blk.shape[1]] = blk  # only the vacuum component of F carries K
        ent[key] = B
    T = TableIntegrand(space, ent)
    assert np.max(np.abs(multiple_integral_matrix(T, np.inf) - epsilon_matrix(K))) <= 1e-13


@pytest.mark.parametrize("d,dim_H", [(1, 1), (1, 2), (2, 1)])
def test_adjoint_rule_and_reconstruction(d, dim_H):
    rng = np.random.default_rng(10 + d + dim_H)
    space = FockSpace(Grid([0.0, 1.0, 2.0], [0.3, 0.5, 0.2], d=d), dim_H)
    for _ in range(10):
        B = random_table(rng, space)
        for t in (1.5, np.inf):
            M = multiple_integral_matrix(B, t)
            assert np.max(np.abs(multiple_integral_matrix(table_star(B), t) - fock_adjoint(space, M))) <= 1e-12
            assert reconstruction_residual(B, t) <= 1e-12


def test_atomic_derivatives():
    rng = np.random.default_rng(2)
    space = FockSpace(GRID)
    x = 1
    for slot in ATOMIC_SLOTS:
        key = atomic_key(x, slot)
        val = crandn(rng, TableIntegrand(space).shape(key))
        D = qs_derivatives(TableIntegrand(space, {key: val}), x)
        for other, mat in D.items():
            if other == slot:
                assert np.array_equal(mat, val)
            else:
                assert np.all(mat == 0)


def test_counting_integral_examples():
    rng = np.random.default_rng(3)
    g = GRID
    M = random_counting(rng, g, 1, entries=15)
    early = counting_integral(M, -1.0)
    expected = {}
    for (th, up), v in M.entries.items():
        if th == EMPTY:
            expected[up] = expected.get(up, 0) + v
    assert table_distance(early, KernelTable(g, 1, expected)) == 0
    # atomic integrand: nu sums single-point insertions
    at = {}
    for x in range(3):
        th = ((), (), (), (x,))
        at[(th, EMPTY)] = [[float(x + 1)]]
    A = CountingIntegrand(g, 1, at)
    nu = counting_integral(A, np.inf)
    assert set(nu.entries) == {((), (), (), (x,)) for x in range(3)}
    assert [nu.entries[((), (), (), (x,))][0, 0] for x in range(3)] == [1.0, 2.0, 3.0]


@pytest.mark.parametrize("d,dim_H", [(1, 1), (1, 2), (2, 1)])
def test_intertwining(d, dim_H):
    rng = np.random.default_rng(20 + d + dim_H)
    g = Grid([0.0, 1.0, 2.0], [0.3, 0.5, 0.2], d=d)
    for _ in range(5):
        M = random_counting(rng, g, dim_H, entries=12)
        B = table_from_counting(M)
        for t in (0.0, 0.5, 1.5, 2.5):
            err = np.max(np.abs(epsilon_matrix(counting_integral(M, t)) - multiple_integral_matrix(B, t)))
            assert err <= 1e-12


def test_norm_estimates():
    rng = np.random.default_rng(4)
    space = FockSpace(GRID, 2)
    p, r, s = np.ones(3), 2 * np.ones(3), 2 * np.ones(3)
    zero = norm_estimates(TableIntegrand(space), p, r, s, np.inf)
    assert zero["bound"] == 0 and zero["measured"] == 0
    for _ in range(20):
        B = random_table(rng, space)
        pr = rng.uniform(0.5, 2, size=3)
        rr = rng.uniform(0.5, 2, size=3)
        ss = rng.uniform(0.5, 2, size=3)
        est = norm_estimates(B, pr, rr, ss, np.inf)
        assert est["holds"], est
    B = random_table(rng, space)
    B2 = TableIntegrand(space, {k: 3 * v for k, v in B.entries.items()})
    e1, e2 = norm_estimates(B, p, r, s, np.inf), norm_estimates(B2, p, r, s, np.inf)
    assert e2["bound"] == pytest.approx(3 * e1["bound"], rel=1e-13)
    assert e2["measured"] == pytest.approx(3 * e1["measured"], rel=1e-12)


def test_table_rejects_overlapping_chains():
    with pytest.raises(ValueError):
        TableIntegrand(FockSpace(GRID), {((0,), (0,), (), ()): np.zeros((8, 8))})
