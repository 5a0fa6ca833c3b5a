import numpy as np
import pytest

from qsc.gns_rep import (
    Quadruple,
    TriangularOp,
    corner_identity_residual,
    gaussian_state_rep,
    gns_construct,
    gram_of_k,
    metric,
    normal_order_factor,
    op_distance,
    poisson_state_rep,
    pseudo_adjoint,
    quadruple_distance,
    quadruple_mul,
    reduce_to_canonical,
    tri_mul,
    verify_cocycles,
)
from qsc.ito_algebra import ItoAlgebra, hp_basis_differentials, hp_vacuum, l_value, monoid_mul, poisson, wiener

from helpers import crandn


def rand_tri(rng, m):
    return TriangularOp(complex(*rng.normal(size=2)), crandn(rng, m), crandn(rng, m), crandn(rng, (m, m)))


def hp_sample(rng, extra=4):
    hp = hp_vacuum()
    dd = hp_basis_differentials(hp)
    base = [dd["dA-"], dd["dA+"], dd["dN"], dd["dt"]]
    return hp, base + [hp.element(crandn(rng, 4, 0.5)) for _ in range(extra)]


def test_wiener_rep():
    w = wiener()
    e = w.basis(1)
    rep = gns_construct(w, [w.zero(), e])
    assert rep.dim_K == 1
    T = rep.op(e)
    # the GNS basis vector is fixed up to a phase
    phase = T.k_col[0]
    assert abs(abs(phase) - 1) < 1e-14
    assert np.allclose(T.to_matrix(), [[1, np.conj(phase), 0], [0, 1, phase], [0, 0, 1]], atol=1e-14)
    assert abs(tri_mul(T, T).l - 1) < 1e-14


def test_unit_maps_to_identity():
    rng = np.random.default_rng(0)
    hp, sample = hp_sample(rng)
    rep = gns_construct(hp, sample)
    assert op_distance(rep.op(hp.zero()), TriangularOp.identity(rep.dim_K)) == 0.0


@pytest.mark.parametrize("which", ["wiener", "hp", "poisson"])
def test_cocycles_homomorphism_and_star(which):
    rng = np.random.default_rng(1)
    if which == "hp":
        alg, sample = hp_sample(rng)
    else:
        alg = wiener() if which == "wiener" else poisson(1.5)
        e = alg.basis(1)
        sample = [e, 2 * e, 1j * e, alg.element([0.3, -0.7])]
    rep = gns_construct(alg, sample)
    elems = [alg.zero()] + sample
    for a in elems:
        assert corner_identity_residual(rep, a) <= 1e-12
        assert abs(rep.op(a).l - l_value(a)) <= 1e-12
        for b in elems:
            r = verify_cocycles(rep, a, b)
            assert r.homomorphism <= 1e-10
            assert max(r.j_k, r.kstar_j, r.pairing) <= 1e-10
            assert r.star_property <= 1e-12
    lam = np.linalg.eigvalsh(gram_of_k(rep, sample))
    assert lam.min() >= -1e-10


def test_hp_corner_equals_l():
    hp = hp_vacuum()
    sample = [hp.basis(i) for i in range(4)]
    rep = gns_construct(hp, sample)
    for b in sample:
        assert abs(rep.op(b).l - l_value(b)) <= 1e-12


def test_zero_pseudo_norm_vector():
    rng = np.random.default_rng(2)
    hp, sample = hp_sample(rng)
    rep = gns_construct(hp, sample)
    e = rep.e_vector
    assert e.conj() @ metric(rep.dim_K) @ e == 0


def test_wiener_cocycle_pair():
    w = wiener()
    e = w.basis(1)
    rep = gns_construct(w, [e])
    Te = rep.op(e)
    assert abs(Te.k_row @ Te.k_col - (l_value(monoid_mul(e, e)) - 0 - 0)) < 1e-14
    assert l_value(monoid_mul(e, e)) == 1


def test_negative_form_rejected():
    c = np.zeros((2, 2, 2), dtype=complex)
    c[0, 1, 1] = -1.0
    alg = ItoAlgebra(c, ("dt", "e"))
    with pytest.raises(ValueError, match="not conditionally positive"):
        gns_construct(alg, [alg.basis(1)])


def test_pseudo_adjoint_examples():
    I = TriangularOp.identity(2)
    assert op_distance(pseudo_adjoint(I), I) == 0
    T = TriangularOp(1j, [1.0], [0.0], [[1.0]])
    Ts = pseudo_adjoint(T)
    assert Ts.l == -1j and Ts.k_row[0] == 0 and Ts.k_col[0] == 1 and Ts.j_block[0, 0] == 1
    rng = np.random.default_rng(3)
    R = rand_tri(rng, 3)
    assert op_distance(pseudo_adjoint(pseudo_adjoint(R)), R) == 0
    # the pseudo-adjoint is the metric adjoint of the matrix
    g = metric(3)
    assert np.max(np.abs(pseudo_adjoint(R).to_matrix() - g @ R.to_matrix().conj().T @ g)) == 0


def test_tri_mul_examples():
    rng = np.random.default_rng(4)
    A, B = rand_tri(rng, 2), rand_tri(rng, 2)
    assert op_distance(tri_mul(A, TriangularOp.identity(2)), A) == 0
    assert abs(tri_mul(A, B).l - (B.l + A.k_row @ B.k_col + A.l)) < 1e-15
    assert np.allclose(tri_mul(A, B).to_matrix(), A.to_matrix() @ B.to_matrix(), atol=1e-14)


def test_normal_order_factor():
    for f in normal_order_factor(TriangularOp.identity(2)):
        assert op_distance(f, TriangularOp.identity(2)) == 0
    w = wiener()
    rep = gns_construct(w, [w.basis(1)])
    corner, column, diag, row = normal_order_factor(rep.op(w.basis(1)))
    assert corner.l == 0 and abs(abs(column.k_col[0]) - 1) < 1e-14 and diag.j_block[0, 0] == 1
    assert abs(abs(row.k_row[0]) - 1) < 1e-14
    rng = np.random.default_rng(5)
    G = rand_tri(rng, 3)
    P = TriangularOp.identity(3)
    for f in normal_order_factor(G):
        P = tri_mul(P, f)
    assert op_distance(P, G) <= 1e-15


def test_reduction_to_canonical():
    rng = np.random.default_rng(6)
    U, _ = np.linalg.qr(crandn(rng, (2, 2)))
    e_o = crandn(rng, 2)
    e_p = -0.5 * np.vdot(e_o, e_o).real + 0.7j
    Js = [rand_tri(rng, 2).to_matrix() for _ in range(3)]
    rep = reduce_to_canonical(Js, U, np.concatenate([[1.0], e_o, [e_p]]))
    assert rep.isometry_residual <= 1e-12
    assert rep.vector_residual <= 1e-12
    # canonical input with U = I and the trivial covector is left alone
    T = rand_tri(rng, 2)
    triv = reduce_to_canonical([T.to_matrix()], -np.eye(2), [1.0, 0.0, 0.0, 0.0])
    assert triv.isometry_residual == 0
    assert op_distance(triv.canonical[0], T) <= 1e-15


def test_not_pseudo_null_rejected():
    with pytest.raises(ValueError):
        reduce_to_canonical([], np.eye(1), [1.0, 1.0, 0.0])


def test_quadruple_mul():
    rng = np.random.default_rng(7)
    p = rand_tri(rng, 2).quadruple()
    zero = Quadruple(0.0, np.zeros(2), np.zeros(2), np.zeros((2, 2)))
    assert np.all(quadruple_mul(p, zero).as_array() == 0)
    # Poisson-state quadruples multiply like the underlying operators
    e = crandn(rng, 2)
    ps = poisson_state_rep(e)
    A, C = crandn(rng, (2, 2)), crandn(rng, (2, 2))
    assert quadruple_distance(quadruple_mul(ps.quadruple(A), ps.quadruple(C)), ps.quadruple(A @ C)) <= 1e-12


def test_quadruple_mul_matches_gns():
    w = wiener()
    e = w.basis(1)
    sample = [e, 2 * e, w.element([0.2, -1j])]
    rep = gns_construct(w, sample)
    for a in sample:
        for c in sample:
            qa, qc = rep.op(a).quadruple(), rep.op(c).quadruple()
            qac = rep.op(monoid_mul(a, c)).quadruple()
            direct = Quadruple(qac.l - qa.l - qc.l, qac.k_row - qa.k_row - qc.k_row,
                               qac.k_col - qa.k_col - qc.k_col, qac.i_block - qa.i_block - qc.i_block)
            assert quadruple_distance(quadruple_mul(qa, qc), direct) <= 1e-12


def test_state_reps():
    ps = poisson_state_rep(np.array([1.0, 2.0j]))
    q = ps.quadruple(np.eye(2))
    assert abs(q.l - 5.0) < 1e-15
    assert np.allclose(q.k_col, [1.0, 2.0j]) and np.allclose(q.i_block, np.eye(2))
    gs = gaussian_state_rep(2, np.array([1.0, 0.5]))
    q0 = gs.quadruple(0.7, np.zeros(2))
    assert q0.l == 0.7 and np.all(q0.k_col == 0) and np.all(q0.i_block == 0)
    eta = np.array([0.3, -1.2])
    b = gs.quadruple(0.0, eta)
    bs = gs.quadruple(*gs.star(0.0, eta))
    # covariance l(b* b) equals <eta|eta> in the covariance metric
    assert abs(quadruple_mul(bs, b).l - gs.pairing(eta, eta)) <= 1e-12
