import numpy as np
import pytest

from qsc.chain_fock import FockSpace, Grid
from qsc.kernel_calc import epsilon_matrix, kernel_mul, table_distance
from qsc.qsde_solver import (
    GeneratorS,
    SBlocks,
    chrono_product,
    chrono_product_direct,
    decompose_evolution,
    adapted_norm_estimate,
    evolution_family,
    exp_generator,
    exp_generator_expm,
    exponential_step_residual,
    phi,
    phi_series,
    point_kernel,
    pseudo_unitarity_check,
    psi,
    psi_series,
    random_hamiltonian,
    recurrence_residual,
    semi_tensor_residual,
    solve_qsde,
    estimate_exponent,
)

from helpers import crandn, random_kernel


def random_sblocks(rng, dim_H=1, d=1, scale=0.5):
    m = dim_H * d
    shapes = [(dim_H, dim_H), (dim_H, m), (m, dim_H), (m, m)]
    return SBlocks(*(crandn(rng, s, scale) for s in shapes))


def grid3(d=1):
    return Grid(np.array([0.0, 0.3, 0.7]), np.array([0.3, 0.4, 0.3]), d=d)


def weighted_generator(rng, grid, dim_H=1, scale=0.7):
    Hs = [random_hamiltonian(rng, dim_H, grid.d, scale) for _ in range(grid.n)]
    return GeneratorS(grid, [exp_generator(**H, weight=grid.weights[x]) for x, H in enumerate(Hs)])


# -- pseudo-unitarity --------------------------------------------------------------------

def test_identity_generator_is_pseudo_unitary():
    rep = pseudo_unitarity_check(SBlocks.identity(2, 2))
    assert rep.passed and rep.max_residual == 0.0


@pytest.mark.parametrize("dim_H,d", [(1, 1), (2, 1), (1, 2)])
def test_exp_generator_is_pseudo_unitary(dim_H, d):
    rng = np.random.default_rng(11 + dim_H + 3 * d)
    for _ in range(5):
        H = random_hamiltonian(rng, dim_H, d)
        assert pseudo_unitarity_check(exp_generator(**H)).max_residual <= 1e-12
        S = exp_generator(**H, weight=0.3)
        assert pseudo_unitarity_check(S, weight=0.3).max_residual <= 1e-12


def test_perturbed_cm_violates_unitarity():
    rng = np.random.default_rng(3)
    S = exp_generator(**random_hamiltonian(rng, 1, 2))
    eps = 1e-6
    bad = SBlocks(S.pm, S.cm + np.array([[eps, 0.0]]), S.pc, S.cc)
    rep = pseudo_unitarity_check(bad)
    assert not rep.passed
    assert 0.1 * eps <= rep.max_residual <= 10 * eps


# -- exp(iH) -----------------------------------------------------------------------------

def test_zero_hamiltonian_gives_identity():
    S = exp_generator(np.zeros((2, 2)), np.zeros((2, 1)), np.zeros((1, 1)))
    assert S.distance(SBlocks.identity(1, 2)) == 0.0


def test_brownian_generator():
    e = np.array([[0.4 - 0.2j], [1.1j]])
    h = np.array([[0.7]])
    S = exp_generator(np.zeros((2, 2)), e, h)
    assert np.allclose(S.pc, 1j * e, atol=1e-15)
    assert np.allclose(S.cm, 1j * e.conj().T, atol=1e-15)
    assert np.allclose(S.pm, -0.5 * np.vdot(e, e) + 1j * h, atol=1e-15)
    assert np.allclose(S.cc, np.eye(2), atol=1e-15)


def test_scalar_exchange_pi():
    S = exp_generator([[np.pi]], [[0.0]], [[0.0]])
    assert abs(S.cc[0, 0] + 1) <= 1e-15


def test_phi_psi_series_against_closed_form():
    z = np.array([np.pi, -np.pi, 0.5, 1e-3, -2.0])
    assert np.max(np.abs(phi_series(z) - phi(z))) <= 1e-14
    assert np.max(np.abs(psi_series(z) - psi(z))) <= 1e-14
    assert phi(0.0) == 1.0
    assert psi(0.0) == -0.5


@pytest.mark.parametrize("weight", [0.0, 0.3])
def test_exp_generator_matches_expm(weight):
    rng = np.random.default_rng(21)
    for dim_H, d in [(1, 1), (2, 1), (1, 3)]:
        H = random_hamiltonian(rng, dim_H, d)
        a = exp_generator(**H, weight=weight)
        b = exp_generator_expm(**H, weight=weight)
        assert a.distance(b) <= 1e-13


def test_non_selfadjoint_hamiltonian_rejected():
    with pytest.raises(ValueError, match="pseudo-selfadjoint"):
        exp_generator([[0.0, 1.0], [0.0, 0.0]], np.zeros((2, 1)), [[0.0]])


# -- decomposition -----------------------------------------------------------------------

def test_pure_lebesgue_decomposition():
    h = np.array([[0.3, 0.1j], [-0.1j, -0.2]])
    dec = decompose_evolution(exp_generator(np.zeros((2, 2)), np.zeros((2, 2)), h))
    assert np.allclose(dec.lebesgue.pm, 1j * h, atol=1e-15)
    for part in (dec.poisson, dec.brownian):
        assert all(np.max(np.abs(getattr(part, s))) <= 1e-15 for s in ("pm", "cm", "pc", "cc"))


def test_pure_exchange_is_poisson():
    H_cc = np.array([[0.8, 0.2], [0.2, -0.5]])
    dec = decompose_evolution(exp_generator(H_cc, np.zeros((2, 1)), np.zeros((1, 1))))
    for part in (dec.brownian, dec.lebesgue):
        assert all(np.max(np.abs(getattr(part, s))) <= 1e-15 for s in ("pm", "cm", "pc", "cc"))
    assert np.max(np.abs(dec.poisson.cc)) > 0.1


@pytest.mark.parametrize("seed", range(5))
def test_decomposition_reassembles(seed):
    rng = np.random.default_rng(100 + seed)
    H = random_hamiltonian(rng, 1 + seed % 2, 2)
    # a singular H_oo so the Brownian part is non-trivial
    w, Q = np.linalg.eigh(H["H_cc"])
    w[0] = 0.0
    H["H_cc"] = (Q * w) @ Q.conj().T
    dec = decompose_evolution(exp_generator(**H))
    assert dec.reassembly <= 1e-12
    assert dec.commutation <= 1e-12
    assert dec.part_unitarity <= 1e-12
    assert dec.diagonalization <= 1e-12
    assert np.max(np.abs(dec.E)) > 1e-3


def test_decomposition_needs_hamiltonian():
    with pytest.raises(ValueError):
        decompose_evolution(SBlocks.identity())


# -- evolution family ----------------------------------------------------------------------

def test_evolution_zero_pm_is_identity():
    fam = evolution_family(Grid.uniform(3), [np.zeros((2, 2))] * 3)
    assert np.array_equal(fam.U(0.0, 1.0), np.eye(2))


def test_evolution_single_point():
    g = Grid(np.array([0.0]), np.array([0.25]))
    A = np.array([[1.0, 2.0j], [0.5, -1.0]])
    fam = evolution_family(g, [A])
    assert np.max(np.abs(fam.U(0.0, 1.0) - (np.eye(2) + 0.25 * A))) <= 1e-15


def test_evolution_consistency_and_product():
    rng = np.random.default_rng(5)
    fam = evolution_family(Grid.uniform(4), [crandn(rng, (2, 2)) for _ in range(4)])
    assert fam.consistency_residual(0.0, 0.5, 1.0) <= 1e-13
    assert fam.consistency_residual(0.0, 0.25, 0.75) <= 1e-13
    assert fam.integral_residual(0.0, 1.0) <= 1e-13
    assert np.max(np.abs(fam.U(0.0, 1.0) - fam.U_product(0.0, 1.0))) <= 1e-13


def test_evolution_fock_acts_off_the_chain():
    # on the chain component w only the points outside w contribute
    rng = np.random.default_rng(6)
    g = Grid.uniform(2)
    a = crandn(rng, 2)
    fam = evolution_family(g, [[[a[0]]], [[a[1]]]])
    M = fam.fock(0.0, 1.0)
    space = FockSpace(g, 1)
    expect = [np.prod([1 + 0.5 * a[x] for x in range(2) if x not in c]) for c in space.chains]
    assert np.max(np.abs(M - np.diag(expect))) <= 1e-14
    assert abs(M[0, 0] - fam.U(0.0, 1.0)[0, 0]) <= 1e-14


# -- chronological product ---------------------------------------------------------------

def test_chrono_identity_generator_keeps_k0():
    rng = np.random.default_rng(7)
    g = grid3()
    K0 = random_kernel(rng, g, 2, entries=8, scale=0.3)
    S = GeneratorS.constant(g, SBlocks.identity(2, 1))
    assert table_distance(chrono_product(K0, S, np.inf), K0) <= 1e-15


def test_chrono_single_point():
    rng = np.random.default_rng(8)
    g = Grid(np.array([0.0]), np.array([0.4]), d=2)
    K0 = random_kernel(rng, g, 1, entries=8, scale=0.3)
    S = GeneratorS(g, [random_sblocks(rng, 1, 2)])
    expect = kernel_mul(K0, point_kernel(S, 0))
    assert table_distance(chrono_product(K0, S, np.inf), expect) <= 1e-14


@pytest.mark.parametrize("d,dim_H", [(1, 2), (2, 1)])
def test_chrono_recurrence_and_direct(d, dim_H):
    rng = np.random.default_rng(9 + d)
    g = grid3(d)
    K0 = random_kernel(rng, g, dim_H, entries=10, scale=0.3)
    S = GeneratorS(g, [random_sblocks(rng, dim_H, d) for _ in range(3)])
    for t in (0.5, 1.0):
        assert recurrence_residual(K0, S, t) <= 1e-12
        assert table_distance(chrono_product(K0, S, t), chrono_product_direct(K0, S, t)) <= 1e-12


def test_chrono_workers_agree():
    rng = np.random.default_rng(10)
    g = grid3()
    K0 = random_kernel(rng, g, 1, entries=8, scale=0.3)
    S = GeneratorS(g, [random_sblocks(rng) for _ in range(3)])
    a = chrono_product(K0, S, 1.0, workers=1)
    b = chrono_product(K0, S, 1.0, workers=3)
    assert table_distance(a, b) <= 1e-15


# -- QSDE solutions -------------------------------------------------------------------------

def test_zero_generator_solution_is_initial():
    rng = np.random.default_rng(12)
    g = grid3()
    K0 = random_kernel(rng, g, 1, entries=8, scale=0.3)
    S = GeneratorS.constant(g, SBlocks.identity(1, 1))
    sol = solve_qsde(K0, S, np.inf)
    assert np.max(np.abs(sol.T - epsilon_matrix(K0))) <= 1e-15


def test_fixed_point_random_generator():
    rng = np.random.default_rng(13)
    g = grid3()
    K0 = random_kernel(rng, g, 2, entries=10, scale=0.3)
    S = GeneratorS(g, [random_sblocks(rng, 2, 1) for _ in range(3)])
    sol = solve_qsde(K0, S, 1.0, check_recurrence=True)
    assert sol.fixed_point_residual <= 1e-11
    assert sol.direct_residual <= 1e-12
    assert sol.recurrence <= 1e-12


@pytest.mark.parametrize("d,dim_H", [(1, 2), (2, 1)])
def test_weighted_generator_gives_unitary_solution(d, dim_H):
    rng = np.random.default_rng(14 + d)
    S = weighted_generator(rng, grid3(d), dim_H)
    sol = solve_qsde(None, S, 1.0)
    assert sol.unitarity_residual <= 1e-10
    assert sol.fixed_point_residual <= 1e-11


def test_continuum_generator_on_grid_is_not_unitary():
    # the continuum blocks only satisfy the identities without grid corrections
    rng = np.random.default_rng(15)
    g = grid3()
    S = GeneratorS(g, [exp_generator(**random_hamiltonian(rng, 1, 1, 0.7)) for _ in range(3)])
    assert solve_qsde(None, S, 1.0).unitarity_residual > 1e-3


def test_exponential_step():
    rng = np.random.default_rng(16)
    S = weighted_generator(rng, grid3(2))
    assert exponential_step_residual(S, 1.0) <= 1e-12


def test_inconsistent_evolution_rejected():
    rng = np.random.default_rng(17)
    g = grid3()
    S = GeneratorS(g, [random_sblocks(rng) for _ in range(3)])
    fam = evolution_family(g, [np.zeros((1, 1))] * 3)
    with pytest.raises(ValueError):
        solve_qsde(None, S, 1.0, evolution=fam)


# -- adapted semi-tensor products ---------------------------------------------------------

@pytest.mark.parametrize("t", [0.5, 1.0])
def test_semi_tensor_matches_chrono(t):
    rng = np.random.default_rng(18)
    for d, dim_H in [(1, 2), (2, 1)]:
        S = weighted_generator(rng, grid3(d), dim_H)
        res = semi_tensor_residual(S, t)
        assert res["kernel"] <= 1e-12
        assert res["operator"] <= 1e-12


def test_norm_estimate_zero_off_diagonal():
    g = grid3()
    S = GeneratorS.constant(g, SBlocks.identity(1, 1))
    est = adapted_norm_estimate(S, 1.0)
    assert est["bound"] == 1.0
    assert est["measured"] <= 1.0 + 1e-12
    assert est["holds"]


def test_norm_estimate_holds_on_random_adapted():
    rng = np.random.default_rng(19)
    for d, dim_H in [(1, 1), (1, 2), (2, 1)]:
        S = weighted_generator(rng, grid3(d), dim_H)
        est = adapted_norm_estimate(S, 1.0)
        assert est["holds"]
        assert est["measured"] <= est["bound"]


def test_estimate_exponent_scales_quadratically():
    rng = np.random.default_rng(20)
    g = grid3()
    pts = [random_sblocks(rng) for _ in range(3)]
    S1 = GeneratorS(g, pts)
    S2 = GeneratorS(g, [SBlocks(s.pm, 2 * s.cm, 2 * s.pc, s.cc) for s in pts])
    assert abs(estimate_exponent(S2, 1.0) - 4 * estimate_exponent(S1, 1.0)) <= 1e-12


def test_generator_shape_validation():
    with pytest.raises(ValueError):
        SBlocks(np.eye(1), np.zeros((1, 3)), np.zeros((2, 1)), np.eye(2))
    with pytest.raises(ValueError):
        GeneratorS(grid3(), [SBlocks.identity()] * 2)
