"""Regenerate the bundled demo and defect specs in src/qsc/demos/."""

import json
from itertools import product
from pathlib import Path

import numpy as np

from qsc import serialization as ser
from qsc.chain_fock import Grid, all_chains
from qsc.ito_algebra import hp_vacuum
from qsc.kernel_calc import KernelTable, extend_identity, in_chain, kernel_mul, out_chain
from qsc.qs_integral import CountingIntegrand, counting_integral, joined_key
from qsc.qsde_solver import exp_generator, random_hamiltonian

OUT = Path(__file__).resolve().parents[1] / "src" / "qsc" / "demos"
rng = np.random.default_rng(20240601)


def cr(shape):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


def vec(v):
    return ser.encode_array(np.asarray(v, dtype=complex))


def random_kernel(grid, dim_H, entries, scale):
    ent = {}
    shell = KernelTable(grid, dim_H)
    while len(ent) < entries:
        a = rng.integers(0, 5, size=grid.n)
        key = tuple(tuple(x for x in range(grid.n) if a[x] == s) for s in range(1, 5))
        if max(len(in_chain(key)), len(out_chain(key))) > grid.n_max:
            continue
        ent[key] = scale * cr(shell.block_shape(key))
    return KernelTable(grid, dim_H, ent)


def random_counting(grid, dim_H, entries, scale):
    ent = {}
    shell = KernelTable(grid, dim_H)
    while len(ent) < entries:
        a = rng.integers(0, 5, size=grid.n)
        b = rng.integers(0, 2, size=grid.n)
        th = tuple(tuple(x for x in range(grid.n) if a[x] == s and b[x]) for s in range(1, 5))
        up = tuple(tuple(x for x in range(grid.n) if a[x] == s and not b[x]) for s in range(1, 5))
        jk = joined_key(th, up)
        if max(len(in_chain(jk)), len(out_chain(jk))) > grid.n_max:
            continue
        ent[(th, up)] = scale * cr(shell.block_shape(jk))
    return CountingIntegrand(grid, dim_H, ent)


def adapted_counting(grid, dim_H):
    """Integrand whose kernels at each cut only involve points before the cut."""
    ent = {}
    shell = KernelTable(grid, dim_H)
    empty = ((), (), (), ())
    for a in product(range(5), repeat=grid.n):
        th = tuple(tuple(x for x in range(grid.n) if a[x] == s) for s in range(1, 5))
        if th != empty and rng.random() >= 0.3:
            continue
        if max(len(in_chain(th)), len(out_chain(th))) > grid.n_max:
            continue
        N = 0.5 * cr(shell.block_shape(th))
        if th == empty:
            N = np.eye(dim_H) + 0.3 * cr((dim_H, dim_H))
        used = set().union(*map(set, th))
        free = [x for x in range(grid.n) if x not in used]
        for s in all_chains(free, grid.n):
            up = ((), (), (), s)
            jk = joined_key(th, up)
            if max(len(in_chain(jk)), len(out_chain(jk))) > grid.n_max:
                continue
            ent[(th, up)] = extend_identity(N, dim_H, grid.d, in_chain(th), out_chain(th), s)
    return CountingIntegrand(grid, dim_H, ent)


def hp_sample():
    # dt, dA-, dA+, dN coordinates in the (dt, e1, e2, e3) basis
    return [vec([0, 0, 0, 0]), vec([1, 0, 0, 0]), vec([0, 0.5, -0.5j, 0]), vec([0, 0.5, 0.5j, 0]),
            vec([0, 0, 0, 1]), vec([0.3, 0.2, 0.1, -0.4])]


def write(name, obj):
    (OUT / f"{name}.json").write_text(json.dumps(obj, indent=1) + "\n")


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    alg = hp_vacuum()

    # validate-algebra
    write("validate-algebra", {"algebra": ser.algebra_to_json(alg), "positivity_sample": hp_sample()})
    bad = ser.algebra_to_json(alg)
    c = ser.decode_array(bad["c"], 3)
    c[0, 1, 2] += 1e-3
    bad["c"] = ser.encode_array(c)
    write("validate-algebra_defect", {"algebra": bad})

    # gns
    write("gns", {"algebra": {"preset": "hp_vacuum"}, "sample": hp_sample()})
    cw = np.zeros((2, 2, 2), dtype=complex)
    cw[0, 1, 1] = -1.0  # e * e = -dt: the Wiener table with the wrong sign
    write("gns_defect", {"algebra": {"dim": 2, "names": ["dt", "e"], "c": ser.encode_array(cw)},
                         "sample": [vec([0, 0]), vec([0, 1]), vec([0, 1j]), vec([1, 0.5])]})

    # pi-rep
    grid = {"times": [0.0, 1.0, 2.0], "weights": [0.4, 0.7, 0.3]}
    g = [vec([0.2, 0.3, -0.1j, 0.1]), vec([-0.1, 0.2j, 0.4, 0.3]), vec([0.5, 0.1, 0.1, -0.2])]
    h = [vec([0.1, -0.2, 0.3j, 0.2]), vec([0.3, 0.1, 0.2, -0.1]), vec([0.0, 0.4j, 0.1, 0.1])]
    write("pi-rep", {"algebra": {"preset": "hp_vacuum"}, "sample": hp_sample(), "grid": grid, "g": g, "h": h})
    cbad = np.zeros((3, 3, 3), dtype=complex)
    cbad[0, 1, 1] = 1.0
    cbad[0, 2, 2] = 1.0
    cbad[1, 1, 2] = 1.0  # e1 * e2 = e1 without the matching e2 * e1: not associative
    write("pi-rep_defect", {"algebra": {"dim": 3, "c": ser.encode_array(cbad)},
                            "sample": [vec([0, 0, 0]), vec([0, 1, 0]), vec([0, 0, 1])],
                            "grid": grid, "g": [vec([0.1, 0.2, 0.3])] * 3})

    # kernel-mul
    kg = Grid(np.array([0.0, 1.0, 2.0]), np.array([0.5, 0.25, 0.8]), 2, None)
    K = random_kernel(kg, 1, 8, 0.4)
    L = random_kernel(kg, 1, 8, 0.4)
    KL = kernel_mul(K, L)
    base = {"grid": ser.grid_to_json(kg), "dim_H": 1, "K": ser.kernel_to_json(K), "L": ser.kernel_to_json(L)}
    write("kernel-mul", dict(base, product=ser.kernel_to_json(KL)))
    wrong = ser.kernel_to_json(KL)
    blk = ser.decode_matrix(wrong[0]["block"])
    blk[0, 0] += 0.01
    wrong[0]["block"] = ser.encode_array(blk)
    write("kernel-mul_defect", dict(base, product=wrong))

    # ito-check: piecewise-constant process sampled at the cuts of a counting integral
    ig = Grid(np.array([0.0, 1.0, 2.0]), np.array([0.3, 0.5, 0.2]), 1, None)
    M = random_counting(ig, 2, 14, 0.5)
    cuts = [0.0, 1.0, 2.0, 3.0]
    process = [{"t": t, "kernel": ser.kernel_to_json(counting_integral(M, t))} for t in cuts]
    write("ito-check", {"grid": ser.grid_to_json(ig), "dim_H": 2, "process": process, "t": "inf"})
    # asking for the adapted form on a process that anticipates the future must fail
    write("ito-check_defect", {"grid": ser.grid_to_json(ig), "dim_H": 2, "process": process, "t": "inf",
                               "adapted": True})
    A = adapted_counting(ig, 2)
    process = [{"t": t, "kernel": ser.kernel_to_json(counting_integral(A, t))} for t in cuts]
    write("ito-check_adapted", {"grid": ser.grid_to_json(ig), "dim_H": 2, "process": process, "t": "inf",
                                "adapted": True})

    # solve
    sg = {"times": [0.0, 0.5, 1.0, 1.5], "weights": [0.5, 0.5, 0.5, 0.5], "d": 1}
    hams = [ser.hamiltonian_to_json(random_hamiltonian(rng, 1, 1, 0.6)) for _ in range(4)]
    write("solve", {"grid": sg, "dim_H": 1, "generators": hams, "t": "inf"})
    Sg = ser.grid_from_json(sg)
    pts = []
    for x, H in enumerate(hams):
        Hd = ser.hamiltonian_from_json(H)
        S = exp_generator(Hd["H_cc"], Hd["H_pc"], Hd["H_pm"], weight=float(Sg.weights[x]))
        pts.append(ser.sblocks_to_json(S))
    cc = ser.decode_matrix(pts[1]["S_cc"])
    cc[0, 0] *= 1.05
    pts[1]["S_cc"] = ser.encode_array(cc)
    write("solve_defect", {"grid": sg, "dim_H": 1, "generators": pts, "t": "inf"})

    # decompose
    hd = [random_hamiltonian(rng, 1, 2, 0.7), random_hamiltonian(rng, 2, 1, 0.7)]
    write("decompose", {"hamiltonians": [ser.hamiltonian_to_json(H) for H in hd]})
    H = dict(hd[0])
    H["H_cc"] = H["H_cc"].copy()
    H["H_cc"][0, 1] += 0.2
    write("decompose_defect", {"hamiltonians": [ser.hamiltonian_to_json(H)]})


if __name__ == "__main__":
    main()
