"""Random data generators shared by the test modules."""

from itertools import product

import numpy as np

from qsc.chain_fock import Grid, all_chains
from qsc.kernel_calc import KernelTable, extend_identity, in_chain, out_chain
from qsc.qs_integral import CountingIntegrand, joined_key

EMPTY = ((), (), (), ())


def crandn(rng, shape, scale=1.0):
    return scale * (rng.normal(size=shape) + 1j * rng.normal(size=shape))


def random_key(rng, grid):
    a = rng.integers(0, 5, size=grid.n)
    return tuple(tuple(x for x in range(grid.n) if a[x] == s) for s in range(1, 5))


def fits(grid, key):
    return max(len(in_chain(key)), len(out_chain(key))) <= grid.n_max


def random_kernel(rng, grid, dim_H=1, entries=6, scale=1.0):
    shell = KernelTable(grid, dim_H)
    ent = {}
    for _ in range(entries):
        key = random_key(rng, grid)
        if fits(grid, key):
            ent[key] = crandn(rng, shell.block_shape(key), scale)
    return KernelTable(grid, dim_H, ent)


def random_counting(rng, grid, dim_H=1, entries=10, scale=0.5):
    """Kernel-valued integrand with entries at random (theta, upsilon) splits."""
    shell = KernelTable(grid, dim_H)
    ent = {}
    for _ in range(entries):
        a = rng.integers(0, 5, size=grid.n)
        b = rng.integers(0, 2, size=grid.n)
        th = tuple(tuple(x for x in range(grid.n) if a[x] == s and b[x]) for s in range(1, 5))
        up = tuple(tuple(x for x in range(grid.n) if a[x] == s and not b[x]) for s in range(1, 5))
        jk = joined_key(th, up)
        if fits(grid, jk):
            ent[(th, up)] = crandn(rng, shell.block_shape(jk), scale)
    return CountingIntegrand(grid, dim_H, ent)


def adapted_counting(rng, grid, dim_H=1, density=0.3, scale=0.5):
    """Integrand whose value at each cut is an operator on the past, tensored with the identity."""
    shell = KernelTable(grid, dim_H)
    ent = {}
    for a in product(range(5), repeat=grid.n):
        th = tuple(tuple(x for x in range(grid.n) if a[x] == s) for s in range(1, 5))
        if th != EMPTY and rng.random() >= density:
            continue
        if not fits(grid, th):
            continue
        N = crandn(rng, shell.block_shape(th), scale)
        if th == EMPTY:
            N = np.eye(dim_H) + crandn(rng, (dim_H, dim_H), 0.3)
        used = set().union(*map(set, th))
        free = [x for x in range(grid.n) if x not in used]
        for s in all_chains(free, grid.n):
            up = ((), (), (), s)
            jk = joined_key(th, up)
            if fits(grid, jk):
                ent[(th, up)] = extend_identity(N, dim_H, grid.d, in_chain(th), out_chain(th), s)
    return CountingIntegrand(grid, dim_H, ent)


def small_grid(n=3, d=1, n_max=None, seed=None):
    rng = np.random.default_rng(seed)
    w = rng.uniform(0.1, 0.6, size=n) if seed is not None else np.linspace(0.3, 0.5, n)
    return Grid(np.arange(n, dtype=float), w, d, n_max)
