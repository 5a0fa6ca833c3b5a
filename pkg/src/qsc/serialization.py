"""JSON encoding of the library objects.

Complex numbers are ``[re, im]`` pairs; arrays are nested lists of pairs.
Chains are lists of grid indices.  Every ``*_to_json`` has a matching
``*_from_json`` so that decoding an encoded object reproduces it exactly.
"""

from __future__ import annotations

import math

import numpy as np

from .chain_fock import Grid
from .gns_rep import TriangularOp
from .ito_algebra import ItoAlgebra, hp_vacuum, poisson, wiener
from .kernel_calc import KernelTable
from .qs_integral import CountingIntegrand
from .qsde_solver import SBlocks

# -- schema fragments -------------------------------------------------------------

COMPLEX = {
    "type": "array",
    "items": {"type": "number"},
    "minItems": 2,
    "maxItems": 2,
}


def _nested(depth: int) -> dict:
    node = COMPLEX
    for _ in range(depth):
        node = {"type": "array", "items": node}
    return node


VECTOR = _nested(1)
MATRIX = _nested(2)
TENSOR3 = _nested(3)
CHAIN = {"type": "array", "items": {"type": "integer", "minimum": 0}}
TIME = {"anyOf": [{"type": "number"}, {"enum": ["inf"]}]}

ALGEBRA = {
    "type": "object",
    "oneOf": [
        {
            "properties": {
                "dim": {"type": "integer", "minimum": 1},
                "names": {"type": "array", "items": {"type": "string"}},
                "c": TENSOR3,
            },
            "required": ["dim", "c"],
            "additionalProperties": False,
        },
        {
            "properties": {
                "preset": {"enum": ["hp_vacuum", "wiener", "poisson"]},
                "lambda": {"type": "number"},
            },
            "required": ["preset"],
            "additionalProperties": False,
        },
    ],
}

GRID = {
    "type": "object",
    "properties": {
        "times": {"type": "array", "items": {"type": "number"}},
        "weights": {"type": "array", "items": {"type": "number"}},
        "d": {"type": "integer", "minimum": 1},
        "n_max": {"type": "integer", "minimum": 0},
    },
    "required": ["times", "weights"],
    "additionalProperties": False,
}

KERNEL_ENTRY = {
    "type": "object",
    "properties": {
        "w_pm": CHAIN,
        "w_cm": CHAIN,
        "w_pc": CHAIN,
        "w_cc": CHAIN,
        "block": MATRIX,
    },
    "required": ["w_pm", "w_cm", "w_pc", "w_cc", "block"],
    "additionalProperties": False,
}
KERNEL = {"type": "array", "items": KERNEL_ENTRY}

KEY4 = {
    "type": "object",
    "properties": {"w_pm": CHAIN, "w_cm": CHAIN, "w_pc": CHAIN, "w_cc": CHAIN},
    "required": ["w_pm", "w_cm", "w_pc", "w_cc"],
    "additionalProperties": False,
}
COUNTING = {
    "type": "array",
    "items": {
        "type": "object",
        "properties": {"theta": KEY4, "ups": KEY4, "block": MATRIX},
        "required": ["theta", "ups", "block"],
        "additionalProperties": False,
    },
}

TRIANGULAR = {
    "type": "object",
    "properties": {"l": COMPLEX, "k_row": VECTOR, "k_col": VECTOR, "j": MATRIX},
    "required": ["l", "k_row", "k_col", "j"],
    "additionalProperties": False,
}

GENERATOR_POINT = {
    "type": "object",
    "oneOf": [
        {
            "properties": {"H_cc": MATRIX, "H_pc": MATRIX, "H_pm": MATRIX},
            "required": ["H_cc", "H_pc", "H_pm"],
            "additionalProperties": False,
        },
        {
            "properties": {"S_pm": MATRIX, "S_cm": MATRIX, "S_pc": MATRIX, "S_cc": MATRIX},
            "required": ["S_pm", "S_cm", "S_pc", "S_cc"],
            "additionalProperties": False,
        },
    ],
}


# -- scalars and arrays -------------------------------------------------------------

def encode_float(x: float):
    """Finite floats as numbers, the rest as the strings 'nan', 'inf', '-inf'."""
    x = float(x)
    if math.isfinite(x):
        return x
    return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")


def decode_time(x) -> float:
    return math.inf if x == "inf" else float(x)


def encode_complex(z) -> list:
    z = complex(z)
    return [encode_float(z.real), encode_float(z.imag)]


def encode_array(a) -> list:
    a = np.asarray(a, dtype=complex)
    pairs = np.stack([a.real, a.imag], axis=-1)
    return pairs.tolist()


def decode_array(obj, ndim: int | None = None) -> np.ndarray:
    arr = np.asarray(obj, dtype=float)
    if arr.ndim == 0 or arr.shape[-1] != 2:
        raise ValueError("complex arrays must end in [re, im] pairs")
    out = arr[..., 0] + 1j * arr[..., 1]
    if ndim is not None and out.ndim != ndim:
        raise ValueError(f"expected a complex array of rank {ndim}, got rank {out.ndim}")
    return out


def decode_matrix(obj) -> np.ndarray:
    if isinstance(obj, list) and len(obj) == 0:
        return np.zeros((0, 0), dtype=complex)
    return decode_array(obj, 2)


# -- algebra --------------------------------------------------------------------------

def algebra_to_json(alg: ItoAlgebra) -> dict:
    return {"dim": alg.dim, "names": list(alg.names), "c": encode_array(alg.c)}


def algebra_from_json(obj: dict) -> ItoAlgebra:
    if "preset" in obj:
        name = obj["preset"]
        if name == "hp_vacuum":
            return hp_vacuum()
        if name == "wiener":
            return wiener()
        return poisson(float(obj.get("lambda", 1.0)))
    c = decode_array(obj["c"], 3)
    n = int(obj["dim"])
    if c.shape != (n, n, n):
        raise ValueError(f"structure tensor has shape {c.shape}, expected {(n, n, n)}")
    names = obj.get("names") or ["dt"] + [f"e{i}" for i in range(1, n)]
    return ItoAlgebra(c, tuple(names))


# -- grid and kernels ---------------------------------------------------------------------

def grid_to_json(g: Grid) -> dict:
    return {
        "times": [float(t) for t in g.times],
        "weights": [float(w) for w in g.weights],
        "d": g.d,
        "n_max": g.n_max,
    }


def grid_from_json(obj: dict) -> Grid:
    return Grid(
        np.asarray(obj["times"], dtype=float),
        np.asarray(obj["weights"], dtype=float),
        int(obj.get("d", 1)),
        obj.get("n_max"),
    )


def key_to_json(key) -> dict:
    return {name: [int(i) for i in chain] for name, chain in zip(("w_pm", "w_cm", "w_pc", "w_cc"), key)}


def key_from_json(obj: dict) -> tuple:
    return tuple(tuple(int(i) for i in obj[name]) for name in ("w_pm", "w_cm", "w_pc", "w_cc"))


def kernel_to_json(K: KernelTable) -> list:
    return [dict(key_to_json(key), block=encode_array(blk)) for key, blk in K.sorted_items()]


def kernel_from_json(obj: list, grid: Grid, dim_H: int = 1) -> KernelTable:
    ent = {}
    for item in obj:
        key = key_from_json(item)
        if key in ent:
            raise ValueError(f"duplicate kernel entry {key}")
        ent[key] = decode_matrix(item["block"])
    return KernelTable(grid, dim_H, ent)


def counting_to_json(M: CountingIntegrand) -> list:
    return [
        {"theta": key_to_json(th), "ups": key_to_json(up), "block": encode_array(blk)}
        for (th, up), blk in sorted(M.entries.items())
    ]


def counting_from_json(obj: list, grid: Grid, dim_H: int = 1) -> CountingIntegrand:
    ent = {}
    for item in obj:
        ent[(key_from_json(item["theta"]), key_from_json(item["ups"]))] = decode_matrix(item["block"])
    return CountingIntegrand(grid, dim_H, ent)


# -- triangular operators and generators ---------------------------------------------------

def triangular_to_json(T: TriangularOp) -> dict:
    return {
        "l": encode_complex(T.l),
        "k_row": encode_array(T.k_row),
        "k_col": encode_array(T.k_col),
        "j": encode_array(T.j_block),
    }


def triangular_from_json(obj: dict) -> TriangularOp:
    kr = decode_array(obj["k_row"], 1) if obj["k_row"] else np.zeros(0, dtype=complex)
    kc = decode_array(obj["k_col"], 1) if obj["k_col"] else np.zeros(0, dtype=complex)
    j = decode_matrix(obj["j"]) if obj["j"] else np.zeros((0, 0), dtype=complex)
    return TriangularOp(complex(*obj["l"]), kr, kc, j)


def sblocks_to_json(S: SBlocks) -> dict:
    return {
        "S_pm": encode_array(S.pm),
        "S_cm": encode_array(S.cm),
        "S_pc": encode_array(S.pc),
        "S_cc": encode_array(S.cc),
    }


def sblocks_from_json(obj: dict) -> SBlocks:
    return SBlocks(*(decode_matrix(obj[k]) for k in ("S_pm", "S_cm", "S_pc", "S_cc")))


def hamiltonian_to_json(H: dict) -> dict:
    return {k: encode_array(H[k]) for k in ("H_cc", "H_pc", "H_pm")}


def hamiltonian_from_json(obj: dict) -> dict:
    return {k: decode_matrix(obj[k]) for k in ("H_cc", "H_pc", "H_pm")}
