"""Command-line front end: JSON specs in, JSON reports out.

Each subcommand reads one spec file, runs the corresponding checks and
writes a report ``{command, inputs, checks, passed, results, wall_time}``.
Exit status is 0 when every check passes, 1 when a check fails and 2 when
the spec cannot be parsed.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import dataclass
from itertools import product
from pathlib import Path

import jsonschema
import numpy as np

from . import serialization as ser
from .chain_fock import FockSpace, Grid
from .gns_rep import corner_identity_residual, gns_construct, op_distance, tri_mul, verify_cocycles
from .ito_algebra import (
    conditional_positivity_check,
    l_value,
    monoid_mul,
    star,
    validate,
)
from .ito_formula import ito_check_adapted, ito_check_strong
from .kernel_calc import (
    KernelTable,
    compression_residual,
    epsilon_matrix,
    exponential_kernel,
    pseudo_fock_dilate,
    fock_adjoint,
    in_chain,
    kernel_mul,
    kernel_star,
    out_chain,
    table_distance,
)
from .qsde_solver import (
    GeneratorS,
    decompose_evolution,
    exp_generator,
    pseudo_unitarity_check,
    random_hamiltonian,
    recurrence_residual,
    solve_qsde,
)

COMMANDS = ("validate-algebra", "gns", "pi-rep", "kernel-mul", "ito-check", "solve", "decompose")

DEFAULT_TOL = {
    "hermitianity": 1e-14,
    "associativity": 1e-14,
    "degeneracy": 1e-14,
    "conditional_positivity": 1e-10,
    "gram_psd": 1e-10,
    "corner_identity": 1e-10,
    "cocycle": 1e-10,
    "homomorphism": 1e-10,
    "star": 1e-10,
    "compression": 1e-12,
    "dilation_homomorphism": 1e-12,
    "pi_star": 1e-12,
    "vacuum": 1e-12,
    "eps_homomorphism": 1e-12,
    "eps_star": 1e-12,
    "product_matches": 1e-12,
    "strong_TTdag": 1e-11,
    "strong_TdagT": 1e-11,
    "germ_corner": 1e-11,
    "adapted_strong": 1e-11,
    "adaptedness": 1e-11,
    "pseudo_selfadjoint": 1e-10,
    "pseudo_unitarity": 1e-12,
    "fixed_point": 1e-11,
    "recurrence": 1e-12,
    "unitarity": 1e-10,
    "decomposition_reassembly": 1e-12,
    "decomposition_commutation": 1e-12,
    "part_unitarity": 1e-12,
    "diagonalization": 1e-12,
}


class SpecError(Exception):
    """The spec file is unreadable, malformed or violates an invariant."""


@dataclass
class RunConfig:
    command: str
    input: Path
    output: Path | None = None
    csv: Path | None = None
    tol: float | None = None
    t: float | None = None
    deterministic: bool = False
    seed: int = 0
    threads: int = 1


@dataclass
class Check:
    name: str
    value: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return math.isfinite(self.value) and self.value <= self.tolerance

    def as_json(self) -> dict:
        return {
            "check": self.name,
            "value": ser.encode_float(self.value),
            "tolerance": ser.encode_float(self.tolerance),
            "pass": self.passed,
        }


# -- schemas -----------------------------------------------------------------------------

_COMMON = {
    "description": {"type": "string"},
    "tolerances": {
        "type": "object",
        "additionalProperties": {"type": "number", "exclusiveMinimum": 0},
    },
}
_RANDOM_KERNEL = {
    "type": "object",
    "properties": {
        "random": {
            "type": "object",
            "properties": {
                "entries": {"type": "integer", "minimum": 0},
                "scale": {"type": "number"},
            },
            "additionalProperties": False,
        }
    },
    "required": ["random"],
    "additionalProperties": False,
}


def _schema(props: dict, required: list) -> dict:
    return {
        "type": "object",
        "properties": dict(_COMMON, **props),
        "required": required,
        "additionalProperties": False,
    }


SCHEMAS = {
    "validate-algebra": _schema(
        {"algebra": ser.ALGEBRA, "positivity_sample": {"type": "array", "items": ser.VECTOR}},
        ["algebra"],
    ),
    "gns": _schema(
        {"algebra": ser.ALGEBRA, "sample": {"type": "array", "items": ser.VECTOR, "minItems": 1}},
        ["algebra", "sample"],
    ),
    "pi-rep": _schema(
        {
            "algebra": ser.ALGEBRA,
            "sample": {"type": "array", "items": ser.VECTOR, "minItems": 1},
            "grid": ser.GRID,
            "g": {"type": "array", "items": ser.VECTOR},
            "h": {"type": "array", "items": ser.VECTOR},
        },
        ["algebra", "sample", "grid", "g"],
    ),
    "kernel-mul": _schema(
        {
            "grid": ser.GRID,
            "dim_H": {"type": "integer", "minimum": 1},
            "K": {"anyOf": [ser.KERNEL, _RANDOM_KERNEL]},
            "L": {"anyOf": [ser.KERNEL, _RANDOM_KERNEL]},
            "product": ser.KERNEL,
        },
        ["grid", "K", "L"],
    ),
    "ito-check": _schema(
        {
            "grid": ser.GRID,
            "dim_H": {"type": "integer", "minimum": 1},
            "process": {
                "type": "array",
                "minItems": 1,
                "items": {
                    "type": "object",
                    "properties": {"t": ser.TIME, "kernel": ser.KERNEL},
                    "required": ["t", "kernel"],
                    "additionalProperties": False,
                },
            },
            "counting": ser.COUNTING,
            "t": ser.TIME,
            "adapted": {"type": "boolean"},
        },
        ["grid"],
    ),
    "solve": _schema(
        {
            "grid": ser.GRID,
            "dim_H": {"type": "integer", "minimum": 1},
            "generators": {
                "anyOf": [
                    {"type": "array", "items": ser.GENERATOR_POINT, "minItems": 1},
                    {
                        "type": "object",
                        "properties": {
                            "random": {
                                "type": "object",
                                "properties": {"scale": {"type": "number"}},
                                "additionalProperties": False,
                            }
                        },
                        "required": ["random"],
                        "additionalProperties": False,
                    },
                ]
            },
            "weighted": {"type": "boolean"},
            "require_unitary": {"type": "boolean"},
            "t": ser.TIME,
            "T0": ser.KERNEL,
        },
        ["grid", "generators"],
    ),
    "decompose": _schema(
        {"hamiltonians": {"type": "array", "items": ser.GENERATOR_POINT["oneOf"][0], "minItems": 1}},
        ["hamiltonians"],
    ),
}


# -- parsing -----------------------------------------------------------------------------

def load_json(path: Path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise SpecError(f"cannot read {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc


def check_schema(command: str, raw: dict):
    validator = jsonschema.Draft202012Validator(SCHEMAS[command])
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        lines = []
        for err in errors[:5]:
            if err.context:
                # report the alternative that got furthest into the document
                err = max(err.context, key=lambda e: (len(e.absolute_path), e.validator != "required"))
            where = "/".join(str(p) for p in err.absolute_path) or "<root>"
            lines.append(f"field {where}: {err.message[:200]}")
        raise SpecError("schema violation\n  " + "\n  ".join(lines))


def _elements(alg, vectors, field_name):
    out = []
    for i, v in enumerate(vectors):
        arr = ser.decode_array(v, 1)
        if arr.size != alg.dim:
            raise SpecError(f"field {field_name}/{i}: expected {alg.dim} coefficients, got {arr.size}")
        out.append(alg.element(arr))
    return out


def _random_kernel(grid: Grid, dim_H: int, rng, entries: int, scale: float) -> KernelTable:
    ent = {}
    for _ in range(entries):
        a = rng.integers(0, 5, size=grid.n)
        key = tuple(tuple(x for x in range(grid.n) if a[x] == s) for s in range(1, 5))
        ni, no = len(in_chain(key)), len(out_chain(key))
        if max(ni, no) > grid.n_max:
            continue
        shape = (dim_H * grid.d ** no, dim_H * grid.d ** ni)
        ent[key] = scale * (rng.normal(size=shape) + 1j * rng.normal(size=shape))
    return KernelTable(grid, dim_H, ent)


def parse_spec(command: str, path: Path, seed: int = 0) -> dict:
    """Validate the spec file and build the typed objects it describes."""
    if command not in SCHEMAS:
        raise SpecError(f"unknown command {command!r}")
    raw = load_json(path)
    check_schema(command, raw)
    spec = {"raw": raw, "tolerances": dict(raw.get("tolerances", {}))}
    rng = np.random.default_rng(seed)
    try:
        if "algebra" in raw:
            spec["algebra"] = ser.algebra_from_json(raw["algebra"])
        if "grid" in raw:
            spec["grid"] = ser.grid_from_json(raw["grid"])
        dim_H = int(raw.get("dim_H", 1))
        spec["dim_H"] = dim_H
        if command == "validate-algebra":
            spec["positivity_sample"] = _elements(
                spec["algebra"], raw.get("positivity_sample", []), "positivity_sample"
            )
        elif command in ("gns", "pi-rep"):
            spec["sample"] = _elements(spec["algebra"], raw["sample"], "sample")
            if command == "pi-rep":
                n = spec["grid"].n
                spec["g"] = _elements(spec["algebra"], raw["g"], "g")
                spec["h"] = _elements(spec["algebra"], raw.get("h", raw["g"]), "h")
                if len(spec["g"]) != n or len(spec["h"]) != n:
                    raise SpecError("fields g and h need one element per grid point")
        elif command == "kernel-mul":
            for name in ("K", "L"):
                obj = raw[name]
                if isinstance(obj, dict):
                    r = obj["random"]
                    spec[name] = _random_kernel(
                        spec["grid"], dim_H, rng, int(r.get("entries", 10)), float(r.get("scale", 0.3))
                    )
                else:
                    spec[name] = ser.kernel_from_json(obj, spec["grid"], dim_H)
            if "product" in raw:
                spec["product"] = ser.kernel_from_json(raw["product"], spec["grid"], dim_H)
        elif command == "ito-check":
            g = spec["grid"]
            if "process" in raw:
                spec["process"] = sorted(
                    (ser.decode_time(item["t"]), ser.kernel_from_json(item["kernel"], g, dim_H))
                    for item in raw["process"]
                )
            elif "counting" in raw:
                spec["counting"] = ser.counting_from_json(raw["counting"], g, dim_H)
            else:
                raise SpecError("ito-check needs either 'process' or 'counting'")
            spec["t"] = ser.decode_time(raw.get("t", "inf"))
            spec["adapted"] = bool(raw.get("adapted", False))
        elif command == "solve":
            g = spec["grid"]
            gens = raw["generators"]
            if isinstance(gens, dict):
                scale = float(gens["random"].get("scale", 0.5))
                gens = [ser.hamiltonian_to_json(random_hamiltonian(rng, dim_H, g.d, scale)) for _ in range(g.n)]
            if len(gens) != g.n:
                raise SpecError(f"field generators: expected {g.n} points, got {len(gens)}")
            spec["generators"] = [
                ("H", ser.hamiltonian_from_json(p)) if "H_cc" in p else ("S", ser.sblocks_from_json(p))
                for p in gens
            ]
            spec["weighted"] = bool(raw.get("weighted", True))
            spec["require_unitary"] = bool(raw.get("require_unitary", True))
            spec["t"] = ser.decode_time(raw.get("t", "inf"))
            spec["T0"] = ser.kernel_from_json(raw["T0"], g, dim_H) if "T0" in raw else None
        elif command == "decompose":
            spec["hamiltonians"] = [ser.hamiltonian_from_json(h) for h in raw["hamiltonians"]]
    except SpecError:
        raise
    except (ValueError, KeyError, IndexError) as exc:
        raise SpecError(f"invalid spec: {exc}") from exc
    return spec


# -- commands ------------------------------------------------------------------------------

def _max(values, default=0.0) -> float:
    vals = [float(v) for v in values]
    return max(vals) if vals else default


def run_validate_algebra(spec: dict, cfg: RunConfig):
    alg = spec["algebra"]
    rep = validate(alg)
    checks = [(ch.name, ch.violation) for ch in rep.checks]
    results = {
        "algebra": ser.algebra_to_json(alg),
        "ideal_rank": rep.ideal_rank,
        "ideal_trivial": rep.ideal_trivial,
    }
    if spec["positivity_sample"]:
        ok, min_eig = conditional_positivity_check(alg, spec["positivity_sample"])
        checks.append(("conditional_positivity", max(0.0, -min_eig)))
        results["positivity_min_eigenvalue"] = min_eig
    return checks, results


def run_gns(spec: dict, cfg: RunConfig):
    alg, sample = spec["algebra"], spec["sample"]
    try:
        rep = gns_construct(alg, sample)
    except ValueError as exc:
        ok, min_eig = conditional_positivity_check(alg, sample)
        return [("conditional_positivity", max(-min_eig, 1e-300) if not ok else float("nan"))], {
            "error": str(exc)
        }
    lam = rep.gram_eigenvalues
    elems = [alg.zero()] + list(sample)
    reports = [verify_cocycles(rep, a, b) for a, b in product(elems, elems)]
    checks = [
        ("gram_psd", max(0.0, -float(lam.min())) if lam.size else 0.0),
        ("corner_identity", _max(corner_identity_residual(rep, b) for b in elems)),
        ("cocycle", _max(max(r.j_k, r.kstar_j, r.pairing) for r in reports)),
        ("homomorphism", _max(r.homomorphism for r in reports)),
        ("star", _max(r.star_property for r in reports)),
    ]
    results = {
        "dim_K": rep.dim_K,
        "gram_eigenvalues": [float(v) for v in lam],
        "representation": [ser.triangular_to_json(rep.op(b)) for b in sample],
        "closure_residual": _max(r.closure for r in reports),
    }
    return checks, results


def run_pi_rep(spec: dict, cfg: RunConfig):
    alg, sample = spec["algebra"], spec["sample"]
    rep = gns_construct(alg, sample)
    g0 = spec["grid"]
    grid = Grid(g0.times, g0.weights, rep.dim_K, g0.n_max)
    space = FockSpace(grid, 1)
    g, h = spec["g"], spec["h"]

    def pi(elems):
        return epsilon_matrix(exponential_kernel(grid, [rep.op(b) for b in elems]))

    gh = [monoid_mul(a, b) for a, b in zip(g, h)]
    Pg, Ph, Pgh = pi(g), pi(h), pi(gh)
    Pstar = pi([star(a) for a in g])
    vac = complex(np.prod([1 + grid.weights[x] * l_value(g[x]) for x in range(grid.n)]))
    idx = space.offsets[()]
    if grid.n <= 3 and grid.n_max == grid.n:
        # the dilation carries 1 (+) T(g(x)) at each point and is exactly multiplicative
        dil = lambda elems: pseudo_fock_dilate(grid, [rep.op(b) for b in elems])  # noqa: E731
        hom = float(np.max(np.abs(dil(g) @ dil(h) - dil(gh))))
    else:
        hom = _max(op_distance(tri_mul(rep.op(a), rep.op(b)), rep.op(c)) for a, b, c in zip(g, h, gh))
    checks = [
        ("dilation_homomorphism", hom),
        ("pi_star", float(np.max(np.abs(fock_adjoint(space, Pg) - Pstar)))),
        ("vacuum", abs(Pg[idx, idx] - vac)),
    ]
    if grid.n <= 3 and grid.n_max == grid.n:
        checks.append(("compression", compression_residual(grid, [rep.op(b) for b in g])))
    results = {
        "dim_K": rep.dim_K,
        "vacuum_expectation": ser.encode_complex(Pg[idx, idx]),
        "vacuum_continuum": ser.encode_complex(np.exp(sum(grid.weights[x] * l_value(g[x]) for x in range(grid.n)))),
        "compressed_multiplicativity_defect": float(np.max(np.abs(Pg @ Ph - Pgh))),
        "max_weight": float(np.max(grid.weights)) if grid.n else 0.0,
        "pi": ser.encode_array(Pg),
    }
    return checks, results


def run_kernel_mul(spec: dict, cfg: RunConfig):
    K, L = spec["K"], spec["L"]
    KL = kernel_mul(K, L)
    space = K.space()
    eK, eL = epsilon_matrix(K), epsilon_matrix(L)
    checks = [
        ("eps_homomorphism", float(np.max(np.abs(epsilon_matrix(KL) - eK @ eL), initial=0.0))),
        (
            "eps_star",
            max(
                float(np.max(np.abs(epsilon_matrix(kernel_star(M)) - fock_adjoint(space, epsilon_matrix(M))), initial=0.0))
                for M in (K, L)
            ),
        ),
    ]
    if "product" in spec:
        checks.append(("product_matches", table_distance(KL, spec["product"])))
    return checks, {"product": ser.kernel_to_json(KL), "entries": len(KL.entries)}


def _process_from_list(items):
    times = [t for t, _ in items]

    def K_process(t: float):
        best = 0
        for i, s in enumerate(times):
            if s <= t:
                best = i
        return items[best][1]

    return K_process


def run_ito_check(spec: dict, cfg: RunConfig):
    from .qs_integral import counting_integral

    if "process" in spec:
        K_process = _process_from_list(spec["process"])
    else:
        M = spec["counting"]
        K_process = lambda t: counting_integral(M, t)  # noqa: E731
    t = spec["t"] if cfg.t is None else cfg.t
    r1 = ito_check_strong(K_process, t, "TTdag")
    r2 = ito_check_strong(K_process, t, "TdagT")
    checks = [
        ("strong_TTdag", r1.residual),
        ("strong_TdagT", r2.residual),
        ("germ_corner", max(r1.corner_defect, r2.corner_defect)),
    ]
    results = {
        "t": ser.encode_float(t),
        "lhs_norm": r1.lhs_norm,
        "continuum_residual": r1.continuum_residual,
        "decomposition_defect": r1.decomposition_defect,
    }
    if spec["adapted"]:
        try:
            ra = ito_check_adapted(K_process, t, tol=np.inf)
            checks.append(("adaptedness", ra.adaptedness_defect))
            checks.append(("adapted_strong", ra.residual))
            results["adapted_germ_defect"] = ra.germ_defect
        except ValueError as exc:
            checks.append(("adaptedness", float("inf")))
            results["adapted_error"] = str(exc)
    return checks, results


def _build_generators(spec: dict):
    g = spec["grid"]
    weighted = spec["weighted"]
    pts, herm, hams = [], 0.0, []
    for x, (kind, data) in enumerate(spec["generators"]):
        w = float(g.weights[x]) if weighted else 0.0
        if kind == "H":
            H = data
            herm = max(
                herm,
                float(np.max(np.abs(H["H_cc"] - H["H_cc"].conj().T))),
                float(np.max(np.abs(H["H_pm"] - H["H_pm"].conj().T))),
            )
            hams.append(H)
            pts.append((H, w))
        else:
            pts.append((data, w))
    return pts, herm, hams


def run_solve(spec: dict, cfg: RunConfig):
    g = spec["grid"]
    pts, herm, hams = _build_generators(spec)
    checks = []
    if hams:
        checks.append(("pseudo_selfadjoint", herm))
        if herm > _tolerance("pseudo_selfadjoint", spec, cfg):
            return checks, {"error": "generator H is not pseudo-selfadjoint"}
    blocks = []
    for item, w in pts:
        if isinstance(item, dict):
            blocks.append(exp_generator(item["H_cc"], item["H_pc"], item["H_pm"], weight=w, tol=np.inf))
        else:
            blocks.append(item)
    try:
        S = GeneratorS(g, tuple(blocks))
    except ValueError as exc:
        raise SpecError(f"invalid generators: {exc}") from exc
    pu = [pseudo_unitarity_check(b, weight=w) for b, (_, w) in zip(blocks, pts)]
    checks.append(("pseudo_unitarity", _max(r.max_residual for r in pu)))
    t = spec["t"] if cfg.t is None else cfg.t
    workers = 1 if cfg.deterministic else cfg.threads
    K0 = spec["T0"]
    sol = solve_qsde(K0, S, t, workers=workers)
    checks.append(("fixed_point", sol.fixed_point_residual))
    checks.append(("recurrence", recurrence_residual(K0 if K0 is not None else _identity(S), S, t)))
    if spec["require_unitary"]:
        checks.append(("unitarity", sol.unitarity_residual))
    results = {
        "t": ser.encode_float(t),
        "T": ser.encode_array(sol.T),
        "unitarity_residual": sol.unitarity_residual,
        "direct_product_residual": ser.encode_float(sol.direct_residual),
        "pseudo_unitarity_identities": [{k: v for k, v in r.identities.items()} for r in pu],
    }
    if hams:
        decs = [decompose_evolution(b) for b in blocks]
        checks.append(("decomposition_reassembly", _max(d.reassembly for d in decs)))
        results["decomposition"] = [_decomposition_json(d) for d in decs]
    return checks, results


def _identity(S):
    from .kernel_calc import identity_kernel

    return identity_kernel(S.grid, S.dim_H)


def _decomposition_json(d) -> dict:
    return {
        "poisson": ser.sblocks_to_json(d.poisson),
        "brownian": ser.sblocks_to_json(d.brownian),
        "lebesgue": ser.sblocks_to_json(d.lebesgue),
        "F0": ser.encode_array(d.F0),
        "split_residual": d.split_residual,
        "reassembly": d.reassembly,
        "commutation": d.commutation,
        "orthogonality": d.orthogonality,
        "part_unitarity": d.part_unitarity,
        "diagonalization": d.diagonalization,
        "grid_deviation": d.grid_deviation,
    }


def run_decompose(spec: dict, cfg: RunConfig):
    hams = spec["hamiltonians"]
    herm = _max(
        max(float(np.max(np.abs(H["H_cc"] - H["H_cc"].conj().T))), float(np.max(np.abs(H["H_pm"] - H["H_pm"].conj().T))))
        for H in hams
    )
    checks = [("pseudo_selfadjoint", herm)]
    if herm > _tolerance("pseudo_selfadjoint", spec, cfg):
        return checks, {"error": "H is not pseudo-selfadjoint"}
    try:
        Fs = [exp_generator(H["H_cc"], H["H_pc"], H["H_pm"]) for H in hams]
    except ValueError as exc:
        raise SpecError(f"invalid hamiltonian: {exc}") from exc
    decs = [decompose_evolution(F) for F in Fs]
    checks += [
        ("pseudo_unitarity", _max(pseudo_unitarity_check(F).max_residual for F in Fs)),
        ("decomposition_reassembly", _max(d.reassembly for d in decs)),
        ("decomposition_commutation", _max(max(d.commutation, d.orthogonality) for d in decs)),
        ("part_unitarity", _max(d.part_unitarity for d in decs)),
        ("diagonalization", _max(d.diagonalization for d in decs)),
    ]
    results = {
        "generators": [ser.sblocks_to_json(F) for F in Fs],
        "decomposition": [_decomposition_json(d) for d in decs],
    }
    return checks, results


RUNNERS = {
    "validate-algebra": run_validate_algebra,
    "gns": run_gns,
    "pi-rep": run_pi_rep,
    "kernel-mul": run_kernel_mul,
    "ito-check": run_ito_check,
    "solve": run_solve,
    "decompose": run_decompose,
}


# -- reports --------------------------------------------------------------------------------

def _tolerance(name: str, spec: dict, cfg: RunConfig) -> float:
    if cfg.tol is not None:
        return cfg.tol
    return float(spec.get("tolerances", {}).get(name, DEFAULT_TOL.get(name, 1e-12)))


def _clean(obj):
    """Make results JSON-safe: numpy scalars to floats, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return ser.encode_float(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return ser.encode_complex(obj)
    return obj


def run(cfg: RunConfig) -> tuple[int, dict]:
    """Execute one command; returns (exit status, report)."""
    start = time.perf_counter()
    spec = parse_spec(cfg.command, cfg.input, cfg.seed)
    raw_checks, results = RUNNERS[cfg.command](spec, cfg)
    checks = [Check(name, float(value), _tolerance(name, spec, cfg)) for name, value in raw_checks]
    data = Path(cfg.input).read_bytes()
    report = {
        "command": cfg.command,
        "inputs": {"path": Path(cfg.input).name, "sha256": hashlib.sha256(data).hexdigest(), "seed": cfg.seed},
        "checks": [c.as_json() for c in checks],
        "failed": [c.name for c in checks if not c.passed],
        "passed": all(c.passed for c in checks),
        "results": _clean(results),
        "wall_time": 0.0 if cfg.deterministic else time.perf_counter() - start,
    }
    return (0 if report["passed"] else 1), report


def emit_report(report: dict, output: Path | None = None, csv_path: Path | None = None) -> str:
    """Write the JSON report (sorted keys) and optionally the CSV check table."""
    text = json.dumps(report, sort_keys=True, indent=2, allow_nan=False) + "\n"
    if output is None:
        sys.stdout.write(text)
    else:
        Path(output).write_text(text)
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["check", "value", "tolerance", "pass"])
            for c in report.get("checks", []):
                writer.writerow([c["check"], repr(c["value"]), repr(c["tolerance"]), c["pass"]])
    return text


def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a number: {text}") from exc
    if not v > 0 or not math.isfinite(v):
        raise argparse.ArgumentTypeError("tolerance must be a positive finite number")
    return v


def _time(text: str) -> float:
    try:
        return ser.decode_time(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a time: {text}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qsc", description="Quantum stochastic calculus checks on finite grids.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--input", "-i", required=True, type=Path, help="JSON spec file")
        p.add_argument("--output", "-o", type=Path, help="report path (default: stdout)")
        p.add_argument("--csv", type=Path, help="also write the check table as CSV")
        p.add_argument("--tol", type=_positive_float, help="override every check tolerance")
        p.add_argument("--t", type=_time, help="cut time (number or 'inf')")
        p.add_argument("--deterministic", action="store_true", help="single-threaded, zero wall time")
        p.add_argument("--seed", type=int, default=0, help="seed for randomized spec sections")
    return parser


def _threads() -> int:
    val = os.environ.get("QSC_THREADS", "1")
    try:
        return max(1, int(val))
    except ValueError:
        return 1


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 2
    cfg = RunConfig(
        args.command,
        args.input,
        args.output,
        args.csv,
        args.tol,
        args.t,
        args.deterministic,
        args.seed,
        _threads(),
    )
    try:
        status, report = run(cfg)
    except SpecError as exc:
        sys.stderr.write(f"qsc {cfg.command}: {exc}\n")
        return 2
    try:
        emit_report(report, cfg.output, cfg.csv)
    except OSError as exc:
        sys.stderr.write(f"qsc {cfg.command}: cannot write report: {exc}\n")
        return 2
    if status:
        sys.stderr.write(f"qsc {cfg.command}: failed checks: {', '.join(report['failed'])}\n")
    return status


if __name__ == "__main__":
    sys.exit(main())
