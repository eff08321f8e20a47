"""Config-driven command line: one experiment per invocation, data files out.

Every run writes ``manifest.json`` (config hash, seeds, file list) and
``timing.json`` next to the experiment outputs.  Everything except
``timing.json`` is byte-identical across repeated runs of one config.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import sys
import time
import warnings
from pathlib import Path

import jsonschema
import numpy as np
from threadpoolctl import threadpool_limits

from . import hoe as hoe_mod
from .hilbert import HilbertError, Ket
from .models import ModelError, ModelName, ModelSpec, default_catalog, model_coefficients, number_operator_vector
from .operators import (
    CatalogKind,
    OperatorBasis,
    OperatorError,
    custom_basis,
    pauli_strings_catalog,
    realize,
    spin_operator,
)
from .qcm import (
    MIN_GAP,
    NULL_TOL,
    EmptyNullSpaceError,
    QCMError,
    discover_symmetries,
    pairs_needed,
    perturbation_scan,
    reconstruct,
    write_spectrum_csv,
)
from .spectra import NotDiagonalizableError, SpectrumError, diagonalize_nonhermitian

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_SCHEMA = 2
EXIT_NUMERICAL = 3

EXPERIMENTS = {
    "reconstruct": ["Reconstruct"],
    "spectrum": ["Spectrum"],
    "multistate": ["MultiState"],
    "symmetries": ["Symmetries"],
    "perturb": ["PerturbScan"],
    "hoe": ["HoeSteady", "HoeTimeDependent", "HoeLindblad"],
    "roundtrip": ["RandomRoundTrip"],
}

_SELECTOR = {
    "oneOf": [
        {"type": "object", "properties": {"index": {"type": "integer", "minimum": 0}},
         "required": ["index"], "additionalProperties": False},
        {"type": "object", "properties": {"random": {"type": "integer", "minimum": 0}},
         "required": ["random"], "additionalProperties": False},
    ]
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "nhparent experiment config",
    "type": "object",
    "required": ["schema_version", "model"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "experiment": {"enum": sorted({e for v in EXPERIMENTS.values() for e in v})},
        "seed": {"type": "integer", "minimum": 0},
        "output_directory": {"type": "string"},
        "model": {
            "type": "object",
            "required": ["name", "num_sites"],
            "additionalProperties": False,
            "properties": {
                "name": {"enum": [m.value for m in ModelName]},
                "num_sites": {"type": "integer", "minimum": 1, "maximum": 16},
                "parameters": {"type": "object", "additionalProperties": {"type": "number"}},
                "potential_kind": {"enum": ["Zero", "Staggered", "Biased", "Random"]},
                "potential_amplitude": {"type": "number"},
                "seed": {"type": "integer", "minimum": 0},
                "num_particles": {"type": ["integer", "null"], "minimum": 0},
                "periodic": {"type": "boolean"},
                "real_only": {"type": "boolean"},
            },
        },
        "basis_kind": {"enum": ["SpinHalfChain", "FermionFixedNumber"]},
        "catalog": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "translation_invariant": {"type": "boolean"},
                "exclude": {"type": "array", "items": {"type": "string"}},
                "exclude_prefix": {"type": "array", "items": {"type": "string"}},
            },
        },
        "eigenpair": _SELECTOR,
        "eigenpairs": {"type": "array", "items": _SELECTOR, "minItems": 1},
        "weights": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
        "degenerate": {"type": "boolean"},
        "tolerances": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "null_relative": {"type": "number", "exclusiveMinimum": 0},
                "min_gap": {"type": "number", "exclusiveMinimum": 0},
                "condition_limit": {"type": "number", "exclusiveMinimum": 0},
                "svd_relative": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "perturb": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epsilons": {"type": "array", "minItems": 1,
                             "items": {"type": "number", "minimum": 0, "exclusiveMaximum": 0.5}},
            },
        },
        "hoe": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "probes": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "kind": {"enum": ["ansatz", "pauli"]},
                        "max_range": {"type": "integer", "minimum": 1},
                    },
                },
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "sample_times": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
                "scale": {"enum": ["constant", "cos"]},
                "num_jumps": {"type": "integer", "minimum": 1},
                "jump_amplitude": {"type": "number", "exclusiveMinimum": 0},
                "t_final": {"type": "number", "exclusiveMinimum": 0},
                "sample_every": {"type": "integer", "minimum": 1},
            },
        },
        "roundtrip": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "sizes": {"type": "array", "items": {"type": "integer", "minimum": 2, "maximum": 10},
                          "minItems": 1},
                "count": {"type": "integer", "minimum": 1},
                "pairs_per_case": {"type": "integer", "minimum": 1},
                "tolerance": {"type": "number", "exclusiveMinimum": 0},
            },
        },
    },
}


class ConfigError(ValueError):
    """Schema or semantic violation; ``problems`` lists every offending path."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class NumericalFailure(RuntimeError):
    pass


def _path(err) -> str:
    return "/" + "/".join(str(p) for p in err.absolute_path)


def validate_config(cfg) -> None:
    v = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errs = sorted(v.iter_errors(cfg), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errs:
        raise ConfigError([f"{_path(e)}: {e.message}" for e in errs])


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, complex):
        return [x.real, x.imag]
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _clean(x):
    """Replace non-finite floats so the JSON stays standard."""
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (float, np.floating)):
        f = float(x)
        return f if np.isfinite(f) else str(f)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


# ---------------------------------------------------------------- context ----

class Run:
    """Resolved config plus output bookkeeping for one invocation."""

    def __init__(self, cfg: dict, out: Path):
        self.cfg = cfg
        self.out = out
        self.hash = config_hash(cfg)
        self.seed = int(cfg.get("seed", 0))
        self.seeds: dict = {"seed": self.seed}
        self.files: list[str] = []
        self.missing: list[str] = []
        tol = cfg.get("tolerances", {})
        self.null_rel = tol.get("null_relative", NULL_TOL)
        self.min_gap = tol.get("min_gap", MIN_GAP)
        self.cond_limit = tol.get("condition_limit", 1e12)
        self.svd_rel = tol.get("svd_relative", 1e-10)
        m = cfg["model"]
        self.spec = ModelSpec.from_dict(m)
        self.seeds["model_seed"] = self.spec.seed
        kind = cfg.get("basis_kind")
        want = "FermionFixedNumber" if self.spec.name is ModelName.FERMION else "SpinHalfChain"
        if kind is not None and kind != want:
            raise ConfigError([f"/basis_kind: {self.spec.name.value} lives on {want}, not {kind}"])

    @property
    def header(self) -> str:
        return f"config_hash {self.hash}"

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.out / name

    def write_json(self, name: str, obj) -> None:
        _dump(_clean(obj), self.path(name))

    def catalog(self) -> OperatorBasis:
        c = self.cfg.get("catalog", {})
        ti = c.get("translation_invariant", False)
        if ti and self.spec.name is ModelName.FERMION:
            raise ConfigError(["/catalog/translation_invariant: only spin models have a translation-invariant catalog"])
        cat = default_catalog(self.spec, ti)
        drop = set(c.get("exclude", []))
        unknown = sorted(drop - set(cat.labels))
        if unknown:
            raise ConfigError([f"/catalog/exclude: unknown labels {unknown}"])
        prefixes = tuple(c.get("exclude_prefix", []))
        keep = [i for i, lab in enumerate(cat.labels)
                if lab not in drop and not (prefixes and lab.startswith(prefixes))]
        if len(keep) < len(cat):
            cat = cat.subset(keep)
        if not len(cat):
            raise ConfigError(["/catalog: every operator was excluded"])
        return cat

    def reference(self, catalog: OperatorBasis) -> np.ndarray:
        """True coefficients on ``catalog``; terms missing from a trimmed catalog are dropped."""
        full = default_catalog(self.spec, catalog.kind is CatalogKind.SPIN_TI)
        w = model_coefficients(self.spec, full)
        kept = set(catalog.labels)
        self.missing = [lab for lab, x in zip(full.labels, w) if x != 0 and lab not in kept]
        return np.array([w[full.index(lab)] for lab in catalog.labels])


def _select(system, selector: dict, what: str, run: Run) -> int:
    n = len(system)
    if "index" in selector:
        k = selector["index"]
        if k >= n:
            raise ConfigError([f"/{what}/index: {k} out of range for {n} eigenpairs"])
        return k
    s = selector["random"]
    run.seeds.setdefault("eigenpair_seeds", []).append(s)
    return int(np.random.default_rng(s).integers(n))


def _model_operator(run: Run):
    cat = default_catalog(run.spec)
    return realize(model_coefficients(run.spec, cat), cat), cat


def _system(run: Run):
    H, cat = _model_operator(run)
    return H, diagonalize_nonhermitian(H.matrix, cat.basis, run.cond_limit)


def _selectors(run: Run, default_many: bool = False) -> list[dict]:
    if "eigenpairs" in run.cfg:
        return run.cfg["eigenpairs"]
    if "eigenpair" in run.cfg:
        return [run.cfg["eigenpair"]]
    if default_many:
        return [{"random": run.seed + i} for i in range(3)]
    return [{"random": run.seed}]


# ------------------------------------------------------------ experiments ----

def _reconstruct_outputs(run: Run, rep, extra: dict) -> dict:
    write_spectrum_csv(rep.null_space, run.path("qcm_spectrum.csv"), run.header)
    rep.write_coefficients_csv(run.path("coefficients.csv"), run.header)
    report = {"experiment": run.cfg["experiment"], "config_hash": run.hash}
    report.update(rep.to_dict())
    report.pop("spectrum", None)
    report.update(extra)
    return report


SPAN_TOL = 1e-6


def exp_reconstruct(run: Run) -> dict:
    _, system = _system(run)
    sel = _selectors(run)[0]
    k = _select(system, sel, "eigenpair", run)
    cat = run.catalog()
    ref = run.reference(cat)
    refs = {}
    if run.spec.name is ModelName.FERMION:
        refs["number_operator"] = number_operator_vector(cat)
    rep = reconstruct(system.pair(k), cat, ref, references=refs, rel_tol=run.null_rel, min_gap=run.min_gap)
    return _check_recovered(run, _reconstruct_outputs(run, rep, {
        "eigenpair_index": k,
        "energy": [float(system.energies[k].real), float(system.energies[k].imag)],
        "condition_number": system.condition_number,
        "catalog_size": len(cat),
    }))


def _check_recovered(run: Run, report: dict) -> dict:
    """Flag a run whose null space misses the model it was generated from."""
    report["catalog_missing_terms"] = list(run.missing)
    res = report["span_residuals"].get("reference", 0.0)
    if res > SPAN_TOL:
        msg = f"reference model outside the null space (span residual {res:.3e})"
        if run.missing:
            msg += f"; catalog lacks {len(run.missing)} model terms such as {run.missing[0]}"
        report["failure"] = msg
    return report


def exp_multistate(run: Run) -> dict:
    _, system = _system(run)
    idx = [_select(system, s, "eigenpairs", run) for s in _selectors(run, default_many=True)]
    cat = run.catalog()
    ref = run.reference(cat)
    weights = run.cfg.get("weights")
    if weights is not None and len(weights) != len(idx):
        raise ConfigError([f"/weights: {len(weights)} weights for {len(idx)} eigenpairs"])
    refs = {"number_operator": number_operator_vector(cat)} if run.spec.name is ModelName.FERMION else {}
    try:
        rep = reconstruct([system.pair(k) for k in idx], cat, ref, references=refs, weights=weights,
                          degenerate=run.cfg.get("degenerate", False),
                          rel_tol=run.null_rel, min_gap=run.min_gap)
    except QCMError as exc:
        raise ConfigError([f"/weights: {exc}"]) from None
    return _check_recovered(run, _reconstruct_outputs(run, rep, {"eigenpair_indices": idx,
                                                                 "catalog_size": len(cat)}))


def exp_spectrum(run: Run) -> dict:
    H, system = _system(run)
    with open(run.path("spectrum.csv"), "w", newline="") as fh:
        fh.write(f"# {run.header}\n")
        w = csv.writer(fh)
        w.writerow(["index", "re_energy", "im_energy"])
        for i, e in enumerate(system.energies):
            w.writerow([i, repr(float(e.real)), repr(float(e.imag))])
    e = system.energies
    scale = max(float(np.abs(e).max()), 1.0)
    real = np.abs(e.imag) <= 1e-9 * scale
    # every complex eigenvalue should have a conjugate partner when the model is PT symmetric
    unpaired = sum(1 for x in e[~real] if np.min(np.abs(e - x.conjugate())) > 1e-8 * scale)
    return {
        "experiment": "Spectrum",
        "config_hash": run.hash,
        "dimension": len(e),
        "condition_number": system.condition_number,
        "overlap_error": system.overlap_error(),
        "reconstruction_residual": system.reconstruction_residual(H.dense()),
        "num_real": int(real.sum()),
        "num_without_conjugate": unpaired,
    }


def exp_symmetries(run: Run) -> dict:
    _, system = _system(run)
    idx = [_select(system, s, "eigenpairs", run) for s in _selectors(run, default_many=True)]
    cat = run.catalog()
    ns = discover_symmetries([system.pair(k) for k in idx], cat, run.null_rel, run.min_gap)
    write_spectrum_csv(ns, run.path("qcm_spectrum.csv"), run.header)
    with open(run.path("symmetries.csv"), "w", newline="") as fh:
        fh.write(f"# {run.header}\n")
        w = csv.writer(fh)
        w.writerow(["vector", "index", "label", "re", "im"])
        for j, v in enumerate(ns.null_vectors):
            a = int(np.argmax(np.abs(v)))
            v = v * (abs(v[a]) / v[a])
            for i, (lab, x) in enumerate(zip(cat.labels, v)):
                w.writerow([j, i, lab, repr(float(x.real)), repr(float(x.imag))])
    refs = {"hamiltonian": run.reference(cat)}
    if run.spec.name is ModelName.FERMION:
        refs["number_operator"] = number_operator_vector(cat)
    report = {"experiment": "Symmetries", "config_hash": run.hash, "eigenpair_indices": idx}
    report.update(ns.to_dict())
    report.pop("spectrum")
    report["span_residuals"] = {k: ns.span_residual(v) if ns.dimension else 1.0 for k, v in refs.items()}
    return report


def exp_perturb(run: Run) -> dict:
    _, system = _system(run)
    k = _select(system, _selectors(run)[0], "eigenpair", run)
    cat = run.catalog()
    ref = run.reference(cat)
    eps = run.cfg.get("perturb", {}).get("epsilons", list(np.round(np.linspace(0.01, 0.1, 10), 10)))
    run.seeds["direction_seed"] = run.seed
    scan = perturbation_scan(system.pair(k), cat, ref, eps, seed=run.seed)
    with open(run.path("errors.csv"), "w", newline="") as fh:
        fh.write(f"# {run.header}\n")
        w = csv.writer(fh)
        w.writerow(["epsilon", "error"])
        for e, err in zip(scan.epsilons, scan.errors):
            w.writerow([repr(float(e)), repr(float(err))])
    report = {"experiment": "PerturbScan", "config_hash": run.hash, "eigenpair_index": k}
    report.update(scan.to_dict())
    return report


def exp_roundtrip(run: Run) -> dict:
    rt = run.cfg.get("roundtrip", {})
    sizes = rt.get("sizes", [4, 5, 6])
    count = rt.get("count", 20)
    tol = rt.get("tolerance", 1e-8)
    rows = []
    for i in range(count):
        n = sizes[i % len(sizes)]
        s = run.seed + i
        spec = ModelSpec(ModelName.RANDOM, n, seed=s, real_only=run.spec.real_only)
        cat = default_catalog(spec)
        w = model_coefficients(spec, cat)
        H = realize(w, cat)
        system = diagonalize_nonhermitian(H.matrix, cat.basis, run.cond_limit)
        npairs = rt.get("pairs_per_case") or pairs_needed(len(cat), len(system))
        idx = sorted(int(j) for j in np.random.default_rng(s).choice(len(system), npairs, replace=False))
        rep = reconstruct([system.pair(j) for j in idx], cat, w, rel_tol=run.null_rel, min_gap=run.min_gap)
        err = rep.comparison_error if rep.null_space.dimension == 1 else float("inf")
        rows.append({"case": i, "num_sites": n, "seed": s, "eigenpair_indices": idx,
                     "null_dimension": rep.null_space.dimension, "error": err, "passed": bool(err < tol)})
    run.seeds["case_seeds"] = [r["seed"] for r in rows]
    with open(run.path("roundtrip.csv"), "w", newline="") as fh:
        fh.write(f"# {run.header}\n")
        w = csv.writer(fh)
        w.writerow(["case", "num_sites", "seed", "num_pairs", "null_dimension", "error"])
        for r in rows:
            w.writerow([r["case"], r["num_sites"], r["seed"], len(r["eigenpair_indices"]), r["null_dimension"],
                        repr(float(r["error"]))])
    report = {"experiment": "RandomRoundTrip", "config_hash": run.hash, "tolerance": tol,
              "cases": rows, "all_passed": all(r["passed"] for r in rows)}
    if not report["all_passed"]:
        bad = [r["case"] for r in rows if not r["passed"]]
        report["failure"] = f"round-trip proportionality failed for cases {bad}"
    return report


# ------------------------------------------------------------------ hoe ----

def _probes(run: Run, ansatz: OperatorBasis, default_range: int, identity: bool = False) -> OperatorBasis:
    p = run.cfg.get("hoe", {}).get("probes", {})
    kind = p.get("kind", "ansatz" if not ansatz.basis.is_spin else "pauli")
    if kind == "ansatz":
        return ansatz
    if not ansatz.basis.is_spin:
        raise ConfigError(["/hoe/probes/kind: Pauli probes need a spin model"])
    r = min(p.get("max_range", default_range), ansatz.basis.num_sites)
    return pauli_strings_catalog(ansatz.basis, r, periodic=run.spec.periodic, include_identity=identity)


def _random_mixed(basis, seed) -> hoe_mod.DensityMatrix:
    rng = np.random.default_rng(seed)
    d = basis.dimension
    X = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = X @ X.conj().T
    return hoe_mod.DensityMatrix(basis, rho / np.trace(rho).real, normalized=True)


def _rel(a, b) -> float:
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / max(np.linalg.norm(b), 1e-300))


def _hoe_steady(run: Run) -> dict:
    H, cat = _model_operator(run)
    system = diagonalize_nonhermitian(H.matrix, cat.basis, run.cond_limit)
    e = system.energies
    real = np.where(np.abs(e.imag) <= 1e-9 * max(float(np.abs(e).max()), 1.0))[0]
    if not len(real):
        raise NumericalFailure("no real-eigenvalue eigenpair: the model has no pure steady state")
    sel = _selectors(run)[0]
    j = _select(real, sel, "eigenpair", run)
    k = int(real[j])
    ansatz = run.catalog()
    w_true = run.reference(ansatz)
    probes = _probes(run, ansatz, 3)
    rho = hoe_mod.DensityMatrix.pure(system.pair(k).right)
    s = hoe_mod.assemble_hoe(rho, probes, ansatz)
    sol = hoe_mod.solve_hoe(s, hoe_mod.SolveMode.NULL_SPACE, run.svd_rel)
    # distance of the true coefficients from the recovered solution space
    V = np.array([np.concatenate([w.real, w.imag]) for w, _ in sol.homogeneous]).T
    x = np.concatenate([w_true.real, w_true.imag])
    proj = V @ np.linalg.lstsq(V, x, rcond=None)[0] if V.size else np.zeros_like(x)
    a = int(np.argmax(np.abs(w_true)))
    omega = sol.omega * (w_true[a] / sol.omega[a]) if sol.null_dimension == 1 and sol.omega[a] != 0 else sol.omega
    sol = hoe_mod.HOESolution(omega, sol.c, sol.residual, sol.null_dimension, sol.singular_values,
                              sol.homogeneous, sol.labels)
    sol.write_csv(run.path("omega.csv"), run.header)
    return {
        "experiment": "HoeSteady", "config_hash": run.hash,
        "eigenpair_index": k, "energy": [float(e[k].real), float(e[k].imag)],
        "num_probes": len(probes), "num_ansatz": len(ansatz),
        "true_residual": s.residual(w_true),
        "null_dimension": sol.null_dimension,
        "projection_residual": _rel(proj, x),
        "recovery_error": _rel(omega, w_true) if sol.null_dimension == 1 else None,
    }


def _hoe_time_dependent(run: Run) -> dict:
    h = run.cfg.get("hoe", {})
    dt = h.get("dt", 1e-3)
    times = sorted(h.get("sample_times", [0.0, 0.5, 1.0]))
    scale_name = h.get("scale", "cos")
    scale = np.cos if scale_name == "cos" else None
    ansatz = run.catalog()
    base = run.reference(ansatz)
    probes = _probes(run, ansatz, 3)
    run.seeds["initial_state_seed"] = run.seed
    rho0 = _random_mixed(ansatz.basis, run.seed)
    gen = hoe_mod.Generator(ansatz, base, scale=scale, scale_name=scale_name)
    traj = hoe_mod.evolve(rho0, gen, times[-1] + dt, dt, t0=times[0] - dt)
    rows = []
    results = []
    for t in times:
        k = traj.index_of(t)
        truth = gen.coefficients(traj.times[k])
        entry = {"time": float(traj.times[k])}
        for mode in (hoe_mod.Derivative.EXACT, hoe_mod.Derivative.FINITE_DIFFERENCE):
            s = hoe_mod.assemble_hoe((traj, k), probes, ansatz, derivative=mode)
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", hoe_mod.DegenerateSystemWarning)
                sol = hoe_mod.solve_hoe(s, hoe_mod.SolveMode.LEAST_SQUARES, run.svd_rel)
            err = _rel(sol.omega, truth)
            entry[mode.value] = {"relative_error": err, "residual": sol.residual,
                                 "null_dimension": sol.null_dimension, "degenerate": bool(caught)}
            for lab, x, y in zip(ansatz.labels, sol.omega, truth):
                rows.append([repr(float(traj.times[k])), mode.value, lab, repr(float(x.real)),
                             repr(float(x.imag)), repr(float(y.real)), repr(float(y.imag))])
        results.append(entry)
    with open(run.path("omega.csv"), "w", newline="") as fh:
        fh.write(f"# {run.header}\n")
        w = csv.writer(fh)
        w.writerow(["time", "derivative", "label", "re_omega", "im_omega", "re_true", "im_true"])
        w.writerows(rows)
    return {"experiment": "HoeTimeDependent", "config_hash": run.hash, "dt": dt,
            "num_probes": len(probes), "num_ansatz": len(ansatz), "samples": results,
            "integrator": traj.log}


def _hoe_lindblad(run: Run) -> dict:
    if run.spec.name is ModelName.FERMION:
        raise ConfigError(["/model/name: Lindblad recovery is set up for spin models"])
    h = run.cfg.get("hoe", {})
    dt = h.get("dt", 1e-3)
    t_final = h.get("t_final", 1.0)
    every = h.get("sample_every", 100)
    n = run.spec.num_sites
    basis = run.spec.sector()
    rng = np.random.default_rng(run.seed)
    run.seeds["jump_seed"] = run.seed
    # Hermitian part of the model plus randomly mixed lowering-operator jumps
    H, _ = _model_operator(run)
    Hher = 0.5 * (H.matrix + H.matrix.conj().T)
    jb = custom_basis(basis, [spin_operator(basis, [(i, "-")]) for i in range(n)])
    nj = h.get("num_jumps", 2)
    amp = h.get("jump_amplitude", 0.3)
    l = amp * (rng.normal(size=(nj, n)) + 1j * rng.normal(size=(nj, n)))
    jumps = [sum(c * op.matrix for c, op in zip(row, jb)) for row in l]
    Heff = hoe_mod.lindblad_hamiltonian(Hher, jumps).toarray()
    ansatz = pauli_strings_catalog(basis, n, periodic=run.spec.periodic, include_identity=True)
    d = basis.dimension
    w_true = np.array([np.vdot(op.dense(), Heff) / d for op in ansatz])
    miss = float(np.abs(realize(w_true, ansatz).dense() - Heff).max())
    if miss > 1e-10:
        raise NumericalFailure(f"ansatz cannot represent the effective generator (miss {miss:.2e})")
    probes = _probes(run, ansatz, n, identity=True)
    gen = hoe_mod.Generator(ansatz, w_true, jump_basis=jb, jump_coefficients=l)
    run.seeds["initial_state_seed"] = run.seed + 1
    psi = rng.normal(size=d) + 1j * rng.normal(size=d)
    rho0 = hoe_mod.DensityMatrix.pure(Ket(basis, psi))
    traj = hoe_mod.evolve(rho0, gen, t_final, dt, save_every=every)
    systems = [hoe_mod.assemble_hoe((traj, k), probes, ansatz, jb, derivative=hoe_mod.Derivative.EXACT)
               for k in range(len(traj))]
    s = hoe_mod.stack_systems(systems)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", hoe_mod.DegenerateSystemWarning)
        sol = hoe_mod.solve_hoe(s, hoe_mod.SolveMode.LEAST_SQUARES, run.svd_rel)
    gram = gen.gram()
    c = sol.c
    sol.write_csv(run.path("omega.csv"), run.header)
    with open(run.path("c_matrix.csv"), "w", newline="") as fh:
        fh.write(f"# {run.header}\n")
        w = csv.writer(fh)
        w.writerow(["k1", "k2", "re_c", "im_c", "re_true", "im_true"])
        for i in range(c.shape[0]):
            for j in range(c.shape[1]):
                w.writerow([i, j, repr(float(c[i, j].real)), repr(float(c[i, j].imag)),
                            repr(float(gram[i, j].real)), repr(float(gram[i, j].imag))])
    return {
        "experiment": "HoeLindblad", "config_hash": run.hash,
        "num_samples": len(systems), "num_probes": len(probes), "num_ansatz": len(ansatz),
        "null_dimension": sol.null_dimension, "degenerate": bool(caught),
        "residual": sol.residual,
        "omega_error": float(np.abs(sol.omega - w_true).max()),
        "c_error": float(np.abs(c - gram).max()),
        "c_hermiticity": float(np.abs(c - c.conj().T).max()),
        "c_min_eigenvalue": float(np.linalg.eigvalsh(0.5 * (c + c.conj().T)).min()),
        "integrator": traj.log,
    }


def exp_hoe(run: Run) -> dict:
    exp = run.cfg["experiment"]
    if exp == "HoeSteady":
        return _hoe_steady(run)
    if exp == "HoeTimeDependent":
        return _hoe_time_dependent(run)
    return _hoe_lindblad(run)


RUNNERS = {
    "reconstruct": exp_reconstruct,
    "spectrum": exp_spectrum,
    "multistate": exp_multistate,
    "symmetries": exp_symmetries,
    "perturb": exp_perturb,
    "hoe": exp_hoe,
    "roundtrip": exp_roundtrip,
}


# ------------------------------------------------------------------ main ----

def resolve_config(command: str, cfg, seed: int | None = None) -> dict:
    """Validate, apply the seed override and fill the experiment name."""
    validate_config(cfg)
    cfg = copy.deepcopy(cfg)
    allowed = EXPERIMENTS[command]
    exp = cfg.setdefault("experiment", allowed[0])
    if exp not in allowed:
        raise ConfigError([f"/experiment: {exp} does not belong to the '{command}' command (expected one of {allowed})"])
    if seed is not None:
        cfg["seed"] = seed
    cfg.setdefault("seed", 0)
    cfg.pop("output_directory", None)
    return cfg


def run_experiment(command: str, cfg: dict, out) -> tuple[int, dict]:
    """Run a resolved config; returns (exit code, report)."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        run = Run(cfg, out)
    except (ModelError, OperatorError, HilbertError) as exc:
        raise ConfigError([f"/model: {exc}"]) from None
    try:
        report = RUNNERS[command](run)
        code = EXIT_NUMERICAL if report.get("failure") else EXIT_OK
    except ConfigError:
        raise
    except (ModelError, OperatorError, HilbertError) as exc:
        raise ConfigError([f"/model: {exc}"]) from None
    except EmptyNullSpaceError as exc:
        report = {"experiment": cfg["experiment"], "failure": str(exc)}
        code = EXIT_NUMERICAL
    except (NotDiagonalizableError, SpectrumError, QCMError, hoe_mod.HOEError,
            hoe_mod.StepSizeError, NumericalFailure) as exc:
        report = {"experiment": cfg["experiment"], "failure": f"{type(exc).__name__}: {exc}"}
        code = EXIT_NUMERICAL
    report["config_hash"] = run.hash
    report["exit_code"] = code
    run.write_json("report.json", report)
    manifest = {"config_hash": run.hash, "config": cfg, "seeds": run.seeds,
                "schema_version": SCHEMA_VERSION, "files": sorted(run.files + ["manifest.json"])}
    _dump(_clean(manifest), out / "manifest.json")
    _dump({"config_hash": run.hash, "runtime_seconds": time.perf_counter() - t0}, out / "timing.json")
    return code, report


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nhparent",
                                description="Parent-Hamiltonian reconstruction experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="JSON experiment config")
        s.add_argument("--out", help="output directory (default: config output_directory or ./out)")
        s.add_argument("--seed", type=int, help="overrides the config seed")
        s.add_argument("--threads", type=int, help="BLAS/LAPACK thread count")
    sub.add_parser("schema", help="print the config JSON schema")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "schema":
        print(json.dumps(CONFIG_SCHEMA, indent=2, sort_keys=True))
        return EXIT_OK
    try:
        raw = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    out = args.out or (raw.get("output_directory") if isinstance(raw, dict) else None) or "out"
    try:
        cfg = resolve_config(args.command, raw, args.seed)
        with threadpool_limits(limits=args.threads):
            code, report = run_experiment(args.command, cfg, out)
    except ConfigError as exc:
        print("config error:", file=sys.stderr)
        for prob in exc.problems:
            print(f"  {prob}", file=sys.stderr)
        return EXIT_SCHEMA
    if code != EXIT_OK:
        print(f"numerical failure: {report.get('failure')}", file=sys.stderr)
    else:
        print(f"wrote {out}")
    return code


if __name__ == "__main__":
    sys.exit(main())
