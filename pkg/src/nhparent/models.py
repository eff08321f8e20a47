"""Benchmark Hamiltonians as coefficient vectors over the standard catalogs."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .hilbert import BasisKind, SectorBasis, make_basis
from .operators import (
    CatalogKind,
    OperatorBasis,
    fermion_basis_catalog,
    spin_basis_catalog,
)


class ModelError(ValueError):
    pass


class ModelName(str, enum.Enum):
    LEE_YANG = "LeeYang"
    FERMION = "InteractingFermion"
    RANDOM = "RandomLocal"


class PotentialKind(str, enum.Enum):
    ZERO = "Zero"
    STAGGERED = "Staggered"
    BIASED = "Biased"
    RANDOM = "Random"


_REQUIRED = {
    ModelName.LEE_YANG: ("lambda", "h_z"),
    ModelName.FERMION: ("J", "g", "U"),
    ModelName.RANDOM: (),
}


@dataclass(frozen=True)
class ModelSpec:
    """One benchmark model.

    Lee-Yang parameters are ``lambda`` and ``h_z``; the fermion model takes
    ``J``, ``g``, ``U`` plus an on-site potential profile of amplitude
    ``potential_amplitude``.  ``num_particles`` defaults to half filling.
    """

    name: ModelName
    num_sites: int
    parameters: dict = field(default_factory=dict)
    potential_kind: PotentialKind = PotentialKind.ZERO
    potential_amplitude: float = 0.0
    seed: int = 0
    num_particles: int | None = None
    periodic: bool = True
    real_only: bool = False

    def __post_init__(self):
        object.__setattr__(self, "name", ModelName(self.name))
        object.__setattr__(self, "potential_kind", PotentialKind(self.potential_kind))
        missing = [k for k in _REQUIRED[self.name] if k not in self.parameters]
        if missing:
            raise ModelError(f"{self.name.value} needs parameters {missing}")

    def sector(self) -> SectorBasis:
        if self.name is ModelName.FERMION:
            n_p = self.num_sites // 2 if self.num_particles is None else self.num_particles
            return make_basis(BasisKind.FERMION, self.num_sites, n_p)
        return make_basis(BasisKind.SPIN, self.num_sites)

    def to_dict(self) -> dict:
        return {
            "name": self.name.value,
            "num_sites": self.num_sites,
            "parameters": dict(self.parameters),
            "potential_kind": self.potential_kind.value,
            "potential_amplitude": self.potential_amplitude,
            "seed": self.seed,
            "num_particles": self.num_particles,
            "periodic": self.periodic,
            "real_only": self.real_only,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**d)


def _project(catalog: OperatorBasis, terms: dict) -> np.ndarray:
    try:
        return catalog.vector(terms)
    except ValueError as exc:
        raise ModelError(f"catalog lacks a model term: {exc}") from None


def lee_yang_coefficients(spec: ModelSpec, catalog: OperatorBasis) -> np.ndarray:
    """-(sx_i + lambda sz_i sz_{i+1} + i h_z sz_i) on a site-resolved or translation-invariant catalog."""
    if spec.name is not ModelName.LEE_YANG:
        raise ModelError(f"expected a LeeYang spec, got {spec.name.value}")
    lam = spec.parameters["lambda"]
    hz = spec.parameters["h_z"]
    n = spec.num_sites
    if catalog.kind is CatalogKind.SPIN_TI:
        terms = {"sum[sx_0]": -1.0, "sum[sz_0 sz_1]": -lam, "sum[sz_0]": -1j * hz}
    else:
        terms = {}
        for i in range(n):
            terms[f"sx_{i}"] = -1.0
            terms[f"sz_{i}"] = -1j * hz
        last = n if spec.periodic else n - 1
        for i in range(last):
            terms[f"sz_{i} sz_{(i + 1) % n}"] = -lam
    return _project(catalog, terms)


def potential_profile(spec: ModelSpec) -> np.ndarray:
    """On-site energies h_i; sites are numbered 1..N for the staggered and biased profiles."""
    n = spec.num_sites
    h = spec.potential_amplitude
    i = np.arange(1, n + 1)
    kind = spec.potential_kind
    if kind is PotentialKind.ZERO:
        return np.zeros(n)
    if kind is PotentialKind.STAGGERED:
        return h * (-1.0) ** i
    if kind is PotentialKind.BIASED:
        return h * i
    return np.random.default_rng(spec.seed).uniform(-h, h, size=n)


def fermion_coefficients(spec: ModelSpec, catalog: OperatorBasis) -> np.ndarray:
    """-J(e^g c_i^dag c_{i+1} + e^-g c_{i+1}^dag c_i) + U n_i n_{i+1} + h_i n_i."""
    if spec.name is not ModelName.FERMION:
        raise ModelError(f"expected an InteractingFermion spec, got {spec.name.value}")
    J, g, U = (spec.parameters[k] for k in ("J", "g", "U"))
    n = spec.num_sites
    terms = {f"n_{i}": h for i, h in enumerate(potential_profile(spec))}
    last = n if spec.periodic else n - 1
    for i in range(last):
        j = (i + 1) % n
        terms[f"cdag_{i} c_{j}"] = -J * np.exp(g)
        terms[f"cdag_{j} c_{i}"] = -J * np.exp(-g)
        terms[f"n_{i} n_{j}"] = U
    return _project(catalog, terms)


def random_local_coefficients(catalog: OperatorBasis, seed: int, real_only: bool = False) -> np.ndarray:
    """Seeded coefficients: uniform on [-1, 1] if ``real_only`` else uniform on the unit disk."""
    rng = np.random.default_rng(seed)
    m = len(catalog)
    if real_only:
        return rng.uniform(-1.0, 1.0, m).astype(complex)
    r = np.sqrt(rng.uniform(0.0, 1.0, m))
    return r * np.exp(2j * np.pi * rng.uniform(0.0, 1.0, m))


def default_catalog(spec: ModelSpec, translation_invariant: bool = False) -> OperatorBasis:
    basis = spec.sector()
    if spec.name is ModelName.FERMION:
        return fermion_basis_catalog(basis, periodic=spec.periodic)
    return spin_basis_catalog(basis, translation_invariant=translation_invariant,
                              periodic=spec.periodic)


def model_coefficients(spec: ModelSpec, catalog: OperatorBasis) -> np.ndarray:
    if spec.name is ModelName.LEE_YANG:
        return lee_yang_coefficients(spec, catalog)
    if spec.name is ModelName.FERMION:
        return fermion_coefficients(spec, catalog)
    return random_local_coefficients(catalog, spec.seed, spec.real_only)


def number_operator_vector(catalog: OperatorBasis) -> np.ndarray:
    """One-hot sum over the ``n_i`` entries of a fermion catalog (total particle number)."""
    w = np.zeros(len(catalog), dtype=complex)
    for k, lab in enumerate(catalog.labels):
        if lab.startswith("n_") and " " not in lab:
            w[k] = 1.0
    return w
