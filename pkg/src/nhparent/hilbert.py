"""Finite lattice Hilbert spaces, kets and biorthogonal pairs.

Basis convention shared by every module: a configuration is an ``N``-bit
integer with site 0 on the least-significant bit, and basis indices enumerate
the allowed configurations in ascending integer order.  For spin-1/2 chains a
clear bit is spin up (sigma^z = +1); for fermions a set bit is an occupied
orbital.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from math import comb

import numpy as np

MAX_SITES = 16
OVERLAP_TOL = 1e-12


class HilbertError(ValueError):
    """Invalid basis request or basis mismatch."""


class SelfOrthogonalError(HilbertError):
    """Raised when <L|R> vanishes, so the pair cannot be normalized."""


class BasisKind(str, enum.Enum):
    SPIN = "SpinHalfChain"
    FERMION = "FermionFixedNumber"


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class SectorBasis:
    kind: BasisKind
    num_sites: int
    num_particles: int | None = None
    configs: np.ndarray = field(repr=False, default=None)

    @property
    def dimension(self) -> int:
        return len(self.configs)

    @property
    def is_spin(self) -> bool:
        return self.kind is BasisKind.SPIN

    def encode(self, index) -> np.ndarray | int:
        """Basis index (or array of indices) -> bit configuration."""
        return self.configs[index]

    def decode(self, config) -> np.ndarray | int:
        """Bit configuration(s) -> basis index.  Raises on configs outside the sector."""
        config = np.asarray(config)
        if self.is_spin:
            idx = config.astype(np.int64)
            ok = (idx >= 0) & (idx < self.dimension)
        else:
            idx = np.searchsorted(self.configs, config)
            idx = np.minimum(idx, self.dimension - 1)
            ok = self.configs[idx] == config
        if not np.all(ok):
            raise HilbertError("configuration outside the sector")
        return int(idx) if idx.ndim == 0 else idx

    def occupations(self) -> np.ndarray:
        """(D, N) array of bits, column i = bit of site i."""
        return ((self.configs[:, None] >> np.arange(self.num_sites)) & 1).astype(np.int8)

    def same_as(self, other: "SectorBasis") -> bool:
        return (
            self.kind is other.kind
            and self.num_sites == other.num_sites
            and self.num_particles == other.num_particles
        )

    def to_dict(self) -> dict:
        d = {"kind": self.kind.value, "num_sites": self.num_sites}
        if self.kind is BasisKind.FERMION:
            d["num_particles"] = self.num_particles
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SectorBasis":
        return make_basis(d["kind"], d["num_sites"], d.get("num_particles"))


def make_basis(kind, num_sites: int, num_particles: int | None = None,
               max_sites: int = MAX_SITES) -> SectorBasis:
    """Enumerate a spin-1/2 chain or a fixed-particle-number fermion sector.

    Configurations are sorted ascending as integers (site 0 = LSB).  Chains
    longer than ``max_sites`` are rejected since states are stored densely.
    """
    kind = BasisKind(kind)
    if num_sites < 1:
        raise HilbertError(f"num_sites must be positive, got {num_sites}")
    if num_sites > max_sites:
        raise HilbertError(f"num_sites={num_sites} exceeds the memory cap of {max_sites}")
    all_configs = np.arange(2**num_sites, dtype=np.int64)
    if kind is BasisKind.SPIN:
        return SectorBasis(kind, num_sites, None, _frozen(all_configs))
    if num_particles is None or not 0 <= num_particles <= num_sites:
        raise HilbertError(f"invalid particle number {num_particles} for {num_sites} sites")
    popcount = ((all_configs[:, None] >> np.arange(num_sites)) & 1).sum(axis=1)
    configs = all_configs[popcount == num_particles]
    assert len(configs) == comb(num_sites, num_particles)
    return SectorBasis(kind, num_sites, int(num_particles), _frozen(configs))


@dataclass(frozen=True, eq=False)
class Ket:
    basis: SectorBasis
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if amps.shape[0] != self.basis.dimension:
            raise HilbertError(
                f"expected {self.basis.dimension} amplitudes, got {amps.shape[0]}")
        if not np.any(amps):
            raise HilbertError("zero vector is not a valid ket")
        object.__setattr__(self, "amplitudes", _frozen(amps))

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def scaled(self, factor: complex) -> "Ket":
        return Ket(self.basis, factor * self.amplitudes)

    def normalized(self) -> "Ket":
        return self.scaled(1.0 / self.norm())

    def to_dict(self) -> dict:
        return {
            "basis": self.basis.to_dict(),
            "amplitudes": [[float(a.real), float(a.imag)] for a in self.amplitudes],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Ket":
        basis = SectorBasis.from_dict(d["basis"])
        amps = np.array(d["amplitudes"], dtype=float)
        return cls(basis, amps[:, 0] + 1j * amps[:, 1])


def inner(bra: Ket, ket: Ket) -> complex:
    """<bra|ket> = sum_k conj(bra_k) ket_k."""
    if not bra.basis.same_as(ket.basis):
        raise HilbertError("kets live on different bases")
    return complex(np.vdot(bra.amplitudes, ket.amplitudes))


@dataclass(frozen=True, eq=False)
class BiorthogonalPair:
    left: Ket
    right: Ket
    energy: complex | None = None

    def overlap(self) -> complex:
        return inner(self.left, self.right)

    def to_dict(self) -> dict:
        d = {"left": self.left.to_dict(), "right": self.right.to_dict()}
        if self.energy is not None:
            d["energy"] = [self.energy.real, self.energy.imag]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BiorthogonalPair":
        energy = d.get("energy")
        return normalize_pair(
            Ket.from_dict(d["left"]), Ket.from_dict(d["right"]),
            None if energy is None else complex(*energy))


def normalize_pair(left: Ket, right: Ket, energy: complex | None = None,
                   tol: float = OVERLAP_TOL) -> BiorthogonalPair:
    """Rescale ``right`` by 1/<L|R> so the pair has unit biorthogonal overlap.

    The test ``|<L|R>| < tol`` is made on unit-normalized copies, so it is a
    statement about the angle between the states, not their lengths.
    """
    ov = inner(left, right)
    if abs(ov) < tol * left.norm() * right.norm():
        raise SelfOrthogonalError(
            f"|<L|R>| = {abs(ov):.3e}: self-orthogonal pair (exceptional point?)")
    if ov == 1:
        return BiorthogonalPair(left, right, energy)
    return BiorthogonalPair(left, right.scaled(1.0 / ov), energy)
