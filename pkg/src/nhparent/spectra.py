"""Dense eigensolvers: biorthogonal pairs for non-Hermitian H, ordered spectra for Hermitian C."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .hilbert import BiorthogonalPair, Ket, SectorBasis

COND_LIMIT = 1e12
ASYMMETRY_TOL = 1e-10


class SpectrumError(RuntimeError):
    pass


class NotDiagonalizableError(SpectrumError):
    pass


@dataclass(frozen=True, eq=False)
class BiorthogonalSystem:
    """Eigenvalues with right vectors (columns of ``right``) and dual left vectors.

    ``left[:, i]`` is |L_i>, so ``left.conj().T @ right`` is the identity.
    Pairs are sorted by real part, then imaginary part.
    """

    energies: np.ndarray
    right: np.ndarray
    left: np.ndarray
    condition_number: float
    basis: SectorBasis | None = None

    @property
    def diagonalizable(self) -> bool:
        return self.condition_number <= COND_LIMIT

    def __len__(self) -> int:
        return len(self.energies)

    def pair(self, i: int) -> BiorthogonalPair:
        if self.basis is None:
            raise SpectrumError("system was diagonalized without a SectorBasis")
        return BiorthogonalPair(Ket(self.basis, self.left[:, i]), Ket(self.basis, self.right[:, i]),
                                complex(self.energies[i]))

    @property
    def pairs(self) -> list[BiorthogonalPair]:
        return [self.pair(i) for i in range(len(self))]

    def overlap_error(self) -> float:
        """max |<L_i|R_j> - delta_ij|."""
        g = self.left.conj().T @ self.right
        return float(np.abs(g - np.eye(len(g))).max())

    def reconstruction_residual(self, H: np.ndarray) -> float:
        """||H - sum_i e_i |R_i><L_i||_2 / ||H||_2."""
        Hrec = (self.right * self.energies) @ self.left.conj().T
        return float(np.linalg.norm(H - Hrec, 2) / max(np.linalg.norm(H, 2), 1e-300))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "re_energy", "im_energy"])
            for i, e in enumerate(self.energies):
                w.writerow([i, repr(float(e.real)), repr(float(e.imag))])


def _fix_phase(R: np.ndarray, L: np.ndarray) -> None:
    """Make the largest-magnitude component of each R_i real positive, keeping <L_i|R_i>."""
    idx = np.argmax(np.abs(R), axis=0)
    ph = R[idx, np.arange(R.shape[1])]
    ph = ph / np.abs(ph)
    R /= ph
    L /= ph


def _order(w: np.ndarray) -> np.ndarray:
    # rounding the keys keeps conjugate pairs adjacent despite last-bit noise
    scale = max(float(np.abs(w).max()), 1.0)
    re = np.round(w.real / scale, 11)
    im = np.round(w.imag / scale, 11)
    return np.lexsort((im, re))


def diagonalize_nonhermitian(H, basis: SectorBasis | None = None,
                             cond_limit: float = COND_LIMIT, strict: bool = True) -> BiorthogonalSystem:
    """Right eigenvectors from a general eigensolver; left vectors from the inverse.

    ``L = inv(V)^dagger`` makes <L_i|R_j> = delta_ij by construction, also inside
    degenerate blocks.  Hermitian input is routed to ``eigh`` so that L = R.
    With ``strict`` a condition number of V above ``cond_limit`` raises
    :class:`NotDiagonalizableError`.
    """
    H = np.asarray(H.toarray() if hasattr(H, "toarray") else H, dtype=complex)
    if H.ndim != 2 or H.shape[0] != H.shape[1] or H.shape[0] == 0:
        raise SpectrumError(f"need a non-empty square matrix, got shape {H.shape}")
    if not np.all(np.isfinite(H)):
        raise SpectrumError("matrix has non-finite entries")
    hnorm = np.abs(H).max()
    if np.abs(H - H.conj().T).max() <= 1e-14 * max(hnorm, 1e-300):
        w, V = la.eigh(H)
        w = w.astype(complex)
        order = _order(w)
        w, V = w[order], V[:, order]
        L = V.copy()
        cond = 1.0
    else:
        w, V = la.eig(H)
        order = _order(w)
        w, V = w[order], V[:, order]
        s = la.svdvals(V)
        cond = float(s[0] / s[-1]) if s[-1] > 0 else np.inf
        if cond > cond_limit:
            if strict:
                raise NotDiagonalizableError(
                    f"right-eigenvector matrix has condition number {cond:.3e} > {cond_limit:.1e}")
            L = np.full_like(V, np.nan)
        else:
            L = la.inv(V).conj().T
    _fix_phase(V, L)
    return BiorthogonalSystem(w, V, L, cond, basis)


@dataclass(frozen=True, eq=False)
class HermitianSpectrum:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    asymmetry: float


def diagonalize_hermitian(C, tol: float = ASYMMETRY_TOL) -> HermitianSpectrum:
    """Ascending spectrum of a Hermitian matrix, after symmetrizing by (C + C^dag)/2.

    Relative asymmetry above ``tol`` is treated as an upstream bug and rejected.
    """
    C = np.asarray(C, dtype=complex)
    scale = np.linalg.norm(C, 2) if C.size else 0.0
    asym = float(np.linalg.norm(C - C.conj().T, 2) / scale) if scale > 0 else 0.0
    if asym > tol:
        raise SpectrumError(f"matrix is not Hermitian: relative asymmetry {asym:.3e}")
    w, V = la.eigh(0.5 * (C + C.conj().T))
    return HermitianSpectrum(w, V, asym)

