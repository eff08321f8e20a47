"""Covariance matrices of biorthogonal pairs and parent-Hamiltonian reconstruction.

Conventions
-----------
For a pair (L, R) with <L|R> = 1 and operators O_i, define

    psi_i = (1 - |R><L|) O_i |R>,      phi_i = (1 - |L><R|) O_i^dag |L>,
    C_ij  = <psi_j|psi_i> / 2<R|R>  +  <phi_i|phi_j> / 2<L|L>.

``w @ C @ w.conj()`` is then the biorthogonal energy variance of
``H(w) = sum_i w_i O_i``, and ``sum_j C_ij conj(w_j) = 0`` exactly when R and L
are right and left eigenvectors of ``H(w)``.  The eigenvectors of C with zero
eigenvalue are therefore ``conj(w)``; :func:`null_space` undoes the conjugation
and reports coefficient vectors directly.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .hilbert import BiorthogonalPair, Ket, normalize_pair
from .operators import OperatorBasis, operator_vectors
from .spectra import diagonalize_hermitian

PAIR_TOL = 1e-10
HERMITIAN_TOL = 1e-12
PSD_TOL = 1e-10
NULL_TOL = 1e-10
MIN_GAP = 1e6
ENTRY_FLOOR = 1e-8


class QCMError(ValueError):
    pass


class EmptyNullSpaceError(RuntimeError):
    """No operator in the catalog has the input states as eigenstates."""


class QCMKind(str, enum.Enum):
    HERMITIAN = "HermitianQCM"
    SINGLE_PAIR = "GeneralizedSinglePair"
    MULTI_NONDEGENERATE = "MultiNonDegenerate"
    MULTI_DEGENERATE = "MultiDegenerate"


@dataclass(frozen=True, eq=False)
class CovarianceMatrix:
    entries: np.ndarray
    kind: QCMKind
    basis: OperatorBasis = field(repr=False)
    weights: np.ndarray | None = None

    def __post_init__(self):
        c = self.entries
        scale = np.abs(c).max() if c.size else 0.0
        if scale > 0 and np.abs(c - c.conj().T).max() > HERMITIAN_TOL * scale:
            raise QCMError("covariance matrix is not Hermitian")
        if c.size:
            w = np.linalg.eigvalsh(0.5 * (c + c.conj().T))
            if w[0] < -PSD_TOL * max(w[-1], 0.0):
                raise QCMError(f"covariance matrix is not PSD: min eigenvalue {w[0]:.3e}")

    def variance(self, w) -> float:
        """Quadratic form ``w C w^dag``."""
        w = np.asarray(w, dtype=complex)
        return float(np.real(w @ self.entries @ w.conj()))


def _check_pair(pair: BiorthogonalPair) -> tuple[np.ndarray, np.ndarray]:
    ov = pair.overlap()
    if abs(ov - 1) > PAIR_TOL:
        raise QCMError(f"pair is not normalized: <L|R> = {ov:.12g}")
    return pair.right.amplitudes, pair.left.amplitudes


def _gram_blocks(R, L, OR, OdL, shift):
    """Two-term covariance for one pair with operators shifted by ``shift``.

    ``shift[i]`` is subtracted from O_i (and its conjugate from O_i^dag).
    """
    psi = OR - np.outer(R, shift)
    phi = OdL - np.outer(L, shift.conj())
    return ((psi.conj().T @ psi).T / (2 * np.vdot(R, R).real)
            + (phi.conj().T @ phi) / (2 * np.vdot(L, L).real))


def hermitian_qcm(v: Ket, obasis: OperatorBasis) -> CovarianceMatrix:
    """C_ij = <{O_i, O_j}>/2 - <O_i><O_j> for a normalized state and Hermitian operators."""
    if abs(v.norm() - 1) > PAIR_TOL:
        raise QCMError(f"state is not normalized: |v| = {v.norm():.12g}")
    for op in obasis:
        if not op.is_hermitian:
            raise QCMError(f"operator {op.label} is not Hermitian")
    U = operator_vectors(obasis, v.amplitudes)
    e = np.real(v.amplitudes.conj() @ U)
    C = np.real(U.conj().T @ U) - np.outer(e, e)
    return CovarianceMatrix(C.astype(complex), QCMKind.HERMITIAN, obasis)


def generalized_qcm(pair: BiorthogonalPair, obasis: OperatorBasis) -> CovarianceMatrix:
    R, L = _check_pair(pair)
    OR = operator_vectors(obasis, R)
    OdL = operator_vectors(obasis, L, adjoint=True)
    expect = L.conj() @ OR
    return CovarianceMatrix(_gram_blocks(R, L, OR, OdL, expect), QCMKind.SINGLE_PAIR, obasis)


def multi_qcm(pairs, obasis: OperatorBasis, weights=None, degenerate: bool = False) -> CovarianceMatrix:
    """Covariance matrix for several pairs.

    Non-degenerate: ``sum_i p_i C^{L_i R_i}``; its null space holds every
    operator having all pairs as eigenpairs.  Degenerate: each O_i is shifted
    by ``sum_m p_m <L_m|O_i|R_m>`` and the two-term covariance is summed over
    the pairs without projectors, so null vectors also force a common
    eigenvalue.  Weights must be positive, and sum to one when degenerate.
    """
    pairs = list(pairs)
    if not pairs:
        raise QCMError("need at least one pair")
    p = np.full(len(pairs), 1.0 / len(pairs)) if weights is None else np.asarray(weights, float)
    if p.shape != (len(pairs),):
        raise QCMError(f"{len(p)} weights for {len(pairs)} pairs")
    if np.any(p <= 0):
        raise QCMError("weights must be positive")
    if degenerate and abs(p.sum() - 1) > 1e-12:
        raise QCMError(f"degenerate weights must sum to 1, got {p.sum():.15g}")
    for pr in pairs:
        if not pr.right.basis.same_as(obasis.basis):
            raise QCMError("pair and operator catalog live on different bases")
    vecs = []
    for pr in pairs:
        R, L = _check_pair(pr)
        vecs.append((R, L, operator_vectors(obasis, R), operator_vectors(obasis, L, adjoint=True)))
    M = len(obasis)
    C = np.zeros((M, M), dtype=complex)
    if degenerate:
        shift = sum(pm * (L.conj() @ OR) for pm, (R, L, OR, _) in zip(p, vecs))
        for R, L, OR, OdL in vecs:
            C += _gram_blocks(R, L, OR, OdL, shift)
        kind = QCMKind.MULTI_DEGENERATE
    else:
        for pm, (R, L, OR, OdL) in zip(p, vecs):
            C += pm * _gram_blocks(R, L, OR, OdL, L.conj() @ OR)
        kind = QCMKind.MULTI_NONDEGENERATE
    return CovarianceMatrix(C, kind, obasis, p)


@dataclass(frozen=True, eq=False)
class NullSpaceResult:
    spectrum: np.ndarray
    vectors: np.ndarray  # (M, k); column j is a coefficient vector w with C conj(w) = 0
    absolute_tolerance: float
    gap_ratio: float
    min_gap: float = MIN_GAP
    forced_dimension: bool = False

    @property
    def dimension(self) -> int:
        return self.vectors.shape[1]

    @property
    def null_vectors(self) -> list[np.ndarray]:
        return [self.vectors[:, j] for j in range(self.dimension)]

    @property
    def low_confidence(self) -> bool:
        return bool(self.gap_ratio < self.min_gap)

    def projector(self) -> np.ndarray:
        return self.vectors @ self.vectors.conj().T

    def span_residual(self, w) -> float:
        """||w - P w|| / ||w|| for the orthogonal projector P onto the null space."""
        w = np.asarray(w, dtype=complex)
        return float(np.linalg.norm(w - self.projector() @ w) / np.linalg.norm(w))

    def to_dict(self) -> dict:
        return {
            "null_dimension": self.dimension,
            "absolute_tolerance": self.absolute_tolerance,
            "gap_ratio": self.gap_ratio,
            "low_confidence": self.low_confidence,
            "forced_dimension": self.forced_dimension,
            "spectrum": [float(x) for x in self.spectrum],
        }


def null_space(C, rel_tol: float = NULL_TOL, min_gap: float = MIN_GAP,
               dimension: int | None = None) -> NullSpaceResult:
    """Eigenvectors of C below ``rel_tol * max eigenvalue``, returned as coefficient vectors.

    ``gap_ratio`` divides the first retained eigenvalue by the last null one
    (floored at machine precision); for an empty null space it divides the
    smallest eigenvalue by the cutoff.  ``dimension`` overrides the cutoff
    and keeps that many lowest eigenvectors.
    """
    entries = C.entries if isinstance(C, CovarianceMatrix) else np.asarray(C, dtype=complex)
    spec = diagonalize_hermitian(entries)
    w, V = spec.eigenvalues, spec.eigenvectors
    top = max(float(np.abs(w).max()), 1e-300) if w.size else 1e-300
    abs_tol = rel_tol * top
    k = int(np.sum(w < abs_tol)) if dimension is None else int(dimension)
    floor = np.finfo(float).eps * top
    if k >= len(w):
        gap = np.inf
    elif k == 0:
        gap = float(w[0] / abs_tol)
    else:
        gap = float(w[k] / max(abs(w[k - 1]), floor))
    return NullSpaceResult(w, V[:, :k].conj(), abs_tol, gap, min_gap, dimension is not None)


def max_relative_error(w, reference, floor: float = ENTRY_FLOOR) -> float:
    """max_i |(w_i - ref_i) / ref_i| over entries with |ref_i| > floor."""
    w = np.asarray(w, dtype=complex)
    ref = np.asarray(reference, dtype=complex)
    mask = np.abs(ref) > floor
    return float(np.max(np.abs((w[mask] - ref[mask]) / ref[mask])))


def anchor_index(reference) -> int:
    """First entry of largest magnitude."""
    return int(np.argmax(np.abs(np.asarray(reference))))


@dataclass(frozen=True, eq=False)
class ReconstructionReport:
    null_space: NullSpaceResult
    coefficients: np.ndarray
    reference: np.ndarray | None = None
    comparison_error: float | None = None
    off_support_error: float | None = None
    span_residuals: dict = field(default_factory=dict)
    anchor: int | None = None
    basis: OperatorBasis | None = field(default=None, repr=False)

    @property
    def proportional(self) -> bool | None:
        """Whether a unique solution matches the reference (None without one)."""
        if self.reference is None or self.null_space.dimension != 1:
            return None
        return bool(self.comparison_error < 1e-6)

    def to_dict(self) -> dict:
        d = self.null_space.to_dict()
        d.update({
            "comparison_error": self.comparison_error,
            "off_support_error": self.off_support_error,
            "span_residuals": dict(self.span_residuals),
            "anchor": self.anchor,
            "proportional": self.proportional,
        })
        return d

    def write_coefficients_csv(self, path, header: str | None = None) -> None:
        labels = self.basis.labels if self.basis is not None else [""] * len(self.coefficients)
        ref = self.reference if self.reference is not None else np.full(len(labels), np.nan)
        with open(path, "w", newline="") as fh:
            if header:
                fh.write(f"# {header}\n")
            w = csv.writer(fh)
            w.writerow(["index", "label", "re_ref", "im_ref", "re_rec", "im_rec"])
            for i, (lab, r, c) in enumerate(zip(labels, ref, self.coefficients)):
                w.writerow([i, lab, repr(float(r.real)), repr(float(r.imag)),
                            repr(float(c.real)), repr(float(c.imag))])


def reconstruct(pairs, obasis: OperatorBasis, reference=None, references: dict | None = None,
                weights=None, degenerate: bool = False, rel_tol: float = NULL_TOL,
                min_gap: float = MIN_GAP, dimension: int | None = None) -> ReconstructionReport:
    """Covariance matrix -> null space -> coefficients compared against ``reference``.

    A one-dimensional solution is rescaled so its anchor entry (largest
    reference magnitude) equals the reference there.  For larger null spaces
    the reference is projected onto the solution subspace instead.
    ``references`` maps names to coefficient vectors whose distance from the
    null space is reported in ``span_residuals``.
    """
    if isinstance(pairs, BiorthogonalPair):
        C = generalized_qcm(pairs, obasis)
    else:
        C = multi_qcm(pairs, obasis, weights, degenerate)
    ns = null_space(C, rel_tol, min_gap, dimension)
    if ns.dimension == 0:
        raise EmptyNullSpaceError(
            "empty null space: no operator spanned by the catalog has the input "
            f"states as eigenstates (smallest eigenvalue {ns.spectrum[0]:.3e})")
    refs = dict(references or {})
    anchor = None
    if reference is None:
        v = ns.vectors[:, 0]
        a = anchor_index(v)
        coeffs = v * (abs(v[a]) / v[a])
        err = off = None
    else:
        ref = np.asarray(reference, dtype=complex)
        refs.setdefault("reference", ref)
        if ns.dimension == 1:
            anchor = anchor_index(ref)
            v = ns.vectors[:, 0]
            coeffs = v * (ref[anchor] / v[anchor])
        else:
            coeffs = ns.projector() @ ref
        err = max_relative_error(coeffs, ref)
        zero = np.abs(ref) <= ENTRY_FLOOR
        off = float(np.abs(coeffs[zero]).max() / np.abs(ref).max()) if zero.any() else 0.0
    spans = {name: ns.span_residual(r) for name, r in refs.items()}
    return ReconstructionReport(ns, coeffs, None if reference is None else np.asarray(reference, complex),
                                err, off, spans, anchor, obasis)


def pairs_needed(num_operators: int, dimension: int) -> int:
    """Eigenpairs to feed ``multi_qcm`` so a generic catalog model is pinned down.

    One pair imposes about 2(D - 1) complex conditions on M coefficients; when
    that falls short, ``ceil(M / (D - 1)) + 1`` pairs are used.
    """
    if dimension < 2:
        raise QCMError("need a Hilbert space of dimension at least 2")
    if 2 * (dimension - 1) > num_operators:
        return 1
    return min(dimension, -(-num_operators // (dimension - 1)) + 1)


def discover_symmetries(pairs, candidates: OperatorBasis, rel_tol: float = NULL_TOL,
                        min_gap: float = MIN_GAP) -> NullSpaceResult:
    """Operators of the candidate span sharing every given eigenpair (uniform weights)."""
    return null_space(multi_qcm(pairs, candidates), rel_tol, min_gap)


def eigen_residuals(pair: BiorthogonalPair, H) -> tuple[float, float]:
    """||(1 - |R><L|) H|R>|| and ||(1 - |L><R|) H^dag |L>|| for an operator or matrix H."""
    R, L = pair.right.amplitudes, pair.left.amplitudes
    m = H.matrix if hasattr(H, "matrix") else H
    HR = m @ R
    HdL = m.conj().T @ L
    return (float(np.linalg.norm(HR - R * np.vdot(L, HR))),
            float(np.linalg.norm(HdL - L * np.vdot(R, HdL))))


@dataclass(frozen=True)
class PerturbationScan:
    epsilons: np.ndarray
    errors: np.ndarray
    failures: dict
    slope: float
    intercept: float
    r_squared: float
    null_dimension: int

    def to_dict(self) -> dict:
        return {
            "epsilons": [float(e) for e in self.epsilons],
            "errors": [float(e) for e in self.errors],
            "failures": {str(k): v for k, v in self.failures.items()},
            "fit": {"slope": self.slope, "intercept": self.intercept, "r_squared": self.r_squared},
            "null_dimension": self.null_dimension,
        }


def perturb_right(pair: BiorthogonalPair, eps: float, direction: np.ndarray) -> BiorthogonalPair:
    """(L, R + eps R') renormalized to <L|R_p> = 1; R is taken with unit norm first."""
    s = pair.right.norm()
    R = pair.right.amplitudes / s
    L = pair.left.amplitudes * s
    basis = pair.right.basis
    return normalize_pair(Ket(basis, L), Ket(basis, R + eps * direction))


def random_direction(dim: int, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return v / np.linalg.norm(v)


def perturbation_scan(pair: BiorthogonalPair, obasis: OperatorBasis, reference, epsilons,
                      seed: int = 0, dimension: int | None = None) -> PerturbationScan:
    """Reconstruction error as the right state is pushed along one random direction.

    The solution dimension is frozen at the unperturbed value (or ``dimension``)
    since perturbation lifts the physical null eigenvalue off zero.  Failed
    reconstructions are recorded in ``failures`` and skipped by the fit.
    """
    eps = np.asarray(epsilons, dtype=float)
    if np.any(eps < 0) or np.any(eps >= 0.5):
        raise QCMError("epsilons must lie in [0, 0.5)")
    if dimension is None:
        dimension = reconstruct(pair, obasis, reference).null_space.dimension
    direction = random_direction(pair.right.basis.dimension, seed)
    errors = np.full(len(eps), np.nan)
    failures = {}
    for k, e in enumerate(eps):
        try:
            rep = reconstruct(perturb_right(pair, e, direction), obasis, reference, dimension=dimension)
            errors[k] = rep.comparison_error
        except (QCMError, EmptyNullSpaceError, ValueError) as exc:
            failures[float(e)] = str(exc)
    ok = np.isfinite(errors)
    if ok.sum() >= 2 and np.ptp(eps[ok]) > 0:
        fit = stats.linregress(eps[ok], errors[ok])
        slope, icpt, r2 = float(fit.slope), float(fit.intercept), float(fit.rvalue**2)
    else:
        slope = icpt = r2 = float("nan")
    return PerturbationScan(eps, errors, failures, slope, icpt, r2, int(dimension))


def write_spectrum_csv(ns: NullSpaceResult, path, header: str | None = None) -> None:
    """Ascending |eigenvalue| of C, one row per eigenvalue."""
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(["index", "abs_eigenvalue", "eigenvalue"])
        for i, x in enumerate(sorted(ns.spectrum, key=abs)):
            w.writerow([i, repr(float(abs(x))), repr(float(x))])
