import numpy as np
import pytest
import scipy.linalg as la
from hypothesis import given
from hypothesis import strategies as st

from conftest import fermion_spec, lee_yang_spec, solved
from nhparent.hilbert import Ket, make_basis, normalize_pair
from nhparent.models import ModelSpec, default_catalog, model_coefficients, number_operator_vector
from nhparent.operators import custom_basis, identity, pauli_string, pauli_strings_catalog, realize
from nhparent.qcm import (
    CovarianceMatrix,
    EmptyNullSpaceError,
    QCMError,
    QCMKind,
    discover_symmetries,
    eigen_residuals,
    generalized_qcm,
    hermitian_qcm,
    max_relative_error,
    multi_qcm,
    null_space,
    pairs_needed,
    reconstruct,
    write_spectrum_csv,
)
from nhparent.spectra import diagonalize_nonhermitian


def random_model(n, seed):
    spec = ModelSpec("RandomLocal", n, seed=seed)
    cat = default_catalog(spec)
    w = model_coefficients(spec, cat)
    s = diagonalize_nonhermitian(realize(w, cat).matrix, cat.basis)
    return cat, w, s


def direct_variance(pair, H):
    """Dense-projector evaluation of the two-sided energy variance."""
    R = pair.right.amplitudes
    L = pair.left.amplitudes
    d = len(R)
    PR = np.eye(d) - np.outer(R, L.conj())
    PL = np.eye(d) - np.outer(L, R.conj())
    a = PR @ H @ R
    b = PL @ H.conj().T @ L
    return (np.vdot(a, a) / (2 * np.vdot(R, R)) + np.vdot(b, b) / (2 * np.vdot(L, L))).real


def synthetic_pairs(eps, seed=0):
    """Two-site operator with prescribed spectrum; every operator lies in the 16 Pauli strings."""
    rng = np.random.default_rng(seed)
    b = make_basis("SpinHalfChain", 2)
    V = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    L = la.inv(V).conj().T
    H = (V * eps) @ L.conj().T
    cat = pauli_strings_catalog(b, 2, include_identity=True)
    w = np.array([np.trace(op.dense() @ H) / 4 for op in cat])
    pairs = [normalize_pair(Ket(b, L[:, i]), Ket(b, V[:, i]), eps[i]) for i in range(4)]
    return cat, w, pairs


def principal_angles(A, B):
    return la.subspace_angles(A, B)


# ---------------------------------------------------------------- hermitian ----

def test_hermitian_qcm_single_spin():
    b = make_basis("SpinHalfChain", 1)
    cat = custom_basis(b, [pauli_string(b, [(0, "z")])])
    np.testing.assert_allclose(hermitian_qcm(Ket(b, [1, 0]), cat).entries, [[0]], atol=1e-15)
    np.testing.assert_allclose(hermitian_qcm(Ket(b, [1, 1]).normalized(), cat).entries, [[1]], atol=1e-15)


def test_hermitian_qcm_matches_dense_definition(rng):
    b = make_basis("SpinHalfChain", 3)
    cat = default_catalog(lee_yang_spec(0.0, n=3))
    v = rng.normal(size=8) + 1j * rng.normal(size=8)
    v /= np.linalg.norm(v)
    C = hermitian_qcm(Ket(b, v), cat).entries
    ops = [op.dense() for op in cat]
    ev = np.array([np.vdot(v, O @ v) for O in ops])
    for i in (0, 5, 20):
        for j in (3, 11, 35):
            sym = 0.5 * np.vdot(v, (ops[i] @ ops[j] + ops[j] @ ops[i]) @ v)
            assert abs(C[i, j] - (sym - ev[i] * ev[j])) < 1e-12


def test_ising_ground_state_null_vector():
    spec = lee_yang_spec(0.0, n=8)
    ti = default_catalog(spec, translation_invariant=True)
    w = model_coefficients(spec, ti)
    H = realize(w, ti).dense()
    gs = np.linalg.eigh(H)[1][:, 0]
    ns = null_space(hermitian_qcm(Ket(ti.basis, gs), ti))
    assert ns.dimension >= 1
    assert ns.span_residual(w) < 1e-8


# -------------------------------------------------------------- generalized ----

def test_generalized_reduces_to_hermitian(rng):
    cat = default_catalog(lee_yang_spec(0.0, n=4))
    v = Ket(cat.basis, rng.normal(size=16) + 1j * rng.normal(size=16)).normalized()
    G = generalized_qcm(normalize_pair(v, v), cat).entries
    Hm = hermitian_qcm(v, cat).entries
    assert np.abs(G - Hm).max() < 1e-12


def test_identity_is_always_null():
    cat_, _, s = random_model(3, 1)
    b = cat_.basis
    cat = custom_basis(b, [identity(b)] + list(cat_)[:5])
    C = generalized_qcm(s.pair(2), cat).entries
    e0 = np.zeros(len(cat))
    e0[0] = 1
    assert np.linalg.norm(C @ e0) < 1e-12


def test_variance_matches_projector_oracle():
    cat, _, s = random_model(3, 2)
    pair = s.pair(5)
    C = generalized_qcm(pair, cat)
    rng = np.random.default_rng(0)
    ops = [op.dense() for op in cat]
    for _ in range(100):
        w = rng.normal(size=len(cat)) + 1j * rng.normal(size=len(cat))
        H = sum(x * O for x, O in zip(w, ops))
        direct = direct_variance(pair, H)
        assert abs(C.variance(w) - direct) <= 1e-10 * max(direct, 1.0)


@given(st.floats(-2, 2), st.floats(-np.pi, np.pi), st.integers(0, 7))
def test_gauge_invariance(re, im, k):
    cat, _, s = random_model(3, 3)
    pair = s.pair(k)
    g = np.exp(re + 1j * im)
    gauged = normalize_pair(pair.left.scaled(1 / np.conj(g)), pair.right.scaled(g))
    assert abs(gauged.overlap() - 1) < 1e-12
    A = generalized_qcm(pair, cat).entries
    B = generalized_qcm(gauged, cat).entries
    assert np.abs(A - B).max() < 1e-10 * max(np.abs(A).max(), 1)


def test_covariance_is_hermitian_psd():
    cat, _, s = random_model(4, 5)
    for k in (0, 7, 15):
        C = generalized_qcm(s.pair(k), cat)
        assert np.abs(C.entries - C.entries.conj().T).max() == 0
        assert np.linalg.eigvalsh(C.entries).min() > -1e-10 * np.abs(C.entries).max()


def test_covariance_rejects_bad_entries():
    b = make_basis("SpinHalfChain", 1)
    cat = custom_basis(b, [pauli_string(b, [(0, a)]) for a in "xy"])
    with pytest.raises(QCMError):
        CovarianceMatrix(np.array([[1.0, 1.0], [0.0, 1.0]]), QCMKind.SINGLE_PAIR, cat)
    with pytest.raises(QCMError):
        CovarianceMatrix(np.diag([1.0, -1.0]), QCMKind.SINGLE_PAIR, cat)


def test_unnormalized_pair_rejected():
    b = make_basis("SpinHalfChain", 2)
    from nhparent.hilbert import BiorthogonalPair
    cat = custom_basis(b, [pauli_string(b, [(0, "x")])])
    with pytest.raises(QCMError):
        generalized_qcm(BiorthogonalPair(Ket(b, [1, 0, 0, 0]), Ket(b, [2, 0, 0, 0])), cat)


@pytest.mark.parametrize("seed", range(4))
def test_null_vector_iff_eigenpair(seed):
    cat, w, s = random_model(3, seed)
    rng = np.random.default_rng(seed)
    pair = s.pair(int(rng.integers(8)))
    ns = null_space(generalized_qcm(pair, cat))
    assert ns.dimension > 0
    # every null vector makes (L, R) an eigenpair
    for v in ns.null_vectors:
        r1, r2 = eigen_residuals(pair, realize(v, cat).dense())
        assert r1 < 1e-9 and r2 < 1e-9
    # the generating model sits in the null space; a random vector does neither
    assert ns.span_residual(w) < 1e-9
    junk = rng.normal(size=len(cat)) + 1j * rng.normal(size=len(cat))
    r1, r2 = eigen_residuals(pair, realize(junk, cat).dense())
    assert max(r1, r2) > 1e-3
    assert generalized_qcm(pair, cat).variance(junk) > 1e-6


def test_lee_yang_pair_single_null_eigenvalue():
    cat, w, _, s = solved(("ly", 0.5))
    pair = s.pair(int(np.random.default_rng(8).integers(len(s))))
    ns = null_space(generalized_qcm(pair, cat))
    top = ns.spectrum[-1]
    assert ns.spectrum[0] < 1e-13 * top
    assert ns.spectrum[1] > 1e-4 * top
    assert ns.dimension == 1 and not ns.low_confidence


# --------------------------------------------------------------- null space ----

def test_null_space_trivial():
    ns = null_space(np.diag([0.0, 1.0]))
    assert ns.dimension == 1
    np.testing.assert_allclose(np.abs(ns.vectors[:, 0]), [1, 0])


def test_null_space_flags():
    low = null_space(np.diag([1e-11, 1e-6, 1.0]))
    assert low.dimension == 1 and low.low_confidence
    empty = null_space(np.diag([1.0, 2.0]))
    assert empty.dimension == 0
    assert empty.gap_ratio == pytest.approx(1 / 2e-10)
    forced = null_space(np.diag([1e-3, 1.0, 2.0]), dimension=1)
    assert forced.dimension == 1 and forced.forced_dimension


def test_null_vectors_are_conjugated_coefficients():
    cat, w, s = random_model(5, 11)
    ns = null_space(generalized_qcm(s.pair(3), cat))
    assert ns.dimension == 1
    v = ns.vectors[:, 0]
    # recovered coefficients are proportional to w itself, not to conj(w)
    ratio = v / w
    assert np.abs(ratio - ratio[0]).max() < 1e-8 * abs(ratio[0])


def test_spectrum_csv(tmp_path):
    ns = null_space(np.diag([2.0, 0.0, 1.0]))
    write_spectrum_csv(ns, tmp_path / "s.csv", "config_hash abc")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "# config_hash abc"
    assert [l.split(",")[1] for l in lines[2:]] == ["0.0", "1.0", "2.0"]


# ------------------------------------------------------------------- multi ----

def test_multi_single_pair_equals_generalized():
    cat, _, s = random_model(3, 4)
    a = multi_qcm([s.pair(1)], cat, [1.0]).entries
    b = generalized_qcm(s.pair(1), cat).entries
    np.testing.assert_array_equal(a, b)
    d = multi_qcm([s.pair(1)], cat, [1.0], degenerate=True).entries
    assert np.abs(d - b).max() < 1e-12 * np.abs(b).max()


def test_multi_weight_validation():
    cat, _, s = random_model(3, 4)
    with pytest.raises(QCMError):
        multi_qcm([s.pair(0), s.pair(1)], cat, [1.0, -1.0])
    with pytest.raises(QCMError):
        multi_qcm([s.pair(0), s.pair(1)], cat, [0.3, 0.3], degenerate=True)
    with pytest.raises(QCMError):
        multi_qcm([s.pair(0)], cat, [0.5, 0.5])


def test_weight_independence_nondegenerate():
    spec = fermion_spec("staggered", n=6)
    cat = default_catalog(spec)
    s = diagonalize_nonhermitian(realize(model_coefficients(spec, cat), cat).matrix, cat.basis)
    pairs = [s.pair(k) for k in (2, 7, 15)]
    a = null_space(multi_qcm(pairs, cat, [1.0, 1.0, 1.0]))
    b = null_space(multi_qcm(pairs, cat, [0.2, 3.0, 0.7]))
    assert a.dimension == b.dimension == 2
    assert principal_angles(a.vectors, b.vectors).max() < 1e-8


def test_degenerate_positive_control():
    cat, w, pairs = synthetic_pairs(np.array([0.7 - 0.2j, 0.7 - 0.2j, -1.1, 0.4 + 0.9j]))
    C = multi_qcm(pairs[:2], cat, [0.4, 0.6], degenerate=True)
    assert C.kind is QCMKind.MULTI_DEGENERATE
    ns = null_space(C)
    assert ns.span_residual(w) < 1e-9
    other = null_space(multi_qcm(pairs[:2], cat, [0.9, 0.1], degenerate=True))
    assert ns.dimension == other.dimension
    assert principal_angles(ns.vectors, other.vectors).max() < 1e-8


def test_degenerate_negative_control():
    cat, w, pairs = synthetic_pairs(np.array([0.7 - 0.2j, 0.2 + 0.3j, -1.1, 0.4 + 0.9j]))
    C = multi_qcm(pairs[:2], cat, [0.5, 0.5], degenerate=True)
    assert C.variance(w) > 1e-6
    assert null_space(C).span_residual(w) > 1e-3
    # the non-degenerate form still accepts distinct eigenvalues
    assert null_space(multi_qcm(pairs[:2], cat)).span_residual(w) < 1e-9


# -------------------------------------------------------------- reconstruct ----

def test_reconstruct_empty_null_space():
    spec = fermion_spec(n=6)
    cat = default_catalog(spec)
    s = diagonalize_nonhermitian(realize(model_coefficients(spec, cat), cat).matrix, cat.basis)
    density_only = cat.subset([i for i, lab in enumerate(cat.labels) if lab.count("n_") == 2])
    with pytest.raises(EmptyNullSpaceError, match="empty null space"):
        reconstruct(s.pair(0), density_only)


def test_reconstruct_three_site_multi_pair_roundtrip():
    cat, w, s = random_model(3, 9)
    k = pairs_needed(len(cat), len(s))
    assert k == 7
    rep = reconstruct([s.pair(i) for i in range(0, 8, 1)][:k], cat, w)
    assert rep.null_space.dimension == 1
    assert rep.comparison_error < 1e-8
    assert rep.proportional


def test_reconstruct_reports_span_residuals():
    spec = fermion_spec("biased", n=6)
    cat = default_catalog(spec)
    w = model_coefficients(spec, cat)
    s = diagonalize_nonhermitian(realize(w, cat).matrix, cat.basis)
    rep = reconstruct(s.pair(4), cat, w, references={"number": number_operator_vector(cat)})
    assert rep.null_space.dimension == 2
    assert rep.anchor is None and rep.proportional is None
    assert max(rep.span_residuals.values()) < 1e-8
    assert set(rep.to_dict()) >= {"null_dimension", "gap_ratio", "comparison_error", "span_residuals"}


def test_coefficients_csv(tmp_path):
    cat, w, s = random_model(5, 0)
    rep = reconstruct(s.pair(0), cat, w)
    rep.write_coefficients_csv(tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "index,label,re_ref,im_ref,re_rec,im_rec"
    assert len(lines) == len(cat) + 1


def test_max_relative_error_floor():
    assert max_relative_error([1.1, 5.0], [1.0, 0.0]) == pytest.approx(0.1)


@pytest.mark.parametrize("m,d,k", [(36, 8, 7), (48, 16, 5), (60, 32, 1), (72, 64, 1)])
def test_pairs_needed(m, d, k):
    assert pairs_needed(m, d) == k


# --------------------------------------------------------------- symmetries ----

def test_symmetries_fermion_number_conservation():
    spec = fermion_spec(n=6)
    cat = default_catalog(spec)
    w = model_coefficients(spec, cat)
    s = diagonalize_nonhermitian(realize(w, cat).matrix, cat.basis)
    pairs = [s.pair(k) for k in (1, 6, 13)]
    ns = discover_symmetries(pairs, cat)
    assert ns.dimension == 2
    assert ns.span_residual(w) < 1e-8
    assert ns.span_residual(number_operator_vector(cat)) < 1e-8
    number_only = cat.subset([cat.index(f"n_{i}") for i in range(6)])
    # only the uniform combination of the n_i is conserved
    assert discover_symmetries(pairs, number_only).dimension == 1


def test_symmetries_negative_control():
    cat, _, s = random_model(4, 21)
    onsite = cat.subset([i for i, lab in enumerate(cat.labels) if " " not in lab])
    ns = discover_symmetries([s.pair(k) for k in (0, 5, 9)], onsite)
    assert ns.dimension == 0
