import json
from functools import reduce

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nhparent.hilbert import make_basis
from nhparent.operators import (
    CatalogKind,
    OperatorBasis,
    OperatorError,
    fermion_basis_catalog,
    fermion_term,
    identity,
    operator_vectors,
    pauli_string,
    pauli_strings_catalog,
    realize,
    spin_basis_catalog,
    spin_operator,
    translation_sum,
)

# single-site matrices in the (up, down) = (bit 0, bit 1) ordering
SINGLE = {
    "I": np.eye(2),
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]]),
    "z": np.diag([1.0, -1.0]).astype(complex),
    "+": np.array([[0, 1], [0, 0]], dtype=complex),
    "-": np.array([[0, 0], [1, 0]], dtype=complex),
}


def kron_oracle(n, factors):
    """Dense product with site 0 as the least significant tensor factor."""
    mats = [SINGLE["I"]] * n
    for s, a in factors:
        mats[s] = SINGLE[a]
    return reduce(np.kron, mats[::-1])


def fock_annihilator(n, j):
    """Jordan-Wigner c_j on the full 2^n Fock space (bit set = occupied)."""
    a = np.array([[0, 1], [0, 0]], dtype=complex)
    z = np.diag([1.0, -1.0])
    mats = [z] * j + [a] + [np.eye(2)] * (n - j - 1)
    return reduce(np.kron, mats[::-1])


def test_single_site_pauli_z():
    b = make_basis("SpinHalfChain", 1)
    np.testing.assert_array_equal(pauli_string(b, [(0, "z")]).dense(), np.diag([1, -1]))


def test_xx_is_antidiagonal():
    b = make_basis("SpinHalfChain", 2)
    np.testing.assert_array_equal(pauli_string(b, [(0, "x"), (1, "x")]).dense(), np.fliplr(np.eye(4)))


def test_middle_sigma_y_matches_kron():
    b = make_basis("SpinHalfChain", 3)
    expected = np.kron(np.eye(2), np.kron(SINGLE["y"], np.eye(2)))
    np.testing.assert_array_equal(pauli_string(b, [(1, "y")]).dense(), expected)


@given(st.integers(1, 5), st.data())
def test_spin_products_match_kron_oracle(n, data):
    k = data.draw(st.integers(1, n))
    sites = data.draw(st.lists(st.integers(0, n - 1), min_size=k, max_size=k, unique=True))
    axes = data.draw(st.lists(st.sampled_from("xyz+-"), min_size=k, max_size=k))
    factors = list(zip(sites, axes))
    b = make_basis("SpinHalfChain", n)
    np.testing.assert_array_equal(spin_operator(b, factors).dense(), kron_oracle(n, factors))


def test_pauli_string_rejects_ladder_axes():
    with pytest.raises(OperatorError):
        pauli_string(make_basis("SpinHalfChain", 2), [(0, "+")])


def test_operator_site_checks():
    b = make_basis("SpinHalfChain", 2)
    with pytest.raises(OperatorError):
        spin_operator(b, [(2, "x")])
    with pytest.raises(OperatorError):
        spin_operator(b, [(0, "x"), (0, "z")])
    with pytest.raises(OperatorError):
        fermion_term(b, "number", 0)


def test_fermion_two_site_one_particle():
    b = make_basis("FermionFixedNumber", 2, 1)
    n0 = fermion_term(b, "number", 0).dense()
    assert np.trace(n0) == 1
    # configs are 0b01 (site 0 occupied) then 0b10
    np.testing.assert_array_equal(n0, np.diag([1, 0]))
    hop = fermion_term(b, "hop", 0, 1).dense()
    np.testing.assert_array_equal(hop, [[0, 1], [0, 0]])


@pytest.mark.parametrize("n,p", [(4, 2), (5, 2), (6, 3)])
def test_fermion_terms_match_fock_space_oracle(n, p):
    b = make_basis("FermionFixedNumber", n, p)
    c = [fock_annihilator(n, j) for j in range(n)]
    idx = b.configs
    for i in range(n):
        num = (c[i].conj().T @ c[i])[np.ix_(idx, idx)]
        np.testing.assert_allclose(fermion_term(b, "number", i).dense(), num, atol=1e-14)
        for j in range(n):
            if i == j:
                continue
            hop = (c[i].conj().T @ c[j])[np.ix_(idx, idx)]
            np.testing.assert_allclose(fermion_term(b, "hop", i, j).dense(), hop, atol=1e-14)
            dd = (c[i].conj().T @ c[i] @ c[j].conj().T @ c[j])[np.ix_(idx, idx)]
            np.testing.assert_allclose(fermion_term(b, "density", i, j).dense(), dd, atol=1e-14)


def test_hop_adjoint_is_reverse_hop():
    b = make_basis("FermionFixedNumber", 6, 3)
    for i, j in [(0, 1), (2, 5), (5, 0)]:
        fwd = fermion_term(b, "hop", i, j)
        back = fermion_term(b, "hop", j, i)
        assert (fwd.adjoint().matrix != back.matrix).nnz == 0


def test_periodic_seam_hop_sign():
    # c_0^dag c_3 with both middle sites filled picks up (-1)^2 = +1; one filled gives -1
    b = make_basis("FermionFixedNumber", 4, 2)
    hop = fermion_term(b, "hop", 0, 3)
    src = b.decode(0b1010)
    dst = b.decode(0b0011)
    assert hop.matrix[dst, src] == -1
    b3 = make_basis("FermionFixedNumber", 4, 3)
    hop = fermion_term(b3, "hop", 0, 3)
    assert hop.matrix[b3.decode(0b0111), b3.decode(0b1110)] == 1


@pytest.mark.parametrize("n,ti,count", [(10, False, 120), (10, True, 12), (2, False, 24), (3, False, 36)])
def test_spin_catalog_sizes(n, ti, count):
    cat = spin_basis_catalog(make_basis("SpinHalfChain", n), translation_invariant=ti)
    assert len(cat) == count
    assert len(set(cat.labels)) == count
    assert all(op.is_hermitian for op in cat)


def test_spin_catalog_order():
    cat = spin_basis_catalog(make_basis("SpinHalfChain", 3))
    assert cat.labels[:4] == ["sx_0", "sy_0", "sz_0", "sx_1"]
    assert cat.labels[9] == "sx_0 sx_1"
    assert cat.labels[-1] == "sz_2 sz_0"


@pytest.mark.parametrize("n,count", [(10, 40), (3, 12)])
def test_fermion_catalog_sizes(n, count):
    cat = fermion_basis_catalog(make_basis("FermionFixedNumber", n, n // 2))
    assert len(cat) == count
    assert cat.kind is CatalogKind.FERMION_SITE


def test_pauli_strings_catalog_counts():
    b = make_basis("SpinHalfChain", 10)
    # 3 per site, 9 per bond, 3*4*3 per three-site window
    assert len(pauli_strings_catalog(b, 3)) == 30 + 90 + 360
    assert len(pauli_strings_catalog(make_basis("SpinHalfChain", 3), 3, include_identity=True)) == 64


def test_translation_sum_is_sum_of_shifts():
    b = make_basis("SpinHalfChain", 4)
    op = translation_sum(b, {"kind": "spin", "sites": [0, 1], "axes": "xz"})
    direct = sum(kron_oracle(4, [(i, "x"), ((i + 1) % 4, "z")]) for i in range(4))
    np.testing.assert_array_equal(op.dense(), direct)
    assert op.label == "sum[sx_0 sz_1]"


def test_realize_trivial_cases(rng):
    cat = spin_basis_catalog(make_basis("SpinHalfChain", 3))
    assert realize(np.zeros(len(cat)), cat).matrix.nnz == 0
    j = 17
    w = np.zeros(len(cat))
    w[j] = 1
    np.testing.assert_array_equal(realize(w, cat).dense(), cat[j].dense())
    with pytest.raises(OperatorError):
        realize(np.ones(3), cat)


@given(st.lists(st.complex_numbers(max_magnitude=5, allow_nan=False, allow_infinity=False),
                min_size=12, max_size=12),
       st.complex_numbers(max_magnitude=5, allow_nan=False, allow_infinity=False))
def test_realize_is_linear(w, a):
    cat = fermion_basis_catalog(make_basis("FermionFixedNumber", 3, 1))
    w = np.array(w)
    v = np.arange(12) * (0.5 - 1j)
    lhs = realize(a * w + v, cat).dense()
    rhs = a * realize(w, cat).dense() + realize(v, cat).dense()
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_operator_basis_json_roundtrip():
    b = make_basis("SpinHalfChain", 4)
    for cat in (spin_basis_catalog(b), spin_basis_catalog(b, translation_invariant=True),
                fermion_basis_catalog(make_basis("FermionFixedNumber", 4, 2))):
        back = OperatorBasis.from_dict(json.loads(json.dumps(cat.to_dict())))
        assert back.labels == cat.labels
        assert back.kind is cat.kind
        for x, y in zip(cat, back):
            assert (x.matrix != y.matrix).nnz == 0


def test_realized_operator_rebuilds_from_recipe():
    from nhparent.operators import build_operator
    cat = spin_basis_catalog(make_basis("SpinHalfChain", 3))
    w = np.linspace(-1, 1, len(cat)) + 0.1j
    H = realize(w, cat)
    np.testing.assert_allclose(build_operator(cat.basis, H.recipe).dense(), H.dense(), atol=1e-15)


def test_duplicate_labels_rejected():
    b = make_basis("SpinHalfChain", 2)
    with pytest.raises(OperatorError):
        OperatorBasis(b, [identity(b), identity(b)])


def test_operator_vectors(rng):
    cat = spin_basis_catalog(make_basis("SpinHalfChain", 3))
    v = rng.normal(size=8) + 1j * rng.normal(size=8)
    M = operator_vectors(cat, v)
    Md = operator_vectors(cat, v, adjoint=True)
    for i, op in enumerate(cat):
        np.testing.assert_allclose(M[:, i], op.dense() @ v)
        np.testing.assert_allclose(Md[:, i], op.dense().conj().T @ v)
