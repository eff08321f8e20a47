"""Sparse local operators on a :class:`SectorBasis` and the standard catalogs.

Every operator carries a small JSON-able *recipe* from which its matrix can be
rebuilt, so catalogs serialize as recipe lists and never as matrices.

Fermion signs follow the Jordan-Wigner ordering given by the basis bit order:
``c_i^dag c_j`` picks up ``(-1)**(number of occupied sites strictly between i
and j)``.  The periodic seam term ``c_{N-1}^dag c_0`` is built by the same rule,
i.e. its sign is the parity of sites ``1..N-2``.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .hilbert import BasisKind, SectorBasis

AXES = "xyz"
HERMITIAN_TOL = 1e-14


class OperatorError(ValueError):
    pass


class CatalogKind(str, enum.Enum):
    SPIN_SITE = "SpinSiteResolved"
    SPIN_TI = "SpinTranslationInvariant"
    FERMION_SITE = "FermionSiteResolved"
    CUSTOM = "Custom"


@dataclass(frozen=True, eq=False)
class LocalOperator:
    label: str
    matrix: sp.csr_matrix = field(repr=False)
    support: frozenset
    recipe: dict = field(repr=False)

    @property
    def is_hermitian(self) -> bool:
        diff = self.matrix - self.matrix.getH()
        return diff.nnz == 0 or abs(diff).max() <= HERMITIAN_TOL

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def adjoint(self) -> "LocalOperator":
        return LocalOperator(self.label + "^dag", self.matrix.getH().tocsr(), self.support,
                             {"kind": "adjoint", "of": self.recipe})


def _csr(rows, cols, vals, dim) -> sp.csr_matrix:
    m = sp.coo_matrix((vals, (rows, cols)), shape=(dim, dim), dtype=complex).tocsr()
    m.sum_duplicates()
    m.eliminate_zeros()
    m.sort_indices()
    return m


def _check_sites(basis: SectorBasis, sites):
    for s in sites:
        if not 0 <= s < basis.num_sites:
            raise OperatorError(f"site {s} out of range for N={basis.num_sites}")


# ---------------------------------------------------------------- spin ----

def spin_operator(basis: SectorBasis, factors) -> LocalOperator:
    """Product of single-site spin operators; axes in ``x y z + -``.

    ``+`` is sigma^+ = |up><down| and ``-`` is sigma^- = |down><up|.
    """
    if not basis.is_spin:
        raise OperatorError("spin operators need a SpinHalfChain basis")
    factors = [(int(s), str(a)) for s, a in factors]
    sites = [s for s, _ in factors]
    _check_sites(basis, sites)
    if len(set(sites)) != len(sites):
        raise OperatorError(f"duplicate site in {factors}")
    cfg = basis.configs
    flip = 0
    amp = np.ones(basis.dimension, dtype=complex)
    for s, a in factors:
        bit = (cfg >> s) & 1
        if a == "x":
            flip |= 1 << s
        elif a == "y":
            flip |= 1 << s
            amp *= 1j * (1 - 2 * bit)
        elif a == "z":
            amp *= 1 - 2 * bit
        elif a == "+":
            flip |= 1 << s
            amp *= bit
        elif a == "-":
            flip |= 1 << s
            amp *= 1 - bit
        else:
            raise OperatorError(f"unknown spin axis {a!r}")
    rows = basis.decode(cfg ^ flip)
    label = " ".join(f"s{a}_{s}" for s, a in factors) or "1"
    recipe = {"kind": "spin", "sites": sites, "axes": "".join(a for _, a in factors)}
    return LocalOperator(label, _csr(rows, np.arange(basis.dimension), amp, basis.dimension),
                         frozenset(sites), recipe)


def pauli_string(basis: SectorBasis, factors) -> LocalOperator:
    """Tensor product of Pauli matrices on the named sites, identity elsewhere."""
    for _, a in factors:
        if a not in AXES:
            raise OperatorError(f"Pauli axis must be one of x, y, z; got {a!r}")
    return spin_operator(basis, factors)


def identity(basis: SectorBasis) -> LocalOperator:
    return LocalOperator("1", sp.identity(basis.dimension, dtype=complex, format="csr"),
                         frozenset(), {"kind": "identity"})


# ------------------------------------------------------------- fermion ----

class FermionTerm(str, enum.Enum):
    NUMBER = "number"
    HOP = "hop"
    DENSITY = "density"


def fermion_term(basis: SectorBasis, kind, *sites: int) -> LocalOperator:
    """``n_i``, ``c_i^dag c_j`` or ``n_i n_j`` in the occupation basis."""
    if basis.kind is not BasisKind.FERMION:
        raise OperatorError("fermion terms need a FermionFixedNumber basis")
    kind = FermionTerm(kind)
    sites = tuple(int(s) for s in sites)
    _check_sites(basis, sites)
    cfg = basis.configs
    dim = basis.dimension
    cols = np.arange(dim)
    if kind is FermionTerm.NUMBER:
        (i,) = sites
        vals = ((cfg >> i) & 1).astype(complex)
        m = _csr(cols, cols, vals, dim)
        label = f"n_{i}"
    elif kind is FermionTerm.DENSITY:
        i, j = sites
        if i == j:
            raise OperatorError("density-density term needs two distinct sites")
        vals = (((cfg >> i) & 1) * ((cfg >> j) & 1)).astype(complex)
        m = _csr(cols, cols, vals, dim)
        label = f"n_{i} n_{j}"
    else:
        i, j = sites
        if i == j:
            raise OperatorError("hop with i == j; use the number operator")
        ok = (((cfg >> j) & 1) == 1) & (((cfg >> i) & 1) == 0)
        src = cfg[ok]
        lo, hi = min(i, j), max(i, j)
        between = ((1 << hi) - 1) & ~((1 << (lo + 1)) - 1)
        parity = np.array([bin(int(c)).count("1") for c in (src & between)], dtype=np.int64) & 1
        dst = src ^ ((1 << i) | (1 << j))
        m = _csr(basis.decode(dst), cols[ok], (1 - 2 * parity).astype(complex), dim)
        label = f"cdag_{i} c_{j}"
    return LocalOperator(label, m, frozenset(sites), {"kind": kind.value, "sites": list(sites)})


# ---------------------------------------------------- generic assembly ----

def _combine(basis: SectorBasis, terms, label: str, recipe: dict) -> LocalOperator:
    m = sp.csr_matrix((basis.dimension, basis.dimension), dtype=complex)
    support = set()
    for c, op in terms:
        if c != 0:
            m = m + c * op.matrix
            support |= op.support
    m = m.tocsr()
    m.eliminate_zeros()
    m.sort_indices()
    return LocalOperator(label, m, frozenset(support), recipe)


def build_operator(basis: SectorBasis, recipe: dict, label: str | None = None) -> LocalOperator:
    """Rebuild an operator from its recipe."""
    kind = recipe["kind"]
    if kind == "spin":
        op = spin_operator(basis, zip(recipe["sites"], recipe["axes"]))
    elif kind in ("number", "hop", "density"):
        op = fermion_term(basis, kind, *recipe["sites"])
    elif kind == "identity":
        op = identity(basis)
    elif kind == "adjoint":
        op = build_operator(basis, recipe["of"]).adjoint()
    elif kind == "translation_sum":
        op = translation_sum(basis, recipe["of"])
    elif kind == "linear_combination":
        terms = [(complex(re, im), build_operator(basis, r)) for re, im, r in recipe["terms"]]
        op = _combine(basis, terms, label or "H", recipe)
    else:
        raise OperatorError(f"unknown operator recipe kind {kind!r}")
    if label is not None and label != op.label:
        op = LocalOperator(label, op.matrix, op.support, op.recipe)
    return op


def _shift_recipe(recipe: dict, shift: int, n: int) -> dict:
    out = dict(recipe)
    out["sites"] = [(s + shift) % n for s in recipe["sites"]]
    return out


def translation_sum(basis: SectorBasis, pattern: dict) -> LocalOperator:
    """sum_i T^i O T^-i for a site-local recipe ``pattern`` (periodic chain)."""
    n = basis.num_sites
    terms = [(1.0, build_operator(basis, _shift_recipe(pattern, i, n))) for i in range(n)]
    base = build_operator(basis, pattern).label
    return _combine(basis, terms, f"sum[{base}]", {"kind": "translation_sum", "of": pattern})


# -------------------------------------------------------------- basis -----

@dataclass(frozen=True, eq=False)
class OperatorBasis:
    basis: SectorBasis
    operators: tuple
    kind: CatalogKind = CatalogKind.CUSTOM

    def __post_init__(self):
        ops = tuple(self.operators)
        object.__setattr__(self, "operators", ops)
        labels = [op.label for op in ops]
        if len(set(labels)) != len(labels):
            raise OperatorError("operator labels must be unique")
        for op in ops:
            if op.matrix.shape != (self.basis.dimension,) * 2:
                raise OperatorError(f"{op.label}: matrix does not match the basis dimension")

    @property
    def labels(self) -> list[str]:
        return [op.label for op in self.operators]

    def __len__(self) -> int:
        return len(self.operators)

    def __getitem__(self, i) -> LocalOperator:
        return self.operators[i]

    def __iter__(self):
        return iter(self.operators)

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def subset(self, keep) -> "OperatorBasis":
        """Custom catalog made of the listed indices (or a boolean mask)."""
        keep = np.arange(len(self))[np.asarray(keep)] if np.asarray(keep).dtype == bool else keep
        return OperatorBasis(self.basis, [self.operators[i] for i in keep])

    def vector(self, mapping: dict) -> np.ndarray:
        """Coefficient vector from a ``{label: coefficient}`` mapping."""
        w = np.zeros(len(self), dtype=complex)
        for lab, c in mapping.items():
            w[self.index(lab)] = c
        return w

    def to_dict(self) -> dict:
        return {
            "basis": self.basis.to_dict(),
            "kind": self.kind.value,
            "operators": [dict(label=op.label, **op.recipe) for op in self.operators],
        }

    @classmethod
    def from_dict(cls, d: dict, basis: SectorBasis | None = None) -> "OperatorBasis":
        basis = basis or SectorBasis.from_dict(d["basis"])
        ops = []
        for entry in d["operators"]:
            entry = dict(entry)
            label = entry.pop("label")
            ops.append(build_operator(basis, entry, label))
        return cls(basis, ops, CatalogKind(d.get("kind", "Custom")))


def _bonds(n: int, periodic: bool):
    last = n if periodic else n - 1
    return [(i, (i + 1) % n) for i in range(last)]


def spin_basis_catalog(basis: SectorBasis, translation_invariant: bool = False,
                       periodic: bool = True) -> OperatorBasis:
    """All range-2 Pauli operators: on-site terms first, then nearest-neighbour pairs.

    Site-resolved: ``sp_i`` for i, p then ``sp_i sq_{i+1}`` for i, p, q
    (12N operators on a periodic chain).  Translation invariant: the 12 sums
    over i of the same patterns.
    """
    if not basis.is_spin:
        raise OperatorError("spin catalog needs a SpinHalfChain basis")
    n = basis.num_sites
    if n < 2:
        raise OperatorError("range-2 catalogs need at least two sites")
    if translation_invariant:
        if not periodic:
            raise OperatorError("translation-invariant catalog requires periodic boundaries")
        patterns = [{"kind": "spin", "sites": [0], "axes": p} for p in AXES]
        patterns += [{"kind": "spin", "sites": [0, 1], "axes": p + q} for p in AXES for q in AXES]
        ops = [build_operator(basis, {"kind": "translation_sum", "of": pat}) for pat in patterns]
        return OperatorBasis(basis, ops, CatalogKind.SPIN_TI)
    ops = [pauli_string(basis, [(i, p)]) for i in range(n) for p in AXES]
    ops += [pauli_string(basis, [(i, p), (j, q)])
            for i, j in _bonds(n, periodic) for p in AXES for q in AXES]
    return OperatorBasis(basis, ops, CatalogKind.SPIN_SITE)


def pauli_strings_catalog(basis: SectorBasis, max_range: int, periodic: bool = True,
                          include_identity: bool = False) -> OperatorBasis:
    """Every Pauli string supported on at most ``max_range`` contiguous sites.

    Handy as an over-complete probe set for the operator-equation solvers.
    """
    n = basis.num_sites
    max_range = min(max_range, n)
    seen = {}
    for r in range(1, max_range + 1):
        if r == 1:
            combos = [(p,) for p in AXES]
        else:
            combos = [(p,) + mid + (q,) for p in AXES
                      for mid in itertools.product("Ixyz", repeat=r - 2) for q in AXES]
        for i in range(n) if periodic else range(n - r + 1):
            window = [(i + k) % n for k in range(r)]
            for axes in combos:
                seen.setdefault(tuple(sorted((s, a) for s, a in zip(window, axes) if a != "I")))
    ops = [pauli_string(basis, f) for f in seen]
    if include_identity:
        ops.insert(0, identity(basis))
    return OperatorBasis(basis, ops)


def fermion_basis_catalog(basis: SectorBasis, periodic: bool = True) -> OperatorBasis:
    """Range-2 fermion operators: ``n_i``, ``c_i^dag c_{i+1}``, ``c_{i+1}^dag c_i``, ``n_i n_{i+1}``.

    Each group runs over all sites before the next begins (4N operators when
    periodic).
    """
    if basis.kind is not BasisKind.FERMION:
        raise OperatorError("fermion catalog needs a FermionFixedNumber basis")
    n = basis.num_sites
    if n < 2:
        raise OperatorError("range-2 catalogs need at least two sites")
    bonds = _bonds(n, periodic)
    ops = [fermion_term(basis, "number", i) for i in range(n)]
    ops += [fermion_term(basis, "hop", i, j) for i, j in bonds]
    ops += [fermion_term(basis, "hop", j, i) for i, j in bonds]
    ops += [fermion_term(basis, "density", i, j) for i, j in bonds]
    return OperatorBasis(basis, ops, CatalogKind.FERMION_SITE)


def realize(coefficients, obasis: OperatorBasis, label: str = "H") -> LocalOperator:
    """Sparse sum ``sum_i w_i O_i``."""
    w = np.asarray(coefficients, dtype=complex).reshape(-1)
    if w.shape[0] != len(obasis):
        raise OperatorError(f"{w.shape[0]} coefficients for {len(obasis)} operators")
    recipe = {
        "kind": "linear_combination",
        "terms": [[float(c.real), float(c.imag), op.recipe]
                  for c, op in zip(w, obasis) if c != 0],
    }
    return _combine(obasis.basis, list(zip(w, obasis)), label, recipe)


def custom_basis(basis: SectorBasis, operators) -> OperatorBasis:
    return OperatorBasis(basis, list(operators), CatalogKind.CUSTOM)


def operator_vectors(obasis: OperatorBasis, vec: np.ndarray, adjoint: bool = False) -> np.ndarray:
    """(D, M) array whose column i is ``O_i |vec>`` (or ``O_i^dag |vec>``)."""
    vec = np.asarray(vec, dtype=complex)
    out = np.empty((obasis.basis.dimension, len(obasis)), dtype=complex)
    for i, op in enumerate(obasis):
        m = op.matrix.getH() if adjoint else op.matrix
        out[:, i] = m @ vec
    return out
