"""Parent-Hamiltonian reconstruction for non-Hermitian lattice models.

Build a local operator catalog, feed in a biorthogonal eigenpair (or several)
and read the coefficients of every catalog Hamiltonian sharing them off the
null space of a generalized covariance matrix.  The ``hoe`` module does the
same from density-matrix dynamics.
"""

from .hilbert import (
    BasisKind,
    BiorthogonalPair,
    HilbertError,
    Ket,
    SectorBasis,
    SelfOrthogonalError,
    inner,
    make_basis,
    normalize_pair,
)
from .models import ModelName, ModelSpec, PotentialKind, default_catalog, model_coefficients
from .operators import (
    CatalogKind,
    LocalOperator,
    OperatorBasis,
    fermion_basis_catalog,
    pauli_strings_catalog,
    realize,
    spin_basis_catalog,
)
from .qcm import (
    CovarianceMatrix,
    EmptyNullSpaceError,
    discover_symmetries,
    generalized_qcm,
    hermitian_qcm,
    multi_qcm,
    null_space,
    perturbation_scan,
    reconstruct,
)
from .spectra import NotDiagonalizableError, diagonalize_hermitian, diagonalize_nonhermitian

__version__ = "0.1.0"
