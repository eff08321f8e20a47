"""Operator-equation learning of non-Hermitian and dissipative generators.

Density matrices evolve under

    i d(rho)/dt = H rho - rho H^dag + i sum_j L_j rho L_j^dag,

which for a probe operator K_m gives

    i d<K_m>/dt = sum_i [w_i <K_m O_i> - conj(w_i) <O_i^dag K_m>]
                  + i sum_{k1,k2} c_{k1 k2} <S_k1^dag K_m S_k2>,

with ``H = sum_i w_i O_i``, ``L_j = sum_k l_jk S_k`` and ``c = l^dag l``.
The right-hand side is linear over the reals in (Re w, Im w, Re c, Im c).
Because the ``O_i^dag K_m`` term carries ``conj(w_i)``, the columns acting on
``Im w`` use ``<K O + O^dag K>`` rather than ``<K O - O^dag K>``:

    G = [[A, -Bp, C, -D],
         [B,  Ap, D,  C]],

    A + iB   = <K_m O_i - O_i^dag K_m>,
    Ap + iBp = <K_m O_i + O_i^dag K_m>,
    C + iD   = i <S_k1^dag K_m S_k2>,     column p = k1 * K + k2.
"""

from __future__ import annotations

import csv
import enum
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .hilbert import Ket, SectorBasis
from .operators import OperatorBasis

HERMITIAN_TOL = 1e-12
PSD_TOL = 1e-10
STEP_ERROR_LIMIT = 1e-6


class HOEError(ValueError):
    pass


class StepSizeError(RuntimeError):
    """RK4 step-doubling estimate exceeded the allowed error per unit time."""


class DegenerateSystemWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    basis: SectorBasis
    entries: np.ndarray
    normalized: bool = False
    physical: bool = True

    def __post_init__(self):
        rho = np.array(self.entries, dtype=complex)
        d = self.basis.dimension
        if rho.shape != (d, d):
            raise HOEError(f"density matrix must be {d}x{d}, got {rho.shape}")
        scale = max(np.abs(rho).max(), 1e-300)
        if np.abs(rho - rho.conj().T).max() > HERMITIAN_TOL * scale:
            raise HOEError("density matrix is not Hermitian")
        if self.physical:
            w = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
            if w[0] < -PSD_TOL * max(w[-1], 1e-300):
                raise HOEError(f"density matrix is not PSD (min eigenvalue {w[0]:.3e})")
        rho.flags.writeable = False
        object.__setattr__(self, "entries", rho)

    @classmethod
    def pure(cls, ket: Ket, normalize: bool = True) -> "DensityMatrix":
        v = ket.amplitudes / ket.norm() if normalize else ket.amplitudes
        return cls(ket.basis, np.outer(v, v.conj()), normalized=normalize)

    @classmethod
    def maximally_mixed(cls, basis: SectorBasis) -> "DensityMatrix":
        return cls(basis, np.eye(basis.dimension) / basis.dimension, normalized=True)

    def trace(self) -> complex:
        return complex(np.trace(self.entries))

    def expect(self, op) -> complex:
        """Tr(rho O)."""
        m = op.matrix if hasattr(op, "matrix") else op
        return _trace_product(self.entries, sp.coo_matrix(m))


def _trace_product(X: np.ndarray, m: sp.coo_matrix) -> complex:
    """Tr(X @ m) for dense X and sparse m."""
    return complex(np.sum(X[m.col, m.row] * m.data))


# ----------------------------------------------------------- generator ----

@dataclass(eq=False)
class Generator:
    """``H(t) = scale(t) * sum_i base_i O_i`` plus jumps ``L_j = sum_k l_jk S_k``.

    ``scale`` defaults to the constant 1; ``scale_name`` is what gets logged.
    """

    ansatz: OperatorBasis
    base: np.ndarray
    scale: Callable[[float], complex] | None = None
    scale_name: str = "constant"
    jump_basis: OperatorBasis | None = None
    jump_coefficients: np.ndarray | None = None
    _static: sp.csr_matrix | None = field(default=None, repr=False)

    def __post_init__(self):
        self.base = np.asarray(self.base, dtype=complex)
        if self.base.shape != (len(self.ansatz),):
            raise HOEError(f"{self.base.shape[0]} coefficients for {len(self.ansatz)} operators")
        if (self.jump_basis is None) != (self.jump_coefficients is None):
            raise HOEError("jump basis and jump coefficients go together")
        if self.jump_coefficients is not None:
            self.jump_coefficients = np.atleast_2d(np.asarray(self.jump_coefficients, dtype=complex))
            if self.jump_coefficients.shape[1] != len(self.jump_basis):
                raise HOEError("jump coefficient matrix must be (num_jumps, K)")

    def coefficients(self, t: float) -> np.ndarray:
        return self.base if self.scale is None else self.scale(t) * self.base

    def _base_matrix(self) -> sp.csr_matrix:
        if self._static is None:
            m = sp.csr_matrix((self.ansatz.basis.dimension,) * 2, dtype=complex)
            for w, op in zip(self.base, self.ansatz):
                if w != 0:
                    m = m + w * op.matrix
            self._static = m.tocsr()
        return self._static

    def hamiltonian(self, t: float) -> sp.csr_matrix:
        m = self._base_matrix()
        return m if self.scale is None else self.scale(t) * m

    def jump_operators(self) -> list[sp.csr_matrix]:
        if self.jump_basis is None:
            return []
        out = []
        for row in self.jump_coefficients:
            m = sp.csr_matrix((self.ansatz.basis.dimension,) * 2, dtype=complex)
            for l, op in zip(row, self.jump_basis):
                if l != 0:
                    m = m + l * op.matrix
            out.append(m.tocsr())
        return out

    def gram(self) -> np.ndarray | None:
        """c = l^dag l, the (K, K) jump-coefficient Gram matrix."""
        if self.jump_coefficients is None:
            return None
        l = self.jump_coefficients
        return l.conj().T @ l

    def to_dict(self) -> dict:
        d = {
            "ansatz": self.ansatz.to_dict(),
            "base": [[float(w.real), float(w.imag)] for w in self.base],
            "scale": self.scale_name,
        }
        if self.jump_basis is not None:
            d["jump_basis"] = self.jump_basis.to_dict()
            d["jump_coefficients"] = [[[float(x.real), float(x.imag)] for x in row]
                                      for row in self.jump_coefficients]
        return d


def lindblad_hamiltonian(hermitian, jumps) -> sp.csr_matrix:
    """Effective generator ``H_her - (i/2) sum_j L_j^dag L_j`` for a standard Lindblad model."""
    h = sp.csr_matrix(hermitian, dtype=complex)
    for L in jumps:
        L = sp.csr_matrix(L)
        h = h - 0.5j * (L.getH() @ L)
    return h.tocsr()


def master_rhs(rho: np.ndarray, H, jumps=()) -> np.ndarray:
    """d(rho)/dt = -i (H rho - rho H^dag) + sum_j L_j rho L_j^dag."""
    Hr = H @ rho
    out = -1j * (Hr - Hr.conj().T)  # rho H^dag = (H rho)^dag for Hermitian rho
    for L in jumps:
        Lr = L @ rho
        out += L @ Lr.conj().T  # L rho L^dag = L (L rho)^dag
    return out


# ---------------------------------------------------------- trajectory ----

@dataclass(eq=False)
class Trajectory:
    basis: SectorBasis
    times: np.ndarray
    states: np.ndarray  # (n_t, D, D)
    dt: float
    generator: Generator | None = None
    seed: int | None = None
    log: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.times)

    def state(self, k: int) -> DensityMatrix:
        return DensityMatrix(self.basis, self.states[k], physical=False)

    def index_of(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise HOEError(f"time {t} is not a recorded sample")
        return k

    def save(self, directory) -> None:
        """One JSON snapshot per time plus ``manifest.json``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        files = []
        for k, (t, rho) in enumerate(zip(self.times, self.states)):
            name = f"snapshot_{k:05d}.json"
            with open(directory / name, "w") as fh:
                json.dump({"time": float(t), "re": rho.real.tolist(), "im": rho.imag.tolist()}, fh)
            files.append(name)
        manifest = {
            "basis": self.basis.to_dict(),
            "times": [float(t) for t in self.times],
            "dt": self.dt,
            "seed": self.seed,
            "generator": None if self.generator is None else self.generator.to_dict(),
            "log": self.log,
            "snapshots": files,
        }
        with open(directory / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, directory) -> "Trajectory":
        """Reload states and metadata; the generator stays in ``log['generator']`` as a record."""
        directory = Path(directory)
        with open(directory / "manifest.json") as fh:
            manifest = json.load(fh)
        basis = SectorBasis.from_dict(manifest["basis"])
        states = []
        for name in manifest["snapshots"]:
            with open(directory / name) as fh:
                snap = json.load(fh)
            states.append(np.array(snap["re"]) + 1j * np.array(snap["im"]))
        log = dict(manifest.get("log") or {})
        log["generator"] = manifest.get("generator")
        return cls(basis, np.array(manifest["times"]), np.array(states), manifest["dt"],
                   None, manifest.get("seed"), log)


def _rk4_step(rho, t, dt, gen: Generator, jumps):
    def f(r, s):
        return master_rhs(r, gen.hamiltonian(s), jumps)

    k1 = f(rho, t)
    k2 = f(rho + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = f(rho + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = f(rho + dt * k3, t + dt)
    return rho + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def evolve(rho0: DensityMatrix, generator: Generator, t_final: float, dt: float,
           t0: float = 0.0, save_every: int = 1, check_every: int = 25,
           error_limit: float = STEP_ERROR_LIMIT, seed: int | None = None) -> Trajectory:
    """Fixed-step RK4 integration of the (non-normalized) master equation.

    After every step rho is replaced by (rho + rho^dag)/2 and the largest
    correction is logged.  Every ``check_every`` steps a step-doubling
    estimate is formed; if it exceeds ``error_limit`` per unit time
    (relative to ||rho||) a :class:`StepSizeError` asks for a smaller dt.
    """
    if dt <= 0:
        raise HOEError("dt must be positive")
    rho = np.array(rho0.entries, dtype=complex)
    jumps = [sp.csr_matrix(L) for L in generator.jump_operators()]
    n_steps = int(round((t_final - t0) / dt))
    if n_steps < 1:
        raise HOEError("t_final must exceed t0 by at least one step")
    times, states = [t0], [rho.copy()]
    max_fix = 0.0
    max_err = 0.0
    t = t0
    for k in range(n_steps):
        if k % check_every == 0:
            full = _rk4_step(rho, t, dt, generator, jumps)
            half = _rk4_step(_rk4_step(rho, t, dt / 2, generator, jumps), t + dt / 2, dt / 2,
                             generator, jumps)
            err = np.linalg.norm(full - half) / 15.0 / dt / max(np.linalg.norm(rho), 1e-300)
            max_err = max(max_err, err)
            if err > error_limit:
                raise StepSizeError(
                    f"step-doubling error {err:.2e} per unit time at t={t:.4g} exceeds "
                    f"{error_limit:.1e}; use a smaller dt than {dt}")
            new = half
        else:
            new = _rk4_step(rho, t, dt, generator, jumps)
        rho = 0.5 * (new + new.conj().T)
        max_fix = max(max_fix, float(np.abs(new - rho).max()))
        t = t0 + (k + 1) * dt
        if (k + 1) % save_every == 0 or k + 1 == n_steps:
            times.append(t)
            states.append(rho.copy())
    log = {"max_hermiticity_correction": max_fix, "max_step_error_per_time": max_err,
           "scale": generator.scale_name}
    return Trajectory(rho0.basis, np.array(times), np.array(states), dt * save_every,
                      generator, seed, log)


# --------------------------------------------------------- HOE system -----

class Derivative(str, enum.Enum):
    STEADY = "Steady"
    EXACT = "Exact"
    FINITE_DIFFERENCE = "FiniteDifference"


@dataclass(frozen=True, eq=False)
class HOESystem:
    probes: OperatorBasis
    ansatz: OperatorBasis
    A: np.ndarray
    B: np.ndarray
    Ap: np.ndarray
    Bp: np.ndarray
    xi: np.ndarray
    jump_basis: OperatorBasis | None = None
    Cblk: np.ndarray | None = None
    Dblk: np.ndarray | None = None

    @property
    def num_jump_columns(self) -> int:
        return 0 if self.Cblk is None else self.Cblk.shape[1]

    @property
    def G(self) -> np.ndarray:
        top = [self.A, -self.Bp]
        bottom = [self.B, self.Ap]
        if self.Cblk is not None:
            top += [self.Cblk, -self.Dblk]
            bottom += [self.Dblk, self.Cblk]
        return np.block([top, bottom])

    @property
    def rhs(self) -> np.ndarray:
        return np.concatenate([self.xi.real, self.xi.imag])

    def stack(self, w, c=None) -> np.ndarray:
        """Real unknown vector (Re w, Im w[, Re c, Im c]) with c flattened row-major."""
        w = np.asarray(w, dtype=complex)
        parts = [w.real, w.imag]
        if self.Cblk is not None:
            c = np.asarray(c, dtype=complex).reshape(-1)
            parts += [c.real, c.imag]
        return np.concatenate(parts)

    def unstack(self, x):
        m = len(self.ansatz)
        w = x[:m] + 1j * x[m:2 * m]
        if self.Cblk is None:
            return w, None
        k2 = self.num_jump_columns
        k = int(round(np.sqrt(k2)))
        c = x[2 * m:2 * m + k2] + 1j * x[2 * m + k2:]
        return w, c.reshape(k, k)

    def residual(self, w, c=None) -> float:
        """||G x - rhs|| / (||G|| ||x||) for a candidate solution."""
        x = self.stack(w, c)
        return float(np.linalg.norm(self.G @ x - self.rhs)
                     / (np.linalg.norm(self.G, 2) * np.linalg.norm(x)))


def _factor(rho: np.ndarray, cutoff: float = 1e-15):
    """rho = V diag(lam) V^dag restricted to |lam| above ``cutoff`` * max|lam|."""
    lam, V = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    keep = np.abs(lam) > cutoff * max(np.abs(lam).max(), 1e-300)
    return lam[keep], V[:, keep]


def _apply_all(obasis: OperatorBasis, V: np.ndarray) -> np.ndarray:
    """(M, D, r) stack of O_i V."""
    return np.stack([op.matrix @ V for op in obasis])


def _expectations(rho: np.ndarray, probes: OperatorBasis, ops: OperatorBasis):
    """(M_K, M_O) arrays <K_m O_i> and <O_i^dag K_m> for Hermitian rho."""
    lam, V = _factor(rho)
    KdV = np.stack([op.matrix.getH() @ V for op in probes])
    KV = _apply_all(probes, V)
    OV = _apply_all(ops, V)
    # Tr(rho K O) = sum_k lam_k <K^dag v_k | O v_k>;  Tr(rho O^dag K) = sum_k lam_k <O v_k | K v_k>
    mk, mo = len(probes), len(ops)
    a = (KdV.conj() * lam).reshape(mk, -1) @ OV.reshape(mo, -1).T
    b = (KV * lam).reshape(mk, -1) @ OV.conj().reshape(mo, -1).T
    return a, b


def _jump_expectations(rho: np.ndarray, probes: OperatorBasis, jump_basis: OperatorBasis) -> np.ndarray:
    """(M_K, K*K) array <S_k1^dag K_m S_k2> with column k1*K + k2."""
    lam, V = _factor(rho)
    SV = _apply_all(jump_basis, V)
    k = len(jump_basis)
    out = np.zeros((len(probes), k * k), dtype=complex)
    for m, K in enumerate(probes):
        KSV = np.stack([K.matrix @ x for x in SV])
        out[m] = ((SV.conj() * lam).reshape(k, -1) @ KSV.reshape(k, -1).T).reshape(-1)
    return out


def exact_xi(rho: np.ndarray, probes: OperatorBasis, H, jumps=()) -> np.ndarray:
    """xi_m = i d<K_m>/dt evaluated from the known generator."""
    drho = master_rhs(rho, H, jumps)
    return np.array([1j * _trace_product(drho, sp.coo_matrix(K.matrix)) for K in probes])


def finite_difference_xi(traj: Trajectory, k: int, probes: OperatorBasis) -> np.ndarray:
    """Central difference of <K_m> between samples k-1 and k+1."""
    if k < 1 or k + 1 >= len(traj):
        raise HOEError(f"sample {k} lacks the neighbours needed for a central difference")
    h = traj.times[k + 1] - traj.times[k - 1]
    plus, minus = traj.states[k + 1], traj.states[k - 1]
    return np.array([1j * (_trace_product(plus, sp.coo_matrix(K.matrix))
                           - _trace_product(minus, sp.coo_matrix(K.matrix))) / h for K in probes])


def assemble_hoe(source, probes: OperatorBasis, ansatz: OperatorBasis,
                 jump_basis: OperatorBasis | None = None,
                 derivative: Derivative | str = Derivative.STEADY,
                 generator: Generator | None = None, time: float | None = None) -> HOESystem:
    """Build the block system for one state.

    ``source`` is a :class:`DensityMatrix` or a ``(Trajectory, index)`` sample.
    ``Steady`` sets xi = 0, ``Exact`` evaluates xi from ``generator`` (taken
    from the trajectory when omitted) and ``FiniteDifference`` uses central
    differences of the trajectory.
    """
    derivative = Derivative(derivative)
    traj = None
    if isinstance(source, tuple):
        traj, k = source
        rho = traj.states[k]
        time = traj.times[k]
        generator = generator or traj.generator
        basis = traj.basis
    else:
        rho = np.asarray(source.entries)
        basis = source.basis
    for ob in (probes, ansatz, jump_basis):
        if ob is not None and not ob.basis.same_as(basis):
            raise HOEError("operator bases and state live on different sectors")
    a, b = _expectations(rho, probes, ansatz)
    P = a - b
    Q = a + b
    if derivative is Derivative.STEADY:
        xi = np.zeros(len(probes), dtype=complex)
    elif derivative is Derivative.EXACT:
        if generator is None:
            raise HOEError("exact derivatives need the generator")
        t = 0.0 if time is None else time
        xi = exact_xi(rho, probes, generator.hamiltonian(t), generator.jump_operators())
    else:
        if traj is None:
            raise HOEError("finite differences need a (trajectory, index) sample")
        xi = finite_difference_xi(traj, k, probes)
    Cblk = Dblk = None
    if jump_basis is not None:
        e = 1j * _jump_expectations(rho, probes, jump_basis)
        Cblk, Dblk = e.real, e.imag
    return HOESystem(probes, ansatz, P.real, P.imag, Q.real, Q.imag, xi, jump_basis, Cblk, Dblk)


def stack_systems(systems) -> HOESystem:
    """Concatenate equations from several samples that share one static generator."""
    systems = list(systems)
    first = systems[0]

    def cat(name):
        parts = [getattr(s, name) for s in systems]
        return None if parts[0] is None else np.concatenate(parts, axis=0)

    return HOESystem(first.probes, first.ansatz, cat("A"), cat("B"), cat("Ap"), cat("Bp"),
                     cat("xi"), first.jump_basis, cat("Cblk"), cat("Dblk"))


class SolveMode(str, enum.Enum):
    NULL_SPACE = "NullSpace"
    LEAST_SQUARES = "LeastSquares"


@dataclass(frozen=True, eq=False)
class HOESolution:
    omega: np.ndarray
    c: np.ndarray | None
    residual: float
    null_dimension: int
    singular_values: np.ndarray
    homogeneous: list = field(default_factory=list)  # (w, c) directions with G x ~ 0
    labels: list = field(default_factory=list)

    def write_csv(self, path, header: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if header:
                fh.write(f"# {header}\n")
            w = csv.writer(fh)
            w.writerow(["label", "re_omega", "im_omega"])
            for lab, x in zip(self.labels, self.omega):
                w.writerow([lab, repr(float(x.real)), repr(float(x.imag))])


def solve_hoe(system: HOESystem, mode: SolveMode | str = SolveMode.NULL_SPACE,
              rel_tol: float = 1e-10) -> HOESolution:
    """Null space (homogeneous) or minimum-norm least squares (xi != 0) solution.

    Singular values below ``rel_tol * s_max`` mark homogeneous directions.  In
    null-space mode the first such direction is returned as the solution; in
    least-squares mode they trigger a :class:`DegenerateSystemWarning`.
    """
    mode = SolveMode(mode)
    G = system.G
    U, s, Vh = np.linalg.svd(G, full_matrices=True)
    n = G.shape[1]
    s_full = np.zeros(n)
    s_full[:len(s)] = s
    cut = rel_tol * (s[0] if len(s) else 1.0)
    null_idx = np.where(s_full <= cut)[0]
    homog = [system.unstack(Vh[i]) for i in null_idx]
    labels = system.ansatz.labels
    if mode is SolveMode.NULL_SPACE:
        if not len(null_idx):
            x = Vh[-1]
        else:
            x = Vh[null_idx[0]]
        w, c = system.unstack(x)
        res = float(np.linalg.norm(G @ x) / max(s[0], 1e-300))
        return HOESolution(w, c, res, len(null_idx), s, homog, labels)
    rhs = system.rhs
    keep = s > cut
    coef = (U[:, :len(s)][:, keep].T @ rhs) / s[keep]
    x = Vh[:len(s)][keep].T @ coef
    if len(null_idx):
        warnings.warn(f"least-squares system has {len(null_idx)} homogeneous directions; "
                      "returning the minimum-norm solution", DegenerateSystemWarning, stacklevel=2)
    w, c = system.unstack(x)
    res = float(np.linalg.norm(G @ x - rhs) / max(np.linalg.norm(rhs), 1e-300))
    return HOESolution(w, c, res, len(null_idx), s, homog, labels)
