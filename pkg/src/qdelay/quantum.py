"""States, operators and Lyapunov functionals for N-qubit feedback control.

Density matrices and operators are plain ``numpy`` complex arrays.  Most
functions accept a leading batch axis (shape ``(..., n, n)``) so the ensemble
engine can evaluate many trajectories at once.
"""

from dataclasses import dataclass, field
from functools import reduce

import numpy as np

from .errors import (
    ConditionViolationError,
    DimensionMismatchError,
    InvalidDimensionError,
    InvalidStateError,
    ObservablePatternError,
)

# tolerance ladder: exact algebra / structural conditions / PSD after integration
TOL_ALGEBRA = 1e-12
TOL_STRUCTURE = 1e-10
TOL_PSD = 1e-8

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
IDENTITY_2 = np.eye(2, dtype=complex)


def kron(*ops):
    return reduce(np.kron, ops)


def dagger(m):
    return np.conj(np.swapaxes(m, -1, -2))


def commutator(a, b):
    return a @ b - b @ a


def expect(op, rho):
    """Tr(op @ rho) over the last two axes (complex)."""
    return np.einsum("...ij,...ji->...", op, rho)


def _check_square(m, name="matrix"):
    m = np.asarray(m)
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise DimensionMismatchError(f"{name} must be square, got shape {m.shape}")
    return m


def _check_conforming(a, rho):
    a = _check_square(a, "operator")
    rho = _check_square(rho, "state")
    if a.shape[-1] != rho.shape[-1]:
        raise DimensionMismatchError(
            f"operator is {a.shape[-1]}-dimensional but state is {rho.shape[-1]}-dimensional"
        )
    return a, rho


def hermiticity_error(m):
    return float(np.max(np.abs(m - dagger(m))))


def check_density_matrix(rho, herm_tol=TOL_STRUCTURE, trace_tol=1e-9, psd_tol=TOL_PSD):
    """Validate a density matrix and return it as a complex array.

    Raises
    ------
    InvalidStateError
        If ``rho`` is not Hermitian, not unit trace, or has an eigenvalue
        below ``-psd_tol``.
    """
    rho = np.asarray(_check_square(rho, "density matrix"), dtype=complex)
    n = rho.shape[-1]
    if n < 2 or n & (n - 1):
        raise InvalidDimensionError(f"dimension {n} is not 2^N with N >= 1")
    herr = hermiticity_error(rho)
    if herr > herm_tol:
        raise InvalidStateError(f"not Hermitian (max deviation {herr:.3e})")
    tr = np.real(np.trace(rho, axis1=-2, axis2=-1))
    if np.max(np.abs(tr - 1.0)) > trace_tol:
        raise InvalidStateError(f"trace {tr} differs from 1")
    min_eig = np.min(np.linalg.eigvalsh(0.5 * (rho + dagger(rho))))
    if min_eig < -psd_tol:
        raise InvalidStateError(f"not positive semidefinite (min eigenvalue {min_eig:.3e})")
    return rho


def n_qubits_of(n):
    n_qubits = int(round(np.log2(n)))
    if 2**n_qubits != n:
        raise InvalidDimensionError(f"dimension {n} is not a power of two")
    return n_qubits


@dataclass(frozen=True)
class TargetSpec:
    """Target ``(|bits> + sign |bits^c>) / sqrt(2)``."""

    bits: str
    sign: int = 1

    def __post_init__(self):
        if len(self.bits) < 2:
            raise InvalidDimensionError(f"need at least 2 qubits, got bits={self.bits!r}")
        if set(self.bits) - {"0", "1"}:
            raise ValueError(f"bits must be a binary string, got {self.bits!r}")
        if self.sign not in (1, -1):
            raise ValueError(f"sign must be +1 or -1, got {self.sign}")

    @property
    def n_qubits(self):
        return len(self.bits)

    @property
    def complement(self):
        return "".join("1" if b == "0" else "0" for b in self.bits)


def ghz_state(target):
    """Density matrix of the GHZ-type state described by ``target``.

    Accepts a :class:`TargetSpec` or a bare bit string (sign +1).
    """
    if isinstance(target, str):
        target = TargetSpec(target)
    n = 2**target.n_qubits
    ket = np.zeros(n, dtype=complex)
    ket[int(target.bits, 2)] += 1.0
    ket[int(target.complement, 2)] += target.sign
    ket /= np.sqrt(2.0)
    return np.outer(ket, ket.conj())


def build_observable(diag_entries):
    """Diagonal measured observable with the degenerate target eigenvalue.

    The first and last diagonal entries carry the target eigenvalue; every
    interior entry must differ from it.

    Returns
    -------
    (ndarray, float)
        The operator and the target eigenvalue ``lambda_d``.
    """
    d = np.asarray(diag_entries, dtype=float).ravel()
    n = d.size
    if n < 4 or n & (n - 1):
        raise InvalidDimensionError(f"observable length {n} is not 2^N with N >= 2")
    lam_d = float(d[0])
    if d[-1] != lam_d:
        raise ObservablePatternError(
            f"first and last diagonal entries must match ({d[0]} != {d[-1]})"
        )
    clash = np.flatnonzero(d[1:-1] == lam_d)
    if clash.size:
        raise ObservablePatternError(
            f"interior entries {list(clash + 1)} equal the target eigenvalue {lam_d}"
        )
    return np.diag(d).astype(complex), lam_d


def observable_from_sigma_z(coeffs):
    """Sum of single-qubit sigma_z terms ``sum_j a_j Z_j``, validated as above."""
    coeffs = np.asarray(coeffs, dtype=float)
    n_qubits = coeffs.size
    z = np.array([1.0, -1.0])
    diag = np.zeros(2**n_qubits)
    for j, a in enumerate(coeffs):
        factors = [np.ones(2)] * n_qubits
        factors[j] = z
        diag += a * reduce(np.kron, factors)
    return build_observable(diag)


def dissipator(a, rho):
    """``A rho A^dag - (A^dag A rho + rho A^dag A) / 2``."""
    a, rho = _check_conforming(a, rho)
    ad = dagger(a)
    ada = ad @ a
    return a @ rho @ ad - 0.5 * (ada @ rho + rho @ ada)


def backaction(a, rho):
    """``A rho + rho A^dag - Tr[(A + A^dag) rho] rho``."""
    a, rho = _check_conforming(a, rho)
    ad = dagger(a)
    weight = np.real(expect(a + ad, rho))
    return a @ rho + rho @ ad - weight[..., None, None] * rho


def overlap(rho, target):
    """Tr(rho target), real part."""
    return np.real(expect(rho, target))


def distance_v(rho, target):
    """``1 - Tr^2(rho target)``; zero exactly at a pure target."""
    rho, target = _check_conforming(rho, target)
    return 1.0 - overlap(rho, target) ** 2


def lyapunov_v1(rho):
    """Hilbert-Schmidt distance squared to the maximally mixed state."""
    rho = _check_square(rho, "state")
    n = rho.shape[-1]
    purity = np.real(np.einsum("...ij,...ji->...", rho, rho))
    return purity - 1.0 / n


def control_signal_raw(rho, h2, target):
    """``Tr(i [H2, rho] target)`` before the gain is applied."""
    h2, rho = _check_conforming(h2, rho)
    if target.shape[-1] != rho.shape[-1]:
        raise DimensionMismatchError("target and state dimensions differ")
    return np.real(1j * expect(commutator(h2, rho), target))


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """Free and control Hamiltonians, measured observable and target.

    ``dephasing_op`` is the operator multiplied by the scalar noise process
    beta(t); it defaults to ``Z x Z x ... x Z``.
    """

    h0: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    observable: np.ndarray
    target: np.ndarray
    gamma_meas: float = 1.0
    eta_meas: float = 1.0
    dephasing_op: np.ndarray = field(default=None)

    def __post_init__(self):
        n = np.asarray(self.target).shape[-1]
        n_qubits_of(n)
        for name in ("h0", "h1", "h2", "observable", "target"):
            m = np.asarray(getattr(self, name), dtype=complex)
            if m.shape != (n, n):
                raise DimensionMismatchError(f"{name} has shape {m.shape}, expected {(n, n)}")
            if hermiticity_error(m) > TOL_ALGEBRA:
                raise InvalidStateError(f"{name} is not Hermitian")
            object.__setattr__(self, name, m)
        if self.n_qubits < 2:
            raise InvalidDimensionError("at least two qubits are required")
        if not self.gamma_meas > 0:
            raise ValueError(f"gamma_meas must be positive, got {self.gamma_meas}")
        if not 0 < self.eta_meas <= 1:
            raise ValueError(f"eta_meas must lie in (0, 1], got {self.eta_meas}")
        a = self.observable
        if np.max(np.abs(a - np.diag(np.diag(a)))) > 0:
            raise ObservablePatternError("observable must be diagonal")
        build_observable(np.real(np.diag(a)))
        resid = np.max(np.abs(a @ self.target - self.lambda_d * self.target))
        if resid > TOL_STRUCTURE:
            raise ObservablePatternError(
                f"target is not an eigenstate of the observable (residual {resid:.3e})"
            )
        if abs(np.real(np.trace(self.target @ self.target)) - 1.0) > TOL_ALGEBRA:
            raise InvalidStateError("target must be a pure state")
        if self.dephasing_op is None:
            op = kron(*[SIGMA_Z] * self.n_qubits)
        else:
            op = np.asarray(self.dephasing_op, dtype=complex)
        object.__setattr__(self, "dephasing_op", op)

    @property
    def dim(self):
        return self.target.shape[-1]

    @property
    def n_qubits(self):
        return n_qubits_of(self.dim)

    @property
    def lambda_d(self):
        return float(np.real(self.observable[0, 0]))

    @property
    def observable_diag(self):
        return np.real(np.diag(self.observable))

    def replace(self, **changes):
        kw = {
            name: getattr(self, name)
            for name in ("h0", "h1", "h2", "observable", "target", "gamma_meas",
                         "eta_meas", "dephasing_op")
        }
        kw.update(changes)
        return SystemSpec(**kw)


def bell_example_spec(eta_meas=1.0, gamma_meas=1.0):
    """Two-qubit system stabilising (|00> + |11>)/sqrt(2).

    H0 = diag[1, -1, -1, 1], H1 = I x X - X x I, H2 = Z x I, A = Z x Z.
    """
    zz = kron(SIGMA_Z, SIGMA_Z)
    return SystemSpec(
        h0=np.diag([1.0, -1.0, -1.0, 1.0]).astype(complex),
        h1=kron(IDENTITY_2, SIGMA_X) - kron(SIGMA_X, IDENTITY_2),
        h2=kron(SIGMA_Z, IDENTITY_2),
        observable=zz,
        target=ghz_state(TargetSpec("00", 1)),
        gamma_meas=gamma_meas,
        eta_meas=eta_meas,
        dephasing_op=zz,
    )


def random_density_matrix(n, rng, rank=None):
    """Random state from a Ginibre matrix of the given rank (full by default)."""
    rank = n if rank is None else rank
    g = rng.standard_normal((n, rank)) + 1j * rng.standard_normal((n, rank))
    rho = g @ g.conj().T
    return rho / np.real(np.trace(rho))


def random_unitary(n, rng):
    z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


# -- equilibrium-uniqueness analysis ------------------------------------------

def _hermitian_basis(mask):
    """Real basis of Hermitian matrices whose support lies inside ``mask``."""
    n = mask.shape[0]
    basis = []
    for i in range(n):
        for j in range(i, n):
            if not mask[i, j]:
                continue
            if i == j:
                b = np.zeros((n, n), dtype=complex)
                b[i, i] = 1.0
                basis.append(b)
            else:
                b = np.zeros((n, n), dtype=complex)
                b[i, j] = b[j, i] = 1.0
                basis.append(b)
                b = np.zeros((n, n), dtype=complex)
                b[i, j], b[j, i] = -1j, 1j
                basis.append(b)
    return basis


def commutant_kernel(h, mask, tol=1e-9):
    """Hermitian matrices supported on ``mask`` that commute with ``h``.

    Returns a list of orthonormal (Frobenius) Hermitian matrices spanning the
    kernel of ``X -> [h, X]`` restricted to that support.
    """
    basis = _hermitian_basis(mask)
    cols = [commutator(h, b).ravel() for b in basis]
    lin = np.vstack([np.real(cols).T, np.imag(cols).T]) if cols else np.zeros((0, 0))
    _, s, vt = np.linalg.svd(lin)
    scale = max(s[0], 1.0) if s.size else 1.0
    rank = int(np.sum(s > tol * scale))
    kernel = []
    for row in vt[rank:]:
        x = sum(c * b for c, b in zip(row, basis))
        kernel.append(x / np.linalg.norm(x))
    return kernel


def _state_from_traceless(x):
    """Normalised positive part of a traceless Hermitian matrix."""
    w, v = np.linalg.eigh(x)
    pos = np.clip(w, 0.0, None)
    rho = (v * pos) @ v.conj().T
    return rho / np.sum(pos)


def _spurious_equilibrium(kernel, reference):
    """A state in span(kernel) different from ``reference``, or None."""
    if len(kernel) <= 1:
        return None
    ref = reference / np.linalg.norm(reference)
    for x in kernel:
        y = x - np.real(np.vdot(ref, x)) * ref
        if np.linalg.norm(y) < 1e-8:
            continue
        # make traceless inside the kernel: subtract a multiple of a traced element
        tr_y = np.real(np.trace(y))
        if abs(tr_y) > 1e-12:
            y = y - tr_y * reference / np.real(np.trace(reference))
        if np.linalg.norm(y) < 1e-8:
            continue
        for candidate in (y, -y):
            rho = _state_from_traceless(candidate)
            if np.linalg.norm(rho - reference / np.real(np.trace(reference))) > 1e-6:
                return rho
    return None


@dataclass
class ValidationReport:
    target_commutator: float
    eigenspace_samples: int
    eigenspace_min_commutator: float
    eigenspace_kernel_dim: int
    commutant_samples: int
    commutant_min_commutator: float
    commutant_kernel_dim: int

    def as_dict(self):
        return dict(self.__dict__)


def _eigenspace_sample(n, rng):
    p = rng.uniform()
    c = np.sqrt(p * (1 - p)) * rng.uniform() * np.exp(2j * np.pi * rng.uniform())
    rho = np.zeros((n, n), dtype=complex)
    rho[0, 0], rho[-1, -1] = p, 1 - p
    rho[0, -1], rho[-1, 0] = c, np.conj(c)
    return rho


def validate_hamiltonians(spec, samples=1000, tol=1e-6, seed=0):
    """Check that the control Hamiltonians give the required equilibria.

    Three checks are made:

    * ``target-commutation``: ``[H0 + H1, rho_d] = 0``;
    * ``target-equilibrium-uniqueness``: among states supported on the
      ``lambda_d`` eigenspace of the observable, only ``rho_d`` commutes with
      ``H0 + H1``;
    * ``mixed-equilibrium-uniqueness``: among states commuting with the
      observable, only ``I/n`` commutes with ``H0 + H1 + H2``.

    The uniqueness checks run ``samples`` random states through the
    commutator test and additionally compute the exact commuting subspace,
    which catches equilibria of measure zero that sampling cannot hit.

    Raises
    ------
    ConditionViolationError
        Naming the failed condition and carrying the offending state.
    """
    rng = np.random.default_rng(seed)
    n = spec.dim
    rho_d = spec.target
    h_free = spec.h0 + spec.h1
    h_mixed = h_free + spec.h2
    mixed = np.eye(n, dtype=complex) / n

    c0 = float(np.linalg.norm(commutator(h_free, rho_d)))
    if c0 > TOL_STRUCTURE:
        raise ConditionViolationError(
            "target-commutation", f"||[H0+H1, rho_d]||_F = {c0:.3e}", rho_d
        )

    eig_min = np.inf
    for _ in range(samples):
        rho = _eigenspace_sample(n, rng)
        if np.linalg.norm(rho - rho_d) <= tol:
            continue
        c = np.linalg.norm(commutator(h_free, rho))
        eig_min = min(eig_min, c)
        if c <= tol:
            raise ConditionViolationError(
                "target-equilibrium-uniqueness",
                f"sampled eigenspace state is an equilibrium (||[H0+H1, rho]||_F = {c:.3e})",
                rho,
            )
    block = np.zeros((n, n), dtype=bool)
    block[np.ix_([0, n - 1], [0, n - 1])] = True
    kernel_b = commutant_kernel(h_free, block)
    witness = _spurious_equilibrium(kernel_b, rho_d)
    if witness is not None:
        raise ConditionViolationError(
            "target-equilibrium-uniqueness",
            f"{len(kernel_b)}-dimensional family of eigenspace equilibria",
            witness,
        )

    diag = spec.observable_diag
    same = np.abs(diag[:, None] - diag[None, :]) < TOL_ALGEBRA
    com_min = np.inf
    for _ in range(samples):
        rho = random_density_matrix(n, rng) * same
        rho /= np.real(np.trace(rho))
        if np.linalg.norm(rho - mixed) <= tol:
            continue
        c = np.linalg.norm(commutator(h_mixed, rho))
        com_min = min(com_min, c)
        if c <= tol:
            raise ConditionViolationError(
                "mixed-equilibrium-uniqueness",
                f"sampled commutant state is an equilibrium (||[H0+H1+H2, rho]||_F = {c:.3e})",
                rho,
            )
    kernel_c = commutant_kernel(h_mixed, same)
    witness = _spurious_equilibrium(kernel_c, mixed)
    if witness is not None:
        raise ConditionViolationError(
            "mixed-equilibrium-uniqueness",
            f"{len(kernel_c)}-dimensional family of commutant equilibria",
            witness,
        )

    return ValidationReport(
        target_commutator=c0,
        eigenspace_samples=samples,
        eigenspace_min_commutator=float(eig_min),
        eigenspace_kernel_dim=len(kernel_b),
        commutant_samples=samples,
        commutant_min_commutator=float(com_min),
        commutant_kernel_dim=len(kernel_c),
    )
