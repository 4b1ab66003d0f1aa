"""Euler-Maruyama integration of the filtered stochastic master equation.

The measured observable is diagonal, so the dissipator and back-action act
entrywise; the kernels here use that and accept a leading batch axis.
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import expm

from .errors import ContractError, IntegrationDivergedError, NumericalBlowupError
from .quantum import commutator, dagger


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = 1e-3
    horizon: float = 50.0
    sanitize_every: int = 1
    scheme: str = "euler-maruyama"

    def __post_init__(self):
        if not self.dt > 0:
            raise ContractError(f"dt must be positive, got {self.dt}")
        if self.horizon < self.dt:
            raise ContractError(f"horizon {self.horizon} is shorter than dt {self.dt}")
        if self.sanitize_every < 1:
            raise ContractError("sanitize_every must be >= 1")
        if self.scheme != "euler-maruyama":
            raise ContractError(f"unsupported scheme {self.scheme!r}")

    @property
    def n_steps(self):
        return int(round(self.horizon / self.dt))

    def check_delay(self, tau):
        if tau > 0 and self.dt > tau:
            raise ContractError(f"dt={self.dt} exceeds the delay tau={tau}")


@dataclass(frozen=True)
class NoiseModel:
    """Measurement efficiency/strength and the dephasing process beta(t).

    beta(t) is piecewise constant: an independent N(0, dephasing_amp**2)
    draw for every window of length ``dephasing_dwell``.
    """

    eta: float = 1.0
    gamma: float = 1.0
    dephasing_amp: float = 0.0
    dephasing_dwell: float = 0.1

    def __post_init__(self):
        if not 0 < self.eta <= 1:
            raise ContractError(f"eta must lie in (0, 1], got {self.eta}")
        if not self.gamma > 0:
            raise ContractError(f"gamma must be positive, got {self.gamma}")
        if self.dephasing_amp < 0:
            raise ContractError("dephasing_amp must be >= 0")
        if not self.dephasing_dwell > 0:
            raise ContractError("dephasing_dwell must be positive")

    @classmethod
    def from_spec(cls, spec, **kw):
        return cls(eta=spec.eta_meas, gamma=spec.gamma_meas, **kw)

    @property
    def diffusion_scale(self):
        return np.sqrt(self.eta * self.gamma)


@dataclass(frozen=True, eq=False)
class TrajectoryState:
    rho: np.ndarray
    t: float = 0.0
    y: float = 0.0
    step: int = 0
    rng_stream: int = 0


def _observable_masks(diag):
    diff = diag[:, None] - diag[None, :]
    return -0.5 * diff**2, diag[:, None] + diag[None, :]


def measurement_drift(rho, diag):
    """``Tr[(A + A^dag) rho]`` for diagonal A (batched)."""
    return 2.0 * np.real(np.einsum("...ii,i->...", rho, diag))


def sme_increment(rho, hamiltonian, diag, gamma, scale, dt, dW):
    """Euler-Maruyama increment ``drho`` for a diagonal observable.

    ``hamiltonian`` and ``rho`` may carry a batch axis; ``dW`` is a scalar or
    an array matching the batch shape.
    """
    dmask, hmask = _observable_masks(diag)
    drift = -1j * commutator(hamiltonian, rho) + gamma * dmask * rho
    mean = measurement_drift(rho, diag)
    back = hmask * rho - mean[..., None, None] * rho
    dW = np.asarray(dW, dtype=float)
    return drift * dt + scale * back * dW[..., None, None]


def hermitize(rho):
    return 0.5 * (rho + dagger(rho))


def total_hamiltonian(spec, u2, beta=0.0):
    u2 = np.asarray(u2, dtype=float)
    beta = np.asarray(beta, dtype=float)
    base = spec.h0 + spec.h1
    return base + u2[..., None, None] * spec.h2 + beta[..., None, None] * spec.dephasing_op


def em_step(state, u2, spec, noise, cfg, dW, beta=0.0):
    """Advance one trajectory by ``cfg.dt``.

    ``beta`` is the current dephasing amplitude (see :func:`dephasing_sample`).
    The accumulated record ``y`` is advanced with the same ``dW``.
    """
    rho = state.rho
    h = total_hamiltonian(spec, u2, beta)
    diag = spec.observable_diag
    drho = sme_increment(rho, h, diag, noise.gamma, noise.diffusion_scale, cfg.dt, dW)
    new = hermitize(rho + drho)
    if not np.all(np.isfinite(new)):
        raise NumericalBlowupError("non-finite density matrix", step=state.step + 1)
    dy = measurement_increment(rho, spec, dW, cfg.dt, noise=noise)
    step = state.step + 1
    return replace(state, rho=new, t=step * cfg.dt, y=state.y + dy, step=step)


def measurement_increment(rho, spec, dW, dt, noise=None):
    """``dy = dW + sqrt(eta Gamma) Tr[(A + A^dag) rho] dt``."""
    scale = np.sqrt(spec.eta_meas * spec.gamma_meas) if noise is None else noise.diffusion_scale
    return dW + scale * measurement_drift(rho, spec.observable_diag) * dt


def sanitize(rho):
    """Project onto the set of density matrices.

    Symmetrise, clip negative eigenvalues and renormalise the trace.  Matrices
    that are already positive semidefinite are only symmetrised and
    renormalised, so valid states pass through unchanged up to rounding.

    Raises
    ------
    IntegrationDivergedError
        If a trace fell below 0.5 before renormalisation.
    """
    rho = hermitize(np.asarray(rho, dtype=complex))
    tr = np.real(np.trace(rho, axis1=-2, axis2=-1))
    if np.any(tr < 0.5) or not np.all(np.isfinite(tr)):
        raise IntegrationDivergedError(f"trace dropped to {np.min(tr):.3e}")
    w, v = np.linalg.eigh(rho)
    negative = w[..., 0] < 0
    if np.any(negative):
        clipped = np.clip(w, 0.0, None)
        rebuilt = hermitize((v * clipped[..., None, :]) @ dagger(v))
        rho = np.where(negative[..., None, None], rebuilt, rho)
        tr = np.real(np.trace(rho, axis1=-2, axis2=-1))
    return rho / tr[..., None, None]


def dephasing_sample(noise, t, rng):
    """Dephasing amplitude beta(t).

    ``rng`` identifies the trajectory's dephasing stream: an integer seed or a
    :class:`numpy.random.SeedSequence`.  The value is a pure function of
    ``(rng, window index)``, so repeated queries agree.
    """
    if noise.dephasing_amp == 0:
        return 0.0
    window = int(np.floor(t / noise.dephasing_dwell + 1e-9))
    if isinstance(rng, np.random.SeedSequence):
        seq = np.random.SeedSequence(rng.entropy, spawn_key=rng.spawn_key + (window,))
    else:
        seq = np.random.SeedSequence(rng, spawn_key=(window,))
    return float(noise.dephasing_amp * np.random.default_rng(seq).standard_normal())


def ensemble_drift_step(rho_bar, u2, spec, dt):
    """Euler step of the measurement-averaged (deterministic) equation."""
    h = total_hamiltonian(spec, u2)
    dmask, _ = _observable_masks(spec.observable_diag)
    return rho_bar + (-1j * commutator(h, rho_bar) + spec.gamma_meas * dmask * rho_bar) * dt


def ensemble_generator(spec, u2):
    """Superoperator of the averaged equation acting on row-major vec(rho)."""
    n = spec.dim
    h = total_hamiltonian(spec, u2)
    eye = np.eye(n)
    dmask, _ = _observable_masks(spec.observable_diag)
    # vec(X rho Y) = kron(X, Y^T) vec(rho) for row-major flattening
    comm = np.kron(h, eye) - np.kron(eye, h.T)
    return -1j * comm + spec.gamma_meas * np.diag(dmask.ravel())


def ensemble_flow(rho_bar, u2, spec, dt, n_steps):
    """Exact averaged evolution sampled every ``dt`` for ``n_steps`` steps.

    Returns an array of shape ``(n_steps + 1, n, n)``.
    """
    n = spec.dim
    prop = expm(ensemble_generator(spec, u2) * dt)
    out = np.empty((n_steps + 1, n, n), dtype=complex)
    vec = np.asarray(rho_bar, dtype=complex).ravel()
    out[0] = rho_bar
    for i in range(1, n_steps + 1):
        vec = prop @ vec
        out[i] = vec.reshape(n, n)
    return out
