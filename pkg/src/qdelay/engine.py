"""Vectorised closed-loop simulation of a batch of trajectories.

Every trajectory owns its random streams (derived from a
``numpy.random.SeedSequence``); the batch axis only shares arithmetic, never
randomness, so a trajectory's noise does not depend on which batch it ran in.
"""

from dataclasses import dataclass, field

import numpy as np

from .control import DelayBuffer, Latch, Strategy, classify_region, switch_branch
from .quantum import commutator, dagger, lyapunov_v1
from .sme import dephasing_sample, sanitize

NOISE_CHUNK = 1024


def _rowdot(flat, vec):
    """Real part of ``flat @ vec`` computed row by row.

    A BLAS matrix-vector product may round differently depending on the
    number of rows; this keeps each trajectory independent of batch size.
    """
    return np.real(np.sum(flat * vec, axis=1))


class SwitchingController:
    """Batched version of the bang-bang / switching-Lyapunov policies."""

    def __init__(self, strategy, gamma, k, spec):
        self.strategy = Strategy.parse(strategy)
        self.gamma = gamma
        self.k = k
        self.spec = spec
        self.latch = None
        # Tr(i[H2, rho] rho_d) = Tr(rho X) with X = i[rho_d, H2]
        x = 1j * commutator(spec.target, spec.h2)
        self._signal_vec = np.ascontiguousarray(x.T).ravel()

    def reset(self, m):
        self.latch = np.full(m, Latch.UNSET, dtype=np.int8)

    def __call__(self, rho_delayed, v_delayed):
        region = classify_region(np.clip(v_delayed, 0.0, 1.0), self.gamma)
        constant, self.latch = switch_branch(self.latch, region)
        if self.strategy is Strategy.BANG_BANG:
            return np.where(constant, 1.0, 0.0)
        m = rho_delayed.shape[0]
        signal = _rowdot(rho_delayed.reshape(m, -1), self._signal_vec)
        feedback = -self.k * signal
        return np.where(constant, 1.0, feedback)


class ConstantController:
    def __init__(self, value):
        self.value = float(value)

    def reset(self, m):
        self._u = np.full(m, self.value)

    def __call__(self, rho_delayed, v_delayed):
        return self._u


class _Kernel:
    """Precomputed operators for the batched Euler-Maruyama update.

    Linear functionals of rho (overlap with the target, measurement mean)
    are evaluated as a single product with the flattened state.
    """

    def __init__(self, spec, noise, dt):
        n = spec.dim
        self.n = n
        self.dt = dt
        self.h_base = spec.h0 + spec.h1
        self.h2 = spec.h2
        self.deph = spec.dephasing_op
        diag = spec.observable_diag
        self.dmask = (-0.5 * (diag[:, None] - diag[None, :]) ** 2) * noise.gamma * dt
        self.hmask = diag[:, None] + diag[None, :]
        self.scale = noise.diffusion_scale
        # Tr(rho X) = vec(rho) . vec(X^T)
        self.target_vec = np.ascontiguousarray(spec.target.T).ravel()
        self.meas_vec = np.diag(2.0 * diag).astype(complex).ravel()

    def distance(self, rho):
        ov = _rowdot(rho.reshape(rho.shape[0], -1), self.target_vec)
        return 1.0 - ov * ov

    def step(self, rho, u2, beta, dW):
        m = rho.shape[0]
        flat = rho.reshape(m, -1)
        mean = _rowdot(flat, self.meas_vec)
        h = self.h_base + u2[:, None, None] * self.h2
        if beta is not None:
            h = h + beta[:, None, None] * self.deph
        comm = h @ rho
        comm -= rho @ h
        drho = (-1j * self.dt) * comm
        drho += self.dmask * rho
        back = self.hmask * rho - mean[:, None, None] * rho
        drho += (self.scale * dW)[:, None, None] * back
        new = rho + drho
        return 0.5 * (new + np.conj(np.swapaxes(new, 1, 2))), mean


def trajectory_streams(seed, indices):
    """Per-trajectory ``(wiener, dephasing)`` seed sequences, counter mode."""
    out = []
    for i in indices:
        wiener, dephase = np.random.SeedSequence(seed, spawn_key=(int(i),)).spawn(2)
        out.append((wiener, dephase))
    return out


@dataclass
class BatchResult:
    checkpoint_times: np.ndarray
    checkpoint_v: np.ndarray          # (n_checkpoints, M)
    sup_v: np.ndarray                 # (M,)
    final_rho: np.ndarray             # (M, n, n)
    final_y: np.ndarray               # (M,)
    samples: dict = field(default_factory=dict)   # batch index -> series dict
    failed: dict = field(default_factory=dict)    # batch index -> failing step
    physicality: dict = field(default_factory=dict)
    lag: int = 0


def simulate_batch(spec, noise, integ, tau, controller, rho0, streams,
                   checkpoint_steps=100, keep_full=(0, 1), check_physical=False):
    """Integrate ``len(streams)`` closed-loop trajectories side by side.

    Parameters
    ----------
    spec : SystemSpec
    noise : NoiseModel
    integ : IntegratorConfig
    tau : float
        Feedback delay; quantised to whole steps.
    controller : SwitchingController or ConstantController
    rho0 : ndarray, shape (n, n)
    streams : list of (SeedSequence, SeedSequence)
        Wiener and dephasing streams per trajectory.
    checkpoint_steps : int
        Record the distance of every trajectory each this many steps.
    keep_full : iterable of int
        Batch indices whose full per-step series ``t, v, v1, u2, y`` are kept.
    check_physical : bool
        Track the worst Hermiticity, trace and eigenvalue error of every
        sanitised state (costs an extra eigen-solve per step).
    """
    integ.check_delay(tau)
    m = len(streams)
    n = spec.dim
    dt = integ.dt
    n_steps = integ.n_steps
    scale = noise.diffusion_scale
    sqrt_dt = np.sqrt(dt)

    rho = np.broadcast_to(np.asarray(rho0, dtype=complex), (m, n, n)).copy()
    y = np.zeros(m)
    alive = np.ones(m, dtype=bool)
    failed = {}
    wiener = [np.random.default_rng(w) for w, _ in streams]
    dephase_seeds = [d for _, d in streams]
    use_dephasing = noise.dephasing_amp > 0
    beta = np.zeros(m)
    window = -1

    buf = DelayBuffer(tau, dt)
    controller.reset(m)

    ckpt_idx = list(range(0, n_steps + 1, checkpoint_steps))
    if ckpt_idx[-1] != n_steps:
        ckpt_idx.append(n_steps)
    ckpt_set = {j: i for i, j in enumerate(ckpt_idx)}
    ckpt_v = np.empty((len(ckpt_idx), m))
    keep = [i for i in keep_full if 0 <= i < m]
    samples = {i: {key: np.empty(n_steps + 1) for key in ("t", "v", "v1", "u2", "y")}
               for i in keep}
    phys = {"max_hermiticity_error": 0.0, "max_trace_error": 0.0, "min_eigenvalue": np.inf}

    kern = _Kernel(spec, noise, dt)
    v = kern.distance(rho)
    sup_v = v.copy()
    dW_block = None
    for j in range(n_steps + 1):
        t = j * dt
        buf.push(rho)
        delayed = buf.delayed_state(t)
        v_delayed = v if buf.lag == 0 else kern.distance(delayed)
        u2 = controller(delayed, v_delayed)

        if keep:
            v1 = lyapunov_v1(rho[keep])
            for pos, i in enumerate(keep):
                s = samples[i]
                s["t"][j], s["v"][j], s["v1"][j], s["u2"][j], s["y"][j] = t, v[i], v1[pos], u2[i], y[i]
        if j in ckpt_set:
            ckpt_v[ckpt_set[j]] = v
        if j == n_steps:
            break

        if j % NOISE_CHUNK == 0:
            width = min(NOISE_CHUNK, n_steps - j)
            dW_block = np.stack([g.standard_normal(width) for g in wiener]) * sqrt_dt
        dW = dW_block[:, j % NOISE_CHUNK]
        if use_dephasing:
            w_now = int(np.floor(t / noise.dephasing_dwell + 1e-9))
            if w_now != window:
                window = w_now
                beta = np.array([dephasing_sample(noise, t, s) for s in dephase_seeds])

        rho, mean = kern.step(rho, u2, beta if use_dephasing else None, dW)
        y += dW + scale * mean * dt

        tr = np.real(np.einsum("mii->m", rho))
        bad = alive & ~(np.isfinite(tr) & (tr >= 0.5))
        if bad.any():
            for i in np.flatnonzero(bad):
                failed[int(i)] = j + 1
            alive &= ~bad
            rho[bad] = np.eye(n) / n
        if (j + 1) % integ.sanitize_every == 0:
            rho = sanitize(rho)
            if check_physical:
                _track_physicality(rho[alive], phys)
        v = kern.distance(rho)
        np.maximum(sup_v, v, out=sup_v)

    return BatchResult(
        checkpoint_times=np.array(ckpt_idx) * dt,
        checkpoint_v=ckpt_v,
        sup_v=sup_v,
        final_rho=rho,
        final_y=y,
        samples=samples,
        failed=failed,
        physicality=phys if check_physical else {},
        lag=buf.lag,
    )


def _track_physicality(rho, phys):
    if rho.size == 0:
        return
    herm = float(np.max(np.abs(rho - dagger(rho))))
    tr = float(np.max(np.abs(np.real(np.einsum("mii->m", rho)) - 1.0)))
    lo = float(np.min(np.linalg.eigvalsh(rho)))
    phys["max_hermiticity_error"] = max(phys["max_hermiticity_error"], herm)
    phys["max_trace_error"] = max(phys["max_trace_error"], tr)
    phys["min_eigenvalue"] = min(phys["min_eigenvalue"], lo)
