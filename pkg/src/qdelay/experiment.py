"""Experiment configuration, seeded ensembles, figure presets and CSV export."""

import dataclasses
import hashlib
import logging
import os
import time
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import __version__
from .control import Strategy
from .engine import ConstantController, SwitchingController, simulate_batch, trajectory_streams
from .errors import ConfigError, NumericalBlowupError, PartialResultsError, UnknownPresetError
from .lmi import LmiProblem, search_feasible
from .quantum import bell_example_spec, check_density_matrix, validate_hamiltonians
from .sme import IntegratorConfig, NoiseModel

log = logging.getLogger(__name__)

NAMED_STATES = {
    "rho1": [0.0, 1.0, 0.0, 0.0],
    "rho2": [1.0, 0.0, 0.0, 0.0],
    "mixed": [0.25, 0.25, 0.25, 0.25],
}


def initial_density(value):
    """Resolve an initial state: a name, ``"diag:a,b,c,d"`` or a matrix."""
    if isinstance(value, str):
        key = value.strip().lower()
        if key == "target":
            return bell_example_spec().target.copy()
        if key in NAMED_STATES:
            return np.diag(NAMED_STATES[key]).astype(complex)
        if key.startswith("diag:"):
            entries = [float(x) for x in key[5:].split(",")]
            return check_density_matrix(np.diag(entries).astype(complex))
        raise ConfigError(f"unknown initial state {value!r}")
    return check_density_matrix(np.asarray(value, dtype=complex))


@dataclass
class ExperimentConfig:
    strategy: Strategy = Strategy.BANG_BANG
    tau: float = 0.2
    gamma: float = 0.06
    k: float = 1.0
    dt: float = 1e-3
    horizon: float = 50.0
    n_traj: int = 30
    eta: float = 1.0
    gamma_meas: float = 1.0
    dephasing_amp: float = 0.0
    dephasing_dwell: float = 0.1
    seed: int = 20200101
    initial_state: object = "rho1"
    output_dir: str = "out"
    checkpoint_interval: float = 0.1
    sanitize_every: int = 1

    def __post_init__(self):
        self.strategy = Strategy.parse(self.strategy)
        if self.n_traj < 1:
            raise ConfigError("n_traj must be >= 1")
        n = 4
        if not 0 < self.gamma < 1.0 / n**2:
            raise ConfigError(f"gamma must lie in (0, 1/n^2) = (0, {1 / n**2}), got {self.gamma}")
        if not self.k > 0:
            raise ConfigError("k must be positive")
        if self.tau < 0:
            raise ConfigError("tau must be >= 0")
        if self.checkpoint_interval < self.dt:
            raise ConfigError("checkpoint_interval must be >= dt")
        self.integrator()
        self.noise()
        self.initial_rho()

    def integrator(self):
        cfg = IntegratorConfig(dt=self.dt, horizon=self.horizon, sanitize_every=self.sanitize_every)
        cfg.check_delay(self.tau)
        return cfg

    def noise(self):
        return NoiseModel(eta=self.eta, gamma=self.gamma_meas,
                          dephasing_amp=self.dephasing_amp, dephasing_dwell=self.dephasing_dwell)

    def system(self):
        return bell_example_spec(eta_meas=self.eta, gamma_meas=self.gamma_meas)

    def initial_rho(self):
        return initial_density(self.initial_state)

    @property
    def checkpoint_steps(self):
        return max(1, int(round(self.checkpoint_interval / self.dt)))

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def echo(self):
        """Ordered ``(key, text)`` pairs of every field."""
        out = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, Strategy):
                text = value.name.lower()
            elif isinstance(value, float):
                text = f"{value:.12g}"
            elif isinstance(value, np.ndarray):
                text = "matrix:" + ";".join(
                    ",".join(f"{z.real:.12g}{z.imag:+.12g}j" for z in row) for row in value)
            else:
                text = str(value)
            out.append((f.name, text))
        return out

    def fingerprint(self):
        text = "\n".join(f"{k}={v}" for k, v in self.echo() if k != "output_dir")
        return hashlib.sha256(text.encode()).hexdigest()[:12]


_CONFIG_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
_INT_FIELDS = {"n_traj", "seed", "sanitize_every"}
_STR_FIELDS = {"initial_state", "output_dir", "strategy"}


def parse_config_text(text, base=None):
    """Parse flat ``key=value`` lines (``#`` comments allowed) into a config."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "preset":
            base = preset(value)
            continue
        if key not in _CONFIG_FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            if key in _INT_FIELDS:
                values[key] = int(value)
            elif key in _STR_FIELDS:
                values[key] = value
            else:
                values[key] = float(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from exc
    if base is None:
        return ExperimentConfig(**values)
    return base.replace(**values)


def load_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text)


# fig4 dephasing: beta(t) ~ N(0, 0.5^2) redrawn every 0.1 time units
_PRESETS = {
    "fig1": dict(strategy=Strategy.BANG_BANG, initial_state="rho1", tau=0.2),
    "fig2": dict(strategy=Strategy.SWITCHING_LYAPUNOV, initial_state="rho1", tau=0.2),
    "fig3a": dict(strategy=Strategy.SWITCHING_LYAPUNOV, initial_state="rho2", eta=0.8),
    "fig3b": dict(strategy=Strategy.BANG_BANG, initial_state="rho2", eta=0.8),
    "fig4a": dict(strategy=Strategy.SWITCHING_LYAPUNOV, initial_state="rho2",
                  dephasing_amp=0.5, dephasing_dwell=0.1),
    "fig4b": dict(strategy=Strategy.BANG_BANG, initial_state="rho2",
                  dephasing_amp=0.5, dephasing_dwell=0.1),
    "fig5": dict(strategy=Strategy.SWITCHING_LYAPUNOV, initial_state="rho1", tau=0.1),
    "fig5a": dict(strategy=Strategy.SWITCHING_LYAPUNOV, initial_state="rho1", tau=0.1),
    "fig5b": dict(strategy=Strategy.BANG_BANG, initial_state="rho1", tau=0.1),
}

# presets that stand for a strategy comparison
PRESET_PAIRS = {"fig3": ("fig3a", "fig3b"), "fig4": ("fig4a", "fig4b"), "fig5": ("fig5a", "fig5b")}


def preset_names():
    return sorted(_PRESETS)


def preset(name):
    """Configuration reproducing one of the published figures.

    ``fig5`` is the switching-Lyapunov arm of the comparison; ``fig5b`` is the
    bang-bang arm.  Common settings: tau=0.2, gamma=0.06, k=1, Gamma=1,
    30 trajectories, T=50, dt=1e-3.
    """
    try:
        overrides = _PRESETS[name]
    except KeyError:
        raise UnknownPresetError(f"unknown preset {name!r}; choose from {preset_names()}") from None
    return ExperimentConfig(**overrides)


@lru_cache(maxsize=8)
def _validated(eta, gamma_meas):
    spec = bell_example_spec(eta_meas=eta, gamma_meas=gamma_meas)
    return validate_hamiltonians(spec)


@dataclass
class TrajectorySeries:
    t: np.ndarray
    v: np.ndarray
    v1: np.ndarray
    u2: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.t)


def _controller(cfg, spec):
    return SwitchingController(cfg.strategy, cfg.gamma, cfg.k, spec)


def run_trajectory(cfg, traj_seed=0):
    """Full per-step series of trajectory ``traj_seed`` of ``cfg``.

    Trajectory ``i`` of :func:`run_ensemble` uses the same random streams.

    Raises
    ------
    NumericalBlowupError
        With the failing step and the config fingerprint.
    """
    _validated(cfg.eta, cfg.gamma_meas)
    spec = cfg.system()
    res = simulate_batch(spec, cfg.noise(), cfg.integrator(), cfg.tau, _controller(cfg, spec),
                         cfg.initial_rho(), trajectory_streams(cfg.seed, [traj_seed]),
                         checkpoint_steps=cfg.checkpoint_steps, keep_full=(0,))
    if res.failed:
        raise NumericalBlowupError("trajectory diverged", step=res.failed[0],
                                   fingerprint=cfg.fingerprint())
    s = res.samples[0]
    return TrajectorySeries(s["t"], s["v"], s["v1"], s["u2"], s["y"])


@dataclass
class EnsembleSummary:
    t: np.ndarray
    v_mean: np.ndarray
    v_stderr: np.ndarray
    checkpoint_v: np.ndarray                       # (n_checkpoints, n_traj)
    samples: list = field(default_factory=list)    # TrajectorySeries of the first two
    metadata: dict = field(default_factory=dict)
    sup_v: np.ndarray = None
    physicality: dict = field(default_factory=dict)

    @property
    def terminal_v(self):
        return self.checkpoint_v[-1]

    def at(self, time_point):
        """Index of the checkpoint closest to ``time_point``."""
        return int(np.argmin(np.abs(self.t - time_point)))


def ensemble_statistics(values):
    """Mean and standard error over the trajectory axis (last)."""
    values = np.asarray(values, dtype=float)
    m = values.shape[-1]
    mean = values.mean(axis=-1)
    if m < 2:
        return mean, np.zeros_like(mean)
    return mean, values.std(axis=-1, ddof=1) / np.sqrt(m)


def run_ensemble(cfg, check_physical=False, lmi_check=False, controller=None):
    """Run ``cfg.n_traj`` trajectories and summarise the distance to target.

    Trajectory ``i`` draws its noise from ``SeedSequence(cfg.seed,
    spawn_key=(i,))``; the first two are archived in full.

    Parameters
    ----------
    check_physical : bool
        Record the worst physicality errors of all sanitised states.
    lmi_check : bool
        Attach a feasibility report for ``(cfg.tau, cfg.k)``.
    controller : optional
        Override the switching controller (e.g. a constant control).
    """
    validation = _validated(cfg.eta, cfg.gamma_meas)
    spec = cfg.system()
    integ = cfg.integrator()
    started = time.perf_counter()
    ctrl = _controller(cfg, spec) if controller is None else controller
    res = simulate_batch(spec, cfg.noise(), integ, cfg.tau, ctrl, cfg.initial_rho(),
                         trajectory_streams(cfg.seed, range(cfg.n_traj)),
                         checkpoint_steps=cfg.checkpoint_steps, keep_full=(0, 1),
                         check_physical=check_physical)
    wall = time.perf_counter() - started

    ok = np.ones(cfg.n_traj, dtype=bool)
    ok[list(res.failed)] = False
    mean, se = ensemble_statistics(res.checkpoint_v[:, ok])
    samples = [TrajectorySeries(s["t"], s["v"], s["v1"], s["u2"], s["y"])
               for _, s in sorted(res.samples.items())]
    meta = {key: text for key, text in cfg.echo()}
    meta.update({
        "version": __version__,
        "config_fingerprint": cfg.fingerprint(),
        "scheme": integ.scheme,
        "n_steps": str(integ.n_steps),
        "delay_steps": str(res.lag),
        "delay_quantization_error": f"{abs(res.lag * cfg.dt - cfg.tau):.12g}",
        "history_policy": "hold-initial",
        "seed_derivation": "SeedSequence(seed, spawn_key=(trajectory_index,))",
        "dephasing_model": "piecewise-constant gaussian",
        "validation_eigenspace_min_commutator": f"{validation.eigenspace_min_commutator:.12g}",
        "validation_commutant_min_commutator": f"{validation.commutant_min_commutator:.12g}",
        "wall_time_s": f"{wall:.3f}",
    })
    if controller is not None:
        meta["controller"] = type(controller).__name__
    for key, value in res.physicality.items():
        meta[f"physicality_{key}"] = f"{value:.12g}"
    if lmi_check:
        report = search_feasible(LmiProblem(cfg.tau, cfg.k), seed=cfg.seed)
        for line in report.as_lines():
            key, value = line.split("=", 1)
            meta[key] = value
    summary = EnsembleSummary(t=res.checkpoint_times, v_mean=mean, v_stderr=se,
                              checkpoint_v=res.checkpoint_v, samples=samples, metadata=meta,
                              sup_v=res.sup_v, physicality=res.physicality)
    if res.failed:
        raise PartialResultsError("some trajectories diverged",
                                  sorted(res.failed), summary=summary)
    return summary


def run_constant_control(cfg, u2):
    """Ensemble under a fixed control value (no switching)."""
    return run_ensemble(cfg, controller=ConstantController(u2))


def _fmt(x):
    return format(float(x), ".12g")


def _write_csv(path, header, columns):
    lines = [",".join(header)]
    for row in zip(*columns):
        lines.append(",".join(_fmt(x) for x in row))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def export_csv(summary, directory):
    """Write ``summary.csv``, ``sample_1.csv``, ``sample_2.csv`` and ``meta.txt``.

    Returns the list of written paths.
    """
    try:
        os.makedirs(directory, exist_ok=True)
        written = []
        path = os.path.join(directory, "summary.csv")
        _write_csv(path, ["t", "v_mean", "v_stderr"], [summary.t, summary.v_mean, summary.v_stderr])
        written.append(path)
        for i, s in enumerate(summary.samples[:2], 1):
            path = os.path.join(directory, f"sample_{i}.csv")
            _write_csv(path, ["t", "v", "u2", "y"], [s.t, s.v, s.u2, s.y])
            written.append(path)
        path = os.path.join(directory, "meta.txt")
        with open(path, "w", newline="") as fh:
            fh.write("".join(f"{k}={v}\n" for k, v in summary.metadata.items()))
        written.append(path)
    except OSError as exc:
        raise OSError(f"cannot write results to {directory}: {exc}") from exc
    return written


def read_summary_csv(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {"t": data[:, 0], "v_mean": data[:, 1], "v_stderr": data[:, 2]}
