"""Delayed switching controllers and the state-history buffer."""

from dataclasses import dataclass, replace
from enum import IntEnum

import numpy as np

from .errors import ContractError, InvalidDistanceError, NotInitializedError
from .quantum import control_signal_raw


class Region(IntEnum):
    LOW = 0    # V < 1 - gamma
    MID = 1    # 1 - gamma <= V < 1 - gamma/2
    HIGH = 2   # V >= 1 - gamma/2


class Latch(IntEnum):
    UNSET = 0
    FROM_HIGH = 1
    FROM_LOW = 2
    INITIAL_MID = 3


class Strategy(IntEnum):
    BANG_BANG = 0
    SWITCHING_LYAPUNOV = 1

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        key = str(name).strip().upper().replace("-", "_")
        aliases = {"BANGBANG": "BANG_BANG", "LYAPUNOV": "SWITCHING_LYAPUNOV"}
        return cls[aliases.get(key, key)]


_LOW, _MID, _HIGH = int(Region.LOW), int(Region.MID), int(Region.HIGH)
_UNSET, _FROM_HIGH, _FROM_LOW, _INITIAL_MID = (
    int(Latch.UNSET), int(Latch.FROM_HIGH), int(Latch.FROM_LOW), int(Latch.INITIAL_MID))


def classify_region(v, gamma, slack=1e-9):
    """Region of a distance value ``v`` (scalar or array).

    Returns a :class:`Region` for scalars and an ``int`` array otherwise.
    """
    v_arr = np.asarray(v, dtype=float)
    if np.any(v_arr < -slack) or np.any(v_arr > 1 + slack) or not np.all(np.isfinite(v_arr)):
        raise InvalidDistanceError(f"distance outside [0, 1]: {v}")
    region = (v_arr >= 1 - gamma).astype(np.int8) + (v_arr >= 1 - gamma / 2)
    if region.ndim == 0:
        return Region(int(region))
    return region


def switch_branch(latch, region):
    """Hysteresis update shared by both strategies.

    Parameters
    ----------
    latch, region : int or array of int
        Current latch and region of the delayed state.

    Returns
    -------
    constant : bool or bool array
        True where the constant control ``u = 1`` applies, False where the
        low-distance law applies.
    latch : int or int array
        Updated latch.  It only changes on entering HIGH or LOW, except that
        an unset latch facing MID becomes ``INITIAL_MID``.
    """
    latch = np.asarray(latch, dtype=np.int8)
    region = np.asarray(region, dtype=np.int8)
    new = np.where(latch == _UNSET, _INITIAL_MID, latch).astype(np.int8)
    new = np.where(region == _HIGH, _FROM_HIGH, np.where(region == _LOW, _FROM_LOW, new))
    constant = new != _FROM_LOW
    if new.ndim == 0:
        return bool(constant), Latch(int(new))
    return constant, new.astype(np.int8)


@dataclass(frozen=True)
class ControllerState:
    gamma: float
    k: float = 1.0
    strategy: Strategy = Strategy.BANG_BANG
    region: Region = None
    latch: Latch = Latch.UNSET

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ContractError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not self.k > 0:
            raise ContractError(f"gain k must be positive, got {self.k}")
        object.__setattr__(self, "strategy", Strategy.parse(self.strategy))


def bangbang_policy(ctrl, region_delayed):
    """Return ``(u2, new_ctrl)`` with ``u2`` in {0, 1}."""
    constant, latch = switch_branch(ctrl.latch, region_delayed)
    u2 = 1.0 if constant else 0.0
    return u2, replace(ctrl, region=Region(region_delayed), latch=latch)


def lyapunov_policy(ctrl, rho_delayed, region_delayed, spec):
    """Return ``(u2, new_ctrl)``: 1 on the constant branch, otherwise the
    delayed Lyapunov feedback ``-k Tr(i[H2, rho_delayed] rho_d)``."""
    constant, latch = switch_branch(ctrl.latch, region_delayed)
    if constant:
        u2 = 1.0
    else:
        u2 = float(-ctrl.k * control_signal_raw(rho_delayed, spec.h2, spec.target))
    return u2, replace(ctrl, region=Region(region_delayed), latch=latch)


class DelayBuffer:
    """Ring of past states that returns rho(t - tau).

    The delay is quantised to ``lag = round(tau / dt)`` steps.  Before the
    first ``lag`` steps have elapsed the initial state is returned
    (hold-initial history).  Snapshots may carry a leading batch axis.
    """

    def __init__(self, tau, dt):
        if tau < 0 or not dt > 0:
            raise ContractError(f"invalid delay/step: tau={tau}, dt={dt}")
        self.tau = float(tau)
        self.dt = float(dt)
        self.lag = int(round(tau / dt))
        if tau > 0 and self.lag < 1:
            raise ContractError(f"dt={dt} is too coarse for tau={tau}")
        self._ring = None
        self._initial = None
        self._count = 0

    @property
    def capacity(self):
        return max(self.lag, 1)

    @property
    def quantization_error(self):
        return abs(self.lag * self.dt - self.tau)

    def __len__(self):
        return self._count

    def push(self, rho):
        rho = np.asarray(rho)
        if self._ring is None:
            self._ring = np.empty((self.lag + 1,) + rho.shape, dtype=rho.dtype)
            self._initial = rho.copy()
        self._ring[self._count % (self.lag + 1)] = rho
        self._count += 1

    def delayed_state(self, t):
        if self._ring is None:
            raise NotInitializedError("delay buffer has not been fed")
        step = int(round(t / self.dt))
        if step >= self._count:
            raise NotInitializedError(f"no snapshot recorded yet for t={t}")
        src = step - self.lag
        if src < 0:
            return self._initial
        if src < self._count - (self.lag + 1):
            raise ContractError(f"snapshot for t={t - self.tau} has been overwritten")
        return self._ring[src % (self.lag + 1)]


def delayed_state(buf, t):
    return buf.delayed_state(t)
