"""Delay-dependent LMI for the two-qubit Bell example, and the reduced mu3 model.

The matrix inequality is stated in the variables ``(mu(t), mu(t - tau), f(t),
slack, integral)``.  Its upper-left block ``M + S S~`` is not symmetric; the
quadratic form only sees the symmetric part, so that is what gets tested.

Note that ``M`` carries ``+tau*r`` on its third diagonal entry and ``S~`` has
a zero there, so for ``tau > 0`` the assembled matrix always has a positive
diagonal entry.  :func:`search_feasible` reports that obstruction explicitly.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .errors import ContractError, InfeasibleAtZeroError, InvalidDimensionError

S_TILDE = np.array([2.0, -2.0, 0.0])
FEASIBILITY_MARGIN = 1e-6


@dataclass(frozen=True)
class LmiProblem:
    tau: float
    k: float

    def __post_init__(self):
        if not (np.isfinite(self.tau) and np.isfinite(self.k)):
            raise ContractError("tau and k must be finite")
        if self.tau < 0:
            raise ContractError(f"tau must be >= 0, got {self.tau}")


@dataclass(frozen=True, eq=False)
class LmiCandidate:
    q: float
    r: float
    eps: float
    s: np.ndarray

    def __post_init__(self):
        if min(self.q, self.r, self.eps) <= 0:
            raise ContractError("q, r and eps must be positive")
        s = np.asarray(self.s, dtype=float).reshape(3)
        object.__setattr__(self, "s", s)

    def as_dict(self):
        return {"q": self.q, "r": self.r, "eps": self.eps,
                "s1": self.s[0], "s2": self.s[1], "s3": self.s[2]}


def lmi_m_block(prob, cand):
    tau, k = prob.tau, prob.k
    return np.array([
        [cand.q + tau * cand.eps, -2.0 * k, 0.0],
        [-2.0 * k, -cand.q, 0.0],
        [0.0, 0.0, tau * cand.r],
    ])


def assemble_lmi(prob, cand):
    """Symmetric 5x5 matrix whose negative definiteness is the criterion."""
    s = cand.s.reshape(3, 1)
    top = lmi_m_block(prob, cand) + s @ S_TILDE.reshape(1, 3)
    tau = prob.tau
    out = np.zeros((5, 5))
    out[:3, :3] = top
    out[:3, 3:4] = s
    out[:3, 4:5] = tau * s
    out[3:4, :3] = s.T
    out[4:5, :3] = tau * s.T
    out[3, 3] = -cand.eps
    out[4, 4] = -tau * cand.r
    return 0.5 * (out + out.T)


# slots kept when tau = 0: mu(t), mu(t - tau) and the slack row
_DELAY_FREE_SLOTS = [0, 1, 3]


def criterion_matrix(prob, cand):
    """The matrix actually tested.

    For ``tau > 0`` this is :func:`assemble_lmi`.  For ``tau = 0`` the f(t)
    and integral slots carry nothing but zero diagonals (``tau*r``) and the
    free coupling ``S[2]``; they are dropped, leaving a 3x3 problem.
    """
    full = assemble_lmi(prob, cand)
    if prob.tau == 0:
        return full[np.ix_(_DELAY_FREE_SLOTS, _DELAY_FREE_SLOTS)]
    return full


def is_negative_definite(m, margin=0.0):
    """Return ``(max_eigenvalue < -margin, max_eigenvalue)``."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ContractError(f"expected a square matrix, got shape {m.shape}")
    if np.max(np.abs(m - m.T)) > 1e-12:
        raise ContractError("matrix is not symmetric")
    if margin < 0:
        raise ContractError("margin must be >= 0")
    top = float(np.linalg.eigvalsh(m)[-1])
    return top < -margin, top


@dataclass(frozen=True)
class SearchBox:
    log10_min: float = -3.0
    log10_max: float = 3.0
    s_min: float = -10.0
    s_max: float = 10.0

    def __post_init__(self):
        if not (self.log10_min < self.log10_max and self.s_min < self.s_max):
            raise ContractError(f"empty search box {self}")


@dataclass
class FeasibilityReport:
    tau: float
    k: float
    feasible: bool
    max_eigenvalue: float
    candidate: LmiCandidate
    evaluations: int
    seed: int
    margin: float = FEASIBILITY_MARGIN
    notes: list = field(default_factory=list)

    def as_lines(self, prefix="lmi_"):
        lines = [
            f"{prefix}tau={self.tau:.12g}",
            f"{prefix}k={self.k:.12g}",
            f"{prefix}feasible={str(self.feasible).lower()}",
            f"{prefix}max_eigenvalue={self.max_eigenvalue:.12g}",
            f"{prefix}margin={self.margin:.12g}",
            f"{prefix}evaluations={self.evaluations}",
            f"{prefix}seed={self.seed}",
        ]
        lines += [f"{prefix}{key}={val:.12g}" for key, val in self.candidate.as_dict().items()]
        lines += [f"{prefix}note={note}" for note in self.notes]
        return lines


def _decode(x, box):
    logs = np.clip(x[..., :3], box.log10_min, box.log10_max)
    s = np.clip(x[..., 3:], box.s_min, box.s_max)
    return 10.0 ** logs, s


def _batch_matrices(prob, x, box):
    """Criterion matrices for a batch of encoded candidates ``x`` (..., 6)."""
    scales, s = _decode(x, box)
    q, r, eps = scales[..., 0], scales[..., 1], scales[..., 2]
    tau, k = prob.tau, prob.k
    shape = x.shape[:-1]
    mat = np.zeros(shape + (5, 5))
    mat[..., 0, 0] = q + tau * eps
    mat[..., 1, 1] = -q
    mat[..., 2, 2] = tau * r
    mat[..., 0, 1] = mat[..., 1, 0] = -2.0 * k
    mat[..., :3, :3] += s[..., :, None] * S_TILDE[None, :]
    mat[..., :3, 3] = s
    mat[..., :3, 4] = tau * s
    mat[..., 3, :3] = s
    mat[..., 4, :3] = tau * s
    mat[..., 3, 3] = -eps
    mat[..., 4, 4] = -tau * r
    mat = 0.5 * (mat + np.swapaxes(mat, -1, -2))
    if prob.tau == 0:
        mat = mat[..., _DELAY_FREE_SLOTS, :][..., :, _DELAY_FREE_SLOTS]
    return mat


def _candidate(x, box):
    (q, r, eps), s = _decode(x, box)
    return LmiCandidate(float(q), float(r), float(eps), s)


def search_feasible(prob, budget=10_000, ranges=None, seed=0, refine_iters=200,
                    n_refine=5, margin=FEASIBILITY_MARGIN):
    """Look for ``(q, r, eps, S)`` making the criterion matrix negative definite.

    Random multi-start over log-uniform ``q, r, eps`` and uniform ``S``
    followed by Nelder-Mead refinement of the ``n_refine`` best starts on the
    largest eigenvalue.  Returns the first candidate below ``-margin``, or the
    best one seen.  A negative result means "not found within budget" only.
    """
    if budget < 1:
        raise ContractError("budget must be >= 1")
    box = SearchBox() if ranges is None else ranges
    rng = np.random.default_rng(seed)
    x = np.empty((budget, 6))
    x[:, :3] = rng.uniform(box.log10_min, box.log10_max, (budget, 3))
    x[:, 3:] = rng.uniform(box.s_min, box.s_max, (budget, 3))
    tops = np.linalg.eigvalsh(_batch_matrices(prob, x, box))[:, -1]
    evaluations = budget
    notes = []
    if prob.tau > 0:
        notes.append("diagonal entry (3,3) equals tau*r > 0 for every candidate")

    hits = np.flatnonzero(tops < -margin)
    if hits.size:
        best_x, best_top = x[hits[0]], float(tops[hits[0]])
    else:
        order = np.argsort(tops, kind="stable")[:n_refine]
        best_x, best_top = x[order[0]], float(tops[order[0]])
        for idx in order:
            def objective(z):
                return float(np.linalg.eigvalsh(_batch_matrices(prob, z, box))[-1])

            res = minimize(objective, x[idx], method="Nelder-Mead",
                           options={"maxiter": refine_iters, "xatol": 1e-10, "fatol": 1e-12})
            evaluations += res.nfev
            if res.fun < best_top:
                best_x, best_top = np.asarray(res.x), float(res.fun)
            if best_top < -margin:
                break

    cand = _candidate(best_x, box)
    ok, top = is_negative_definite(criterion_matrix(prob, cand), margin)
    return FeasibilityReport(prob.tau, prob.k, ok, top, cand, evaluations, seed, margin, notes)


@dataclass
class DelayBracket:
    k: float
    lower: float
    upper: float
    precision: float
    lower_report: FeasibilityReport
    heuristic: bool = True   # assumes feasibility is monotone in tau


def max_stable_delay(k, precision=0.05, tau_max=5.0, budget=2000, seed=0, **search_kw):
    """Bisect on tau for the largest delay the search still certifies.

    Returns a :class:`DelayBracket` ``[lower, upper]`` of width <= precision,
    with ``lower`` certified feasible.  ``upper`` equals ``tau_max`` when the
    whole range is feasible.

    Raises
    ------
    InfeasibleAtZeroError
        If no candidate is found even for ``tau = 0``.
    """
    if not k > 0:
        raise ContractError("k must be positive")
    if not precision > 0:
        raise ContractError("precision must be positive")

    def check(tau):
        return search_feasible(LmiProblem(tau, k), budget=budget, seed=seed, **search_kw)

    rep0 = check(0.0)
    if not rep0.feasible:
        raise InfeasibleAtZeroError(f"no feasible candidate at tau=0 for k={k}", rep0)
    lo, lo_rep, hi = 0.0, rep0, float(tau_max)
    rep_hi = check(hi)
    if rep_hi.feasible:
        return DelayBracket(k, hi, hi, precision, rep_hi)
    while hi - lo > precision:
        mid = 0.5 * (lo + hi)
        rep = check(mid)
        if rep.feasible:
            lo, lo_rep = mid, rep
        else:
            hi = mid
    return DelayBracket(k, lo, hi, precision, lo_rep)


# -- reduced two-qubit coordinates --------------------------------------------

_UPPER = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]


@dataclass(frozen=True, eq=False)
class ReducedState:
    """Real coordinates of a two-qubit density matrix.

    ``nu`` holds the first three populations; ``lam``/``mu`` the real and
    negated imaginary parts of the upper off-diagonal entries in the order
    (1,2), (1,3), (1,4), (2,3), (2,4), (3,4).
    """

    nu: np.ndarray
    lam: np.ndarray
    mu: np.ndarray

    @property
    def mu3(self):
        return float(self.mu[2])

    @property
    def nu2(self):
        return float(self.nu[1])

    @property
    def nu3(self):
        return float(self.nu[2])

    def lambda_(self, i):
        return float(self.lam[i - 1])

    def embed(self):
        rho = np.zeros((4, 4), dtype=complex)
        rho[0, 0], rho[1, 1], rho[2, 2] = self.nu
        rho[3, 3] = 1.0 - np.sum(self.nu)
        for (i, j), lam, mu in zip(_UPPER, self.lam, self.mu):
            rho[i, j] = lam - 1j * mu
            rho[j, i] = lam + 1j * mu
        return rho


def extract_reduced(rho):
    rho = np.asarray(rho)
    if rho.shape != (4, 4):
        raise InvalidDimensionError(f"expected a 4x4 state, got shape {rho.shape}")
    upper = np.array([rho[i, j] for i, j in _UPPER])
    return ReducedState(nu=np.real(np.diag(rho)[:3]).copy(),
                        lam=np.real(upper).copy(), mu=-np.imag(upper).copy())


def mu3_drift(s, u2):
    return s.lambda_(1) - s.lambda_(2) + s.lambda_(5) - s.lambda_(6) + 2.0 * s.lambda_(3) * u2


def mu3_reduced_step(s, u2, dt, dW, scale=1.0):
    """One Euler-Maruyama step of mu3; ``scale`` is sqrt(eta * Gamma)."""
    diffusion = 4.0 * s.mu3 * (s.nu2 + s.nu3)
    return s.mu3 + mu3_drift(s, u2) * dt + scale * diffusion * dW
