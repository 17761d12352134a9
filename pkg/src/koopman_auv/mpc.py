"""Constrained MPC on the lifted model with input-increment decisions.

The lifted state is augmented with the previous input so that the decision
variables are input increments::

    zbar_{k+1} = [A B; 0 I] zbar_k + [B; I] du_k,   zbar_k = [z_k; u_{k-1}]

which gives ``u_k = u_{k-1} + du_k`` and ``z_{k+1} = A z_k + B u_k``. The
finite-horizon problem is condensed into a dense QP in the stacked
increments and solved with a primal active-set method.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.optimize import linprog

from .edmd import LiftedModel
from .lifting import lift

__all__ = [
    "AugmentedModel",
    "MpcConfig",
    "PRESETS",
    "CondensedQp",
    "QpInfeasibleError",
    "augment",
    "build_qp",
    "solve_qp",
    "KoopmanMPC",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AugmentedModel:
    a_bar: np.ndarray
    b_bar: np.ndarray
    c_bar: np.ndarray


def augment(model: LiftedModel) -> AugmentedModel:
    N, p, n = model.n_lifted, model.p, model.n
    a_bar = np.block([[model.a, model.b], [np.zeros((p, N)), np.eye(p)]])
    b_bar = np.vstack([model.b, np.eye(p)])
    c_bar = np.hstack([model.c, np.zeros((n, p))])
    return AugmentedModel(a_bar=a_bar, b_bar=b_bar, c_bar=c_bar)


def _as_matrix(value, size: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = arr * np.eye(size)
    elif arr.ndim == 1 and arr.size == size:
        arr = np.diag(arr)
    if arr.shape != (size, size):
        raise ValueError(f"{name} must be a {size}x{size} matrix or a scalar")
    return arr


def _as_vector(value, size: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(size, float(arr))
    arr = arr.ravel()
    if arr.size != size:
        raise ValueError(f"{name} must have {size} entries")
    return arr


@dataclass
class MpcConfig:
    """Weights, horizon and box constraints.

    Scalars are accepted for every field and broadcast to the required
    shape given ``n`` (state dimension) and ``p`` (input dimension).
    """

    q_u: np.ndarray = 2000.0
    q_n: np.ndarray = 2000.0
    r: np.ndarray = 0.01
    horizon: int = 10
    u_min: np.ndarray = -50.0
    u_max: np.ndarray = 50.0
    du_min: np.ndarray = -20.0
    du_max: np.ndarray = 20.0
    x_min: np.ndarray = -np.inf
    x_max: np.ndarray = np.inf
    n: int = 1
    p: int = 1

    def __post_init__(self):
        n, p = self.n, self.p
        self.q_u = _as_matrix(self.q_u, n, "q_u")
        self.q_n = _as_matrix(self.q_n, n, "q_n")
        self.r = _as_matrix(self.r, p, "r")
        self.horizon = int(self.horizon)
        self.u_min = _as_vector(self.u_min, p, "u_min")
        self.u_max = _as_vector(self.u_max, p, "u_max")
        self.du_min = _as_vector(self.du_min, p, "du_min")
        self.du_max = _as_vector(self.du_max, p, "du_max")
        self.x_min = _as_vector(self.x_min, n, "x_min")
        self.x_max = _as_vector(self.x_max, n, "x_max")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        for name in ("q_u", "q_n", "r"):
            m = getattr(self, name)
            if not np.allclose(m, m.T):
                raise ValueError(f"{name} must be symmetric")
        if np.linalg.eigvalsh(self.q_u).min() < 0 or np.linalg.eigvalsh(self.q_n).min() < 0:
            raise ValueError("q_u and q_n must be positive semidefinite")
        if np.linalg.eigvalsh(self.r).min() <= 0:
            raise ValueError("r must be positive definite")
        for lo, hi in (("u_min", "u_max"), ("du_min", "du_max"), ("x_min", "x_max")):
            if not np.all(getattr(self, lo) < getattr(self, hi)):
                raise ValueError(f"{lo} must be below {hi}")

    @classmethod
    def from_mapping(cls, values: Mapping) -> "MpcConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown MPC setting(s): {sorted(unknown)}")
        return cls(**{k: _parse_bound(v) for k, v in values.items()})

    @classmethod
    def preset(cls, name: str, **overrides) -> "MpcConfig":
        try:
            base = PRESETS[name]
        except KeyError:
            raise ValueError(f"unknown MPC preset {name!r}; choose from {sorted(PRESETS)}") from None
        return cls.from_mapping({**base, **overrides})

    def to_dict(self) -> dict:
        def plain(v):
            if isinstance(v, np.ndarray):
                v = v.tolist()
            return v
        return {f.name: plain(getattr(self, f.name)) for f in dataclasses.fields(self)}


def _parse_bound(v):
    # YAML has no infinity literal that survives every writer; accept strings.
    if isinstance(v, str):
        return float(v)
    if isinstance(v, (list, tuple)):
        return [_parse_bound(x) for x in v]
    return v


PRESETS = {
    "matlab": dict(q_u=2000.0, q_n=2000.0, r=0.01, horizon=10, u_min=-50.0, u_max=50.0,
                   du_min=-20.0, du_max=20.0, x_min=-np.inf, x_max=np.inf),
    "gazebo": dict(q_u=2000.0, q_n=2000.0, r=0.01, horizon=10, u_min=-150.0, u_max=150.0,
                   du_min=-50.0, du_max=50.0, x_min=-np.inf, x_max=np.inf),
}


@dataclass
class CondensedQp:
    """``min 0.5 d'Hd + g'd + const  s.t.  lower <= M d <= upper``.

    Row blocks of ``M``: increments (``Nh*p``), inputs (``Nh*p``),
    predicted outputs for k = 1..Nh (``Nh*n``).
    """

    hessian: np.ndarray
    gradient: np.ndarray
    constant: float
    m: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    n_increment_rows: int
    n_input_rows: int
    n_state_rows: int
    phi: np.ndarray = field(repr=False, default=None)
    gamma: np.ndarray = field(repr=False, default=None)
    zbar0: np.ndarray = field(repr=False, default=None)

    @property
    def n_vars(self) -> int:
        return self.gradient.size

    @property
    def n_constraints(self) -> int:
        return self.m.shape[0]

    def objective(self, d) -> float:
        d = np.asarray(d, dtype=float)
        return float(0.5 * d @ self.hessian @ d + self.gradient @ d + self.constant)

    def without_state_rows(self) -> "CondensedQp":
        keep = self.n_increment_rows + self.n_input_rows
        return dataclasses.replace(
            self, m=self.m[:keep], lower=self.lower[:keep], upper=self.upper[:keep], n_state_rows=0
        )


def prediction_matrices(aug: AugmentedModel, horizon: int) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(Phi, Gamma)`` with stacked outputs ``xhat_{0..Nh} = Phi zbar0 + Gamma d``."""
    n = aug.c_bar.shape[0]
    p = aug.b_bar.shape[1]
    nz = aug.a_bar.shape[0]
    phi = np.zeros(((horizon + 1) * n, nz))
    gamma = np.zeros(((horizon + 1) * n, horizon * p))
    # markov[j] = c_bar A_bar^j B_bar
    power = np.eye(nz)
    markov = []
    for k in range(horizon + 1):
        phi[k * n:(k + 1) * n] = aug.c_bar @ power
        markov.append(aug.c_bar @ power @ aug.b_bar)
        power = aug.a_bar @ power
    for k in range(1, horizon + 1):
        for j in range(k):
            gamma[k * n:(k + 1) * n, j * p:(j + 1) * p] = markov[k - 1 - j]
    return phi, gamma


def _ref_matrix(ref_window, horizon: int, n: int) -> np.ndarray:
    ref = np.asarray(ref_window, dtype=float)
    if ref.ndim <= 1:
        ref = ref.reshape(-1, n) if n > 1 else ref.reshape(-1, 1)
    if ref.ndim != 2 or ref.shape[1] != n or ref.shape[0] == 0:
        raise ValueError(f"reference window must have shape (k, {n})")
    if ref.shape[0] > horizon + 1:
        ref = ref[:horizon + 1]
    elif ref.shape[0] < horizon + 1:
        pad = np.repeat(ref[-1:], horizon + 1 - ref.shape[0], axis=0)
        ref = np.vstack([ref, pad])
    if not np.all(np.isfinite(ref)):
        raise ValueError("reference must be finite")
    return ref


def build_qp(controller: "KoopmanMPC", x_measured, ref_window) -> CondensedQp:
    """Condense the horizon problem at the measured state.

    ``ref_window`` holds ``Nh + 1`` references (stages 0..Nh-1 and the
    terminal one); a shorter window is padded with its last entry.
    """
    cfg = controller.config
    model = controller.model
    n, p, Nh = model.n, model.p, cfg.horizon
    x = np.atleast_1d(np.asarray(x_measured, dtype=float))
    if x.shape != (n,):
        raise ValueError(f"measurement must have {n} entries")
    if not np.all(np.isfinite(x)):
        raise ValueError("measurement is not finite")
    ref = _ref_matrix(ref_window, Nh, n)

    zbar0 = np.concatenate([lift(model.dictionary, x), controller.u_prev])
    phi, gamma = controller._prediction
    e0 = phi @ zbar0 - ref.ravel()
    qbar = np.kron(np.eye(Nh + 1), cfg.q_u)
    qbar[Nh * n:, Nh * n:] = cfg.q_n
    rbar = np.kron(np.eye(Nh), cfg.r)
    gq = gamma.T @ qbar
    hessian = 2.0 * (gq @ gamma + rbar)
    hessian = 0.5 * (hessian + hessian.T)
    gradient = 2.0 * gq @ e0
    constant = float(e0 @ qbar @ e0)

    eye = np.eye(Nh * p)
    cumsum = np.kron(np.tril(np.ones((Nh, Nh))), np.eye(p))
    state_rows = gamma[n:]
    free_state = (phi @ zbar0)[n:]
    m = np.vstack([eye, cumsum, state_rows])
    lower = np.concatenate([
        np.tile(cfg.du_min, Nh),
        np.tile(cfg.u_min - controller.u_prev, Nh),
        np.tile(cfg.x_min, Nh) - free_state,
    ])
    upper = np.concatenate([
        np.tile(cfg.du_max, Nh),
        np.tile(cfg.u_max - controller.u_prev, Nh),
        np.tile(cfg.x_max, Nh) - free_state,
    ])
    return CondensedQp(
        hessian=hessian, gradient=gradient, constant=constant, m=m, lower=lower, upper=upper,
        n_increment_rows=Nh * p, n_input_rows=Nh * p, n_state_rows=Nh * n,
        phi=phi, gamma=gamma, zbar0=zbar0,
    )


class QpInfeasibleError(RuntimeError):
    """No point satisfies the constraints.

    ``violated`` lists ``(row, side)`` pairs, side being ``"lower"`` or
    ``"upper"``, that cannot be met simultaneously.
    """

    def __init__(self, violated):
        self.violated = list(violated)
        super().__init__(f"QP infeasible; conflicting constraints: {self.violated}")


def _one_sided(qp: CondensedQp):
    # lower <= M d <= upper  ->  G d <= h, dropping infinite sides
    rows, rhs, origin = [], [], []
    for i in range(qp.n_constraints):
        if np.isfinite(qp.upper[i]):
            rows.append(qp.m[i])
            rhs.append(qp.upper[i])
            origin.append((i, "upper"))
        if np.isfinite(qp.lower[i]):
            rows.append(-qp.m[i])
            rhs.append(-qp.lower[i])
            origin.append((i, "lower"))
    G = np.array(rows).reshape(-1, qp.n_vars)
    return G, np.array(rhs), origin


def _phase_one(G, h, origin, tol):
    """Feasible point via an LP minimizing total constraint violation."""
    n_vars = G.shape[1]
    n_rows = G.shape[0]
    c = np.concatenate([np.zeros(n_vars), np.ones(n_rows)])
    A_ub = np.hstack([G, -np.eye(n_rows)])
    bounds = [(None, None)] * n_vars + [(0, None)] * n_rows
    res = linprog(c, A_ub=A_ub, b_ub=h, bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(f"phase-one LP failed: {res.message}")
    slack = res.x[n_vars:]
    if slack.max(initial=0.0) > tol:
        raise QpInfeasibleError([origin[i] for i in np.flatnonzero(slack > tol)])
    return res.x[:n_vars]


def solve_qp(qp: CondensedQp, tol: float = 1e-9, max_iter: int = 500, x0=None):
    """Primal active-set solve of a strictly convex :class:`CondensedQp`.

    Parameters
    ----------
    qp : CondensedQp
    tol : float
        Feasibility and optimality tolerance.
    max_iter : int
    x0 : array_like, optional
        Warm start; used only if it is feasible.

    Returns
    -------
    d : np.ndarray
        Optimal increment sequence.
    info : dict
        ``iterations``, ``active`` (list of ``(row, side)``), ``objective``,
        ``stationarity``, ``primal_violation``, ``complementarity``,
        ``dual_min``, ``phase_one``.

    Raises
    ------
    QpInfeasibleError
        If the constraint set is empty.
    """
    H, g = qp.hessian, qp.gradient
    G, h, origin = _one_sided(qp)
    nv = qp.n_vars

    phase_one = False
    candidates = [np.zeros(nv)] if x0 is None else [np.asarray(x0, dtype=float), np.zeros(nv)]
    x = None
    for cand in candidates:
        if G.shape[0] == 0 or np.all(G @ cand - h <= tol):
            x = cand.copy()
            break
    if x is None:
        x = _phase_one(G, h, origin, tol)
        phase_one = True

    work: list[int] = []
    lam = np.zeros(0)
    it = 0
    for it in range(1, max_iter + 1):
        Gw = G[work]
        k = len(work)
        kkt = np.block([[H, Gw.T], [Gw, np.zeros((k, k))]])
        rhs = np.concatenate([-(H @ x + g), np.zeros(k)])
        sol = np.linalg.solve(kkt, rhs)
        step, lam = sol[:nv], sol[nv:]
        if np.linalg.norm(step, np.inf) <= tol * max(1.0, np.linalg.norm(x, np.inf)):
            if k == 0 or lam.min() >= -tol:
                break
            work.pop(int(np.argmin(lam)))
            continue
        alpha = 1.0
        blocking = None
        if G.shape[0]:
            Gp = G @ step
            slack = h - G @ x
            for i in np.flatnonzero(Gp > tol * 1e-3):
                if i in work:
                    continue
                ratio = max(slack[i], 0.0) / Gp[i]
                if ratio < alpha:
                    alpha, blocking = ratio, int(i)
        x = x + alpha * step
        if blocking is not None:
            work.append(blocking)
    else:
        log.warning("active-set solver hit max_iter=%d", max_iter)

    full_lam = np.zeros(G.shape[0])
    if work:
        full_lam[work] = lam
    viol = (G @ x - h) if G.shape[0] else np.zeros(0)
    info = {
        "iterations": it,
        "active": [origin[i] for i in work],
        "objective": qp.objective(x),
        "stationarity": float(np.linalg.norm(H @ x + g + G.T @ full_lam, np.inf)) if G.shape[0] else
        float(np.linalg.norm(H @ x + g, np.inf)),
        "primal_violation": float(max(viol.max(initial=0.0), 0.0)),
        "complementarity": float(np.abs(full_lam * viol).max(initial=0.0)),
        "dual_min": float(full_lam.min(initial=0.0)),
        "phase_one": phase_one,
        "converged": it < max_iter,
    }
    return x, info


class KoopmanMPC:
    """Receding-horizon controller holding the last applied input.

    Parameters
    ----------
    model : LiftedModel
    config : MpcConfig
    u_prev : array_like, optional
        Input assumed applied before the first step; defaults to zero
        clipped into the input box.
    tol : float
        Solver tolerance.
    warm_start : bool
        Seed each solve with the previous solution shifted by one step.
    """

    def __init__(self, model: LiftedModel, config: MpcConfig, u_prev=None, tol: float = 1e-9,
                 warm_start: bool = False):
        if config.n != model.n or config.p != model.p:
            raise ValueError(f"config dimensions (n={config.n}, p={config.p}) do not match model "
                             f"(n={model.n}, p={model.p})")
        self.model = model
        self.config = config
        self.aug = augment(model)
        self.tol = tol
        self.warm_start = warm_start
        self._prediction = prediction_matrices(self.aug, config.horizon)
        self._last = None
        self.reset(u_prev)

    def reset(self, u_prev=None):
        u = np.zeros(self.model.p) if u_prev is None else _as_vector(u_prev, self.model.p, "u_prev")
        self.u_prev = np.clip(u, self.config.u_min, self.config.u_max)
        self._last = None
        return self

    def build_qp(self, x_measured, ref_window) -> CondensedQp:
        return build_qp(self, x_measured, ref_window)

    def step(self, x_measured, ref_window):
        """Solve at the current measurement and apply the first increment.

        Returns ``(u_applied, info)``. ``info["state_relaxed"]`` is set when
        the output box made the problem infeasible and was dropped.
        """
        qp = self.build_qp(x_measured, ref_window)
        p = self.model.p
        warm = None
        if self.warm_start and self._last is not None:
            warm = np.concatenate([self._last[p:], np.zeros(p)])
        relaxed = False
        try:
            d, info = solve_qp(qp, tol=self.tol, x0=warm)
        except QpInfeasibleError as exc:
            log.info("state constraints infeasible, relaxing: %s", exc.violated)
            relaxed = True
            d, info = solve_qp(qp.without_state_rows(), tol=self.tol, x0=warm)
            info["infeasible_rows"] = exc.violated
        u_new = np.clip(self.u_prev + d[:p], self.config.u_min, self.config.u_max)
        info.update(
            du=u_new - self.u_prev,
            du_sequence=d,
            state_relaxed=relaxed,
            clamped=bool(np.any(u_new != self.u_prev + d[:p])),
        )
        self.u_prev = u_new
        self._last = d
        return u_new.copy(), info
