"""Snapshot collection and regularized EDMD fitting of a lifted linear model.

Given snapshot triplets ``(x_k, u_k, y_k)`` with ``y_k = f(x_k, u_k)``, the
lifted predictor ``z+ = A z + B u``, ``x = C z`` is obtained from the ridge
problem::

    min_{A,B} ||Ybar - A Xbar - B U||_F^2 + alpha ||[A, B]||_F^2

where ``Xbar`` and ``Ybar`` are the lifted states.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .lifting import Dictionary, lift, make_dictionary
from .plant import PlantParams, rk4_step, simulate

__all__ = [
    "Dataset",
    "LiftedModel",
    "CollectionError",
    "RankDeficiencyWarning",
    "collect_dataset",
    "fit",
    "regress",
    "predict_trajectory",
    "prediction_rmse",
    "KoopmanEDMD",
    "read_dataset_csv",
    "write_dataset_csv",
    "save_model",
    "load_model",
    "format_float",
]

log = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1


class CollectionError(RuntimeError):
    """A simulated trajectory diverged during data collection."""

    def __init__(self, trajectory: int, step: int):
        super().__init__(f"trajectory {trajectory} became non-finite at step {step}")
        self.trajectory = trajectory
        self.step = step


class RankDeficiencyWarning(UserWarning):
    """Unregularized regression problem was rank deficient."""


def format_float(value: float) -> str:
    """Shortest positional decimal string that round-trips exactly."""
    return np.format_float_positional(float(value), unique=True, trim="-")


def _as_columns(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be one- or two-dimensional")
    return arr


@dataclass(frozen=True)
class Dataset:
    """Snapshot triplets stored row-wise: ``x`` (L, n), ``u`` (L, p), ``y`` (L, n).

    Pairs need not come from a single trajectory or be time-contiguous.
    """

    x: np.ndarray
    u: np.ndarray
    y: np.ndarray
    dt: float | None = None

    def __post_init__(self):
        x = _as_columns(self.x, "x")
        u = _as_columns(self.u, "u")
        y = _as_columns(self.y, "y")
        if not (len(x) == len(u) == len(y)):
            raise ValueError(f"x, u, y lengths differ: {len(x)}, {len(u)}, {len(y)}")
        if x.shape[1] != y.shape[1]:
            raise ValueError("x and y must have the same state dimension")
        for name, arr in (("x", x), ("u", u), ("y", y)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def p(self) -> int:
        return self.u.shape[1]


@dataclass
class LiftedModel:
    """Lifted linear predictor ``z+ = A z + B u``, ``x = C z``."""

    dictionary: Dictionary
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray = field(default=None)
    alpha: float = 0.0
    fit_residual: float = float("nan")

    def __post_init__(self):
        N = self.dictionary.n_lifted
        self.a = np.asarray(self.a, dtype=float)
        self.b = _as_columns(self.b, "b")
        if self.c is None:
            self.c = np.hstack([np.eye(self.dictionary.n), np.zeros((self.dictionary.n, N - self.dictionary.n))])
        self.c = np.asarray(self.c, dtype=float)
        if self.a.shape != (N, N):
            raise ValueError(f"A must be {N}x{N}, got {self.a.shape}")
        if self.b.shape[0] != N:
            raise ValueError(f"B must have {N} rows, got {self.b.shape[0]}")
        if self.c.shape != (self.dictionary.n, N):
            raise ValueError(f"C must be {self.dictionary.n}x{N}, got {self.c.shape}")

    @property
    def n(self) -> int:
        return self.dictionary.n

    @property
    def n_lifted(self) -> int:
        return self.dictionary.n_lifted

    @property
    def p(self) -> int:
        return self.b.shape[1]


def collect_dataset(
    plant: PlantParams,
    n_traj: int = 1000,
    steps_per_traj: int = 100,
    dt: float = 0.01,
    input_low: float = -50.0,
    input_high: float = 50.0,
    v0_low: float = -0.5,
    v0_high: float = 0.5,
    seed: int = 0,
) -> Dataset:
    """Simulate random-input trajectories with RK4 and record every step.

    Rows are ordered trajectory-major. All trajectories are integrated
    together as one vectorized state.
    """
    if n_traj < 1 or steps_per_traj < 1:
        raise ValueError("n_traj and steps_per_traj must be at least 1")
    if dt <= 0:
        raise ValueError("dt must be positive")
    if input_low > input_high or v0_low > v0_high:
        raise ValueError("sampling ranges must satisfy low <= high")
    rng = np.random.default_rng(seed)
    v = rng.uniform(v0_low, v0_high, size=n_traj)
    inputs = rng.uniform(input_low, input_high, size=(n_traj, steps_per_traj))
    states = np.empty((n_traj, steps_per_traj + 1))
    states[:, 0] = v
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps_per_traj):
            v = rk4_step(v, inputs[:, k], dt, plant)
            bad = ~np.isfinite(v)
            if bad.any():
                raise CollectionError(int(np.flatnonzero(bad)[0]), k)
            states[:, k + 1] = v
    return Dataset(
        x=states[:, :-1].reshape(-1, 1),
        u=inputs.reshape(-1, 1),
        y=states[:, 1:].reshape(-1, 1),
        dt=dt,
    )


def _ridge(G: np.ndarray, Ybar: np.ndarray, alpha: float) -> np.ndarray:
    """Solve ``min_W ||Ybar - W G||_F^2 + alpha ||W||_F^2`` for W.

    Uses the thin SVD of ``G`` (size (N+p) x L) rather than forming
    ``G G^T``, which would square its condition number. For ``alpha = 0``
    singular values below ``max(G.shape) * eps * s_max`` are discarded,
    giving the minimum-norm least-squares solution.
    """
    U, s, Vt = np.linalg.svd(G, full_matrices=False)
    if alpha > 0:
        scale = s / (s**2 + alpha)
    else:
        cutoff = max(G.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
        keep = s > cutoff
        if not keep.all():
            warnings.warn(
                f"regression matrix has rank {int(keep.sum())} < {G.shape[0]}; "
                "returning the minimum-norm solution",
                RankDeficiencyWarning,
                stacklevel=4,
            )
        scale = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    return ((Ybar @ Vt.T) * scale) @ U.T


def regress(Xbar, U, Ybar, alpha: float = 0.0):
    """Ridge regression in lifted coordinates.

    ``Xbar`` and ``Ybar`` are ``(N, L)``, ``U`` is ``(p, L)``. Returns
    ``(A, B, residual)`` with ``residual = ||Ybar - A Xbar - B U||_F / L``.
    """
    Xbar = np.asarray(Xbar, dtype=float)
    Ybar = np.asarray(Ybar, dtype=float)
    U = np.asarray(U, dtype=float).reshape(-1, Xbar.shape[1])
    if Ybar.shape != Xbar.shape:
        raise ValueError("Xbar and Ybar must have the same shape")
    if not alpha >= 0:
        raise ValueError("alpha must be non-negative")
    G = np.vstack([Xbar, U])
    AB = _ridge(G, Ybar, alpha)
    N = Xbar.shape[0]
    residual = float(np.linalg.norm(Ybar - AB @ G) / Xbar.shape[1])
    return AB[:, :N], AB[:, N:], residual


def fit(data: Dataset, dictionary: Dictionary, alpha: float = 1e-6) -> LiftedModel:
    """Identify ``(A, B)`` from snapshot data; ``C`` is fixed to ``[I, 0]``."""
    if not alpha >= 0:
        raise ValueError("alpha must be non-negative")
    if len(data) < 1:
        raise ValueError("no snapshots")
    if data.n != dictionary.n:
        raise ValueError(f"dataset state dimension {data.n} does not match dictionary n={dictionary.n}")
    Xbar = lift(dictionary, data.x).T
    Ybar = lift(dictionary, data.y).T
    a, b, residual = regress(Xbar, data.u.T, Ybar, alpha)
    log.debug("EDMD fit: N=%d p=%d L=%d residual=%.3e", dictionary.n_lifted, data.p, len(data), residual)
    return LiftedModel(dictionary=dictionary, a=a, b=b, alpha=float(alpha), fit_residual=residual)


def predict_trajectory(model: LiftedModel, x0, inputs) -> np.ndarray:
    """Lift ``x0`` once, then roll the linear model forward.

    Returns predicted states of shape ``(len(inputs) + 1, n)``; the first
    row is ``x0`` itself.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    inputs = np.asarray(inputs, dtype=float).reshape(-1, model.p)
    z = lift(model.dictionary, x0)
    out = np.empty((len(inputs) + 1, model.n))
    out[0] = x0
    for k, u in enumerate(inputs):
        z = model.a @ z + model.b @ u
        out[k + 1] = model.c @ z
    return out


def prediction_rmse(model: LiftedModel, plant: PlantParams, v0: float, inputs, dt: float) -> float:
    """RMSE between the lifted prediction and the RK4 plant under ``inputs``."""
    truth = simulate(v0, inputs, dt, plant)
    pred = predict_trajectory(model, v0, inputs)[:, 0]
    return float(np.sqrt(np.mean((truth - pred) ** 2)))


class KoopmanEDMD(RegressorMixin, BaseEstimator):
    """Estimator interface to :func:`fit`.

    ``X`` holds the state columns followed by ``n_inputs`` input columns,
    and ``y`` holds the successor states. ``predict`` returns one-step
    predicted successor states, so ``score`` is the one-step R^2.

    Parameters
    ----------
    n_inputs : int
        Number of trailing input columns in ``X``.
    n_rbf, center_low, center_high, width, random_state
        Dictionary settings, see :func:`make_dictionary`.
    alpha : float
        Tikhonov weight.
    """

    def __init__(self, n_inputs=1, n_rbf=4, center_low=-1.0, center_high=1.0, width=1.0,
                 random_state=0, alpha=1e-6):
        self.n_inputs = n_inputs
        self.n_rbf = n_rbf
        self.center_low = center_low
        self.center_high = center_high
        self.width = width
        self.random_state = random_state
        self.alpha = alpha

    def _split(self, X):
        n = X.shape[1] - self.n_inputs
        if n < 1:
            raise ValueError(f"X needs at least {self.n_inputs + 1} columns")
        return X[:, :n], X[:, n:]

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True)
        x, u = self._split(X)
        dictionary = make_dictionary(n=x.shape[1], n_rbf=self.n_rbf, center_low=self.center_low,
                                     center_high=self.center_high, seed=self.random_state,
                                     width=self.width)
        self.model_ = fit(Dataset(x=x, u=u, y=y), dictionary, self.alpha)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        x, u = self._split(X)
        m = self.model_
        z_next = lift(m.dictionary, x) @ m.a.T + u @ m.b.T
        out = z_next @ m.c.T
        return out[:, 0] if out.shape[1] == 1 else out

    def simulate(self, x0, inputs):
        """Multi-step prediction, see :func:`predict_trajectory`."""
        check_is_fitted(self, "model_")
        return predict_trajectory(self.model_, x0, inputs)


# --- file formats -----------------------------------------------------------

def write_dataset_csv(data: Dataset, path) -> None:
    if data.n != 1 or data.p != 1:
        raise ValueError("the CSV dataset format holds scalar state and input only")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "u", "y"])
        for x, u, y in zip(data.x[:, 0], data.u[:, 0], data.y[:, 0]):
            w.writerow([format_float(x), format_float(u), format_float(y)])


def read_dataset_csv(path, dt: float | None = None) -> Dataset:
    """Read an ``x,u,y`` CSV; errors name the offending line."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["x", "u", "y"]:
            raise ValueError(f"{path}: line 1: expected header 'x,u,y', got {header!r}")
        for row in reader:
            lineno = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise ValueError(f"{path}: line {lineno}: expected 3 fields, got {len(row)}")
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise ValueError(f"{path}: line {lineno}: non-numeric field in {row!r}") from None
            if not all(math.isfinite(v) for v in vals):
                raise ValueError(f"{path}: line {lineno}: non-finite value")
            rows.append(vals)
    if not rows:
        raise ValueError(f"{path}: no snapshots")
    arr = np.array(rows)
    return Dataset(x=arr[:, 0], u=arr[:, 1], y=arr[:, 2], dt=dt)


def model_to_dict(model: LiftedModel) -> dict:
    d = model.dictionary
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "n": d.n,
        "N": d.n_lifted,
        "p": model.p,
        "seed": d.seed,
        "rbf_width": d.width,
        "center_low": d.center_low,
        "center_high": d.center_high,
        "centers": d.centers.tolist(),
        "A": model.a.tolist(),
        "B": model.b.tolist(),
        "C": model.c.tolist(),
        "alpha": model.alpha,
        "fit_residual": model.fit_residual,
    }


def model_from_dict(doc: dict) -> LiftedModel:
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {doc.get('format_version')!r}")
    dictionary = Dictionary(
        n=int(doc["n"]),
        centers=np.array(doc["centers"], dtype=float).reshape(-1, int(doc["n"])),
        seed=doc["seed"],
        width=float(doc["rbf_width"]),
        center_low=float(doc.get("center_low", -1.0)),
        center_high=float(doc.get("center_high", 1.0)),
    )
    if dictionary.n_lifted != int(doc["N"]):
        raise ValueError("model file N does not match the number of centers")
    return LiftedModel(
        dictionary=dictionary,
        a=np.array(doc["A"], dtype=float),
        b=np.array(doc["B"], dtype=float).reshape(dictionary.n_lifted, int(doc["p"])),
        c=np.array(doc["C"], dtype=float),
        alpha=float(doc["alpha"]),
        fit_residual=float(doc["fit_residual"]),
    )


def save_model(model: LiftedModel, path) -> None:
    """Write the model as JSON. Floats use Python's shortest round-trip repr."""
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2) + "\n")


def load_model(path) -> LiftedModel:
    return model_from_dict(json.loads(Path(path).read_text()))
