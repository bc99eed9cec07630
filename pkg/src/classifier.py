"""
Linear nadir classifiers f(x) = θ₀ + Θ·x over x = (𝓗_ℓ, 𝓚_ℓ, P_ℓ, 𝓡_ℓ).

Both learners work on standardized features and fold the coefficients back to
raw-feature space, so the exported constraint is used as is by the MILP.

- LR: mean log loss log(1 + exp(−y·f)), minimized by damped Newton with a
  backtracking line search. A 1e-10 ridge keeps the Newton system solvable on
  separable data, where the unregularized loss has no finite minimizer.
- SVM: mean hinge loss + (1/C)·Σ_{m≥1} θ_m² in standardized space. The hinge
  is Huber-smoothed with width μ and μ is driven from 1 down to 1e-9, each
  stage solved by damped Newton; the true objective decides the returned θ.
"""
import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from src.errors import TrainingError
from src.labeler import FEATURES, OutageSample, feature_matrix

logger = logging.getLogger(__name__)

LR = "LR"
SVM = "SVM"
GRAD_TOL = 1e-6
_RIDGE = 1e-10
_MAX_NEWTON = 200

Data = Union[Sequence[OutageSample], Tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class LinearClassifier:
    theta0: float
    theta: Tuple[float, float, float, float]
    method: str
    c_reg: float = math.inf
    train_accuracy: float = float("nan")
    holdout_accuracy: float = float("nan")
    feature_means: Tuple[float, ...] = (0.0, 0.0, 0.0, 0.0)
    feature_scales: Tuple[float, ...] = (1.0, 1.0, 1.0, 1.0)
    scaled_theta0: float = 0.0
    scaled_theta: Tuple[float, ...] = (0.0, 0.0, 0.0, 0.0)
    seed: Optional[int] = None
    dataset_hash: str = ""
    train_seconds: float = 0.0
    iterations: int = 0
    extra: dict = field(default_factory=dict, compare=False)

    def decision(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.theta0 + x @ np.asarray(self.theta)

    def scaled_decision(self, x) -> np.ndarray:
        xs = (np.asarray(x, dtype=float) - np.asarray(self.feature_means)) / np.asarray(self.feature_scales)
        return self.scaled_theta0 + xs @ np.asarray(self.scaled_theta)

    def predict(self, x) -> np.ndarray:
        return np.where(self.decision(x) >= 0.0, 1, -1)

    def accuracy(self, data: Data) -> float:
        x, y = _as_xy(data)
        return float(np.mean(self.predict(x) == y))

    def normalized_theta(self) -> Optional[Tuple[float, ...]]:
        """Θ/θ₀ (θ₀ normalized to 1); None when θ₀ is zero."""
        if self.theta0 == 0.0:
            return None
        return tuple(t / self.theta0 for t in self.theta)

    def with_accuracies(self, train: float, holdout: float, **kw) -> "LinearClassifier":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(train_accuracy=train, holdout_accuracy=holdout, **kw)
        return LinearClassifier(**d)


# ---------- data ----------
def _as_xy(data: Data) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(data, tuple):
        x, y = data
        return np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    return feature_matrix(list(data))


def _check_classes(y: np.ndarray) -> None:
    if len(y) == 0:
        raise TrainingError("no training samples")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise TrainingError("labels must be -1 or +1")
    if np.all(y == y[0]):
        raise TrainingError(f"training set has a single class ({int(y[0]):+d}, {len(y)} samples)")


def _standardize(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale = np.where(scale > 1e-12 * np.maximum(1.0, np.abs(mean)), scale, 1.0)
    return (x - mean) / scale, mean, scale


def _design(xs: np.ndarray) -> np.ndarray:
    return np.hstack([np.ones((xs.shape[0], 1)), xs])


def _fold_back(w: np.ndarray, mean: np.ndarray, scale: np.ndarray) -> Tuple[float, np.ndarray]:
    theta = w[1:] / scale
    theta0 = w[0] - float(np.sum(w[1:] * mean / scale))
    return float(theta0), theta


def _build(w, mean, scale, method, c_reg, started, iterations) -> LinearClassifier:
    theta0, theta = _fold_back(w, mean, scale)
    return LinearClassifier(
        theta0=theta0,
        theta=tuple(float(t) for t in theta),
        method=method,
        c_reg=c_reg,
        feature_means=tuple(float(m) for m in mean),
        feature_scales=tuple(float(s) for s in scale),
        scaled_theta0=float(w[0]),
        scaled_theta=tuple(float(t) for t in w[1:]),
        train_seconds=time.time() - started,
        iterations=iterations,
    )


# ---------- logistic regression ----------
def log_loss(w: np.ndarray, x: np.ndarray, y: np.ndarray, loss_scale: float = 1.0) -> float:
    """Mean log loss of w = (θ₀, θ₁..θ₄) on raw features."""
    margin = y * (w[0] + x @ w[1:])
    return loss_scale * float(np.mean(np.logaddexp(0.0, -margin)))


def log_loss_grad(w: np.ndarray, x: np.ndarray, y: np.ndarray, loss_scale: float = 1.0) -> np.ndarray:
    a = _design(x)
    margin = y * (a @ w)
    return loss_scale * (a.T @ (-y * expit(-margin))) / len(y)


def _lr_newton(a: np.ndarray, y: np.ndarray, loss_scale: float) -> Tuple[np.ndarray, int, float]:
    n = len(y)
    w = np.zeros(a.shape[1])

    def objective(v):
        return loss_scale * (float(np.mean(np.logaddexp(0.0, -y * (a @ v)))) + 0.5 * _RIDGE * float(v @ v))

    f = objective(w)
    for it in range(1, _MAX_NEWTON + 1):
        m = y * (a @ w)
        s = expit(-m)
        g = loss_scale * ((a.T @ (-y * s)) / n + _RIDGE * w)
        if np.max(np.abs(g)) <= 1e-3 * GRAD_TOL * loss_scale:
            return w, it, float(np.max(np.abs(g)))
        hess = loss_scale * ((a.T * (s * (1.0 - s))) @ a / n + _RIDGE * np.eye(a.shape[1]))
        try:
            step = np.linalg.solve(hess, -g)
        except np.linalg.LinAlgError:
            step = -g
        t = 1.0
        slope = float(g @ step)
        while t > 1e-12:
            cand = w + t * step
            fc = objective(cand)
            if fc <= f + 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            return w, it, float(np.max(np.abs(g)))
        w, f = cand, fc
    g = loss_scale * ((a.T @ (-y * expit(-y * (a @ w)))) / n + _RIDGE * w)
    return w, _MAX_NEWTON, float(np.max(np.abs(g)))


def train_lr(data: Data, loss_scale: float = 1.0) -> LinearClassifier:
    if loss_scale <= 0:
        raise TrainingError(f"loss scale must be > 0 (got {loss_scale})")
    started = time.time()
    x, y = _as_xy(data)
    _check_classes(y)
    xs, mean, scale = _standardize(x)
    w, iterations, grad_norm = _lr_newton(_design(xs), y, loss_scale)
    if grad_norm > GRAD_TOL * loss_scale:
        raise TrainingError(f"logistic regression did not converge: |grad|_inf = {grad_norm:.3e} "
                            f"after {iterations} iterations")
    model = _build(w, mean, scale, LR, math.inf, started, iterations)
    logger.info(f"Trained LR on {len(y)} samples in {iterations} Newton steps, |grad|_inf = {grad_norm:.2e}")
    return model


# ---------- linear SVM ----------
def svm_objective(w: np.ndarray, xs: np.ndarray, y: np.ndarray, c_reg: float) -> float:
    """Mean hinge loss + (1/C)·Σ_{m≥1} θ_m², for standardized features xs."""
    margin = y * (w[0] + xs @ w[1:])
    return float(np.mean(np.maximum(0.0, 1.0 - margin))) + float(w[1:] @ w[1:]) / c_reg


def _smoothed(w, a, y, c_reg, mu):
    z = 1.0 - y * (a @ w)
    loss = np.where(z <= 0.0, 0.0, np.where(z < mu, z * z / (2.0 * mu), z - 0.5 * mu))
    reg = np.r_[0.0, np.full(len(w) - 1, 2.0 / c_reg)]
    f = float(np.mean(loss)) + 0.5 * float(w @ (reg * w))
    dz = np.clip(z / mu, 0.0, 1.0)
    g = (a.T @ (-y * dz)) / len(y) + reg * w
    band = ((z > 0.0) & (z < mu)).astype(float) / mu
    h = (a.T * band) @ a / len(y) + np.diag(reg) + 1e-12 * np.eye(len(w))
    return f, g, h


def _svm_stage(w, a, y, c_reg, mu) -> Tuple[np.ndarray, int]:
    f, g, h = _smoothed(w, a, y, c_reg, mu)
    for it in range(1, _MAX_NEWTON + 1):
        if np.max(np.abs(g)) <= 1e-12:
            return w, it
        try:
            step = np.linalg.solve(h, -g)
        except np.linalg.LinAlgError:
            step = -g
        slope = float(g @ step)
        if slope >= 0:
            step, slope = -g, -float(g @ g)
        t = 1.0
        while t > 1e-14:
            cand = w + t * step
            fc, gc, hc = _smoothed(cand, a, y, c_reg, mu)
            if fc <= f + 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            return w, it
        if f - fc <= 1e-16 * max(1.0, abs(f)):
            return cand, it
        w, f, g, h = cand, fc, gc, hc
    return w, _MAX_NEWTON


def train_svm(data: Data, c_reg: float = 1.0) -> LinearClassifier:
    if not c_reg > 0:
        raise TrainingError(f"C must be > 0 (got {c_reg})")
    started = time.time()
    x, y = _as_xy(data)
    _check_classes(y)
    xs, mean, scale = _standardize(x)
    a = _design(xs)

    w = np.zeros(a.shape[1])
    best_w, best = w.copy(), svm_objective(w, xs, y, c_reg)
    previous = best
    iterations = 0
    for k in range(10):
        mu = 10.0 ** (-k)
        w, it = _svm_stage(w, a, y, c_reg, mu)
        iterations += it
        obj = svm_objective(w, xs, y, c_reg)
        if obj < best:
            best_w, best = w.copy(), obj
        if k >= 3 and abs(previous - obj) <= 1e-8 * max(1.0, abs(obj)):
            break
        previous = obj

    if not np.all(np.isfinite(best_w)):
        raise TrainingError("SVM training produced non-finite coefficients")
    model = _build(best_w, mean, scale, SVM, float(c_reg), started, iterations)
    logger.info(f"Trained SVM (C={c_reg}) on {len(y)} samples, objective {best:.6g}, {iterations} Newton steps")
    return model


def train(data: Data, method: str, c_reg: float = 1.0) -> LinearClassifier:
    method = method.upper()
    if method == LR:
        return train_lr(data)
    if method == SVM:
        return train_svm(data, c_reg)
    raise TrainingError(f"unknown method {method!r} (expected LR or SVM)")


def trainer_for(method: str, c_reg: float = 1.0) -> Callable[[Data], LinearClassifier]:
    return lambda data: train(data, method, c_reg)


# ---------- validation ----------
def split_indices(y: np.ndarray, holdout_frac: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    if not 0.0 < holdout_frac < 1.0:
        raise TrainingError(f"holdout fraction must be in (0, 1) (got {holdout_frac})")
    n = len(y)
    n_hold = min(max(1, int(round(holdout_frac * n))), n - 1)
    if n < 2:
        raise TrainingError("need at least 2 samples to split")
    for attempt in range(10):
        perm = np.random.default_rng(seed + attempt).permutation(n)
        hold, tr = np.sort(perm[:n_hold]), np.sort(perm[n_hold:])
        if len(np.unique(y[tr])) == 2:
            if attempt:
                logger.warning(f"Re-drew the train/holdout split {attempt} time(s) to get both classes")
            return tr, hold
    raise TrainingError("every split left a single-class training set (10 draws)")


def cross_validate(data: Data, trainer: Callable[[Data], LinearClassifier], holdout_frac: float = 0.3,
                   seed: int = 0) -> Tuple[float, float]:
    return fit_validated(data, trainer, holdout_frac, seed)[1:]


def fit_validated(data: Data, trainer: Callable[[Data], LinearClassifier], holdout_frac: float = 0.3,
                  seed: int = 0) -> Tuple[LinearClassifier, float, float]:
    """Train on the seeded training split; score it on both splits."""
    x, y = _as_xy(data)
    tr, hold = split_indices(y, holdout_frac, seed)
    model = trainer((x[tr], y[tr]))
    train_acc = model.accuracy((x[tr], y[tr]))
    hold_acc = model.accuracy((x[hold], y[hold]))
    logger.info(f"{model.method}: train accuracy {train_acc:.4f}, holdout accuracy {hold_acc:.4f} "
                f"({len(tr)}/{len(hold)} samples)")
    return model.with_accuracies(train_acc, hold_acc, seed=seed), train_acc, hold_acc


# ---------- model file ----------
def dataset_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def save_model(model: LinearClassifier, path) -> None:
    d = asdict(model)
    d.pop("extra")
    d.pop("train_seconds")   # recorded in the run manifest instead
    d["c_reg"] = None if math.isinf(model.c_reg) else model.c_reg
    d["features"] = FEATURES
    d["normalized_theta"] = model.normalized_theta()
    Path(path).write_text(json.dumps(d, indent=2, sort_keys=True) + "\n")
    logger.info(f"Saved {model.method} model to {path}")


def load_model(path) -> LinearClassifier:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise TrainingError(f"cannot read model file {path}: {e}") from e
    try:
        return LinearClassifier(
            theta0=float(d["theta0"]),
            theta=tuple(float(t) for t in d["theta"]),
            method=d["method"],
            c_reg=math.inf if d.get("c_reg") is None else float(d["c_reg"]),
            train_accuracy=float(d.get("train_accuracy", float("nan"))),
            holdout_accuracy=float(d.get("holdout_accuracy", float("nan"))),
            feature_means=tuple(d.get("feature_means", (0.0,) * 4)),
            feature_scales=tuple(d.get("feature_scales", (1.0,) * 4)),
            scaled_theta0=float(d.get("scaled_theta0", 0.0)),
            scaled_theta=tuple(d.get("scaled_theta", (0.0,) * 4)),
            seed=d.get("seed"),
            dataset_hash=d.get("dataset_hash", ""),
            train_seconds=float(d.get("train_seconds", 0.0)),
            iterations=int(d.get("iterations", 0)),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise TrainingError(f"malformed model file {path}: {e}") from e
