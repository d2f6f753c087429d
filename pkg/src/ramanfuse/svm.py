"""Two-class support vector classifier: SMO solver, linear/RBF kernels,
Platt probability calibration, exhaustive parameter grid search.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from multiprocessing import Pool

import numpy as np

from .errors import CalibrationFailed, DegenerateKernel, DimMismatch, SingleClass

C_GRID = tuple(2.0**p for p in range(-5, 16))        # 21 values
GAMMA_GRID = tuple(2.0**p for p in range(-15, 4))    # 19 values
KERNELS = ("linear", "rbf")

_TAU = 1e-12


@dataclass(frozen=True)
class SvmConfig:
    C: float = 1.0
    kernel: str = "linear"
    gamma: float = 1.0
    tol: float = 1e-3
    max_iter: int = 200_000

    def __post_init__(self):
        if self.C <= 0:
            raise ValueError("C must be positive")
        if self.kernel not in KERNELS:
            raise ValueError(f"kernel must be one of {KERNELS}")
        if self.kernel == "rbf" and self.gamma <= 0:
            raise ValueError("gamma must be positive for rbf")


def _kernel_matrix(a: np.ndarray, b: np.ndarray, kernel: str, gamma: float) -> np.ndarray:
    if kernel == "linear":
        k = a @ b.T
    else:
        d2 = (
            (a**2).sum(axis=1)[:, None]
            - 2.0 * (a @ b.T)
            + (b**2).sum(axis=1)[None, :]
        )
        k = np.exp(-gamma * np.maximum(d2, 0.0))
    if not np.isfinite(k).all():
        raise DegenerateKernel("kernel matrix contains non-finite values")
    return k


@dataclass(frozen=True)
class SvmModel:
    support_vectors: np.ndarray  # (m, d)
    dual_coef: np.ndarray        # (m,) alpha_i * y_i
    bias: float
    kernel: str
    gamma: float
    C: float
    platt_a: float | None = None
    platt_b: float | None = None

    def to_payload(self) -> dict:
        return {
            "support_vectors": self.support_vectors.tolist(),
            "dual_coef": self.dual_coef.tolist(),
            "bias": self.bias,
            "kernel": self.kernel,
            "gamma": self.gamma,
            "C": self.C,
            "platt_a": self.platt_a,
            "platt_b": self.platt_b,
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "SvmModel":
        return cls(
            support_vectors=np.asarray(payload["support_vectors"], dtype=np.float64),
            dual_coef=np.asarray(payload["dual_coef"], dtype=np.float64),
            bias=float(payload["bias"]),
            kernel=payload["kernel"],
            gamma=float(payload["gamma"]),
            C=float(payload["C"]),
            platt_a=payload.get("platt_a"),
            platt_b=payload.get("platt_b"),
        )


def train(X: np.ndarray, y: np.ndarray, cfg: SvmConfig = SvmConfig()) -> SvmModel:
    """SMO on the dual problem, maximal-violating-pair working set.

    Gradient of the dual is kept incrementally; iteration stops when the
    KKT violation gap m(alpha) - M(alpha) drops below cfg.tol.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError("X must be n x d and y a matching label vector")
    if not np.all(np.abs(y) == 1.0):
        raise ValueError("labels must be +/-1")
    n = X.shape[0]
    if n < 2 or len(np.unique(y)) < 2:
        raise SingleClass("training needs both classes present")

    K = _kernel_matrix(X, X, cfg.kernel, cfg.gamma)
    Q = (y[:, None] * y[None, :]) * K
    qd = np.diag(Q).copy()
    alpha = np.zeros(n)
    grad = -np.ones(n)
    C = cfg.C

    for _ in range(cfg.max_iter):
        neg_yg = -y * grad
        up = (alpha < C) & (y > 0) | (alpha > 0) & (y < 0)
        low = (alpha < C) & (y < 0) | (alpha > 0) & (y > 0)
        m_val = neg_yg[up].max()
        big_m = neg_yg[low].min()
        if m_val - big_m <= cfg.tol:
            break
        i = int(np.flatnonzero(up)[np.argmax(neg_yg[up])])
        j = int(np.flatnonzero(low)[np.argmin(neg_yg[low])])

        old_i, old_j = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = max(qd[i] + qd[j] + 2.0 * Q[i, j], _TAU)
            delta = (-grad[i] - grad[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            else:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = C + diff
        else:
            quad = max(qd[i] + qd[j] - 2.0 * Q[i, j], _TAU)
            delta = (grad[i] - grad[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = total - C
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = total
            if total > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = total - C
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = total

        grad += Q[i] * (alpha[i] - old_i) + Q[j] * (alpha[j] - old_j)

    neg_yg = -y * grad
    free = (alpha > 0) & (alpha < C)
    if free.any():
        bias = float(neg_yg[free].mean())
    else:
        up = (alpha < C) & (y > 0) | (alpha > 0) & (y < 0)
        low = (alpha < C) & (y < 0) | (alpha > 0) & (y > 0)
        bias = float((neg_yg[up].max() + neg_yg[low].min()) / 2.0)

    kept = alpha > 1e-12
    return SvmModel(
        support_vectors=X[kept].copy(),
        dual_coef=(alpha * y)[kept],
        bias=bias,
        kernel=cfg.kernel,
        gamma=cfg.gamma,
        C=C,
    )


def decision(model: SvmModel, x: np.ndarray) -> np.ndarray:
    """Signed distance-like score; accepts a single vector or an n x d
    batch, returning a scalar or a vector accordingly."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if batch.shape[1] != model.support_vectors.shape[1]:
        raise DimMismatch(
            f"expected {model.support_vectors.shape[1]} features, got {batch.shape[1]}"
        )
    k = _kernel_matrix(batch, model.support_vectors, model.kernel, model.gamma)
    values = k @ model.dual_coef + model.bias
    return float(values[0]) if single else values


def predict(model: SvmModel, x: np.ndarray):
    """Class label: sign of the decision value; an exact 0 goes positive."""
    d = decision(model, x)
    if np.isscalar(d):
        return 1 if d >= 0 else -1
    return np.where(d >= 0, 1, -1)


def dual_objective(model: SvmModel) -> float:
    """Dual value achieved by the stored coefficients (zeros omitted)."""
    coef = model.dual_coef
    alpha = np.abs(coef)
    k = _kernel_matrix(model.support_vectors, model.support_vectors, model.kernel, model.gamma)
    return float(alpha.sum() - 0.5 * coef @ k @ coef)


def predict_proba(model: SvmModel, x: np.ndarray):
    """Calibrated P(positive); requires a calibrated model."""
    if model.platt_a is None:
        raise ValueError("model is not calibrated")
    f = decision(model, x)
    z = model.platt_a * np.asarray(f) + model.platt_b
    p = np.where(z >= 0, np.exp(-z) / (1.0 + np.exp(-z)), 1.0 / (1.0 + np.exp(z)))
    return float(p) if np.isscalar(f) else p


def calibrate(
    model: SvmModel, X: np.ndarray, y: np.ndarray, max_iter: int = 100
) -> SvmModel:
    """Platt scaling on training decision values.

    Newton iteration on the regularized targets t+ = (N+ + 1)/(N+ + 2),
    t- = 1/(N- + 2); no internal cross-validation (the scores feed ROC
    ranking, which only needs monotone calibration).
    """
    f = decision(model, np.asarray(X, dtype=np.float64))
    y = np.asarray(y)
    n_pos = int((y > 0).sum())
    n_neg = int((y < 0).sum())
    t = np.where(y > 0, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))

    a, b = 0.0, math.log((n_neg + 1.0) / (n_pos + 1.0))
    sigma = 1e-12
    min_step = 1e-10

    def objective(a_, b_):
        z = a_ * f + b_
        return float(
            np.sum(np.where(z >= 0, t * z + np.log1p(np.exp(-z)), (t - 1) * z + np.log1p(np.exp(z))))
        )

    fval = objective(a, b)
    for _ in range(max_iter):
        z = a * f + b
        p = np.where(z >= 0, np.exp(-z) / (1 + np.exp(-z)), 1 / (1 + np.exp(z)))
        q = 1.0 - p
        d1 = t - p
        d2 = p * q
        g1 = float((f * d1).sum())
        g2 = float(d1.sum())
        if abs(g1) < 1e-5 and abs(g2) < 1e-5:
            return replace(model, platt_a=a, platt_b=b)
        h11 = float((f * f * d2).sum()) + sigma
        h22 = float(d2.sum()) + sigma
        h21 = float((f * d2).sum())
        det = h11 * h22 - h21 * h21
        da = -(h22 * g1 - h21 * g2) / det
        db = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * da + g2 * db

        step = 1.0
        while step >= min_step:
            new_a, new_b = a + step * da, b + step * db
            new_f = objective(new_a, new_b)
            if new_f < fval + 1e-4 * step * gd:
                a, b, fval = new_a, new_b, new_f
                break
            step /= 2.0
        else:
            raise CalibrationFailed("line search stalled")
    raise CalibrationFailed(f"no convergence after {max_iter} iterations")


# --- grid search ---------------------------------------------------------------


@dataclass(frozen=True)
class GridEntry:
    feature_key: tuple
    config: SvmConfig


@dataclass(frozen=True)
class GridResult:
    best: GridEntry
    mean_accuracy: float
    fold_accuracies: tuple
    rows: tuple  # one report row per configuration, enumeration order


def enumerate_grid(
    feature_keys,
    c_grid=C_GRID,
    gamma_grid=GAMMA_GRID,
    kernels=KERNELS,
    tol: float = 1e-3,
) -> list[GridEntry]:
    """Deterministic enumeration: feature sets in given order, linear before
    rbf, C ascending, gamma ascending (linear has no gamma axis)."""
    entries = []
    for key in feature_keys:
        key = key if isinstance(key, tuple) else (key,)
        for kernel in kernels:
            for c in c_grid:
                if kernel == "linear":
                    entries.append(GridEntry(key, SvmConfig(C=c, kernel="linear", tol=tol)))
                else:
                    for g in gamma_grid:
                        entries.append(
                            GridEntry(key, SvmConfig(C=c, kernel="rbf", gamma=g, tol=tol))
                        )
    return entries


def _evaluate_entry(args):
    index, entry, X, y, folds = args
    accs = []
    for train_idx, test_idx in folds:
        model = train(X[train_idx], y[train_idx], entry.config)
        pred = predict(model, X[test_idx])
        accs.append(float((pred == y[test_idx]).mean()))
    return index, tuple(accs)


def grid_search(
    feature_sets: dict,
    y: np.ndarray,
    folds,
    c_grid=C_GRID,
    gamma_grid=GAMMA_GRID,
    kernels=KERNELS,
    tol: float = 1e-3,
    jobs: int = 1,
) -> GridResult:
    """Exhaustive CV accuracy search.

    feature_sets maps a feature key (e.g. (k_dp, k_rci)) to its n x d matrix,
    iterated in the given order. Selection is the first configuration
    attaining the maximum unweighted mean of per-fold accuracies, so results
    do not depend on worker scheduling.
    """
    y = np.asarray(y, dtype=np.float64)
    folds = [(np.asarray(tr), np.asarray(te)) for tr, te in folds]
    matrices = {
        (key if isinstance(key, tuple) else (key,)): np.asarray(mat, dtype=np.float64)
        for key, mat in feature_sets.items()
    }
    entries = enumerate_grid(feature_sets.keys(), c_grid, gamma_grid, kernels, tol)
    tasks = [
        (idx, entry, matrices[entry.feature_key], y, folds)
        for idx, entry in enumerate(entries)
    ]
    if jobs > 1:
        with Pool(processes=jobs) as pool:
            raw = pool.map(_evaluate_entry, tasks, chunksize=32)
    else:
        raw = [_evaluate_entry(t) for t in tasks]
    raw.sort(key=lambda r: r[0])

    rows = []
    best_idx, best_mean = None, -1.0
    for idx, accs in raw:
        mean = float(np.mean(accs))
        entry = entries[idx]
        rows.append(
            (entry.feature_key, entry.config.kernel, entry.config.C,
             entry.config.gamma if entry.config.kernel == "rbf" else None,
             accs, mean)
        )
        if mean > best_mean:
            best_idx, best_mean = idx, mean
    return GridResult(
        best=entries[best_idx],
        mean_accuracy=best_mean,
        fold_accuracies=rows[best_idx][4],
        rows=tuple(rows),
    )


def write_grid_report(result: GridResult, path) -> None:
    """CSV: one row per configuration in enumeration order."""
    n_folds = len(result.rows[0][4]) if result.rows else 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["feature_key", "kernel", "C", "gamma"]
            + [f"fold_{i + 1}_accuracy" for i in range(n_folds)]
            + ["mean_accuracy"]
        )
        for key, kernel, c, gamma, accs, mean in result.rows:
            writer.writerow(
                ["+".join(str(k) for k in key), kernel, repr(c),
                 "" if gamma is None else repr(gamma)]
                + [f"{a:.6f}" for a in accs]
                + [f"{mean:.6f}"]
            )
