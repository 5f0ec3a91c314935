"""Predictor screening, penalized logistic fits, and imbalance variants.

Fits here are the building blocks for one-vs-rest identification: a ridge
stabilized IRLS logistic (the epsilon ridge handles quasi-separation, which
is expected with 135 positives against thousands of negatives) and an L1
penalized logistic tuned by stratified cross-validated AUC. Oversampling
and case-control weighting rebalance the training set before fitting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    DegenerateLabelError,
    FoldError,
    NumericError,
    ShapeError,
)

RIDGE_EPS = 1e-6
IRLS_TOL = 1e-8
IRLS_MAX_ITER = 100


@dataclass
class ScreenReport:
    """Outcome of near-zero-variance screening."""

    retained: np.ndarray  # sorted column indices kept
    dropped: dict[int, str]  # column -> reason

    @property
    def n_retained(self) -> int:
        return len(self.retained)


@dataclass
class LogisticFit:
    intercept: float
    coef: np.ndarray
    iterations: int
    converged: bool
    deviance: float
    score_max_norm: float  # penalized gradient at the returned coefficients
    ridge: float = RIDGE_EPS


@dataclass
class LassoFit:
    intercept: float
    coef: np.ndarray
    lambda_: float
    lambda_grid: np.ndarray
    cv_auc: np.ndarray  # mean validation AUC per grid value
    n_folds: int
    seed: int


def screen_predictors(
    X: np.ndarray, unique_frac: float = 0.10, freq_ratio: float = 95.0
) -> ScreenReport:
    """Drop near-zero-variance columns.

    A column goes iff its unique-value fraction is below `unique_frac` AND
    the most-common/second-most-common frequency ratio exceeds `freq_ratio`.
    Single-valued columns always go (ratio treated as infinite).
    """
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ShapeError("screening needs a 2-d matrix with at least 2 rows")
    n = X.shape[0]
    retained = []
    dropped: dict[int, str] = {}
    for j in range(X.shape[1]):
        _, counts = np.unique(X[:, j], return_counts=True)
        if len(counts) == 1:
            dropped[j] = "constant"
            continue
        frac = len(counts) / n
        top2 = np.sort(counts)[-2:]
        ratio = top2[1] / top2[0]
        if frac < unique_frac and ratio > freq_ratio:
            dropped[j] = f"unique_frac={frac:.4g} ratio={ratio:.4g}"
        else:
            retained.append(j)
    return ScreenReport(np.array(retained, dtype=np.int64), dropped)


def _check_design(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(y) != X.shape[0]:
        raise ShapeError("X must be 2-d with one label per row")
    if not np.isfinite(X).all():
        raise NumericError("design matrix contains non-finite values")
    classes = np.unique(y)
    if not np.array_equal(classes, [0.0, 1.0]):
        if set(classes.tolist()) <= {0.0, 1.0}:
            raise DegenerateLabelError("labels are single-class")
        raise ShapeError("labels must be 0/1")
    return X, y


def _log_likelihood(eta: np.ndarray, y: np.ndarray, w: np.ndarray) -> float:
    # y*eta - log(1 + exp(eta)), stable in both tails
    return float(np.sum(w * (y * eta - np.logaddexp(0.0, eta))))


def _sigmoid(eta: np.ndarray) -> np.ndarray:
    # exp may overflow to inf in the saturated tail; the division then
    # returns exactly 0.0, which is the correct limit
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-eta))


def fit_logistic(
    X: np.ndarray,
    y: np.ndarray,
    weights: np.ndarray | None = None,
    ridge: float = RIDGE_EPS,
    max_iter: int = IRLS_MAX_ITER,
    tol: float = IRLS_TOL,
) -> LogisticFit:
    """IRLS Newton maximization of sum_i w_i l_i(beta) - ridge*||slopes||^2.

    The intercept is never penalized. Steps are halved while the penalized
    deviance rises; convergence is a relative deviance change below `tol`.
    Weights are normalized to mean 1 so that rescaling them by any positive
    constant leaves the optimum (not just the argmax direction) unchanged;
    without this the fixed ridge would shift slightly under rescaling.
    """
    X, y = _check_design(X, y)
    n, p = X.shape
    if weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (n,):
            raise ShapeError("weights must align with rows")
        if not np.isfinite(w).all() or (w < 0).any() or w.sum() <= 0:
            raise NumericError("weights must be finite, non-negative, not all zero")
        w = w * (n / w.sum())
    if ridge < 0:
        raise ConfigError("ridge must be non-negative")

    Xa = np.concatenate([np.ones((n, 1)), X], axis=1)
    beta = np.zeros(p + 1)
    pen_mask = np.ones(p + 1)
    pen_mask[0] = 0.0

    def deviance(b: np.ndarray) -> float:
        eta = Xa @ b
        return -2.0 * _log_likelihood(eta, y, w) + 2.0 * ridge * np.sum((pen_mask * b) ** 2)

    dev = deviance(beta)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        eta = Xa @ beta
        mu = _sigmoid(eta)
        grad = Xa.T @ (w * (y - mu)) - 2.0 * ridge * pen_mask * beta
        wirls = w * mu * (1.0 - mu)
        H = (Xa * wirls[:, None]).T @ Xa
        H[np.arange(p + 1), np.arange(p + 1)] += 2.0 * ridge * pen_mask
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"singular IRLS system: {exc}") from None
        scale = 1.0
        new_dev = deviance(beta + step)
        while new_dev > dev + 1e-12 and scale > 1e-10:
            scale *= 0.5
            new_dev = deviance(beta + scale * step)
        beta = beta + scale * step
        rel = abs(dev - new_dev) / max(abs(new_dev), 1e-10)
        dev = new_dev
        if rel < tol:
            converged = True
            break
    if not np.isfinite(beta).all():
        raise NumericError("logistic fit diverged to non-finite coefficients")
    eta = Xa @ beta
    mu = _sigmoid(eta)
    grad = Xa.T @ (w * (y - mu)) - 2.0 * ridge * pen_mask * beta
    return LogisticFit(
        intercept=float(beta[0]),
        coef=beta[1:].copy(),
        iterations=it,
        converged=converged,
        deviance=float(dev),
        score_max_norm=float(np.max(np.abs(grad))),
        ridge=ridge,
    )


def predict_proba(intercept: float, coef: np.ndarray, X: np.ndarray) -> np.ndarray:
    eta = intercept + np.asarray(X, dtype=np.float64) @ coef
    return _sigmoid(eta)


def auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """ROC area via the Mann-Whitney rank statistic with tie midranks."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelError("AUC needs both classes")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # midrank, 1-based
        i = j + 1
    rank_sum_pos = float(np.sum(ranks[labels == 1]))
    return (rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def stratified_folds(y: np.ndarray, n_folds: int, seed: int) -> np.ndarray:
    """Seeded fold ids, round-robin within each class after a shuffle."""
    y = np.asarray(y)
    if n_folds < 2:
        raise ConfigError("need at least 2 folds")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos < n_folds or n_neg < n_folds:
        raise FoldError(
            f"cannot stratify {n_pos} positives / {n_neg} negatives into {n_folds} folds"
        )
    rng = np.random.Generator(np.random.PCG64(seed))
    folds = np.empty(len(y), dtype=np.int64)
    for cls in (1, 0):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(len(idx))]
        folds[idx] = np.arange(len(idx)) % n_folds
    return folds


def lambda_grid(X: np.ndarray, y: np.ndarray, n_lambdas: int = 20,
                min_ratio: float = 1e-4) -> np.ndarray:
    """Descending log-spaced grid from lambda_max (all slopes zero) down."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    lam_max = float(np.max(np.abs(X.T @ (y - y.mean()))) / n)
    if lam_max <= 0:
        lam_max = 1e-3  # no marginal signal anywhere; arbitrary small scale
    return np.geomspace(lam_max, lam_max * min_ratio, n_lambdas)


def _soft(x: float, t: float) -> float:
    if x > t:
        return x - t
    if x < -t:
        return x + t
    return 0.0


def _lasso_cd(
    X: np.ndarray,
    y: np.ndarray,
    lam: float,
    beta0: float,
    beta: np.ndarray,
    max_outer: int = 100,
    tol: float = 1e-7,
) -> tuple[float, np.ndarray]:
    """Penalized IRLS with coordinate descent on the working response.

    Minimizes (1/n) sum NLL + lam * ||slopes||_1 without standardization.
    Warm-started from (beta0, beta).
    """
    n, p = X.shape
    beta = beta.copy()
    for _ in range(max_outer):
        eta = beta0 + X @ beta
        mu = _sigmoid(eta)
        mu = np.clip(mu, 1e-8, 1.0 - 1e-8)
        wq = mu * (1.0 - mu) / n  # quadratic-approx observation weights
        z = eta + (y - mu) / (mu * (1.0 - mu))
        denom = wq @ (X * X)
        r = z - eta  # residual of the working response
        w_sum = wq.sum()
        for _ in range(1000):
            delta = 0.0
            b0_new = beta0 + float(wq @ r) / w_sum
            r += beta0 - b0_new
            delta = max(delta, abs(b0_new - beta0))
            beta0 = b0_new
            for j in range(p):
                if denom[j] <= 0:
                    continue
                rho = float(wq @ (X[:, j] * r)) + denom[j] * beta[j]
                bj = _soft(rho, lam) / denom[j]
                if bj != beta[j]:
                    r += X[:, j] * (beta[j] - bj)
                    delta = max(delta, abs(bj - beta[j]))
                    beta[j] = bj
            if delta < tol:
                break
        eta_new = beta0 + X @ beta
        if np.max(np.abs(eta_new - eta)) < tol:
            break
    if not (np.isfinite(beta0) and np.isfinite(beta).all()):
        raise NumericError("lasso fit diverged to non-finite coefficients")
    return beta0, beta


def fit_lasso_cv(
    X: np.ndarray,
    y: np.ndarray,
    seed: int,
    lambdas: np.ndarray | None = None,
    n_folds: int = 5,
) -> LassoFit:
    """Pathwise lasso logistic with lambda chosen by mean validation AUC.

    Warm starts run down the descending grid; ties on AUC prefer the larger
    (sparser) lambda. The final model is refit on all rows at the winner.
    """
    X, y = _check_design(X, y)
    if lambdas is None:
        lambdas = lambda_grid(X, y)
    lambdas = np.asarray(lambdas, dtype=np.float64)
    if len(lambdas) == 0:
        raise ConfigError("lambda grid must be nonempty")
    if np.any(np.diff(lambdas) > 0):
        lambdas = np.sort(lambdas)[::-1]
    folds = stratified_folds(y, n_folds, seed)
    aucs = np.zeros((n_folds, len(lambdas)))
    for k in range(n_folds):
        tr = folds != k
        va = ~tr
        b0, b = 0.0, np.zeros(X.shape[1])
        for li, lam in enumerate(lambdas):
            b0, b = _lasso_cd(X[tr], y[tr], float(lam), b0, b)
            scores = predict_proba(b0, b, X[va])
            aucs[k, li] = auc(scores, y[va])
    mean_auc = aucs.mean(axis=0)
    best = int(np.argmax(mean_auc))  # first max wins: larger lambda on ties
    b0, b = 0.0, np.zeros(X.shape[1])
    for lam in lambdas[: best + 1]:
        b0, b = _lasso_cd(X, y, float(lam), b0, b)
    return LassoFit(
        intercept=float(b0),
        coef=b,
        lambda_=float(lambdas[best]),
        lambda_grid=lambdas,
        cv_auc=mean_auc,
        n_folds=n_folds,
        seed=seed,
    )


def oversample(
    target: np.ndarray, controls: np.ndarray, p: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Resample target rows (with replacement) to a fraction p of the result.

    The target row count becomes m = round(p * n_controls / (1 - p));
    controls pass through untouched. When m equals the original target count
    the originals are returned unsampled, so the no-op case is exact.
    Returns (X, y) with the (re)sampled targets first.
    """
    if not (0.0 < p < 1.0):
        raise ConfigError(f"oversample fraction must be in (0, 1), got {p}")
    target = np.asarray(target)
    controls = np.asarray(controls)
    if len(target) < 1:
        raise ShapeError("need at least one target row")
    m = int(np.floor(p * len(controls) / (1.0 - p) + 0.5))
    if m == len(target):
        sampled = target
    else:
        rng = np.random.Generator(np.random.PCG64(seed))
        sampled = target[rng.integers(0, len(target), size=m)]
    X = np.concatenate([sampled, controls], axis=0)
    y = np.concatenate([np.ones(len(sampled)), np.zeros(len(controls))])
    return X, y


def case_control_weights(y: np.ndarray, rows_per_participant: int) -> np.ndarray:
    """Equalizing weights: case rows 1/n_case, control rows
    1/(n_case * n_control_participants)."""
    y = np.asarray(y)
    n_case = int(np.sum(y == 1))
    n_ctrl_rows = int(np.sum(y == 0))
    if n_case == 0 or n_ctrl_rows == 0:
        raise DegenerateLabelError("weights need both classes")
    if rows_per_participant < 1 or n_ctrl_rows % rows_per_participant:
        raise ShapeError(
            f"{n_ctrl_rows} control rows is not a multiple of {rows_per_participant}"
        )
    n_ctrl_participants = n_ctrl_rows // rows_per_participant
    w = np.empty(len(y), dtype=np.float64)
    w[y == 1] = 1.0 / n_case
    w[y == 0] = 1.0 / (n_case * n_ctrl_participants)
    return w
