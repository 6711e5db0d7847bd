"""OLS and logistic regression with an intercept prepended to the design."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from ..errors import NonConvergenceError, SingularDesignError, ValidationError

CONDITION_LIMIT = 1e12
SEPARATION_COEF = 30.0
RIDGE_EPS = 1e-8


class SeparationWarning(UserWarning):
    pass


class RidgeFallbackWarning(UserWarning):
    pass


def _select(x, columns):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if columns is None:
        return x
    return x[:, list(columns)]


def design(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    return np.hstack([np.ones((x.shape[0], 1)), x])


@dataclass(frozen=True)
class LinearModel:
    """Affine predictor ``coef[0] + x[:, columns] @ coef[1:]``.

    ``columns`` selects covariates from the full matrix passed to
    :meth:`predict`; ``None`` means all of them, ``()`` an intercept-only fit.
    """

    coef: np.ndarray
    feature_names: tuple[str, ...] = ()
    columns: tuple[int, ...] | None = None

    def predict(self, x) -> np.ndarray:
        xs = _select(x, self.columns)
        if xs.shape[1] + 1 != self.coef.shape[0]:
            raise ValidationError(
                f"dimension mismatch: model has {self.coef.shape[0] - 1} slopes, x has {xs.shape[1]} columns"
            )
        return self.coef[0] + xs @ self.coef[1:]

    def to_dict(self) -> dict:
        return {
            "kind": "linear",
            "coef": [float(c) for c in self.coef],
            "feature_names": list(self.feature_names),
            "columns": None if self.columns is None else list(self.columns),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LinearModel":
        cols = data.get("columns")
        return cls(
            np.asarray(data["coef"], dtype=float),
            tuple(data.get("feature_names", ())),
            None if cols is None else tuple(cols),
        )


def fit_ols(
    x,
    y,
    feature_names: Sequence[str] = (),
    columns: Sequence[int] | None = None,
) -> LinearModel:
    """Least squares with intercept, solved by column-pivoted QR.

    Raises :class:`SingularDesignError` when the condition number of the
    design exceeds 1e12; the error names the column that the pivoting ranked
    last, which is the one most nearly spanned by the others.
    """
    xs = _select(x, columns)
    y = np.asarray(y, dtype=float).reshape(-1)
    X = design(xs)
    n, p = X.shape
    if n < p:
        raise SingularDesignError(f"{n} rows cannot identify {p} coefficients")
    names = ["(intercept)", *_names_for(feature_names, columns, xs.shape[1])]
    Q, R, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    sv = np.linalg.svd(R, compute_uv=False)
    if sv[-1] == 0.0 or sv[0] / sv[-1] > CONDITION_LIMIT:
        culprit = names[piv[-1]]
        raise SingularDesignError(
            f"rank-deficient design (condition number {sv[0] / max(sv[-1], 1e-300):.3g}); "
            f"column {culprit!r} is collinear with the others",
            column=culprit,
        )
    z = scipy.linalg.solve_triangular(R, Q.T @ y)
    coef = np.empty(p)
    coef[piv] = z
    return LinearModel(coef, tuple(names[1:]), None if columns is None else tuple(columns))


def _names_for(feature_names, columns, k):
    names = list(feature_names)
    if columns is not None and names:
        names = [names[j] for j in columns]
    if len(names) != k:
        names = [f"x{j + 1}" for j in range(k)]
    return names


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass(frozen=True)
class LogitModel:
    """Logistic propensity ``1 / (1 + exp(-(coef[0] + x @ coef[1:])))``."""

    coef: np.ndarray
    feature_names: tuple[str, ...] = ()
    columns: tuple[int, ...] | None = None
    n_iter: int = 0
    converged: bool = True
    warnings: tuple[str, ...] = field(default=())

    def linear_predictor(self, x) -> np.ndarray:
        xs = _select(x, self.columns)
        if xs.shape[1] + 1 != self.coef.shape[0]:
            raise ValidationError(
                f"dimension mismatch: model has {self.coef.shape[0] - 1} slopes, x has {xs.shape[1]} columns"
            )
        return self.coef[0] + xs @ self.coef[1:]

    def predict(self, x) -> np.ndarray:
        return _sigmoid(self.linear_predictor(x))

    def to_dict(self) -> dict:
        return {
            "kind": "logit",
            "coef": [float(c) for c in self.coef],
            "feature_names": list(self.feature_names),
            "columns": None if self.columns is None else list(self.columns),
            "n_iter": self.n_iter,
            "converged": self.converged,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LogitModel":
        cols = data.get("columns")
        return cls(
            np.asarray(data["coef"], dtype=float),
            tuple(data.get("feature_names", ())),
            None if cols is None else tuple(cols),
            int(data.get("n_iter", 0)),
            bool(data.get("converged", True)),
            tuple(data.get("warnings", ())),
        )


def _loglik(X, d, beta):
    eta = X @ beta
    # log(1 + exp(eta)) computed stably
    return float(np.sum(d * eta - np.logaddexp(0.0, eta)))


def _flag_separation(beta, prob, notes) -> bool:
    # the score vanishes along a diverging ray too, so check the coefficients themselves
    if np.max(np.abs(beta)) <= SEPARATION_COEF:
        return False
    msg = "perfect or quasi-complete separation: coefficients diverge"
    warnings.warn(msg, SeparationWarning, stacklevel=3)
    notes.append(msg)
    return True


def fit_logit(
    x,
    d,
    max_iter: int = 100,
    tol: float = 1e-8,
    feature_names: Sequence[str] = (),
    columns: Sequence[int] | None = None,
) -> LogitModel:
    """Maximum-likelihood logit by iteratively reweighted least squares.

    Convergence is declared once the largest coordinate of the average score
    ``X'(d - p) / n`` falls below ``tol``. Newton steps are halved whenever
    they fail to increase the log-likelihood.

    Under (quasi-)complete separation the likelihood has no maximiser: when a
    coefficient exceeds 30 in magnitude while the score is still non-zero the
    fit stops at the iteration cap with a :class:`SeparationWarning` recorded
    on the model. Any other failure to converge raises
    :class:`NonConvergenceError`.
    """
    xs = _select(x, columns)
    d = np.asarray(d, dtype=float).reshape(-1)
    X = design(xs)
    n, p = X.shape
    n1 = d.sum()
    if n1 == 0 or n1 == n:
        raise ValidationError("logit needs both classes present")
    names = tuple(_names_for(feature_names, columns, xs.shape[1]))
    model_cols = None if columns is None else tuple(columns)

    beta = np.zeros(p)
    beta[0] = np.log(n1 / (n - n1))
    ll = _loglik(X, d, beta)
    notes: list[str] = []
    ridge_warned = False
    for it in range(1, max_iter + 1):
        prob = _sigmoid(X @ beta)
        score = X.T @ (d - prob)
        if np.max(np.abs(score)) / n < tol:
            _flag_separation(beta, prob, notes)
            return LogitModel(beta, names, model_cols, it - 1, True, tuple(notes))
        w = prob * (1.0 - prob)
        H = (X * w[:, None]).T @ X
        try:
            if np.linalg.cond(H) > 1.0 / np.finfo(float).eps:
                raise np.linalg.LinAlgError
            step = np.linalg.solve(H, score)
        except np.linalg.LinAlgError:
            if not ridge_warned:
                msg = "singular weighted normal equations; added 1e-8 to the diagonal"
                warnings.warn(msg, RidgeFallbackWarning, stacklevel=2)
                notes.append(msg)
                ridge_warned = True
            step = np.linalg.solve(H + RIDGE_EPS * np.eye(p), score)
        t = 1.0
        while True:
            cand = beta + t * step
            ll_new = _loglik(X, d, cand)
            if np.isfinite(ll_new) and ll_new >= ll - 1e-12 * abs(ll):
                break
            t *= 0.5
            if t < 1e-10:
                raise NonConvergenceError("IRLS could not increase the log-likelihood")
        if not np.all(np.isfinite(cand)):
            raise NonConvergenceError("IRLS diverged (non-finite coefficients)")
        beta, ll = cand, ll_new

    prob = _sigmoid(X @ beta)
    score = X.T @ (d - prob)
    if np.max(np.abs(score)) / n < tol:
        _flag_separation(beta, prob, notes)
        return LogitModel(beta, names, model_cols, max_iter, True, tuple(notes))
    if _flag_separation(beta, prob, notes):
        return LogitModel(beta, names, model_cols, max_iter, False, tuple(notes))
    raise NonConvergenceError(
        f"IRLS did not converge in {max_iter} iterations (max |score|/n = {np.max(np.abs(score)) / n:.3g})"
    )
