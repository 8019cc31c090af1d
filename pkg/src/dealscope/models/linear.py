"""Logistic regression with Wald statistics, and a linear SVM with Platt scaling.

Both models standardise their inputs with training-set statistics and fit
in that scale.  Parameter vectors are laid out as ``[intercept, w_1..w_d]``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from dealscope.models.base import Classifier, Standardizer, check_training_data, log1pexp, sigmoid

log = logging.getLogger(__name__)


def logistic_loss_grad(params, X, y, l2):
    """Mean log-loss plus ``l2/2 * ||w||^2`` (intercept unpenalised), and its gradient."""
    b, w = params[0], params[1:]
    z = X @ w + b
    loss = float(np.mean(log1pexp(z) - y * z) + 0.5 * l2 * (w @ w))
    resid = sigmoid(z) - y
    grad = np.empty_like(params)
    grad[0] = resid.mean()
    grad[1:] = X.T @ resid / len(y) + l2 * w
    return loss, grad


def hinge_loss_grad(params, X, y, lam):
    """``lam/2 * ||w||^2 + mean(max(0, 1 - s * (w.x + b)))`` with ``s = 2y - 1``.

    Returns the loss and a subgradient (the gradient wherever no margin sits
    exactly at 1).
    """
    b, w = params[0], params[1:]
    s = 2.0 * y - 1.0
    margin = s * (X @ w + b)
    active = margin < 1.0
    loss = float(np.mean(np.where(active, 1.0 - margin, 0.0)) + 0.5 * lam * (w @ w))
    coef = -(s * active) / len(y)
    grad = np.empty_like(params)
    grad[0] = coef.sum()
    grad[1:] = X.T @ coef + lam * w
    return loss, grad


@dataclass
class LRFit:
    names: list[str]
    coefficients: np.ndarray
    standard_errors: np.ndarray
    t_statistics: np.ndarray
    p_values: np.ndarray
    se_available: bool = True

    def rows(self) -> list[dict]:
        out = []
        for i, name in enumerate(self.names):
            out.append({
                "feature": name,
                "coefficient": float(self.coefficients[i]),
                "standard_error": float(self.standard_errors[i]),
                "t_statistic": float(self.t_statistics[i]),
                "p_value": float(self.p_values[i]),
            })
        return out


class LogisticRegression(Classifier):
    kind = "LR"

    def __init__(self, l2=1e-4, max_epochs=500, tol=1e-8, solver="gd"):
        self.l2 = l2
        self.max_epochs = max_epochs
        self.tol = tol
        self.solver = solver
        self.scaler: Standardizer | None = None
        self.params_: np.ndarray | None = None
        self.converged = False
        self.n_epochs = 0
        self.inference: LRFit | None = None

    def params(self):
        return {"l2": self.l2, "max_epochs": self.max_epochs, "tol": self.tol, "solver": self.solver}

    def fit(self, X, y, feature_names=None):
        X, y = check_training_data(X, y)
        self.scaler = Standardizer.fit(X)
        Z = self.scaler.transform(X)
        if self.solver == "newton":
            params = self._newton(Z, y)
        elif self.solver == "gd":
            params = self._gradient_descent(Z, y)
        else:
            raise ValueError(f"unknown solver {self.solver!r}")
        self.params_ = params
        if not self.converged:
            log.warning("logistic regression stopped after %d epochs without reaching tol=%g",
                        self.n_epochs, self.tol)
        names = ["const"] + list(feature_names or [f"x{j}" for j in range(X.shape[1])])
        self.inference = wald_statistics(params, Z, names)
        return self

    def _gradient_descent(self, Z, y):
        params = np.zeros(Z.shape[1] + 1)
        params[0] = _logit(np.clip(y.mean(), 1e-12, 1 - 1e-12))
        # step 1/L from the Lipschitz bound of the mean log-loss gradient
        design_norm = np.linalg.norm(np.column_stack([np.ones(len(Z)), Z]), 2) ** 2 / len(Z)
        step = 1.0 / (0.25 * design_norm + self.l2)
        self.converged = False
        for epoch in range(1, self.max_epochs + 1):
            _, grad = logistic_loss_grad(params, Z, y, self.l2)
            self.n_epochs = epoch
            if np.max(np.abs(grad)) < self.tol:
                self.converged = True
                break
            params = params - step * grad
        return params

    def _newton(self, Z, y):
        A = np.column_stack([np.ones(len(Z)), Z])
        params = np.zeros(A.shape[1])
        penalty = np.full(A.shape[1], self.l2)
        penalty[0] = 0.0
        self.converged = False
        for epoch in range(1, self.max_epochs + 1):
            _, grad = logistic_loss_grad(params, Z, y, self.l2)
            self.n_epochs = epoch
            if np.max(np.abs(grad)) < self.tol:
                self.converged = True
                break
            p = sigmoid(A @ params)
            H = (A * (p * (1 - p))[:, None]).T @ A / len(y) + np.diag(penalty)
            try:
                params = params - np.linalg.solve(H, grad)
            except np.linalg.LinAlgError:
                params = params - np.linalg.lstsq(H, grad, rcond=None)[0]
        return params

    @classmethod
    def from_coefficients(cls, intercept, coefficients, mean=None, scale=None):
        """A fitted model from known standardised-scale coefficients."""
        coefficients = np.asarray(coefficients, dtype=float)
        model = cls()
        d = len(coefficients)
        model.scaler = Standardizer(np.zeros(d) if mean is None else np.asarray(mean, float),
                                    np.ones(d) if scale is None else np.asarray(scale, float))
        model.params_ = np.concatenate([[intercept], coefficients])
        model.converged = True
        return model

    def raw_score(self, X):
        Z = self.scaler.transform(X)
        return Z @ self.params_[1:] + self.params_[0]

    def predict_proba(self, X):
        return sigmoid(self.raw_score(X))

    def state(self):
        return {
            "scaler": self.scaler.to_dict(),
            "params": self.params_.tolist(),
            "converged": self.converged,
            "n_epochs": self.n_epochs,
            "inference": None if self.inference is None else self.inference.rows(),
            "se_available": None if self.inference is None else self.inference.se_available,
        }

    def load_state(self, state):
        self.scaler = Standardizer.from_dict(state["scaler"])
        self.params_ = np.asarray(state["params"], dtype=float)
        self.converged = state["converged"]
        self.n_epochs = state["n_epochs"]
        rows = state.get("inference")
        if rows:
            self.inference = LRFit(
                [r["feature"] for r in rows],
                *(np.array([r[key] for r in rows], dtype=float)
                  for key in ("coefficient", "standard_error", "t_statistic", "p_value")),
                se_available=state.get("se_available", True),
            )


def _logit(p):
    return math.log(p / (1.0 - p))


def wald_statistics(params, Z, names) -> LRFit:
    """Standard errors from the inverse observed information at ``params``.

    Two-sided p-values use the normal reference distribution.  When the
    information matrix is singular the errors are reported as NaN and
    ``se_available`` is False.
    """
    A = np.column_stack([np.ones(len(Z)), Z])
    p = sigmoid(A @ params)
    info = (A * (p * (1 - p))[:, None]).T @ A
    se_available = True
    try:
        if np.linalg.cond(info) > 1e12:
            raise np.linalg.LinAlgError("ill-conditioned information matrix")
        cov = np.linalg.inv(info)
        se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    except np.linalg.LinAlgError:
        se_available = False
        se = np.full(len(params), np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = params / se
    pvals = erfc(np.abs(t) / math.sqrt(2.0))
    return LRFit(list(names), np.asarray(params, dtype=float), se, t, pvals, se_available)


class LinearSVM(Classifier):
    """Primal hinge-loss SVM trained by mini-batch stochastic subgradient.

    The step size decays as ``1 / (1 + lam * t)``.  Probabilities come from
    a Platt sigmoid fitted to the training margins.
    """

    kind = "SVM"

    def __init__(self, lam=1e-4, epochs=20, batch_size=16, seed=0):
        self.lam = lam
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.scaler: Standardizer | None = None
        self.params_: np.ndarray | None = None
        self.platt = (1.0, 0.0)
        self.converged = True

    def params(self):
        return {"lam": self.lam, "epochs": self.epochs, "batch_size": self.batch_size}

    def fit(self, X, y, feature_names=None):
        X, y = check_training_data(X, y)
        self.scaler = Standardizer.fit(X)
        Z = self.scaler.transform(X)
        n, d = Z.shape
        s = 2.0 * y - 1.0
        w = np.zeros(d)
        b = 0.0
        rng = np.random.default_rng(self.seed)
        t = 0
        for _ in range(self.epochs):
            perm = rng.permutation(n)
            for start in range(0, n, self.batch_size):
                idx = perm[start:start + self.batch_size]
                t += 1
                eta = 1.0 / (1.0 + self.lam * t)
                Zb, sb = Z[idx], s[idx]
                viol = sb * (Zb @ w + b) < 1.0
                coef = sb * viol
                w = (1.0 - eta * self.lam) * w + eta * (coef @ Zb) / len(idx)
                b = b + eta * coef.sum() / len(idx)
        self.params_ = np.concatenate([[b], w])
        self.platt = platt_scaling(self.margin(X), y)
        return self

    def margin(self, X):
        Z = self.scaler.transform(X)
        return Z @ self.params_[1:] + self.params_[0]

    def raw_score(self, X):
        a, c = self.platt
        return a * self.margin(X) + c

    def predict_proba(self, X):
        return sigmoid(self.raw_score(X))

    def state(self):
        return {"scaler": self.scaler.to_dict(), "params": self.params_.tolist(),
                "platt": list(self.platt)}

    def load_state(self, state):
        self.scaler = Standardizer.from_dict(state["scaler"])
        self.params_ = np.asarray(state["params"], dtype=float)
        self.platt = tuple(state["platt"])


def platt_scaling(margins, y, max_iter=100):
    """Fit ``P(y=1 | m) = sigmoid(a * m + c)`` by Newton's method.

    Targets are smoothed to ``(N+ + 1) / (N+ + 2)`` and ``1 / (N- + 2)``.
    """
    margins = np.asarray(margins, dtype=float)
    n_pos = float(y.sum())
    n_neg = float(len(y) - n_pos)
    target = np.where(y == 1, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))
    a, c = 1.0, _logit((n_pos + 1.0) / (len(y) + 2.0))
    prev = np.inf
    for _ in range(max_iter):
        z = a * margins + c
        p = sigmoid(z)
        loss = float(np.sum(log1pexp(z) - target * z))
        r = p - target
        g = np.array([r @ margins, r.sum()])
        wts = p * (1 - p)
        H = np.array([[wts @ (margins * margins), wts @ margins], [wts @ margins, wts.sum()]])
        H += 1e-12 * np.eye(2)
        step = np.linalg.solve(H, g)
        # backtrack to keep the log-loss decreasing
        scale = 1.0
        while scale > 1e-8:
            na, nc = a - scale * step[0], c - scale * step[1]
            nz = na * margins + nc
            if np.sum(log1pexp(nz) - target * nz) <= loss + 1e-12:
                break
            scale /= 2.0
        a, c = na, nc
        if abs(prev - loss) < 1e-12 * max(1.0, abs(loss)):
            break
        prev = loss
    return float(a), float(c)
