"""Gaussian-process regression with an ARD squared-exponential kernel.

Single-output exact GP: jittered Cholesky factorization, log marginal
likelihood maximization over log-hyperparameters with multiple restarts,
and posterior mean/variance prediction. Inputs are z-scored and outputs
mean-centered using training statistics stored on the model, so feature
axes with wildly different scales (volumes vs radians) train cleanly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular

JITTER_LADDER = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)

LOG_BOUND_LENGTH = (-7.0, 7.0)
LOG_BOUND_SIGNAL = (-18.0, 8.0)
LOG_BOUND_NOISE = (-18.0, 8.0)


class GpNumericalError(RuntimeError):
    """Kernel matrix could not be factorized even with maximum jitter."""


@dataclass(frozen=True)
class GpHyperparams:
    """ARD-SE kernel hyperparameters; all strictly positive."""

    lengthscales: np.ndarray
    signal_variance: float
    noise_variance: float

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=np.float64))
        object.__setattr__(self, "lengthscales", ls)
        vals = np.concatenate([ls, [self.signal_variance, self.noise_variance]])
        if not np.isfinite(vals).all() or (vals <= 0).any():
            raise ValueError("hyperparameters must be positive and finite")

    @property
    def dim(self) -> int:
        return self.lengthscales.shape[0]


def kernel(x1, x2, hyp: GpHyperparams) -> float:
    """ARD squared-exponential covariance between two input vectors."""
    a = np.atleast_1d(np.asarray(x1, dtype=np.float64))
    b = np.atleast_1d(np.asarray(x2, dtype=np.float64))
    if a.shape != (hyp.dim,) or b.shape != (hyp.dim,):
        raise ValueError(
            f"input dims {a.shape}/{b.shape} do not match lengthscales ({hyp.dim},)"
        )
    r2 = np.sum(((a - b) / hyp.lengthscales) ** 2)
    return float(hyp.signal_variance * np.exp(-0.5 * r2))


def kernel_matrix(A, B, hyp: GpHyperparams) -> np.ndarray:
    """Cross-covariance matrix between row sets A (n, d) and B (m, d)."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64)) / hyp.lengthscales
    B = np.atleast_2d(np.asarray(B, dtype=np.float64)) / hyp.lengthscales
    if A.shape[1] != hyp.dim or B.shape[1] != hyp.dim:
        raise ValueError("input dims do not match lengthscale count")
    sq = (
        np.sum(A**2, axis=1)[:, None]
        + np.sum(B**2, axis=1)[None, :]
        - 2.0 * (A @ B.T)
    )
    np.maximum(sq, 0.0, out=sq)
    return hyp.signal_variance * np.exp(-0.5 * sq)


def _jittered_cholesky(K_noisy: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor, escalating diagonal jitter on failure."""
    scale = max(float(np.mean(np.diag(K_noisy))), 1.0)
    for jit in JITTER_LADDER:
        try:
            L = cholesky(K_noisy + (jit * scale) * np.eye(K_noisy.shape[0]), lower=True)
            return L, jit * scale
        except LinAlgError:
            continue
    raise GpNumericalError(
        f"Cholesky failed for {K_noisy.shape[0]}x{K_noisy.shape[0]} kernel matrix "
        f"even with jitter {JITTER_LADDER[-1]:g}"
    )


def _standardize_stats(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 1e-9, scale, 1.0)
    return mean, scale


@dataclass
class GpModel:
    """A trained single-output GP with its cached factorization.

    X, Y are kept in raw units; hyperparameters live in the standardized
    input space. The factorization (L, alpha) is always consistent with
    (X, Y, hyp): it is rebuilt by train()/fit() and never mutated.
    """

    X: np.ndarray
    Y: np.ndarray
    hyp: GpHyperparams
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float
    standardize: bool = True
    _L: np.ndarray | None = field(default=None, repr=False)
    _alpha: np.ndarray | None = field(default=None, repr=False)
    _jitter: float = field(default=0.0, repr=False)

    @property
    def n_train(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.hyp.dim

    def _xs(self, X: np.ndarray) -> np.ndarray:
        return (X - self.x_mean) / self.x_scale

    def refresh(self) -> "GpModel":
        """(Re)build the cached Cholesky factorization from X, Y, hyp."""
        if self.n_train == 0:
            self._L = None
            self._alpha = None
            return self
        Xs = self._xs(self.X)
        K = kernel_matrix(Xs, Xs, self.hyp)
        K[np.diag_indices_from(K)] += self.hyp.noise_variance
        self._L, self._jitter = _jittered_cholesky(K)
        yc = self.Y - self.y_mean
        self._alpha = cho_solve((self._L, True), yc)
        return self

    def predict(self, x_star) -> tuple[float, float]:
        """Posterior mean and variance at a single input."""
        x = np.atleast_1d(np.asarray(x_star, dtype=np.float64))
        if x.shape != (self.dim,):
            raise ValueError(f"query dim {x.shape} != model dim ({self.dim},)")
        mean, var = self.predict_batch(x[None, :])
        return float(mean[0]), float(var[0])

    def predict_batch(self, X_star) -> tuple[np.ndarray, np.ndarray]:
        """Posterior means and variances for an (m, d) batch of inputs."""
        Xq = np.atleast_2d(np.asarray(X_star, dtype=np.float64))
        if Xq.shape[1] != self.dim:
            raise ValueError(f"query dim {Xq.shape[1]} != model dim {self.dim}")
        if self.n_train == 0:
            # prior: zero-centered mean, full signal variance
            m = np.full(Xq.shape[0], self.y_mean)
            v = np.full(Xq.shape[0], self.hyp.signal_variance)
            return m, v
        Xqs = self._xs(Xq)
        k_star = kernel_matrix(self._xs(self.X), Xqs, self.hyp)
        mean = k_star.T @ self._alpha + self.y_mean
        v = solve_triangular(self._L, k_star, lower=True)
        var = self.hyp.signal_variance - np.sum(v**2, axis=0)
        np.maximum(var, 0.0, out=var)
        return mean, var

    def log_marginal_likelihood(self) -> float:
        """Log evidence of (X, Y) under the model's hyperparameters."""
        if self.n_train == 0:
            raise ValueError("log marginal likelihood needs at least one data point")
        yc = self.Y - self.y_mean
        n = self.n_train
        return float(
            -0.5 * yc @ self._alpha
            - np.sum(np.log(np.diag(self._L)))
            - 0.5 * n * np.log(2.0 * np.pi)
        )

    @classmethod
    def train(cls, X, Y, hyp: GpHyperparams, standardize: bool = True) -> "GpModel":
        """Build a model with fixed hyperparameters (no optimization)."""
        X, Y = _validate_data(X, Y, hyp.dim)
        if standardize and X.shape[0] > 0:
            x_mean, x_scale = _standardize_stats(X)
            y_mean = float(Y.mean())
        else:
            x_mean = np.zeros(hyp.dim)
            x_scale = np.ones(hyp.dim)
            y_mean = 0.0
        model = cls(
            X=X, Y=Y, hyp=hyp,
            x_mean=x_mean, x_scale=x_scale, y_mean=y_mean,
            standardize=standardize,
        )
        return model.refresh()

    # -- persistence ---------------------------------------------------

    def to_json(self) -> str:
        payload = {
            "format": "grindrl-gp-v1",
            "X": self.X.tolist(),
            "Y": self.Y.tolist(),
            "lengthscales": self.hyp.lengthscales.tolist(),
            "signal_variance": self.hyp.signal_variance,
            "noise_variance": self.hyp.noise_variance,
            "x_mean": self.x_mean.tolist(),
            "x_scale": self.x_scale.tolist(),
            "y_mean": self.y_mean,
            "standardize": self.standardize,
        }
        return json.dumps(payload, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "GpModel":
        payload = json.loads(text)
        if payload.get("format") != "grindrl-gp-v1":
            raise ValueError(f"unsupported model format {payload.get('format')!r}")
        hyp = GpHyperparams(
            lengthscales=np.array(payload["lengthscales"]),
            signal_variance=payload["signal_variance"],
            noise_variance=payload["noise_variance"],
        )
        d = hyp.dim
        model = cls(
            X=np.array(payload["X"], dtype=np.float64).reshape(-1, d),
            Y=np.array(payload["Y"], dtype=np.float64),
            hyp=hyp,
            x_mean=np.array(payload["x_mean"], dtype=np.float64),
            x_scale=np.array(payload["x_scale"], dtype=np.float64),
            y_mean=payload["y_mean"],
            standardize=payload["standardize"],
        )
        return model.refresh()


def _validate_data(X, Y, dim: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.size == 0:
        X = X.reshape(0, dim if dim else 1)
    Y = np.atleast_1d(np.asarray(Y, dtype=np.float64))
    if X.shape[0] != Y.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
    if dim is not None and X.shape[1] != dim:
        raise ValueError(f"X dim {X.shape[1]} != expected {dim}")
    if not np.isfinite(X).all() or not np.isfinite(Y).all():
        raise ValueError("training data contains non-finite values")
    return X, Y


def _neg_lml_and_grad(theta: np.ndarray, Xs: np.ndarray, yc: np.ndarray):
    """Negative LML and its gradient w.r.t. log-hyperparameters.

    theta = [log l_1..log l_d, log sv, log nv]. Gradient uses the standard
    trace identity with dK/dtheta for the ARD-SE kernel.
    """
    d = Xs.shape[1]
    n = Xs.shape[0]
    ls = np.exp(theta[:d])
    sv = np.exp(theta[d])
    nv = np.exp(theta[d + 1])
    hyp = GpHyperparams(lengthscales=ls, signal_variance=sv, noise_variance=nv)
    K = kernel_matrix(Xs, Xs, hyp)
    Kn = K + nv * np.eye(n)
    try:
        L, _ = _jittered_cholesky(Kn)
    except GpNumericalError:
        return 1e12, np.zeros_like(theta)
    alpha = cho_solve((L, True), yc)
    lml = -0.5 * yc @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * np.log(2 * np.pi)

    Kinv = cho_solve((L, True), np.eye(n))
    W = np.outer(alpha, alpha) - Kinv  # dLML/dtheta_j = 0.5 tr(W dK/dtheta_j)
    grad = np.empty_like(theta)
    for j in range(d):
        diff = Xs[:, j][:, None] - Xs[:, j][None, :]
        dK = K * (diff**2 / ls[j] ** 2)
        grad[j] = 0.5 * np.sum(W * dK)
    grad[d] = 0.5 * np.sum(W * K)
    grad[d + 1] = 0.5 * nv * np.trace(W)
    return -lml, -grad


def fit(
    X,
    Y,
    init: GpHyperparams | None = None,
    restarts: int = 5,
    seed=None,
    standardize: bool = True,
    max_lengthscale: float | None = None,
) -> GpModel:
    """Fit hyperparameters by maximizing the log marginal likelihood.

    Runs L-BFGS-B from `init` (or a data-driven default) plus randomized
    restarts and keeps the best optimum. Deterministic per seed.

    `max_lengthscale` caps the per-dimension lengthscales (in standardized
    units when standardize is on). On very small smooth datasets ML-II
    favours near-linear long-lengthscale explanations whose predictive
    variance stays low arbitrarily far from the data; the cap keeps
    extrapolation uncertainty honest at the cost of some smoothness.
    """
    X, Y = _validate_data(X, Y)
    if X.shape[0] < 1:
        raise ValueError("fit needs at least one data point")
    d = X.shape[1]
    if standardize:
        x_mean, x_scale = _standardize_stats(X)
        y_mean = float(Y.mean())
    else:
        x_mean, x_scale = np.zeros(d), np.ones(d)
        y_mean = 0.0
    Xs = (X - x_mean) / x_scale
    yc = Y - y_mean

    y_var = max(float(np.var(yc)), 1e-8)
    if init is None:
        init = GpHyperparams(
            lengthscales=np.ones(d), signal_variance=y_var, noise_variance=0.05 * y_var
        )
    theta0 = np.concatenate(
        [np.log(init.lengthscales), [np.log(init.signal_variance), np.log(init.noise_variance)]]
    )
    ls_bound = LOG_BOUND_LENGTH
    if max_lengthscale is not None:
        ls_bound = (LOG_BOUND_LENGTH[0], float(np.log(max_lengthscale)))
    bounds = [ls_bound] * d + [LOG_BOUND_SIGNAL, LOG_BOUND_NOISE]
    theta0 = np.clip(theta0, [b[0] for b in bounds], [b[1] for b in bounds])

    rng = np.random.default_rng(seed)
    starts = [theta0]
    for _ in range(max(restarts - 1, 0)):
        starts.append(np.clip(theta0 + rng.normal(0.0, 1.0, size=theta0.shape),
                              [b[0] for b in bounds], [b[1] for b in bounds]))

    best_theta, best_obj = theta0, np.inf
    for start in starts:
        res = optimize.minimize(
            _neg_lml_and_grad,
            start,
            args=(Xs, yc),
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
        )
        if res.fun < best_obj:
            best_obj, best_theta = res.fun, res.x

    hyp = GpHyperparams(
        lengthscales=np.exp(best_theta[:d]),
        signal_variance=float(np.exp(best_theta[d])),
        noise_variance=float(np.exp(best_theta[d + 1])),
    )
    model = GpModel(
        X=X, Y=Y, hyp=hyp,
        x_mean=x_mean, x_scale=x_scale, y_mean=y_mean,
        standardize=standardize,
    )
    return model.refresh()


class MultiOutputGp:
    """Independent single-output GPs, one per output dimension."""

    def __init__(self, models: list[GpModel]):
        if not models:
            raise ValueError("need at least one component model")
        self.models = models

    @property
    def n_outputs(self) -> int:
        return len(self.models)

    @classmethod
    def fit(cls, X, Y, restarts: int = 5, seed=None, standardize: bool = True):
        Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
        if Y.shape[0] == 1 and Y.shape[1] > 1:
            Y = Y.T
        m = Y.shape[1]
        # M=1 must reproduce the single-model path bit for bit
        seeds = [seed] if m == 1 else np.random.SeedSequence(seed).spawn(m)
        return cls(
            [
                fit(X, Y[:, j], restarts=restarts, seed=seeds[j], standardize=standardize)
                for j in range(m)
            ]
        )

    def predict(self, x_star) -> tuple[np.ndarray, np.ndarray]:
        pairs = [m.predict(x_star) for m in self.models]
        return np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs])

    def predict_batch(self, X_star) -> tuple[np.ndarray, np.ndarray]:
        """Means and variances with shape (m, n_outputs)."""
        outs = [m.predict_batch(X_star) for m in self.models]
        return np.stack([o[0] for o in outs], axis=1), np.stack([o[1] for o in outs], axis=1)


def log_marginal_likelihood(model: GpModel) -> float:
    return model.log_marginal_likelihood()


def save_model(model: GpModel, path) -> None:
    with open(path, "w") as fh:
        fh.write(model.to_json())


def load_model(path) -> GpModel:
    with open(path) as fh:
        return GpModel.from_json(fh.read())
