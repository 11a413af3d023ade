"""Non-sparse variational GP classification over fixed-length feature vectors.

The variational posterior is kept in whitened coordinates: for each latent
function ``c``, ``q(f_c) = N(L mu_c, L Sigma_c Sigma_c^T L^T)`` where ``L``
is the Cholesky factor of the (jittered) prior covariance. ``mu = 0,
Sigma = I`` is exactly the prior, and the KL term no longer depends on the
kernel. ``Sigma_c`` is lower triangular with a log-parameterized diagonal.

For WT-GP the features themselves are functions of the filter-bank scales;
gradients flow through feature standardization and the wavelet features
back to the log-scales, so kernel hyperparameters and scales are learned
jointly by maximizing the ELBO.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg
from numpy.polynomial.hermite import hermgauss
from scipy.special import expit, logsumexp, softmax

from specgraph.features import FilterBank, SpectralBatch
from specgraph.optim import OptimizationError, lbfgs

log = logging.getLogger(__name__)

KERNELS = ("verbatim", "sq-exp")
JITTER_LEVELS = (1e-6, 1e-5, 1e-4, 1e-3, 1e-2)
STD_FLOOR = 1e-8
MODEL_FORMAT = "specgraph.model/1"


class CholeskyError(np.linalg.LinAlgError):
    pass


class ELBOError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# Kernel
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class KernelParams:
    """``verbatim``: ``s2 * exp(-(l/2) * |a - b|)``; ``sq-exp``: ``s2 * exp(-|a - b|^2 / (2 l^2))``."""

    log_lengthscale: float = 0.0
    log_variance: float = 0.0
    kind: str = "verbatim"

    def __post_init__(self):
        if self.kind not in KERNELS:
            raise ValueError(f"unknown kernel {self.kind!r}; choose from {KERNELS}")

    @property
    def lengthscale(self) -> float:
        return float(np.exp(self.log_lengthscale))

    @property
    def variance(self) -> float:
        return float(np.exp(self.log_variance))


def pairwise_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    sq = (a**2).sum(1)[:, None] + (b**2).sum(1)[None, :] - 2.0 * a @ b.T
    return np.sqrt(np.maximum(sq, 0.0))


def _unit_kernel(dist: np.ndarray, lengthscale: float, kind: str) -> np.ndarray:
    if kind == "verbatim":
        return np.exp(-0.5 * lengthscale * dist)
    return np.exp(-0.5 * dist**2 / lengthscale**2)


def rbf_kernel(a, b, params: KernelParams) -> float:
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError(f"feature length mismatch: {a.shape[0]} vs {b.shape[0]}")
    dist = float(np.linalg.norm(a - b))
    return params.variance * float(_unit_kernel(dist, params.lengthscale, params.kind))


def cross_kernel(a: np.ndarray, b: np.ndarray, params: KernelParams) -> np.ndarray:
    return params.variance * _unit_kernel(pairwise_distances(a, b), params.lengthscale, params.kind)


def gram_matrix(features, params: KernelParams) -> np.ndarray:
    """Kernel matrix of the rows of ``features`` (no jitter; see :func:`jittered_cholesky`)."""
    x = np.atleast_2d(np.asarray(features, dtype=float))
    dist = pairwise_distances(x, x)
    np.fill_diagonal(dist, 0.0)
    k = params.variance * _unit_kernel(dist, params.lengthscale, params.kind)
    return 0.5 * (k + k.T)


def jittered_cholesky(gram: np.ndarray, variance: float, start: float = JITTER_LEVELS[0]):
    """Cholesky factor of ``gram + j * variance * I``.

    ``j`` starts at ``start`` and is raised tenfold up to 1e-2 on failure.
    Returns ``(L, j)``.
    """
    n = gram.shape[0]
    for jit in JITTER_LEVELS:
        if jit < start:
            continue
        try:
            chol = scipy.linalg.cholesky(gram + jit * variance * np.eye(n), lower=True)
            return chol, jit
        except np.linalg.LinAlgError:
            continue
    try:
        evals = np.linalg.eigvalsh(gram)
        diag = f"eigenvalues in [{evals[0]:.3g}, {evals[-1]:.3g}]"
    except np.linalg.LinAlgError:
        diag = "eigenvalues unavailable"
    raise CholeskyError(f"Cholesky failed with jitter up to {JITTER_LEVELS[-1]:g}; {n}x{n} gram, {diag}")


# --------------------------------------------------------------------------
# Likelihoods
# --------------------------------------------------------------------------


class BernoulliLogit:
    """Binary labels with a logistic link; expectations by Gauss-Hermite quadrature."""

    kind = "bernoulli"
    num_classes = 2
    num_latent = 1

    def __init__(self, num_points: int = 20):
        self.num_points = num_points
        x, w = hermgauss(num_points)
        self.nodes = x
        self.weights = w / np.sqrt(np.pi)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "num_points": self.num_points}

    def _latent(self, mean, var):
        sd = np.sqrt(2.0 * var)
        return mean[:, None] + sd[:, None] * self.nodes[None, :], sd

    def expected_log_lik(self, labels, mean, var):
        """Returns ``(values (N,), d/dmean (N, 1), d/dvar (N, 1))``."""
        m, v = mean[:, 0], var[:, 0]
        sign = 2.0 * np.asarray(labels) - 1.0
        f, sd = self._latent(m, v)
        sf = sign[:, None] * f
        vals = (-np.logaddexp(0.0, -sf)) @ self.weights
        dl = sign[:, None] * expit(-sf)  # d log sigma(s f) / df
        dm = dl @ self.weights
        dv = (dl * self.nodes[None, :]) @ self.weights / sd
        return vals, dm[:, None], dv[:, None]

    def predict(self, mean, var):
        """Class probabilities ``(N, 2)`` and variance of the predicted-class probability."""
        f, _ = self._latent(mean[:, 0], var[:, 0])
        s = expit(f)
        p1 = s @ self.weights
        second = (s**2) @ self.weights
        variance = np.maximum(second - p1**2, 0.0)
        return np.column_stack([1.0 - p1, p1]), variance


class SoftmaxMC:
    """Categorical labels with a softmax link; fixed antithetic Monte Carlo samples.

    The same standard-normal draws (shape ``(S, C)``, drawn from ``seed``)
    are reused for every evaluation, keeping the objective deterministic.
    """

    kind = "softmax"

    def __init__(self, num_classes: int, num_samples: int = 64, seed: int = 0):
        if num_samples % 2:
            raise ValueError("num_samples must be even (antithetic pairs)")
        self.num_classes = self.num_latent = num_classes
        self.num_samples = num_samples
        self.seed = seed
        half = np.random.default_rng(seed).standard_normal((num_samples // 2, num_classes))
        self.eps = np.vstack([half, -half])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "num_classes": self.num_classes,
                "num_samples": self.num_samples, "seed": self.seed}

    def _samples(self, mean, var):
        sd = np.sqrt(var)
        return mean[None] + sd[None] * self.eps[:, None, :], sd

    def expected_log_lik(self, labels, mean, var):
        labels = np.asarray(labels)
        f, sd = self._samples(mean, var)  # (S, N, C)
        n = np.arange(len(labels))
        vals = np.mean(f[:, n, labels] - logsumexp(f, axis=-1), axis=0)
        resid = -softmax(f, axis=-1)
        resid[:, n, labels] += 1.0
        dm = resid.mean(axis=0)
        dv = np.mean(resid * self.eps[:, None, :], axis=0) / (2.0 * sd)
        return vals, dm, dv

    def predict(self, mean, var):
        f, _ = self._samples(mean, var)
        p = softmax(f, axis=-1)
        probs = p.mean(axis=0)
        probs /= probs.sum(axis=1, keepdims=True)
        top = probs.argmax(axis=1)
        variance = p[:, np.arange(len(top)), top].var(axis=0)
        return probs, variance


def make_likelihood(num_classes: int, gh_points: int = 20, mc_samples: int = 64, seed: int = 0):
    if num_classes < 2:
        raise ValueError("need at least two classes")
    if num_classes == 2:
        return BernoulliLogit(gh_points)
    return SoftmaxMC(num_classes, mc_samples, seed)


def likelihood_from_dict(doc: dict):
    if doc["kind"] == "bernoulli":
        return BernoulliLogit(doc["num_points"])
    return SoftmaxMC(doc["num_classes"], doc["num_samples"], doc["seed"])


# --------------------------------------------------------------------------
# Variational posterior and ELBO
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class VariationalPosterior:
    """Whitened Gaussian posterior; ``mu`` is ``(C, N)``, ``sigma`` is ``(C, N, N)`` lower."""

    mu: np.ndarray
    sigma: np.ndarray

    @classmethod
    def prior(cls, num_points: int, num_latent: int = 1) -> "VariationalPosterior":
        eye = np.broadcast_to(np.eye(num_points), (num_latent, num_points, num_points)).copy()
        return cls(np.zeros((num_latent, num_points)), eye)

    def latent(self, chol: np.ndarray):
        """Per-class latent mean ``m_c = L mu_c`` and covariance factor ``L Sigma_c``."""
        return self.mu @ chol.T, chol[None] @ self.sigma

    def kl(self) -> np.ndarray:
        """``KL(q_c || prior)`` for each latent; closed form in whitened coordinates."""
        n = self.mu.shape[1]
        diag = np.diagonal(self.sigma, axis1=1, axis2=2)
        return 0.5 * ((self.sigma**2).sum(axis=(1, 2)) + (self.mu**2).sum(1) - n
                      - 2.0 * np.log(diag).sum(1))


def _marginals(chol, post: VariationalPosterior):
    mean = (post.mu @ chol.T).T  # (N, C)
    ls = chol[None] @ post.sigma  # (C, N, N)
    var = (ls**2).sum(axis=2).T  # (N, C)
    return mean, var


def elbo_terms(post: VariationalPosterior, chol: np.ndarray, labels, likelihood):
    """Expected log-likelihood summed over points, and total KL."""
    mean, var = _marginals(chol, post)
    ell, _, _ = likelihood.expected_log_lik(labels, mean, var)
    return float(ell.sum()), float(post.kl().sum())


def elbo(post: VariationalPosterior, gram: np.ndarray, labels, likelihood, variance: Optional[float] = None) -> float:
    """ELBO of ``post`` under a GP prior with covariance ``gram``.

    ``gram`` is jittered by ``1e-6 * variance`` (``variance`` defaults to the
    mean of its diagonal) before factorization.
    """
    gram = np.asarray(gram, dtype=float)
    if variance is None:
        variance = float(np.mean(np.diag(gram)))
    chol, _ = jittered_cholesky(gram, variance)
    ell, kl = elbo_terms(post, chol, labels, likelihood)
    value = ell - kl
    if not np.isfinite(value):
        raise ELBOError(f"non-finite ELBO (ell={ell}, kl={kl})")
    return value


def _chol_backward(chol: np.ndarray, grad_l: np.ndarray) -> np.ndarray:
    """Symmetric gradient w.r.t. ``A`` given the gradient w.r.t. ``L = chol(A)``."""
    p = np.tril(chol.T @ np.tril(grad_l))
    p[np.diag_indices_from(p)] *= 0.5
    tmp = scipy.linalg.solve_triangular(chol, p.T, lower=True, trans="T")
    gk = scipy.linalg.solve_triangular(chol, tmp.T, lower=True, trans="T")
    return 0.5 * (gk + gk.T)


def standardize(x: np.ndarray):
    mean = x.mean(axis=0)
    std = np.maximum(x.std(axis=0), STD_FLOOR)
    return (x - mean) / std, mean, std


def _standardize_backward(z, std, grad_z):
    # floored columns have a constant std, so only the mean term remains
    floored = std <= STD_FLOOR
    gm = grad_z.mean(axis=0)
    gzz = (grad_z * z).mean(axis=0)
    return (grad_z - gm - np.where(floored, 0.0, z * gzz)) / std


class ELBOObjective:
    """Negative ELBO and its gradient over a flat parameter vector.

    Layout: ``[log l, log s2, <log filter scales>, mu_1, tril(Sigma_1), ..., mu_C, tril(Sigma_C)]``
    with the diagonal of each ``Sigma_c`` stored as a logarithm. Filter
    scales are present only when a ``spectra`` batch and filter ``bank`` are
    given, in which case features are recomputed from them on every call.
    """

    def __init__(self, labels, likelihood, kernel: str = "verbatim", features=None,
                 spectra: Optional[SpectralBatch] = None, bank: Optional[FilterBank] = None):
        if kernel not in KERNELS:
            raise ValueError(f"unknown kernel {kernel!r}")
        self.labels = np.asarray(labels, dtype=np.int64)
        self.likelihood = likelihood
        self.kernel = kernel
        self.spectra = spectra
        self.bank = bank
        self.wavelet = spectra is not None
        if self.wavelet:
            if bank is None:
                raise ValueError("wavelet objective needs an initial filter bank")
            self.fixed_features = None
        else:
            self.fixed_features = np.asarray(features, dtype=float)
        self.n = len(self.labels)
        self.c = likelihood.num_latent
        self.n_scales = bank.num_params if self.wavelet else 0
        self.tril = np.tril_indices(self.n)
        self.diag_pos = np.flatnonzero(self.tril[0] == self.tril[1])
        self.n_tri = len(self.tril[0])
        self.block = self.n + self.n_tri
        self.size = 2 + self.n_scales + self.c * self.block
        self.jitter = JITTER_LEVELS[0]
        self.nfev = 0

    # -- packing -----------------------------------------------------------

    def pack(self, kernel: KernelParams, post: VariationalPosterior, bank: Optional[FilterBank] = None):
        theta = np.empty(self.size)
        theta[0] = kernel.log_lengthscale
        theta[1] = kernel.log_variance
        if self.wavelet:
            theta[2:2 + self.n_scales] = (bank or self.bank).log_scales.ravel()
        off = 2 + self.n_scales
        for c in range(self.c):
            blk = theta[off + c * self.block: off + (c + 1) * self.block]
            blk[:self.n] = post.mu[c]
            tri = post.sigma[c][self.tril].copy()
            tri[self.diag_pos] = np.log(tri[self.diag_pos])
            blk[self.n:] = tri
        return theta

    def unpack(self, theta):
        kernel = KernelParams(float(theta[0]), float(theta[1]), self.kernel)
        bank = self.bank.with_log_scales(theta[2:2 + self.n_scales]) if self.wavelet else None
        off = 2 + self.n_scales
        mu = np.empty((self.c, self.n))
        sigma = np.zeros((self.c, self.n, self.n))
        for c in range(self.c):
            blk = theta[off + c * self.block: off + (c + 1) * self.block]
            mu[c] = blk[:self.n]
            tri = blk[self.n:].copy()
            tri[self.diag_pos] = np.exp(tri[self.diag_pos])
            sigma[c][self.tril] = tri
        return kernel, bank, VariationalPosterior(mu, sigma)

    def initial(self, bank: Optional[FilterBank] = None) -> np.ndarray:
        return self.pack(KernelParams(kind=self.kernel), VariationalPosterior.prior(self.n, self.c), bank)

    def raw_features(self, bank):
        if self.wavelet:
            return self.spectra.wavelet_features(bank)
        return self.fixed_features

    # -- evaluation --------------------------------------------------------

    def elbo_and_grad(self, theta):
        """Return ``(elbo, d elbo / d theta, details)``."""
        kernel, bank, post = self.unpack(theta)
        ls, s2 = kernel.lengthscale, kernel.variance
        x_raw = self.raw_features(bank)
        z, _, std = standardize(x_raw)
        dist = pairwise_distances(z, z)
        np.fill_diagonal(dist, 0.0)
        unit = _unit_kernel(dist, ls, self.kernel)
        unit = 0.5 * (unit + unit.T)
        chol, jit = jittered_cholesky(s2 * unit, s2, self.jitter)
        self.jitter = jit

        mean, var = _marginals(chol, post)
        ell, dm, dv = self.likelihood.expected_log_lik(self.labels, mean, var)
        kl = post.kl()
        value = float(ell.sum() - kl.sum())

        grad = np.zeros(self.size)
        off = 2 + self.n_scales
        grad_l = np.zeros_like(chol)
        for c in range(self.c):
            mu_c, sig_c = post.mu[c], post.sigma[c]
            ls_c = chol @ sig_c
            blk = grad[off + c * self.block: off + (c + 1) * self.block]
            blk[:self.n] = chol.T @ dm[:, c] - mu_c
            gsig = 2.0 * chol.T @ (dv[:, c][:, None] * ls_c) - sig_c
            gsig[np.diag_indices(self.n)] += 1.0 / np.diag(sig_c)
            tri = gsig[self.tril]
            tri[self.diag_pos] *= np.diag(sig_c)
            blk[self.n:] = tri
            grad_l += np.outer(dm[:, c], mu_c) + 2.0 * dv[:, c][:, None] * (ls_c @ sig_c.T)
        gk = _chol_backward(chol, grad_l)

        kj = s2 * (unit + jit * np.eye(self.n))
        grad[1] = np.sum(gk * kj)
        if self.kernel == "verbatim":
            coeff = -0.5 * ls * dist  # d unit / d log l = coeff * unit
        else:
            coeff = dist**2 / ls**2
        grad[0] = s2 * np.sum(gk * coeff * unit)

        if self.wavelet:
            # d unit_ab / d z_a = w_ab * (z_a - z_b)
            if self.kernel == "verbatim":
                safe = np.where(dist > 0, dist, 1.0)
                w = np.where(dist > 0, -0.5 * ls * unit / safe, 0.0)
            else:
                w = -unit / ls**2
            wk = s2 * gk * w
            np.fill_diagonal(wk, 0.0)
            grad_z = 2.0 * (wk.sum(axis=1)[:, None] * z - wk @ z)
            grad_x = _standardize_backward(z, std, grad_z)
            grad[2:2 + self.n_scales] = self.spectra.wavelet_vjp(bank, x_raw, grad_x).ravel()

        info = {"ell": float(ell.sum()), "kl": float(kl.sum()), "jitter": jit}
        return value, grad, info

    def __call__(self, theta):
        """Negated ELBO and gradient, for minimization."""
        self.nfev += 1
        try:
            value, grad, _ = self.elbo_and_grad(theta)
        except (FloatingPointError, np.linalg.LinAlgError, ValueError):
            return np.inf, np.full(self.size, np.nan)
        if not np.isfinite(value):
            return np.inf, np.full(self.size, np.nan)
        return -value, -grad


# --------------------------------------------------------------------------
# Training and prediction
# --------------------------------------------------------------------------


@dataclass
class GPConfig:
    kernel: str = "verbatim"
    max_iter: int = 1000
    memory: int = 10
    rel_tol: float = 1e-6
    grad_tol: float = 1e-5
    gh_points: int = 20
    mc_samples: int = 64
    seed: int = 0


@dataclass(frozen=True, eq=False)
class TrainedModel:
    kernel: KernelParams
    posterior: VariationalPosterior
    feature_mean: np.ndarray
    feature_std: np.ndarray
    train_features: np.ndarray  # raw (unstandardized) training features
    num_classes: int
    jitter: float
    likelihood: dict
    bank: Optional[FilterBank] = None
    feature_kind: str = "raw"  # "raw", "ft" or "wt"
    num_eval_points: Optional[int] = None
    elbo: float = float("nan")
    trace: tuple = ()
    converged: bool = False
    num_iter: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def num_features(self) -> int:
        return self.train_features.shape[1]

    def parameter_vector(self) -> np.ndarray:
        parts = [np.array([self.kernel.log_lengthscale, self.kernel.log_variance])]
        if self.bank is not None:
            parts.append(self.bank.log_scales.ravel())
        parts += [self.posterior.mu.ravel(), self.posterior.sigma.ravel()]
        return np.concatenate(parts)


def _check_labels(labels, num_classes=None):
    labels = np.asarray(labels)
    if labels.ndim != 1 or not np.issubdtype(labels.dtype, np.integer):
        raise ValueError("labels must be a 1-d integer array")
    if len(labels) < 2:
        raise ValueError("need at least two training items")
    present = np.unique(labels)
    if len(present) < 2:
        raise ValueError("training labels contain a single class")
    if labels.min() < 0:
        raise ValueError("labels must be non-negative")
    c = int(labels.max()) + 1 if num_classes is None else num_classes
    return labels.astype(np.int64), c


def _optimize(obj: ELBOObjective, theta0, config: GPConfig):
    try:
        res = lbfgs(obj, theta0, memory=config.memory, max_iter=config.max_iter,
                    rel_tol=config.rel_tol, grad_tol=config.grad_tol)
    except OptimizationError as exc:
        raise ELBOError(f"{exc} after {obj.nfev} objective evaluations") from exc
    if not np.isfinite(res.fun):
        raise ELBOError(f"non-finite ELBO at iteration {res.nit}")
    log.debug("optimizer: %s after %d iterations (%d evals), ELBO %.6g",
              res.message, res.nit, res.nfev, -res.fun)
    return res


def _finish(obj: ELBOObjective, res, labels_c, feature_kind, num_eval_points=None, extra=None):
    kernel, bank, post = obj.unpack(res.x)
    x_raw = obj.raw_features(bank)
    _, mean, std = standardize(x_raw)
    return TrainedModel(
        kernel=kernel, posterior=post, feature_mean=mean, feature_std=std,
        train_features=np.array(x_raw), num_classes=labels_c, jitter=obj.jitter,
        likelihood=obj.likelihood.to_dict(), bank=bank, feature_kind=feature_kind,
        num_eval_points=num_eval_points, elbo=float(-res.fun),
        trace=tuple(-t for t in res.trace), converged=bool(res.converged),
        num_iter=int(res.nit), extra=dict(extra or {}),
    )


def fit(features, labels, config: Optional[GPConfig] = None, num_classes: Optional[int] = None,
        feature_kind: str = "raw", num_eval_points: Optional[int] = None) -> TrainedModel:
    """Fit kernel hyperparameters and the variational posterior on fixed features."""
    config = config or GPConfig()
    x = np.asarray(features, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    labels, c = _check_labels(labels, num_classes)
    if x.shape[0] != len(labels):
        raise ValueError(f"{x.shape[0]} feature rows for {len(labels)} labels")
    lik = make_likelihood(c, config.gh_points, config.mc_samples, config.seed)
    obj = ELBOObjective(labels, lik, config.kernel, features=x)
    res = _optimize(obj, obj.initial(), config)
    return _finish(obj, res, c, feature_kind, num_eval_points)


def fit_wavelet(spectra: SpectralBatch, labels, bank: FilterBank, config: Optional[GPConfig] = None,
                num_classes: Optional[int] = None) -> TrainedModel:
    """Jointly fit kernel hyperparameters, filter scales and the variational posterior."""
    config = config or GPConfig()
    labels, c = _check_labels(labels, num_classes)
    if len(spectra) != len(labels):
        raise ValueError(f"{len(spectra)} graphs for {len(labels)} labels")
    lik = make_likelihood(c, config.gh_points, config.mc_samples, config.seed)
    obj = ELBOObjective(labels, lik, config.kernel, spectra=spectra, bank=bank)
    res = _optimize(obj, obj.initial(bank), config)
    return _finish(obj, res, c, "wt", extra={"initial_log_scales": bank.log_scales.tolist()})


@dataclass(frozen=True, eq=False)
class Prediction:
    probs: np.ndarray
    variance: np.ndarray
    latent_mean: np.ndarray
    latent_var: np.ndarray

    @property
    def labels(self) -> np.ndarray:
        return self.probs.argmax(axis=1)


def predict_latent(model: TrainedModel, features):
    x = np.atleast_2d(np.asarray(features, dtype=float))
    if x.shape[1] != model.num_features:
        raise ValueError(f"expected {model.num_features} features, got {x.shape[1]}")
    z_train = (model.train_features - model.feature_mean) / model.feature_std
    z = (x - model.feature_mean) / model.feature_std
    gram = gram_matrix(z_train, model.kernel)
    s2 = model.kernel.variance
    chol = scipy.linalg.cholesky(gram + model.jitter * s2 * np.eye(len(gram)), lower=True)
    kx = cross_kernel(z_train, z, model.kernel)
    a = scipy.linalg.solve_triangular(chol, kx, lower=True)  # (N, T)
    mean = (model.posterior.mu @ a).T  # (T, C)
    prior_var = s2 * (1.0 + model.jitter) - (a**2).sum(0)
    st_a = np.transpose(model.posterior.sigma, (0, 2, 1)) @ a[None]  # (C, N, T)
    var = prior_var[:, None] + (st_a**2).sum(axis=1).T
    return mean, np.maximum(var, model.jitter * s2)


def predict(model: TrainedModel, features) -> Prediction:
    """Class probabilities and predictive variance for raw (unstandardized) features."""
    mean, var = predict_latent(model, features)
    probs, variance = likelihood_from_dict(model.likelihood).predict(mean, var)
    return Prediction(probs, variance, mean, var)


# --------------------------------------------------------------------------
# Serialization
# --------------------------------------------------------------------------


def _num(x) -> str:
    return format(float(x), ".17g")


def _dump(obj, out: list):
    if isinstance(obj, dict):
        out.append("{")
        for i, (k, v) in enumerate(obj.items()):
            if i:
                out.append(", ")
            out.append(json.dumps(str(k)) + ": ")
            _dump(v, out)
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, v in enumerate(obj):
            if i:
                out.append(", ")
            _dump(v, out)
        out.append("]")
    elif isinstance(obj, np.ndarray):
        _dump(obj.tolist(), out)
    elif isinstance(obj, (bool, np.bool_)) or obj is None or isinstance(obj, str):
        out.append(json.dumps(obj if not isinstance(obj, np.bool_) else bool(obj)))
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        val = float(obj)
        out.append(_num(val) if np.isfinite(val) else "null")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_json(obj) -> str:
    """JSON text with every float written to 17 significant digits."""
    out = []
    _dump(obj, out)
    return "".join(out)


def model_to_dict(model: TrainedModel) -> dict:
    c, n = model.posterior.mu.shape
    tril = np.tril_indices(n)
    doc = {
        "format": MODEL_FORMAT,
        "feature_kind": model.feature_kind,
        "num_eval_points": model.num_eval_points,
        "num_classes": model.num_classes,
        "kernel": {"kind": model.kernel.kind, "log_lengthscale": model.kernel.log_lengthscale,
                   "log_variance": model.kernel.log_variance},
        "likelihood": model.likelihood,
        "jitter": model.jitter,
        "feature_mean": model.feature_mean,
        "feature_std": model.feature_std,
        "train_features": model.train_features,
        "posterior": {"mu": model.posterior.mu,
                      "sigma_tril": [model.posterior.sigma[k][tril] for k in range(c)]},
        "elbo": model.elbo,
        "converged": model.converged,
        "num_iter": model.num_iter,
    }
    if model.bank is not None:
        doc["filter_bank"] = {"log_scales": model.bank.log_scales,
                              "lowpass": model.bank.lowpass.name,
                              "bandpass": model.bank.bandpass.name}
    return doc


def model_from_dict(doc: dict) -> TrainedModel:
    from specgraph.features import ATOMS

    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"unsupported model format {doc.get('format')!r}")
    mu = np.asarray(doc["posterior"]["mu"], dtype=float)
    c, n = mu.shape
    tril = np.tril_indices(n)
    sigma = np.zeros((c, n, n))
    for k, tri in enumerate(doc["posterior"]["sigma_tril"]):
        sigma[k][tril] = tri
    bank = None
    if "filter_bank" in doc:
        fb = doc["filter_bank"]
        bank = FilterBank(np.asarray(fb["log_scales"], dtype=float),
                          ATOMS[fb["lowpass"]](), ATOMS[fb["bandpass"]]())
    k = doc["kernel"]
    return TrainedModel(
        kernel=KernelParams(k["log_lengthscale"], k["log_variance"], k["kind"]),
        posterior=VariationalPosterior(mu, sigma),
        feature_mean=np.asarray(doc["feature_mean"], dtype=float),
        feature_std=np.asarray(doc["feature_std"], dtype=float),
        train_features=np.asarray(doc["train_features"], dtype=float).reshape(n, -1),
        num_classes=int(doc["num_classes"]), jitter=float(doc["jitter"]),
        likelihood=doc["likelihood"], bank=bank, feature_kind=doc["feature_kind"],
        num_eval_points=doc.get("num_eval_points"),
        elbo=float("nan") if doc.get("elbo") is None else float(doc["elbo"]),
        converged=bool(doc.get("converged", False)), num_iter=int(doc.get("num_iter", 0)),
    )


def save_model(model: TrainedModel, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_json(model_to_dict(model)) + "\n")


def load_model(path) -> TrainedModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))
