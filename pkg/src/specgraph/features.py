"""Spectral graph features: cumulative Fourier energy and wavelet filter norms.

Both feature kinds are laid out dimension-major: the block for node-feature
dimension 0 comes first (all bins / all filters), then dimension 1, etc.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from specgraph.graph import Graph, SpectralDecomposition, graph_fourier_transform

# Slack when comparing eigenvalues against evaluation points, so that a
# numerically-zero eigenvalue (e.g. 3e-16) still lands in the z=0 bin.
EIGEN_TOL = 1e-10

# Below this filtered-signal norm the gradient is set to zero.
NORM_FLOOR = 1e-12


# --------------------------------------------------------------------------
# Fourier energy profiles
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EnergyProfile:
    values: np.ndarray
    eval_points: np.ndarray


def evaluation_points(num_points: int) -> np.ndarray:
    if num_points < 2:
        raise ValueError("need at least 2 evaluation points")
    return np.linspace(0.0, 2.0, num_points)


def cumulative_energy(decomp: SpectralDecomposition, signal, z: float) -> float:
    """Energy of ``signal`` carried by eigenvalues ``<= z``."""
    x = np.asarray(signal, dtype=float)
    if x.ndim != 1:
        raise ValueError("signal must be a vector")
    xhat = graph_fourier_transform(decomp, x)
    mask = decomp.eigenvalues <= z + EIGEN_TOL
    return float(np.sum(xhat[mask] ** 2))


def _energy_blocks(eigenvalues, xhat2, points) -> np.ndarray:
    # (M, D) cumulative energies for one graph
    bins = np.searchsorted(points, eigenvalues - EIGEN_TOL, side="left")
    hist = np.zeros((len(points), xhat2.shape[1]))
    np.add.at(hist, bins, xhat2)
    return np.cumsum(hist, axis=0)


def fourier_features(graph: Graph, decomp: SpectralDecomposition, num_eval_points: int) -> EnergyProfile:
    points = evaluation_points(num_eval_points)
    xhat = graph_fourier_transform(decomp, graph.node_features)
    blocks = _energy_blocks(decomp.eigenvalues, xhat**2, points)
    return EnergyProfile(values=blocks.T.ravel(), eval_points=points)


# --------------------------------------------------------------------------
# Filter atoms and banks
# --------------------------------------------------------------------------


class FilterAtom:
    """A scalar spectral window ``a(x)`` with its derivative ``a'(x)``."""

    name = "atom"

    def __call__(self, x):
        raise NotImplementedError

    def derivative(self, x):
        raise NotImplementedError


class ExpLowPass(FilterAtom):
    """``h(x) = exp(-x)``; passes the DC component unchanged."""

    name = "exp"

    def __call__(self, x):
        return np.exp(-x)

    def derivative(self, x):
        return -np.exp(-x)


class ExpBandPass(FilterAtom):
    """``b(x) = x exp(-x)``; zero at DC, single peak at x = 1."""

    name = "xexp"

    def __call__(self, x):
        return x * np.exp(-x)

    def derivative(self, x):
        return (1.0 - x) * np.exp(-x)


class ConstantAtom(FilterAtom):
    """``a(x) = 1``. Only useful as an identity filter in tests."""

    name = "const"

    def __call__(self, x):
        return np.ones_like(np.asarray(x, dtype=float))

    def derivative(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))


ATOMS = {cls.name: cls for cls in (ExpLowPass, ExpBandPass, ConstantAtom)}


@dataclass(frozen=True)
class Filter:
    lowpass_scale: float
    bandpass_scales: tuple = ()


@dataclass(frozen=True, eq=False)
class FilterBank:
    """K composite filters ``g(lam) = h(alpha*lam) + sum_l b(beta_l*lam)``.

    Scales are stored as logarithms in ``log_scales`` of shape ``(K, 1 + L)``;
    column 0 holds ``log alpha`` and columns 1..L the band-pass ``log beta``.
    """

    log_scales: np.ndarray
    lowpass: FilterAtom = field(default_factory=ExpLowPass)
    bandpass: FilterAtom = field(default_factory=ExpBandPass)

    def __post_init__(self):
        s = np.array(self.log_scales, dtype=float, ndmin=2)
        if s.shape[0] < 1 or s.shape[1] < 1:
            raise ValueError("a filter bank needs K >= 1 filters")
        if not np.all(np.isfinite(s)):
            raise ValueError("filter scales must be finite and positive")
        s.setflags(write=False)
        object.__setattr__(self, "log_scales", s)

    @classmethod
    def from_scales(cls, lowpass, bandpass=None, **atoms) -> "FilterBank":
        lowpass = np.asarray(lowpass, dtype=float).reshape(-1)
        if bandpass is None:
            bandpass = np.zeros((len(lowpass), 0))
        bandpass = np.asarray(bandpass, dtype=float).reshape(len(lowpass), -1)
        scales = np.column_stack([lowpass, bandpass])
        if np.any(scales <= 0):
            raise ValueError("filter scales must be strictly positive")
        return cls(np.log(scales), **atoms)

    @classmethod
    def random(cls, num_filters: int, num_bandpass: int, rng: np.random.Generator,
               lowpass_range=(4.0, 6.0), bandpass_range=(0.1, 5.0)) -> "FilterBank":
        alpha = rng.uniform(*lowpass_range, size=num_filters)
        beta = rng.uniform(*bandpass_range, size=(num_filters, num_bandpass))
        return cls.from_scales(alpha, beta)

    @property
    def num_filters(self) -> int:
        return self.log_scales.shape[0]

    @property
    def num_bandpass(self) -> int:
        return self.log_scales.shape[1] - 1

    @property
    def num_params(self) -> int:
        return self.log_scales.size

    @property
    def filters(self) -> list:
        sc = np.exp(self.log_scales)
        return [Filter(float(row[0]), tuple(float(b) for b in row[1:])) for row in sc]

    def with_log_scales(self, log_scales) -> "FilterBank":
        return FilterBank(np.reshape(log_scales, self.log_scales.shape), self.lowpass, self.bandpass)

    def response(self, lam) -> np.ndarray:
        """``g_k(lam)`` for every filter; shape ``(len(lam), K)``."""
        lam = np.asarray(lam, dtype=float).reshape(-1, 1, 1)
        sc = np.exp(self.log_scales)[None]
        args = lam * sc
        out = self.lowpass(args[..., 0])
        if self.num_bandpass:
            out = out + self.bandpass(args[..., 1:]).sum(axis=-1)
        return out

    def response_grad(self, lam) -> np.ndarray:
        """Derivative of ``g_k(lam)`` w.r.t. each log-scale; shape ``(len(lam), K, 1 + L)``.

        ``d a(s*lam) / d log s = s * lam * a'(s*lam)``.
        """
        lam = np.asarray(lam, dtype=float).reshape(-1, 1, 1)
        sc = np.exp(self.log_scales)[None]
        args = lam * sc
        out = np.empty(args.shape)
        out[..., 0] = self.lowpass.derivative(args[..., 0])
        out[..., 1:] = self.bandpass.derivative(args[..., 1:])
        return out * args


def filter_response(flt: Filter, lam: float, lowpass: FilterAtom = None,
                    bandpass: FilterAtom = None) -> float:
    lowpass = lowpass or ExpLowPass()
    bandpass = bandpass or ExpBandPass()
    val = lowpass(flt.lowpass_scale * lam)
    for beta in flt.bandpass_scales:
        val = val + bandpass(beta * lam)
    return float(val)


# --------------------------------------------------------------------------
# Wavelet features
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class WaveletFeature:
    values: np.ndarray


def wavelet_features(graph: Graph, decomp: SpectralDecomposition, bank: FilterBank,
                     method: str = "spectral") -> WaveletFeature:
    """Norm of every node-feature column filtered by every filter of ``bank``.

    ``method="spectral"`` uses ``sqrt(sum_j g(lam_j)^2 xhat_j^2)``;
    ``method="spatial"`` forms ``U g(Lam) U^T x`` explicitly.
    """
    x = graph.node_features
    g = bank.response(decomp.eigenvalues)  # (N, K)
    if method == "spectral":
        xhat2 = graph_fourier_transform(decomp, x) ** 2
        w = np.sqrt(xhat2.T @ g**2)  # (D, K)
    elif method == "spatial":
        u = decomp.eigenvectors
        w = np.empty((x.shape[1], bank.num_filters))
        for k in range(bank.num_filters):
            op = (u * g[:, k]) @ u.T
            w[:, k] = np.linalg.norm(op @ x, axis=0)
    else:
        raise ValueError(f"unknown method {method!r}")
    return WaveletFeature(values=w.ravel())


def wavelet_feature_gradient(graph: Graph, decomp: SpectralDecomposition, bank: FilterBank) -> np.ndarray:
    """Jacobian of :func:`wavelet_features` w.r.t. the bank's log-scales.

    Rows follow the feature layout (``d * K + k``); columns follow
    ``bank.log_scales.ravel()`` (``k * (1 + L) + p``).
    """
    xhat2 = graph_fourier_transform(decomp, graph.node_features) ** 2  # (N, D)
    g = bank.response(decomp.eigenvalues)  # (N, K)
    dg = bank.response_grad(decomp.eigenvalues)  # (N, K, P)
    w = np.sqrt(xhat2.T @ g**2)  # (D, K)
    num = np.einsum("nd,nk,nkp->dkp", xhat2, g, dg)
    safe = np.where(w < NORM_FLOOR, 1.0, w)
    jac_blocks = np.where((w < NORM_FLOOR)[..., None], 0.0, num / safe[..., None])
    d, k, p = jac_blocks.shape
    jac = np.zeros((d, k, k, p))
    idx = np.arange(k)
    jac[:, idx, idx, :] = jac_blocks
    return jac.reshape(d * k, k * p)


# --------------------------------------------------------------------------
# Batched evaluation over a dataset
# --------------------------------------------------------------------------


class SpectralBatch:
    """Eigenvalues and squared Fourier coefficients of many graphs, concatenated.

    Feature extraction for a whole dataset then reduces to a few vectorized
    operations, which matters because WT-GP recomputes features on every
    objective evaluation.
    """

    def __init__(self, eigenvalues: Sequence[np.ndarray], xhat2: Sequence[np.ndarray]):
        if len(eigenvalues) == 0:
            raise ValueError("empty batch")
        self.sizes = np.array([len(e) for e in eigenvalues])
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)[:-1]])
        self.eigenvalues = np.concatenate(eigenvalues)
        self.xhat2 = np.concatenate(xhat2, axis=0)
        self.owner = np.repeat(np.arange(len(self.sizes)), self.sizes)

    @classmethod
    def from_graphs(cls, graphs: Sequence[Graph], decomps: Sequence[SpectralDecomposition]) -> "SpectralBatch":
        evals = [d.eigenvalues for d in decomps]
        xhat2 = [graph_fourier_transform(d, g.node_features) ** 2 for g, d in zip(graphs, decomps)]
        return cls(evals, xhat2)

    def subset(self, indices) -> "SpectralBatch":
        indices = np.asarray(indices)
        evals = [self.eigenvalues[o:o + s] for o, s in zip(self.offsets[indices], self.sizes[indices])]
        xh = [self.xhat2[o:o + s] for o, s in zip(self.offsets[indices], self.sizes[indices])]
        return SpectralBatch(evals, xh)

    def __len__(self) -> int:
        return len(self.sizes)

    @property
    def num_dims(self) -> int:
        return self.xhat2.shape[1]

    def _segment_sum(self, arr: np.ndarray) -> np.ndarray:
        return np.add.reduceat(arr, self.offsets, axis=0)

    def fourier_features(self, num_eval_points: int) -> np.ndarray:
        points = evaluation_points(num_eval_points)
        bins = np.searchsorted(points, self.eigenvalues - EIGEN_TOL, side="left")
        hist = np.zeros((len(self), num_eval_points, self.num_dims))
        np.add.at(hist, (self.owner, bins), self.xhat2)
        prof = np.cumsum(hist, axis=1)  # (G, M, D)
        return prof.transpose(0, 2, 1).reshape(len(self), -1)

    def wavelet_features(self, bank: FilterBank) -> np.ndarray:
        g2 = bank.response(self.eigenvalues) ** 2  # (T, K)
        energy = self._segment_sum(self.xhat2[:, :, None] * g2[:, None, :])  # (G, D, K)
        return np.sqrt(energy).reshape(len(self), -1)

    def wavelet_vjp(self, bank: FilterBank, features: np.ndarray, grad_features: np.ndarray) -> np.ndarray:
        """Pull a gradient on the wavelet features back to the log-scales.

        ``features`` must be the output of :meth:`wavelet_features` for
        ``bank``; returns an array shaped like ``bank.log_scales``.
        """
        k = bank.num_filters
        w = features.reshape(len(self), self.num_dims, k)
        gw = grad_features.reshape(w.shape)
        ratio = np.where(w < NORM_FLOOR, 0.0, gw / np.where(w < NORM_FLOOR, 1.0, w))
        q = np.einsum("td,tdk->tk", self.xhat2, ratio[self.owner])
        g = bank.response(self.eigenvalues)
        dg = bank.response_grad(self.eigenvalues)
        return np.einsum("tk,tkp->kp", q * g, dg)
