"""Graph-level fit/predict for FT-GP and WT-GP."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from specgraph.config import ExperimentConfig
from specgraph.features import FilterBank, SpectralBatch
from specgraph.gp import Prediction, TrainedModel, fit, fit_wavelet, predict
from specgraph.graph import Graph, decompose


def spectra_for(graphs: Sequence[Graph]) -> SpectralBatch:
    decomps = [decompose(g, graph_index=i) for i, g in enumerate(graphs)]
    return SpectralBatch.from_graphs(graphs, decomps)


def initial_bank(config: ExperimentConfig, seed: int) -> FilterBank:
    rng = np.random.default_rng(seed)
    return FilterBank.random(config.num_filters, config.num_bandpass, rng,
                             config.lowpass_init, config.bandpass_init)


def model_features(model: TrainedModel, spectra: SpectralBatch) -> np.ndarray:
    if model.feature_kind == "ft":
        return spectra.fourier_features(model.num_eval_points)
    if model.feature_kind == "wt":
        return spectra.wavelet_features(model.bank)
    raise ValueError(f"model was trained on raw features ({model.feature_kind!r})")


def fit_model(spectra: SpectralBatch, labels, config: ExperimentConfig, seed: Optional[int] = None,
              num_classes: Optional[int] = None) -> TrainedModel:
    """Train FT-GP or WT-GP (per ``config.model``) on a batch of graph spectra."""
    seed = config.seed if seed is None else seed
    gp_cfg = config.gp_config(seed)
    if config.model == "ft":
        x = spectra.fourier_features(config.num_eval_points)
        return fit(x, labels, gp_cfg, num_classes, feature_kind="ft",
                   num_eval_points=config.num_eval_points)
    return fit_wavelet(spectra, labels, initial_bank(config, seed), gp_cfg, num_classes)


def predict_model(model: TrainedModel, spectra: SpectralBatch) -> Prediction:
    return predict(model, model_features(model, spectra))


def fit_graphs(graphs: Sequence[Graph], labels, config: ExperimentConfig, **kw) -> TrainedModel:
    return fit_model(spectra_for(graphs), labels, config, **kw)


def predict_graphs(model: TrainedModel, graphs: Sequence[Graph]) -> Prediction:
    return predict_model(model, spectra_for(graphs))
