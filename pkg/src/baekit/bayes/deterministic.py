"""Deterministic autoencoder: MAP estimate under a Gaussian weight prior.

With coupled weight decay the objective is ``mean NLL + 0.5 * wd * ||W||^2``
over the linear weights, i.e. a MAP estimate under an isotropic Gaussian prior.
"""

from __future__ import annotations

import numpy as np

from baekit.autoencoder import ArchitectureSpec, AutoencoderModel, build
from baekit.bayes import InferenceMethod, PosteriorEnsemble, TrainConfig, register
from baekit.bayes._fit import fit, reconstruction_loss
from baekit.nn.layers import as_matrix
from baekit.nn.rng import RngStream


def train_map_with_history(
    spec: ArchitectureSpec, data: np.ndarray, cfg: TrainConfig, rng: RngStream
) -> tuple[AutoencoderModel, list[float]]:
    data = as_matrix(data, name="data")
    model = build(spec, rng.child(0))
    history = fit(
        model.params,
        reconstruction_loss(model, cfg),
        data,
        cfg,
        rng.child(1),
        decay_names=frozenset(model.weight_names()),
    )
    return model, history


def train_map(
    spec: ArchitectureSpec, data: np.ndarray, cfg: TrainConfig, rng: RngStream
) -> AutoencoderModel:
    """Train one autoencoder; ``epochs=0`` returns the initialisation."""
    return train_map_with_history(spec, data, cfg, rng)[0]


def _train(
    spec: ArchitectureSpec, data: np.ndarray, cfg: TrainConfig, rng: RngStream
) -> PosteriorEnsemble:
    model, history = train_map_with_history(spec, data, cfg, rng)
    return PosteriorEnsemble(
        method=InferenceMethod.AE,
        spec=spec,
        members=[model.params],
        n_samples=1,
        seed=rng.seed,
        prior_variance=cfg.prior_variance,
        train_losses=[history],
    )


register(InferenceMethod.AE, _train)
