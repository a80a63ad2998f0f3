"""Monte Carlo dropout: dropout stays on at prediction time."""

from __future__ import annotations

import numpy as np

from baekit.autoencoder import ArchitectureSpec, build
from baekit.bayes import InferenceMethod, PosteriorEnsemble, TrainConfig, register
from baekit.bayes._fit import fit, reconstruction_loss
from baekit.nn.layers import ParameterError
from baekit.nn.rng import RngStream


def train_mcd(
    spec: ArchitectureSpec, data: np.ndarray, cfg: TrainConfig, rng: RngStream
) -> PosteriorEnsemble:
    if cfg.dropout_rate <= 0.0:
        raise ParameterError(
            "MC dropout needs dropout_rate in (0, 1); with rate 0 it is the deterministic AE"
        )
    model = build(spec, rng.child(0))
    history = fit(
        model.params,
        reconstruction_loss(model, cfg, dropout=True),
        data,
        cfg,
        rng.child(1),
        decay_names=frozenset(model.weight_names()),
    )
    return PosteriorEnsemble(
        method=InferenceMethod.MCD,
        spec=spec,
        members=[model.params],
        n_samples=cfg.n_samples,
        seed=rng.seed,
        dropout_rate=cfg.dropout_rate,
        prior_variance=cfg.prior_variance,
        train_losses=[history],
    )


register(InferenceMethod.MCD, train_mcd)
