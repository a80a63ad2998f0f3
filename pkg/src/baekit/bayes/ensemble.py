"""Anchored ensembling.

Each member is trained independently on the full training set with its weights
pulled towards its own anchor ``theta_anc ~ N(0, prior_variance)`` instead of
towards zero. The spread of anchors over members turns the ensemble into a
sample from an approximate posterior.
"""

from __future__ import annotations

import numpy as np

from baekit.autoencoder import ArchitectureSpec, AutoencoderModel, build
from baekit.bayes import InferenceMethod, PosteriorEnsemble, TrainConfig, register
from baekit.bayes._fit import fit, reconstruction_loss
from baekit.nn.layers import ParameterError
from baekit.nn.rng import RngStream

Params = dict[str, np.ndarray]


def draw_anchor(model: AutoencoderModel, prior_variance: float, rng: RngStream) -> Params:
    """Anchor for every linear weight matrix, drawn from the isotropic prior."""
    gen = rng.generator()
    scale = np.sqrt(prior_variance)
    return {
        name: gen.normal(0.0, scale, size=model.params[name].shape)
        for name in model.weight_names()
    }


def train_member(
    spec: ArchitectureSpec, data: np.ndarray, cfg: TrainConfig, rng: RngStream
) -> tuple[Params, Params, list[float]]:
    """One anchored member; returns ``(params, anchor, loss_history)``."""
    model = build(spec, rng.child(0))
    anchor = draw_anchor(model, cfg.prior_variance, rng.child(1))
    history = fit(
        model.params,
        reconstruction_loss(model, cfg),
        data,
        cfg,
        rng.child(2),
        anchor=anchor,
        decay_names=frozenset(anchor),
    )
    return model.params, anchor, history


def train_anchored_ensemble(
    spec: ArchitectureSpec, data: np.ndarray, cfg: TrainConfig, rng: RngStream
) -> PosteriorEnsemble:
    n_members = cfg.n_samples
    if n_members < 1:
        raise ParameterError(f"an ensemble needs at least one member, got M={n_members}")
    members: list[Params] = []
    anchors: list[Params] = []
    losses: list[list[float]] = []
    # member m always trains on stream child(m), so results do not depend on M
    for m in range(n_members):
        params, anchor, history = train_member(spec, data, cfg, rng.child(m))
        members.append(params)
        anchors.append(anchor)
        losses.append(history)
    return PosteriorEnsemble(
        method=InferenceMethod.ENSEMBLE,
        spec=spec,
        members=members,
        n_samples=n_members,
        seed=rng.seed,
        prior_variance=cfg.prior_variance,
        anchors=anchors,
        train_losses=losses,
    )


register(InferenceMethod.ENSEMBLE, train_anchored_ensemble)
