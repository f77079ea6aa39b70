"""Training losses and their gradient estimators.

Every loss is the negative log-likelihood of the top-level labels averaged
over points. They differ in how the sum over latent assignments is
approximated and how gradients reach the encoder:

* ``mpl-ste``: most probable latent, straight-through gradient into the
  selected probability.
* ``mc-reinforce``: Monte Carlo average over categorical draws, score-function
  gradient for the encoder with a constant baseline.
* ``mc-pathwise``: Monte Carlo average over Gumbel-softmax relaxed draws,
  plain backpropagation through the relaxation.

:func:`exact_marginal_loss` enumerates the latent classes per point and is
used as the reference in tests.
"""
from dataclasses import dataclass, field

import numpy as np

from . import sampling
from . import tensor as T

ZHAT_FLOOR = 1e-12
EXACT_MAX_CLASSES = 8
EXACT_MAX_POINTS = 16


@dataclass
class LossReport:
    loss: float
    grads: dict
    aux: dict = field(default_factory=dict)


def _labels(labels, n, num_classes):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise T.ShapeError(f"expected {n} labels, got shape {labels.shape}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= num_classes:
        raise ValueError(f"labels must lie in [0, {num_classes})")
    return labels


def _pick_samples(probs, labels):
    """(L, n, K) class distributions -> (L, n) probability of each label."""
    n_draws, n, k = probs.shape
    flat = T.pick(T.reshape(probs, (n_draws * n, k)), np.tile(labels, n_draws))
    return T.reshape(flat, (n_draws, n))


def _report(tape, objective, model, loss_value, aux):
    try:
        return LossReport(loss_value, tape.gradient(objective, model.parameters()), aux)
    finally:
        tape.release()


# --------------------------------------------------------------------------
# most probable latent + straight-through


def mpl_ste_objective(model, points, graph, labels, training=True):
    h, pi = model.encode(points, graph, training)
    labels = _labels(labels, h.shape[0], model.config.num_top_classes)
    zstar = np.argmax(pi.data, axis=1)
    z = T.straight_through(sampling.onehot(zstar, pi.shape[1]), pi)
    probs = model.decode(h, z, training)
    ll = T.add(T.log(T.pick(probs, labels)), T.log(T.pick(pi, zstar)))
    return T.neg(T.mean(ll))


def loss_mpl_ste(model, points, graph, labels, training=True):
    with T.Tape() as tape:
        loss = mpl_ste_objective(model, points, graph, labels, training)
    return _report(tape, loss, model, loss.item(), {})


# --------------------------------------------------------------------------
# Monte Carlo + REINFORCE


def loss_mc_reinforce(model, points, graph, labels, num_samples, baseline, rng, training=True):
    """Score-function estimator; ``baseline=None`` disables the control variate."""
    b = 0.0 if baseline is None else float(baseline)
    with T.Tape() as tape:
        h, pi = model.encode(points, graph, training)
        n, c = pi.shape
        labels = _labels(labels, n, model.config.num_top_classes)
        draws = sampling.sample_categorical(pi.data, num_samples, rng)
        z = sampling.onehot(draws, c)
        p = _pick_samples(model.decode(h, z, training), labels)

        zhat = p.data.mean(axis=0)
        clamped = zhat < ZHAT_FLOOR
        zhat = np.maximum(zhat, ZHAT_FLOOR)
        scale = -1.0 / (n * num_samples * zhat)
        # decoder (and shared trunk): -(1 / (Z L)) sum_l dp_l
        dec_coef = np.broadcast_to(scale, p.shape)
        # encoder: -(1 / (Z L)) sum_l dlog pi(z_l) * (p_l - B)
        enc_coef = np.einsum("ln,lnc->nc", (p.data - b) * scale, z)
        objective = T.add(T.sum(T.mul(p, dec_coef)), T.sum(T.mul(T.log(pi), enc_coef)))
    loss = float(-np.mean(np.log(zhat)))
    aux = {
        "zhat_mean": float(zhat.mean()),
        "clamp_count": int(clamped.sum()),
        "rewards": p.data / zhat,
    }
    return _report(tape, objective, model, loss, aux)


# --------------------------------------------------------------------------
# Monte Carlo + Gumbel-softmax pathwise


def pathwise_objective(model, points, graph, labels, tau, noise, training=True):
    """Relaxed MC loss for fixed Gumbel ``noise`` of shape (L, n, C)."""
    h, pi = model.encode(points, graph, training)
    labels = _labels(labels, h.shape[0], model.config.num_top_classes)
    z = sampling.gumbel_softmax_sample(pi, tau, noise=noise)
    p = _pick_samples(model.decode(h, z, training), labels)
    return T.neg(T.mean(T.log(T.mean(p, axis=0))))


def loss_mc_pathwise(model, points, graph, labels, num_samples, tau, rng, training=True, noise=None):
    if not tau > 0:
        raise ValueError(f"temperature must be > 0, got {tau}")
    n = np.asarray(points).shape[0]
    if noise is None:
        noise = sampling.gumbel_noise((num_samples, n, model.config.num_latent_classes), rng)
    with T.Tape() as tape:
        loss = pathwise_objective(model, points, graph, labels, tau, noise, training)
    return _report(tape, loss, model, loss.item(), {})


# --------------------------------------------------------------------------
# exact enumeration


def class_likelihoods(model, features, labels, training=False):
    """(C, n) tensor of ``p(y_i | z_i = c, x)`` for every latent class ``c``."""
    c = model.config.num_latent_classes
    n = features.shape[0]
    z = np.broadcast_to(np.eye(c)[:, None, :], (c, n, c))
    return _pick_samples(model.decode(features, z, training), labels)


def exact_marginal_objective(model, points, graph, labels, training=False):
    cfg = model.config
    n = np.asarray(points).shape[0]
    if cfg.num_latent_classes > EXACT_MAX_CLASSES or n > EXACT_MAX_POINTS:
        raise ValueError(
            f"exact enumeration limited to C <= {EXACT_MAX_CLASSES} and m <= {EXACT_MAX_POINTS} "
            f"(got C={cfg.num_latent_classes}, m={n})"
        )
    h, pi = model.encode(points, graph, training)
    labels = _labels(labels, n, cfg.num_top_classes)
    marginal = T.sum(T.mul(class_likelihoods(model, h, labels, training), T.transpose(pi)), axis=0)
    return T.neg(T.mean(T.log(marginal))), marginal


def exact_marginal_loss(model, points, graph, labels, training=False):
    with T.Tape() as tape:
        loss, marginal = exact_marginal_objective(model, points, graph, labels, training)
    return _report(tape, loss, model, loss.item(), {"marginal": marginal.data})


def compute_loss(model, points, graph, labels, rng, training=True):
    """Dispatch on ``model.config.estimator``."""
    cfg = model.config
    if cfg.estimator == "mpl-ste":
        return loss_mpl_ste(model, points, graph, labels, training)
    if cfg.estimator == "mc-reinforce":
        return loss_mc_reinforce(model, points, graph, labels, cfg.num_samples, cfg.baseline, rng, training)
    if cfg.estimator == "mc-pathwise":
        return loss_mc_pathwise(model, points, graph, labels, cfg.num_samples, cfg.tau, rng, training)
    raise ValueError(f"unknown estimator {cfg.estimator!r}")
