"""Draws from per-point latent categoricals.

Distributions are ``(m, C)`` arrays with rows on the simplex. Hard samples
come back as integer indices (use :func:`onehot` for the matrix form);
relaxed samples are tensors so gradients reach the encoder.
"""
import numpy as np

from . import kernels
from . import tensor as T

U_CLAMP = 1e-12


def onehot(indices, num_classes):
    indices = np.asarray(indices)
    out = np.zeros(indices.shape + (num_classes,))
    np.put_along_axis(out, indices[..., None], 1.0, axis=-1)
    return out


def argmax_onehot(probs):
    """One-hot of the row-wise maximum; ties go to the lowest index."""
    probs = np.asarray(probs)
    return onehot(np.argmax(probs, axis=-1), probs.shape[-1])


def sample_categorical(probs, num_samples, rng):
    """``num_samples`` independent draws per row, shape ``(L, m)``."""
    if num_samples < 1:
        raise ValueError(f"sample count must be >= 1, got {num_samples}")
    probs = np.asarray(probs, dtype=np.float64)
    cdf = np.cumsum(probs, axis=1)
    u = rng.random((num_samples, probs.shape[0]))
    return kernels.categorical_draw(cdf, u)


def gumbel_noise(shape, rng):
    u = np.clip(rng.random(shape), U_CLAMP, 1.0 - U_CLAMP)
    return -np.log(-np.log(u))


def gumbel_max_sample(probs, rng=None, noise=None):
    """Indices ``argmax(log pi + eps)``; pass ``noise`` to fix ``eps``."""
    probs = np.asarray(probs, dtype=np.float64)
    if noise is None:
        noise = gumbel_noise(probs.shape, rng)
    return np.argmax(np.log(np.maximum(probs, T.LOG_FLOOR)) + noise, axis=-1)


def gumbel_softmax_sample(probs, tau, rng=None, noise=None):
    """Relaxed sample ``softmax((log pi + eps) / tau)`` as a tensor.

    ``probs`` may be a tensor of shape ``(m, C)``; ``noise`` may carry a
    leading sample axis ``(L, m, C)``, in which case the result does too.
    """
    if not tau > 0:
        raise ValueError(f"temperature must be > 0, got {tau}")
    probs = T.as_tensor(probs)
    if noise is None:
        noise = gumbel_noise(probs.shape, rng)
    return T.softmax(T.mul(T.add(T.log(probs), noise), 1.0 / tau))
