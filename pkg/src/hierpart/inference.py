"""Label prediction at the middle (latent) and top levels.

All functions run the networks in inference mode, so feature
standardization uses running statistics and each point is decoded
independently of the others.
"""
import numpy as np

from . import sampling

INFERENCE_MODES = ("mpl", "mc")


def default_mode(estimator):
    return "mpl" if estimator == "mpl-ste" else "mc"


def infer_middle(model, points, graph):
    """Zero-based latent label per point (argmax, lowest index on ties)."""
    _, pi = model.encode(points, graph)
    return np.argmax(pi.data, axis=1)


def infer_top_mpl(model, points, graph):
    """Lower-bound scores ``p(y | z*, x) * pi[z*]`` and their argmax.

    The scores are not normalised.
    """
    h, pi = model.encode(points, graph)
    zstar = np.argmax(pi.data, axis=1)
    probs = model.decode(h, sampling.onehot(zstar, pi.shape[1])).data
    scores = probs * pi.data[np.arange(len(zstar)), zstar][:, None]
    return scores, np.argmax(scores, axis=1)


def infer_top_mc(model, points, graph, num_samples, rng, chunk=256):
    """Average of decoder outputs over ``num_samples`` categorical draws."""
    if num_samples < 1:
        raise ValueError(f"sample count must be >= 1, got {num_samples}")
    h, pi = model.encode(points, graph)
    parts = model.part_features(h)
    c = pi.shape[1]
    draws = sampling.sample_categorical(pi.data, num_samples, rng)
    total = np.zeros((pi.shape[0], model.config.num_top_classes))
    for start in range(0, num_samples, chunk):
        z = sampling.onehot(draws[start : start + chunk], c)
        total += model.decode(h, z, parts=parts).data.sum(axis=0)
    probs = total / num_samples
    return probs, np.argmax(probs, axis=1)


def infer_top(model, points, graph, mode, num_samples=100, rng=None):
    if mode == "mpl":
        return infer_top_mpl(model, points, graph)
    if mode == "mc":
        return infer_top_mc(model, points, graph, num_samples, rng)
    raise ValueError(f"unknown inference mode {mode!r}; expected one of {', '.join(INFERENCE_MODES)}")


def write_labels(path, top, mid):
    """``lbl v1`` file; labels are written one-based."""
    top, mid = np.asarray(top), np.asarray(mid)
    if top.shape != mid.shape or top.ndim != 1:
        raise ValueError("top and middle label arrays must be 1-d and equally long")
    with open(path, "w") as fh:
        fh.write(f"lbl v1 {len(top)}\n")
        for a, b in zip(top, mid):
            fh.write(f"{int(a) + 1} {int(b) + 1}\n")


def read_labels(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError(f"{path}:1: empty label file")
    head = lines[0].split()
    if len(head) != 3 or head[:2] != ["lbl", "v1"]:
        raise ValueError(f"{path}:1: expected header 'lbl v1 <m>'")
    m = int(head[2])
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != m:
        raise ValueError(f"{path}: header declares {m} rows, found {len(body)}")
    arr = np.array([[int(t) for t in ln.split()] for ln in body], dtype=np.int64).reshape(m, 2)
    return arr[:, 0] - 1, arr[:, 1] - 1
