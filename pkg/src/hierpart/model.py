"""Encoder ``p(z | x)`` and latent-conditioned decoder ``p(y | z, x)``."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .geometry import DEFAULT_K_NN

ESTIMATORS = ("mpl-ste", "mc-reinforce", "mc-pathwise")


@dataclass
class ModelConfig:
    num_top_classes: int
    num_latent_classes: int
    encoder_widths: tuple = (64, 128, 128)
    decoder_width: int = 64
    head_widths: tuple = (64,)
    smoothing_layers: int = 1
    k_nn: int = DEFAULT_K_NN
    tau: float = 1.0
    num_samples: int = 5
    estimator: str = "mpl-ste"
    baseline: float | None = 1.0
    dtype: str = "float64"

    def __post_init__(self):
        self.encoder_widths = tuple(int(w) for w in self.encoder_widths)
        self.head_widths = tuple(int(w) for w in self.head_widths)
        if self.num_latent_classes < 1:
            raise ValueError(f"num_latent_classes must be >= 1, got {self.num_latent_classes}")
        if self.num_top_classes < 2:
            raise ValueError(f"num_top_classes must be >= 2, got {self.num_top_classes}")
        if self.num_samples < 1:
            raise ValueError(f"num_samples must be >= 1, got {self.num_samples}")
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.estimator!r}; expected one of {', '.join(ESTIMATORS)}")
        if not self.encoder_widths:
            raise ValueError("encoder needs at least one layer")
        if self.smoothing_layers < 0:
            raise ValueError("smoothing_layers must be >= 0")

    @property
    def feature_width(self):
        return self.encoder_widths[-1]

    def to_dict(self):
        d = asdict(self)
        d["encoder_widths"] = list(self.encoder_widths)
        d["head_widths"] = list(self.head_widths)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _glorot(rng, fan_in, fan_out, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


@dataclass
class Model:
    """Parameters, running statistics and the forward maps of both networks."""

    config: ModelConfig
    params: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)

    # ---- construction -----------------------------------------------------

    def _linear(self, rng, name, fan_in, fan_out, bias=True):
        dt = self.config.dtype
        self.params[f"{name}.weight"] = T.Parameter(f"{name}.weight", _glorot(rng, fan_in, fan_out), dtype=dt)
        if bias:
            self.params[f"{name}.bias"] = T.Parameter(f"{name}.bias", np.zeros(fan_out), dtype=dt)

    def _norm(self, name, width):
        dt = self.config.dtype
        self.params[f"{name}.gamma"] = T.Parameter(f"{name}.gamma", np.ones(width), dtype=dt)
        self.params[f"{name}.beta"] = T.Parameter(f"{name}.beta", np.zeros(width), dtype=dt)
        self.stats[name] = T.NormStats(np.zeros(width, dtype=dt), np.ones(width, dtype=dt))

    @classmethod
    def init(cls, config, seed):
        model = cls(config)
        rng = np.random.default_rng(seed)
        cfg = config
        width = 3
        for i, w in enumerate(cfg.encoder_widths):
            model._linear(rng, f"enc{i}", width, w)
            model._norm(f"enc{i}.bn", w)
            width = w
        fe = cfg.feature_width
        for k in range(cfg.smoothing_layers):
            model._linear(rng, f"smooth{k}", fe, fe, bias=False)
        model._linear(rng, "latent", fe, cfg.num_latent_classes)

        c, fd = cfg.num_latent_classes, cfg.decoder_width
        # C parallel maps fused column-wise; each block initialised on its own fans
        w = np.concatenate([_glorot(rng, fe, fd) for _ in range(c)], axis=1)
        model.params["parts.weight"] = T.Parameter("parts.weight", w, dtype=cfg.dtype)
        model.params["parts.bias"] = T.Parameter("parts.bias", np.zeros(c * fd), dtype=cfg.dtype)
        width = fd
        for i, w in enumerate(cfg.head_widths):
            model._linear(rng, f"head{i}", width, w)
            model._norm(f"head{i}.bn", w)
            width = w
        model._linear(rng, "out", width, cfg.num_top_classes)
        return model

    # ---- parameter views ----------------------------------------------------

    def parameters(self):
        return list(self.params.values())

    def encoder_parameters(self):
        return [p for n, p in self.params.items() if n.startswith(("enc", "smooth", "latent"))]

    def decoder_parameters(self):
        return [p for n, p in self.params.items() if n.startswith(("parts", "head", "out"))]

    def state_arrays(self):
        params = {n: p.data for n, p in self.params.items()}
        buffers = {}
        for n, s in self.stats.items():
            buffers[f"{n}.running_mean"] = s.mean
            buffers[f"{n}.running_var"] = s.var
        return params, buffers

    def load_arrays(self, params, buffers):
        for n, p in self.params.items():
            if n not in params or params[n].shape != p.shape:
                raise T.CheckpointError(f"parameter {n}: missing or wrong shape")
            p.data = np.array(params[n], dtype=p.data.dtype)
            p.m = np.zeros_like(p.data)
            p.v = np.zeros_like(p.data)
        for n, s in self.stats.items():
            s.mean = np.array(buffers[f"{n}.running_mean"], dtype=s.mean.dtype)
            s.var = np.array(buffers[f"{n}.running_var"], dtype=s.var.dtype)

    def save(self, path, extra=None):
        params, buffers = self.state_arrays()
        meta = {"config": self.config.to_dict()}
        if extra:
            meta.update(extra)
        T.save_checkpoint(path, params, buffers, meta)

    @classmethod
    def load(cls, path):
        params, buffers, meta = T.load_checkpoint(path)
        cfg = ModelConfig.from_dict(meta["config"])
        model = cls.init(cfg, 0)
        model.load_arrays(params, buffers)
        return model, meta

    # ---- forward maps -------------------------------------------------------

    def _dense(self, h, name):
        out = T.matmul(h, self.params[f"{name}.weight"])
        if f"{name}.bias" in self.params:
            out = T.add(out, self.params[f"{name}.bias"])
        return out

    def _block(self, h, name, training):
        h = self._dense(h, name)
        p = self.params
        h = T.batch_norm(h, p[f"{name}.bn.gamma"], p[f"{name}.bn.beta"], self.stats[f"{name}.bn"], training)
        return T.relu(h)

    def encode(self, points, graph, training=False):
        """Per-point features ``h_e`` (n, F_e) and latent distribution (n, C)."""
        cfg = self.config
        x = T.as_tensor(np.asarray(points, dtype=cfg.dtype))
        if x.ndim != 2 or x.shape[1] != 3:
            raise T.ShapeError(f"encode: points must be (n, 3), got {x.shape}")
        if graph.weights is None or graph.indices.shape[0] != x.shape[0]:
            raise T.ShapeError(
                f"encode: graph with weights for {x.shape[0]} points required, "
                f"got indices {graph.indices.shape}"
            )
        h = x
        for i in range(len(cfg.encoder_widths)):
            h = self._block(h, f"enc{i}", training)
        s = h
        for k in range(cfg.smoothing_layers):
            s = T.matmul(T.neighbor_smooth(s, graph.indices, graph.weights), self.params[f"smooth{k}.weight"])
        probs = T.softmax(self._dense(s, "latent"))
        return h, probs

    def part_features(self, features):
        """The (n, C, F_d) stack of per-class representations ``H_i``."""
        cfg = self.config
        flat = self._dense(features, "parts")
        return T.reshape(flat, (features.shape[0], cfg.num_latent_classes, cfg.decoder_width))

    def decode(self, features, sample, training=False, parts=None):
        """Top-level class distribution given latent samples.

        ``sample`` holds one-hot or relaxed rows, shape (n, C) or (L, n, C);
        the output is (n, K) or (L, n, K) accordingly. ``parts`` may carry a
        precomputed :meth:`part_features` result.
        """
        cfg = self.config
        z = T.as_tensor(sample)
        if z.shape[-1] != cfg.num_latent_classes:
            raise T.ShapeError(
                f"decode: sample has {z.shape[-1]} latent classes, model expects {cfg.num_latent_classes}"
            )
        hp = self.part_features(features) if parts is None else parts
        hd = T.select_columns(hp, z)
        lead = hd.shape[:-1]
        if hd.ndim == 3:
            hd = T.reshape(hd, (-1, cfg.decoder_width))
        h = hd
        for i in range(len(cfg.head_widths)):
            h = self._block(h, f"head{i}", training)
        probs = T.softmax(self._dense(h, "out"))
        if len(lead) == 2:
            probs = T.reshape(probs, lead + (cfg.num_top_classes,))
        return probs


def init_params(config, seed):
    return Model.init(config, seed)
