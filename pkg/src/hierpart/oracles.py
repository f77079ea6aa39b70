"""Reference computations on tiny instances and the ``oracle-check`` suite.

The references here avoid the estimator code paths: they enumerate latent
assignments or permutations outright.
"""
import itertools
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import estimators, evaluation, inference, sampling
from . import tensor as T
from .geometry import prepare_graph
from .model import Model, ModelConfig


@dataclass
class TinyInstance:
    model: Model
    points: np.ndarray
    graph: object
    labels: np.ndarray


def tiny_instance(seed, m=4, num_latent=3, num_top=2, k_nn=2, widths=(6, 5), decoder_width=4, head=(5,)):
    """A small random model and cloud with non-trivial running statistics."""
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(
        num_top, num_latent, encoder_widths=widths, decoder_width=decoder_width, head_widths=head, k_nn=k_nn
    )
    model = Model.init(cfg, seed)
    for s in model.stats.values():
        s.mean = rng.normal(0.0, 0.3, s.mean.shape)
        s.var = rng.uniform(0.5, 2.0, s.var.shape)
    for name, p in model.params.items():
        if name.endswith((".gamma", ".beta", ".bias")):
            p.data = p.data + rng.normal(0.0, 0.3, p.shape)
    points = rng.normal(size=(m, 3))
    graph, _ = prepare_graph(points, k_nn)
    labels = rng.integers(num_top, size=m)
    return TinyInstance(model, points, graph, labels)


def exact_class_marginals(model, points, graph):
    """``p(y_i = k | x) = sum_c p(y_i = k | e_c, x) pi_i[c]`` in inference mode, (m, K)."""
    h, pi = model.encode(points, graph)
    c = model.config.num_latent_classes
    z = np.broadcast_to(np.eye(c)[:, None, :], (c, h.shape[0], c))
    probs = model.decode(h, z).data
    return np.einsum("cnk,nc->nk", probs, pi.data)


def joint_enumeration_marginals(model, points, graph, labels):
    """Per-point ``p(y_i | x)`` by summing over the full joint latent space."""
    h, pi = model.encode(points, graph)
    n, c = pi.shape
    out = np.zeros(n)
    for assign in itertools.product(range(c), repeat=n):
        assign = np.array(assign)
        weight = np.prod(pi.data[np.arange(n), assign])
        probs = model.decode(h, sampling.onehot(assign, c)).data
        out += weight * probs[np.arange(n), labels]
    return out


def block_cosines(a, b):
    out = {}
    for k in a:
        na, nb = np.linalg.norm(a[k]), np.linalg.norm(b[k])
        out[k] = float(np.vdot(a[k], b[k]) / (na * nb)) if na > 0 and nb > 0 else float(na == nb)
    return out


def reinforce_consistency(inst, num_samples, baseline, seed):
    """Cosine similarity per parameter between the averaged estimator and the exact gradient."""
    exact = estimators.exact_marginal_loss(inst.model, inst.points, inst.graph, inst.labels)
    est = estimators.loss_mc_reinforce(
        inst.model, inst.points, inst.graph, inst.labels, num_samples, baseline,
        np.random.default_rng(seed), training=False,
    )  # fmt: skip
    return block_cosines(est.grads, exact.grads)


def score_jacobians(model, points, graph):
    """``d log pi_i[c] / d phi`` for every point and class: name -> (m, C, *shape)."""
    params = model.encoder_parameters()
    _, pi = model.encode(points, graph)
    n, c = pi.shape
    out = {p.name: np.zeros((n, c) + p.shape) for p in params}
    for i in range(n):
        for k in range(c):
            sel = np.zeros((n, c))
            sel[i, k] = 1.0
            with T.Tape() as tape:
                _, pi2 = model.encode(points, graph)
                val = T.sum(T.mul(T.log(pi2), sel))
            g = tape.gradient(val, params)
            for name in out:
                out[name][i, k] = g[name]
    return out, pi.data


def control_variate_statistics(model, points, graph, num_draws, seed, baseline=1.0):
    """Mean and standard error of ``B * d log p(z|x) / d phi`` projected per block.

    Each block is reduced to two scalars per draw: its sum and its projection
    on a fixed random unit direction. Returns ``name -> (mean, se, scale)``
    where ``scale`` bounds the magnitude of either projection; statistics that
    vanish identically (the sum over softmax logits) have ``se`` at round-off
    level and are judged against ``scale`` instead.
    """
    jac, pi = score_jacobians(model, points, graph)
    rng = np.random.default_rng(seed)
    draws = sampling.sample_categorical(pi, num_draws, rng)
    n = pi.shape[0]
    result = {}
    for name, J in jac.items():
        flat = J.reshape(n, pi.shape[1], -1)
        u = rng.normal(size=flat.shape[2])
        u /= np.linalg.norm(u)
        dirs = np.stack([np.ones(flat.shape[2]), u], axis=1)
        proj = np.einsum("ncp,pd->ncd", flat, dirs)
        per_draw = baseline * proj[np.arange(n)[None, :], draws].sum(axis=1)
        mean = per_draw.mean(axis=0)
        se = per_draw.std(axis=0, ddof=1) / np.sqrt(num_draws)
        result[name] = (mean, se, abs(baseline) * np.abs(flat).sum(axis=2).max())
    return result


def control_variate_ok(stats, num_se=3.0):
    """``|mean| <= num_se * se`` per statistic, up to round-off of the score scale."""
    worst = 0.0
    for mean, se, scale in stats.values():
        slack = 1e-12 * scale
        worst = max(worst, float(np.max(np.maximum(np.abs(mean) - slack, 0.0) / np.maximum(se, slack))))
    return worst <= num_se, worst


def brute_force_agreement(table):
    table = np.asarray(table)
    rp, rt = table.shape
    n = max(rp, rt)
    padded = np.zeros((n, n), dtype=table.dtype)
    padded[:rp, :rt] = table
    return max(padded[np.arange(n), list(perm)].sum() for perm in itertools.permutations(range(n)))


def chi_square_pvalue(counts, probs):
    counts = np.asarray(counts, dtype=float)
    return stats.chisquare(counts, counts.sum() * np.asarray(probs)).pvalue


# --------------------------------------------------------------------------
# suite


def run_suite(seed=0):
    """Quick pass over the estimator and sampler invariants: (name, ok, detail)."""
    results = []
    rng = np.random.default_rng(seed)

    lower_ok = True
    for k in range(20):
        inst = tiny_instance(seed * 1000 + k)
        exact = exact_class_marginals(inst.model, inst.points, inst.graph)
        scores, _ = inference.infer_top_mpl(inst.model, inst.points, inst.graph)
        lower_ok &= bool(np.all(scores <= exact))
    results.append(("mpl lower bound", lower_ok, "20 instances"))

    inst = tiny_instance(seed)
    joint = joint_enumeration_marginals(inst.model, inst.points, inst.graph, inst.labels)
    exact = exact_class_marginals(inst.model, inst.points, inst.graph)[np.arange(4), inst.labels]
    err = float(np.abs(joint - exact).max())
    results.append(("exact marginal vs joint enumeration", err < 1e-12, f"max abs err {err:.2e}"))

    for b in (1.0, None):
        cos = reinforce_consistency(inst, 100_000, b, seed)
        worst = min(cos.values())
        results.append((f"reinforce consistency (B={b})", worst >= 0.99, f"min cosine {worst:.4f}"))

    cv = control_variate_statistics(inst.model, inst.points, inst.graph, 100_000, seed)
    ok, worst = control_variate_ok(cv)
    results.append(("control variate identity", ok, f"max |mean|/se {worst:.2f}"))

    noise = sampling.gumbel_noise((3, 4, 3), rng)
    report = T.finite_difference_check(
        lambda: estimators.pathwise_objective(inst.model, inst.points, inst.graph, inst.labels, 0.5, noise, training=False),
        inst.model.parameters(),
    )
    results.append(("pathwise finite differences", report.max_error <= 1e-5, f"max rel err {report.max_error:.2e}"))

    one = tiny_instance(seed, num_latent=1)
    a = estimators.loss_mpl_ste(one.model, one.points, one.graph, one.labels).loss
    b = estimators.loss_mc_reinforce(one.model, one.points, one.graph, one.labels, 3, 1.0, rng).loss
    c = estimators.loss_mc_pathwise(one.model, one.points, one.graph, one.labels, 3, 0.7, rng).loss
    d = estimators.exact_marginal_loss(one.model, one.points, one.graph, one.labels, training=True).loss
    spread = max(a, b, c, d) - min(a, b, c, d)
    results.append(("losses coincide at C=1", spread <= 1e-12, f"spread {spread:.1e}"))

    pi = np.array([[0.2, 0.3, 0.5]])
    draws = sampling.gumbel_max_sample(np.repeat(pi, 100_000, axis=0), rng)
    p = chi_square_pvalue(np.bincount(draws, minlength=3), pi[0])
    results.append(("gumbel-max chi-square", p > 0.001, f"p={p:.3f}"))

    ok = True
    for _ in range(100):
        table = rng.integers(0, 20, size=rng.integers(1, 6, size=2))
        ok &= evaluation.hungarian_match(table)[1] == brute_force_agreement(table)
    results.append(("hungarian vs permutations", bool(ok), "100 tables"))
    return results
