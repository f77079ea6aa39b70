import numpy as np
import pytest

from hierpart import estimators as E
from hierpart import oracles, sampling
from hierpart import tensor as T


def tiny(seed=0, **kw):
    return oracles.tiny_instance(seed, **kw)


def _set(model, name, value):
    model.params[name].data = np.broadcast_to(value, model.params[name].shape).astype(float).copy()


def _onehot_encoder(model, cls=0):
    """Latent distribution exactly one-hot at ``cls`` for every point."""
    _set(model, "latent.weight", 0.0)
    bias = np.zeros(model.config.num_latent_classes)
    bias[cls] = 1e3
    _set(model, "latent.bias", bias)


def test_mpl_loss_arithmetic():
    inst = tiny(1)
    _onehot_encoder(inst.model)
    _set(inst.model, "out.weight", 0.0)
    _set(inst.model, "out.bias", np.log([0.9, 0.1]))
    labels = np.zeros(4, dtype=int)
    rep = E.loss_mpl_ste(inst.model, inst.points, inst.graph, labels, training=False)
    assert rep.loss == pytest.approx(-np.log(0.9), abs=1e-12)
    assert rep.loss == pytest.approx(0.10536, abs=1e-5)


def test_mpl_loss_perfect_fit_is_zero():
    inst = tiny(2)
    _onehot_encoder(inst.model)
    _set(inst.model, "out.weight", 0.0)
    _set(inst.model, "out.bias", [1e3, 0.0])
    rep = E.loss_mpl_ste(inst.model, inst.points, inst.graph, np.zeros(4, dtype=int), training=False)
    assert rep.loss == 0.0


def test_mpl_loss_matches_forward_definition():
    inst = tiny(3)
    m = inst.model
    h, pi = m.encode(inst.points, inst.graph)
    zs = pi.data.argmax(axis=1)
    p = m.decode(h, np.eye(3)[zs]).data[np.arange(4), inst.labels]
    expected = -np.mean(np.log(p * pi.data[np.arange(4), zs]))
    rep = E.loss_mpl_ste(m, inst.points, inst.graph, inst.labels, training=False)
    assert rep.loss == pytest.approx(expected, rel=1e-13)


@pytest.mark.parametrize("seed", range(5))
def test_mpl_decoder_gradient_matches_finite_differences(seed):
    inst = tiny(seed)
    names = [p.name for p in inst.model.decoder_parameters()]
    rep = T.finite_difference_check(
        lambda: E.mpl_ste_objective(inst.model, inst.points, inst.graph, inst.labels, training=False),
        inst.model.parameters(),
        names=names,
    )
    assert rep.max_error <= 1e-5


def test_reports_cover_every_parameter():
    inst = tiny(4)
    rng = np.random.default_rng(0)
    for rep in (
        E.loss_mpl_ste(inst.model, inst.points, inst.graph, inst.labels),
        E.loss_mc_reinforce(inst.model, inst.points, inst.graph, inst.labels, 3, 1.0, rng),
        E.loss_mc_pathwise(inst.model, inst.points, inst.graph, inst.labels, 3, 0.5, rng),
        E.exact_marginal_loss(inst.model, inst.points, inst.graph, inst.labels),
    ):
        assert set(rep.grads) == set(inst.model.params)
        assert rep.loss >= 0


def test_reinforce_single_sample_encoder_coefficient():
    inst = tiny(5)
    m = inst.model
    rep = E.loss_mc_reinforce(m, inst.points, inst.graph, inst.labels, 1, 1.0, np.random.default_rng(7), training=False)
    draws = sampling.sample_categorical(m.encode(inst.points, inst.graph)[1].data, 1, np.random.default_rng(7))[0]
    h, _ = m.encode(inst.points, inst.graph)
    p = m.decode(h, np.eye(3)[draws]).data[np.arange(4), inst.labels]
    coef = -(p - 1.0) / p / 4  # e.g. p = 0.8 gives -(-0.25) per point before averaging
    jac, _ = oracles.score_jacobians(m, inst.points, inst.graph)
    for name in ("latent.weight", "latent.bias", "smooth0.weight"):
        expected = np.einsum("n,n...->...", coef, jac[name][np.arange(4), draws])
        np.testing.assert_allclose(rep.grads[name], expected, rtol=1e-10, atol=1e-14)


def test_reinforce_coefficient_example():
    p = 0.8
    assert (p - 1.0) / p == pytest.approx(-0.25)


def test_reinforce_degenerate_matches_mpl_decoder():
    inst = tiny(6)
    _onehot_encoder(inst.model, 2)
    args = (inst.model, inst.points, inst.graph, inst.labels)
    rf = E.loss_mc_reinforce(*args, 4, 1.0, np.random.default_rng(0), training=False)
    mpl = E.loss_mpl_ste(*args, training=False)
    assert rf.loss == pytest.approx(mpl.loss, abs=1e-12)
    for p in inst.model.decoder_parameters():
        np.testing.assert_allclose(rf.grads[p.name], mpl.grads[p.name], rtol=1e-10, atol=1e-15)


def test_reinforce_no_baseline_differs():
    inst = tiny(7)
    args = (inst.model, inst.points, inst.graph, inst.labels, 3)
    a = E.loss_mc_reinforce(*args, 1.0, np.random.default_rng(0))
    b = E.loss_mc_reinforce(*args, None, np.random.default_rng(0))
    assert a.loss == b.loss
    assert not np.allclose(a.grads["latent.bias"], b.grads["latent.bias"])


def test_reinforce_reports_clamps():
    inst = tiny(8)
    _set(inst.model, "out.weight", 0.0)
    _set(inst.model, "out.bias", [1e3, -1e3])
    rep = E.loss_mc_reinforce(inst.model, inst.points, inst.graph, np.ones(4, dtype=int), 2, 1.0,
                              np.random.default_rng(0))  # fmt: skip
    assert rep.aux["clamp_count"] == 4
    assert np.isfinite(rep.loss)
    assert all(np.all(np.isfinite(g)) for g in rep.grads.values())


@pytest.mark.parametrize("seed", range(5))
def test_pathwise_gradient_matches_finite_differences(seed):
    inst = tiny(seed)
    noise = sampling.gumbel_noise((3, 4, 3), np.random.default_rng(seed))
    rep = T.finite_difference_check(
        lambda: E.pathwise_objective(inst.model, inst.points, inst.graph, inst.labels, 0.5, noise, training=False),
        inst.model.parameters(),
    )
    assert rep.max_error <= 1e-5


def test_pathwise_low_temperature_approaches_hard_samples():
    inst = tiny(9)
    m = inst.model
    noise = sampling.gumbel_noise((8, 4, 3), np.random.default_rng(1))
    relaxed = E.loss_mc_pathwise(m, inst.points, inst.graph, inst.labels, 8, 0.001, None, training=False, noise=noise)
    h, pi = m.encode(inst.points, inst.graph)
    hard = sampling.gumbel_max_sample(np.broadcast_to(pi.data, noise.shape), noise=noise)
    p = m.decode(h, np.eye(3)[hard]).data[:, np.arange(4), inst.labels]
    assert abs(relaxed.loss - (-np.mean(np.log(p.mean(axis=0))))) <= 1e-2


def test_pathwise_single_class_ignores_noise_and_temperature():
    inst = tiny(10, num_latent=1)
    args = (inst.model, inst.points, inst.graph, inst.labels, 3)
    a = E.loss_mc_pathwise(*args, 0.1, np.random.default_rng(0))
    b = E.loss_mc_pathwise(*args, 10.0, np.random.default_rng(1))
    assert a.loss == b.loss
    for name in ("latent.weight", "latent.bias", "smooth0.weight"):
        assert np.all(a.grads[name] == 0.0)


def test_pathwise_rejects_bad_temperature():
    inst = tiny(0)
    with pytest.raises(ValueError, match="temperature"):
        E.loss_mc_pathwise(inst.model, inst.points, inst.graph, inst.labels, 2, -1.0, np.random.default_rng(0))


def test_exact_single_class_is_cross_entropy():
    inst = tiny(11, num_latent=1)
    h, _ = inst.model.encode(inst.points, inst.graph)
    p = inst.model.decode(h, np.ones((4, 1))).data[np.arange(4), inst.labels]
    rep = E.exact_marginal_loss(inst.model, inst.points, inst.graph, inst.labels)
    assert rep.loss == pytest.approx(-np.mean(np.log(p)), rel=1e-13)


def test_exact_half_half_example():
    inst = tiny(12, num_latent=2)
    m = inst.model
    _set(m, "latent.weight", 0.0)
    _set(m, "latent.bias", 0.0)

    def decode(features, sample, training=False, parts=None):
        # class 0 is certain under latent 0 and impossible under latent 1
        z = np.asarray(T.as_tensor(sample).data)
        return T.Tensor(np.stack([z[..., 0], z[..., 1]], axis=-1))

    m.decode = decode
    rep = E.exact_marginal_loss(m, inst.points, inst.graph, np.zeros(4, dtype=int))
    np.testing.assert_allclose(rep.aux["marginal"], 0.5)
    assert rep.loss == pytest.approx(np.log(2.0), rel=1e-14)


@pytest.mark.parametrize("seed", range(3))
def test_exact_matches_joint_enumeration(seed):
    inst = tiny(seed)
    joint = oracles.joint_enumeration_marginals(inst.model, inst.points, inst.graph, inst.labels)
    rep = E.exact_marginal_loss(inst.model, inst.points, inst.graph, inst.labels)
    np.testing.assert_allclose(rep.aux["marginal"], joint, rtol=1e-12)


def test_exact_guard():
    inst = tiny(0, m=20)
    with pytest.raises(ValueError, match="exact enumeration"):
        E.exact_marginal_loss(inst.model, inst.points, inst.graph, inst.labels)


def test_mpl_loss_bounds_exact_loss():
    for seed in range(100):
        inst = tiny(seed)
        args = (inst.model, inst.points, inst.graph, inst.labels)
        assert E.loss_mpl_ste(*args, training=False).loss >= E.exact_marginal_loss(*args).loss


def test_losses_coincide_for_single_class():
    inst = tiny(13, num_latent=1)
    args = (inst.model, inst.points, inst.graph, inst.labels)
    rng = np.random.default_rng(0)
    losses = [
        E.loss_mpl_ste(*args).loss,
        E.loss_mc_reinforce(*args, 3, 1.0, rng).loss,
        E.loss_mc_pathwise(*args, 3, 0.7, rng).loss,
        E.exact_marginal_loss(*args, training=True).loss,
    ]
    assert max(losses) - min(losses) <= 1e-12


def test_labels_out_of_range():
    inst = tiny(0)
    with pytest.raises(ValueError, match="labels"):
        E.loss_mpl_ste(inst.model, inst.points, inst.graph, np.array([0, 1, 2, 0]))


def test_label_count_mismatch():
    inst = tiny(0)
    with pytest.raises(T.ShapeError):
        E.loss_mpl_ste(inst.model, inst.points, inst.graph, np.array([0, 1]))
