import numpy as np
import pytest

from dyingrelu.probe import BlobSpec, Mlp, MlpConfig, build, gradient_check, train_and_probe


def small_config(**kw):
    base = dict(layer_sizes=(4, 6, 5, 3), epochs=5, batch_size=16, seed=1,
                dataset=BlobSpec(classes=3, per_class=40, dim=4))
    base.update(kw)
    return MlpConfig(**base)


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(layer_sizes=(4,)), dict(layer_sizes=(5, 6, 3)), dict(layer_sizes=(4, 6, 2)),
                                    dict(eta=0.0), dict(epochs=-1), dict(dead_layer=2)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            small_config(**kw)

    def test_round_trip(self):
        cfg = small_config(dead_layer=1)
        assert MlpConfig.from_dict(cfg.to_dict()) == cfg

    def test_probe_needs_hidden_layer(self):
        with pytest.raises(ValueError):
            train_and_probe(small_config(layer_sizes=(4, 3)))


class TestTrainAndProbe:
    def test_zero_epochs(self):
        res = train_and_probe(small_config(epochs=0))
        assert res.activation.shape == (0, 2)
        assert res.loss.shape == (1,)

    def test_dead_layer(self):
        res = train_and_probe(small_config(dead_layer=0, epochs=10))
        assert res.initial_activation[0] == 0.0
        assert np.all(res.activation[:, 0] < 0.01)

    def test_default_run(self):
        cfg = MlpConfig()
        a, b = train_and_probe(cfg), train_and_probe(cfg)
        assert a.activation.shape == (50, 3)
        assert np.all((a.activation >= 0) & (a.activation <= 1))
        assert a.activation.tobytes() == b.activation.tobytes()
        assert a.loss.tobytes() == b.loss.tobytes()
        assert not a.diverged
        assert a.loss[-1] < a.loss[0]

    def test_seed_matters(self):
        a = train_and_probe(small_config(seed=1))
        b = train_and_probe(small_config(seed=2))
        assert not np.array_equal(a.activation, b.activation)

    def test_loss_mostly_nonincreasing(self):
        res = train_and_probe(MlpConfig(eta=0.02, epochs=30))
        assert np.all(np.diff(res.loss) <= 1e-2 * res.loss[0])

    def test_divergence_reported(self):
        res = train_and_probe(small_config(eta=50.0, epochs=20))
        assert res.diverged
        assert "diverged" in res.diagnostic
        assert res.activation.shape[0] == res.loss.size - 1

    def test_csv(self, tmp_path):
        res = train_and_probe(small_config(epochs=2))
        res.write_activation_csv(tmp_path / "a.csv")
        res.write_loss_csv(tmp_path / "l.csv")
        act = (tmp_path / "a.csv").read_text().splitlines()
        assert act[0] == "epoch,layer,activation_prob" and len(act) == 1 + 2 * 2
        loss = (tmp_path / "l.csv").read_text().splitlines()
        assert loss[0] == "epoch,loss" and len(loss) == 1 + 3


class TestGradientCheck:
    def test_linear_network(self):
        res = gradient_check(small_config(layer_sizes=(4, 3)))
        assert res.max_rel_error < 1e-7
        assert res.checked == 4 * 3 + 3 and not res.excluded

    def test_relu_network(self):
        res = gradient_check(small_config())
        assert res.max_rel_error < 1e-5
        assert res.checked > 0.9 * sum(p.size for p in build(small_config())[2].params)

    def test_default_network(self):
        assert gradient_check(MlpConfig(layer_sizes=(10, 8, 8, 2), batch_size=8)).max_rel_error < 1e-5

    def test_kink_is_excluded_not_failed(self):
        cfg = small_config()
        X, y, net, _ = build(cfg)
        Xb = X[:8].copy()
        Xb[0] = 0.0  # zero input with zero biases: every first-layer unit sits at y = 0
        res = gradient_check(cfg, net=net, batch=(Xb, y[:8]))
        first_bias = 1
        assert {(first_bias, i) for i in range(6)} <= set(res.excluded)
        assert res.max_rel_error < 1e-5


def test_backprop_matches_manual_two_layer():
    rng = np.random.default_rng(0)
    W1, b1 = rng.normal(size=(3, 4)), rng.normal(size=4)
    W2, b2 = rng.normal(size=(4, 2)), rng.normal(size=2)
    net = Mlp([W1, W2], [b1, b2])
    X, y = rng.normal(size=(5, 3)), np.array([0, 1, 1, 0, 1])
    loss, grads = net.gradients(X, y)
    z = X @ W1 + b1
    h = np.maximum(z, 0)
    logits = h @ W2 + b2
    p = np.exp(logits - logits.max(1, keepdims=True))
    p /= p.sum(1, keepdims=True)
    assert loss == pytest.approx(-np.mean(np.log(p[np.arange(5), y])))
    g = p.copy()
    g[np.arange(5), y] -= 1
    g /= 5
    np.testing.assert_allclose(grads[2], h.T @ g)
    np.testing.assert_allclose(grads[0], X.T @ ((g @ W2.T) * (z > 0)))
