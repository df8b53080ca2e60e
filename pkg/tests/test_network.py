import numpy as np
import pytest

from gradsight import network as N
from gradsight import tensor as T
from gradsight.network import Conv, FullyConnected, MaxPool, ReLU, Softmax
from gradsight.tensor import ConvKernel, PoolSpec, ShapeError

from oracles import batched_score_fd, random_network, rel_err


def _linear_net(rng, shape=(3, 4, 4), classes=5):
    d = int(np.prod(shape))
    fc = FullyConnected(rng.normal(size=(classes, d)), rng.normal(size=classes))
    return N.Network((fc,), np.zeros(shape))


class TestForward:
    def test_identity_fc(self, rng):
        net = N.Network((FullyConnected(np.eye(12), np.zeros(12)),), np.zeros((3, 2, 2)))
        x = rng.normal(size=(3, 2, 2))
        scores, trace = N.forward(net, x)
        np.testing.assert_array_equal(scores[0], x.reshape(-1))
        assert len(trace) == 1
        np.testing.assert_array_equal(trace.inputs[0][0], x)

    def test_bias_only(self, rng):
        b = rng.normal(size=4)
        net = N.Network((FullyConnected(rng.normal(size=(4, 8)), b),), np.zeros((2, 2, 2)))
        scores, _ = N.forward(net, np.zeros((2, 2, 2)))
        np.testing.assert_array_equal(scores[0], b)

    def test_composition_matches_tensor_ops(self, rng):
        k = ConvKernel(rng.normal(size=(2, 1, 3, 3)), rng.normal(size=2), 1, 1)
        w, b = rng.normal(size=(3, 2 * 3 * 3)), rng.normal(size=3)
        net = N.Network((Conv(k), ReLU(), MaxPool(PoolSpec((2, 2), 2)), FullyConnected(w, b)), np.zeros((1, 6, 6)))
        x = rng.normal(size=(1, 1, 6, 6))
        h, _ = T.maxpool_forward(T.relu_forward(T.conv_forward(x, k)), PoolSpec((2, 2), 2))
        expected = T.fc_forward(h, w, b).reshape(1, 3)
        np.testing.assert_array_equal(N.forward(net, x)[0], expected)

    def test_shape_mismatch(self, rng):
        net = _linear_net(rng)
        with pytest.raises(ShapeError):
            N.forward(net, np.zeros((3, 5, 5)))

    def test_softmax_is_bypassed_for_scores(self, rng):
        net = _linear_net(rng)
        with_sm = N.Network(net.layers + (Softmax(),), net.mean_image)
        x = rng.normal(size=net.input_shape)
        np.testing.assert_array_equal(N.forward(net, x)[0], N.forward(with_sm, x)[0])
        np.testing.assert_allclose(N.predict_proba(with_sm, x)[0].sum(), 1.0)

    def test_softmax_must_be_last(self, rng):
        fc = _linear_net(rng).layers[0]
        with pytest.raises(ValueError):
            N.Network((fc, Softmax(), ReLU()), np.zeros((3, 4, 4)))

    def test_deterministic(self, trained_net, small_dataset):
        x = trained_net.preprocess(small_dataset.images[:3])
        a, _ = N.forward(trained_net, x)
        b, _ = N.forward(trained_net, x)
        assert a.tobytes() == b.tobytes()

    def test_zero_image_is_finite(self, trained_net):
        scores, _ = N.forward(trained_net, np.zeros(trained_net.input_shape))
        assert np.all(np.isfinite(scores))

    def test_argmax_invariant_under_softmax(self, trained_net, small_dataset):
        x = trained_net.preprocess(small_dataset.images[:50])
        scores, _ = N.forward(trained_net, x)
        np.testing.assert_array_equal(scores.argmax(1), T.softmax(scores).argmax(1))


class TestInputGradient:
    def test_linear_gradient_is_weight_row(self, rng):
        net = _linear_net(rng)
        x = rng.normal(size=net.input_shape)
        for c in range(5):
            g = N.input_gradient(net, x, c)
            np.testing.assert_array_equal(g.reshape(-1), net.layers[0].weights[c])

    def test_dead_relu_gives_zero(self, rng):
        fc = FullyConnected(rng.normal(size=(2, 4)), np.array([-100.0, -100.0]))
        net = N.Network((fc, ReLU()), np.zeros((1, 2, 2)))
        assert not N.input_gradient(net, rng.normal(size=(1, 2, 2)), 0).any()

    def test_class_out_of_range(self, rng):
        net = _linear_net(rng)
        with pytest.raises(IndexError):
            N.input_gradient(net, np.zeros(net.input_shape), 5)

    def test_random_nets_match_finite_differences(self):
        rng = np.random.default_rng(7)
        worst = 0.0
        for _ in range(20):
            net = random_network(rng)
            x = rng.normal(size=net.input_shape)
            c = int(rng.integers(net.num_classes))
            fd, valid = batched_score_fd(net, x, c)
            g = N.input_gradient(net, x, c)
            worst = max(worst, rel_err(g[valid], fd[valid]))
        assert worst <= 1e-4

    def test_linear_in_seed(self, trained_net, small_dataset):
        net = trained_net.astype(np.float64)
        x = net.preprocess(small_dataset.images[0])
        _, trace = N.forward(net, x)
        seed = N.score_seed(net, 2)
        g1 = N.backward(trace, seed)[0]
        g2 = N.backward(trace, 2 * seed)[0]
        np.testing.assert_allclose(g2, 2 * g1, atol=1e-6, rtol=0)

    def test_batch_and_single_agree(self, rng):
        net = random_network(rng)
        x = rng.normal(size=net.input_shape)
        np.testing.assert_array_equal(N.input_gradient(net, x, 0), N.input_gradient(net, x[None], 0)[0])


class TestTraining:
    def test_lr_zero_leaves_parameters(self, small_dataset):
        ds = small_dataset.subset(slice(0, 64))
        net = N.reference_network(5, mean_image=ds.images.mean(0))
        out = N.train_sgd(net, ds.images, ds.labels, N.TrainConfig(lr=0.0, epochs=2))
        for a, b in zip(net.layers, out.layers):
            for pa, pb in zip(N._params(a) or (), N._params(b) or ()):
                assert pa.tobytes() == pb.tobytes()

    def test_separable_two_class_problem(self):
        rng = np.random.default_rng(0)
        n = 200
        labels = np.arange(n) % 2
        images = rng.uniform(0, 0.3, size=(n, 1, 8, 8)).astype(np.float32)
        images[labels == 1, :, :4, :] += 0.6  # top half bright for class 1
        net = N.reference_network(2, input_shape=(1, 8, 8), mean_image=images.mean(0), seed=1)
        accs = []
        N.train_sgd(net, images, labels, N.TrainConfig(lr=0.05, epochs=30, batch=16, seed=2),
                    on_epoch=lambda e, l, a: accs.append(a))
        assert accs[-1] >= 0.95

    def test_final_loss_not_above_initial(self, small_dataset):
        ds = small_dataset.subset(slice(0, 160))
        net = N.reference_network(5, mean_image=ds.images.mean(0), seed=4)
        losses = []
        N.train_sgd(net, ds.images, ds.labels, N.TrainConfig(lr=0.02, epochs=4, seed=1),
                    on_epoch=lambda e, l, a: losses.append(l))
        assert losses[-1] <= losses[0]

    def test_single_step_decreases_sample_loss(self, small_dataset):
        ds = small_dataset.subset(slice(0, 1))
        net = N.reference_network(5, mean_image=ds.images.mean(0) * 0 + 0.3, seed=9).astype(np.float64)
        x = net.preprocess(ds.images)
        before, _ = N.cross_entropy(N.forward(net, x)[0], ds.labels)
        # step-size sweep: the loss must drop for every small enough step
        for lr in (1e-2, 3e-3, 1e-3, 3e-4):
            out = N.train_sgd(net, ds.images, ds.labels, N.TrainConfig(lr=lr, momentum=0.0, epochs=1, batch=1))
            after, _ = N.cross_entropy(N.forward(out, x)[0], ds.labels)
            assert after < before

    def test_deterministic(self, small_dataset):
        ds = small_dataset.subset(slice(0, 64))
        net = N.reference_network(5, mean_image=ds.images.mean(0))
        cfg = N.TrainConfig(epochs=1, seed=3)
        a = N.train_sgd(net, ds.images, ds.labels, cfg)
        b = N.train_sgd(net, ds.images, ds.labels, cfg)
        assert all(
            pa.tobytes() == pb.tobytes()
            for la, lb in zip(a.layers, b.layers)
            for pa, pb in zip(N._params(la) or (), N._params(lb) or ())
        )

    def test_empty_dataset(self):
        net = N.reference_network(5)
        with pytest.raises(ValueError, match="empty"):
            N.train_sgd(net, np.zeros((0, 3, 32, 32)), np.zeros(0, dtype=int))

    def test_nan_loss_aborts(self, small_dataset):
        ds = small_dataset.subset(slice(0, 32))
        net = N.reference_network(5, mean_image=ds.images.mean(0))
        bad = ds.images.copy()
        bad[0, 0, 0, 0] = np.nan
        with pytest.raises(N.TrainingError, match="non-finite loss"):
            N.train_sgd(net, bad, ds.labels, N.TrainConfig(epochs=1))

    def test_label_out_of_range(self, small_dataset):
        ds = small_dataset.subset(slice(0, 8))
        with pytest.raises(ValueError):
            N.train_sgd(N.reference_network(3), ds.images, ds.labels + 5)

    def test_reference_architecture(self):
        net = N.reference_network(7)
        kinds = [layer.kind for layer in net.layers]
        assert kinds == ["conv", "relu", "maxpool", "conv", "relu", "maxpool", "fc", "relu", "fc"]
        assert net.layers[0].kernel.out_channels == 8 and net.layers[3].kernel.out_channels == 16
        assert net.layers[6].weights.shape == (64, 16 * 8 * 8)
        assert net.num_classes == 7 and net.dtype == np.float32
