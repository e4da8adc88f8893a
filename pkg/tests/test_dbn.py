"""RBM and DBN tests: closed forms, enumeration oracles, finite differences."""
import numpy as np
import numpy.testing as npt
import pytest

from coreseg import dbn
from coreseg.dbn import (DbnModel, FineTuneConfig, Rbm, fine_tune, forward,
                         init_rbm, make_dropout_masks, mse_loss, nll_loss,
                         objective, objective_grads, pcd_gradient, predict,
                         pretrain_stack, rbm_free_energy, rbm_pcd_step)
from coreseg.errors import ShapeError, ValidationError
from coreseg.sampler import CoreSample

from helpers import rbm_exact_log_likelihood_grad


def random_rbm(n_visible, n_hidden, seed, scale=0.5, n_chains=15):
    rng = np.random.default_rng(seed)
    return Rbm(rng.normal(0, scale, (n_visible, n_hidden)),
               rng.normal(0, scale, n_visible),
               rng.normal(0, scale, n_hidden),
               (rng.random((n_chains, n_visible)) < 0.5).astype(float))


def random_dbn(seed, n_in=None, head_kind=None):
    rng = np.random.default_rng(seed)
    n_in = n_in or int(rng.integers(2, 9))
    n_layers = int(rng.integers(1, 4))
    sizes = [n_in] + [int(rng.integers(2, 17)) for _ in range(n_layers)]
    weights = [rng.normal(0, 0.7, (a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
    biases = [rng.normal(0, 0.3, b) for b in sizes[1:]]
    model = DbnModel(weights, biases)
    kind = head_kind or ("logistic" if seed % 2 == 0 else "linear")
    n_out = int(rng.integers(2, 5))
    model.init_head(kind, n_out, seed=seed + 1)
    model.head_W = rng.normal(0, 0.7, model.head_W.shape)
    model.head_b = rng.normal(0, 0.3, model.head_b.shape)
    return model, rng


def fd_check(model, x, y, masks=None, h=1e-5, include=("weights", "biases",
                                                       "head_W", "head_b"),
             min_weight=0.0):
    """Max relative error between analytic grads and central differences."""
    _, grads = objective_grads(model, x, y, masks)
    worst = 0.0

    def probe(array, grad, is_weight):
        nonlocal worst
        flat = array.reshape(-1)
        gflat = np.asarray(grad).reshape(-1)
        for idx in range(flat.size):
            if is_weight and min_weight and abs(flat[idx]) <= min_weight:
                continue
            orig = flat[idx]
            flat[idx] = orig + h
            up = objective(model, x, y, masks)
            flat[idx] = orig - h
            down = objective(model, x, y, masks)
            flat[idx] = orig
            fd = (up - down) / (2 * h)
            denom = max(abs(fd), abs(gflat[idx]), 1e-7)
            worst = max(worst, abs(fd - gflat[idx]) / denom)

    if "weights" in include:
        for W, g in zip(model.weights, grads["weights"]):
            probe(W, g, True)
    if "biases" in include:
        for b, g in zip(model.biases, grads["biases"]):
            probe(b, g, False)
    if "head_W" in include:
        probe(model.head_W, grads["head_W"], True)
    if "head_b" in include:
        probe(model.head_b, grads["head_b"], False)
    return worst


class TestFreeEnergy:
    def test_all_zero_parameters(self):
        rbm = Rbm(np.zeros((3, 4)), np.zeros(3), np.zeros(4), np.zeros((1, 3)))
        npt.assert_allclose(rbm_free_energy(rbm, np.ones(3)), -4 * np.log(2))

    def test_closed_form_with_bias(self):
        rbm = Rbm(np.zeros((2, 1)), np.ones(2), np.zeros(1), np.zeros((1, 2)))
        npt.assert_allclose(rbm_free_energy(rbm, np.ones(2)), -2 - np.log(2))

    def test_matches_hidden_enumeration(self):
        rbm = random_rbm(2, 2, seed=0)
        for bits in range(4):
            v = np.array([bits & 1, (bits >> 1) & 1], dtype=float)
            # exp(-F(v)) == sum_h exp(-E(v,h))
            total = 0.0
            for hbits in range(4):
                h = np.array([hbits & 1, (hbits >> 1) & 1], dtype=float)
                energy = -(rbm.b @ v) - (rbm.c @ h) - v @ rbm.W @ h
                total += np.exp(-energy)
            npt.assert_allclose(np.exp(-rbm_free_energy(rbm, v)), total,
                                rtol=1e-12)


class TestPcdStep:
    def test_zero_lr_keeps_parameters_moves_chains(self):
        rbm = random_rbm(4, 3, seed=1)
        batch = (np.random.default_rng(2).random((8, 4)) < 0.5).astype(float)
        before = rbm.chains.copy()
        updated, err = rbm_pcd_step(rbm, batch, lr=0.0, gibbs_k=1, rng=3)
        npt.assert_array_equal(updated.W, rbm.W)
        npt.assert_array_equal(updated.b, rbm.b)
        npt.assert_array_equal(updated.c, rbm.c)
        assert err >= 0.0
        assert not np.array_equal(updated.chains, before)

    def test_deterministic_given_seed(self):
        batch = (np.random.default_rng(4).random((6, 3)) < 0.5).astype(float)
        results = []
        for _ in range(2):
            rbm = random_rbm(3, 2, seed=5)
            updated, err = rbm_pcd_step(rbm, batch, lr=0.1, gibbs_k=2, rng=9)
            results.append((updated.W.copy(), err))
        npt.assert_array_equal(results[0][0], results[1][0])
        assert results[0][1] == results[1][1]

    def test_gradient_unbiased_on_2x2(self):
        # averaged PCD estimate vs exact log-likelihood gradient by enumeration
        rbm = random_rbm(2, 2, seed=6, scale=0.6)
        batch = np.array([[0, 0], [0, 1], [1, 1], [1, 1]], dtype=float)
        exact_W, exact_b, exact_c = rbm_exact_log_likelihood_grad(
            rbm.W, rbm.b, rbm.c, batch)
        rng = np.random.default_rng(7)
        acc_W = np.zeros_like(rbm.W)
        acc_b = np.zeros_like(rbm.b)
        acc_c = np.zeros_like(rbm.c)
        steps = 4000
        for _ in range(steps):
            gW, gb, gc, chains = pcd_gradient(rbm, batch, gibbs_k=2, rng=rng)
            rbm.chains = chains
            acc_W += gW
            acc_b += gb
            acc_c += gc
        npt.assert_allclose(acc_W / steps, exact_W, atol=0.05)
        npt.assert_allclose(acc_b / steps, exact_b, atol=0.05)
        npt.assert_allclose(acc_c / steps, exact_c, atol=0.05)


class TestPretrainStack:
    def test_zero_epochs_random_init(self):
        data = np.random.default_rng(0).random((10, 6))
        model, history = pretrain_stack([6, 4], data, epochs=0, seed=1)
        ref = init_rbm(6, 4, 15, np.random.default_rng(1))
        npt.assert_array_equal(model.weights[0], ref.W)
        assert history == [[]]

    def test_degenerate_architecture_rejected(self):
        with pytest.raises(ValidationError):
            pretrain_stack([6], np.random.random((4, 6)), epochs=1)

    def test_out_of_range_data_rejected(self):
        with pytest.raises(ValidationError):
            pretrain_stack([2, 2], np.array([[0.0, 1.5]]), epochs=1)

    def test_reconstruction_improves(self):
        rng = np.random.default_rng(8)
        templates = (rng.random((4, 16)) < 0.5).astype(float)
        picks = rng.integers(0, 4, 256)
        data = templates[picks]
        flips = rng.random(data.shape) < 0.1
        data = np.abs(data - flips)
        model, history = pretrain_stack([16, 8], data, epochs=20, lr=0.05,
                                        seed=9)
        assert history[0][-1] < history[0][0]


class TestForwardAndLosses:
    def test_uniform_softmax_on_zero_inputs(self):
        model = DbnModel([np.zeros((3, 5))], [np.zeros(5)])
        model.init_head("logistic", 4, seed=0)
        model.head_W[:] = 0.0
        out = forward(model, np.zeros((2, 3)))
        npt.assert_allclose(out, 0.25)

    def test_zero_dropout_matches_infer(self):
        model, rng = random_dbn(seed=10)
        model.dropout = [0.0] * len(model.weights)
        x = rng.random((4, model.layer_sizes[0]))
        npt.assert_array_equal(forward(model, x, train=True, rng=0),
                               forward(model, x, train=False))

    def test_softmax_rows_sum_to_one(self):
        model, rng = random_dbn(seed=12, head_kind="logistic")
        x = rng.random((7, model.layer_sizes[0]))
        out = forward(model, x)
        npt.assert_allclose(out.sum(axis=1), 1.0, atol=1e-9)

    def test_nll_uniform_case(self):
        probs = np.full((3, 4), 0.25)
        npt.assert_allclose(nll_loss(probs, [0, 1, 2]), np.log(4))

    def test_nll_perfect_prediction(self):
        probs = np.eye(3)
        assert nll_loss(probs, [0, 1, 2]) == 0.0

    def test_nll_label_out_of_range(self):
        with pytest.raises(ValidationError):
            nll_loss(np.full((1, 2), 0.5), [2])

    def test_mse_identity_and_offset(self):
        a = np.random.default_rng(0).normal(size=(4, 2))
        assert mse_loss(a, a) == 0.0
        npt.assert_allclose(mse_loss(a + 0.3, a), 0.09)

    def test_mse_shape_mismatch(self):
        with pytest.raises(ShapeError):
            mse_loss(np.zeros((2, 2)), np.zeros((2, 3)))

    def test_nll_logit_gradient_is_softmax_minus_onehot(self):
        rng = np.random.default_rng(13)
        logits = rng.normal(size=(5, 4))
        labels = rng.integers(0, 4, 5)
        h = 1e-5
        probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        onehot = np.eye(4)[labels]
        analytic = (probs - onehot) / 5

        def loss_of(z):
            p = np.exp(z - z.max(axis=1, keepdims=True))
            p /= p.sum(axis=1, keepdims=True)
            return nll_loss(p, labels)

        for i in range(5):
            for j in range(4):
                up, down = logits.copy(), logits.copy()
                up[i, j] += h
                down[i, j] -= h
                fd = (loss_of(up) - loss_of(down)) / (2 * h)
                assert abs(fd - analytic[i, j]) / max(abs(fd), 1e-7) <= 1e-4


class TestGradients:
    @pytest.mark.parametrize("seed", range(6))
    def test_objective_matches_finite_differences(self, seed):
        model, rng = random_dbn(seed=seed)
        model.l1, model.l2 = 1e-3, 1e-3
        x = rng.random((5, model.layer_sizes[0]))
        if model.head_kind == "logistic":
            y = rng.integers(0, model.n_out, 5)
        else:
            y = rng.normal(size=(5, model.n_out))
        assert fd_check(model, x, y, min_weight=1e-6) <= 1e-4

    def test_gradients_with_fixed_dropout_masks(self):
        model, rng = random_dbn(seed=20, head_kind="logistic")
        model.l1, model.l2 = 1e-4, 1e-4
        model.dropout = [0.5] * len(model.weights)
        x = rng.random((4, model.layer_sizes[0]))
        y = rng.integers(0, model.n_out, 4)
        masks = make_dropout_masks(model, 4, rng=3)
        assert fd_check(model, x, y, masks=masks, min_weight=1e-6) <= 1e-4


class TestFineTuneAndPredict:
    def _toy_sample(self, seed=0, n=120):
        rng = np.random.default_rng(seed)
        labels = rng.integers(0, 2, n)
        centers = np.array([[0.2, 0.8], [0.8, 0.2]])
        features = np.clip(centers[labels] + rng.normal(0, 0.08, (n, 2)), 0, 1)
        return CoreSample(features, labels, np.zeros((n, 3)))

    def _toy_model(self, seed=0):
        rng = np.random.default_rng(seed)
        model = DbnModel([rng.normal(0, 0.5, (2, 8))], [np.zeros(8)])
        model.init_head("logistic", 2, seed=seed)
        model.head_W = rng.normal(0, 0.5, (8, 2))
        return model

    def test_loss_decreases_on_separable_problem(self):
        sample = self._toy_sample()
        model = self._toy_model()
        config = FineTuneConfig(lr=0.5, epochs=10, batch=16, l1=0.0, l2=0.0,
                                dropout=0.0, seed=1)
        _, report = fine_tune(model, sample, config)
        diffs = np.diff(report.losses)
        assert (diffs < 0).all()

    def test_zero_lr_no_change(self):
        sample = self._toy_sample()
        model = self._toy_model()
        before = [w.copy() for w in model.weights]
        config = FineTuneConfig(lr=0.0, epochs=3, batch=16, dropout=0.0, seed=1)
        model, report = fine_tune(model, sample, config)
        for w0, w1 in zip(before, model.weights):
            npt.assert_array_equal(w0, w1)
        assert len(set(np.round(report.losses, 12))) == 1

    def test_empty_sample_rejected(self):
        model = self._toy_model()
        empty = CoreSample(np.zeros((0, 2)), np.zeros(0, dtype=int),
                           np.zeros((0, 3)))
        with pytest.raises(ValidationError):
            fine_tune(model, empty, FineTuneConfig())

    def test_training_accuracy_on_toy(self):
        sample = self._toy_sample()
        model = self._toy_model()
        config = FineTuneConfig(lr=0.5, epochs=30, batch=16, l1=0.0, l2=0.0,
                                dropout=0.0, seed=1)
        model, _ = fine_tune(model, sample, config)
        accuracy = np.mean(predict(model, sample.features) == sample.targets)
        assert accuracy >= 0.95

    def test_tie_breaks_to_lowest_class(self):
        model = DbnModel([np.zeros((3, 4))], [np.zeros(4)])
        model.init_head("logistic", 4, seed=0)
        model.head_W[:] = 0.0
        npt.assert_array_equal(predict(model, np.zeros((2, 3))), [0, 0])

    def test_predictions_deterministic(self):
        model, rng = random_dbn(seed=30, head_kind="logistic")
        x = rng.random((6, model.layer_sizes[0]))
        npt.assert_array_equal(predict(model, x), predict(model, x))
