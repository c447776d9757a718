"""Baseline attacks against closed-form oracles on linear models, plus the
shared projection/budget/serialization invariants."""

import numpy as np
import pytest
import torch

from sparsetone.baselines import (one_pixel_1d, read_results_jsonl, sparse_pgd,
                                  sparsefool_1d, write_results_jsonl)
from sparsetone.corpus import synthesize_corpus
from sparsetone.losses import AttackConfig
from sparsetone.models import TrainConfig, build_classifier, train_classifier

from helpers import linear_classifier


def _softmax(z):
    z = z - np.max(z)
    e = np.exp(z)
    return e / e.sum()


def pgd_one_step_oracle(W, b, x, y, eps, alpha, k):
    """Closed-form single FGSM step on the top-k gradient positions.

    Cross-entropy input gradient of a linear model is (softmax(Wx+b) -
    onehot(y)) @ W; the step adds alpha * sign on the k largest-magnitude
    coordinates and projects into the epsilon ball and [-1, 1].
    """
    p = _softmax(W @ x + b)
    p[y] -= 1.0
    g = p @ W
    order = np.argsort(-np.abs(g), kind="stable")[:k]
    delta = np.zeros_like(x)
    delta[order] = alpha * np.sign(g[order])
    lo = np.maximum(-eps, -1.0 - x)
    hi = np.minimum(eps, 1.0 - x)
    return np.clip(delta, lo, hi)


class TestSparsePgd:
    def test_one_step_matches_analytic_oracle_exactly(self):
        rng = np.random.default_rng(0)
        n, eps, k = 64, 0.05, 8
        W = rng.normal(size=(2, n))
        b = rng.normal(size=2) * 0.1
        x = rng.uniform(-0.8, 0.8, n)
        y = int(np.argmax(W @ x + b))    # correctly classified, no early exit
        model = linear_classifier(W, b)
        cfg = AttackConfig(epsilon=eps, alpha=eps, k=k, max_iters=1, early_stop=False)
        result = sparse_pgd(model, x, y, cfg)
        oracle = pgd_one_step_oracle(W, b, x, y, eps, eps, k)
        np.testing.assert_array_equal(result.delta, oracle)
        assert result.iterations_used == 1

    def test_support_bounded_by_k_times_iterations(self):
        rng = np.random.default_rng(1)
        W = rng.normal(size=(3, 100))
        x = rng.uniform(-0.5, 0.5, 100)
        y = int(np.argmax(W @ x))
        model = linear_classifier(W, np.zeros(3))
        cfg = AttackConfig(epsilon=0.01, k=5, max_iters=4, early_stop=False)
        result = sparse_pgd(model, x, y, cfg)
        assert result.support_size(0.0) <= 5 * result.iterations_used

    def test_support_grows_monotonically(self):
        rng = np.random.default_rng(2)
        W = rng.normal(size=(2, 80))
        x = rng.uniform(-0.5, 0.5, 80)
        y = int(np.argmax(W @ x))
        model = linear_classifier(W, np.zeros(2))
        supports = []
        for iters in (1, 2, 3):
            cfg = AttackConfig(epsilon=0.02, k=4, max_iters=iters, early_stop=False)
            r = sparse_pgd(model, x, y, cfg)
            supports.append(set(np.flatnonzero(r.delta != 0.0)))
        assert supports[0] <= supports[1] <= supports[2]

    def test_already_misclassified_early_exit(self):
        rng = np.random.default_rng(3)
        W = rng.normal(size=(2, 32))
        x = rng.uniform(-0.5, 0.5, 32)
        wrong_y = int(np.argmin(W @ x))
        model = linear_classifier(W, np.zeros(2))
        result = sparse_pgd(model, x, wrong_y, AttackConfig(epsilon=0.05))
        assert result.success
        assert result.iterations_used == 0
        np.testing.assert_array_equal(result.delta, np.zeros(32))

    def test_random_position_rule(self):
        rng = np.random.default_rng(4)
        W = rng.normal(size=(2, 64))
        x = rng.uniform(-0.5, 0.5, 64)
        y = int(np.argmax(W @ x))
        model = linear_classifier(W, np.zeros(2))
        cfg = AttackConfig(epsilon=0.02, k=6, max_iters=2, early_stop=False,
                           pgd_position_rule="random", seed=7)
        a = sparse_pgd(model, x, y, cfg)
        b = sparse_pgd(model, x, y, cfg)
        np.testing.assert_array_equal(a.delta, b.delta)
        assert a.support_size(0.0) <= 12


class TestSparsefool1d:
    def test_perturbs_largest_weight_coordinate_first(self):
        rng = np.random.default_rng(5)
        n = 64
        w = rng.normal(size=n) * 0.5
        w[17] = 4.0                       # dominant coordinate
        W = np.stack([np.zeros(n), w])
        x = rng.uniform(-0.5, 0.5, n)
        b = np.array([0.0, -float(w @ x) - 0.2])   # margin 0.2 toward class 1
        model = linear_classifier(W, b)
        result = sparsefool_1d(model, x, 0, AttackConfig(epsilon=0.1, max_iters=5))
        assert result.success
        support = np.flatnonzero(result.delta != 0.0)
        np.testing.assert_array_equal(support, [17])

    def test_already_misclassified_early_exit(self):
        rng = np.random.default_rng(6)
        W = rng.normal(size=(2, 32))
        x = rng.uniform(-0.5, 0.5, 32)
        wrong_y = int(np.argmin(W @ x))
        model = linear_classifier(W, np.zeros(2))
        result = sparsefool_1d(model, x, wrong_y, AttackConfig(epsilon=0.05))
        assert result.success and result.iterations_used == 0
        np.testing.assert_array_equal(result.delta, np.zeros(32))

    def test_budget_exhaustion_is_well_formed(self):
        rng = np.random.default_rng(7)
        n = 32
        w = rng.normal(size=n) * 0.01
        W = np.stack([np.zeros(n), w])
        x = rng.uniform(-0.5, 0.5, n)
        # margin far beyond what eps-bounded coordinates can cross
        b = np.array([0.0, -float(w @ x) - 50.0])
        model = linear_classifier(W, b)
        result = sparsefool_1d(model, x, 0, AttackConfig(epsilon=0.01, max_iters=1))
        assert not result.success
        assert result.iterations_used == 1
        assert np.all(np.isfinite(result.delta))
        assert np.all(np.abs(result.delta) <= 0.01)


class TestOnePixel1d:
    def _hard_linear_setup(self, n=32, eps=0.1):
        # margin chosen so no single bounded coordinate can flip the label:
        # optimization quality is then comparable against the grid oracle
        rng = np.random.default_rng(8)
        W = rng.normal(size=(2, n))
        x = rng.uniform(-0.5, 0.5, n)
        margin = 2.0 * eps * float(np.max(np.abs(W[1] - W[0])))
        y = int(np.argmax(W @ x))
        other = 1 - y
        b = np.zeros(2)
        b[other] = -(W[other] - W[y]) @ x - margin
        return W, b, x, y

    def _exhaustive_oracle(self, W, b, x, y, eps, n_values=21):
        lo = np.maximum(-eps, -1.0 - x)
        hi = np.minimum(eps, 1.0 - x)
        best = np.inf
        for j in range(x.size):
            for v in np.linspace(-eps, eps, n_values):
                xp = x.copy()
                xp[j] = x[j] + np.clip(v, lo[j], hi[j])
                best = min(best, _softmax(W @ xp + b)[y])
        return best

    def test_within_five_percent_of_exhaustive_oracle(self):
        eps = 0.1
        W, b, x, y = self._hard_linear_setup(eps=eps)
        model = linear_classifier(W, b)
        cfg = AttackConfig(epsilon=eps, max_iters=30, seed=3)
        result = one_pixel_1d(model, x, y, cfg)
        achieved = _softmax(W @ (x + result.delta) + b)[y]
        oracle = self._exhaustive_oracle(W, b, x, y, eps)
        assert achieved <= oracle * 1.05

    def test_support_at_most_one_with_bounded_value(self):
        eps = 0.05
        W, b, x, y = self._hard_linear_setup(eps=eps)
        model = linear_classifier(W, b)
        result = one_pixel_1d(model, x, y, AttackConfig(epsilon=eps, max_iters=3, seed=1))
        assert result.support_size(0.0) <= 1
        assert np.max(np.abs(result.delta)) <= eps

    def test_seeded_runs_are_identical(self):
        eps = 0.05
        W, b, x, y = self._hard_linear_setup(eps=eps)
        model = linear_classifier(W, b)
        cfg = AttackConfig(epsilon=eps, max_iters=5, seed=11)
        a = one_pixel_1d(model, x, y, cfg)
        b2 = one_pixel_1d(model, x, y, cfg)
        np.testing.assert_array_equal(a.delta, b2.delta)
        assert a.adversarial_pred == b2.adversarial_pred

    def test_already_misclassified_early_exit(self):
        rng = np.random.default_rng(9)
        W = rng.normal(size=(2, 16))
        x = rng.uniform(-0.5, 0.5, 16)
        wrong_y = int(np.argmin(W @ x))
        model = linear_classifier(W, np.zeros(2))
        result = one_pixel_1d(model, x, wrong_y, AttackConfig(epsilon=0.05))
        assert result.success and result.iterations_used == 0
        assert result.support_size(0.0) == 0


@pytest.fixture(scope="module")
def trained_setup():
    corpus = synthesize_corpus(51, 20, 2, 0.1)
    model = build_classifier("emo18_style", 2, 1600, base_width=4, seed=0)
    model = train_classifier(model, corpus, TrainConfig(epochs=3, seed=0))
    test = [c for c in corpus if c.split == "test"][:4]
    return model, test


class TestSharedInvariants:
    """Projection, budget, and consistency checks on a real (nonlinear) model."""

    @pytest.mark.parametrize("attack", [sparse_pgd, sparsefool_1d, one_pixel_1d])
    def test_projection_budget_and_consistency(self, trained_setup, attack):
        model, clips = trained_setup
        cfg = AttackConfig(epsilon=0.05, k=8, max_iters=5, seed=0)
        for clip in clips:
            r = attack(model, clip.samples, clip.label, cfg, clip_id=clip.clip_id)
            x_adv = clip.samples.astype(np.float64) + r.delta
            assert np.all(np.abs(r.delta) <= cfg.epsilon)
            assert np.all(x_adv <= 1.0) and np.all(x_adv >= -1.0)
            assert r.iterations_used <= cfg.max_iters
            repredicted = int(model.predict(x_adv.astype(np.float32)))
            assert r.adversarial_pred == repredicted or r.iterations_used == 0
            assert r.success == (r.adversarial_pred != clip.label)
            if r.original_pred == r.true_label:
                assert r.success == (r.adversarial_pred != r.original_pred)


class TestResultSerialization:
    def test_jsonl_round_trip(self, tmp_path):
        rng = np.random.default_rng(10)
        W = rng.normal(size=(2, 24))
        x = rng.uniform(-0.5, 0.5, 24)
        y = int(np.argmax(W @ x))
        model = linear_classifier(W, np.zeros(2))
        results = [
            sparse_pgd(model, x, y, AttackConfig(epsilon=0.03, k=2, max_iters=2,
                                                 early_stop=False), clip_id="a"),
            one_pixel_1d(model, x, y, AttackConfig(epsilon=0.03, max_iters=2,
                                                   seed=5), clip_id="b"),
        ]
        path = write_results_jsonl(results, tmp_path / "results.jsonl")
        back = read_results_jsonl(path)
        assert len(back) == 2
        for orig, re in zip(results, back):
            assert orig.clip_id == re.clip_id
            assert orig.success == re.success
            assert orig.iterations_used == re.iterations_used
            np.testing.assert_array_equal(orig.delta, re.delta)
