import math

import numpy as np
import pytest

from histcode.errors import NonFinite, SingleClassSplit
from histcode.evaluation import roc_auc
from histcode.mil import (
    DiagConfig,
    DiagnosisHead,
    GatedAttentionParams,
    SlideBag,
    attention_scores,
    bag_loss_and_grads,
    diagnose,
    diagnosis_loss,
    gated_attention,
    head_probs,
    load_model,
    max_pool,
    mean_pool,
    read_attention,
    save_model,
    train_diagnosis,
    write_attention,
)

from oracles import central_diff, rel_error


def random_params(rng, d, a):
    return GatedAttentionParams(rng.normal(size=(a, d)), rng.normal(size=(a, d)), rng.normal(size=a))


class TestGatedAttention:
    def test_singleton(self):
        rng = np.random.default_rng(0)
        h = rng.normal(size=(1, 5))
        z, a = gated_attention(h, random_params(rng, 5, 3))
        assert a.tolist() == [1.0]
        np.testing.assert_array_equal(z, h[0])

    def test_identical_rows(self):
        rng = np.random.default_rng(1)
        h = np.tile(rng.normal(size=5), (7, 1))
        z, a = gated_attention(h, random_params(rng, 5, 3))
        np.testing.assert_allclose(a, 1 / 7, atol=1e-15)
        np.testing.assert_allclose(z, h[0], atol=1e-14)

    def test_worked_example(self):
        p = GatedAttentionParams(np.array([[1.0, 0.0]]), np.zeros((1, 2)), np.array([1.0]))
        z, a = gated_attention(np.array([[1.0, 0.0], [0.0, 0.0]]), p)
        s = math.tanh(1) * 0.5
        assert s == pytest.approx(0.3808, abs=1e-4)
        a0 = math.exp(s) / (math.exp(s) + 1)
        np.testing.assert_allclose(a, [a0, 1 - a0], atol=1e-12)
        np.testing.assert_allclose(a, [0.5941, 0.4059], atol=1e-4)
        np.testing.assert_allclose(z, [0.5941, 0.0], atol=1e-4)

    def test_simplex_and_permutation(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            L, d = int(rng.integers(1, 40)), int(rng.integers(1, 10))
            h = rng.normal(size=(L, d)) * 3
            p = random_params(rng, d, int(rng.integers(1, 8)))
            z, a = gated_attention(h, p)
            assert np.all(a >= 0) and abs(a.sum() - 1) <= 1e-6
            perm = rng.permutation(L)
            z2, a2 = gated_attention(h[perm], p)
            np.testing.assert_allclose(a2, a[perm], atol=1e-12)
            assert np.max(np.abs(z2 - z)) <= 1e-9

    def test_zero_w_is_mean_pool(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            h = rng.normal(size=(int(rng.integers(1, 30)), 6))
            p = random_params(rng, 6, 4)
            p.w[:] = 0
            z, a = gated_attention(h, p)
            assert np.all(a == 1 / len(h))
            np.testing.assert_allclose(z, h.mean(0), rtol=1e-15, atol=1e-15)

    def test_weights_are_softmax_of_scores(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            h = rng.normal(size=(int(rng.integers(1, 30)), 4))
            p = random_params(rng, 4, 3)
            e = attention_scores(h, p)
            _, a = gated_attention(h, p)
            np.testing.assert_allclose(a, np.exp(e - e.max()) / np.exp(e - e.max()).sum(), atol=1e-15)

    def test_nonfinite(self):
        p = random_params(np.random.default_rng(4), 2, 2)
        with pytest.raises(NonFinite):
            gated_attention(np.array([[np.nan, 1.0]]), p)


class TestPools:
    def test_trivial(self):
        h = np.array([[0.0, 1.0], [1.0, 0.0]])
        assert max_pool(h).tolist() == [1, 1] and mean_pool(h).tolist() == [0.5, 0.5]
        assert max_pool(h[:1]).tolist() == mean_pool(h[:1]).tolist() == [0, 1]

    def test_brute_force_and_permutation(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            L, d = int(rng.integers(1, 20)), int(rng.integers(1, 6))
            h = rng.normal(size=(L, d))
            mx = [max(h[i, j] for i in range(L)) for j in range(d)]
            mn = [sum(h[i, j] for i in range(L)) / L for j in range(d)]
            assert max_pool(h).tolist() == mx
            np.testing.assert_allclose(mean_pool(h), mn, atol=1e-12)
            np.testing.assert_allclose(mean_pool(h[rng.permutation(L)]), mean_pool(h), atol=1e-12)


class TestHead:
    def test_zero_head(self):
        assert diagnose(np.ones(4), DiagnosisHead(np.zeros((2, 4)), np.zeros(2))) == 0.5

    def test_equal_logits_and_shift(self):
        rng = np.random.default_rng(0)
        for t in (-50.0, 0.0, 3.0, 700.0):
            assert diagnose(np.zeros(3), DiagnosisHead(np.zeros((2, 3)), np.array([t, t]))) == 0.5
        W, b, z = rng.normal(size=(2, 3)), rng.normal(size=2), rng.normal(size=3)
        p1 = diagnose(z, DiagnosisHead(W, b))
        p2 = diagnose(z, DiagnosisHead(W, b + 12.5))
        assert abs(p1 - p2) <= 1e-9
        assert head_probs(z, DiagnosisHead(W, b)).sum() == pytest.approx(1.0, abs=1e-15)

    def test_loss_examples(self):
        assert diagnosis_loss([1], [0.5]) == pytest.approx(math.log(2))
        assert diagnosis_loss([1, 0], [1.0, 0.0]) == pytest.approx(0.0, abs=1e-10)
        assert diagnosis_loss([1, 0], [0.9, 0.2]) == pytest.approx(-(math.log(0.9) + math.log(0.8)), abs=1e-12)
        assert diagnosis_loss([1, 0], [0.9, 0.2]) == pytest.approx(0.3285, abs=1e-4)
        assert np.isfinite(diagnosis_loss([1], [0.0]))


def _composite_fd(h, y, params, head, pooling):
    def at(name):
        def f(x):
            p = GatedAttentionParams(params.V, params.U, params.w) if params else None
            hd = DiagnosisHead(head.W, head.b)
            if name in ("W", "b"):
                setattr(hd, name, x)
            else:
                setattr(p, name, x)
            return bag_loss_and_grads(h, y, p, hd, pooling)[0]

        return f

    return at


@pytest.mark.parametrize("pooling", ["gated", "mean", "max"])
def test_gradients_match_finite_differences(pooling):
    rng = np.random.default_rng({"gated": 0, "mean": 1, "max": 2}[pooling])
    for _ in range(30):
        h = rng.normal(size=(5, 4))
        params = random_params(rng, 4, 3) if pooling == "gated" else None
        head = DiagnosisHead(rng.normal(size=(2, 4)), rng.normal(size=2))
        y = int(rng.integers(2))
        _, grads = bag_loss_and_grads(h, y, params, head, pooling)
        fd = _composite_fd(h, y, params, head, pooling)
        for name, g in grads.items():
            base = getattr(head, name) if name in ("W", "b") else getattr(params, name)
            assert rel_error(g, central_diff(fd(name), base)) < 1e-4, name


def make_bags(n=200, dim=16, signal_frac=0.3, seed=0):
    """Tumor bags carry >= ``signal_frac`` rows shifted along a fixed direction."""
    rng = np.random.default_rng(seed)
    direction = rng.normal(size=dim)
    direction /= np.linalg.norm(direction)
    bags = []
    for i in range(n):
        L = int(rng.integers(20, 60))
        H = rng.normal(size=(L, dim))
        label = i % 2
        if label:
            k = int(math.ceil(L * rng.uniform(signal_frac, 0.6)))
            H[:k] += 2.5 * direction
        coords = np.stack([np.arange(L) * 128, np.zeros(L, dtype=int)], 1)
        bags.append(SlideBag(f"s{i}", f"p{i}", H, label, coords))
    return bags


class TestTraining:
    def test_synthetic_bags_auc(self):
        bags = make_bags()
        idx = np.random.default_rng(1).permutation(200)
        train = [bags[i] for i in idx[:160]]
        val = [bags[i] for i in idx[160:180]]
        test = [bags[i] for i in idx[180:]]
        model = train_diagnosis(train, val, DiagConfig(attn_dim=32, seed=0))
        auc = roc_auc([b.label for b in test], model.predict(test))
        assert auc > 0.95

    def test_early_stopping_and_restore(self):
        bags = make_bags(60, seed=2)
        cfg = DiagConfig(attn_dim=8, max_epochs=40, patience=3)
        model = train_diagnosis(bags[:40], bags[40:], cfg)
        scores = [h[2] for h in model.history]
        assert len(model.history) <= 40
        assert scores[model.best_epoch] == max(scores)
        if len(model.history) < 40:
            assert len(model.history) - 1 - model.best_epoch == cfg.patience
        y = [b.label for b in bags[40:]]
        assert roc_auc(y, model.predict(bags[40:])) == scores[model.best_epoch][0]

    def test_deterministic(self):
        bags = make_bags(40, seed=3)
        cfg = DiagConfig(attn_dim=8, max_epochs=5)
        m1 = train_diagnosis(bags[:30], bags[30:], cfg)
        m2 = train_diagnosis(bags[:30], bags[30:], cfg)
        for k, v in m1.arrays().items():
            assert np.array_equal(v, m2.arrays()[k])

    def test_single_class(self):
        bags = [b for b in make_bags(10) if b.label == 1]
        with pytest.raises(SingleClassSplit):
            train_diagnosis(bags, [], DiagConfig(attn_dim=4))

    @pytest.mark.parametrize("pooling", ["gated", "max"])
    def test_checkpoint_roundtrip(self, tmp_path, pooling):
        bags = make_bags(20, seed=4)
        model = train_diagnosis(bags[:14], bags[14:], DiagConfig(pooling=pooling, attn_dim=4, max_epochs=2))
        save_model(tmp_path / "m.npz", model)
        loaded = load_model(tmp_path / "m.npz")
        assert loaded.config == model.config
        np.testing.assert_array_equal(loaded.predict(bags), model.predict(bags))

    def test_attention_rows_align_with_coords(self, tmp_path):
        bags = make_bags(20, seed=5)
        model = train_diagnosis(bags[:14], bags[14:], DiagConfig(attn_dim=4, max_epochs=2))
        bag = bags[3]
        a = model.attention(bag)
        write_attention(tmp_path / "a.csv", bag.coords, a)
        coords, back = read_attention(tmp_path / "a.csv")
        np.testing.assert_array_equal(coords, bag.coords)
        np.testing.assert_array_equal(back, a)
        with pytest.raises(ValueError):
            write_attention(tmp_path / "b.csv", bag.coords[:-1], a)
        scores = model.attention_scores(bag)
        write_attention(tmp_path / "c.csv", bag.coords, a, scores)
        np.testing.assert_array_equal(read_attention(tmp_path / "c.csv")[1], a)
        np.testing.assert_array_equal(read_attention(tmp_path / "c.csv", "score")[1], scores)
        with pytest.raises(KeyError):
            read_attention(tmp_path / "a.csv", "score")


def test_bag_validation():
    with pytest.raises(ValueError):
        SlideBag("s", "p", np.zeros((3, 2)), 1, np.zeros((2, 2)))
    with pytest.raises(ValueError):
        SlideBag("s", "p", np.zeros((0, 2)), 1, np.zeros((0, 2)))
