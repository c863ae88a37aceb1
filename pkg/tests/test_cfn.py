import numpy as np
import pytest

from coinflip.cfn import CfnConfig, CfnModel, PriorNormalizer
from coinflip.errors import EmptyBufferError, InvalidArgumentError, InvalidStateError


def one_hot(i, n):
    e = np.zeros(n)
    e[i] = 1.0
    return e


def model(input_dim=8, seed=0, sparse=False, **kw):
    cfg = CfnConfig(**{"d": 20, "hidden_layers": (16,), **kw})
    return CfnModel(input_dim, cfg, np.random.default_rng(seed), sparse_inputs=sparse)


class TestNormalizer:
    def test_unit_second_moment(self, rng):
        norm = PriorNormalizer(3)
        raw = rng.normal(4.0, 2.5, size=(200, 3))
        for r in raw:
            norm.update(r)
        out = norm.normalize(raw)
        assert np.all(np.abs(np.mean(out**2, axis=0) - 1) < 0.2)

    def test_without_mean_subtraction(self, rng):
        norm = PriorNormalizer(2, subtract_mean=False)
        raw = rng.normal(3.0, 1.0, size=(100, 2))
        for r in raw:
            norm.update(r)
        assert np.allclose(np.mean(norm.normalize(raw) ** 2, axis=0), 1.0, atol=1e-6)

    def test_empty(self):
        with pytest.raises(InvalidStateError):
            PriorNormalizer(2).normalize(np.zeros(2))


class TestBonus:
    def test_uninitialized_prior_raises(self):
        with pytest.raises(InvalidStateError):
            model().bonus(one_hot(0, 8))

    def test_prior_disabled_zero_net(self):
        m = model(prior_enabled=False)
        for a in m.trainable.arrays():
            a[...] = 0.0
        assert m.bonus(one_hot(1, 8)) == 0.0

    def test_novel_states_pseudocount_one(self, rng):
        dim = 200
        m = model(input_dim=dim, hidden_layers=(64, 64))
        for a in m.trainable.arrays():
            a[...] = 0.0
        buf = m.make_buffer()
        states = np.eye(dim)
        # statistics from a disjoint set of observed states
        for i in range(100):
            m.observe(buf, states[i], rng)
        novel = m.bonus(states[100:])
        assert 0.7 <= novel.mean() <= 1.3

    def test_bonus_is_pure_read(self, rng):
        m = model()
        buf = m.make_buffer()
        m.observe(buf, one_hot(0, 8), rng)
        before = (m.trainable.checksum(), m.normalizer.count)
        m.bonus(one_hot(3, 8))
        assert (m.trainable.checksum(), m.normalizer.count) == before

    def test_batch_and_single_agree(self, rng):
        m = model()
        m.observe(m.make_buffer(), one_hot(0, 8), rng)
        batch = m.bonus(np.eye(8))
        assert batch[3] == pytest.approx(m.bonus(one_hot(3, 8)), rel=1e-12)

    def test_sparse_and_dense_agree(self, rng):
        dense = model(seed=4)
        sparse = model(seed=4, sparse=True)
        for mdl in (dense, sparse):
            buf = mdl.make_buffer()
            r = np.random.default_rng(1)
            for i in (0, 3, 3, 5):
                mdl.observe(buf, one_hot(i, 8), r)
            for _ in range(5):
                mdl.train_step(buf, r, batch_size=4)
        assert np.allclose(dense.bonus(np.eye(8)), sparse.bonus(np.eye(8)), atol=1e-12)


class TestObserve:
    def test_zero_flip_label(self, rng):
        m = model(zero_flip_mode=True)
        buf = m.make_buffer()
        rid = m.observe(buf, one_hot(2, 8), rng)
        assert np.array_equal(buf.record(rid).coin_flips, np.zeros(20))

    def test_independent_labels_per_visit(self, rng):
        m = model()
        buf = m.make_buffer()
        a = m.observe(buf, one_hot(2, 8), rng)
        b = m.observe(buf, one_hot(2, 8), rng)
        assert a != b
        assert not np.array_equal(buf.record(a).coin_flips, buf.record(b).coin_flips)

    def test_normalizer_counts_visits(self, rng):
        m = model()
        buf = m.make_buffer()
        for k in range(5):
            m.observe(buf, one_hot(k, 8), rng)
            assert m.normalizer.count == k + 1

    def test_insert_priority_uses_current_estimate(self, rng):
        m = model(alpha=0.5)
        buf = m.make_buffer()
        m.observe(buf, one_hot(0, 8), rng)
        est = m.inverse_counts(one_hot(1, 8))
        rid = m.observe(buf, one_hot(1, 8), rng)
        # the normalizer absorbed state 1 before the estimate was taken
        est_after = m.inverse_counts(one_hot(1, 8))
        assert buf.record(rid).priority == pytest.approx(0.5 + 0.5 * est_after, rel=1e-12)
        assert est != est_after

    def test_rejects_batches(self, rng):
        m = model()
        with pytest.raises(InvalidArgumentError):
            m.observe(m.make_buffer(), np.eye(8)[:2], rng)


class TestTrainStep:
    def test_empty_buffer(self, rng):
        m = model()
        with pytest.raises(EmptyBufferError):
            m.train_step(m.make_buffer(), rng)

    def test_single_record_loss_decreases(self, rng):
        m = model(prior_enabled=False, hidden_layers=(), learning_rate=1e-2)
        buf = m.make_buffer()
        m.observe(buf, one_hot(0, 8), rng)
        losses = [m.train_step(buf, rng, batch_size=1) for _ in range(100)]
        assert all(b < a for a, b in zip(losses, losses[1:]))

    def test_zero_learning_rate(self, rng):
        m = model()
        buf = m.make_buffer()
        # one record, so every minibatch is the same
        m.observe(buf, one_hot(2, 8), rng)
        before = m.trainable.checksum()
        pr_before = buf.priorities().copy()
        losses = [m.train_step(buf, rng, batch_size=4, learning_rate=0.0) for _ in range(3)]
        assert m.trainable.checksum() == before
        assert losses[0] == losses[1] == losses[2]
        assert not np.array_equal(buf.priorities(), pr_before)

    def test_prior_frozen(self, rng):
        m = model()
        buf = m.make_buffer()
        for i in range(4):
            m.observe(buf, one_hot(i, 8), rng)
        for _ in range(20):
            m.train_step(buf, rng, batch_size=8, learning_rate=1e-2)
        assert m.prior_intact()

    def test_single_state_nine_visits(self):
        # E[bonus^2] = 1/9; Monte-Carlo over label redraws
        bonuses = []
        for seed in range(200):
            r = np.random.default_rng(seed)
            m = model(input_dim=1, hidden_layers=(), prior_enabled=False, prioritization_enabled=False,
                      seed=seed)
            buf = m.make_buffer()
            for _ in range(9):
                m.observe(buf, np.ones(1), r)
            for lr in (1e-1, 1e-2, 1e-3):
                for _ in range(200):
                    m.train_step(buf, r, batch_size=64, learning_rate=lr)
            bonuses.append(m.inverse_counts(np.ones(1)))
        est = np.array(bonuses)
        se = est.std(ddof=1) / np.sqrt(est.size)
        assert abs(est.mean() - 1 / 9) < 3 * se

    def test_state_round_trip(self, rng):
        m = model()
        buf = m.make_buffer()
        for i in range(4):
            m.observe(buf, one_hot(i, 8), rng)
        m.train_step(buf, rng, batch_size=4)
        copy = CfnModel.from_state_dict(m.state_dict())
        assert np.array_equal(copy.bonus(np.eye(8)), m.bonus(np.eye(8)))
