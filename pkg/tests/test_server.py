import itertools

import numpy as np
import pytest
import sympy
from hypothesis import given, settings
from hypothesis import strategies as st

from fedfsnet import data, fsnet, nn, server
from fedfsnet.client import LocalTrainConfig
from fedfsnet.errors import ConfigError, DegeneracyError, DimensionError, EmptyInputError
from fedfsnet.metrics import evaluate


def blob_split(classes=10, per_class=60, dim=20, spread=0.3, seed=0, train_per_class=40):
    full = data.make_synthetic(classes, per_class, dim, spread, seed)
    pos = np.arange(len(full)) % per_class
    return full.subset(np.flatnonzero(pos < train_per_class)), \
        full.subset(np.flatnonzero(pos >= train_per_class))


class TestSelectClients:
    def test_full_participation(self):
        assert server.select_clients(100, 1.0, 0, 1) == list(range(100))

    def test_tenth(self):
        ids = server.select_clients(100, 0.1, 0, 3)
        assert len(ids) == 10 == len(set(ids))
        assert ids == sorted(ids) and all(0 <= i < 100 for i in ids)

    def test_deterministic_per_round(self):
        assert server.select_clients(100, 0.1, 5, 7) == server.select_clients(100, 0.1, 5, 7)
        picks = {tuple(server.select_clients(100, 0.1, 5, t)) for t in range(1, 11)}
        assert len(picks) > 1

    def test_at_least_one(self):
        assert len(server.select_clients(5, 0.01, 0, 1)) == 1

    def test_bad_fraction(self):
        with pytest.raises(ConfigError):
            server.select_clients(10, 0.0, 0, 1)

    def test_roughly_uniform(self):
        counts = np.zeros(20)
        for t in range(1, 2001):
            counts[server.select_clients(20, 0.25, 1, t)] += 1
        # 2000 draws of 5 from 20: each id expected 500 times, sd about 19
        assert np.abs(counts - 500).max() < 100


def const_params(spec, value):
    return nn.ModelParams.from_flat(spec, np.full(nn.zeros(spec).num_params, float(value)))


class TestAggregate:
    def test_single_client_bit_equal(self):
        p = nn.init_params(nn.ModelSpec((4, 5, 3)), 0)
        assert server.aggregate([(p, 17)]).bit_equal(p)

    def test_weighted(self):
        spec = nn.ModelSpec((1, 1))
        out = server.aggregate([(const_params(spec, 2.0), 1), (const_params(spec, 4.0), 3)])
        assert out.flat().tolist() == [3.5, 3.5]

    def test_mean_oracle(self):
        spec = nn.ModelSpec((6, 4, 3))
        ps = [nn.init_params(spec, s) for s in range(5)]
        out = server.aggregate([(p, 600) for p in ps])
        oracle = [sum(p.flat()[i] for p in ps) / 5 for i in range(out.num_params)]
        np.testing.assert_allclose(out.flat(), oracle, rtol=0, atol=1e-12)

    def test_same_params_fixed_point(self):
        p = nn.init_params(nn.ModelSpec((5, 7, 2)), 2)
        out = server.aggregate([(p, 10)] * 7)
        np.testing.assert_allclose(out.flat(), p.flat(), rtol=0, atol=1e-12)

    def test_reproducible_and_order_close(self):
        spec = nn.ModelSpec((8, 3))
        ups = [(nn.init_params(spec, s), 10 + s) for s in range(6)]
        a = server.aggregate(ups)
        assert a.bit_equal(server.aggregate(ups))
        np.testing.assert_allclose(server.aggregate(ups[::-1]).flat(), a.flat(), atol=1e-14)

    def test_inputs_unchanged(self):
        spec = nn.ModelSpec((3, 2))
        ups = [(nn.init_params(spec, s), 5) for s in range(3)]
        before = [p.copy() for p, _ in ups]
        server.aggregate(ups)
        assert all(p.bit_equal(b) for (p, _), b in zip(ups, before))

    def test_errors(self):
        with pytest.raises(EmptyInputError):
            server.aggregate([])
        with pytest.raises(DimensionError):
            server.aggregate([(nn.zeros(nn.ModelSpec((2, 3))), 1),
                              (nn.zeros(nn.ModelSpec((3, 2))), 1)])


class TestBeta:
    def test_schedule(self):
        assert all(server.beta_at(t) == 1.0 for t in range(1, 11))
        assert all(server.beta_at(t) == 0.1 for t in range(11, 21))
        assert server.beta_at(21) == 0.01
        assert server.beta_at(50) == 1e-4

    def test_custom(self):
        cfg = server.ServerConfig(beta0=0.5, beta_decay=0.5, beta_period=2)
        assert [server.beta_at(t, cfg) for t in range(1, 6)] == [0.5, 0.5, 0.25, 0.25, 0.125]

    def test_round_zero(self):
        with pytest.raises(ConfigError):
            server.beta_at(0)


def brute_rank(m):
    return sympy.Matrix(m.tolist()).rank()


class TestPrivacy:
    def test_single_client(self):
        assert server.privacy_rank_check([1.0], 3) == (3, 0, True)

    def test_three_clients(self):
        assert server.privacy_rank_check([1 / 3] * 3, 2) == (2, 4, False)

    def test_matrix_shape(self):
        m = server.aggregation_matrix([0.2, 0.3, 0.5], 2)
        assert m.shape == (2, 6)
        np.testing.assert_array_equal(m[:, 2:4], 0.3 * np.eye(2))

    def test_random_alphas_vs_oracles(self):
        rng = np.random.default_rng(0)
        alphas = rng.dirichlet(np.ones(5))
        m = server.aggregation_matrix(alphas, 4)
        rank, kernel, unique = server.privacy_rank_check(alphas, 4)
        assert rank == np.linalg.matrix_rank(m) == 4
        assert kernel == 20 - 4 and not unique

    def test_row_reduce_against_sympy(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            r, c, k = rng.integers(1, 7, size=3)
            m = rng.integers(-3, 4, size=(r, k)) @ rng.integers(-3, 4, size=(k, c))
            assert server.row_reduce_rank(m) == brute_rank(m)

    def test_sweep(self):
        rng = np.random.default_rng(2)
        for n, d in itertools.product(range(1, 9), range(1, 17)):
            alphas = rng.dirichlet(np.ones(n))
            rank, kernel, unique = server.privacy_rank_check(alphas, d)
            assert (rank, kernel) == (d, n * d - d)
            assert unique == (n == 1)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-5, 5).filter(lambda a: abs(a) > 1e-6), min_size=2, max_size=8),
           st.integers(1, 16))
    def test_nonunique_for_any_nonzero_weights(self, alphas, d):
        assert server.privacy_rank_check(alphas, d)[2] is False

    def test_zero_alphas(self):
        with pytest.raises(DegeneracyError):
            server.privacy_rank_check([0.0, 0.0], 2)

    def test_some_zero_alphas(self):
        assert server.privacy_rank_check([0.0, 2.0], 3) == (3, 3, False)


def centralized_oracle(train, test, idx, spec, seed, rounds, cfg):
    """Plain SGD on one data set with the same init and batch-order seeds; no server code."""
    params = nn.init_params(spec, [seed, 0])
    x, y = train.features[idx], train.labels[idx]
    out = []
    for t in range(1, rounds + 1):
        rng = np.random.default_rng([seed, 2, t, 0])
        for _ in range(cfg.local_epochs):
            order = rng.permutation(idx.size)
            total = 0.0
            for s in range(0, idx.size, cfg.batch_size):
                b = order[s:s + cfg.batch_size]
                lg = nn.ce_loss_grad(params, x[b], y[b])
                params = nn.sgd_step(params, lg.grads, cfg.lr)
                total += lg.loss * b.size
            last = total / idx.size
        acc = evaluate(params, test)
        out.append((acc, acc, last))
    return out


class TestRunTraining:
    def test_single_client_matches_centralized(self):
        train, test = blob_split()
        plan = data.partition_iid(train, 1, 0)
        spec = nn.ModelSpec((20, 12, 10))
        cfg = LocalTrainConfig(2, 25, 0.05)
        res = server.run_training(server.ServerConfig(1, 1.0, 4, seed=3), train, test, plan, spec, cfg)
        oracle = centralized_oracle(train, test, plan.assignments[0], spec, 3, 4, cfg)
        for m, (ag, al, loss) in zip(res.metrics, oracle):
            assert abs(m.acc_global - ag) <= 1e-12
            assert abs(m.acc_local - al) <= 1e-12
            assert abs(m.mean_train_loss - loss) <= 1e-12

    def test_beta_zero_fsnet_equals_fedavg(self):
        train, test = blob_split()
        plan = data.partition_noniid(train, 5, 10, 0)
        spec = nn.ModelSpec((20, 12, 10))
        cfg = LocalTrainConfig(1, 20, 0.05)
        runs = [server.run_training(server.ServerConfig(5, 0.6, 3, beta0=0.0, mode=mode, seed=1),
                                    train, test, plan, spec, cfg,
                                    fsnet.FsnetConfig(train_steps=20)).metrics
                for mode in ("fedavg", "fed_fsnet")]
        assert runs[0] == runs[1]

    def test_metrics_shape(self):
        train, test = blob_split()
        plan = data.partition_noniid(train, 5, 10, 0)
        spec = nn.ModelSpec((20, 12, 10))
        cfg = server.ServerConfig(5, 0.4, 4, beta_period=2, mode="fed_fsnet", seed=2)
        res = server.run_training(cfg, train, test, plan, spec, LocalTrainConfig(1, 20, 0.05),
                                  fsnet.FsnetConfig(train_steps=20))
        assert [m.round for m in res.metrics] == [1, 2, 3, 4]
        for m in res.metrics:
            assert 0.0 <= m.acc_global <= 1.0 and 0.0 <= m.acc_local <= 1.0
            assert m.beta == server.beta_at(m.round, cfg)
            assert len(m.selected_ids) == 2
        assert res.metrics[0].recon_initial is None
        assert all(m.recon_final is not None for m in res.metrics[1:])
        assert res.state.mimic is not None and len(res.state.mimic) == 60
        assert set(res.state.stats) == set().union(*(m.selected_ids for m in res.metrics))

    def test_threads_do_not_change_results(self):
        train, test = blob_split()
        plan = data.partition_noniid(train, 4, 8, 0)
        spec = nn.ModelSpec((20, 8, 10))
        cfg = server.ServerConfig(4, 1.0, 2, mode="fed_fsnet", seed=0)
        args = (cfg, train, test, plan, spec, LocalTrainConfig(1, 20, 0.05),
                fsnet.FsnetConfig(train_steps=10))
        seq = server.run_training(*args, threads=0)
        par = server.run_training(*args, threads=3)
        assert seq.metrics == par.metrics
        assert seq.state.global_params.bit_equal(par.state.global_params)

    def test_iid_beats_noniid(self):
        train, test = blob_split(spread=0.4)
        spec = nn.ModelSpec((20, 16, 10))
        cfg = LocalTrainConfig(5, 10, 0.05)
        for seed in range(3):
            accs = []
            for plan in (data.partition_iid(train, 10, seed),
                         data.partition_noniid(train, 10, 20, seed)):
                res = server.run_training(server.ServerConfig(10, 1.0, 50, seed=seed),
                                          train, test, plan, spec, cfg)
                accs.append(res.metrics[-1].acc_global)
            assert accs[0] > accs[1]

    def test_mismatches(self):
        train, test = blob_split()
        plan = data.partition_iid(train, 3, 0)
        with pytest.raises(ConfigError):
            server.run_training(server.ServerConfig(4, rounds=1), train, test, plan,
                                nn.ModelSpec((20, 10)), LocalTrainConfig())
        with pytest.raises(DimensionError):
            server.run_training(server.ServerConfig(3, rounds=1), train, test, plan,
                                nn.ModelSpec((19, 10)), LocalTrainConfig())

    def test_server_config_checks(self):
        for kwargs in (dict(fraction=0.0), dict(fraction=1.5), dict(rounds=0), dict(mode="x")):
            with pytest.raises(ConfigError):
                server.ServerConfig(**kwargs)

    def test_default_hyperparameters(self):
        cfg = server.ServerConfig()
        assert (cfg.num_clients, cfg.rounds, cfg.beta0, cfg.beta_decay, cfg.beta_period) == \
            (100, 50, 1.0, 0.1, 10)
