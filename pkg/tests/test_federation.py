import inspect
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import fedcoreset.federation as federation
from fedcoreset.config import DatasetConfig, ExperimentConfig
from fedcoreset.data import ClientChunk, Dataset, NoiseSpec, make_blobs
from fedcoreset.errors import ConfigurationError
from fedcoreset.federation import (
    Algo,
    ClientState,
    CostLedger,
    ServerState,
    aggregate,
    client_update,
    compute_cost_ratio,
    fine_tune_on_server,
    parse_algo,
    prepare_experiment,
    run_round,
    run_training,
)
from fedcoreset.model import (
    ModelSpec,
    init_params,
    loss,
    mean_last_layer_grad,
    sgd_epochs,
)
from fedcoreset.seeding import derive_seed, spawn_rng
from worldgen import balanced_world


def tiny_cfg(**kw) -> ExperimentConfig:
    base = dict(
        dataset=DatasetConfig(num_blobs=4, dim=4, stds=(), samples_per_blob=40),
        num_clients=4,
        rounds=3,
        refresh_period=2,
        budget_fraction=0.2,
        local_epochs=1,
        local_lr=0.1,
        global_lr=1.0,
        dirichlet_alpha=0.4,
        val_frac=0.1,
        test_frac=0.2,
        seed=0,
    )
    base.update(kw)
    return ExperimentConfig(**base)


class TestAlgo:
    def test_parse_arms(self):
        assert parse_algo("gcfl") == Algo("gcfl")
        assert parse_algo("fedprox:0.5") == Algo("fedprox", mu=0.5)
        assert parse_algo("fedprox").mu == pytest.approx(0.1)
        with pytest.raises(ConfigurationError):
            parse_algo("gcfl:3")
        with pytest.raises(ConfigurationError):
            parse_algo("adaboost")


class TestClientUpdate:
    def make_state(self, epochs=1, n=20, lr=0.1):
        ds = make_blobs(4, 5, np.ones(4), n // 4, seed=0)
        chunk = ClientChunk(ds, np.ones(ds.n, dtype=bool), 0)
        return ClientState(chunk, None, local_lr=lr, local_epochs=epochs)

    def test_zero_epochs_zero_delta(self):
        state = self.make_state(epochs=0)
        theta = init_params(ModelSpec("softmax_regression", 5, 4), seed=1)
        delta = client_update(state, theta, np.arange(state.chunk.n), batch_size=8, seed=0)
        assert np.all(delta.values == 0.0)

    def test_single_full_batch_step_identity(self):
        state = self.make_state(epochs=1, lr=0.05)
        theta = init_params(ModelSpec("softmax_regression", 5, 4), seed=2)
        idx = np.arange(state.chunk.n)
        delta = client_update(state, theta, idx, batch_size=state.chunk.n, seed=0)
        grad = mean_last_layer_grad(theta, state.chunk.dataset).flat
        assert np.allclose(delta.values, -0.05 * grad, atol=1e-12)

    def test_prox_vanishes_at_anchor(self):
        state = self.make_state(epochs=1, lr=0.05)
        theta = init_params(ModelSpec("softmax_regression", 5, 4), seed=3)
        idx = np.arange(state.chunk.n)
        plain = client_update(state, theta, idx, batch_size=state.chunk.n, seed=0)
        proxed = client_update(
            state, theta, idx, (5.0, theta), batch_size=state.chunk.n, seed=0
        )
        # one step from the anchor itself: prox gradient mu*(theta-anchor)=0
        assert np.allclose(plain.values, proxed.values, atol=1e-12)

    def test_empty_subset_rejected(self):
        state = self.make_state()
        theta = init_params(ModelSpec("softmax_regression", 5, 4), seed=4)
        with pytest.raises(ValueError):
            client_update(state, theta, np.array([], dtype=int), batch_size=8, seed=0)

    def test_ledger_counts_sample_visits(self):
        state = self.make_state(epochs=3)
        theta = init_params(ModelSpec("softmax_regression", 5, 4), seed=5)
        ledger = CostLedger()
        client_update(state, theta, np.arange(10), batch_size=4, seed=0, ledger=ledger)
        assert ledger.sgd_sample_visits == 30


class TestAggregate:
    def make_server(self, values, lr=1.0):
        spec = ModelSpec("softmax_regression", 1, 1)
        p = init_params(spec, seed=0).with_values(np.asarray(values, dtype=float))
        val = Dataset(np.zeros((1, 1)), np.zeros(1, dtype=int), 1)
        return ServerState(p, 0, val, lr)

    def test_zero_deltas_keep_params(self):
        server = self.make_server([1.0, 2.0])
        out = aggregate(server, [server.params.with_values(np.zeros(2))])
        assert np.array_equal(out.values, [1.0, 2.0])

    def test_arithmetic_example(self):
        server = self.make_server([1.0, 1.0])
        deltas = [
            server.params.with_values(np.array([1.0, 0.0])),
            server.params.with_values(np.array([0.0, 1.0])),
        ]
        out = aggregate(server, deltas)
        assert np.array_equal(out.values, [1.5, 1.5])

    @given(seed=st.integers(0, 1000), n=st.integers(2, 8))
    @settings(max_examples=30, deadline=None)
    def test_permutation_invariance_exact(self, seed, n):
        rng = np.random.default_rng(seed)
        spec = ModelSpec("softmax_regression", 3, 1)  # 4 parameters
        p0 = init_params(spec, seed=0).with_values(rng.normal(size=4))
        val = Dataset(np.zeros((1, 3)), np.zeros(1, dtype=int), 1)
        server = ServerState(p0, 0, val, 1.0)
        deltas = [server.params.with_values(rng.normal(size=4)) for _ in range(n)]
        out1 = aggregate(server, deltas)
        perm = [deltas[i] for i in rng.permutation(n)]
        out2 = aggregate(server, perm)
        assert np.array_equal(out1.values, out2.values)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            aggregate(self.make_server([0.0]), [])

    def test_length_mismatch_rejected(self):
        server = self.make_server([1.0, 2.0])
        with pytest.raises(ValueError):
            aggregate(server, [server.params.with_values(np.zeros(3))])


class TestRunRound:
    def test_oversampling_rejected(self):
        cfg = tiny_cfg(clients_per_round=4)
        prepared = prepare_experiment(cfg)
        spec = ModelSpec("softmax_regression", prepared.input_dim, prepared.num_classes)
        server = ServerState(init_params(spec, 0), 0, prepared.val, 1.0)
        clients = [ClientState(c, None, 0.1, 1) for c in prepared.chunks[:2]]
        with pytest.raises(ConfigurationError):
            run_round(server, clients, Algo("fedavg"), cfg, 0,
                      spawn_rng(0, "sample", 0), CostLedger(), prepared.test)

    def test_skyline_trains_only_on_clean(self, monkeypatch):
        cfg = tiny_cfg(noise=NoiseSpec("closed_set", 0.4))
        prepared = prepare_experiment(cfg)
        seen: list[np.ndarray] = []
        real = federation.client_update

        def spy(state, theta, idx, *args, **kw):
            seen.append((state.chunk.clean_flags, np.asarray(idx)))
            return real(state, theta, idx, *args, **kw)

        monkeypatch.setattr(federation, "client_update", spy)
        run_training(cfg, Algo("skyline"), prepared)
        assert seen
        for flags, idx in seen:
            assert flags[idx].all()

    def test_gcfl_refresh_counter_k1_vs_k10(self):
        prepared = balanced_world(num_clients=4, per_class_per_client=5, num_classes=4)
        n_total = sum(c.n for c in prepared.chunks)
        evals = {}
        for k in (1, 10):
            cfg = tiny_cfg(num_clients=4, rounds=10, refresh_period=k, budget_fraction=0.25)
            result = run_training(cfg, Algo("gcfl"), prepared)
            evals[k] = result.ledger.per_sample_grad_evals
        assert evals[1] == 10 * n_total
        assert evals[10] == 1 * n_total

    def test_refresh_cadence_formula(self):
        prepared = balanced_world(num_clients=3, per_class_per_client=4, num_classes=5)
        n_total = sum(c.n for c in prepared.chunks)
        for rounds, k in [(7, 3), (9, 4), (12, 12), (5, 1)]:
            cfg = tiny_cfg(num_clients=3, rounds=rounds, refresh_period=k, budget_fraction=0.25)
            result = run_training(cfg, Algo("gcfl"), prepared)
            expected_events = 1 + (rounds - 1) // k
            assert result.ledger.per_sample_grad_evals == expected_events * n_total


class TestSingleClientEquivalence:
    def test_fedavg_equals_centralized_sgd(self):
        cfg = tiny_cfg(
            num_clients=1,
            clients_per_round=1,
            rounds=10,
            local_epochs=1,
            local_lr=0.1,
            global_lr=1.0,
            batch_size=10_000,  # full batch
        )
        prepared = prepare_experiment(cfg)
        fed = run_training(cfg, Algo("fedavg"), prepared)

        spec = ModelSpec("softmax_regression", prepared.input_dim, prepared.num_classes)
        theta = init_params(spec, derive_seed(cfg.seed, "init"))
        ds = prepared.chunks[0].dataset
        for t in range(cfg.rounds):
            theta = sgd_epochs(
                theta, ds, epochs=1, lr=0.1, batch_size=10_000,
                seed=derive_seed(cfg.seed, "client", 0, "round", t),
            )
        assert np.abs(fed.final_params.values - theta.values).max() <= 1e-12


class TestRunTraining:
    def test_zero_rounds(self):
        cfg = tiny_cfg(rounds=0)
        result = run_training(cfg, Algo("fedavg"))
        assert result.rounds == []
        spec = ModelSpec("softmax_regression", 4, 4)
        expect = init_params(spec, derive_seed(cfg.seed, "init"))
        assert np.array_equal(result.final_params.values, expect.values)

    def test_bitwise_deterministic(self):
        cfg = tiny_cfg(noise=NoiseSpec("closed_set", 0.3), rounds=4)
        a = run_training(cfg, Algo("gcfl"))
        b = run_training(cfg, Algo("gcfl"))
        assert np.array_equal(a.final_params.values, b.final_params.values)
        for ra, rb in zip(a.rounds, b.rounds):
            assert ra.test_accuracy == rb.test_accuracy
            assert ra.mean_train_loss == rb.mean_train_loss
            assert ra.coreset_clean_fraction == rb.coreset_clean_fraction

    def test_rounds_strictly_increasing_and_complete(self):
        cfg = tiny_cfg(rounds=5)
        result = run_training(cfg, Algo("fedavg"))
        assert [rm.round for rm in result.rounds] == list(range(5))

    def test_clean_fraction_only_for_coreset_algos(self):
        cfg = tiny_cfg(rounds=2)
        assert all(
            rm.coreset_clean_fraction is None
            for rm in run_training(cfg, Algo("fedavg")).rounds
        )
        assert all(
            rm.coreset_clean_fraction is not None
            for rm in run_training(cfg, Algo("random")).rounds
        )

    def test_ledger_counters_monotone(self):
        cfg = tiny_cfg(rounds=6, refresh_period=2)
        result = run_training(cfg, Algo("gcfl"))
        snaps = [rm.ledger_snapshot for rm in result.rounds]
        for a, b in zip(snaps, snaps[1:]):
            assert b.per_sample_grad_evals >= a.per_sample_grad_evals
            assert b.sgd_sample_visits >= a.sgd_sample_visits
            assert b.params_broadcast >= a.params_broadcast
            assert b.grads_broadcast >= a.grads_broadcast
            assert b.update_uploads >= a.update_uploads

    def test_zero_sample_clients_do_not_crash(self):
        # alpha small enough that some client very likely gets nothing
        cfg = tiny_cfg(num_clients=8, dirichlet_alpha=0.05, rounds=2)
        for kind in ("fedavg", "gcfl", "skyline", "random", "facility_location"):
            result = run_training(cfg, Algo(kind))
            assert len(result.rounds) == 2


class TestOneHiddenArchitecture:
    def test_gcfl_runs_with_hidden_layer(self):
        from fedcoreset.config import ModelConfig

        cfg = tiny_cfg(
            rounds=4,
            refresh_period=2,
            model=ModelConfig(arch="one_hidden", hidden_dim=6),
            noise=NoiseSpec("closed_set", 0.3),
        )
        result = run_training(cfg, Algo("gcfl"))
        assert len(result.rounds) == 4
        # broadcast rows sized by the hidden width, not the input width
        num_classes, h1 = 4, 6 + 1
        refreshes = 2  # rounds 0 and 2
        assert result.ledger.grads_broadcast == refreshes * 4 * num_classes * h1
        # whole model is larger than its softmax layer here
        assert result.final_params.values.size > num_classes * h1


class TestNoisePathsEndToEnd:
    def test_open_set_shrinks_task_and_runs(self):
        cfg = tiny_cfg(
            dataset=DatasetConfig(num_blobs=5, dim=4, stds=(), samples_per_blob=40),
            noise=NoiseSpec("open_set", 0.4),
            rounds=3,
            refresh_period=2,
        )
        prepared = prepare_experiment(cfg)
        assert prepared.num_classes == 3  # ceil(0.4 * 5) = 2 classes removed
        assert set(prepared.val.labels.tolist()) <= set(range(3))
        for kind in ("gcfl", "fedavg", "skyline"):
            result = run_training(cfg, Algo(kind), prepared)
            assert len(result.rounds) == 3
            assert result.final_params.num_classes == 3

    def test_attribute_noise_runs_with_flags(self):
        cfg = tiny_cfg(noise=NoiseSpec("attribute", 0.5, severity=5.0), rounds=2)
        prepared = prepare_experiment(cfg)
        corrupted = sum(int((~c.clean_flags).sum()) for c in prepared.chunks)
        assert corrupted > 0
        result = run_training(cfg, Algo("gcfl"), prepared)
        assert result.rounds[-1].coreset_clean_fraction is not None

    def test_fine_tuned_accuracy_reported(self):
        cfg = tiny_cfg(noise=NoiseSpec("closed_set", 0.4), rounds=3, fine_tune_epochs=20)
        result = run_training(cfg, Algo("fedavg"))
        assert result.fine_tuned_accuracy is not None
        assert 0.0 <= result.fine_tuned_accuracy <= 1.0
        untuned = run_training(replace(cfg, fine_tune_epochs=0), Algo("fedavg"))
        assert untuned.fine_tuned_accuracy is None


class TestFineTune:
    def test_zero_epochs_identity(self):
        prepared = prepare_experiment(tiny_cfg())
        p = init_params(ModelSpec("softmax_regression", 4, 4), seed=0)
        out = fine_tune_on_server(p, prepared.val, epochs=0, lr=0.1)
        assert out is p

    def test_loss_non_increasing_on_val(self):
        prepared = prepare_experiment(tiny_cfg())
        p = init_params(ModelSpec("softmax_regression", 4, 4), seed=1)
        before = loss(p, prepared.val)
        tuned = fine_tune_on_server(p, prepared.val, epochs=50, lr=0.05, seed=2)
        assert loss(tuned, prepared.val) <= before

    def test_empty_val_rejected(self):
        ds = make_blobs(2, 2, [1, 1], 5, seed=0)
        p = init_params(ModelSpec("softmax_regression", 2, 2), seed=0)
        with pytest.raises(ValueError):
            fine_tune_on_server(p, ds.subset([]), epochs=1, lr=0.1)


class TestCostRatio:
    def run_pair(self, rounds, k, prepared, budget_fraction=0.1):
        cfg = tiny_cfg(
            num_clients=len(prepared.chunks),
            rounds=rounds,
            refresh_period=k,
            budget_fraction=budget_fraction,
        )
        gcfl = run_training(cfg, Algo("gcfl"), prepared)
        fedavg = run_training(cfg, Algo("fedavg"), prepared)
        return compute_cost_ratio(gcfl.ledger, fedavg.ledger)

    def test_exact_closed_form(self):
        # b=10%, K=10, E=1, balanced 100-sample clients: 0.1 sgd + 0.1
        # amortized selection = 0.2 exactly
        prepared = balanced_world(num_clients=10, per_class_per_client=10)
        assert self.run_pair(20, 10, prepared) == pytest.approx(0.2, abs=0)

    def test_strictly_decreasing_in_k(self):
        prepared = balanced_world(num_clients=5, per_class_per_client=10)
        ratios = [self.run_pair(20, k, prepared) for k in (5, 10, 20)]
        assert ratios[0] > ratios[1] > ratios[2]

    def test_full_budget_never_refreshed_costs_one_plus_selection(self):
        # b=100% and K > T: identical sgd cost plus one initial selection
        prepared = balanced_world(num_clients=4, per_class_per_client=5, num_classes=5)
        rounds = 10
        ratio = self.run_pair(rounds, k=1000, prepared=prepared, budget_fraction=1.0)
        assert ratio == pytest.approx(1.0 + 1.0 / rounds, abs=0)

    def test_zero_denominator_rejected(self):
        with pytest.raises(ValueError):
            compute_cost_ratio(CostLedger(), CostLedger())


class TestCommunicationAccounting:
    def test_per_refresh_broadcast_size_and_amortized_overhead(self):
        prepared = balanced_world(num_clients=4, per_class_per_client=10,
                                  dim=10, num_classes=10)
        rounds, k = 20, 10
        cfg = tiny_cfg(num_clients=4, rounds=rounds, refresh_period=k,
                       budget_fraction=0.1)
        result = run_training(cfg, Algo("gcfl"), prepared)
        led = result.ledger
        c, h = 10, 10
        theta_size = c * (h + 1)  # softmax regression: whole model
        refreshes = 1 + (rounds - 1) // k
        assert led.grads_broadcast == refreshes * 4 * c * (h + 1)
        assert led.params_broadcast == rounds * 4 * theta_size
        # amortized extra values per round per client
        amortized = led.grads_broadcast / (rounds * 4)
        assert amortized == c * (h + 1) / k


class TestPrivacySurface:
    def test_selection_sees_only_gradient_rows(self, monkeypatch):
        cfg = tiny_cfg(rounds=2, refresh_period=1)
        prepared = prepare_experiment(cfg)
        captured = []
        real = federation.labelwise_omp_select

        def spy(chunk, params, server_rows, budget, sel_cfg):
            captured.append(server_rows)
            return real(chunk, params, server_rows, budget, sel_cfg)

        monkeypatch.setattr(federation, "labelwise_omp_select", spy)
        run_training(cfg, Algo("gcfl"), prepared)
        assert captured
        h1 = prepared.input_dim + 1
        for rows in captured:
            assert isinstance(rows, dict)
            for c, row in rows.items():
                assert isinstance(row, np.ndarray) and row.shape == (h1,)
                # the broadcast must not alias the validation set's memory
                assert not np.shares_memory(row, prepared.val.features)
                assert not np.shares_memory(row, prepared.val.labels)

    def test_client_side_signatures_take_no_dataset(self):
        from fedcoreset.coreset import labelwise_omp_select, omp_select

        for fn in (labelwise_omp_select, omp_select, client_update):
            for name, param in inspect.signature(fn).parameters.items():
                ann = str(param.annotation)
                assert "Dataset" not in ann, f"{fn.__name__}({name}) exposes a Dataset"
