from __future__ import annotations

import numpy as np
import pytest
from conftest import small_federation

from fedfta.aggregate import GssConfig
from fedfta.core import ParamVector, SeededRng, Stream
from fedfta.data import Dataset
from fedfta.errors import ArgumentError, ProtocolError
from fedfta.federation import (
    ClientNode,
    FullModelMsg,
    HeadOnlyMsg,
    InMemoryTransport,
    RoundConfig,
    UpdateMsg,
    dispatch_model,
    make_clients,
    run_round,
    run_training,
    select_participants,
)
from fedfta.model import LabeledBatch, base_features, local_update, loss_and_grad


class RecordingTransport(InMemoryTransport):
    def __init__(self):
        super().__init__()
        self.sent = []

    def to_client(self, client_id, msg):
        self.sent.append((client_id, msg))
        super().to_client(client_id, msg)


class TestSelection:
    def test_golden_triples(self):
        rng = SeededRng(42)
        assert select_participants(1, range(10), 3, rng) == [0, 3, 4]
        assert select_participants(2, range(10), 3, rng) == [0, 1, 6]

    def test_full_pool(self):
        assert select_participants(7, [5, 2, 9], 3, SeededRng(1)) == [2, 5, 9]

    def test_deterministic_and_sorted(self):
        a = select_participants(4, range(50), 10, SeededRng(8))
        assert a == select_participants(4, range(50), 10, SeededRng(8))
        assert a == sorted(set(a)) and len(a) == 10

    def test_uniform_over_pool(self):
        hits = np.zeros(10)
        for t in range(1, 3001):
            hits[select_participants(t, range(10), 3, SeededRng(0))] += 1
        assert np.all(np.abs(hits / 3000 - 0.3) < 0.03)

    @pytest.mark.parametrize("k", [0, 11])
    def test_bad_k(self, k):
        with pytest.raises(ArgumentError):
            select_participants(1, range(10), k, SeededRng(0))


class TestDispatch:
    def test_round_one_always_full(self, federation):
        state, clients, _ = federation
        state.registry[0] = True  # even a registered holder gets the full model in round 1
        assert isinstance(dispatch_model(state, clients[0]), FullModelMsg)

    def test_returning_vs_new(self, federation):
        state, clients, _ = federation
        state.t = 4  # dispatching for round 5
        state.registry[1] = True  # seen in an earlier round
        assert isinstance(dispatch_model(state, clients[1]), HeadOnlyMsg)
        assert isinstance(dispatch_model(state, clients[2]), FullModelMsg)
        assert state.registry[2] is True

    def test_unknown_client(self, federation):
        state, _, _ = federation
        stranger = ClientNode(99, Dataset(np.zeros((1, 4)), np.array([0]), 3))
        with pytest.raises(ProtocolError):
            dispatch_model(state, stranger)

    def test_client_rejects_second_base_and_orphan_head(self, federation):
        state, clients, _ = federation
        c = clients[0]
        with pytest.raises(ProtocolError):
            c.receive(HeadOnlyMsg(state.head.params))
        c.receive(FullModelMsg(state.base, state.head))
        with pytest.raises(ProtocolError):
            c.receive(FullModelMsg(state.base, state.head))

    def test_update_message_invariants(self):
        with pytest.raises(ProtocolError):
            UpdateMsg(0, ParamVector([1.0]), 0)


class TestRunRound:
    def test_single_client_fedavg_equals_local_update(self):
        state, clients, _ = small_federation(n_clients=1)
        cfg = RoundConfig(participants=1, local_epochs=2, eta=0.05, batch_size=8, aggregator="fedavg")
        rng = SeededRng(3)
        new, rec = run_round(state, clients, cfg, rng)
        c = clients[0]
        batch = LabeledBatch(base_features(state.base, c.shard.features), c.shard.labels)
        expected, _ = local_update(state.head, batch, 2, 0.05, 8, SeededRng(3, (Stream.CLIENT, 0, 1)))
        assert new.head.params == expected
        assert rec.sigma == 1.0 and rec.evaluations == 0 and new.t == 1

    def test_zero_eta_leaves_head(self, federation, rng):
        state, clients, _ = federation
        cfg = RoundConfig(participants=4, eta=0.0, aggregator="fta")
        new, rec = run_round(state, clients, cfg, rng)
        assert new.head.params == state.head.params
        assert rec.val_loss_before == rec.val_loss_after

    def test_two_clients_hand_blend(self):
        state, clients, _ = small_federation(n_clients=2)
        base = state.base
        shards = [Dataset(c.shard.features[:n], c.shard.labels[:n], 3) for c, n in zip(clients, (1, 3))]
        clients = make_clients_from(shards)
        cfg = RoundConfig(participants=2, local_epochs=1, eta=0.1, batch_size=3, aggregator="fedavg")
        new, _ = run_round(state, clients, cfg, SeededRng(0))
        steps = []
        for s in shards:
            _, g = loss_and_grad(state.head, LabeledBatch(base_features(base, s.features), s.labels))
            steps.append(state.head.params.values - 0.1 * g.values)
        np.testing.assert_allclose(new.head.params.values, 0.25 * steps[0] + 0.75 * steps[1], rtol=0, atol=1e-14)

    def test_state_not_mutated(self, federation, rng):
        state, clients, _ = federation
        before = (state.t, dict(state.registry), state.head.params)
        run_round(state, clients, RoundConfig(participants=2, eta=0.1), rng)
        assert (state.t, state.registry, state.head.params) == before

    def test_failing_client_aborts_round(self, federation, rng):
        state, clients, _ = federation

        class Broken(ClientNode):
            def train(self, cfg, rng):
                raise FloatingPointError("boom")

        clients = list(clients)
        clients[2] = Broken(2, clients[2].shard)
        with pytest.raises(ProtocolError) as info:
            run_round(state, clients, RoundConfig(participants=4, eta=0.1), rng)
        assert info.value.client_id == 2 and info.value.round_index == 1
        assert "client 2" in str(info.value)

    def test_too_many_rounds(self, federation, rng):
        state, clients, _ = federation
        state.t = state.total_rounds
        with pytest.raises(ProtocolError):
            run_round(state, clients, RoundConfig(participants=2), rng)

    @pytest.mark.parametrize("kwargs", [dict(participants=0), dict(local_epochs=-1), dict(eta=-1.0),
                                        dict(batch_size=0), dict(aggregator="median"), dict(workers=0)])
    def test_round_config_invariants(self, kwargs):
        with pytest.raises(ArgumentError):
            RoundConfig(**kwargs)


def make_clients_from(shards):
    return [ClientNode(k, s) for k, s in enumerate(shards)]


class TestRunTraining:
    def test_counts_rounds(self, federation, rng):
        state, clients, test = federation
        hist = run_training(state, clients, RoundConfig(participants=2, eta=0.1), 3, rng, test=test)
        assert [r.t for r in hist.records] == [1, 2, 3] and len(hist) == 3
        assert all(r.test_accuracy is not None for r in hist.records)

    def test_deterministic(self):
        runs = []
        for _ in range(2):
            state, clients, test = small_federation()
            hist = run_training(state, clients, RoundConfig(participants=3, eta=0.1), 4, SeededRng(5), test=test)
            runs.append([{k: v for k, v in r.as_dict().items() if k != "elapsed_s"} for r in hist.records])
        assert runs[0] == runs[1]

    def test_fedavg_sigma_is_one(self, federation, rng):
        state, clients, _ = federation
        hist = run_training(state, clients, RoundConfig(participants=3, eta=0.1, aggregator="fedavg"), 4, rng)
        assert all(r.sigma == 1.0 for r in hist.records)

    def test_fta_sigma_in_bracket(self, federation, rng):
        state, clients, _ = federation
        gss = GssConfig(0.0, 3.0, 0.05)
        hist = run_training(state, clients, RoundConfig(participants=3, eta=0.1, gss=gss), 4, rng)
        assert all(0.0 <= r.sigma <= 3.0 and r.evaluations > 0 for r in hist.records)
        assert all(r.val_loss_after <= r.val_loss_before + 1e-12 or r.sigma < 0.1 for r in hist.records)

    def test_protocol_safety_and_registry(self, rng):
        state, clients, _ = small_federation(n_clients=6, rounds=12)
        transport = RecordingTransport()
        seen = set()
        for _ in range(12):
            state, rec = run_round(state, clients, RoundConfig(participants=2, eta=0.1), rng, transport)
            for cid in rec.participants:
                seen.add(cid)
            assert all(state.registry[c] for c in seen)
        assert all(c.base_receipts == (1 if c.client_id in seen else 0) for c in clients)
        for cid in seen:
            kinds = [type(m) for c, m in transport.sent if c == cid]
            assert kinds[0] is FullModelMsg and all(k is HeadOnlyMsg for k in kinds[1:])

    def test_aggregation_barrier(self, rng):
        state, clients, _ = small_federation(n_clients=3)
        transport = RecordingTransport()
        heads = []
        for _ in range(4):
            state, _ = run_round(state, clients, RoundConfig(participants=3, eta=0.1), rng, transport)
            heads.append(state.head.params)
        # messages 3..5 are round 2, 6..8 round 3, 9..11 round 4
        for r in range(1, 4):
            for _, msg in transport.sent[3 * r:3 * r + 3]:
                assert isinstance(msg, HeadOnlyMsg) and msg.head == heads[r - 1]

    def test_scheduling_independence(self):
        results = []
        for workers in (1, 4):
            state, clients, test = small_federation(n_clients=6)
            cfg = RoundConfig(participants=4, eta=0.1, workers=workers)
            hist = run_training(state, clients, cfg, 4, SeededRng(9), test=test)
            results.append(([{k: v for k, v in r.as_dict().items() if k != "elapsed_s"} for r in hist.records],
                             hist.state.head.params))
        assert results[0] == results[1]

    def test_errors_annotated_with_round(self, federation, rng):
        state, clients, _ = federation

        class FailsLater(ClientNode):
            calls = 0

            def train(self, cfg, rng):
                FailsLater.calls += 1
                if FailsLater.calls > 1:
                    raise ValueError("bad shard")
                return super().train(cfg, rng)

        clients = [FailsLater(0, clients[0].shard)]
        with pytest.raises(ProtocolError) as info:
            run_training(state, clients, RoundConfig(participants=1, eta=0.1), 3, rng)
        assert info.value.round_index == 2 and str(info.value).startswith("round 2")

    def test_desk_scale_fta_reaches_090(self):
        from fedfta.config import config_from_dict
        from fedfta.runner import run_experiment

        # separation 6, noise 1, 10 IID clients, K=10, T=30, everything else default
        res = run_experiment(config_from_dict({"master_seed": 100, "rounds": 30, "separation": 6.0, "noise_std": 1.0}))
        assert res.final_accuracy >= 0.90
