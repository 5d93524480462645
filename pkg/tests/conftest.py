from __future__ import annotations

import numpy as np
import pytest

from fedfta.aggregate import LocalUpdate
from fedfta.core import SeededRng, Stream
from fedfta.data import generate_blobs, partition_iid, stratified_split
from fedfta.federation import FederationState, make_clients
from fedfta.model import ClassifierHead, FrozenBase, LabeledBatch, base_features, local_update, mean_loss


def small_federation(n_clients=4, seed=0, hidden=(6,), counts=(40, 40, 40), feature_dim=8, rounds=10):
    """Tiny blobs federation: (state, clients, test set)."""
    ds = generate_blobs(counts, 4, 3.0, 1.0, SeededRng(seed, Stream.DATA))
    train, val, test = stratified_split(ds, 0.2, 0.2, SeededRng(seed, Stream.SPLIT))
    plan = partition_iid(train, n_clients, SeededRng(seed, Stream.PARTITION))
    clients = make_clients(train, plan)
    base = FrozenBase.random(4, feature_dim, SeededRng(seed, Stream.BASE_INIT))
    head = ClassifierHead.initialize(feature_dim, list(hidden), len(counts), SeededRng(seed, Stream.HEAD_INIT))
    state = FederationState.initial(base, head, val, rounds, [c.client_id for c in clients])
    return state, clients, test


def overshoot_instance(seed: int):
    """Two-class logistic head, three ordinary clients and one with a far-overshooting step."""
    ds = generate_blobs([120, 120], 5, 2.5, 1.0, SeededRng(seed, Stream.DATA))
    train, val, _ = stratified_split(ds, 0.2, 0.25, SeededRng(seed, Stream.SPLIT))
    base = FrozenBase.random(5, 10, SeededRng(seed, Stream.BASE_INIT))
    head = ClassifierHead.initialize(10, [], 2, SeededRng(seed, Stream.HEAD_INIT))
    plan = partition_iid(train, 4, SeededRng(seed, Stream.PARTITION))
    ups = []
    for k, idx in enumerate(plan.assignments):
        shard = train.subset(list(idx))
        batch = LabeledBatch(base_features(base, shard.features), shard.labels)
        eta = 10.0 if k == 0 else 0.2
        params, n = local_update(head, batch, 2, eta, 16, SeededRng(seed, (Stream.CLIENT, k, 1)))
        ups.append(LocalUpdate(k, params, n))
    val_batch = LabeledBatch(base_features(base, val.features), val.labels)
    return head, ups, lambda p: mean_loss(head.with_params(p), val_batch)


@pytest.fixture
def federation():
    return small_federation()


@pytest.fixture
def rng():
    return SeededRng(123)


@pytest.fixture
def np_rng():
    return np.random.default_rng(0)
