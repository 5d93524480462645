"""Server round loop for federated transfer learning.

Per round the server picks participants at random, sends each either the
full model (base + head, first contact) or just the head (returning
participant), lets every participant train locally, then aggregates the
returned heads with FedAvg or FTA. Only heads are aggregated; the base is
frozen and identical everywhere.

Randomness: participant selection uses stream ``(SELECTION, t)`` and client
``k`` trains in round ``t`` with stream ``(CLIENT, k, t)``, so neither the
participation pattern nor the execution order perturbs anyone's draws.
"""

from __future__ import annotations

import logging
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Protocol, Sequence, Union

import numpy as np

from .aggregate import GssConfig, LocalUpdate, fedavg_aggregate, fta_aggregate
from .core import ParamVector, SeededRng, Stream
from .data import Dataset, PartitionPlan
from .errors import ArgumentError, FedFtaError, ProtocolError
from .metrics import confusion_from_predictions, multiclass_metrics
from .model import (
    ClassifierHead,
    FrozenBase,
    FullModel,
    LabeledBatch,
    base_features,
    head_forward,
    local_update,
    mean_loss,
)

log = logging.getLogger(__name__)

AGGREGATORS = ("fedavg", "fta")


# -- messages ---------------------------------------------------------------

@dataclass(frozen=True)
class FullModelMsg:
    base: FrozenBase
    head: ClassifierHead


@dataclass(frozen=True)
class HeadOnlyMsg:
    head: ParamVector


@dataclass(frozen=True)
class UpdateMsg:
    client_id: int
    head: ParamVector
    n_k: int

    def __post_init__(self):
        if self.n_k < 1:
            raise ProtocolError(f"update from client {self.client_id} reports n_k={self.n_k}", self.client_id)


Message = Union[FullModelMsg, HeadOnlyMsg, UpdateMsg]


class Transport(Protocol):
    def to_client(self, client_id: int, msg: Message) -> None: ...
    def receive(self, client_id: int) -> Message: ...
    def to_server(self, msg: UpdateMsg) -> None: ...
    def collect(self) -> list[UpdateMsg]: ...


class InMemoryTransport:
    """Queues living in one process. deque appends/pops are thread-safe."""

    def __init__(self):
        self._down: dict[int, deque] = {}
        self._up: deque = deque()

    def to_client(self, client_id: int, msg: Message) -> None:
        self._down.setdefault(client_id, deque()).append(msg)

    def receive(self, client_id: int) -> Message:
        q = self._down.get(client_id)
        if not q:
            raise ProtocolError(f"no message waiting for client {client_id}", client_id)
        return q.popleft()

    def to_server(self, msg: UpdateMsg) -> None:
        self._up.append(msg)

    def collect(self) -> list[UpdateMsg]:
        out = []
        while self._up:
            out.append(self._up.popleft())
        return out


# -- configuration and state ------------------------------------------------

@dataclass(frozen=True)
class RoundConfig:
    participants: int = 10
    local_epochs: int = 1
    eta: float = 0.001
    batch_size: int = 32
    aggregator: str = "fta"
    gss: GssConfig = field(default_factory=GssConfig)
    optimizer: str = "sgd"
    workers: int = 1

    def __post_init__(self):
        if self.participants < 1:
            raise ArgumentError(f"participants must be >= 1, got {self.participants}")
        if self.local_epochs < 0:
            raise ArgumentError(f"local_epochs must be >= 0, got {self.local_epochs}")
        if not self.eta >= 0:
            raise ArgumentError(f"eta must be >= 0, got {self.eta}")
        if self.batch_size < 1:
            raise ArgumentError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.aggregator not in AGGREGATORS:
            raise ArgumentError(f"aggregator must be one of {AGGREGATORS}, got {self.aggregator!r}")
        if self.workers < 1:
            raise ArgumentError(f"workers must be >= 1, got {self.workers}")


@dataclass
class FederationState:
    """Server-side state. ``head`` is the global classifier for the next round."""

    base: FrozenBase
    head: ClassifierHead
    validation: Dataset
    total_rounds: int
    t: int = 0
    registry: dict[int, bool] = field(default_factory=dict)
    _val_batch: Optional[LabeledBatch] = field(default=None, repr=False, compare=False)

    @classmethod
    def initial(
        cls,
        base: FrozenBase,
        head: ClassifierHead,
        validation: Dataset,
        total_rounds: int,
        client_ids: Sequence[int],
    ) -> "FederationState":
        if total_rounds < 1:
            raise ArgumentError(f"total_rounds must be >= 1, got {total_rounds}")
        if len(validation) == 0:
            raise ArgumentError("the server needs a nonempty validation set")
        return cls(base, head, validation, total_rounds, 0, {int(c): False for c in client_ids})

    @property
    def val_batch(self) -> LabeledBatch:
        if self._val_batch is None:
            self._val_batch = LabeledBatch(base_features(self.base, self.validation.features), self.validation.labels)
        return self._val_batch

    def validation_loss(self, params: ParamVector) -> float:
        return mean_loss(self.head.with_params(params), self.val_batch)

    def full_model(self) -> FullModel:
        return FullModel(self.base, self.head)

    def copy(self) -> "FederationState":
        return replace(self, registry=dict(self.registry))


class ClientNode:
    """A participant holding a private shard of raw inputs."""

    def __init__(self, client_id: int, shard: Dataset):
        if len(shard) == 0:
            raise ArgumentError(f"client {client_id} has an empty shard")
        self.client_id = int(client_id)
        self.shard = shard
        self.base: Optional[FrozenBase] = None
        self.local_head: Optional[ClassifierHead] = None
        self._batch: Optional[LabeledBatch] = None
        self.base_receipts = 0

    @property
    def has_base(self) -> bool:
        return self.base is not None

    def receive(self, msg: Message) -> None:
        if isinstance(msg, FullModelMsg):
            if self.has_base:
                raise ProtocolError(f"client {self.client_id} received the base model twice", self.client_id)
            self.base = msg.base
            self.base_receipts += 1
            self._batch = LabeledBatch(base_features(msg.base, self.shard.features), self.shard.labels)
            self.local_head = msg.head
        elif isinstance(msg, HeadOnlyMsg):
            if not self.has_base:
                raise ProtocolError(f"client {self.client_id} got a head before any base model", self.client_id)
            self.local_head = self.local_head.with_params(msg.head)
        else:
            raise ProtocolError(f"client {self.client_id} cannot handle {type(msg).__name__}", self.client_id)

    def train(self, cfg: RoundConfig, rng: SeededRng) -> UpdateMsg:
        if not self.has_base or self.local_head is None:
            raise ProtocolError(f"client {self.client_id} asked to train without a model", self.client_id)
        params, n_k = local_update(
            self.local_head, self._batch, cfg.local_epochs, cfg.eta, cfg.batch_size, rng, cfg.optimizer
        )
        self.local_head = self.local_head.with_params(params)
        return UpdateMsg(self.client_id, params, n_k)


def make_clients(train: Dataset, plan: PartitionPlan) -> list[ClientNode]:
    plan.validate(len(train))
    return [ClientNode(k, train.subset(idx)) for k, idx in enumerate(plan.assignments)]


# -- protocol steps ---------------------------------------------------------

def select_participants(t: int, client_ids: Sequence[int], k: int, rng: SeededRng) -> list[int]:
    """``k`` distinct ids drawn uniformly without replacement, sorted ascending.

    The draw depends only on the master seed and ``t``.
    """
    pool = sorted(int(c) for c in client_ids)
    if not 1 <= k <= len(pool):
        raise ArgumentError(f"cannot select {k} participants from a pool of {len(pool)}")
    if k == len(pool):
        return pool
    gen = SeededRng(rng.seed, (Stream.SELECTION, t)).generator
    chosen = gen.choice(len(pool), size=k, replace=False)
    return sorted(pool[i] for i in chosen)


def dispatch_model(state: FederationState, client: ClientNode) -> Message:
    """Full model on first contact (or in round 1), head only afterwards.

    Marks the client as holding the full model in ``state.registry``.
    """
    cid = client.client_id
    if cid not in state.registry:
        raise ProtocolError(f"client {cid} is not registered", cid)
    if state.t + 1 == 1 or not state.registry[cid]:
        state.registry[cid] = True
        return FullModelMsg(state.base, state.head)
    return HeadOnlyMsg(state.head.params)


@dataclass
class RoundRecord:
    t: int
    participants: list[int]
    sigma: float
    val_loss_before: float
    val_loss_after: float
    evaluations: int
    test_accuracy: Optional[float] = None
    test_macro_f1: Optional[float] = None
    elapsed_s: float = 0.0

    def as_dict(self) -> dict:
        return {
            "t": self.t,
            "participants": list(self.participants),
            "sigma": self.sigma,
            "val_loss_before": self.val_loss_before,
            "val_loss_after": self.val_loss_after,
            "evaluations": self.evaluations,
            "test_accuracy": self.test_accuracy,
            "test_macro_f1": self.test_macro_f1,
            "elapsed_s": self.elapsed_s,
        }


def _train_one(client: ClientNode, transport: Transport, cfg: RoundConfig, rng: SeededRng, t: int) -> None:
    try:
        client.receive(transport.receive(client.client_id))
        transport.to_server(client.train(cfg, SeededRng(rng.seed, (Stream.CLIENT, client.client_id, t))))
    except ProtocolError as exc:
        exc.round_index = t
        raise
    except (FedFtaError, ValueError, ArithmeticError) as exc:
        raise ProtocolError(f"client {client.client_id} failed in round {t}: {exc}", client.client_id, t) from exc


def run_round(
    state: FederationState,
    clients: Sequence[ClientNode],
    cfg: RoundConfig,
    rng: SeededRng,
    transport: Optional[Transport] = None,
) -> tuple[FederationState, RoundRecord]:
    """One server round. ``state`` is left untouched; a new state is returned.

    A failing participant aborts the round with ProtocolError and nothing is
    aggregated. Client nodes keep whatever local state they reached.
    """
    started = time.perf_counter()
    by_id = {c.client_id: c for c in clients}
    if cfg.participants > len(by_id):
        raise ArgumentError(f"cannot select {cfg.participants} participants from {len(by_id)} clients")
    new = state.copy()
    t = state.t + 1
    if t > state.total_rounds:
        raise ProtocolError(f"round {t} exceeds the configured {state.total_rounds} rounds", round_index=t)
    transport = transport or InMemoryTransport()

    chosen = select_participants(t, list(by_id), cfg.participants, rng)
    for cid in chosen:
        transport.to_client(cid, dispatch_model(new, by_id[cid]))

    if cfg.workers > 1 and len(chosen) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [pool.submit(_train_one, by_id[cid], transport, cfg, rng, t) for cid in chosen]
            for f in futures:
                f.result()
    else:
        for cid in chosen:
            _train_one(by_id[cid], transport, cfg, rng, t)

    updates = sorted(transport.collect(), key=lambda m: m.client_id)
    if [u.client_id for u in updates] != chosen:
        raise ProtocolError(f"round {t}: expected updates from {chosen}, got {[u.client_id for u in updates]}",
                            round_index=t)
    local = [LocalUpdate(u.client_id, u.head, u.n_k) for u in updates]

    global_params = state.head.params
    loss_before = new.validation_loss(global_params)
    if cfg.aggregator == "fta":
        result = fta_aggregate(global_params, local, new.validation_loss, cfg.gss)
        params, sigma, n_evals = result.new_head, result.sigma, len(result.evaluations)
    else:
        params, sigma, n_evals = fedavg_aggregate(global_params, local), 1.0, 0

    new.head = state.head.with_params(params)
    new.t = t
    record = RoundRecord(
        t=t,
        participants=chosen,
        sigma=float(sigma),
        val_loss_before=loss_before,
        val_loss_after=new.validation_loss(params),
        evaluations=n_evals,
        elapsed_s=time.perf_counter() - started,
    )
    return new, record


@dataclass
class TrainingHistory:
    records: list[RoundRecord]
    state: FederationState

    def __len__(self) -> int:
        return len(self.records)

    @property
    def full_model(self) -> FullModel:
        return self.state.full_model()


def evaluate(model: FullModel, test: Dataset):
    """(confusion matrix, macro report) of ``model`` on ``test``."""
    cm = confusion_from_predictions(test.labels, model.predict(test.features), test.n_classes)
    return cm, multiclass_metrics(cm)


def run_training(
    state: FederationState,
    clients: Sequence[ClientNode],
    cfg: RoundConfig,
    rounds: int,
    rng: SeededRng,
    test: Optional[Dataset] = None,
    transport: Optional[Transport] = None,
) -> TrainingHistory:
    """Run ``rounds`` sequential rounds, scoring the global model on ``test`` after each."""
    if rounds < 1:
        raise ArgumentError(f"rounds must be >= 1, got {rounds}")
    records = []
    test_features = base_features(state.base, test.features) if test is not None else None
    for _ in range(rounds):
        try:
            state, rec = run_round(state, clients, cfg, rng, transport)
        except ProtocolError as exc:
            if exc.round_index is None:
                exc.round_index = state.t + 1
            exc.args = (f"round {exc.round_index}: {exc.args[0]}",)
            raise
        if test is not None:
            pred = np.argmax(head_forward(state.head, test_features), axis=1)
            cm = confusion_from_predictions(test.labels, pred, test.n_classes)
            report = multiclass_metrics(cm)
            rec.test_accuracy = report.accuracy
            rec.test_macro_f1 = report.f1
        log.debug("round %d sigma=%.4f val %.5f -> %.5f", rec.t, rec.sigma, rec.val_loss_before, rec.val_loss_after)
        records.append(rec)
    return TrainingHistory(records, state)
