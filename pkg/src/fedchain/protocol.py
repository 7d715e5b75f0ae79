"""Manager and collaborator actors driving one federated run.

A round has three stages: every live collaborator trains and commits, the
manager verifies and aggregates what was committed, and the collaborators
pick up the new global weights. :class:`Simulation` exposes the stages
separately so tests can inject faults between them; :func:`run_experiment`
chains them for a whole run.
"""
from __future__ import annotations

import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import sealbox
from .cas import Cid, ContentStore, NotFoundError
from .config import ExperimentConfig, validate
from .fl import (
    DecodeError,
    Dataset,
    Method,
    MetricsReport,
    TrainConfig,
    WeightVector,
    aggregate_mean,
    centralized_baseline,
    decode_weights,
    encode_weights,
    evaluate,
    init_weights,
    local_train,
    make_synthetic_dataset,
    partition,
)
from .flsc import EventKind, Phase
from .ledger import DEFAULT_SCHEDULE, Ledger, Receipt
from .sealbox import AuthenticityError, DecryptionError, SealedPayload, SealError

log = logging.getLogger(__name__)

MANAGER_ID = "manager"

TAMPER = "tamper"
DIGEST_MISMATCH = "digest-mismatch"
DECRYPT_FAILURE = "decrypt-failure"

_BUNDLE_MAGIC = b"FLG1"


class ProtocolError(RuntimeError):
    pass


def collaborator_id(index: int) -> str:
    return f"c{index:02d}"


@dataclass(frozen=True)
class FailureSchedule:
    """Crash-stop schedule: node id -> first round in which the node is silent."""

    fail_at: dict = field(default_factory=dict)

    def __post_init__(self):
        for node, r in self.fail_at.items():
            if r < 1:
                raise ValueError(f"{node}: fail_at_round must be >= 1")

    def alive(self, node: str, round: int) -> bool:
        r = self.fail_at.get(node)
        return r is None or round < r

    def failed_by(self, round: int) -> set:
        return {n for n, r in self.fail_at.items() if r <= round}


@dataclass(frozen=True)
class RoundOutcome:
    round: int
    submitters: tuple
    global_commit: Cid
    rejected: tuple = ()  # (node, reason) pairs
    aggregated: int = 0

    def to_dict(self):
        return {
            "round": self.round,
            "submitters": list(self.submitters),
            "rejected": [{"node": n, "reason": r} for n, r in self.rejected],
            "global_commit": self.global_commit.hex,
        }


@dataclass(frozen=True)
class ModelDescriptor:
    """What the manager publishes in step 2: layer widths plus the init seed.

    Collaborators rebuild the initial weights locally and check them against
    the Cid recorded on-ledger.
    """

    shapes: tuple
    init_seed: int

    def initial_weights(self) -> WeightVector:
        return init_weights(self.shapes, self.init_seed)

    def cid(self) -> Cid:
        return sealbox.digest(encode_weights(self.initial_weights()))


def pack_bundle(envelopes: dict) -> bytes:
    """Serialize ``{node_id: SealedPayload}`` in node order."""
    parts = [_BUNDLE_MAGIC, struct.pack("<I", len(envelopes))]
    for node in sorted(envelopes):
        name = node.encode()
        blob = envelopes[node].to_bytes()
        parts.append(struct.pack("<HI", len(name), len(blob)))
        parts.append(name)
        parts.append(blob)
    return b"".join(parts)


def unpack_bundle(blob: bytes) -> dict:
    if blob[:4] != _BUNDLE_MAGIC:
        raise sealbox.MalformedPayloadError("bad bundle header")
    try:
        (count,) = struct.unpack_from("<I", blob, 4)
        pos = 8
        out = {}
        for _ in range(count):
            n_name, n_blob = struct.unpack_from("<HI", blob, pos)
            pos += 6
            name = blob[pos:pos + n_name].decode()
            pos += n_name
            out[name] = SealedPayload.from_bytes(blob[pos:pos + n_blob])
            pos += n_blob
    except (struct.error, UnicodeDecodeError):
        raise sealbox.MalformedPayloadError("truncated bundle") from None
    if pos != len(blob):
        raise sealbox.MalformedPayloadError("trailing bytes after bundle")
    return out


class Collaborator:
    def __init__(self, node_id, keys, shard: Dataset, train_cfg: TrainConfig,
                 ledger: Ledger, store: ContentStore, manager_pk, seed: int, index: int):
        self.node_id = node_id
        self.keys = keys
        self.shard = shard
        self.train_cfg = train_cfg
        self.ledger = ledger
        self.store = store
        self.manager_pk = manager_pk
        self.seed = seed
        self.index = index
        self.weights: Optional[WeightVector] = None
        self.cursor = 0
        self.log: list = []

    def adopt_model(self, descriptor: ModelDescriptor):
        """Step 3: fetch the model reference from the contract and build it locally."""
        w0 = descriptor.initial_weights()
        on_chain = self.ledger.view("get_model")
        if sealbox.digest(encode_weights(w0)) != on_chain:
            raise ProtocolError(f"{self.node_id}: model descriptor does not match ledger")
        self.weights = w0

    def _round_seed(self, round):
        return int(np.random.SeedSequence((self.seed, 7, self.index, round)).generate_state(1)[0])

    def train_and_commit(self, round: int) -> Receipt:
        """Steps 4-5: train locally, seal to the manager, store, commit the digest."""
        cfg = self.train_cfg.with_seed(self._round_seed(round))
        w = local_train(self.weights, self.shard, cfg)
        envelope = sealbox.seal(encode_weights(w), self.keys.secret, self.manager_pk)
        cid = self.store.add(envelope.to_bytes(), self.node_id)
        receipt = self.ledger.transact(self.node_id, "send_weights_hash", cid, round)
        if not receipt.accepted:
            self.log.append((round, "commit-reverted", receipt.reason))
            log.warning("%s: commit for round %d reverted (%s)", self.node_id, round, receipt.reason)
        return receipt

    def fetch_global(self, round: int) -> bool:
        """Step 10: wait for the round's global digest, then retrieve and verify.

        Returns False while the manager has not yet published. On any
        verification failure the collaborator keeps its previous weights.
        """
        events, cursor = self.ledger.events_since(self.cursor)
        if not any(e.kind is EventKind.GLOBAL_PUBLISHED and e.round == round for e in events):
            return False
        self.cursor = cursor
        commit = self.ledger.view("get_global_commit", round)
        blob = self.store.cat(commit, self.node_id)
        if sealbox.digest(blob) != commit:
            self.log.append((round, DIGEST_MISMATCH, commit.hex))
            log.warning("%s: global payload for round %d fails digest check", self.node_id, round)
            return True
        try:
            envelope = unpack_bundle(blob)[self.node_id]
            plain = sealbox.open_sealed(envelope, self.keys.secret, self.manager_pk)
            w = decode_weights(plain)
        except (KeyError, SealError, DecodeError) as exc:
            self.log.append((round, TAMPER, str(exc)))
            log.warning("%s: cannot open global payload for round %d: %s", self.node_id, round, exc)
            return True
        if w.shapes != self.weights.shapes:
            self.log.append((round, TAMPER, "shape mismatch"))
            return True
        self.weights = w
        return True


class Manager:
    def __init__(self, keys, ledger: Ledger, store: ContentStore, collaborator_pks: dict,
                 weighted_mean=False, shard_sizes=None):
        self.keys = keys
        self.node_id = keys.owner
        self.ledger = ledger
        self.store = store
        self.collaborator_pks = collaborator_pks
        self.weighted_mean = weighted_mean
        self.shard_sizes = shard_sizes or {}
        self.weights: Optional[WeightVector] = None

    def bootstrap(self, descriptor: ModelDescriptor, schedule=DEFAULT_SCHEDULE):
        """Steps 1-2: deploy, register collaborators, publish the model, open round 1."""
        self.ledger.deploy(self.node_id, schedule)
        for node in self.collaborator_pks:
            self._must(self.ledger.transact(self.node_id, "add_collaborator", node))
        self.weights = descriptor.initial_weights()
        self._must(self.ledger.transact(self.node_id, "send_model", descriptor.cid()))
        self._must(self.ledger.transact(self.node_id, "start_learning"))

    def _must(self, receipt):
        if not receipt.accepted:
            raise ProtocolError(f"{receipt.function} reverted: {receipt.reason}")
        return receipt

    def _check(self, node, commit):
        """Retrieve, digest-check and open one contribution; returns (weights, reason)."""
        try:
            blob = self.store.cat(commit, self.node_id)
        except NotFoundError:
            return None, DIGEST_MISMATCH
        if sealbox.digest(blob) != commit:
            return None, DIGEST_MISMATCH
        try:
            envelope = SealedPayload.from_bytes(blob)
            if envelope.sender != node:
                return None, TAMPER
            plain = sealbox.open_sealed(envelope, self.keys.secret, self.collaborator_pks[node])
        except DecryptionError:
            return None, DECRYPT_FAILURE
        except (AuthenticityError, SealError):
            return None, TAMPER
        try:
            w = decode_weights(plain)
        except DecodeError:
            return None, TAMPER
        if w.shapes != self.weights.shapes:
            return None, TAMPER
        return w, None

    def run_round(self, round: int) -> RoundOutcome:
        """Steps 6-9 for ``round``."""
        phase, current = self.ledger.view("get_phase_round")
        if phase is not Phase.LEARNING or current != round:
            raise ProtocolError(f"manager expected round {round} in LEARNING, got {phase.name}/{current}")
        commits = self.ledger.view("get_weight_commits", round)
        valid, counts, rejected = [], [], []
        for node in sorted(commits):
            w, reason = self._check(node, commits[node])
            if reason is None:
                valid.append(w)
                counts.append(self.shard_sizes.get(node, 1))
            else:
                rejected.append((node, reason))
                log.info("round %d: excluding %s (%s)", round, node, reason)
        if valid:
            self.weights = aggregate_mean(valid, counts if self.weighted_mean else None)

        plain = encode_weights(self.weights)
        bundle = pack_bundle({
            node: sealbox.seal(plain, self.keys.secret, pk)
            for node, pk in self.collaborator_pks.items()
        })
        cid = self.store.add(bundle, self.node_id)
        self._must(self.ledger.transact(self.node_id, "send_global_hash", cid))
        return RoundOutcome(round, tuple(sorted(commits)), cid, tuple(rejected), len(valid))

    def close(self):
        return self._must(self.ledger.transact(self.node_id, "close"))


@dataclass
class RunArtifacts:
    config: ExperimentConfig
    outcomes: list
    metrics: list  # MetricsReport per round, global model on the test split
    centralized: Optional[MetricsReport]
    receipts: list
    events: list
    timings: list
    final_weights: WeightVector
    collaborator_logs: dict


class Simulation:
    """All actors of one run wired to a shared ledger and store."""

    def __init__(self, cfg: ExperimentConfig, persist_dir=None, clock=None):
        validate(cfg)
        self.cfg = cfg
        self.ledger = Ledger()
        self.store = ContentStore(persist_dir=persist_dir, latency_us=cfg.cas.latency_us,
                                  clock=clock)
        self.dataset = make_synthetic_dataset(
            cfg.seed, cfg.dataset.n_samples, cfg.dataset.n_features,
            cfg.dataset.class_proportions, class_sep=cfg.dataset.class_sep,
            modes_per_class=cfg.dataset.modes_per_class,
        )
        self.shards = partition(self.dataset, cfg.n_collaborators, cfg.partition.scheme,
                                seed=cfg.seed + 1, concentration=cfg.partition.concentration)
        self.train_cfg = TrainConfig(
            learning_rate=cfg.learning_rate, batch_size=cfg.batch_size,
            local_epochs=cfg.local_epochs, method=Method(cfg.method), mu=cfg.mu,
        )
        self.descriptor = ModelDescriptor(cfg.shapes, cfg.seed)
        self.failures = FailureSchedule({collaborator_id(f.node): f.round for f in cfg.failures})

        manager_keys = sealbox.keygen(cfg.seed, MANAGER_ID)
        self.collaborators = []
        for i, shard in enumerate(self.shards):
            node = collaborator_id(i)
            self.collaborators.append(Collaborator(
                node, sealbox.keygen(cfg.seed, node), shard, self.train_cfg,
                self.ledger, self.store, manager_keys.public, cfg.seed, i,
            ))
        self.manager = Manager(
            manager_keys, self.ledger, self.store,
            {c.node_id: c.keys.public for c in self.collaborators},
            weighted_mean=cfg.weighted_mean,
            shard_sizes={c.node_id: len(c.shard) for c in self.collaborators},
        )
        self.outcomes: list[RoundOutcome] = []
        self.metrics: list[MetricsReport] = []
        self._pool = ThreadPoolExecutor(max_workers=8) if cfg.scheduler == "threads" else None

    def live(self, round):
        return [c for c in self.collaborators if self.failures.alive(c.node_id, round)]

    def _each(self, fn, nodes):
        if self._pool is None:
            return [fn(c) for c in nodes]
        return list(self._pool.map(fn, nodes))

    def bootstrap(self):
        schedule = DEFAULT_SCHEDULE.with_overrides(self.cfg.gas_schedule)
        self.manager.bootstrap(self.descriptor, schedule)
        for c in self.collaborators:
            c.adopt_model(self.descriptor)

    def collaborators_commit(self, round):
        return self._each(lambda c: c.train_and_commit(round), self.live(round))

    def manager_round(self, round) -> RoundOutcome:
        outcome = self.manager.run_round(round)
        self.outcomes.append(outcome)
        self.metrics.append(evaluate(self.manager.weights, self.dataset.test))
        return outcome

    def collaborators_fetch(self, round):
        done = self._each(lambda c: c.fetch_global(round), self.live(round))
        if not all(done):
            raise ProtocolError(f"round {round}: global weights were not published")

    def run_round(self, round) -> RoundOutcome:
        self.collaborators_commit(round)
        outcome = self.manager_round(round)
        self.collaborators_fetch(round)
        return outcome

    def finish(self) -> RunArtifacts:
        self.manager.close()
        if self._pool is not None:
            self._pool.shutdown()
        central = None
        if self.cfg.centralized_baseline:
            _, central = centralized_baseline(
                self.dataset, self.train_cfg.with_seed(self.cfg.seed), self.cfg.shapes,
                epochs=self.cfg.rounds * self.cfg.local_epochs, init_seed=self.cfg.seed,
            )
        events, _ = self.ledger.events_since(0)
        return RunArtifacts(
            config=self.cfg,
            outcomes=list(self.outcomes),
            metrics=list(self.metrics),
            centralized=central,
            receipts=list(self.ledger.receipts),
            events=events,
            timings=self.store.timings(),
            final_weights=self.manager.weights,
            collaborator_logs={c.node_id: list(c.log) for c in self.collaborators},
        )


def run_experiment(cfg: ExperimentConfig, persist_dir=None, clock=None) -> RunArtifacts:
    sim = Simulation(cfg, persist_dir=persist_dir, clock=clock)
    sim.bootstrap()
    for r in range(1, cfg.rounds + 1):
        sim.run_round(r)
    return sim.finish()

