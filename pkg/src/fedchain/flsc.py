"""Federated learning smart contract as a deterministic state machine.

State-changing methods validate everything before mutating, so a raised
:class:`ContractError` always leaves the state untouched. Each accepted
call returns the list of events it emitted.
"""
from __future__ import annotations

import copy
import enum
from dataclasses import dataclass, field
from typing import Optional

from .cas import Cid


class Phase(enum.IntEnum):
    OPEN = 0
    START = 1
    LEARNING = 2
    CLOSE = 3


class EventKind(str, enum.Enum):
    COLLABORATOR_ADDED = "CollaboratorAdded"
    MODEL_PUBLISHED = "ModelPublished"
    LEARNING_STARTED = "LearningStarted"
    WEIGHTS_COMMITTED = "WeightsCommitted"
    GLOBAL_PUBLISHED = "GlobalPublished"
    CLOSED = "Closed"


@dataclass(frozen=True)
class Event:
    kind: EventKind
    round: int
    actor: str
    payload: Optional[Cid] = None

    def to_dict(self):
        return {
            "kind": self.kind.value,
            "round": self.round,
            "actor": self.actor,
            "payload": self.payload.hex if self.payload is not None else None,
        }


class ContractError(Exception):
    reason = "error"


class Unauthorized(ContractError):
    reason = "unauthorized"


class PhaseViolation(ContractError):
    reason = "phase-violation"


class DuplicateCollaborator(ContractError):
    reason = "duplicate-collaborator"


class NoCollaborators(ContractError):
    reason = "no-collaborators"


class AlreadyCommitted(ContractError):
    reason = "already-committed"


class RoundMismatch(ContractError):
    reason = "round-mismatch"


class NotFound(ContractError, LookupError):
    reason = "not-found"


@dataclass
class ContractState:
    owner: str
    phase: Phase = Phase.OPEN
    round: int = 0
    collaborators: list = field(default_factory=list)
    model_cid: Optional[Cid] = None
    weight_commits: dict = field(default_factory=dict)
    global_commits: dict = field(default_factory=dict)

    def snapshot(self) -> "ContractState":
        return copy.deepcopy(self)


STATE_CHANGING = (
    "add_collaborator",
    "send_model",
    "start_learning",
    "send_weights_hash",
    "send_global_hash",
    "close",
)
OWNER_ONLY = frozenset(STATE_CHANGING) - {"send_weights_hash"}
VIEWS = ("get_model", "get_weight_commits", "get_global_commit", "get_phase_round")


class FLContract:
    def __init__(self, owner: str):
        self.state = ContractState(owner=owner)

    @property
    def owner(self):
        return self.state.owner

    def _require_owner(self, caller):
        if caller != self.state.owner:
            raise Unauthorized(f"{caller} is not the contract owner")

    def _require_phase(self, *phases):
        if self.state.phase not in phases:
            names = "/".join(p.name for p in phases)
            raise PhaseViolation(f"call requires phase {names}, contract is {self.state.phase.name}")

    # -- state-changing -------------------------------------------------

    def add_collaborator(self, caller: str, who: str) -> list[Event]:
        self._require_owner(caller)
        self._require_phase(Phase.OPEN)
        if who in self.state.collaborators:
            raise DuplicateCollaborator(who)
        self.state.collaborators.append(who)
        return [Event(EventKind.COLLABORATOR_ADDED, 0, who, None)]

    def send_model(self, caller: str, model_cid: Cid) -> list[Event]:
        self._require_owner(caller)
        self._require_phase(Phase.OPEN)
        if not self.state.collaborators:
            raise NoCollaborators("register at least one collaborator first")
        self.state.model_cid = model_cid
        self.state.phase = Phase.START
        return [Event(EventKind.MODEL_PUBLISHED, 0, caller, model_cid)]

    def start_learning(self, caller: str) -> list[Event]:
        self._require_owner(caller)
        self._require_phase(Phase.START)
        self.state.phase = Phase.LEARNING
        self.state.round = 1
        return [Event(EventKind.LEARNING_STARTED, 1, caller, None)]

    def send_weights_hash(self, caller: str, commit: Cid, round: Optional[int] = None) -> list[Event]:
        """Record ``caller``'s commitment for the current round.

        ``round``, when given, must match the contract round; commits aimed
        at a round that already closed are rejected rather than stored.
        """
        if caller not in self.state.collaborators:
            raise Unauthorized(f"{caller} is not a registered collaborator")
        self._require_phase(Phase.LEARNING)
        r = self.state.round
        if round is not None and round != r:
            raise RoundMismatch(f"commit for round {round}, contract is at round {r}")
        if caller in self.state.weight_commits.get(r, {}):
            raise AlreadyCommitted(f"{caller} already committed in round {r}")
        self.state.weight_commits.setdefault(r, {})[caller] = commit
        return [Event(EventKind.WEIGHTS_COMMITTED, r, caller, commit)]

    def send_global_hash(self, caller: str, commit: Cid) -> list[Event]:
        self._require_owner(caller)
        self._require_phase(Phase.LEARNING)
        r = self.state.round
        self.state.global_commits[r] = commit
        self.state.round = r + 1
        return [Event(EventKind.GLOBAL_PUBLISHED, r, caller, commit)]

    def close(self, caller: str) -> list[Event]:
        self._require_owner(caller)
        self._require_phase(Phase.LEARNING)
        self.state.phase = Phase.CLOSE
        return [Event(EventKind.CLOSED, self.state.round, caller, None)]

    # -- views ----------------------------------------------------------

    def get_model(self) -> Cid:
        if self.state.model_cid is None:
            raise NotFound("no model published")
        return self.state.model_cid

    def get_weight_commits(self, round: int) -> dict:
        if round not in self.state.weight_commits:
            if 1 <= round <= self.state.round and self.state.phase >= Phase.LEARNING:
                return {}
            raise NotFound(f"no commits for round {round}")
        return dict(self.state.weight_commits[round])

    def get_global_commit(self, round: int) -> Cid:
        try:
            return self.state.global_commits[round]
        except KeyError:
            raise NotFound(f"no global commit for round {round}") from None

    def get_phase_round(self) -> tuple:
        return self.state.phase, self.state.round
