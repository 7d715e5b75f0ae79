"""Serialized transaction executor standing in for a permissioned chain.

Gas is an affine function of the number of registered collaborators per
contract function. Reverted transactions are charged but change nothing.
"""
from __future__ import annotations

import enum
import threading
from dataclasses import dataclass, field
from typing import Optional

from . import flsc
from .flsc import ContractError, Event, FLContract

DEPLOY_GAS = 2151147
SEND_WEIGHTS_HASH_GAS = 1390385
MANAGER_INTERCEPT = 100000
MANAGER_SLOPE = 25000


class LedgerError(Exception):
    pass


class NotDeployed(LedgerError):
    pass


class AlreadyDeployed(LedgerError):
    pass


class StaleNonce(LedgerError):
    pass


class UnknownFunction(LedgerError):
    pass


@dataclass(frozen=True)
class GasCost:
    intercept: int
    slope: int = 0

    def __post_init__(self):
        if self.intercept < 0 or self.slope < 0:
            raise ValueError("gas coefficients must be non-negative")

    def at(self, n_collaborators: int) -> int:
        return self.intercept + self.slope * n_collaborators


def _default_costs():
    return {
        "add_collaborator": GasCost(MANAGER_INTERCEPT, MANAGER_SLOPE),
        "send_model": GasCost(MANAGER_INTERCEPT, 0),
        "start_learning": GasCost(MANAGER_INTERCEPT, MANAGER_SLOPE),
        "send_weights_hash": GasCost(SEND_WEIGHTS_HASH_GAS, 0),
        "send_global_hash": GasCost(MANAGER_INTERCEPT, MANAGER_SLOPE),
        "close": GasCost(MANAGER_INTERCEPT, MANAGER_SLOPE),
    }


@dataclass(frozen=True)
class GasSchedule:
    deploy_cost: int = DEPLOY_GAS
    costs: dict = field(default_factory=_default_costs)

    def __post_init__(self):
        if self.deploy_cost < 0:
            raise ValueError("deploy_cost must be non-negative")
        missing = set(flsc.STATE_CHANGING) - set(self.costs)
        if missing:
            raise ValueError(f"gas schedule missing functions: {sorted(missing)}")
        if self.costs["send_weights_hash"].slope != 0:
            raise ValueError("send_weights_hash must have zero slope")

    def gas_for(self, function: str, n_collaborators: int) -> int:
        if function in flsc.VIEWS:
            return 0
        try:
            cost = self.costs[function]
        except KeyError:
            raise UnknownFunction(function) from None
        return cost.at(n_collaborators)

    def with_overrides(self, overrides: Optional[dict]) -> "GasSchedule":
        """Return a copy with ``{"deploy_cost": int, fn: {"intercept", "slope"}}`` applied."""
        if not overrides:
            return self
        costs = dict(self.costs)
        deploy = self.deploy_cost
        for key, value in overrides.items():
            if key == "deploy_cost":
                deploy = int(value)
                continue
            if key not in costs:
                raise UnknownFunction(key)
            base = costs[key]
            costs[key] = GasCost(int(value.get("intercept", base.intercept)),
                                 int(value.get("slope", base.slope)))
        return GasSchedule(deploy_cost=deploy, costs=costs)

    def to_dict(self):
        return {
            "deploy_cost": self.deploy_cost,
            **{name: {"intercept": c.intercept, "slope": c.slope}
               for name, c in sorted(self.costs.items())},
        }


DEFAULT_SCHEDULE = GasSchedule()


def gas_for(function: str, n_collaborators: int, schedule: GasSchedule = DEFAULT_SCHEDULE) -> int:
    return schedule.gas_for(function, n_collaborators)


class Status(str, enum.Enum):
    ACCEPTED = "Accepted"
    REVERTED = "Reverted"


@dataclass(frozen=True)
class Transaction:
    sender: str
    function: str
    args: tuple = ()
    nonce: int = 0


@dataclass(frozen=True)
class Receipt:
    tx_index: int
    sender: str
    function: str
    status: Status
    gas_used: int
    events: tuple = ()
    reason: Optional[str] = None

    @property
    def accepted(self):
        return self.status is Status.ACCEPTED


class Ledger:
    def __init__(self):
        self._lock = threading.RLock()
        self._contract: Optional[FLContract] = None
        self.schedule: Optional[GasSchedule] = None
        self._nonces: dict[str, int] = {}
        self._events: list[Event] = []
        self.receipts: list[Receipt] = []

    @property
    def contract(self) -> FLContract:
        if self._contract is None:
            raise NotDeployed("no contract deployed")
        return self._contract

    def deploy(self, owner: str, schedule: GasSchedule = DEFAULT_SCHEDULE) -> Receipt:
        with self._lock:
            if self._contract is not None:
                raise AlreadyDeployed("contract already deployed")
            self._contract = FLContract(owner)
            self.schedule = schedule
            receipt = Receipt(len(self.receipts), owner, "deploy", Status.ACCEPTED,
                              schedule.deploy_cost, ())
            self.receipts.append(receipt)
            return receipt

    def next_nonce(self, sender: str) -> int:
        with self._lock:
            return self._nonces.get(sender, 0)

    def submit(self, tx: Transaction) -> Receipt:
        with self._lock:
            contract = self.contract
            if tx.function not in flsc.STATE_CHANGING:
                raise UnknownFunction(tx.function)
            expected = self._nonces.get(tx.sender, 0)
            if tx.nonce != expected:
                raise StaleNonce(f"{tx.sender}: nonce {tx.nonce}, expected {expected}")
            self._nonces[tx.sender] = expected + 1

            gas = self.schedule.gas_for(tx.function, len(contract.state.collaborators))
            index = len(self.receipts)
            try:
                events = getattr(contract, tx.function)(tx.sender, *tx.args)
            except ContractError as exc:
                receipt = Receipt(index, tx.sender, tx.function, Status.REVERTED, gas, (),
                                  exc.reason)
            else:
                self._events.extend(events)
                receipt = Receipt(index, tx.sender, tx.function, Status.ACCEPTED, gas,
                                  tuple(events))
            self.receipts.append(receipt)
            return receipt

    def transact(self, sender: str, function: str, *args) -> Receipt:
        """Submit with the sender's next nonce."""
        with self._lock:
            return self.submit(Transaction(sender, function, args, self.next_nonce(sender)))

    def view(self, function: str, *args):
        if function not in flsc.VIEWS:
            raise UnknownFunction(function)
        with self._lock:
            return getattr(self.contract, function)(*args)

    def events_since(self, cursor: int) -> tuple[list[Event], int]:
        with self._lock:
            if not 0 <= cursor <= len(self._events):
                raise ValueError(f"cursor {cursor} outside event log of length {len(self._events)}")
            return list(self._events[cursor:]), len(self._events)

    def total_gas(self) -> int:
        with self._lock:
            return sum(r.gas_used for r in self.receipts)
