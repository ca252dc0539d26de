"""In-process master/worker simulation with exact communication accounting.

Workers only ever see their own :class:`Machine`; the master sees the
payloads they return. Reductions always run on the master in machine-index
order with compensated summation, so a thread pool changes wall time but
never the bits of the result.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from dissd.synth_data import ClusterData
from dissd.tensor_core import kahan_mean


def frozen(v) -> np.ndarray:
    """Read-only copy of ``v``."""
    out = np.array(v, dtype=float, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Machine:
    """One node: its labeled shard and (machine 1 only) unlabeled rows."""

    id: int
    x: np.ndarray
    y: np.ndarray
    unlabeled: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def covariates(self) -> np.ndarray:
        if self.unlabeled is None or self.unlabeled.shape[0] == 0:
            return self.x
        return np.vstack([self.x, self.unlabeled])


@dataclass
class CommLedger:
    floats_up: int = 0
    floats_down: int = 0
    rounds: int = 0

    @property
    def total(self) -> int:
        return self.floats_up + self.floats_down

    def snapshot(self) -> "CommLedger":
        return CommLedger(self.floats_up, self.floats_down, self.rounds)


@dataclass
class Counters:
    precision_builds: int = 0


@dataclass
class Cluster:
    machines: tuple[Machine, ...]
    threads: int = 1
    ledger: CommLedger = field(default_factory=CommLedger)
    counters: Counters = field(default_factory=Counters)

    def __post_init__(self):
        holders = [mc.id for mc in self.machines if mc.unlabeled is not None and mc.unlabeled.size]
        if holders and holders != [1]:
            raise ValueError(f"only machine 1 may hold unlabeled data, got {holders}")
        ids = [mc.id for mc in self.machines]
        if ids != list(range(1, len(ids) + 1)):
            raise ValueError("machines must be numbered 1..m in order")

    @classmethod
    def from_data(cls, data: ClusterData, threads: int = 1) -> "Cluster":
        machines = []
        for j, (x, y) in enumerate(zip(data.xs, data.ys), start=1):
            unl = data.unlabeled if j == 1 else None
            machines.append(Machine(j, x, y, unl))
        return cls(tuple(machines), threads)

    @property
    def m(self) -> int:
        return len(self.machines)

    @property
    def n(self) -> int:
        return self.machines[0].n

    @property
    def p(self) -> int:
        return self.machines[0].x.shape[1]

    @property
    def master(self) -> Machine:
        return self.machines[0]

    def broadcast(self, payload) -> np.ndarray:
        """Send a vector to every machine; returns the immutable copy they see."""
        out = frozen(np.atleast_1d(payload))
        self.ledger.floats_down += self.m * out.size
        return out

    def run_on_workers(self, task: Callable[[Machine], object]) -> list:
        """Evaluate ``task`` on every machine; results come back in machine order."""
        if self.threads <= 1:
            return [task(mc) for mc in self.machines]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            return list(pool.map(task, self.machines))

    def gather_reduce(self, payloads: Sequence) -> np.ndarray | float:
        """Average one payload per machine, charging every gathered float."""
        if len(payloads) != self.m:
            missing = len(payloads) + 1
            raise ValueError(f"missing payload from machine {missing} (got {len(payloads)} of {self.m})")
        for j, v in enumerate(payloads, start=1):
            if v is None:
                raise ValueError(f"missing payload from machine {j}")
        arrays = [np.asarray(v, dtype=float) for v in payloads]
        self.ledger.floats_up += sum(a.size for a in arrays)
        return kahan_mean(arrays)

    def gather_scalars(self, payloads: Sequence[float]) -> float:
        return float(self.gather_reduce(payloads))
