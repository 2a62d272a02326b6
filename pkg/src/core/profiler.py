"""
Op counting for the tensor kernels

Kernels call `record_op` with their multiply-accumulate count. Nothing is
recorded unless a `count_ops()` block is active. `op_scope` labels nest with
'/' so the analytic cost model can be compared stage by stage.
"""

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional


@dataclass
class OpRecord:
    """One executed matmul or convolution"""
    kind: str
    macs: int
    scope: str
    tag: Optional[str] = None


@dataclass
class OpCounter:
    """Accumulates OpRecords for the ops run inside a count_ops() block"""
    records: List[OpRecord] = field(default_factory=list)

    def macs(self, scope: Optional[str] = None) -> int:
        """Total multiply-accumulates, optionally restricted to a scope prefix"""
        return sum(r.macs for r in self.records if _in_scope(r.scope, scope))

    def flops(self, scope: Optional[str] = None) -> int:
        """Total FLOPs (2 x multiply-accumulates)"""
        return 2 * self.macs(scope)

    def count(self, tag: Optional[str] = None, scope: Optional[str] = None) -> int:
        """Number of recorded ops matching a tag and scope prefix"""
        return sum(
            1 for r in self.records
            if (tag is None or r.tag == tag) and _in_scope(r.scope, scope)
        )

    def by_scope(self) -> Dict[str, int]:
        """MACs grouped by exact scope label"""
        totals: Dict[str, int] = {}
        for r in self.records:
            totals[r.scope] = totals.get(r.scope, 0) + r.macs
        return totals


class _State(threading.local):
    def __init__(self):
        self.counters: List[OpCounter] = []
        self.scopes: List[str] = []


_state = _State()


def _in_scope(label: str, prefix: Optional[str]) -> bool:
    if prefix is None:
        return True
    return label == prefix or label.startswith(prefix + "/")


@contextmanager
def count_ops() -> Iterator[OpCounter]:
    """Record every kernel executed in the block"""
    counter = OpCounter()
    _state.counters.append(counter)
    try:
        yield counter
    finally:
        _state.counters.remove(counter)


@contextmanager
def op_scope(name: str) -> Iterator[None]:
    """Label ops executed in the block; labels nest with '/'"""
    _state.scopes.append(name)
    try:
        yield
    finally:
        _state.scopes.pop()


def current_scope() -> str:
    return "/".join(_state.scopes)


def record_op(kind: str, macs: int, tag: Optional[str] = None) -> None:
    if not _state.counters:
        return
    rec = OpRecord(kind=kind, macs=int(macs), scope=current_scope(), tag=tag)
    for counter in _state.counters:
        counter.records.append(rec)
