"""Synchronous lossless message passing, traffic accounting and locality audit."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

from .dynamics import EDEA_FAMILY, IDEA_FAMILY, NeighborMsg
from .graph import Graph

# what an agent may legitimately read besides in-neighbor messages
OWN_KINDS = {"own_state", "own_problem", "b_share", "params"}
FORBIDDEN_PAYLOADS = {"gradient"}


@dataclass
class ChannelStats:
    scalars_sent_per_round: int
    cumulative_scalars: int = 0
    rounds: int = 0

    def advance(self, rounds: int = 1) -> None:
        self.rounds += rounds
        self.cumulative_scalars += rounds * self.scalars_sent_per_round


def payload_multiplier(alg: str) -> int:
    """Number of p-vectors each agent broadcasts per round."""
    if alg in IDEA_FAMILY:
        return 1
    if alg in EDEA_FAMILY:
        return 2
    raise ValueError(f"{alg!r} is not a distributed algorithm")


def comm_cost(alg: str, g: Graph, p: int) -> ChannelStats:
    return ChannelStats(g.num_directed_edges * p * payload_multiplier(alg))


def exchange_round(g: Graph, outboxes: Sequence[NeighborMsg]) -> list[list[NeighborMsg]]:
    """Deliver each agent's broadcast to its out-neighbors; inboxes sorted by sender."""
    if len(outboxes) != g.n:
        raise ValueError(f"expected {g.n} outboxes, got {len(outboxes)}")
    by_sender = {m.sender: m for m in outboxes}
    if sorted(by_sender) != list(range(g.n)):
        raise ValueError("each agent must post exactly one outbox message")
    return [[by_sender[j] for j in g.in_neighbors(i)] for i in range(g.n)]


@dataclass
class Read:
    round: int
    reader: int
    kind: str
    source: int
    msg_round: Optional[int] = None
    payload: str = "state"


@dataclass
class Transcript:
    """Log of every value each agent read and every message delivered."""

    reads: list = field(default_factory=list)
    messages: list = field(default_factory=list)

    def read(self, rnd, reader, kind, source, msg_round=None, payload="state"):
        self.reads.append(Read(rnd, reader, kind, source, msg_round, payload))

    def deliver(self, rnd, inboxes, p):
        for i, box in enumerate(inboxes):
            for m in box:
                kind = "lam+r" if m.r is not None else "lam"
                self.messages.append((rnd, m.sender, i, kind, p * (2 if m.r is not None else 1)))

    def dump(self) -> str:
        return "".join(f"{r} {s} {t} {k} {c}\n" for r, s, t, k, c in self.messages)


@dataclass
class AuditResult:
    ok: bool
    violations: list

    def __bool__(self):
        return self.ok


def audit_locality(transcript: Transcript, g: Graph) -> AuditResult:
    bad = []
    for rd in transcript.reads:
        if rd.payload in FORBIDDEN_PAYLOADS:
            bad.append(f"round {rd.round}: agent {rd.reader} read {rd.payload} of agent {rd.source}")
        elif rd.kind in OWN_KINDS:
            if rd.source != rd.reader:
                bad.append(f"round {rd.round}: agent {rd.reader} read {rd.kind} of agent {rd.source}")
        elif rd.kind == "msg":
            if rd.source not in g.in_neighbors(rd.reader):
                bad.append(f"round {rd.round}: agent {rd.reader} read a message from non-neighbor {rd.source}")
            elif rd.msg_round != rd.round:
                bad.append(f"round {rd.round}: agent {rd.reader} read a stale message from round {rd.msg_round}")
        else:
            bad.append(f"round {rd.round}: agent {rd.reader} made an unclassified read {rd.kind!r}")
    return AuditResult(not bad, bad)
