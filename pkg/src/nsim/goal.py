"""Schedule IR for communication patterns, a GOAL-style text format, and generators.

A Schedule is a per-rank DAG of send/recv/calc operations with explicit
rank-local dependencies. The text form is a small, LL(1) language:

    num_ranks 4
    rank 0 {
      o0: send 16b to 1
      o1: recv 16b from 3
      o2: calc 5000
      o2 requires o0, o1
    }
    ...

One statement per label: sends/recvs carry a byte size with a ``b`` suffix and
a peer rank, calcs carry a duration in ns. ``LABEL requires LABEL, ...`` adds
dependencies between ops of the same rank (forward references are allowed
inside a block). ``#`` starts a comment; whitespace is otherwise free-form.

Message matching is in-order per (src, dst, size) triple: the j-th send of a
given triple pairs with the j-th matching recv. All generators here are
unambiguous under that rule.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Iterator, Mapping

__all__ = [
    "SEND",
    "RECV",
    "CALC",
    "ScheduleOp",
    "Schedule",
    "GoalSyntaxError",
    "ScheduleValidationError",
    "parse_goal",
    "emit_goal",
    "validate",
    "gen_dissemination",
    "gen_ring_allreduce",
    "gen_compute_collective",
    "schedule_to_json",
    "schedule_from_json",
]

SEND = "send"
RECV = "recv"
CALC = "calc"

_KINDS = (SEND, RECV, CALC)


class GoalSyntaxError(ValueError):
    """Malformed schedule text; carries 1-based line and column."""

    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"line {line}, col {col}: {message}")
        self.line = line
        self.col = col


class ScheduleValidationError(ValueError):
    """Structurally well-formed schedule that violates schedule semantics."""

    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = list(violations)


@dataclass(frozen=True)
class ScheduleOp:
    """One operation of one rank.

    id is the rank-local position (ops are numbered 0..n-1 in program order).
    size holds bytes for send/recv and a duration in ns for calc. requires
    references rank-local op ids only.
    """

    id: int
    kind: str
    peer: int | None
    size: int
    requires: frozenset[int] = frozenset()

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ValueError(f"unknown op kind {self.kind!r}")
        if self.id < 0:
            raise ValueError("op id must be >= 0")
        object.__setattr__(self, "requires", frozenset(self.requires))
        if self.kind == CALC:
            if self.peer is not None:
                raise ValueError("calc ops take no peer")
            if self.size < 0:
                raise ValueError("calc duration must be >= 0 ns")
        else:
            if self.peer is None or self.peer < 0:
                raise ValueError(f"{self.kind} needs a peer rank >= 0")
            if self.size < 1:
                raise ValueError(f"{self.kind} size must be >= 1 byte")


@dataclass(frozen=True)
class Schedule:
    """Per-rank ordered op lists plus provenance metadata.

    metadata records the generator name and parameters; it is excluded from
    equality so that round-tripping through text (where it travels as
    comments) compares schedules structurally.
    """

    nranks: int
    ops: tuple[tuple[ScheduleOp, ...], ...]
    metadata: Mapping[str, object] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if self.nranks < 1:
            raise ValueError("nranks must be >= 1")
        if len(self.ops) != self.nranks:
            raise ValueError(f"expected {self.nranks} rank op lists, got {len(self.ops)}")
        object.__setattr__(self, "ops", tuple(tuple(rank_ops) for rank_ops in self.ops))
        for rank, rank_ops in enumerate(self.ops):
            ids = {op.id for op in rank_ops}
            for pos, op in enumerate(rank_ops):
                if op.id != pos:
                    raise ValueError(f"rank {rank}: op ids must be 0..n-1 in order")
                if not op.requires <= ids:
                    missing = sorted(op.requires - ids)
                    raise ValueError(f"rank {rank} op {op.id}: unknown requires {missing}")

    def op_count(self) -> int:
        return sum(len(r) for r in self.ops)


# ---------------------------------------------------------------------------
# Parsing

_KEYWORDS = frozenset({"num_ranks", "rank", "send", "recv", "calc", "to", "from", "requires"})

_TOKEN_RE = re.compile(
    r"""(?P<ws>[^\S\n]+)
      | (?P<nl>\n)
      | (?P<comment>\#[^\n]*)
      | (?P<size>\d+b\b)
      | (?P<number>\d+\b)
      | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
      | (?P<punct>[{}:,])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> Iterator[_Tok]:
    line, line_start = 1, 0
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise GoalSyntaxError(
                f"unexpected character {text[pos]!r}", line, pos - line_start + 1
            )
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind not in ("ws", "comment"):
            tok_kind = kind
            tok_text = m.group()
            if kind == "name" and tok_text in _KEYWORDS:
                tok_kind = tok_text
            yield _Tok(tok_kind, tok_text, line, m.start() - line_start + 1)
        pos = m.end()
    yield _Tok("eof", "", line, len(text) - line_start + 1)


class _Parser:
    def __init__(self, text: str):
        self._toks = list(_tokenize(text))
        self._i = 0

    def _peek(self) -> _Tok:
        return self._toks[self._i]

    def _next(self) -> _Tok:
        tok = self._toks[self._i]
        if tok.kind != "eof":
            self._i += 1
        return tok

    def _expect(self, kind: str, what: str) -> _Tok:
        tok = self._next()
        if tok.kind != kind:
            raise GoalSyntaxError(f"expected {what}, found {tok.text or 'end of input'!r}",
                                  tok.line, tok.col)
        return tok

    def _number(self, what: str) -> int:
        return int(self._expect("number", what).text)

    def _size(self, what: str) -> int:
        tok = self._next()
        if tok.kind != "size":
            raise GoalSyntaxError(f"expected {what} (e.g. 16b), found {tok.text!r}",
                                  tok.line, tok.col)
        return int(tok.text[:-1])

    def parse(self) -> Schedule:
        self._expect("num_ranks", "'num_ranks'")
        nranks_tok = self._peek()
        nranks = self._number("rank count")
        if nranks < 1:
            raise GoalSyntaxError("num_ranks must be >= 1", nranks_tok.line, nranks_tok.col)
        rank_ops: list[tuple[ScheduleOp, ...] | None] = [None] * nranks
        while self._peek().kind != "eof":
            tok = self._expect("rank", "'rank' block")
            rank_tok = self._peek()
            rank = self._number("rank id")
            if rank >= nranks:
                raise GoalSyntaxError(f"rank {rank} out of range (num_ranks {nranks})",
                                      rank_tok.line, rank_tok.col)
            if rank_ops[rank] is not None:
                raise GoalSyntaxError(f"duplicate block for rank {rank}", tok.line, tok.col)
            rank_ops[rank] = self._rank_block(rank, nranks)
        ops = tuple(block if block is not None else () for block in rank_ops)
        schedule = Schedule(nranks=nranks, ops=ops)
        violations = validate(schedule)
        if violations:
            raise ScheduleValidationError(violations)
        return schedule

    def _rank_block(self, rank: int, nranks: int) -> tuple[ScheduleOp, ...]:
        tok = self._next()
        if tok.kind != "punct" or tok.text != "{":
            raise GoalSyntaxError("expected '{'", tok.line, tok.col)
        raw_ops: list[tuple[str, str, int | None, int, _Tok]] = []
        labels: dict[str, int] = {}
        deps: list[tuple[str, list[str], _Tok]] = []
        while True:
            tok = self._next()
            if tok.kind == "punct" and tok.text == "}":
                break
            if tok.kind == "eof":
                raise GoalSyntaxError("unterminated rank block", tok.line, tok.col)
            if tok.kind != "name":
                raise GoalSyntaxError(f"expected a label, found {tok.text!r}", tok.line, tok.col)
            label = tok.text
            nxt = self._next()
            if nxt.kind == "punct" and nxt.text == ":":
                if label in labels:
                    raise GoalSyntaxError(f"duplicate label {label!r}", tok.line, tok.col)
                labels[label] = len(raw_ops)
                raw_ops.append(self._op_stmt(label, rank, nranks, tok))
            elif nxt.kind == "requires":
                targets = [self._expect("name", "a label").text]
                while self._peek().kind == "punct" and self._peek().text == ",":
                    self._next()
                    targets.append(self._expect("name", "a label").text)
                deps.append((label, targets, tok))
            else:
                raise GoalSyntaxError(
                    f"expected ':' or 'requires' after label {label!r}", nxt.line, nxt.col
                )
        requires: list[set[int]] = [set() for _ in raw_ops]
        for label, targets, tok in deps:
            if label not in labels:
                raise GoalSyntaxError(f"dangling dependency label {label!r}", tok.line, tok.col)
            for target in targets:
                if target not in labels:
                    raise GoalSyntaxError(f"dangling dependency label {target!r}",
                                          tok.line, tok.col)
                requires[labels[label]].add(labels[target])
        return tuple(
            ScheduleOp(id=i, kind=kind, peer=peer, size=size, requires=frozenset(requires[i]))
            for i, (label, kind, peer, size, _) in enumerate(raw_ops)
        )

    def _op_stmt(self, label: str, rank: int, nranks: int, at: _Tok):
        tok = self._next()
        if tok.kind == SEND:
            size = self._size("message size")
            self._expect("to", "'to'")
            peer_tok = self._peek()
            peer = self._number("peer rank")
            self._check_peer(peer, rank, nranks, peer_tok)
            return (label, SEND, peer, size, at)
        if tok.kind == RECV:
            size = self._size("message size")
            self._expect("from", "'from'")
            peer_tok = self._peek()
            peer = self._number("peer rank")
            self._check_peer(peer, rank, nranks, peer_tok)
            return (label, RECV, peer, size, at)
        if tok.kind == CALC:
            return (label, CALC, None, self._number("duration in ns"), at)
        raise GoalSyntaxError(f"expected send/recv/calc, found {tok.text!r}", tok.line, tok.col)

    @staticmethod
    def _check_peer(peer: int, rank: int, nranks: int, tok: _Tok) -> None:
        if peer >= nranks:
            raise GoalSyntaxError(f"peer {peer} out of range (num_ranks {nranks})",
                                  tok.line, tok.col)
        if peer == rank:
            raise GoalSyntaxError(f"peer must differ from own rank {rank}", tok.line, tok.col)


def parse_goal(text: str) -> Schedule:
    """Parse schedule text into a validated Schedule.

    Raises GoalSyntaxError (with line/column) for malformed text and
    ScheduleValidationError for well-formed text that is not a runnable
    schedule (unmatched messages, dependency cycles).
    """
    return _Parser(text).parse()


def emit_goal(schedule: Schedule) -> str:
    """Canonical text form; parse_goal(emit_goal(s)) equals s structurally.

    Metadata is emitted as leading ``#`` comments (ignored on parse). Labels
    are ``o<id>``; requires lines directly follow their op, deps sorted.
    """
    lines: list[str] = []
    for key in sorted(schedule.metadata):
        value = " ".join(str(schedule.metadata[key]).split())  # keep comments one line
        lines.append(f"# {key}: {value}")
    lines.append(f"num_ranks {schedule.nranks}")
    for rank, rank_ops in enumerate(schedule.ops):
        if not rank_ops:
            lines.append(f"rank {rank} {{ }}")
            continue
        lines.append(f"rank {rank} {{")
        for op in rank_ops:
            if op.kind == SEND:
                lines.append(f"  o{op.id}: send {op.size}b to {op.peer}")
            elif op.kind == RECV:
                lines.append(f"  o{op.id}: recv {op.size}b from {op.peer}")
            else:
                lines.append(f"  o{op.id}: calc {op.size}")
            if op.requires:
                reqs = ", ".join(f"o{r}" for r in sorted(op.requires))
                lines.append(f"  o{op.id} requires {reqs}")
        lines.append("}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Validation

def validate(schedule: Schedule) -> list[str]:
    """Collect schedule-semantics violations; empty list means runnable.

    Checks that send and recv multisets match per (src, dst, size) and that
    every rank's dependency graph is acyclic. Violations are returned as data
    rather than raised so callers can report them all at once.
    """
    violations: list[str] = []
    sends: dict[tuple[int, int, int], int] = {}
    recvs: dict[tuple[int, int, int], int] = {}
    for rank, rank_ops in enumerate(schedule.ops):
        for op in rank_ops:
            if op.kind == CALC:
                continue
            if op.peer == rank:
                violations.append(f"rank {rank} op {op.id}: peer equals own rank")
                continue
            if op.peer >= schedule.nranks:
                violations.append(f"rank {rank} op {op.id}: peer {op.peer} out of range")
                continue
            if op.kind == SEND:
                key = (rank, op.peer, op.size)
                sends[key] = sends.get(key, 0) + 1
            else:
                key = (op.peer, rank, op.size)
                recvs[key] = recvs.get(key, 0) + 1
    for key in sorted(set(sends) | set(recvs)):
        ns, nr = sends.get(key, 0), recvs.get(key, 0)
        if ns != nr:
            src, dst, size = key
            violations.append(
                f"unmatched messages {src}->{dst} size {size}: {ns} send(s), {nr} recv(s)"
            )
    for rank, rank_ops in enumerate(schedule.ops):
        if _has_cycle(rank_ops):
            violations.append(f"rank {rank}: dependency cycle")
    return violations


def _has_cycle(rank_ops: tuple[ScheduleOp, ...]) -> bool:
    indeg = [len(op.requires) for op in rank_ops]
    dependents: list[list[int]] = [[] for _ in rank_ops]
    for op in rank_ops:
        for dep in op.requires:
            dependents[dep].append(op.id)
    stack = [i for i, d in enumerate(indeg) if d == 0]
    seen = 0
    while stack:
        i = stack.pop()
        seen += 1
        for j in dependents[i]:
            indeg[j] -= 1
            if indeg[j] == 0:
                stack.append(j)
    return seen != len(rank_ops)


# ---------------------------------------------------------------------------
# Generators

def gen_dissemination(nranks: int, size: int) -> Schedule:
    """Butterfly dissemination: ceil(log2 P) rounds of exchange with (r +- 2^k) mod P.

    Round k has each rank send ``size`` bytes to (r + 2^k) mod P and receive
    from (r - 2^k) mod P; every op of round k+1 requires both round-k ops, the
    tightly coupled variant used by barriers and small allreduces.
    """
    if nranks < 2:
        raise ValueError(f"dissemination needs nranks >= 2, got {nranks}")
    if size < 1:
        raise ValueError(f"size must be >= 1 byte, got {size}")
    rounds = (nranks - 1).bit_length()
    all_ops = []
    for r in range(nranks):
        ops = []
        for k in range(rounds):
            req = frozenset((2 * k - 2, 2 * k - 1)) if k > 0 else frozenset()
            ops.append(ScheduleOp(2 * k, SEND, (r + (1 << k)) % nranks, size, req))
            ops.append(ScheduleOp(2 * k + 1, RECV, (r - (1 << k)) % nranks, size, req))
        all_ops.append(tuple(ops))
    return Schedule(
        nranks=nranks,
        ops=tuple(all_ops),
        metadata={"generator": "dissemination", "nranks": nranks, "size_bytes": size},
    )


def gen_ring_allreduce(nranks: int, size: int, reduce_cost_per_chunk: int = 0) -> Schedule:
    """Ring allreduce: P-1 reduce-scatter steps then P-1 allgather steps.

    Each step receives a chunk of ceil(size/P) bytes from the left neighbour
    and sends one to the right; reduce-scatter steps reduce the received chunk
    (a calc of ``reduce_cost_per_chunk`` ns, emitted only when > 0). A step's
    send requires the previous step's recv (and its calc where present), which
    is the long dependency chain that makes the pattern bandwidth-optimal but
    sensitive to any single slow transfer.
    """
    if nranks < 2:
        raise ValueError(f"ring allreduce needs nranks >= 2, got {nranks}")
    if size < nranks:
        raise ValueError(f"size ({size}) must be >= nranks ({nranks}) so chunks are non-empty")
    if reduce_cost_per_chunk < 0:
        raise ValueError("reduce cost must be >= 0 ns")
    chunk = -(-size // nranks)
    steps = 2 * (nranks - 1)
    reduce_steps = nranks - 1
    all_ops = []
    for r in range(nranks):
        left = (r - 1) % nranks
        right = (r + 1) % nranks
        ops: list[ScheduleOp] = []
        prev_recv = -1
        prev_calc = -1
        for step in range(steps):
            req: set[int] = set()
            if step > 0:
                req.add(prev_recv)
                if prev_calc >= 0:
                    req.add(prev_calc)
            ops.append(ScheduleOp(len(ops), SEND, right, chunk, frozenset(req)))
            recv_id = len(ops)
            ops.append(ScheduleOp(recv_id, RECV, left, chunk))
            prev_recv, prev_calc = recv_id, -1
            if step < reduce_steps and reduce_cost_per_chunk > 0:
                calc_id = len(ops)
                ops.append(ScheduleOp(calc_id, CALC, None, reduce_cost_per_chunk,
                                      frozenset((recv_id,))))
                prev_calc = calc_id
        all_ops.append(tuple(ops))
    return Schedule(
        nranks=nranks,
        ops=tuple(all_ops),
        metadata={
            "generator": "ring_allreduce",
            "nranks": nranks,
            "size_bytes": size,
            "chunk_bytes": chunk,
            "reduce_cost_ns": reduce_cost_per_chunk,
        },
    )


def gen_compute_collective(
    nranks: int,
    comp_ns: int,
    pattern: str,
    size: int,
    iterations: int,
) -> Schedule:
    """Compute phase followed by a collective, repeated ``iterations`` times.

    Per iteration and rank: one calc of ``comp_ns``, then the collective
    (``pattern`` is "dissemination" or "ring"); the collective's root ops wait
    on the calc, and the next iteration's calc waits on all loose ends of the
    previous collective on that rank.
    """
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")
    if comp_ns < 0:
        raise ValueError("comp_ns must be >= 0")
    if pattern == "dissemination":
        inner = gen_dissemination(nranks, size)
    elif pattern == "ring":
        inner = gen_ring_allreduce(nranks, size, 0)
    else:
        raise ValueError(f"unknown pattern {pattern!r} (want dissemination or ring)")

    all_ops = []
    for rank_ops in inner.ops:
        required = set()
        for op in rank_ops:
            required |= op.requires
        roots = [op.id for op in rank_ops if not op.requires]
        sinks = [op.id for op in rank_ops if op.id not in required]
        ops: list[ScheduleOp] = []
        prev_sinks: list[int] = []
        for _ in range(iterations):
            calc_id = len(ops)
            ops.append(ScheduleOp(calc_id, CALC, None, comp_ns, frozenset(prev_sinks)))
            base = len(ops)
            for op in rank_ops:
                req = {base + d for d in op.requires}
                if op.id in roots:
                    req.add(calc_id)
                ops.append(ScheduleOp(base + op.id, op.kind, op.peer, op.size, frozenset(req)))
            prev_sinks = [base + s for s in sinks]
        all_ops.append(tuple(ops))
    return Schedule(
        nranks=nranks,
        ops=tuple(all_ops),
        metadata={
            "generator": "compute_collective",
            "pattern": pattern,
            "nranks": nranks,
            "comp_ns": comp_ns,
            "size_bytes": size,
            "iterations": iterations,
        },
    )


# ---------------------------------------------------------------------------
# JSON export (mirrors the IR one-to-one)

_SCHEDULE_SCHEMA = "nsim.schedule/1"


def schedule_to_json(schedule: Schedule) -> str:
    ranks = []
    for rank_ops in schedule.ops:
        ops = []
        for op in rank_ops:
            entry: dict[str, object] = {"id": op.id, "kind": op.kind}
            if op.kind == CALC:
                entry["duration_ns"] = op.size
            else:
                entry["peer"] = op.peer
                entry["size_bytes"] = op.size
            entry["requires"] = sorted(op.requires)
            ops.append(entry)
        ranks.append(ops)
    doc = {
        "schema": _SCHEDULE_SCHEMA,
        "num_ranks": schedule.nranks,
        "metadata": dict(schedule.metadata),
        "ranks": ranks,
    }
    return json.dumps(doc, indent=2, sort_keys=False) + "\n"


def schedule_from_json(text: str) -> Schedule:
    doc = json.loads(text)
    if doc.get("schema") != _SCHEDULE_SCHEMA:
        raise ValueError(f"unexpected schedule schema {doc.get('schema')!r}")
    ranks = []
    for rank_ops in doc["ranks"]:
        ops = []
        for entry in rank_ops:
            kind = entry["kind"]
            if kind == CALC:
                peer, size = None, entry["duration_ns"]
            else:
                peer, size = entry["peer"], entry["size_bytes"]
            ops.append(ScheduleOp(entry["id"], kind, peer, size,
                                  frozenset(entry.get("requires", ()))))
        ranks.append(tuple(ops))
    schedule = Schedule(
        nranks=doc["num_ranks"], ops=tuple(ranks), metadata=doc.get("metadata", {})
    )
    violations = validate(schedule)
    if violations:
        raise ScheduleValidationError(violations)
    return schedule
