"""Deterministic discrete-event execution of schedules under LogGP timing with noise.

Execution model
---------------
Each rank executes its op list in program order, every op waiting for

  * its ``requires`` dependencies,
  * the previous op on the same rank to release the host,
  * for message ops, the minimum message gap: at least max(o, g) between the
    starts of consecutive message ops on one rank,
  * for recvs, the wire arrival of the matching message.

A send occupies the sender host for o, after which the message travels for
``wire = round_half_up(L_eff + (size-1) * G_eff)`` ns and the recv occupies
the receiver host for o starting no earlier than arrival. Calc ops occupy the
host for their duration. Host occupancy intervals are stretched by OS detours
(below). Message matching is in-order per (src, dst, size).

Noise
-----
With a latency distribution, each message draws a value v that replaces the
whole deterministic 2o+L term (measured one-way samples include host overhead
inseparably): the wire latency becomes max(0, v - 2o) while the two host
occupancies stay at o, so an uncontended message completes in v + (size-1)G.
With a bandwidth distribution, each message draws bw and uses
G_eff = 8/bw. With a detour trace, each rank gets an independent uniformly
random cyclic phase into the trace per run, and any host occupancy is extended
by the detour time it overlaps, re-checked until a fixed point (equivalently:
occupancy ends once the host has accumulated its base duration of
detour-free time).

Determinism
-----------
The PRNG is splitmix64, used in counter mode: run i of a batch derives
``run_seed = mix64(seed + (i+1)*GAMMA)``, the detour phase of rank r is
``mix64((run_seed ^ OS_STREAM) + (r+1)*GAMMA)`` scaled to [0, span), and a
message with static index m (sends enumerated in (rank, op id) order) draws
``mix64((run_seed ^ LAT_STREAM) + (m+1)*GAMMA)`` for latency and the
BW_STREAM analogue for bandwidth, each mapped to a distribution index by
``(u64 * count) >> 64``. Because every value a run computes is a pure function
of these inputs, results are bit-identical regardless of worker count or
event processing order.
"""

from __future__ import annotations

import os
from bisect import bisect_right
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from math import floor
from typing import Sequence

from .goal import CALC, RECV, SEND, Schedule, ScheduleValidationError, validate
from .model import LogGPParams, NoiseModel

__all__ = [
    "PRNG_NAME",
    "SimConfig",
    "SimResult",
    "DeadlockError",
    "simulate",
    "run_many",
    "derive_run_seed",
    "mix64",
]

PRNG_NAME = "splitmix64"

_M64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_LAT_STREAM = 0x6C6174656E637900  # distinct per-purpose stream tags
_BW_STREAM = 0x62616E6477696474
_OS_STREAM = 0x6F73706861736500

_NOISELESS = NoiseModel()


def mix64(z: int) -> int:
    """The splitmix64 finalizer; a bijective 64-bit mix."""
    z &= _M64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return z ^ (z >> 31)


def derive_run_seed(seed: int, run_index: int) -> int:
    """Seed of run ``run_index`` in a batch: mix64(seed + (i+1)*GAMMA)."""
    return mix64((seed + (run_index + 1) * _GAMMA) & _M64)


class DeadlockError(RuntimeError):
    """Simulation stalled with ops that can never run; lists the blocked ops."""

    def __init__(self, blocked: list[tuple[int, int, str]]):
        self.blocked = blocked
        shown = ", ".join(f"rank {r} op {i} ({k})" for r, i, k in blocked[:16])
        more = "" if len(blocked) <= 16 else f" and {len(blocked) - 16} more"
        super().__init__(f"deadlock: {len(blocked)} op(s) blocked: {shown}{more}")


@dataclass(frozen=True)
class SimConfig:
    """Everything that determines a run besides the schedule itself."""

    params: LogGPParams
    noise: NoiseModel = _NOISELESS
    seed: int = 0
    record_per_op: bool = False


@dataclass(frozen=True)
class SimResult:
    """Completion times of one run.

    completion is max(per_rank_completion); per_op_times, present only when
    recording was requested, maps [rank][op id] -> (start, finish) ns.
    draws_used counts the latency/bandwidth distribution samples consumed.
    """

    completion: int
    per_rank_completion: tuple[int, ...]
    draws_used: int
    per_op_times: tuple[tuple[tuple[int, int], ...], ...] | None = None


# ---------------------------------------------------------------------------
# Static schedule compilation (shared by every run of a batch)

_KIND_SEND, _KIND_RECV, _KIND_CALC = 0, 1, 2


class _Compiled:
    __slots__ = (
        "schedule", "nranks", "n", "offsets", "kind", "peer", "size", "rank",
        "succ", "pending_base", "prev_msg", "match", "send_index", "n_sends", "roots",
    )

    def __init__(self, schedule: Schedule):
        violations = validate(schedule)
        if violations:
            raise ScheduleValidationError(violations)
        self.schedule = schedule
        self.nranks = schedule.nranks
        offsets = []
        n = 0
        for rank_ops in schedule.ops:
            offsets.append(n)
            n += len(rank_ops)
        self.offsets = offsets
        self.n = n
        kind = [0] * n
        peer = [0] * n
        size = [0] * n
        rank = [0] * n
        succ: list[list[int]] = [[] for _ in range(n)]
        pending = [0] * n
        prev_msg = [-1] * n
        kind_code = {SEND: _KIND_SEND, RECV: _KIND_RECV, CALC: _KIND_CALC}
        for r, rank_ops in enumerate(schedule.ops):
            base = offsets[r]
            last_msg = -1
            for op in rank_ops:
                gid = base + op.id
                kind[gid] = kind_code[op.kind]
                peer[gid] = op.peer if op.peer is not None else -1
                size[gid] = op.size
                rank[gid] = r
                wait = len(op.requires)
                for dep in op.requires:
                    succ[base + dep].append(gid)
                if op.id > 0:  # host is serial: previous op must release it
                    succ[gid - 1].append(gid)
                    wait += 1
                if op.kind != CALC:
                    prev_msg[gid] = last_msg
                    last_msg = gid
                    if op.kind == RECV:
                        wait += 1  # the wire arrival
                pending[gid] = wait
        # In-order matching: j-th send of a (src, dst, size) triple pairs with
        # the j-th recv; validate() already guaranteed equal counts.
        send_lists: dict[tuple[int, int, int], list[int]] = {}
        recv_lists: dict[tuple[int, int, int], list[int]] = {}
        send_index = [-1] * n
        n_sends = 0
        for gid in range(n):
            if kind[gid] == _KIND_SEND:
                send_index[gid] = n_sends
                n_sends += 1
                send_lists.setdefault((rank[gid], peer[gid], size[gid]), []).append(gid)
            elif kind[gid] == _KIND_RECV:
                recv_lists.setdefault((peer[gid], rank[gid], size[gid]), []).append(gid)
        match = [-1] * n
        for key, sends in send_lists.items():
            for s_gid, r_gid in zip(sends, recv_lists[key]):
                match[s_gid] = r_gid
        self.kind = kind
        self.peer = peer
        self.size = size
        self.rank = rank
        self.succ = succ
        self.pending_base = pending
        self.prev_msg = prev_msg
        self.match = match
        self.send_index = send_index
        self.n_sends = n_sends
        self.roots = [gid for gid in range(n) if pending[gid] == 0]


# ---------------------------------------------------------------------------
# OS detour replay

def _detour_end(
    t_start: int,
    duration: int,
    phase: int,
    ev_starts: list[int],
    ev_ends: list[int],
    span: int,
    idle_per_span: int,
) -> int:
    """Earliest end of a host occupancy of ``duration`` beginning at ``t_start``.

    Walks the cyclic detour pattern accumulating detour-free time until the
    base duration is covered; this is the least fixed point of "extend the
    interval by the detour time it overlaps, re-check".
    """
    if duration <= 0 or not ev_starts:
        return t_start + duration
    if idle_per_span <= 0:
        raise ValueError("detour trace leaves the host no idle time; cannot make progress")
    remaining = duration
    t = t_start
    if remaining > idle_per_span:  # whole cycles in one hop
        cycles = (remaining - 1) // idle_per_span
        t += cycles * span
        remaining -= cycles * idle_per_span
    pos = (t + phase) % span
    nev = len(ev_starts)
    while True:
        i = bisect_right(ev_starts, pos) - 1
        if i >= 0 and pos < ev_ends[i]:  # inside a detour: no progress
            jump = ev_ends[i] - pos
            t += jump
            pos += jump
            if pos >= span:
                pos -= span
            continue
        j = bisect_right(ev_starts, pos)
        if j < nev:
            idle = ev_starts[j] - pos
        else:
            idle = span - pos + ev_starts[0]  # wrap to the next cycle's first event
        if remaining <= idle:
            return t + remaining
        remaining -= idle
        t += idle
        pos = (pos + idle) % span


# ---------------------------------------------------------------------------
# One run

def _run(c: _Compiled, cfg: SimConfig, run_index: int) -> SimResult:
    params = cfg.params
    noise = cfg.noise
    run_seed = derive_run_seed(cfg.seed, run_index)

    o = params.o
    base_L = float(params.L)
    base_G = params.G
    gap = params.o if params.o >= params.g else params.g
    two_o = 2 * params.o

    lat = noise.latency
    bw = noise.bandwidth
    lat_samples = lat.samples if lat is not None else None
    lat_count = lat.count if lat is not None else 0
    bw_samples = bw.samples if bw is not None else None
    bw_count = bw.count if bw is not None else 0
    lat_seed = run_seed ^ _LAT_STREAM
    bw_seed = run_seed ^ _BW_STREAM

    osn = noise.os
    if osn is not None:
        ev_starts = [s for s, _ in osn.events]
        ev_ends = [s + d for s, d in osn.events]
        span = osn.span
        idle_per_span = span - osn.total_detour
        os_seed = run_seed ^ _OS_STREAM
        phases = [
            (mix64((os_seed + (r + 1) * _GAMMA) & _M64) * span) >> 64
            for r in range(c.nranks)
        ]
    else:
        ev_starts = ev_ends = None  # type: ignore[assignment]
        span = idle_per_span = 0
        phases = None  # type: ignore[assignment]

    n = c.n
    kind = c.kind
    size = c.size
    rank = c.rank
    succ = c.succ
    prev_msg = c.prev_msg
    match = c.match
    send_index = c.send_index

    pending = c.pending_base[:]
    ready = [0] * n
    start = [-1] * n
    finish = [0] * n
    prc = [0] * c.nranks
    stack = list(c.roots)
    push = stack.append
    pop = stack.pop
    executed = 0
    m64 = _M64
    gamma = _GAMMA

    while stack:
        gid = pop()
        executed += 1
        t = ready[gid]
        k = kind[gid]
        if k == _KIND_CALC:
            dur = size[gid]
        else:
            pm = prev_msg[gid]
            if pm >= 0:
                limit = start[pm] + gap
                if limit > t:
                    t = limit
            dur = o
        if osn is not None:
            f = _detour_end(t, dur, phases[rank[gid]], ev_starts, ev_ends, span, idle_per_span)
        else:
            f = t + dur
        start[gid] = t
        finish[gid] = f
        r = rank[gid]
        if f > prc[r]:
            prc[r] = f
        if k == _KIND_SEND:
            sz = size[gid]
            m = send_index[gid]
            if lat_samples is not None:
                z = (lat_seed + (m + 1) * gamma) & m64
                z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & m64
                z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & m64
                u64 = z ^ (z >> 31)
                lat_eff = lat_samples[(u64 * lat_count) >> 64] - two_o
                if lat_eff < 0.0:
                    lat_eff = 0.0
            else:
                lat_eff = base_L
            if bw_samples is not None:
                z = (bw_seed + (m + 1) * gamma) & m64
                z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & m64
                z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & m64
                u64 = z ^ (z >> 31)
                g_eff = 8.0 / bw_samples[(u64 * bw_count) >> 64]
            else:
                g_eff = base_G
            arrival = f + floor(lat_eff + (sz - 1) * g_eff + 0.5)
            rg = match[gid]
            if arrival > ready[rg]:
                ready[rg] = arrival
            left = pending[rg] - 1
            pending[rg] = left
            if left == 0:
                push(rg)
        for sg in succ[gid]:
            if f > ready[sg]:
                ready[sg] = f
            left = pending[sg] - 1
            pending[sg] = left
            if left == 0:
                push(sg)

    if executed != n:
        blocked = []
        for gid in range(n):
            if start[gid] < 0:
                r = rank[gid]
                lid = gid - c.offsets[r]
                blocked.append((r, lid, (SEND, RECV, CALC)[kind[gid]]))
        raise DeadlockError(blocked)

    draws = c.n_sends * ((1 if lat_samples is not None else 0)
                         + (1 if bw_samples is not None else 0))
    per_op = None
    if cfg.record_per_op:
        per_op = tuple(
            tuple((start[c.offsets[r] + i], finish[c.offsets[r] + i])
                  for i in range(len(c.schedule.ops[r])))
            for r in range(c.nranks)
        )
    completion = max(prc) if prc else 0
    return SimResult(
        completion=completion,
        per_rank_completion=tuple(prc),
        draws_used=draws,
        per_op_times=per_op,
    )


# ---------------------------------------------------------------------------
# Public API

def simulate(schedule: Schedule, cfg: SimConfig) -> SimResult:
    """Run one simulation; identical to run_many(schedule, cfg, 1)[0]."""
    return _run(_Compiled(schedule), cfg, 0)


_FORK_STATE: tuple[_Compiled, SimConfig] | None = None


def _pool_run(indices: Sequence[int]) -> list[SimResult]:
    c, cfg = _FORK_STATE  # type: ignore[misc]
    return [_run(c, cfg, i) for i in indices]


def run_many(
    schedule: Schedule,
    cfg: SimConfig,
    n: int,
    workers: int | None = None,
) -> list[SimResult]:
    """n independent runs; run i is seeded with derive_run_seed(cfg.seed, i).

    Results come back in run order and are bit-identical for identical
    (schedule, cfg, n) regardless of ``workers``. Parallel execution uses
    forked processes (one compile, inherited read-only) and falls back to
    sequential where fork is unavailable.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    c = _Compiled(schedule)
    if workers is None:
        workers = 1
    workers = min(workers, n)
    if workers <= 1:
        return [_run(c, cfg, i) for i in range(n)]
    try:
        import multiprocessing

        ctx = multiprocessing.get_context("fork")
    except ValueError:
        return [_run(c, cfg, i) for i in range(n)]
    global _FORK_STATE
    _FORK_STATE = (c, cfg)
    try:
        chunks = [list(range(w, n, workers)) for w in range(workers)]
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            per_worker = list(pool.map(_pool_run, chunks))
    finally:
        _FORK_STATE = None
    results: list[SimResult | None] = [None] * n
    for chunk, chunk_results in zip(chunks, per_worker):
        for i, res in zip(chunk, chunk_results):
            results[i] = res
    return results  # type: ignore[return-value]


def result_to_dict(result: SimResult, run_index: int, per_rank: bool = False) -> dict:
    """JSON-ready form of one run for the results export."""
    entry: dict[str, object] = {"run": run_index, "completion_ns": result.completion}
    if per_rank:
        entry["per_rank_completion_ns"] = list(result.per_rank_completion)
    return entry
