"""Execute a generated schedule for real across local processes over TCP.

Used by the localhost validation acceptance test: every rank is an OS process
that walks its op list in program order, sends/recvs over the same kind of
NODELAY byte-stream socket the bench module uses, and measures wall time for a
block of back-to-back iterations. Trial completion is the max across ranks.
"""

from __future__ import annotations

import multiprocessing as mp
import socket
import time


def _recvall(sock: socket.socket, n: int) -> None:
    remaining = n
    while remaining:
        chunk = sock.recv(remaining)
        if not chunk:
            raise ConnectionResetError("peer closed mid-message")
        remaining -= len(chunk)


def _rank_main(rank, schedule_ops, pipe, barrier, warmup, iters_per_trial, trials):
    srv = socket.socket()
    srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    srv.bind(("127.0.0.1", 0))
    srv.listen(16)
    pipe.send(srv.getsockname()[1])
    ports = pipe.recv()  # every rank's listen port

    peers = sorted({op[1] for op in schedule_ops})
    socks: dict[int, socket.socket] = {}
    for peer in peers:
        if peer < rank:
            s = socket.create_connection(("127.0.0.1", ports[peer]))
            s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            s.sendall(rank.to_bytes(2, "big"))
            socks[peer] = s
    expected = sum(1 for p in peers if p > rank)
    for _ in range(expected):
        conn, _ = srv.accept()
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        raw = b""
        while len(raw) < 2:
            raw += conn.recv(2 - len(raw))
        socks[int.from_bytes(raw, "big")] = conn

    payloads = {size: b"\x5a" * size for _, _, size in schedule_ops}
    results = []
    for _ in range(trials):
        barrier.wait()
        for _ in range(warmup):
            for kind, peer, size in schedule_ops:
                if kind == "send":
                    socks[peer].sendall(payloads[size])
                else:
                    _recvall(socks[peer], size)
        barrier.wait()
        t0 = time.perf_counter_ns()
        for _ in range(iters_per_trial):
            for kind, peer, size in schedule_ops:
                if kind == "send":
                    socks[peer].sendall(payloads[size])
                else:
                    _recvall(socks[peer], size)
        results.append((time.perf_counter_ns() - t0) / iters_per_trial)
    pipe.send(results)
    pipe.close()
    for s in socks.values():
        s.close()
    srv.close()


def measure_schedule(schedule, warmup: int, iters_per_trial: int,
                     trials: int) -> list[float]:
    """Run ``schedule`` on real processes; one completion (ns/iteration) per trial."""
    nranks = schedule.nranks
    flat_ops = [
        [(op.kind, op.peer, op.size) for op in rank_ops] for rank_ops in schedule.ops
    ]
    ctx = mp.get_context("fork")
    barrier = ctx.Barrier(nranks)
    pipes, procs = [], []
    for rank in range(nranks):
        parent, child = ctx.Pipe()
        pipes.append(parent)
        p = ctx.Process(
            target=_rank_main,
            args=(rank, flat_ops[rank], child, barrier, warmup, iters_per_trial,
                  trials),
        )
        p.start()
        procs.append(p)
    ports = [pipe.recv() for pipe in pipes]
    for pipe in pipes:
        pipe.send(ports)
    per_rank = [pipe.recv() for pipe in pipes]
    for p in procs:
        p.join(timeout=60)
    return [max(per_rank[r][t] for r in range(nranks)) for t in range(trials)]
