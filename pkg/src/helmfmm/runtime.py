"""In-process SPMD harness: logical ranks exchanging point-to-point messages.

Every rank runs the same program on its own thread with private state; the
only channel between ranks is :class:`Comm`. Three schedulers exist:

``deterministic``
    one rank runs at a time, handing over round-robin when it blocks;
    messages arrive at send time. This is the reference mode.
``random``
    one rank runs at a time, but the next rank and the delivery order of
    in-flight messages across (source, destination) pairs are drawn from a
    seeded RNG. Delivery within a pair stays FIFO.
``threaded``
    ranks run concurrently on OS threads; wall time is measured for real.

Sends are buffered and complete immediately. A message to oneself is
delivered without touching the network counters.
"""

from __future__ import annotations

import itertools
import random
import threading
import time
import traceback
from collections import deque
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Any, Callable, Hashable

import numpy as np

from .ledger import CostLedger

SCHEDULERS = ("deterministic", "random", "threaded")


class RankError(RuntimeError):
    """A rank program failed; ``rank`` names it."""

    def __init__(self, rank: int, exc: BaseException, tb: str = ""):
        super().__init__(f"rank {rank} failed: {exc!r}\n{tb}")
        self.rank = rank
        self.original = exc


class DeadlockError(RuntimeError):
    pass


class ProtocolError(RuntimeError):
    """Messages left unmatched when the world shut down."""


class _Aborted(Exception):
    pass


@dataclass(frozen=True)
class MessageDescriptor:
    source: int
    dest: int
    phase: str
    nbytes: int
    tag: Hashable
    seq: int = 0


def payload_nbytes(payload) -> int:
    if isinstance(payload, np.ndarray):
        return payload.nbytes
    if isinstance(payload, (tuple, list)):
        return sum(payload_nbytes(p) for p in payload)
    if isinstance(payload, dict):
        return sum(payload_nbytes(v) for v in payload.values())
    if isinstance(payload, (bytes, bytearray)):
        return len(payload)
    return 8 if payload is not None else 0


class Request:
    __slots__ = ("source", "tag", "done", "payload", "desc")

    def __init__(self, source=None, tag=None, done=False, payload=None):
        self.source = source
        self.tag = tag
        self.done = done
        self.payload = payload
        self.desc = None


class Comm:
    """A rank's endpoint (the rank handle): messaging plus counter sink."""

    def __init__(self, world: "World", rank: int):
        self.world = world
        self.rank = rank
        self.size = world.size

    @property
    def ledger(self) -> CostLedger:
        return self.world.ledger

    def isend(self, dest: int, tag: Hashable, payload: Any, phase: str = "m2l",
              nbytes: int | None = None) -> Request:
        if not 0 <= dest < self.size:
            raise ValueError(f"rank {self.rank}: no such destination {dest}")
        n = payload_nbytes(payload) if nbytes is None else int(nbytes)
        self.world._send(MessageDescriptor(self.rank, dest, phase, n, tag), payload)
        return Request(done=True)

    def irecv(self, source: int, tag: Hashable) -> Request:
        return Request(source, tag)

    def test(self, req: Request) -> bool:
        if not req.done:
            self.world._try_match(self.rank, req)
        return req.done

    def wait(self, req: Request):
        self.wait_any([req])
        return req.payload

    def wait_any(self, reqs) -> tuple[int, Any]:
        """Index and payload of some completed request (already-completed
        requests are reported first)."""
        reqs = list(reqs)
        if not reqs:
            raise ValueError("wait_any on no requests")
        for i, r in enumerate(reqs):
            if r.done:
                return i, r.payload

        def ready():
            return any(self.test(r) for r in reqs)

        self.world._block_until(self.rank, ready)
        for i, r in enumerate(reqs):
            if r.done:
                return i, r.payload
        raise AssertionError("woke without a completed request")

    def recv(self, source: int, tag: Hashable):
        return self.wait(self.irecv(source, tag))

    def record(self, phase: str, flops: int = 0, messages: int = 0, bytes: int = 0) -> None:
        self.world.ledger.record(self.rank, phase, flops=flops, messages=messages, bytes=bytes)

    def note_memory(self, cls: str, nbytes: int) -> None:
        self.world.ledger.note_memory(self.rank, cls, nbytes)

    @contextmanager
    def timed(self, phase: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.world.ledger.record(self.rank, phase, wall=time.perf_counter() - t0)


class World:
    """Runs ``program(comm, *args)`` on ``size`` logical ranks."""

    def __init__(self, size: int, scheduler: str = "deterministic", seed: int = 0,
                 ledger: CostLedger | None = None, messaging: bool = True):
        if size < 1:
            raise ValueError("world size must be >= 1")
        if scheduler not in SCHEDULERS:
            raise ValueError(f"unknown scheduler {scheduler!r}")
        self.size = size
        self.scheduler = scheduler
        self.rng = random.Random(seed)
        clock = "real" if scheduler == "threaded" else "virtual"
        self.ledger = ledger if ledger is not None else CostLedger(size, clock)
        self.messaging = messaging
        self.delivered: list[MessageDescriptor] = []
        self._cv = threading.Condition()
        # per destination: (source, tag) -> FIFO of (descriptor, payload)
        self._mailbox: list[dict] = [{} for _ in range(size)]
        self._inflight: dict[tuple[int, int], deque] = {}
        self._seq = itertools.count()
        self._state = ["ready"] * size
        self._pred: list[Callable | None] = [None] * size
        self._current: int | None = None
        self._errors: list[RankError] = []
        self._aborted = False

    @property
    def cooperative(self) -> bool:
        return self.scheduler != "threaded"

    # ----------------------------------------------------------- messaging

    def _send(self, desc: MessageDescriptor, payload) -> None:
        desc = MessageDescriptor(desc.source, desc.dest, desc.phase, desc.nbytes,
                                 desc.tag, next(self._seq))
        if desc.source != desc.dest:
            if not self.messaging:
                return  # canary mode: the network drops everything
            self.ledger.record(desc.source, desc.phase, messages=1, bytes=desc.nbytes)
        with self._cv:
            if self.scheduler == "random" and desc.source != desc.dest:
                self._inflight.setdefault((desc.source, desc.dest), deque()).append((desc, payload))
            else:
                self._deliver(desc, payload)
            self._cv.notify_all()

    def _deliver(self, desc, payload) -> None:
        self._mailbox[desc.dest].setdefault((desc.source, desc.tag), deque()).append((desc, payload))

    def _deliver_some(self, everything: bool = False) -> None:
        pairs = [p for p, q in self._inflight.items() if q]
        if not pairs:
            return
        if everything:
            count = sum(len(self._inflight[p]) for p in pairs)
        else:
            count = self.rng.randint(0, sum(len(self._inflight[p]) for p in pairs))
        for _ in range(count):
            pairs = [p for p, q in self._inflight.items() if q]
            if not pairs:
                break
            p = self.rng.choice(pairs)
            self._deliver(*self._inflight[p].popleft())

    def _try_match(self, rank: int, req: Request) -> None:
        with self._cv:
            q = self._mailbox[rank].get((req.source, req.tag))
            if not q:
                return
            desc, payload = q.popleft()
            req.done, req.payload, req.desc = True, payload, desc
            if desc.source != desc.dest:
                self.ledger.record(rank, desc.phase, recv_messages=1, recv_bytes=desc.nbytes)
                self.delivered.append(desc)

    # ---------------------------------------------------------- scheduling

    def _runnable(self, r: int) -> bool:
        if self._state[r] == "done":
            return False
        if self._state[r] == "ready":
            return True
        return self._pred[r]()

    def _pick_next(self, after: int) -> int | None:
        """Choose the next rank to run (lock held)."""
        while True:
            live = [r for r in range(self.size) if self._state[r] != "done"]
            if not live:
                return None
            cands = [r for r in live if self._runnable(r)]
            if cands:
                if self.scheduler == "random":
                    self._deliver_some()
                    return self.rng.choice(cands)
                order = sorted(cands, key=lambda r: (r - after - 1) % self.size)
                return order[0]
            if any(self._inflight.values()):
                self._deliver_some(everything=True)
                continue
            blocked = ", ".join(str(r) for r in live)
            self._fail(-1, DeadlockError(f"deadlock: ranks {blocked} wait forever"), "")
            return None

    def _switch(self, rank: int) -> None:
        nxt = self._pick_next(rank)
        self._current = nxt
        self._cv.notify_all()

    def _wait_turn(self, rank: int) -> None:
        while self._current != rank:
            if self._aborted:
                raise _Aborted()
            self._cv.wait()
        if self._aborted:
            raise _Aborted()

    def _block_until(self, rank: int, ready: Callable[[], bool]) -> None:
        if ready():
            return
        with self._cv:
            self._state[rank] = "blocked"
            self._pred[rank] = ready
            if self.cooperative:
                self._switch(rank)
                self._wait_turn(rank)
            else:
                while not ready():
                    if self._aborted:
                        raise _Aborted()
                    live = [r for r in range(self.size) if self._state[r] != "done"]
                    if all(self._state[r] == "blocked" and not self._pred[r]() for r in live):
                        self._fail(-1, DeadlockError(
                            f"deadlock: ranks {live} wait forever"), "")
                        raise _Aborted()
                    self._cv.wait(0.05)
            self._state[rank] = "ready"
            self._pred[rank] = None
        if not ready():
            raise AssertionError("scheduled a rank that cannot progress")

    def _fail(self, rank: int, exc: BaseException, tb: str) -> None:
        self._errors.append(RankError(rank, exc, tb) if rank >= 0 else exc)
        self._aborted = True
        self._cv.notify_all()

    # ----------------------------------------------------------------- run

    def run(self, program: Callable, *args, **kwargs) -> list:
        results: list = [None] * self.size

        def body(rank):
            comm = Comm(self, rank)
            try:
                if self.cooperative:
                    with self._cv:
                        self._wait_turn(rank)
                results[rank] = program(comm, *args, **kwargs)
            except _Aborted:
                pass
            except BaseException as exc:  # noqa: BLE001 - reported via RankError
                with self._cv:
                    self._fail(rank, exc, traceback.format_exc())
            finally:
                with self._cv:
                    self._state[rank] = "done"
                    if self.cooperative and self._current == rank and not self._aborted:
                        self._switch(rank)
                    self._cv.notify_all()

        threads = [threading.Thread(target=body, args=(r,), daemon=True, name=f"rank-{r}")
                   for r in range(self.size)]
        with self._cv:
            self._current = 0 if self.cooperative else None
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        if self._errors:
            raise self._errors[0]
        leftovers = [d for box in self._mailbox for q in box.values() for d, _ in q]
        leftovers += [d for q in self._inflight.values() for d, _ in q]
        if leftovers:
            raise ProtocolError(f"{len(leftovers)} unmatched messages: {leftovers[:10]}")
        return results


def spawn_world(n_ranks: int, rank_program: Callable, *args, scheduler: str = "deterministic",
                seed: int = 0, ledger: CostLedger | None = None, **kwargs) -> list:
    """Run ``rank_program(comm, *args, **kwargs)`` on every rank; per-rank results."""
    return World(n_ranks, scheduler, seed, ledger).run(rank_program, *args, **kwargs)
