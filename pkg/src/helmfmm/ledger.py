"""Per-phase, per-rank cost counters and peak-memory accounting."""

from __future__ import annotations

import csv
import io
import json
import threading
from dataclasses import asdict, dataclass, fields

PHASES = ("c2m", "m2m", "m2l", "l2l", "l2o", "near")
MEMORY_CLASSES = ("tree", "operators", "buffers", "temporaries")

# virtual clock: seconds per flop, per message, per byte
FLOP_TIME = 1e-9
LATENCY = 1e-6
BYTE_TIME = 1e-10


@dataclass
class Counters:
    flops: int = 0
    messages: int = 0
    bytes: int = 0
    recv_messages: int = 0
    recv_bytes: int = 0
    wall: float = 0.0

    def add(self, other: "Counters") -> None:
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))

    def virtual_seconds(self) -> float:
        return self.flops * FLOP_TIME + self.messages * LATENCY + self.bytes * BYTE_TIME


class CostLedger:
    """Counters keyed by rank and phase.

    A phase name with a dot (``"m2m.agg"``) is a sub-phase: it is tallied
    under its own name in :attr:`detail` and under the part before the dot in
    :attr:`phases`. ``clock`` says whether :meth:`seconds` reports the virtual
    cost model or measured wall time.
    """

    def __init__(self, n_ranks: int, clock: str = "virtual"):
        if clock not in ("virtual", "real"):
            raise ValueError(f"unknown clock {clock!r}")
        self.n_ranks = n_ranks
        self.clock = clock
        self.phases = [{p: Counters() for p in PHASES} for _ in range(n_ranks)]
        self.detail: list[dict[str, Counters]] = [{} for _ in range(n_ranks)]
        self.memory = [{c: 0 for c in MEMORY_CLASSES} for _ in range(n_ranks)]
        self._lock = threading.Lock()

    def record(self, rank: int, phase: str, flops: int = 0, messages: int = 0,
               bytes: int = 0, recv_messages: int = 0, recv_bytes: int = 0,
               wall: float = 0.0) -> None:
        if min(flops, messages, bytes, recv_messages, recv_bytes, wall) < 0:
            raise ValueError("counters only grow")
        inc = Counters(int(flops), int(messages), int(bytes), int(recv_messages),
                       int(recv_bytes), float(wall))
        base = phase.split(".", 1)[0]
        if base not in PHASES:
            raise ValueError(f"unknown phase {phase!r}")
        with self._lock:
            self.phases[rank][base].add(inc)
            if "." in phase:
                self.detail[rank].setdefault(phase, Counters()).add(inc)

    def note_memory(self, rank: int, cls: str, nbytes: int) -> None:
        if cls not in MEMORY_CLASSES:
            raise ValueError(f"unknown memory class {cls!r}")
        with self._lock:
            self.memory[rank][cls] = max(self.memory[rank][cls], int(nbytes))

    # ------------------------------------------------------------ queries

    def total(self, phase: str) -> Counters:
        out = Counters()
        for r in range(self.n_ranks):
            if "." in phase:
                c = self.detail[r].get(phase)
                if c is not None:
                    out.add(c)
            else:
                out.add(self.phases[r][phase])
        return out

    def seconds(self, rank: int, phase: str) -> float:
        c = self.phases[rank][phase]
        return c.virtual_seconds() if self.clock == "virtual" else c.wall

    def phase_seconds(self, phase: str) -> float:
        """Slowest rank's time in ``phase``."""
        return max(self.seconds(r, phase) for r in range(self.n_ranks))

    def total_seconds(self) -> float:
        return max(sum(self.seconds(r, p) for p in PHASES) for r in range(self.n_ranks))

    def memory_totals(self) -> dict[str, int]:
        return {c: sum(m[c] for m in self.memory) for c in MEMORY_CLASSES}

    # ------------------------------------------------------ serialization

    def to_json(self) -> dict:
        return {
            "n_ranks": self.n_ranks,
            "clock": self.clock,
            "ranks": [
                {"rank": r,
                 "phases": {p: asdict(c) for p, c in self.phases[r].items()},
                 "detail": {p: asdict(c) for p, c in sorted(self.detail[r].items())},
                 "memory": dict(self.memory[r])}
                for r in range(self.n_ranks)],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, data: dict) -> "CostLedger":
        led = cls(data["n_ranks"], data["clock"])
        for entry in data["ranks"]:
            r = entry["rank"]
            led.phases[r] = {p: Counters(**c) for p, c in entry["phases"].items()}
            led.detail[r] = {p: Counters(**c) for p, c in entry["detail"].items()}
            led.memory[r] = dict(entry["memory"])
        return led

    def csv_rows(self, run_id: str = "") -> list[dict]:
        """One row per phase: (N_p, phase, seconds, flops, messages, bytes)."""
        rows = []
        for p in PHASES:
            t = self.total(p)
            rows.append({"run_id": run_id, "N_p": self.n_ranks, "phase": p,
                         "seconds": f"{self.phase_seconds(p):.6g}", "flops": t.flops,
                         "messages": t.messages, "bytes": t.bytes})
        return rows

    def to_csv(self, run_id: str = "") -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, ["run_id", "N_p", "phase", "seconds", "flops",
                                      "messages", "bytes"], lineterminator="\n")
        writer.writeheader()
        writer.writerows(self.csv_rows(run_id))
        return buf.getvalue()
