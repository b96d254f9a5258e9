import numpy as np
import pytest

from helmfmm.ledger import CostLedger
from helmfmm.runtime import DeadlockError, ProtocolError, RankError, World, spawn_world


def ring(comm):
    if comm.rank == 0:
        comm.isend(1, "tok", [0], phase="m2m")
        return comm.recv(comm.size - 1, "tok")
    tok = comm.recv(comm.rank - 1, "tok")
    comm.isend((comm.rank + 1) % comm.size, "tok", tok + [comm.rank], phase="m2m")


@pytest.mark.parametrize("scheduler", ["deterministic", "random", "threaded"])
def test_ring(scheduler):
    assert spawn_world(5, ring, scheduler=scheduler, seed=3)[0] == [0, 1, 2, 3, 4]


def test_fifo_per_pair_under_random_delivery():
    def prog(comm):
        if comm.rank == 0:
            for i in range(50):
                comm.isend(1, "x", np.array([i]))
            return None
        return [int(comm.recv(0, "x")[0]) for _ in range(50)]

    for seed in range(5):
        assert spawn_world(2, prog, scheduler="random", seed=seed)[1] == list(range(50))


def test_wait_any_and_test():
    def prog(comm):
        if comm.rank < 2:
            comm.isend(2, ("v", comm.rank), comm.rank * 10)
            return None
        reqs = [comm.irecv(0, ("v", 0)), comm.irecv(1, ("v", 1))]
        got = {}
        while len(got) < 2:
            i, payload = comm.wait_any([r for r in reqs if not r.done] or reqs)
            got[payload] = True
        return sorted(got), all(comm.test(r) for r in reqs)

    assert spawn_world(3, prog, scheduler="random", seed=1)[2] == ([0, 10], True)


def test_deadlock_detected():
    with pytest.raises(DeadlockError):
        spawn_world(3, lambda c: c.recv((c.rank + 1) % c.size, "never"))


def test_unmatched_message_is_protocol_error():
    with pytest.raises(ProtocolError):
        spawn_world(2, lambda c: c.isend(1 - c.rank, "lost", 1))


def test_rank_failure_is_tagged():
    def prog(comm):
        if comm.rank == 2:
            raise KeyError("boom")
        return comm.rank

    with pytest.raises(RankError) as info:
        spawn_world(4, prog)
    assert info.value.rank == 2


def test_counters_sent_equal_received_and_self_sends_free():
    def prog(comm):
        comm.isend(comm.rank, "self", np.zeros(100, dtype=complex), phase="m2l")
        comm.recv(comm.rank, "self")
        nxt = (comm.rank + 1) % comm.size
        comm.isend(nxt, "n", np.zeros(3, dtype=complex), phase="m2l")
        comm.recv((comm.rank - 1) % comm.size, "n")

    world = World(4, "random", 2)
    world.run(prog)
    t = world.ledger.total("m2l")
    assert (t.messages, t.bytes) == (4, 4 * 48)
    assert (t.recv_messages, t.recv_bytes) == (t.messages, t.bytes)
    assert len(world.delivered) == 4


def test_messaging_off_canary():
    # with the network cut, a program that needs a message cannot finish
    world = World(2, "deterministic", messaging=False)
    with pytest.raises(DeadlockError):
        world.run(ring)


def test_ledger_queries_and_json_round_trip():
    led = CostLedger(2)
    led.record(0, "m2m.agg", flops=10, messages=2, bytes=64)
    led.record(1, "m2m", flops=5)
    led.note_memory(1, "buffers", 100)
    led.note_memory(1, "buffers", 50)
    assert led.total("m2m").flops == 15 and led.total("m2m.agg").bytes == 64
    assert led.memory_totals()["buffers"] == 100
    assert led.seconds(0, "m2m") == pytest.approx(10e-9 + 2e-6 + 64e-10)
    back = CostLedger.from_json(led.to_json())
    assert back.dumps() == led.dumps()
    assert led.to_csv("r").splitlines()[0] == "run_id,N_p,phase,seconds,flops,messages,bytes"
    with pytest.raises(ValueError):
        led.record(0, "bogus")
    with pytest.raises(ValueError):
        led.record(0, "m2l", flops=-1)
