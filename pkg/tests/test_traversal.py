import numpy as np
import pytest

from helmfmm.kernel import GeometrySpec, Particles, direct_potential, generate_geometry
from helmfmm.traversal import (EvaluationSetup, RunConfig, build_interaction_lists,
                               evaluate_potential, run_evaluation)
from helmfmm.tree import MortonKey


@pytest.fixture(scope="module")
def small():
    return generate_geometry(GeometrySpec("planar-grid", 4, 0.25), intensity_rule="random-seeded",
                             seed=3)


def assemble(res, level):
    """Full expansions of a level gathered from every rank's held columns."""
    tree = res.setup.tree
    nt, nph = res.setup.dims[level]
    out = {}
    for rr in res.ranks:
        for i, block in rr.mult.get(level, {}).items():
            key = MortonKey(level, int(tree.levels[level].codes[i]))
            a, b = tree.slice_maps[key].columns(rr.rank) if key in tree.slice_maps else (0, nt)
            out.setdefault(i, np.zeros((nt, nph), dtype=complex))[a:b] = block
    return out


def assemble_local(res, level):
    tree = res.setup.tree
    nt, nph = res.setup.dims[level]
    out = {}
    for rr in res.ranks:
        for i, block in rr.local.get(level, {}).items():
            key = MortonKey(level, int(tree.levels[level].codes[i]))
            a, b = tree.slice_maps[key].columns(rr.rank) if key in tree.slice_maps else (0, nt)
            out.setdefault(i, np.zeros((nt, nph), dtype=complex))[a:b] = block
    return out


def test_far_list_sizes():
    vol = generate_geometry(GeometrySpec("cubic-volume", 4, 0.25))
    setup = EvaluationSetup(vol, RunConfig())
    lists = setup.lists
    level = 4  # 8 x 8 x 8 boxes
    sizes = [len(lists.far(MortonKey(level, int(c)))) for c in setup.tree.levels[level].codes]
    assert max(sizes) == 189
    assert all(len(lists.far(MortonKey(2, int(c)))) == 0 for c in setup.tree.levels[2].codes)
    flat = EvaluationSetup(generate_geometry(GeometrySpec("planar-grid", 4, 0.25)), RunConfig())
    assert max(len(flat.lists.far(MortonKey(4, int(c)))) for c in flat.tree.levels[4].codes) == 27
    # near lists include the box itself and only touching boxes
    leaf = MortonKey(flat.L, int(flat.tree.levels[flat.L].codes[0]))
    near = flat.lists.near(leaf)
    assert leaf in near
    assert all(max(abs(a - b) for a, b in zip(n.coords(), leaf.coords())) <= 1 for n in near)
    assert build_interaction_lists(flat.tree).far_ptr.keys() == flat.lists.far_ptr.keys()


def test_comm_plan_basics(small):
    assert not EvaluationSetup(small, RunConfig(n_ranks=1)).plan.entries
    plan = EvaluationSetup(small, RunConfig(n_ranks=4)).plan
    assert plan.entries and all(s != t for s, t in plan.entries)
    s, t = next(iter(plan.entries))
    assert len(plan.entries[(s, t)]) > 1  # several source blocks share one stream
    total = plan.pair_bytes(s, t)
    capped = EvaluationSetup(small, RunConfig(n_ranks=4, buffer_bytes=max(16, total // 4))).plan
    assert capped.n_messages(s, t) == -(-total // (max(16, total // 4) // 16 * 16))


@pytest.mark.parametrize("n_ranks", [2, 3, 5])
def test_upward_pass_matches_serial(small, n_ranks):
    ref = run_evaluation(small, RunConfig(stop_after="m2m"), keep_expansions=True)
    res = run_evaluation(small, RunConfig(n_ranks=n_ranks, stop_after="m2m",
                                          scheduler="random", seed=n_ranks), keep_expansions=True)
    for level in ref.setup.far_levels:
        a, b = assemble(ref, level), assemble(res, level)
        assert a and a.keys() == b.keys()
        for i in a:
            assert np.linalg.norm(a[i] - b[i]) <= 1e-12 * np.linalg.norm(a[i])


@pytest.mark.parametrize("n_ranks", [2, 4, 6])
def test_local_expansions_match_serial(small, n_ranks):
    ref = run_evaluation(small, RunConfig(stop_after="l2l"), keep_expansions=True)
    res = run_evaluation(small, RunConfig(n_ranks=n_ranks, stop_after="l2l", scheduler="random",
                                          seed=7, buffer_bytes=512), keep_expansions=True)
    level = ref.setup.L
    a, b = assemble_local(ref, level), assemble_local(res, level)
    assert a and a.keys() == b.keys()
    for i in a:
        assert np.linalg.norm(a[i] - b[i]) <= 1e-12 * np.linalg.norm(a[i])


def test_l2l_traffic_mirrors_m2m():
    p = generate_geometry(GeometrySpec("planar-grid", 7, 0.25))
    for policy in ("aligned", "rank-ordered"):
        led = run_evaluation(p, RunConfig(n_ranks=12, alignment=policy, stop_after="l2l")).ledger
        up, down = led.total("m2m"), led.total("l2l")
        assert up.messages > 0
        assert (up.messages, up.bytes) == (down.messages, down.bytes)


def test_accuracy_and_linearity(small):
    cfg = RunConfig(digits=3, n_ranks=3)
    pot, led = evaluate_potential(small, cfg)
    exact = direct_potential(small, small.positions, cfg.k)
    assert np.linalg.norm(pot - exact) / np.linalg.norm(exact) < 1e-3
    other = small.with_intensities(np.cos(np.arange(len(small))) + 0.3j)
    both = small.with_intensities(small.intensities + 2 * other.intensities)
    p1, _ = evaluate_potential(other, cfg)
    p2, _ = evaluate_potential(both, cfg)
    assert np.linalg.norm(p2 - pot - 2 * p1) <= 1e-12 * np.linalg.norm(p2)
    assert led.total("near").flops > 0 and led.total("m2l").flops > 0


def test_schedulers_agree(small):
    ref, _ = evaluate_potential(small, RunConfig(n_ranks=4))
    for sched, seed in (("random", 1), ("random", 2), ("threaded", 0)):
        pot, led = evaluate_potential(small, RunConfig(n_ranks=4, scheduler=sched, seed=seed))
        assert np.array_equal(pot, ref)
    assert led.clock == "real"


def test_no_far_field_for_tiny_trees():
    p = Particles([[0, 0, 0], [0.2, 0, 0], [0, 0.3, 0.1]], [1, 2, 3])
    pot, led = evaluate_potential(p, RunConfig())
    assert np.allclose(pot, direct_potential(p, p.positions, RunConfig().k))
    assert led.total("m2l").flops == 0


def test_config_validation():
    with pytest.raises(ValueError):
        RunConfig(buffer_bytes=8)
    with pytest.raises(ValueError):
        RunConfig(stop_after="bogus")
    with pytest.raises(ValueError):
        RunConfig(n_ranks=0)
