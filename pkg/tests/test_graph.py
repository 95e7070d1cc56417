from __future__ import annotations

import pytest

from preissue.catalog import NON_PURE, PURE, SyscallType, fstat_at
from preissue.engine import advance_epoch
from preissue.graph import DuplicateNode, GraphError, GraphFrozen, IOGraph, GraphRegistry


def _args(ctx, epoch):
    return True, False, fstat_at("x")


def _choice(ctx, epoch):
    return True, 0


def nested_loops() -> IOGraph:
    """outer { a; inner { b } } ; c"""
    g = IOGraph("nested")
    a = g.add_syscall_node("a", SyscallType.FSTAT_AT, _args)
    b = g.add_syscall_node("b", SyscallType.PWRITE, _args)
    c = g.add_syscall_node("c", SyscallType.FSTAT_AT, _args)
    inner = g.add_branch_node("inner", _choice)
    outer = g.add_branch_node("outer", _choice)
    g.set_next(g.start, a)
    g.set_next(a, b)
    g.set_next(b, inner)
    g.branch_append_child(inner, b, loop_back=True)
    g.branch_append_child(inner, outer)
    g.branch_append_child(outer, a, loop_back=True)
    g.branch_append_child(outer, c)
    g.set_next(c, g.end)
    return g


def test_valid_graph_freezes():
    g = nested_loops()
    assert g.validate() == []
    assert g.validated and g.num_slots == 2
    with pytest.raises(GraphFrozen):
        g.add_syscall_node("d", "pread", _args)


def test_node_purity_follows_type():
    g = nested_loops()
    assert g.nodes["a"].purity is PURE
    assert g.nodes["b"].purity is NON_PURE


def test_outer_loop_resets_inner_slot():
    g = nested_loops()
    g.validate()
    inner_edge, outer_edge = g.children("inner")[0], g.children("outer")[0]
    assert g.slot_resets(outer_edge.epoch_slot) == (inner_edge.epoch_slot,)
    assert g.slot_resets(inner_edge.epoch_slot) == ()
    epoch = (0, 0)
    epoch = advance_epoch(g, epoch, inner_edge)
    epoch = advance_epoch(g, epoch, inner_edge)
    assert epoch[inner_edge.epoch_slot] == 2
    epoch = advance_epoch(g, epoch, outer_edge)
    assert epoch[inner_edge.epoch_slot] == 0 and epoch[outer_edge.epoch_slot] == 1


def test_sequential_loops_do_not_reset_each_other():
    g = IOGraph("seq")
    a = g.add_syscall_node("a", "pread", _args)
    la = g.add_branch_node("la", _choice)
    b = g.add_syscall_node("b", "pread", _args)
    lb = g.add_branch_node("lb", _choice)
    g.set_next(g.start, a)
    g.set_next(a, la)
    g.branch_append_child(la, a, loop_back=True)
    g.branch_append_child(la, b)
    g.set_next(b, lb)
    g.branch_append_child(lb, b, loop_back=True)
    g.branch_append_child(lb, g.end)
    assert g.validate() == []
    assert g.slot_resets(0) == () and g.slot_resets(1) == ()


def test_shared_loop_head_gets_one_slot_per_loop_back():
    """a; if x: loop back to a; else if y: loop back to a"""
    g = IOGraph("shared-head")
    a = g.add_syscall_node("a", "pread", _args)
    x = g.add_branch_node("x", _choice)
    y = g.add_branch_node("y", _choice)
    g.set_next(g.start, a)
    g.set_next(a, x)
    g.branch_append_child(x, a, loop_back=True)
    g.branch_append_child(x, y)
    g.branch_append_child(y, a, loop_back=True)
    g.branch_append_child(y, g.end)
    assert g.validate() == []
    ex, ey = g.children("x")[0], g.children("y")[0]
    assert g.num_slots == 2 and ex.epoch_slot != ey.epoch_slot
    # y's body {a, x, y} strictly contains x's body {a, x}, so y resets x
    assert g.slot_resets(ey.epoch_slot) == (ex.epoch_slot,)
    assert g.slot_resets(ex.epoch_slot) == ()
    seen = set()
    epoch = (0, 0)
    for edge in (ex, ex, ey, ex, ey):
        epoch = advance_epoch(g, epoch, edge)
        assert epoch not in seen
        seen.add(epoch)
    assert epoch[ey.epoch_slot] == 2 and epoch[ex.epoch_slot] == 0


def test_builder_rejects_bad_wiring():
    g = IOGraph("bad")
    a = g.add_syscall_node("a", "pread", _args)
    br = g.add_branch_node("br", _choice)
    with pytest.raises(DuplicateNode):
        g.add_syscall_node("a", "pread", _args)
    with pytest.raises(GraphError):
        g.set_next(br, a)  # branch nodes use branch_append_child
    with pytest.raises(GraphError):
        g.branch_append_child(a, br)
    with pytest.raises(GraphError):
        g.branch_append_child(br, a, loop_back=True)  # a does not precede br yet
    with pytest.raises(GraphError):
        g.set_next("ghost", a)
    g.set_next(g.start, a)
    with pytest.raises(GraphError):
        g.set_next(g.start, br)  # single successor


def test_validate_reports_every_violation():
    g = IOGraph("broken")
    g.add_syscall_node("orphan", "pread", None)
    g.add_branch_node("dangling", None)
    problems = g.validate()
    text = "\n".join(problems)
    assert "start node '<start>' has 0 outgoing edges" in text
    assert "end node '<end>' has no incoming edge" in text
    assert "no compute_args hook" in text
    assert "no choice hook" in text
    assert "branch node 'dangling' has no outgoing edge" in text
    assert not g.validated


def test_unreachable_nodes_are_reported():
    g = IOGraph("island")
    a = g.add_syscall_node("a", "pread", _args)
    b = g.add_syscall_node("b", "pread", _args)
    c = g.add_syscall_node("c", "pread", _args)
    g.set_next(g.start, a)
    g.set_next(a, g.end)
    g.set_next(b, c)
    g.set_next(c, b)
    problems = g.validate()
    assert any("cycle" in p for p in problems)


def test_registry_tracks_sessions():
    reg = GraphRegistry()
    g = nested_loops()
    reg.register(g)
    reg.acquire(g)
    with pytest.raises(GraphError):
        reg.register(nested_loops())
    reg.release(g)
    assert reg.active(g) == 0
    replacement = reg.register(nested_loops())
    assert reg.get("nested") is replacement
