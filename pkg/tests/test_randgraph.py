from __future__ import annotations

from hypothesis import given, settings
from hypothesis import strategies as st

from preissue.engine import PhantomEffect, purity_violations
from preissue.trace import check_equivalence

from .randgraph import compile_graph, generate, run_random

seeds = st.integers(0, 1_000_000)


@settings(max_examples=60, deadline=None)
@given(seed=seeds, depth=st.sampled_from([1, 2, 4, 16]))
def test_random_programs_keep_synchrony(seed, depth):
    prog = generate(seed)
    ref = run_random(prog, 0)
    run = run_random(prog, depth)
    assert check_equivalence(ref.artifacts, run.artifacts)
    assert run.max_inflight <= depth
    assert not any(purity_violations(s) for s in run.sessions)


@settings(max_examples=15, deadline=None)
@given(seed=seeds)
def test_random_programs_on_worker_pool(seed):
    prog = generate(seed)
    ref = run_random(prog, 0)
    run = run_random(prog, 4, executor="worker-pool")
    assert check_equivalence(ref.artifacts, run.artifacts)


@settings(max_examples=40, deadline=None)
@given(seed=seeds)
def test_generated_graphs_validate(seed):
    graph = compile_graph(generate(seed, max_calls=14))
    assert graph.validate() == []


def test_unmarked_weak_edges_are_caught_when_they_matter():
    caught = 0
    for seed in range(60):
        prog = generate(seed)
        ref = run_random(prog, 0).artifacts
        try:
            bad = run_random(prog, 16, unmark_weak=True)
        except PhantomEffect:
            caught += 1
            bad = run_random(prog, 16, unmark_weak=True, strict=False)
            assert not check_equivalence(ref, bad.artifacts)
    assert caught > 0
