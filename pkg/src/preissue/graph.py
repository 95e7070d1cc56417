"""I/O graph data model and builder.

A graph has one start node, one end node, syscall nodes and branch nodes.
Edges flow forward as a DAG; loops are expressed by loop-back edges leaving
a branch node, each owning one slot of the graph's epoch vector.

Hooks are opaque to the graph:

* ``compute_args(ctx, epoch) -> (ready, link, SyscallRequest | None)``
* ``save_result(ctx, epoch, rc, payload) -> None``
* ``choice(ctx, epoch) -> (ready, child_index)``

``ctx`` is the per-session hook context supplied by the engine.
"""

from __future__ import annotations

import threading
from collections import defaultdict, deque
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Union

from .catalog import Purity, SyscallType, as_type, classify


class GraphError(Exception):
    pass


class DuplicateNode(GraphError):
    pass


class GraphFrozen(GraphError):
    pass


class NodeKind(str, Enum):
    START = "start"
    END = "end"
    SYSCALL = "syscall"
    BRANCH = "branch"


@dataclass(eq=False)
class EdgeDef:
    source: str
    target: str
    weak: bool = False
    loop_back: bool = False
    epoch_slot: Optional[int] = None


@dataclass(eq=False)
class NodeDef:
    id: str
    kind: NodeKind


@dataclass(eq=False)
class SyscallNodeDef(NodeDef):
    syscall_type: SyscallType = SyscallType.PREAD
    compute_args: Optional[Callable] = None
    save_result: Optional[Callable] = None
    # False models a Harvest that leaves the result in the internal buffer
    copy_result: bool = True

    @property
    def purity(self) -> Purity:
        return classify(self.syscall_type)


@dataclass(eq=False)
class BranchNodeDef(NodeDef):
    choice: Optional[Callable] = None


NodeRef = Union[str, NodeDef]

START_ID = "<start>"
END_ID = "<end>"


class IOGraph:
    def __init__(self, name: str) -> None:
        self.name = name
        self.nodes: dict[str, NodeDef] = {}
        self.edges: list[EdgeDef] = []
        self.start = NodeDef(START_ID, NodeKind.START)
        self.end = NodeDef(END_ID, NodeKind.END)
        self.nodes[START_ID] = self.start
        self.nodes[END_ID] = self.end
        self.validated = False
        self.num_slots = 0
        self._out: dict[str, list[EdgeDef]] = {}
        self._slot_resets: dict[int, tuple[int, ...]] = {}
        self._order: dict[str, int] = {}

    # builder ---------------------------------------------------------------

    def _check_mutable(self) -> None:
        if self.validated:
            raise GraphFrozen(f"graph {self.name!r} is validated and immutable")

    def _id(self, ref: NodeRef) -> str:
        node_id = ref.id if isinstance(ref, NodeDef) else ref
        if node_id not in self.nodes:
            raise GraphError(f"unknown node {node_id!r}")
        return node_id

    def add_syscall_node(self, node_id: str, syscall_type: Union[str, SyscallType],
                         compute_args: Callable, save_result: Optional[Callable] = None,
                         copy_result: bool = True) -> SyscallNodeDef:
        self._check_mutable()
        if node_id in self.nodes:
            raise DuplicateNode(node_id)
        node = SyscallNodeDef(node_id, NodeKind.SYSCALL, as_type(syscall_type),
                              compute_args, save_result, copy_result)
        self.nodes[node_id] = node
        return node

    def add_branch_node(self, node_id: str, choice: Callable) -> BranchNodeDef:
        self._check_mutable()
        if node_id in self.nodes:
            raise DuplicateNode(node_id)
        node = BranchNodeDef(node_id, NodeKind.BRANCH, choice)
        self.nodes[node_id] = node
        return node

    def set_next(self, node: NodeRef, successor: NodeRef, weak: bool = False) -> EdgeDef:
        self._check_mutable()
        src, dst = self._id(node), self._id(successor)
        kind = self.nodes[src].kind
        if kind not in (NodeKind.START, NodeKind.SYSCALL):
            raise GraphError(f"set_next on {kind.value} node {src!r}")
        if self.outgoing(src):
            raise GraphError(f"node {src!r} already has an outgoing edge")
        edge = EdgeDef(src, dst, weak=weak)
        self.edges.append(edge)
        return edge

    def branch_append_child(self, branch: NodeRef, child: NodeRef, loop_back: bool = False) -> EdgeDef:
        self._check_mutable()
        src, dst = self._id(branch), self._id(child)
        if self.nodes[src].kind is not NodeKind.BRANCH:
            raise GraphError(f"{src!r} is not a branch node")
        slot = None
        if loop_back:
            if dst == src or dst not in self._forward_reach_to(src):
                raise GraphError(f"loop-back target {dst!r} does not precede {src!r}")
            if self.nodes[dst].kind not in (NodeKind.SYSCALL, NodeKind.BRANCH):
                raise GraphError("loop-back must target a syscall or branch node")
            slot = sum(1 for e in self.edges if e.loop_back)
        edge = EdgeDef(src, dst, loop_back=loop_back, epoch_slot=slot)
        self.edges.append(edge)
        return edge

    # queries ---------------------------------------------------------------

    def outgoing(self, node_id: str) -> list[EdgeDef]:
        if self.validated:
            return self._out.get(node_id, [])
        return [e for e in self.edges if e.source == node_id]

    def incoming(self, node_id: str) -> list[EdgeDef]:
        return [e for e in self.edges if e.target == node_id]

    def next_edge(self, node_id: str) -> Optional[EdgeDef]:
        out = self.outgoing(node_id)
        return out[0] if out else None

    def children(self, node_id: str) -> list[EdgeDef]:
        return self.outgoing(node_id)

    def syscall_nodes(self) -> list[SyscallNodeDef]:
        return [n for n in self.nodes.values() if isinstance(n, SyscallNodeDef)]

    def slot_resets(self, slot: int) -> tuple[int, ...]:
        """Slots of loops strictly enclosed by the loop owning ``slot``."""
        return self._slot_resets.get(slot, ())

    def _forward_reach_to(self, target: str) -> set[str]:
        """Nodes that reach ``target`` over forward edges (target included)."""
        preds = defaultdict(list)
        for e in self.edges:
            if not e.loop_back:
                preds[e.target].append(e.source)
        seen = {target}
        todo = deque([target])
        while todo:
            for p in preds[todo.popleft()]:
                if p not in seen:
                    seen.add(p)
                    todo.append(p)
        return seen

    def _forward_reach_from(self, source: str) -> set[str]:
        succ = defaultdict(list)
        for e in self.edges:
            if not e.loop_back:
                succ[e.source].append(e.target)
        seen = {source}
        todo = deque([source])
        while todo:
            for s in succ[todo.popleft()]:
                if s not in seen:
                    seen.add(s)
                    todo.append(s)
        return seen

    # validation ------------------------------------------------------------

    def validate(self) -> list[str]:
        """Return every structural violation; an empty list freezes the graph."""
        if self.validated:
            return []
        v: list[str] = []
        kinds = defaultdict(list)
        for node in self.nodes.values():
            kinds[node.kind].append(node.id)
        if len(kinds[NodeKind.START]) != 1:
            v.append("multiple start nodes" if kinds[NodeKind.START] else "missing start node")
        if len(kinds[NodeKind.END]) != 1:
            v.append("multiple end nodes" if kinds[NodeKind.END] else "missing end node")

        for e in self.edges:
            for end_id in (e.source, e.target):
                if end_id not in self.nodes:
                    v.append(f"edge references unknown node {end_id!r}")

        out_deg = defaultdict(int)
        in_deg = defaultdict(int)
        for e in self.edges:
            out_deg[e.source] += 1
            in_deg[e.target] += 1
        for node in self.nodes.values():
            i, o = in_deg[node.id], out_deg[node.id]
            if node.kind is NodeKind.START:
                if i:
                    v.append(f"start node {node.id!r} has incoming edges")
                if o != 1:
                    v.append(f"start node {node.id!r} has {o} outgoing edges, expected 1")
            elif node.kind is NodeKind.END:
                if o:
                    v.append(f"end node {node.id!r} has outgoing edges")
                if not i:
                    v.append(f"end node {node.id!r} has no incoming edge")
            elif node.kind is NodeKind.SYSCALL:
                if i < 1:
                    v.append(f"syscall node {node.id!r} has no incoming edge")
                if o != 1:
                    v.append(f"syscall node {node.id!r} has {o} outgoing edges, expected 1")
                if node.compute_args is None:
                    v.append(f"syscall node {node.id!r} has no compute_args hook")
            else:
                if i < 1:
                    v.append(f"branch node {node.id!r} has no incoming edge")
                if o < 1:
                    v.append(f"branch node {node.id!r} has no outgoing edge")
                if node.choice is None:
                    v.append(f"branch node {node.id!r} has no choice hook")

        slots = [e.epoch_slot for e in self.edges if e.loop_back]
        if len(set(slots)) != len(slots) or None in slots:
            v.append("loop-back edges do not own distinct epoch slots")
        for e in self.edges:
            if e.loop_back and self.nodes.get(e.source, self.start).kind is not NodeKind.BRANCH:
                v.append(f"loop-back edge leaves non-branch node {e.source!r}")
            if not e.loop_back and e.epoch_slot is not None:
                v.append(f"forward edge {e.source!r}->{e.target!r} carries an epoch slot")
            if e.weak and e.loop_back:
                v.append(f"loop-back edge {e.source!r}->{e.target!r} marked weak")

        order = self._topo_order()
        if order is None:
            v.append("forward edges contain a cycle")
        else:
            pos = {n: k for k, n in enumerate(order)}
            for e in self.edges:
                if e.loop_back and e.source in pos and e.target in pos:
                    if e.target not in self._forward_reach_to(e.source):
                        v.append(f"loop-back {e.source!r}->{e.target!r} targets a non-prior node")

        if not v:
            reach = self._reach_all(START_ID, forward=True)
            for node_id in self.nodes:
                if node_id not in reach:
                    v.append(f"node {node_id!r} unreachable from start")
            back = self._reach_all(END_ID, forward=False)
            for node_id in self.nodes:
                if node_id not in back:
                    v.append(f"end unreachable from node {node_id!r}")

        if not v:
            self._freeze(order)
        return v

    def _reach_all(self, origin: str, forward: bool) -> set[str]:
        adj = defaultdict(list)
        for e in self.edges:
            if forward:
                adj[e.source].append(e.target)
            else:
                adj[e.target].append(e.source)
        seen = {origin}
        todo = deque([origin])
        while todo:
            for n in adj[todo.popleft()]:
                if n not in seen:
                    seen.add(n)
                    todo.append(n)
        return seen

    def _topo_order(self) -> Optional[list[str]]:
        indeg = {n: 0 for n in self.nodes}
        succ = defaultdict(list)
        for e in self.edges:
            if not e.loop_back and e.source in indeg and e.target in indeg:
                succ[e.source].append(e.target)
                indeg[e.target] += 1
        ready = deque(n for n, d in indeg.items() if d == 0)
        order = []
        while ready:
            n = ready.popleft()
            order.append(n)
            for s in succ[n]:
                indeg[s] -= 1
                if indeg[s] == 0:
                    ready.append(s)
        return order if len(order) == len(self.nodes) else None

    def _freeze(self, order: list[str]) -> None:
        self._order = {n: k for k, n in enumerate(order)}
        self._out = defaultdict(list)
        for e in self.edges:
            self._out[e.source].append(e)
        self._out = dict(self._out)
        loops = [e for e in self.edges if e.loop_back]
        self.num_slots = len(loops)
        bodies = {e.epoch_slot: self._forward_reach_from(e.target) & self._forward_reach_to(e.source)
                  for e in loops}
        self._slot_resets = {
            slot: tuple(sorted(s for s, b in bodies.items() if b < body))
            for slot, body in bodies.items()
        }
        self.validated = True

    def __repr__(self) -> str:
        return (f"IOGraph({self.name!r}, nodes={len(self.nodes) - 2}, "
                f"edges={len(self.edges)}, validated={self.validated})")


def validate(graph: IOGraph) -> list[str]:
    return graph.validate()


class GraphRegistry:
    """Process-wide name -> graph table with active-session accounting."""

    def __init__(self) -> None:
        self._graphs: dict[str, IOGraph] = {}
        self._active: dict[int, int] = defaultdict(int)
        self._lock = threading.Lock()

    def register(self, graph: IOGraph) -> IOGraph:
        with self._lock:
            old = self._graphs.get(graph.name)
            if old is not None and old is not graph and self._active[id(old)]:
                raise GraphError(f"graph {graph.name!r} has active sessions")
            self._graphs[graph.name] = graph
            return graph

    def get(self, name: str) -> IOGraph:
        with self._lock:
            return self._graphs[name]

    def acquire(self, graph: IOGraph) -> None:
        with self._lock:
            self._active[id(graph)] += 1

    def release(self, graph: IOGraph) -> None:
        with self._lock:
            self._active[id(graph)] -= 1
            if self._active[id(graph)] <= 0:
                del self._active[id(graph)]

    def active(self, graph: IOGraph) -> int:
        with self._lock:
            return self._active.get(id(graph), 0)


registry = GraphRegistry()
