"""Compositional pattern networks: small evolvable function graphs queried
over image coordinates to paint feature weight patterns.

A genome has a fixed IO layout: four inputs (x, y, distance-from-center,
constant 1) and three outputs (pattern weight W, link-expression gate L,
feature bias B).  Hidden structure grows by mutation only; the enabled
connection graph is always acyclic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .activations import ActivationKind, apply_activation

GENOME_FORMAT_VERSION = 1

# Fixed node ids.  Inputs: x, y, d, bias.  Outputs: W, L, B.
INPUT_IDS = (0, 1, 2, 3)
OUTPUT_IDS = (4, 5, 6)
FIRST_HIDDEN_ID = 7

_KINDS = list(ActivationKind)


class GenomeError(Exception):
    """A genome violates its structural invariants."""


class CyclicGenomeError(GenomeError):
    """The enabled connection graph contains a cycle (corrupted genome)."""


@dataclass(frozen=True)
class CppnNode:
    id: int
    kind: str  # input | hidden | output
    activation: ActivationKind


@dataclass
class CppnConnection:
    source: int
    target: int
    weight: float
    enabled: bool = True


@dataclass
class MutationParams:
    """Per-offspring mutation probabilities and magnitudes.

    weight_perturb_prob gates one jitter pass over every connection; inside
    that pass each connection is either reset outright (reset_prob) or
    nudged by gaussian noise of scale sigma.  Structural mutations each fire
    independently at most once per offspring.
    """

    weight_perturb_prob: float = 0.80
    sigma: float = 0.3
    reset_prob: float = 0.10
    add_connection_prob: float = 0.10
    add_node_prob: float = 0.05
    delete_connection_prob: float = 0.05
    weight_clamp: float = 5.0  # connection weights live in [-clamp, +clamp]


@dataclass
class CppnGenome:
    """Directed acyclic function network with the fixed 4-in/3-out layout.

    `connections` order is meaningful: incoming sums during evaluation add
    terms in list order, which keeps evaluation bit-reproducible.
    `innovation` is the next fresh hidden-node id.
    """

    nodes: dict[int, CppnNode]
    connections: list[CppnConnection]
    innovation: int = FIRST_HIDDEN_ID
    lineage: str = ""

    def node_count(self) -> int:
        return len(self.nodes)

    def enabled_count(self) -> int:
        return sum(1 for c in self.connections if c.enabled)

    def copy(self) -> "CppnGenome":
        return CppnGenome(
            nodes=dict(self.nodes),
            connections=[replace(c) for c in self.connections],
            innovation=self.innovation,
            lineage=self.lineage,
        )


def _topological_order(g: CppnGenome) -> list[int]:
    """Kahn's algorithm over enabled connections, sorted queue for stability."""
    indeg = {nid: 0 for nid in g.nodes}
    succ: dict[int, list[int]] = {nid: [] for nid in g.nodes}
    for c in g.connections:
        if c.enabled:
            indeg[c.target] += 1
            succ[c.source].append(c.target)
    ready = sorted(nid for nid, d in indeg.items() if d == 0)
    order: list[int] = []
    while ready:
        nid = ready.pop(0)
        order.append(nid)
        changed = False
        for t in succ[nid]:
            indeg[t] -= 1
            if indeg[t] == 0:
                ready.append(t)
                changed = True
        if changed:
            ready.sort()
    if len(order) != len(g.nodes):
        raise CyclicGenomeError("cycle detected in enabled connection graph")
    return order


def evaluate_batch(g: CppnGenome, xs: np.ndarray, ys: np.ndarray):
    """Evaluate the genome at many (x, y) points in one pass.

    Returns (W, L, B) arrays.  The distance input is sqrt(x^2 + y^2) and the
    bias input is the constant 1.  Nodes with no incoming enabled
    connections output activation(0).
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    values: dict[int, np.ndarray] = {
        0: xs,
        1: ys,
        2: np.sqrt(xs * xs + ys * ys),
        3: np.ones_like(xs),
    }
    incoming: dict[int, list[CppnConnection]] = {nid: [] for nid in g.nodes}
    for c in g.connections:
        if c.enabled:
            incoming[c.target].append(c)

    for nid in _topological_order(g):
        node = g.nodes[nid]
        if node.kind == "input":
            continue
        s = np.zeros_like(xs)
        for c in incoming[nid]:
            s = s + c.weight * values[c.source]
        values[nid] = apply_activation(node.activation, s)

    w, l, b = (values[oid] for oid in OUTPUT_IDS)
    return w, l, b


def evaluate(g: CppnGenome, x: float, y: float) -> tuple[float, float, float]:
    """Single-point evaluation; see evaluate_batch."""
    w, l, b = evaluate_batch(g, np.array([x]), np.array([y]))
    return float(w[0]), float(l[0]), float(b[0])


def _io_nodes() -> dict[int, CppnNode]:
    nodes = {i: CppnNode(i, "input", ActivationKind.LINEAR) for i in INPUT_IDS}
    for o in OUTPUT_IDS:
        nodes[o] = CppnNode(o, "output", ActivationKind.LINEAR)
    return nodes


def random_genome(
    rng: np.random.Generator,
    params: MutationParams | None = None,
    lineage: str = "",
) -> CppnGenome:
    """Minimal random genome: IO nodes only, each input wired to each output
    with probability 1/2 and a uniform weight."""
    params = params or MutationParams()
    conns = []
    for i in INPUT_IDS:
        for o in OUTPUT_IDS:
            if rng.random() < 0.5:
                w = rng.uniform(-params.weight_clamp, params.weight_clamp)
                conns.append(CppnConnection(i, o, w))
    return CppnGenome(_io_nodes(), conns, FIRST_HIDDEN_ID, lineage)


def _reaches(g: CppnGenome, start: int, goal: int) -> bool:
    """True if `goal` is reachable from `start` along enabled connections."""
    succ: dict[int, list[int]] = {}
    for c in g.connections:
        if c.enabled:
            succ.setdefault(c.source, []).append(c.target)
    stack, seen = [start], set()
    while stack:
        nid = stack.pop()
        if nid == goal:
            return True
        if nid in seen:
            continue
        seen.add(nid)
        stack.extend(succ.get(nid, ()))
    return False


def mutate(
    g: CppnGenome,
    rng: np.random.Generator,
    params: MutationParams | None = None,
    lineage: str | None = None,
) -> CppnGenome:
    """Return a mutated copy of g; g itself is never modified.

    Applied in fixed order so a given rng stream always produces the same
    offspring: weight pass, add-connection, add-node, delete-connection.
    Structural mutations that cannot apply (no room, would create a cycle)
    are skipped silently.
    """
    params = params or MutationParams()
    out = g.copy()
    if lineage is not None:
        out.lineage = lineage
    clamp = params.weight_clamp

    if rng.random() < params.weight_perturb_prob:
        for c in out.connections:
            if rng.random() < params.reset_prob:
                c.weight = rng.uniform(-clamp, clamp)
            else:
                c.weight = float(
                    np.clip(c.weight + rng.normal(0.0, params.sigma), -clamp, clamp)
                )

    if rng.random() < params.add_connection_prob:
        sources = [n.id for n in out.nodes.values() if n.kind != "output"]
        targets = [n.id for n in out.nodes.values() if n.kind != "input"]
        existing = {(c.source, c.target) for c in out.connections}
        for _ in range(20):
            s = sources[int(rng.integers(len(sources)))]
            t = targets[int(rng.integers(len(targets)))]
            if s == t or (s, t) in existing:
                continue
            if _reaches(out, t, s):  # would close a cycle
                continue
            out.connections.append(
                CppnConnection(s, t, rng.uniform(-clamp, clamp))
            )
            break

    if rng.random() < params.add_node_prob:
        enabled = [c for c in out.connections if c.enabled]
        if enabled:
            old = enabled[int(rng.integers(len(enabled)))]
            old.enabled = False
            kind = _KINDS[int(rng.integers(len(_KINDS)))]
            nid = out.innovation
            out.innovation += 1
            out.nodes[nid] = CppnNode(nid, "hidden", kind)
            out.connections.append(CppnConnection(old.source, nid, 1.0))
            out.connections.append(CppnConnection(nid, old.target, old.weight))

    if rng.random() < params.delete_connection_prob:
        if out.connections:
            idx = int(rng.integers(len(out.connections)))
            del out.connections[idx]

    return out


def validate_genome(g: CppnGenome, weight_clamp: float = 5.0) -> None:
    """Raise GenomeError if any structural invariant is broken."""
    for i in INPUT_IDS:
        node = g.nodes.get(i)
        if node is None or node.kind != "input" or node.activation != ActivationKind.LINEAR:
            raise GenomeError(f"input node {i} missing or altered")
    for o in OUTPUT_IDS:
        node = g.nodes.get(o)
        if node is None or node.kind != "output":
            raise GenomeError(f"output node {o} missing or altered")
    seen_pairs = set()
    for c in g.connections:
        if c.source not in g.nodes or c.target not in g.nodes:
            raise GenomeError(f"dangling endpoint on {c.source}->{c.target}")
        if c.source == c.target:
            raise GenomeError(f"self-loop on node {c.source}")
        if g.nodes[c.target].kind == "input":
            raise GenomeError(f"connection into input node {c.target}")
        if g.nodes[c.source].kind == "output":
            raise GenomeError(f"connection out of output node {c.source}")
        if (c.source, c.target) in seen_pairs:
            raise GenomeError(f"duplicate connection {c.source}->{c.target}")
        seen_pairs.add((c.source, c.target))
        if not math.isfinite(c.weight) or abs(c.weight) > weight_clamp + 1e-12:
            raise GenomeError(f"weight {c.weight} outside clamp on {c.source}->{c.target}")
    for nid in g.nodes:
        if nid >= g.innovation and g.nodes[nid].kind == "hidden":
            raise GenomeError(f"hidden id {nid} not below innovation counter")
    _topological_order(g)  # raises CyclicGenomeError on a cycle


def genome_to_json(g: CppnGenome) -> str:
    """Canonical one-document text form; round-trips byte-identically."""
    doc = {
        "format": "cppn-genome",
        "version": GENOME_FORMAT_VERSION,
        "innovation": g.innovation,
        "lineage": g.lineage,
        "nodes": [
            [n.id, n.kind, n.activation.value]
            for n in sorted(g.nodes.values(), key=lambda n: n.id)
        ],
        "connections": [
            [c.source, c.target, c.weight, c.enabled] for c in g.connections
        ],
    }
    return json.dumps(doc, indent=1)


def genome_from_json(text: str) -> CppnGenome:
    doc = json.loads(text)
    if doc.get("format") != "cppn-genome":
        raise GenomeError("not a genome document")
    if doc.get("version") != GENOME_FORMAT_VERSION:
        raise GenomeError(f"unsupported genome format version {doc.get('version')}")
    nodes = {
        int(nid): CppnNode(int(nid), kind, ActivationKind(act))
        for nid, kind, act in doc["nodes"]
    }
    conns = [
        CppnConnection(int(s), int(t), float(w), bool(e))
        for s, t, w, e in doc["connections"]
    ]
    return CppnGenome(nodes, conns, int(doc["innovation"]), doc.get("lineage", ""))
