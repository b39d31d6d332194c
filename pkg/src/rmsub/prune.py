"""Projection-selection strategies: minRank, maxRank, random and weight-based.

A PruningPlan lists, for every inner node of a projection tree (keyed by
the node's subspace path from the root), the 1-D subspaces kept at that
node.  Plans are deterministic given their inputs; every tie breaks toward
the ascending subspace integer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .project import ProjectionTree

__all__ = [
    "PruningPlan",
    "plan_minrank",
    "plan_maxrank",
    "plan_random",
    "plan_from_weights",
    "save_plan",
    "load_plan",
]


@dataclass(frozen=True)
class PruningPlan:
    """Per-node ordered subspace selections, keyed by node path."""

    selections: dict[tuple[int, ...], tuple[int, ...]]

    def beta(self, tree: ProjectionTree) -> dict[tuple[int, ...], float]:
        """Implied pruning factor per node: kept / available subspaces."""
        out = {}
        for node in tree.inner_nodes():
            sel = self.selections.get(node.path)
            if sel is not None:
                out[node.path] = len(sel) / (node.n - 1)
        return out


def _plan_by_rank(tree: ProjectionTree, p: int, largest: bool) -> PruningPlan:
    selections = {}
    for node in tree.inner_nodes():
        q = len(node.subspaces)
        if not 0 < p <= q:
            raise ValueError(f"need 0 < P <= {q} at node {node.path}")
        ranked = sorted(zip(node.subspaces, (c.rank for c in node.children)),
                        key=lambda t: (-t[1] if largest else t[1], t[0]))
        selections[node.path] = tuple(sorted(z for z, _ in ranked[:p]))
    return PruningPlan(selections=selections)


def plan_minrank(tree: ProjectionTree, p: int) -> PruningPlan:
    """Keep, per node, the P subspaces with the smallest projected ranks."""
    return _plan_by_rank(tree, p, largest=False)


def plan_maxrank(tree: ProjectionTree, p: int) -> PruningPlan:
    """Keep, per node, the P subspaces with the largest projected ranks."""
    return _plan_by_rank(tree, p, largest=True)


def plan_random(tree: ProjectionTree, p: int, seed: int) -> PruningPlan:
    """Keep a uniform random P-subset per node, reproducible from the seed."""
    rng = np.random.default_rng(seed)
    selections = {}
    for node in tree.inner_nodes():
        q = len(node.subspaces)
        if not 0 < p <= q:
            raise ValueError(f"need 0 < P <= {q} at node {node.path}")
        pick = rng.choice(q, size=p, replace=False)
        selections[node.path] = tuple(sorted(node.subspaces[i] for i in pick))
    return PruningPlan(selections=selections)


def plan_from_weights(weights, p: int) -> PruningPlan:
    """Keep, per node, the P subspaces with the largest trained weights.

    weights is a WeightState; ties break toward the ascending subspace
    integer, so with all-equal weights the selection is the first P
    subspace integers.  The selection only depends on the ordering of the
    weights, not their scale.
    """
    selections = {}
    for path, node_w in weights.nodes.items():
        w = weights.node_weights(path)
        if not 0 < p <= len(node_w.subspaces):
            raise ValueError(f"need 0 < P <= {len(node_w.subspaces)} at node {path}")
        order = sorted(zip(node_w.subspaces, w), key=lambda t: (-t[1], t[0]))
        selections[path] = tuple(sorted(z for z, _ in order[:p]))
    return PruningPlan(selections=selections)


def save_plan(plan: PruningPlan, path) -> None:
    """Write a plan file: 'node <path>' headers, one subspace integer per line."""
    lines = []
    for node_path in sorted(plan.selections):
        label = "/".join(str(z) for z in node_path) or "root"
        lines.append(f"node {label}")
        lines += [str(z) for z in plan.selections[node_path]]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_plan(path) -> PruningPlan:
    selections: dict[tuple[int, ...], list[int]] = {}
    current: list[int] | None = None
    with open(path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("node"):
                label = line[4:].strip()
                key = () if label in ("", "root") else tuple(int(t) for t in label.split("/"))
                current = selections.setdefault(key, [])
            else:
                if current is None:
                    raise ValueError("plan file must start with a 'node' header")
                current.append(int(line))
    return PruningPlan(selections={k: tuple(v) for k, v in selections.items()})
