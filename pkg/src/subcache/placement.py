"""Replica placement: assigns ceil(X_m) copies of every subpacket (or
ceil(r_m) coded subpackets) to distinct node caches, always filling the
currently least-loaded nodes, so the per-node load stays within 2S.

Steps run in ascending content then subpacket order. Each step takes the
least-loaded nodes, breaking load ties uniformly at random from the seeded
stream. The sort-per-step of the textbook formulation is replaced by a
bucket-by-load structure with identical selection semantics: whole lower
buckets are taken outright and the boundary bucket contributes a uniform
random subset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .allocation import Allocation
from .delay_model import NetworkConfig

__all__ = [
    "CacheAssignment",
    "PlacementReport",
    "place",
    "verify",
    "save_assignment",
    "load_assignment",
]


@dataclass(frozen=True)
class CacheAssignment:
    """Per-node cache contents.

    entries is a (T, 3) int array of (node_id, content_id, subpacket_id)
    rows, node ids 0-based, content and subpacket ids 1-based. For MDS the
    subpacket id is the coded-subpacket index within the content. load[i]
    is the number of cached subpackets at node i.
    """

    n: int
    kind: str
    entries: np.ndarray
    load: np.ndarray = field(repr=False)

    def per_node(self) -> list[list[tuple[int, int]]]:
        """Materialize the per-node lists of (content_id, subpacket_id)."""
        out: list[list[tuple[int, int]]] = [[] for _ in range(self.n)]
        for node, content, sub in self.entries:
            out[node].append((int(content), int(sub)))
        return out

    def holders(self, content_id: int, subpacket_id: int) -> np.ndarray:
        mask = (self.entries[:, 1] == content_id) & (self.entries[:, 2] == subpacket_id)
        return self.entries[mask, 0]


class _LoadBuckets:
    """Nodes grouped by current load; supports 'take the c least-loaded'."""

    def __init__(self, n: int, rng: np.random.Generator):
        self.rng = rng
        self.levels: dict[int, list[np.ndarray]] = {0: [np.arange(n, dtype=np.int64)]}
        self.sizes: dict[int, int] = {0: n}
        self.min_level = 0

    def take(self, count: int) -> np.ndarray:
        taken: list[np.ndarray] = []
        level = self.min_level
        need = count
        while need > 0:
            while self.sizes.get(level, 0) == 0:
                level += 1
            pool = np.concatenate(self.levels[level]) if len(self.levels[level]) > 1 else self.levels[level][0]
            if pool.size <= need:
                chosen, rest = pool, pool[:0]
            else:
                # uniform subset of the tied boundary bucket
                keys = self.rng.random(pool.size)
                order = np.argpartition(keys, need)
                chosen, rest = pool[order[:need]], pool[order[need:]]
            taken.append(chosen)
            need -= chosen.size
            if rest.size:
                self.levels[level] = [rest]
                self.sizes[level] = rest.size
            else:
                self.levels[level] = []
                self.sizes[level] = 0
            self.levels.setdefault(level + 1, []).append(chosen)
            self.sizes[level + 1] = self.sizes.get(level + 1, 0) + chosen.size
        while self.sizes.get(self.min_level, 0) == 0:
            self.min_level += 1
        return np.concatenate(taken) if len(taken) > 1 else taken[0]


def place(alloc: Allocation, cfg: NetworkConfig, seed: int) -> CacheAssignment:
    """Run the water-filling placement for an allocation.

    Uncoded: step (m, k) caches one replica of subpacket k of content m at
    each of ceil(X_m) distinct least-loaded nodes. MDS: the ceil(r_m) coded
    subpackets of content m land on distinct nodes, least-loaded first with
    nodes already holding the content excluded.
    """
    n = cfg.n
    copies = np.ceil(alloc.values - 1e-9).astype(np.int64)
    if alloc.kind == "uncoded":
        total = int(cfg.K * copies.sum())
        if copies.max(initial=0) > n:
            raise ValueError(
                f"a step needs {copies.max()} distinct nodes but only n={n} exist"
            )
    else:
        total = int(copies.sum())
        if copies.max(initial=0) > n:
            raise ValueError(
                f"content needs {copies.max()} distinct nodes but only n={n} exist"
            )
    if total > 2 * cfg.S * n:
        raise ValueError(
            f"{total} subpacket copies exceed the 2*S*n = {2 * cfg.S * n} placement slack"
        )
    rng = np.random.default_rng(seed)
    buckets = _LoadBuckets(n, rng)
    nodes_out: list[np.ndarray] = []
    contents_out: list[np.ndarray] = []
    subs_out: list[np.ndarray] = []
    for m in range(1, alloc.M + 1):
        c = int(copies[m - 1])
        if alloc.kind == "uncoded":
            for k in range(1, cfg.K + 1):
                chosen = buckets.take(c)
                nodes_out.append(chosen)
                contents_out.append(np.full(c, m, dtype=np.int64))
                subs_out.append(np.full(c, k, dtype=np.int64))
        else:
            # one step per coded copy; a fused take keeps the nodes distinct
            # within the content, matching least-loaded-first selection
            chosen = buckets.take(c)
            nodes_out.append(chosen)
            contents_out.append(np.full(c, m, dtype=np.int64))
            subs_out.append(np.arange(1, c + 1, dtype=np.int64))
    entries = np.column_stack(
        (np.concatenate(nodes_out), np.concatenate(contents_out), np.concatenate(subs_out))
    )
    load = np.bincount(entries[:, 0], minlength=n)
    return CacheAssignment(n=n, kind=alloc.kind, entries=entries, load=load)


@dataclass(frozen=True)
class PlacementReport:
    """Outcome of verify(): recomputed max load and invariant violations."""

    max_load: int
    copy_count_errors: list[str]

    @property
    def ok(self) -> bool:
        return not self.copy_count_errors


def verify(assignment: CacheAssignment, alloc: Allocation, S: int) -> PlacementReport:
    """Recompute loads and copy counts from the assignment and report every
    CacheAssignment invariant violation (never raises)."""
    errors: list[str] = []
    entries = assignment.entries
    load = np.bincount(entries[:, 0], minlength=assignment.n)
    max_load = int(load.max(initial=0))
    if max_load > 2 * S:
        errors.append(f"max per-node load {max_load} exceeds 2S = {2 * S}")
    unique_rows = np.unique(entries, axis=0)
    if unique_rows.shape[0] != entries.shape[0]:
        errors.append(
            f"{entries.shape[0] - unique_rows.shape[0]} duplicated "
            "(node, content, subpacket) copies"
        )
    copies = np.ceil(alloc.values - 1e-9).astype(np.int64)
    M = alloc.M
    if alloc.kind == "uncoded":
        K = int(entries[:, 2].max(initial=1))
        counts = np.zeros((M + 1, K + 1), dtype=np.int64)
        np.add.at(counts, (entries[:, 1], entries[:, 2]), 1)
        for m in range(1, M + 1):
            bad = np.nonzero(counts[m, 1:] != copies[m - 1])[0]
            for k in bad:
                errors.append(
                    f"content {m} subpacket {k + 1} has {counts[m, k + 1]} copies, "
                    f"expected {copies[m - 1]}"
                )
    else:
        per_content = np.bincount(entries[:, 1], minlength=M + 1)
        for m in range(1, M + 1):
            if per_content[m] != copies[m - 1]:
                errors.append(
                    f"content {m} cached on {per_content[m]} nodes, expected {copies[m - 1]}"
                )
        # distinct nodes and distinct coded ids within each content
        for col, label in ((0, "node"), (2, "coded-subpacket id")):
            pairs = np.unique(entries[:, (1, col)], axis=0)
            dup = np.bincount(pairs[:, 0], minlength=M + 1) != per_content
            for m in np.nonzero(dup)[0]:
                if m:
                    errors.append(f"content {m} repeats a {label}")
    return PlacementReport(max_load=max_load, copy_count_errors=errors)


def save_assignment(path, assignment: CacheAssignment) -> None:
    """Write the line-oriented text format: `node_id content_id subpacket_id`."""
    order = np.lexsort((assignment.entries[:, 2], assignment.entries[:, 1], assignment.entries[:, 0]))
    with open(path, "w") as fh:
        for node, content, sub in assignment.entries[order]:
            fh.write(f"{node} {content} {sub}\n")


def load_assignment(path, n: int, kind: str = "uncoded") -> CacheAssignment:
    """Read the text format back; n must be supplied since empty caches
    leave no trace in the file."""
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            node, content, sub = (int(tok) for tok in line.split())
            rows.append((node, content, sub))
    entries = np.array(rows, dtype=np.int64).reshape(-1, 3)
    load = np.bincount(entries[:, 0], minlength=n)
    return CacheAssignment(n=n, kind=kind, entries=entries, load=load)
