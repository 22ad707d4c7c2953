"""Discrete-time Monte Carlo simulation of the delivery phase.

Geometry: nodes live on the unit torus and a transfer needs the source
inside the requester's contact cell, a square of side sqrt(area) centered
on the requester (L-infinity radius sqrt(area)/2). The cell has measure
exactly area, so with reshuffling mobility the per-slot contact probability
of X uniformly placed holders is exactly 1 - (1 - area)**X, the quantity
the delay formulas are built on. A node never serves its own request;
serving is passive, so a node may source a transfer and request in the
same slot.

Modes: "delay_only" delivers to every requester that sees an eligible
source (validates the contact-probability derivation); "scheduled" runs a
cell-coloring TDMA that activates at most one link per colored cell per
slot, keeping concurrent receivers clear of foreign transmitters by the
protocol-model guard margin.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .delay_model import NetworkConfig
from .placement import CacheAssignment
from .popularity import PopularityModel

__all__ = [
    "TrialMetrics",
    "HittingTimeEstimate",
    "ContactStats",
    "run_trial",
    "run_trials",
    "estimate_hitting_time",
    "empirical_contact_check",
]


@dataclass
class TrialMetrics:
    """Empirical outcome of one seeded trial.

    d_avg_empirical averages the delays of requests that started after the
    warmup; throughput_empirical counts those completions per node per
    post-warmup slot. contact_counters maps the nominal useful-copy count
    to (hits, attempts) for the contact-probability checks. The finite
    horizon truncates in-flight requests; censored_active reports how many,
    so the estimator bias stays visible.
    """

    d_avg_empirical: float
    throughput_empirical: float
    per_content_delays: dict[int, list[int]]
    contact_counters: dict[int, tuple[int, int]]
    completed: int
    censored_active: int
    slots: int
    warmup: int
    min_link_separation: float = math.inf


def _torus_within(delta: np.ndarray, half: float) -> np.ndarray:
    d = np.abs(delta)
    return np.minimum(d, 1.0 - d) <= half


def _torus_linf(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    d = np.abs(p - q)
    return np.minimum(d, 1.0 - d).max(axis=-1)


class _Requesters:
    """Per-requester demand state."""

    def __init__(self, nodes: np.ndarray, pop: PopularityModel, K: int, rng):
        self.nodes = nodes
        self.K = K
        self.content = pop.sample(rng, nodes.size).astype(np.int64)
        self.got = np.zeros(nodes.size, dtype=np.int64)
        self.age = np.zeros(nodes.size, dtype=np.int64)
        self.started = np.zeros(nodes.size, dtype=np.int64)
        self.received: list[list[int]] = [[] for _ in range(nodes.size)]


def run_trial(
    cfg: NetworkConfig,
    pop: PopularityModel,
    caches: CacheAssignment,
    mode: str = "delay_only",
    strategy: str = "uncoded_seq",
    slots: int = 1000,
    warmup: int = 0,
    seed: int = 0,
    requester_fraction: float = 1.0,
) -> TrialMetrics:
    """Simulate `slots` time slots of the delivery phase.

    Every slot: move nodes per the mobility model, let each active
    requester look for an eligible source in its contact cell (sequential:
    the holder of exactly the next subpacket index; random: any holder of a
    still-needed coded subpacket), deliver per the mode, and let finished
    requesters draw a fresh content from the popularity distribution.
    """
    if mode not in ("delay_only", "scheduled"):
        raise ValueError(f"unknown mode {mode!r}")
    if strategy not in ("uncoded_seq", "mds_random"):
        raise ValueError(f"unknown strategy {strategy!r}")
    if not slots > warmup >= 0:
        raise ValueError(f"need slots > warmup >= 0, got {slots}, {warmup}")
    n = cfg.n
    if caches.n != n:
        raise ValueError(f"cache assignment built for n={caches.n}, config has n={n}")
    if caches.entries[:, 1].max(initial=1) > pop.M:
        raise ValueError("cache assignment references contents beyond the library")
    rng = np.random.default_rng(seed)
    half = math.sqrt(cfg.area) / 2.0

    seq_holders: dict[tuple[int, int], np.ndarray] = {}
    mds_nodes: dict[int, np.ndarray] = {}
    mds_coded: dict[int, np.ndarray] = {}
    if strategy == "uncoded_seq":
        order = np.lexsort((caches.entries[:, 2], caches.entries[:, 1]))
        ent = caches.entries[order]
        keys, starts = np.unique(ent[:, 1:3], axis=0, return_index=True)
        bounds = np.append(starts, ent.shape[0])
        for i, (m, k) in enumerate(keys):
            seq_holders[(int(m), int(k))] = ent[bounds[i] : bounds[i + 1], 0].copy()
    else:
        order = np.argsort(caches.entries[:, 1], kind="stable")
        ent = caches.entries[order]
        keys, starts = np.unique(ent[:, 1], return_index=True)
        bounds = np.append(starts, ent.shape[0])
        for i, m in enumerate(keys):
            mds_nodes[int(m)] = ent[bounds[i] : bounds[i + 1], 0].copy()
            mds_coded[int(m)] = ent[bounds[i] : bounds[i + 1], 2].copy()

    if requester_fraction >= 1.0:
        req_nodes = np.arange(n, dtype=np.int64)
    else:
        count = max(1, int(requester_fraction * n))
        req_nodes = np.sort(rng.choice(n, size=count, replace=False))
    state = _Requesters(req_nodes, pop, cfg.K, rng)

    pos = rng.random((n, 2))
    if mode == "scheduled":
        guard_cells = math.ceil(3.0 + cfg.delta)
        blocks = int(1.0 // (guard_cells * math.sqrt(cfg.area)))
        grid = guard_cells * blocks if blocks >= 1 else 1
        phases = guard_cells**2 if blocks >= 1 else 1

    delays: dict[int, list[int]] = {}
    contact_hits: dict[int, int] = {}
    contact_attempts: dict[int, int] = {}
    completed = 0
    min_separation = math.inf

    for slot in range(slots):
        if cfg.mobility == "reshuffle":
            pos = rng.random((n, 2))
        else:
            theta = rng.random((n, 1)) * (2.0 * math.pi)
            step = cfg.flight_length * np.concatenate((np.cos(theta), np.sin(theta)), axis=1)
            pos = (pos + step) % 1.0
        state.age += 1

        hit = np.zeros(state.nodes.size, dtype=bool)
        source = np.full(state.nodes.size, -1, dtype=np.int64)
        chosen_coded = np.full(state.nodes.size, -1, dtype=np.int64)

        if strategy == "uncoded_seq":
            group_key = state.content * (cfg.K + 1) + (state.got + 1)
        else:
            group_key = state.content
        for key in np.unique(group_key):
            grp = np.nonzero(group_key == key)[0]
            if strategy == "uncoded_seq":
                m, k = int(key) // (cfg.K + 1), int(key) % (cfg.K + 1)
                holders = seq_holders.get((m, k))
                coded_ids = None
            else:
                m = int(key)
                holders = mds_nodes.get(m)
                coded_ids = mds_coded.get(m)
            nominal = 0 if holders is None else holders.size
            if strategy == "mds_random":
                keys_needed = (nominal - state.got[grp]).astype(np.int64)
            else:
                keys_needed = np.full(grp.size, nominal, dtype=np.int64)
            for copies, cnt in zip(*np.unique(keys_needed, return_counts=True)):
                contact_attempts[int(copies)] = contact_attempts.get(int(copies), 0) + int(cnt)
            if holders is None or holders.size == 0:
                continue
            rx = pos[state.nodes[grp]]
            hp = pos[holders]
            near = _torus_within(rx[:, 0, None] - hp[None, :, 0], half) & _torus_within(
                rx[:, 1, None] - hp[None, :, 1], half
            )
            near &= holders[None, :] != state.nodes[grp][:, None]
            if strategy == "mds_random":
                width = max(1, cfg.K - 1)
                rec = np.full((grp.size, width), -1, dtype=np.int64)
                for row, g in enumerate(grp):
                    ids = state.received[g]
                    if ids:
                        rec[row, : len(ids)] = ids
                needed = ~(coded_ids[None, :, None] == rec[:, None, :]).any(axis=2)
                near &= needed
            counts = near.sum(axis=1)
            grp_hit = counts > 0
            for copies, cnt in zip(
                *np.unique(keys_needed[grp_hit], return_counts=True)
            ):
                contact_hits[int(copies)] = contact_hits.get(int(copies), 0) + int(cnt)
            if not grp_hit.any():
                continue
            pick = np.floor(rng.random(grp.size) * np.maximum(counts, 1)).astype(np.int64)
            col = (near.cumsum(axis=1) > pick[:, None]).argmax(axis=1)
            hit[grp[grp_hit]] = True
            source[grp[grp_hit]] = holders[col[grp_hit]]
            if coded_ids is not None:
                chosen_coded[grp[grp_hit]] = coded_ids[col[grp_hit]]

        if mode == "scheduled" and hit.any():
            idx = np.nonzero(hit)[0]
            cells = np.floor(pos[state.nodes[idx]] * grid).astype(np.int64)
            cells = np.clip(cells, 0, grid - 1)
            phase = slot % phases
            px, py = phase // guard_cells, phase % guard_cells
            if phases > 1:
                active = (cells[:, 0] % guard_cells == px) & (cells[:, 1] % guard_cells == py)
            else:
                active = np.zeros(idx.size, dtype=bool)
                if idx.size:
                    active[rng.integers(idx.size)] = True
            idx = idx[active]
            cells = cells[active]
            hit[:] = False
            if idx.size:
                cell_id = cells[:, 0] * grid + cells[:, 1]
                tiebreak = rng.random(idx.size)
                order = np.lexsort((tiebreak, cell_id))
                first = np.ones(order.size, dtype=bool)
                first[1:] = cell_id[order][1:] != cell_id[order][:-1]
                winners = idx[order[first]]
                hit[winners] = True
                if winners.size > 1:
                    rx_pos = pos[state.nodes[winners]]
                    tx_pos = pos[source[winners]]
                    sep = np.array(
                        [
                            _torus_linf(rx_pos[i], tx_pos[j])
                            for i in range(winners.size)
                            for j in range(winners.size)
                            if i != j
                        ]
                    )
                    min_separation = min(min_separation, float(sep.min()))

        receivers = np.nonzero(hit)[0]
        if receivers.size:
            state.got[receivers] += 1
            if strategy == "mds_random":
                for g in receivers:
                    state.received[g].append(int(chosen_coded[g]))
            done = receivers[state.got[receivers] >= cfg.K]
            if done.size:
                fresh = pop.sample(rng, done.size).astype(np.int64)
                for j, g in enumerate(done):
                    if state.started[g] >= warmup:
                        delays.setdefault(int(state.content[g]), []).append(int(state.age[g]))
                        completed += 1
                    state.content[g] = fresh[j]
                    state.got[g] = 0
                    state.age[g] = 0
                    state.started[g] = slot + 1
                    state.received[g] = []

    censored = int(np.count_nonzero((state.got > 0) & (state.started >= warmup)))
    all_delays = [d for lst in delays.values() for d in lst]
    d_avg = float(np.mean(all_delays)) if all_delays else math.nan
    throughput = completed / ((slots - warmup) * n)
    counters = {
        c: (contact_hits.get(c, 0), contact_attempts[c]) for c in sorted(contact_attempts)
    }
    return TrialMetrics(
        d_avg_empirical=d_avg,
        throughput_empirical=throughput,
        per_content_delays=delays,
        contact_counters=counters,
        completed=completed,
        censored_active=censored,
        slots=slots,
        warmup=warmup,
        min_link_separation=min_separation,
    )


def run_trials(
    cfg: NetworkConfig,
    pop: PopularityModel,
    caches: CacheAssignment,
    trials: int,
    base_seed: int = 0,
    threads: int = 1,
    **kwargs,
) -> list[TrialMetrics]:
    """Run independent trials with per-trial seeds derived from base_seed;
    results come back in trial order regardless of scheduling."""
    seeds = np.random.SeedSequence(base_seed).generate_state(trials).tolist()
    if threads <= 1:
        return [run_trial(cfg, pop, caches, seed=s, **kwargs) for s in seeds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(run_trial, cfg, pop, caches, seed=s, **kwargs) for s in seeds]
        return [f.result() for f in futures]


@dataclass(frozen=True)
class HittingTimeEstimate:
    """Mean first hitting time of mobile pairs, censored at max_slots."""

    mean_slots: float
    censored_fraction: float
    pairs: int
    max_slots: int


def estimate_hitting_time(
    R: float, L: float, n_pairs: int, max_slots: int, seed: int = 0
) -> HittingTimeEstimate:
    """Average slots until two independent random walkers first come within
    distance R of each other on the unit torus.

    Both nodes start uniform and step by an independent flight of length L
    in a uniform direction each slot; censored pairs count max_slots.
    """
    if not (0.5 <= L / R <= 2.0):
        raise ValueError(f"flight/range ratio L/R = {L / R:.3g} outside [0.5, 2]")
    if n_pairs < 1 or max_slots < 1:
        raise ValueError("need at least one pair and one slot")
    rng = np.random.default_rng(seed)
    a = rng.random((n_pairs, 2))
    b = rng.random((n_pairs, 2))
    times = np.full(n_pairs, max_slots, dtype=np.int64)
    alive = np.ones(n_pairs, dtype=bool)
    for t in range(1, max_slots + 1):
        live = np.nonzero(alive)[0]
        if live.size == 0:
            break
        for pts in (a, b):
            theta = rng.random(live.size) * (2.0 * math.pi)
            pts[live] = (pts[live] + L * np.column_stack((np.cos(theta), np.sin(theta)))) % 1.0
        d = np.abs(a[live] - b[live])
        dist = np.minimum(d, 1.0 - d).max(axis=1)
        met = dist <= R
        if met.any():
            times[live[met]] = t
            alive[live[met]] = False
    censored = float(np.count_nonzero(alive)) / n_pairs
    return HittingTimeEstimate(
        mean_slots=float(times.mean()),
        censored_fraction=censored,
        pairs=n_pairs,
        max_slots=max_slots,
    )


@dataclass(frozen=True)
class ContactStats:
    """Empirical contact frequency for one content under reshuffling."""

    content_id: int
    copies: int
    slots: int
    hits: int
    frequency: float
    stderr: float


def empirical_contact_check(
    cfg: NetworkConfig,
    caches: CacheAssignment,
    copies_by_content: dict[int, int],
    slots: int,
    seed: int = 0,
) -> list[ContactStats]:
    """Measure, per content, how often a uniformly placed probe finds one of
    the content's subpacket-1 holders inside its contact cell.

    Reshuffling makes holder positions fresh uniform draws each slot, so
    only the holder count matters; the frequency estimates
    1 - (1 - area)**copies with binomial error sqrt(f(1-f)/slots).
    """
    if cfg.mobility != "reshuffle":
        raise ValueError("contact check is defined for reshuffling mobility")
    rng = np.random.default_rng(seed)
    half = math.sqrt(cfg.area) / 2.0
    out = []
    for m in sorted(copies_by_content):
        holders = caches.holders(m, 1)
        c = int(holders.size)
        if c == 0:
            out.append(ContactStats(m, 0, slots, 0, 0.0, 0.0))
            continue
        probe = rng.random((slots, 1, 2))
        hp = rng.random((slots, c, 2))
        near = _torus_within(probe[..., 0] - hp[..., 0], half) & _torus_within(
            probe[..., 1] - hp[..., 1], half
        )
        hits = int(near.any(axis=1).sum())
        f = hits / slots
        out.append(
            ContactStats(m, c, slots, hits, f, math.sqrt(max(f * (1 - f), 1e-12) / slots))
        )
    return out
