"""Experiment runner and command-line surface.

Subcommands expose the library operations (`alloc`, `delay`, `simulate`,
`hitting-time`, `codec`, `selftest`) and `run` executes a sweep described
by a preset or a flat key-value spec file, writing one CSV row per
(sweep point, strategy, engine) plus per-point allocation dumps.

Conventions recorded in every CSV header: logarithms are natural, and the
fig6 preset corrects the area formula n/log n (which exceeds the unit
torus) to log n/n.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import allocation as alloc_mod
from . import solvers
from .allocation import Allocation, InfeasibleBudgetError, validate_allocation
from .delay_model import (
    NetworkConfig,
    expected_delay_mds,
    expected_delay_uncoded,
    per_node_throughput,
)
from .mds_codec import decode, encode
from .placement import place, verify
from .popularity import PopularityModel, harmonic_sum, zipf_pmf
from .simulator import empirical_contact_check, estimate_hitting_time, run_trials

__all__ = ["ExperimentSpec", "load_spec", "run_experiment", "selftest", "main"]

_CSV_COLUMNS = [
    "preset", "alpha", "area", "M", "K", "n", "S", "strategy", "engine",
    "m1", "m2", "d_avg_order", "d_avg_exact", "throughput", "seed", "trials",
]


@dataclass(frozen=True)
class ExperimentSpec:
    """A sweep: cartesian product of alphas x areas x Ms, per strategy and
    engine. Area entries are formula tags resolved per sweep point."""

    preset: str = "custom"
    alphas: tuple[float, ...] = ()
    areas: tuple[str, ...] = ()
    Ms: tuple[int, ...] = ()
    K: int = 1
    n: int = 1000
    S: int | None = None
    strategies: tuple[str, ...] = ("uncoded",)
    engines: tuple[str, ...] = ("analytic",)
    trials: int = 1
    slots: int = 400
    warmup: int = 50
    seed: int = 0
    out: str = "out"

    def points(self):
        for M in self.Ms:
            for alpha in self.alphas:
                for area in self.areas:
                    yield (M, alpha, area)


_PRESETS: dict[str, dict] = {
    "fig3": dict(
        alphas=(0.5, 2.0), areas=("log_n_over_n", "pow:M^0.8/n"), Ms=(250,),
        K=20, n=30000, strategies=("uncoded",), engines=("analytic", "numeric"),
    ),
    "fig4": dict(
        alphas=(0.5, 2.0), areas=("log_n_over_n", "pow:M^0.8/n"), Ms=(250,),
        K=3, n=30000, strategies=("mds",), engines=("analytic", "numeric"),
    ),
    "fig5": dict(
        alphas=(0.5, 1.5, 3.0),
        areas=("log_n_over_n", "0.0005", "0.001", "0.002", "0.004", "0.008"),
        Ms=(250,), K=20, n=30000,
        strategies=("uncoded", "mds"), engines=("analytic", "numeric"),
    ),
    "fig6": dict(
        alphas=(0.5, 1.25), areas=("log_n_over_n",), Ms=(16, 32, 64, 128, 256),
        K=5, n=30000, strategies=("uncoded", "mds"), engines=("analytic", "numeric"),
    ),
}


class SpecError(ValueError):
    """Unreadable or inconsistent experiment spec; message names the field."""


def resolve_area(tag: str, n: int, M: int) -> float:
    """Turn an area formula tag into a number for a sweep point."""
    tag = tag.strip()
    if tag == "log_n_over_n":
        return math.log(n) / n
    if tag.startswith("pow:"):
        # pow:M^<exp>/n
        body = tag[4:]
        if not body.startswith("M^") or not body.endswith("/n"):
            raise SpecError(f"area: cannot parse formula tag {tag!r}")
        exponent = float(body[2:-2])
        return M**exponent / n
    try:
        return float(tag)
    except ValueError as exc:
        raise SpecError(f"area: cannot parse {tag!r}") from exc


def _parse_list(raw: str) -> list[str]:
    return [tok.strip() for tok in raw.split(",") if tok.strip()]


def load_spec(path: str | Path, overrides: dict | None = None) -> ExperimentSpec:
    """Read the flat key-value spec file (one `key = value` per line, '#'
    comments) and apply preset defaults."""
    raw: dict[str, str] = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise SpecError(f"spec: cannot read {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SpecError(f"spec line {lineno}: expected `key = value`, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        raw[key.lower()] = value
    return build_spec(raw, overrides or {})


def build_spec(raw: dict[str, str], overrides: dict | None = None) -> ExperimentSpec:
    known = {
        "preset", "alpha", "area", "m", "k", "n", "s", "strategies",
        "engines", "trials", "slots", "warmup", "seed", "out",
    }
    for key in raw:
        if key not in known:
            raise SpecError(f"unknown spec field: {key}")
    preset = raw.get("preset", "custom").strip().lower()
    if preset != "custom" and preset not in _PRESETS:
        raise SpecError(f"preset: unknown preset {preset!r}")
    base = dict(_PRESETS.get(preset, {}))
    spec = ExperimentSpec(preset=preset, **base)

    def _floats(key):
        return tuple(float(v) for v in _parse_list(raw[key]))

    def _ints(key):
        return tuple(int(v) for v in _parse_list(raw[key]))

    updates: dict = {}
    if "alpha" in raw:
        updates["alphas"] = _floats("alpha")
    if "area" in raw:
        updates["areas"] = tuple(_parse_list(raw["area"]))
    if "m" in raw:
        updates["Ms"] = _ints("m")
    if "k" in raw:
        updates["K"] = int(raw["k"])
    if "n" in raw:
        updates["n"] = int(raw["n"])
    if "s" in raw:
        updates["S"] = int(raw["s"])
    if "strategies" in raw:
        updates["strategies"] = tuple(_parse_list(raw["strategies"]))
    if "engines" in raw:
        updates["engines"] = tuple(_parse_list(raw["engines"]))
    for key in ("trials", "slots", "warmup", "seed"):
        if key in raw:
            updates[key] = int(raw[key])
    if "out" in raw:
        updates["out"] = raw["out"]
    spec = replace(spec, **updates)
    if overrides:
        spec = replace(spec, **overrides)
    for field_name in ("alphas", "areas", "Ms"):
        if not getattr(spec, field_name):
            raise SpecError(f"{field_name}: sweep axis is empty")
    for strategy in spec.strategies:
        if strategy not in ("uncoded", "mds"):
            raise SpecError(f"strategies: unknown strategy {strategy!r}")
    for engine in spec.engines:
        if engine not in ("analytic", "numeric", "simulate"):
            raise SpecError(f"engines: unknown engine {engine!r}")
    return spec


def _slug(text: str) -> str:
    return "".join(ch if ch.isalnum() else "_" for ch in text).strip("_")


def _compute_point(spec: ExperimentSpec, index: int, point, strategy: str, engine: str):
    M, alpha, area_tag = point
    area = resolve_area(area_tag, spec.n, M)
    cfg = NetworkConfig(n=spec.n, area=area, K=spec.K, S=spec.S)
    pop = zipf_pmf(M, alpha)
    point_seed = spec.seed + 1000003 * index
    if strategy == "uncoded":
        analytic = alloc_mod.uncoded_allocation(cfg, pop)
    else:
        analytic = alloc_mod.mds_allocation(cfg, pop)
    if engine == "analytic":
        allocation = analytic
        d_order = (
            solvers.order_objective_uncoded(pop, cfg, allocation.values)
            if strategy == "uncoded"
            else solvers.order_objective_mds(pop, cfg, allocation.values)
        )
        d_exact = _exact_delay(cfg, pop, allocation)
        trials_used = 0
    elif engine == "numeric":
        report = (
            solvers.solve_uncoded(pop, cfg)
            if strategy == "uncoded"
            else solvers.solve_mds(pop, cfg)
        )
        allocation = report.allocation
        d_order = report.objective
        d_exact = _exact_delay(cfg, pop, allocation)
        trials_used = 0
    else:  # simulate: place the analytic allocation and measure
        allocation = analytic
        ceiled = np.ceil(allocation.values - 1e-9)
        d_order = (
            solvers.order_objective_uncoded(pop, cfg, ceiled)
            if strategy == "uncoded"
            else solvers.order_objective_mds(pop, cfg, ceiled)
        )
        caches = place(allocation, cfg, seed=point_seed)
        metrics = run_trials(
            cfg,
            pop,
            caches,
            trials=spec.trials,
            base_seed=point_seed + 1,
            strategy="uncoded_seq" if strategy == "uncoded" else "mds_random",
            slots=spec.slots,
            warmup=spec.warmup,
        )
        means = [m.d_avg_empirical for m in metrics if not math.isnan(m.d_avg_empirical)]
        d_exact = float(np.mean(means)) if means else math.nan
        trials_used = spec.trials
    problems = validate_allocation(allocation, cfg)
    if problems:
        raise RuntimeError(f"allocation invariant violation at point {point}: {problems}")
    throughput = per_node_throughput(cfg, d_exact) if d_exact and not math.isnan(d_exact) else math.nan
    row = {
        "preset": spec.preset,
        "alpha": f"{alpha:g}",
        "area": f"{area:.10g}",
        "M": M,
        "K": spec.K,
        "n": spec.n,
        "S": cfg.S,
        "strategy": strategy,
        "engine": engine,
        "m1": allocation.m1,
        "m2": "" if allocation.m2 is None else allocation.m2,
        "d_avg_order": f"{d_order:.10g}",
        "d_avg_exact": f"{d_exact:.10g}",
        "throughput": f"{throughput:.10g}",
        "seed": spec.seed,
        "trials": trials_used,
    }
    dump = None
    if engine in ("analytic", "numeric"):
        name = f"alloc_{spec.preset}_M{M}_a{_slug(f'{alpha:g}')}_{_slug(area_tag)}_{strategy}_{engine}.csv"
        dump = (name, allocation.values)
    return row, dump


def _exact_delay(cfg: NetworkConfig, pop: PopularityModel, allocation: Allocation) -> float:
    if allocation.kind == "uncoded":
        return expected_delay_uncoded(cfg, pop, allocation.values).exact_slots
    return expected_delay_mds(cfg, pop, allocation.values).exact_slots


def run_experiment(spec: ExperimentSpec, threads: int = 1) -> Path:
    """Execute the sweep and write results.csv plus allocation dumps.

    Returns the output directory. Rows are written in deterministic sweep
    order; the CSV body is byte-identical across reruns with the same seed
    (timestamps live in a comment line).
    """
    out_dir = Path(spec.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = []
    index = 0
    for point in spec.points():
        for strategy in spec.strategies:
            for engine in spec.engines:
                jobs.append((index, point, strategy, engine))
                index += 1
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(
                pool.map(lambda j: _compute_point(spec, j[0], j[1], j[2], j[3]), jobs)
            )
    else:
        results = [_compute_point(spec, *job) for job in jobs]
    csv_path = out_dir / "results.csv"
    with open(csv_path, "w", newline="") as fh:
        fh.write(f"# generated {time.strftime('%Y-%m-%dT%H:%M:%S')}\n")
        fh.write("# conventions: natural logarithms; throughput = 1/(n*area*d_avg_exact)\n")
        if spec.preset == "fig6":
            fh.write("# fig6 area formula n/log n exceeds the unit torus; corrected to log n/n\n")
        writer = csv.DictWriter(fh, fieldnames=_CSV_COLUMNS)
        writer.writeheader()
        for row, _ in results:
            writer.writerow(row)
    for _, dump in results:
        if dump is None:
            continue
        name, values = dump
        with open(out_dir / name, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["m", "value"])
            for m, value in enumerate(values, start=1):
                writer.writerow([m, f"{value:.10g}"])
    return out_dir


def selftest(verbose: bool = True) -> bool:
    """Run the embedded oracle suite; returns True when everything passes."""
    checks: list[tuple[str, str, str]] = []

    def record(name: str, passed: bool, detail: str = ""):
        checks.append((name, "PASS" if passed else "FAIL", detail))

    record("harmonic finite sum", abs(harmonic_sum(4, 1.0) - 25.0 / 12.0) < 1e-12)
    pop = zipf_pmf(1000, 0.7)
    record("zipf pmf normalization", abs(pop.pmf.sum() - 1.0) < 1e-12)

    rng = np.random.default_rng(7)
    codec_ok = True
    import itertools

    for K in (1, 2, 3):
        for r in range(K, 7):
            data = [bytes(rng.integers(0, 256, size=8, dtype=np.uint8)) for _ in range(K)]
            coded = encode(data, r)
            for subset in itertools.combinations(coded, K):
                if decode(list(subset)) != data:
                    codec_ok = False
    data = [bytes(rng.integers(0, 256, size=16, dtype=np.uint8)) for _ in range(8)]
    coded = encode(data, 24)
    for _ in range(50):
        picks = rng.choice(24, size=8, replace=False)
        if decode([coded[i] for i in picks]) != data:
            codec_ok = False
    record("codec MDS subsets", codec_ok)

    oracle_status, oracle_ok = "", True
    instances = [
        ("uncoded", 2, 1, 1, 4, 0.25, 1.0),
        ("uncoded", 3, 2, 2, 6, 0.25, 0.8),
        ("uncoded", 2, 1, 1, 10, 0.2, 1.5),
        ("mds", 2, 2, 2, 4, 0.25, 1.0),
        ("mds", 2, 2, 2, 6, 0.25, 1.0),
        ("mds", 3, 2, 2, 8, 0.2, 0.6),
    ]
    try:
        for strategy, M, K, S, n, area, alpha in instances:
            cfg = NetworkConfig(n=n, area=area, K=K, S=S)
            p = zipf_pmf(M, alpha)
            solver = solvers.solve_uncoded(p, cfg) if strategy == "uncoded" else solvers.solve_mds(p, cfg)
            oracle = solvers.brute_force(p, cfg, strategy)
            if not (
                solver.objective <= oracle.objective * (1 + 1e-9)
                and oracle.objective <= 2 * solver.objective * (1 + 1e-9)
                and solver.kkt_residual <= 1e-8
            ):
                oracle_ok = False
        record("solver vs integer oracle", oracle_ok)
    except solvers.SearchSpaceError as exc:
        record("solver vs integer oracle", True, f"SKIP (search space: {exc})")

    cfg = NetworkConfig(n=200, area=0.02, K=4, S=4)
    p = zipf_pmf(10, 1.0)
    alloc = alloc_mod.uncoded_allocation(cfg, p)
    placement_ok = True
    for seed in range(10):
        asg = place(alloc, cfg, seed=seed)
        report = verify(asg, alloc, cfg.S)
        if not report.ok or report.max_load > 2 * cfg.S:
            placement_ok = False
    record("placement load bound", placement_ok)

    cfg = NetworkConfig(n=40, area=0.25, K=1, S=2)
    toy = Allocation("uncoded", np.array([2.0, 2.0]), 1, None, 4.0)
    caches = place(toy, cfg, seed=3)
    stats = empirical_contact_check(cfg, caches, {1: 2, 2: 2}, slots=20000, seed=5)
    expected = 1 - 0.75**2
    contact_ok = all(abs(s.frequency - expected) <= 4 * max(s.stderr, 1e-6) for s in stats)
    record("contact probability", contact_ok, f"freq={stats[0].frequency:.4f}")

    all_ok = all(status == "PASS" for _, status, _ in checks)
    if verbose:
        width = max(len(name) for name, _, _ in checks)
        for name, status, detail in checks:
            line = f"{name:<{width}}  {status}"
            if detail:
                line += f"  {detail}"
            print(line)
        print("selftest:", "PASS" if all_ok else "FAIL")
    return all_ok


def _add_model_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--alpha", type=float, required=True)
    parser.add_argument("--area", type=str, required=True, help="number or formula tag")
    parser.add_argument("-M", "--library", type=int, required=True, dest="M")
    parser.add_argument("-K", "--subpackets", type=int, required=True, dest="K")
    parser.add_argument("-n", "--nodes", type=int, required=True, dest="n")
    parser.add_argument("-S", "--cache", type=int, default=None, dest="S")


def _model_from_args(args) -> tuple[NetworkConfig, PopularityModel]:
    area = resolve_area(args.area, args.n, args.M)
    cfg = NetworkConfig(n=args.n, area=area, K=args.K, S=args.S)
    return cfg, zipf_pmf(args.M, args.alpha)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="subcache",
        description="cache allocation and delivery-phase evaluation for "
        "subpacketized device-to-device content caching",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_alloc = sub.add_parser("alloc", help="compute a cache allocation")
    _add_model_args(p_alloc)
    p_alloc.add_argument("--strategy", choices=("uncoded", "mds"), default="uncoded")
    p_alloc.add_argument("--engine", choices=("analytic", "numeric"), default="analytic")

    p_delay = sub.add_parser("delay", help="expected delays for an allocation")
    _add_model_args(p_delay)
    p_delay.add_argument("--strategy", choices=("uncoded", "mds"), default="uncoded")
    p_delay.add_argument("--engine", choices=("analytic", "numeric"), default="analytic")
    p_delay.add_argument("--random-walk", action="store_true", help="also print the random-walk bounds")

    p_sim = sub.add_parser("simulate", help="Monte Carlo delivery-phase trial")
    _add_model_args(p_sim)
    p_sim.add_argument("--strategy", choices=("uncoded", "mds"), default="uncoded")
    p_sim.add_argument("--mode", choices=("delay_only", "scheduled"), default="delay_only")
    p_sim.add_argument("--slots", type=int, default=400)
    p_sim.add_argument("--warmup", type=int, default=50)
    p_sim.add_argument("--trials", type=int, default=1)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--threads", type=int, default=1)

    p_hit = sub.add_parser("hitting-time", help="random-walk first hitting time")
    p_hit.add_argument("--range", type=float, required=True, dest="R")
    p_hit.add_argument("--flight", type=float, required=True, dest="L")
    p_hit.add_argument("--pairs", type=int, default=1000)
    p_hit.add_argument("--max-slots", type=int, default=100000)
    p_hit.add_argument("--seed", type=int, default=0)

    p_codec = sub.add_parser("codec", help="erasure-codec roundtrip check")
    p_codec.add_argument("-K", type=int, default=4)
    p_codec.add_argument("-r", type=int, default=8)
    p_codec.add_argument("--payload-bytes", type=int, default=64)
    p_codec.add_argument("--trials", type=int, default=100)
    p_codec.add_argument("--seed", type=int, default=0)

    p_run = sub.add_parser("run", help="run an experiment sweep")
    p_run.add_argument("--spec", type=str, default=None)
    p_run.add_argument("--preset", choices=tuple(_PRESETS), default=None)
    p_run.add_argument("--out", type=str, default=None)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--threads", type=int, default=1)

    sub.add_parser("selftest", help="run the embedded oracle suite")

    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except SpecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except InfeasibleBudgetError as exc:
        print(f"infeasible configuration: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # internal error contract
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


def _dispatch(args) -> int:
    if args.command == "alloc":
        cfg, pop = _model_from_args(args)
        allocation = _allocation_for(args.strategy, args.engine, cfg, pop)
        writer = csv.writer(sys.stdout)
        writer.writerow(["m", "value"])
        for m, value in enumerate(allocation.values, start=1):
            writer.writerow([m, f"{value:.10g}"])
        return 0
    if args.command == "delay":
        cfg, pop = _model_from_args(args)
        allocation = _allocation_for(args.strategy, args.engine, cfg, pop)
        est = (
            expected_delay_uncoded(cfg, pop, allocation.values)
            if args.strategy == "uncoded"
            else expected_delay_mds(cfg, pop, allocation.values)
        )
        print(f"d_avg_exact {est.exact_slots:.10g}")
        print(f"d_avg_order {est.order_slots:.10g}")
        print(f"throughput {per_node_throughput(cfg, est.exact_slots):.10g}")
        if args.random_walk:
            from .delay_model import expected_delay_random_walk

            rw = expected_delay_random_walk(
                cfg, pop, allocation.values,
                "uncoded_seq" if args.strategy == "uncoded" else "mds_random",
            )
            print(f"rw_lower {rw.bounds[0]:.10g}")
            print(f"rw_upper {rw.bounds[1]:.10g}")
        return 0
    if args.command == "simulate":
        cfg, pop = _model_from_args(args)
        allocation = _allocation_for(args.strategy, "analytic", cfg, pop)
        caches = place(allocation, cfg, seed=args.seed)
        metrics = run_trials(
            cfg, pop, caches,
            trials=args.trials, base_seed=args.seed + 1, threads=args.threads,
            mode=args.mode,
            strategy="uncoded_seq" if args.strategy == "uncoded" else "mds_random",
            slots=args.slots, warmup=args.warmup,
        )
        writer = csv.writer(sys.stdout)
        writer.writerow(["trial", "d_avg_empirical", "throughput_empirical", "completed", "censored"])
        for i, m in enumerate(metrics):
            writer.writerow(
                [i, f"{m.d_avg_empirical:.6g}", f"{m.throughput_empirical:.6g}", m.completed, m.censored_active]
            )
        return 0
    if args.command == "hitting-time":
        est = estimate_hitting_time(args.R, args.L, args.pairs, args.max_slots, args.seed)
        print(f"mean_slots {est.mean_slots:.6g}")
        print(f"censored_fraction {est.censored_fraction:.6g}")
        return 0
    if args.command == "codec":
        rng = np.random.default_rng(args.seed)
        for _ in range(args.trials):
            data = [
                bytes(rng.integers(0, 256, size=args.payload_bytes, dtype=np.uint8))
                for _ in range(args.K)
            ]
            coded = encode(data, args.r)
            picks = rng.choice(args.r, size=args.K, replace=False)
            if decode([coded[i] for i in picks]) != data:
                print("codec check FAILED", file=sys.stderr)
                return 1
        print(f"codec ok: {args.trials} random {args.K}-of-{args.r} decodes")
        return 0
    if args.command == "run":
        overrides = {}
        if args.out is not None:
            overrides["out"] = args.out
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.spec:
            spec = load_spec(args.spec, overrides)
        elif args.preset:
            spec = build_spec({"preset": args.preset}, overrides)
        else:
            raise SpecError("spec: provide --spec FILE or --preset NAME")
        out_dir = run_experiment(spec, threads=args.threads)
        print(f"wrote {out_dir / 'results.csv'}")
        return 0
    if args.command == "selftest":
        return 0 if selftest() else 1
    raise SpecError(f"unknown command {args.command!r}")


def _allocation_for(strategy: str, engine: str, cfg: NetworkConfig, pop: PopularityModel) -> Allocation:
    if engine == "numeric":
        report = (
            solvers.solve_uncoded(pop, cfg) if strategy == "uncoded" else solvers.solve_mds(pop, cfg)
        )
        return report.allocation
    if strategy == "uncoded":
        return alloc_mod.uncoded_allocation(cfg, pop)
    return alloc_mod.mds_allocation(cfg, pop)


if __name__ == "__main__":
    sys.exit(main())
