"""Command-line entry point: ``riskmmd {plan,benchmark,mpc,distill}``.

Every emitted record carries the run seed and a digest of the config. Sweep
results are CSV files headed by a schema-version comment line; logs are JSON
lines. Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import config as C
from .mpc import EpisodeLog, compute_metrics, run_episode
from .optimizer import optimize
from .reduced_set import distill, random_subset_baseline, with_seed
from .risk import DiracConfig, ground_truth_collision_rate, residual, risk_mmd
from .scenarios import random_static_scene
from .vehicle import simulate

log = logging.getLogger("riskmmd")

SCHEMA_VERSION = 1
BENCH_COLUMNS = ("scenario_id", "method", "N", "noise_preset", "gt_collision_rate",
                 "risk_value", "runtime_ms", "certificate", "attempts", "seed", "config_hash")
METRIC_COLUMNS = ("method", "noise_preset", "N", "collision_pct", "lane_violation_pct",
                  "avg_speed", "max_speed", "episodes", "excluded", "seed", "config_hash")
#: risks below this count as zero for retries and the certificate check
RISK_ZERO = 1e-3

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def thread_count(arg=None):
    """``--threads`` wins, then ``RISKMMD_THREADS``, then 1."""
    if arg is not None:
        n = int(arg)
    else:
        raw = os.environ.get("RISKMMD_THREADS", "").strip()
        try:
            n = int(raw) if raw else 1
        except ValueError as exc:
            raise C.ConfigError(f"RISKMMD_THREADS must be an integer, got {raw!r}") from exc
    if n < 1:
        raise C.ConfigError("thread count must be >= 1", key="threads")
    return n


def _cell_seed(*parts):
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def _dumps(rec):
    return json.dumps(rec, sort_keys=True, separators=(",", ":"))


def _ordered_map(fn, items, threads):
    """Map preserving input order; a process pool when ``threads > 1``."""
    if threads <= 1 or len(items) <= 1:
        for it in items:
            yield fn(it)
        return
    with ProcessPoolExecutor(max_workers=threads) as ex:
        yield from ex.map(fn, items)


# plan


def plan_record(cp, seed):
    nm = C.noise_model(cp)
    p = C.vehicle_params(cp, C.load_preset(cp.get("noise", "preset"))
                         if cp.has_option("noise", "preset") else None)
    cfg = C.optimizer_config(cp)
    x0, scene = C.scene(cp)
    res = optimize(x0, scene, nm, p, cfg, seed)
    states = simulate(x0.as_array()[None], res.controls.a[None], res.controls.theta[None], p)[0]
    b = res.best
    return {
        "command": "plan",
        "seed": seed,
        "config_hash": C.config_hash(cp),
        "method": cfg.risk_kind,
        "N": cfg.N,
        "setpoint": [float(x) for x in b.setpoint],
        "risk": b.risk,
        "expected_cost": b.expected_cost,
        "control_cost": b.control_cost,
        "total": b.total,
        "controls": {"a": res.controls.a.tolist(), "theta": res.controls.theta.tolist()},
        "rollout": states.tolist(),
    }


def cmd_plan(args, cp):
    seed = C.seed(cp, args.seed)
    rec = plan_record(cp, seed)
    line = _dumps(rec)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "plan.jsonl").write_text(line + "\n")
    print(line)
    return EXIT_OK


# benchmark


@dataclass(frozen=True)
class BenchCell:
    scenario_id: int
    method: str
    N: int
    noise_preset: str
    seed: int
    config_hash: str
    M: int
    retries: int
    n_obstacles: int
    v_d: float
    p: object
    cfg: object
    nm: object


def certificate(best, cfg):
    """Zero-jitter MMD risk check on the reduced rollouts of the best plan.

    Returns ``"ok"`` when the risk is positive enough to certify nothing or
    every reduced rollout is safe, ``"violated"`` otherwise, ``"n/a"`` for
    methods without a reduced set.
    """
    if cfg.risk_kind != "mmd":
        return "n/a"
    r = risk_mmd(residual(best.h_values), best.beta, cfg.residual_sigma or best.sigma,
                 DiracConfig(cfg.dirac.n_samples, 0.0))
    if r < RISK_ZERO and not np.all(best.h_values <= 0):
        return "violated"
    return "ok"


def run_bench_cell(cell):
    x0, scene = random_static_scene(cell.scenario_id, cell.n_obstacles, v_d=cell.v_d)
    kind = "det" if cell.method == "det" else cell.method
    cfg = cell.cfg.replace(risk_kind=kind, N=1 if kind == "det" else cell.N)
    t = time.perf_counter()
    res = None
    attempts = 0
    # keep re-solving with fresh seeds until the plan reaches zero risk
    for attempt in range(cell.retries + 1):
        attempts += 1
        s = _cell_seed(cell.seed, cell.scenario_id, cell.N, attempt)
        cand = optimize(x0, scene, cell.nm, cell.p, cfg, s)
        if res is None or cand.best.risk < res.best.risk:
            res = cand
        if res.best.risk < RISK_ZERO:
            break
    runtime = 1e3 * (time.perf_counter() - t)
    gt = ground_truth_collision_rate(x0, res.controls, scene, cell.nm, cell.p, cell.M,
                                     _cell_seed(cell.seed, cell.scenario_id, 0xC0FFEE))
    risk = 0.0 if cell.method == "det" else float(res.best.risk)
    return {
        "scenario_id": cell.scenario_id, "method": cell.method, "N": cell.N,
        "noise_preset": cell.noise_preset, "gt_collision_rate": gt,
        "risk_value": risk, "runtime_ms": round(runtime, 3),
        "certificate": certificate(res.best, cfg), "attempts": attempts,
        "seed": cell.seed, "config_hash": cell.config_hash,
    }


def _schema_line(extra=""):
    return f"# schema_version={SCHEMA_VERSION}{extra}\n"


def read_csv_rows(path):
    """Rows of a results CSV, skipping the schema comment line."""
    path = Path(path)
    if not path.exists():
        return []
    with path.open(newline="") as f:
        first = f.readline()
        if not first.startswith("# schema_version="):
            raise C.ConfigError(f"{path} has no schema header; refusing to resume")
        version = int(first.split("=", 1)[1].split()[0].rstrip(","))
        if version != SCHEMA_VERSION:
            raise C.ConfigError(f"{path} has schema version {version}, expected {SCHEMA_VERSION}")
        return list(csv.DictReader(f))


def _bench_key(row):
    return (int(row["scenario_id"]), str(row["method"]), int(row["N"]), str(row["noise_preset"]))


def bench_cells(cp, spec, seed):
    chash = C.config_hash(cp)
    cells = []
    for preset in spec.noise:
        nm = C.noise_model(cp, preset)
        p = C.vehicle_params(cp, C.load_preset(preset))
        for sid in spec.scenarios:
            for N in spec.N_values:
                for method in spec.methods:
                    cfg = C.optimizer_config(cp, method="det" if method == "det" else method, N=N)
                    cells.append(BenchCell(sid, method, N, preset, seed, chash, spec.M,
                                           spec.retries, spec.n_obstacles, spec.v_d, p, cfg, nm))
    return cells


def run_benchmark(cp, out, seed, resume=False, threads=1):
    """Run every (preset, scenario, N, method) cell; returns the CSV path."""
    spec = C.benchmark_spec(cp)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "benchmark.csv"
    cells = bench_cells(cp, spec, seed)
    done = set()
    if resume and path.exists():
        done = {_bench_key(r) for r in read_csv_rows(path)}
        mode = "a"
    else:
        mode = "w"
    todo = [c for c in cells if (c.scenario_id, c.method, c.N, c.noise_preset) not in done]
    log.info("benchmark: %d cells, %d already done", len(cells), len(cells) - len(todo))
    with path.open(mode, newline="") as f:
        w = csv.DictWriter(f, fieldnames=BENCH_COLUMNS)
        if mode == "w":
            f.write(_schema_line())
            w.writeheader()
            f.flush()
        for row in _ordered_map(run_bench_cell, todo, threads):
            w.writerow(row)
            f.flush()
    return path


def cmd_benchmark(args, cp):
    seed = C.seed(cp, args.seed)
    path = run_benchmark(cp, args.out or "results", seed, args.resume, thread_count(args.threads))
    print(path)
    return EXIT_OK


# mpc


@dataclass(frozen=True)
class EpisodeCell:
    method: str
    noise_preset: str
    episode: int
    seed: int
    config_hash: str
    route_length: float
    max_steps: int
    cov_reset: float
    x0: object
    scene: object
    p: object
    cfg: object
    nm: object


def run_episode_cell(cell):
    g = run_episode(cell.scene, cell.nm, cell.p, cell.cfg, cell.route_length,
                    _cell_seed(cell.seed, cell.episode), x0=cell.x0,
                    max_steps=cell.max_steps, cov_reset=cell.cov_reset)
    return {
        "method": cell.method, "noise_preset": cell.noise_preset, "episode": cell.episode,
        "seed": cell.seed, "config_hash": cell.config_hash, "status": g.status,
        "reason": g.reason, "steps": g.n_steps,
        "speeds": g.speeds().tolist(),
        "lane_violation": float(g.lane_violation.sum()),
        "final_state": g.states[-1].tolist() if g.n_steps else None,
    }


def _log_from_record(rec):
    """Rebuild the parts of an EpisodeLog that the metrics need."""
    n = rec["steps"]
    states = np.zeros((n, 5))
    states[:, 4] = rec["speeds"]
    lane = np.zeros(n)
    if n:
        lane[-1] = rec["lane_violation"]
    return EpisodeLog(np.zeros((n, 2)), states, np.zeros(n), np.zeros(n),
                      np.zeros(n, dtype=bool), lane, rec["status"], rec["seed"], rec["reason"])


def run_mpc(cp, out, seed, resume=False, threads=1):
    """Run the episode grid; returns the list of metrics records."""
    spec = C.mpc_spec(cp)
    if not cp.has_option("scene", "kind"):
        if not cp.has_section("scene"):
            cp.add_section("scene")
        cp.set("scene", "kind", "corridor")
    chash = C.config_hash(cp)
    x0, scene = C.scene(cp)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    ep_path = out / "episodes.jsonl"
    cells = []
    for preset in spec.noise:
        nm = C.noise_model(cp, preset)
        p = C.vehicle_params(cp, C.load_preset(preset))
        for method in spec.methods:
            cfg = C.optimizer_config(cp, method=method, N=spec.N)
            for e in range(spec.episodes):
                cells.append(EpisodeCell(method, preset, e, seed, chash, spec.route_length,
                                         spec.max_steps, spec.cov_reset, x0, scene, p, cfg, nm))
    records = {}
    if resume and ep_path.exists():
        for line in ep_path.read_text().splitlines():
            if line.strip():
                rec = json.loads(line)
                if rec.get("config_hash") == chash and rec.get("seed") == seed:
                    records[(rec["method"], rec["noise_preset"], rec["episode"])] = rec
    todo = [c for c in cells if (c.method, c.noise_preset, c.episode) not in records]
    with ep_path.open("a" if resume else "w") as f:
        for rec in _ordered_map(run_episode_cell, todo, threads):
            records[(rec["method"], rec["noise_preset"], rec["episode"])] = rec
            f.write(_dumps(rec) + "\n")
            f.flush()

    metrics = []
    for preset in spec.noise:
        for method in spec.methods:
            logs = [_log_from_record(records[(method, preset, e)]) for e in range(spec.episodes)]
            m = compute_metrics(logs, spec.route_length)
            metrics.append({"method": method, "noise_preset": preset, "N": spec.N,
                            **m.as_dict(), "seed": seed, "config_hash": chash})
    with (out / "metrics.csv").open("w", newline="") as f:
        f.write(_schema_line())
        w = csv.DictWriter(f, fieldnames=METRIC_COLUMNS)
        w.writeheader()
        w.writerows(metrics)
    with (out / "metrics.dat").open("w") as f:
        f.write("# method noise_preset collision_pct lane_violation_pct avg_speed max_speed\n")
        for m in metrics:
            f.write(f"{m['method']} {m['noise_preset']} {m['collision_pct']:.4f} "
                    f"{m['lane_violation_pct']:.4f} {m['avg_speed']:.4f} {m['max_speed']:.4f}\n")
    return metrics


def cmd_mpc(args, cp):
    seed = C.seed(cp, args.seed)
    metrics = run_mpc(cp, args.out or "results", seed, args.resume, thread_count(args.threads))
    for m in metrics:
        print(_dumps(m))
    return EXIT_OK


# distill


def distill_record(O, N, cfg, seed, chash=""):
    n_rows = O.shape[0]
    if not 1 <= N <= n_rows:
        raise C.ConfigError(f"cannot select N={N} rows out of {n_rows}", key="N")
    cfg = with_seed(cfg, seed)
    try:
        red = distill(O, N, cfg)
    except ValueError as exc:
        raise C.ConfigError(str(exc)) from exc
    base = random_subset_baseline(O, N, red.sigma, seed=seed)
    return {
        "command": "distill", "seed": seed, "config_hash": chash, "N": N,
        "indices": [int(i) for i in red.indices],
        "beta": [float(b) for b in red.beta],
        "sigma": red.sigma, "discrepancy": red.discrepancy,
        "random_subset_discrepancy": base,
    }


def cmd_distill(args, cp):
    if not args.rollouts:
        raise C.ConfigError("distill needs --rollouts PATH", key="rollouts")
    O = C.read_rollouts(args.rollouts)
    N = args.N if args.N is not None else C._get(cp, "distill", "N", int, required=True)
    seed = C.seed(cp, args.seed)
    rec = distill_record(O, N, C.distill_config(cp), seed, C.config_hash(cp))
    line = _dumps(rec)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "distill.jsonl").write_text(line + "\n")
    print(line)
    return EXIT_OK


COMMANDS = {"plan": cmd_plan, "benchmark": cmd_benchmark, "mpc": cmd_mpc, "distill": cmd_distill}


def build_parser():
    ap = argparse.ArgumentParser(prog="riskmmd", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", metavar="PATH", help="INI run configuration")
    ap.add_argument("--seed", type=int, help="overrides [run] seed")
    ap.add_argument("--out", metavar="DIR", help="output directory")
    ap.add_argument("--resume", action="store_true", help="skip cells already written")
    ap.add_argument("--threads", type=int, help="worker processes (default RISKMMD_THREADS or 1)")
    ap.add_argument("--rollouts", metavar="PATH", help="rollout matrix for distill")
    ap.add_argument("--N", type=int, help="reduced-set size for distill")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config:
            cp = C.load(args.config)
        elif args.command == "distill":
            cp = C.parse_text("")
        else:
            raise C.ConfigError(f"{args.command} needs --config PATH", key="config")
        return COMMANDS[args.command](args, cp)
    except C.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
