"""``dhrl`` command-line interface.

Every subcommand reads one experiment config, expands it into cells
(base instance x delay x epsilon) and writes its outputs under the output
directory. Exit status: 0 on success, 1 when ``--strict`` finds a failed
check, 2 on usage or config errors, 3 when augmentation exceeds the state cap.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from dhrl.abstraction import (
    check_reward_respecting,
    check_ssp,
    epsilon_partition,
    exact_partition,
    lift_policy,
    quotient,
    visitation_weights,
)
from dhrl.augment import CapacityError, augment
from dhrl.config import (
    ConfigError,
    ExperimentConfig,
    Instance,
    base_instances,
    delay_spec,
    dumps_config,
    expand_instances,
    load_config,
)
from dhrl.experiments import Pipeline, QLearnSettings, canonical_block_order, record_fidelity, steps_to_target
from dhrl.guarantees import compression_report, value_loss_report
from dhrl.io import atomic_write, dumps_json, load_partition, save_augmented, save_mdp, save_partition
from dhrl.mdp import greedy_policy, policy_evaluation, value_iteration
from dhrl.simulator import open_session, run_random_agent, trace_lines

RESULTS_VERSION = "# dhrl-results v1"
RESULT_COLUMNS = (
    "instance_id", "seed", "delay", "epsilon", "num_augmented", "num_abstract", "zeta",
    "c1", "c2", "xi", "bound", "measured_loss", "solver_iterations", "qlearn_steps", "wall_time",
)
QLEARN_VERSION = "# dhrl-qlearn v1"
QLEARN_COLUMNS = ("instance_id", "seed", "delay", "epsilon", "abstract_steps", "raw_steps", "num_abstract", "num_augmented")
NOT_RUN = "not-run"
NOT_REACHED = "not-reached"


class StrictFailure(Exception):
    pass


# -- cells ---------------------------------------------------------------------


def cell_id(inst: Instance, epsilon: float | None) -> str:
    eps = "exact" if epsilon is None else f"eps{epsilon!r}"
    return f"{inst.instance_id}_d{inst.delay}_{eps}"


def cells(cfg: ExperimentConfig) -> list[tuple[Instance, float | None]]:
    return [(inst, eps) for inst in expand_instances(cfg) for eps in cfg.abstraction.epsilons]


def build_cell(cfg: ExperimentConfig, inst: Instance, epsilon: float | None) -> Pipeline:
    aug = augment(inst.base, inst.delay, max_states=cfg.solver.max_states)
    if cfg.abstraction.partition_file is not None:
        part = load_partition(cfg.resolve(cfg.abstraction.partition_file), epsilon or 0.0)
        if part.num_states != aug.num_states:
            raise ConfigError(
                f"partition covers {part.num_states} states, augmented MDP has {aug.num_states}",
                "abstraction.partition_file",
            )
    elif epsilon is None:
        part = exact_partition(aug)
    else:
        part = epsilon_partition(aug, epsilon)
    weights = visitation_weights(aug) if cfg.abstraction.weighting == "visitation" else None
    abstract, hom = quotient(aug, part, state_weights=weights)
    return Pipeline(inst.base, inst.delay, epsilon, aug, part, abstract, hom)


def qlearn_settings(cfg: ExperimentConfig) -> QLearnSettings:
    q = cfg.qlearning
    return QLearnSettings(q.epsilon, q.lr_scale, q.lr_tau, q.horizon, q.check_every, q.max_steps, q.target_fraction)


def _steps(value) -> str:
    return NOT_REACHED if value is None else str(value)


def worker_count(n_tasks: int) -> int:
    raw = os.environ.get("DHRL_THREADS")
    if raw is None or raw == "":
        cap = os.cpu_count() or 1
    else:
        try:
            cap = int(raw)
        except ValueError:
            raise ConfigError(f"DHRL_THREADS must be a positive integer, got {raw!r}") from None
        if cap < 1:
            raise ConfigError(f"DHRL_THREADS must be a positive integer, got {raw!r}")
    return max(1, min(cap, n_tasks))


def parallel_map(fn, tasks: list) -> list:
    """``[fn(t) for t in tasks]``, fanned out over at most DHRL_THREADS processes, in task order."""
    workers = worker_count(len(tasks))
    if workers == 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


# -- per-cell work (top level so worker processes can pickle it) ---------------


def _result_rows(task) -> list[list[str]]:
    cfg, inst, eps = task
    t0 = time.perf_counter()
    p = build_cell(cfg, inst, eps)
    comp = compression_report(p.aug, p.hom)
    loss = value_loss_report(p.aug, p.abstract, p.hom, tol=cfg.solver.tol, max_iters=cfg.solver.max_iters)
    shared = time.perf_counter() - t0
    ordered = canonical_block_order(p) if cfg.qlearning.enabled else None
    rows = []
    for seed in cfg.seeds:
        t1 = time.perf_counter()
        q = _steps(steps_to_target(ordered, seed, qlearn_settings(cfg))) if ordered is not None else NOT_RUN
        wall = shared + time.perf_counter() - t1
        rows.append([
            cell_id(inst, eps), str(seed), str(inst.delay), "exact" if eps is None else repr(eps),
            str(comp.num_augmented), str(comp.num_abstract), repr(comp.zeta),
            repr(loss.c1), repr(loss.c2), repr(loss.xi), repr(loss.bound), repr(loss.measured),
            str(loss.abstract_iterations), q, repr(wall),
        ])
    checks = {"compression": comp.holds, "value_loss": loss.holds}
    sims = []
    if cfg.simulation.enabled and eps == cfg.abstraction.epsilons[0]:
        for seed in cfg.seeds:
            session = open_session(inst.base, delay_spec(cfg, inst.delay), seed)
            outcomes = run_random_agent(session, cfg.simulation.steps, seed)
            fid = record_fidelity(p.aug, [r for o in outcomes for r in o.records], cfg.simulation.z_limit)
            trace = trace_lines(outcomes) if cfg.simulation.write_traces else None
            sims.append((seed, fid.to_dict(), trace))
            checks[f"simulation seed {seed}"] = fid.holds
    return [rows, checks, sims]


def _qlearn_rows(task) -> list[list[str]]:
    cfg, inst, eps = task
    p = build_cell(cfg, inst, eps)
    settings = qlearn_settings(cfg)
    ordered = canonical_block_order(p)
    rows = []
    for seed in cfg.seeds:
        rows.append([
            inst.instance_id, str(seed), str(inst.delay), "exact" if eps is None else repr(eps),
            _steps(steps_to_target(ordered, seed, settings)),
            _steps(steps_to_target(p.aug.mdp, seed, settings)),
            str(p.hom.num_abstract_states), str(p.aug.num_states),
        ])
    return rows


def csv_text(version: str, columns, rows) -> str:
    lines = [version, ",".join(columns)] + [",".join(r) for r in rows]
    return "\n".join(lines) + "\n"


# -- commands ------------------------------------------------------------------


def cmd_generate(cfg: ExperimentConfig, out: Path, strict: bool) -> list[Path]:
    written = []
    for iid, base, params, _ in base_instances(cfg):
        path = out / "mdp" / f"{iid}.json"
        save_mdp(base, path)
        written.append(path)
    atomic_write(out / "mdp" / "instances.json", dumps_json(
        {iid: params for iid, _, params, _ in base_instances(cfg)}
    ))
    return written


def cmd_augment(cfg: ExperimentConfig, out: Path, strict: bool) -> list[Path]:
    written = []
    for inst in expand_instances(cfg):
        aug = augment(inst.base, inst.delay, max_states=cfg.solver.max_states)
        stem = out / "augmented" / f"{inst.instance_id}_d{inst.delay}"
        save_augmented(aug, stem.with_suffix(".json"), stem.with_suffix(".csv"))
        written.append(stem.with_suffix(".json"))
    return written


def cmd_abstract(cfg: ExperimentConfig, out: Path, strict: bool) -> list[Path]:
    written = []
    for inst, eps in cells(cfg):
        p = build_cell(cfg, inst, eps)
        cid = cell_id(inst, eps)
        save_partition(p.partition, out / "abstract" / f"{cid}.partition.csv", p.aug.beliefs)
        save_mdp(p.abstract.mdp, out / "abstract" / f"{cid}.json")
        written.append(out / "abstract" / f"{cid}.json")
    return written


def _witness(cert) -> str:
    return "" if cert.witness is None else " witness=(" + ", ".join(str(int(w)) for w in cert.witness) + ")"


def cmd_certify(cfg: ExperimentConfig, out: Path, strict: bool) -> list[Path]:
    written, failed = [], []
    tol = cfg.solver.certificate_tol
    for inst, eps in cells(cfg):
        p = build_cell(cfg, inst, eps)
        cid = cell_id(inst, eps)
        certs = [check_reward_respecting(p.aug, p.partition, tol), check_ssp(p.aug, p.partition, tol)]
        doc = {"cell": cid, "certificates": []}
        for cert in certs:
            d = cert.to_dict()
            d["witness"] = None if cert.witness is None else [int(w) for w in cert.witness]
            doc["certificates"].append(d)
            status = "PASS" if cert.passed else "FAIL"
            print(f"{cid} {cert.name} {status} max_violation={cert.max_violation!r}{_witness(cert)}")
            if not cert.passed:
                failed.append(f"{cid} {cert.name}")
        path = out / "certificates" / f"{cid}.json"
        atomic_write(path, dumps_json(doc))
        written.append(path)
    if strict and failed:
        raise StrictFailure("certificate failures: " + "; ".join(failed))
    return written


def cmd_solve(cfg: ExperimentConfig, out: Path, strict: bool) -> list[Path]:
    written = []
    for inst, eps in cells(cfg):
        p = build_cell(cfg, inst, eps)
        sol = value_iteration(p.abstract.mdp, tol=cfg.solver.tol, max_iters=cfg.solver.max_iters)
        abstract_policy = greedy_policy(sol.q)
        lifted = lift_policy(abstract_policy, p.hom)
        doc = {
            "cell": cell_id(inst, eps),
            "iterations": sol.iterations,
            "residual": sol.residual,
            "abstract_values": sol.v.tolist(),
            "abstract_policy": abstract_policy.actions().tolist(),
            "lifted_policy": lifted.actions().tolist(),
            "lifted_values": policy_evaluation(p.aug.mdp, lifted, tol=1e-8).tolist(),
            "block_of": p.hom.f_x.tolist(),
        }
        path = out / "solve" / f"{cell_id(inst, eps)}.json"
        atomic_write(path, dumps_json(doc))
        written.append(path)
    return written


BOUND_COLUMNS = ("instance_id", "delay", "epsilon", "c1", "c2", "xi", "gamma", "bound", "measured_loss", "holds")


def cmd_bound(cfg: ExperimentConfig, out: Path, strict: bool) -> list[Path]:
    rows, failed = [], []
    for inst, eps in cells(cfg):
        p = build_cell(cfg, inst, eps)
        rep = value_loss_report(p.aug, p.abstract, p.hom, tol=cfg.solver.tol, max_iters=cfg.solver.max_iters)
        cid = cell_id(inst, eps)
        rows.append([
            cid, str(inst.delay), "exact" if eps is None else repr(eps),
            repr(rep.c1), repr(rep.c2), repr(rep.xi), repr(rep.gamma), repr(rep.bound), repr(rep.measured),
            "true" if rep.holds else "false",
        ])
        if not rep.holds:
            failed.append(cid)
    path = out / "bound.csv"
    atomic_write(path, csv_text("# dhrl-bound v1", BOUND_COLUMNS, rows))
    if strict and failed:
        raise StrictFailure("value-loss bound violated: " + "; ".join(failed))
    return [path]


def cmd_qlearn_compare(cfg: ExperimentConfig, out: Path, strict: bool) -> list[Path]:
    tasks = [(cfg, inst, eps) for inst, eps in cells(cfg)]
    rows = [r for chunk in parallel_map(_qlearn_rows, tasks) for r in chunk]
    path = out / "qlearn.csv"
    atomic_write(path, csv_text(QLEARN_VERSION, QLEARN_COLUMNS, rows))
    summary = {}
    for delay in sorted({int(r[2]) for r in rows}):
        mine = [r for r in rows if int(r[2]) == delay]
        summary[str(delay)] = {
            "abstract_median": _median([r[4] for r in mine]),
            "raw_median": _median([r[5] for r in mine]),
            "runs": len(mine),
        }
    atomic_write(out / "qlearn_summary.json", dumps_json(summary))
    return [path, out / "qlearn_summary.json"]


def _median(values: list[str]):
    """Median steps; runs that never reached the target count as +inf (None if most did)."""
    nums = [math.inf if v == NOT_REACHED else float(v) for v in values]
    m = float(np.median(nums))
    return None if math.isinf(m) else m


def cmd_run_all(cfg: ExperimentConfig, out: Path, strict: bool) -> list[Path]:
    tasks = [(cfg, inst, eps) for inst, eps in cells(cfg)]
    results = parallel_map(_result_rows, tasks)
    rows = [r for chunk, _, _ in results for r in chunk]
    path = out / "results.csv"
    atomic_write(path, csv_text(RESULTS_VERSION, RESULT_COLUMNS, rows))
    atomic_write(out / "config.json", dumps_config(cfg))
    written = [path]
    fidelity = {}
    for (_, inst, eps), (_, _, sims) in zip(tasks, results):
        for seed, report, trace in sims:
            key = f"{inst.instance_id}_d{inst.delay}_s{seed}"
            fidelity[key] = report
            if trace is not None:
                atomic_write(out / "traces" / f"{key}.csv", "\n".join(trace) + "\n")
    if fidelity:
        atomic_write(out / "fidelity.json", dumps_json(fidelity))
        written.append(out / "fidelity.json")
    failed = [cell_id(inst, eps) + f" {name}" for (_, inst, eps), (_, checks, _) in zip(tasks, results)
              for name, ok in checks.items() if not ok]
    if strict and failed:
        raise StrictFailure("checks failed: " + "; ".join(failed))
    return written


COMMANDS = {
    "generate": cmd_generate,
    "augment": cmd_augment,
    "abstract": cmd_abstract,
    "certify": cmd_certify,
    "solve": cmd_solve,
    "bound": cmd_bound,
    "qlearn-compare": cmd_qlearn_compare,
    "run-all": cmd_run_all,
}


HELP = {
    "generate": "write the base MDP(s) as JSON",
    "augment": "write augmented MDPs and their state sidecars",
    "abstract": "write belief partitions and abstract MDPs",
    "certify": "check reward-respecting and SSP certificates",
    "solve": "solve abstract MDPs and write lifted policies and values",
    "bound": "write value-loss bound rows",
    "qlearn-compare": "Q-learning steps-to-target, abstract vs augmented",
    "run-all": "full pipeline; one results row per cell and seed",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dhrl", description="Delayed-MDP augmentation, belief abstraction and guarantees.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("--config", required=True, metavar="PATH", help="experiment config (JSON)")
        p.add_argument("--seed", type=int, metavar="N", help="run only this seed (overrides 'seeds')")
        p.add_argument("--out", metavar="DIR", help="output directory (overrides 'out')")
        p.add_argument("--strict", action="store_true", help="exit nonzero when a certificate or bound check fails")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be nonnegative")
            cfg = dataclasses.replace(cfg, seeds=(args.seed,))
        out = Path(args.out) if args.out is not None else cfg.resolve(cfg.out)
        written = COMMANDS[args.command](cfg, out, args.strict)
    except ConfigError as exc:
        print(f"dhrl: config error: {exc}", file=sys.stderr)
        return 2
    except CapacityError as exc:
        print(f"dhrl: {exc}", file=sys.stderr)
        return 3
    except StrictFailure as exc:
        print(f"dhrl: strict: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
