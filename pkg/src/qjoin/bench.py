"""Experiment harness and CLI: training runs, noisy sweeps, resource tables.

Jobs are keyed by (configuration, fold, seed) and write per-query result
rows plus aggregate summaries as CSV for external plotting. Outputs are
deterministic for a fixed key in single-worker mode; files are written
under a .partial name first and renamed on completion, so leftover
.partial files mark interrupted jobs.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import qsim, singlestep
from .catalog import (
    NUM_FOLDS,
    Catalog,
    Workload,
    generate_catalog,
    generate_query,
    load_workload,
    make_workload,
    save_workload,
)
from .env import action_mask, action_pair, encode_reduced, num_actions, reduced_length, relative_cost, reset, step
from .jointree import cost_out, dp_optimal, enumerate_bushy
from .nn import AdamState, adam_step, masked_softmax, mlp_param_count
from .ppo import (
    ModelConfig,
    PPOConfig,
    QueryPool,
    VQCSettings,
    evaluate_greedy,
    load_checkpoint,
    model_config_from_name,
    save_checkpoint,
    train,
)

RESULTS_HEADER = "# qjoin results v1"
RESULT_FIELDS = ["config_id", "fold", "seed", "phase", "noise_p", "query_index", "relative_cost"]
SUMMARY_FIELDS = ["config_id", "fold", "seed", "phase", "noise_p", "count", "median", "q1", "q3"]

PPO_MODELS = ("classical", "q-critic", "q-actor", "fully-quantum")
NOISE_CAP = 0.05


@dataclass
class ExperimentConfig:
    workload: str
    model: str = "classical"
    folds: list[int] = field(default_factory=lambda: [0])
    seeds: list[int] = field(default_factory=lambda: [0])
    episodes: int = 10_000
    n_max: int = 4
    hidden_units: int = 128
    use_dru: bool = True
    dru_repetitions: int = 5
    extra_layers: int = 0
    noise_grid: list[float] = field(default_factory=list)
    trajectories: int = 128
    out_dir: str = "results"
    config_id: str = ""
    ppo: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("need at least one seed")
        if not self.folds:
            raise ValueError("need at least one fold")
        if any(not 0 <= f < 10 for f in self.folds):
            raise ValueError("folds must lie in 0..9")
        for p in self.noise_grid:
            if not 0.0 <= p <= NOISE_CAP:
                raise ValueError(f"noise grid entry {p} outside [0, {NOISE_CAP}]")
        if self.model not in PPO_MODELS and self.model != "singlestep":
            raise ValueError(f"unknown model {self.model!r}")
        if not self.config_id:
            self.config_id = self.model

    def vqc_settings(self) -> VQCSettings:
        return VQCSettings(
            use_dru=self.use_dru,
            dru_repetitions=self.dru_repetitions,
            extra_layers=self.extra_layers,
        )

    def model_config(self) -> ModelConfig:
        return model_config_from_name(
            self.model,
            n_max=self.n_max,
            hidden_units=self.hidden_units,
            vqc=self.vqc_settings(),
        )

    def ppo_config(self, seed: int) -> PPOConfig:
        return PPOConfig(total_episodes=self.episodes, seed=seed, **self.ppo)


@dataclass
class ResultRow:
    config_id: str
    fold: int
    seed: int
    phase: str  # "train" | "test" | "noisy-test"
    noise_p: float
    query_index: int
    relative_cost: float


def write_rows(path: str, rows: list[ResultRow]) -> None:
    partial = f"{path}.partial"
    with open(partial, "w", encoding="utf-8", newline="") as fh:
        fh.write(RESULTS_HEADER + "\n")
        writer = csv.writer(fh)
        writer.writerow(RESULT_FIELDS)
        for r in rows:
            writer.writerow(
                [r.config_id, r.fold, r.seed, r.phase, repr(r.noise_p), r.query_index, repr(r.relative_cost)]
            )
    os.replace(partial, path)


def read_rows(path: str) -> list[ResultRow]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
        if first.strip() != RESULTS_HEADER:
            raise ValueError(f"{path} does not carry the {RESULTS_HEADER!r} header")
        reader = csv.DictReader(fh)
        for rec in reader:
            rows.append(
                ResultRow(
                    config_id=rec["config_id"],
                    fold=int(rec["fold"]),
                    seed=int(rec["seed"]),
                    phase=rec["phase"],
                    noise_p=float(rec["noise_p"]),
                    query_index=int(rec["query_index"]),
                    relative_cost=float(rec["relative_cost"]),
                )
            )
    return rows


def summarize(rows: list[ResultRow]) -> list[dict]:
    """Group rows by (config, fold, seed, phase, noise) with quartile stats."""
    groups: dict[tuple, list[float]] = {}
    for r in rows:
        groups.setdefault((r.config_id, r.fold, r.seed, r.phase, r.noise_p), []).append(
            r.relative_cost
        )
    out = []
    for key in sorted(groups):
        costs = np.asarray(groups[key])
        q1, med, q3 = np.percentile(costs, [25, 50, 75])
        out.append(
            dict(
                zip(
                    SUMMARY_FIELDS,
                    [*key[:4], key[4], len(costs), float(med), float(q1), float(q3)],
                )
            )
        )
    return out


def write_summary(path: str, rows: list[ResultRow]) -> None:
    partial = f"{path}.partial"
    with open(partial, "w", encoding="utf-8", newline="") as fh:
        fh.write(RESULTS_HEADER + "\n")
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS)
        writer.writeheader()
        for rec in summarize(rows):
            writer.writerow(rec)
    os.replace(partial, path)


def job_name(config: ExperimentConfig, fold: int, seed: int) -> str:
    return f"{config.config_id}_fold{fold}_seed{seed}"


def median_plan_ratio(query, catalog: Catalog) -> float:
    """Median plan cost over the exhaustive enumeration, relative to the optimum."""
    cache: dict[int, float] = {}
    costs = [cost_out(t, query, catalog, card_cache=cache) for t in enumerate_bushy(query)]
    best = min(costs)
    return float(np.median(costs)) / best


def build_informative_workload(
    seed: int,
    catalog: Catalog,
    count: int,
    n_relations: int,
    min_median_ratio: float,
    max_draw_factor: int = 200,
) -> Workload:
    """Workload of generator queries whose plan choice visibly matters.

    Candidate queries are drawn like `make_workload` but kept only when the
    median plan costs at least `min_median_ratio` times the optimum, the
    synthetic stand-in for harvesting cost-sensitive subqueries. Folds are
    assigned round-robin after a seeded shuffle, as in `make_workload`.
    """
    if count < NUM_FOLDS:
        raise ValueError(f"need at least {NUM_FOLDS} queries to form {NUM_FOLDS} folds")
    root = np.random.SeedSequence(seed)
    query_seeds, shuffle_seed = root.spawn(2)
    kept = []
    for child in query_seeds.spawn(count * max_draw_factor):
        query = generate_query(child, catalog, n_relations)
        if median_plan_ratio(query, catalog) >= min_median_ratio:
            kept.append(query)
            if len(kept) == count:
                break
    if len(kept) < count:
        raise ValueError(
            f"only {len(kept)} of {count} queries met the ratio {min_median_ratio} "
            f"within {count * max_draw_factor} draws; lower the threshold"
        )
    shuffle_rng = np.random.default_rng(shuffle_seed)
    order = shuffle_rng.permutation(count)
    return Workload(
        catalog=catalog,
        queries=tuple(kept[i] for i in order),
        folds=tuple(i % NUM_FOLDS for i in range(count)),
    )


def run_experiment(config: ExperimentConfig) -> list[str]:
    """Train and evaluate every (fold, seed) job; returns written CSV paths.

    Jobs whose result file already exists are skipped, which makes reruns
    after an interruption resume from the finished checkpoints.
    """
    workload = load_workload(config.workload)
    os.makedirs(config.out_dir, exist_ok=True)
    written = []
    for fold in config.folds:
        for seed in config.seeds:
            base = os.path.join(config.out_dir, job_name(config, fold, seed))
            result_path = f"{base}.csv"
            if os.path.exists(result_path):
                written.append(result_path)
                continue
            if config.model == "singlestep":
                rows = _run_singlestep_job(config, workload, fold, seed, base)
            else:
                rows = _run_ppo_job(config, workload, fold, seed, base)
            write_rows(result_path, rows)
            write_summary(f"{base}_summary.csv", rows)
            written.append(result_path)
    return written


def _run_ppo_job(config, workload, fold, seed, base) -> list[ResultRow]:
    result = train(
        workload,
        fold,
        config.model_config(),
        config.ppo_config(seed),
        log_path=f"{base}_curve.csv",
    )
    save_checkpoint(f"{base}_checkpoint.json", result.model, seed, result.episodes)
    rows = [
        ResultRow(config.config_id, fold, seed, "train", 0.0, -1, p.rolling_median)
        for p in result.curve
    ]
    test_indices = workload.fold_indices(fold)
    rows.extend(
        ResultRow(config.config_id, fold, seed, "test", 0.0, qi, cost)
        for qi, cost in zip(test_indices, result.test_costs)
    )
    return rows


def _run_singlestep_job(config, workload, fold, seed, base) -> list[ResultRow]:
    result = singlestep.train_singlestep(
        workload, fold, config.vqc_settings(), budget=config.episodes, seed=seed
    )
    singlestep.save_singlestep_checkpoint(
        f"{base}_checkpoint.json", result.model, config.vqc_settings(), seed, config.episodes
    )
    test_indices = workload.fold_indices(fold)
    return [
        ResultRow(config.config_id, fold, seed, "test", 0.0, qi, cost)
        for qi, cost in zip(test_indices, result.test_costs)
    ]


def noisy_greedy_episode(model, query, catalog, n_max, c_dp, noise, rng) -> float:
    """Greedy episode where the actor's expectations come from noisy trajectories."""
    actor = model.actor
    state, obs = reset(query, catalog, n_max=n_max, c_dp=c_dp)
    while not state.done:
        mask = action_mask(state)
        noisy = qsim.simulate_noisy(actor.spec, obs.vector, actor.circuit_params, noise, rng)
        logits = actor.head.forward(noisy.z_mean)
        probs = masked_softmax(logits, mask)
        state, _, _ = step(state, action_pair(int(np.argmax(probs)), n_max))
        obs = encode_reduced(state)
    return relative_cost(sum(state.subtree_costs), c_dp)


def noisy_eval(
    checkpoint: str,
    workload: Workload,
    fold: int,
    noise_grid: list[float],
    trajectories: int = 128,
    seed: int = 0,
    config_id: str = "",
) -> list[ResultRow]:
    """Per-query noisy greedy evaluation of a quantum-actor checkpoint."""
    model, meta = load_checkpoint(checkpoint)
    if model.config.actor != "vqc":
        raise ValueError(
            f"noisy evaluation needs a quantum actor; checkpoint holds a "
            f"{meta['model_kind']!r} model with a classical actor"
        )
    for p in noise_grid:
        if not 0.0 <= p <= NOISE_CAP:
            raise ValueError(f"noise level {p} outside [0, {NOISE_CAP}]")
    config_id = config_id or meta["model_kind"]
    rows = []
    test_indices = workload.fold_indices(fold)
    for p_idx, p in enumerate(noise_grid):
        noise = qsim.NoiseSpec(p=p, trajectories=trajectories)
        for qi in test_indices:
            query = workload.queries[qi]
            c_dp = dp_optimal(query, workload.catalog).cost
            rng = np.random.default_rng([seed, p_idx, qi])
            rel = noisy_greedy_episode(
                model, query, workload.catalog, model.config.n_max, c_dp, noise, rng
            )
            rows.append(
                ResultRow(config_id, fold, int(meta["rng_seed"]), "noisy-test", p, qi, rel)
            )
    return rows


@dataclass
class ParamBreakdown:
    classical: int
    quantum: int
    post: int

    @property
    def total(self) -> int:
        return self.classical + self.quantum + self.post


def _layer_count(n_max: int, settings: VQCSettings) -> int:
    if settings.use_dru:
        return settings.dru_repetitions * n_max
    return n_max + settings.extra_layers


def count_parameters(config: ModelConfig, n_max: int | None = None) -> ParamBreakdown:
    """Closed-form parameter counts per component for a model configuration.

    Cross-checked by tests against a brute-force walk over an instantiated
    model's parameter containers.
    """
    n = config.n_max if n_max is None else n_max
    if n < 2:
        raise ValueError("need n >= 2")
    obs_dim = reduced_length(n)
    actions = num_actions(n)
    n_qubits = 2 * (n + 1)
    layers = _layer_count(n, config.vqc)
    classical = quantum = post = 0
    if config.actor == "classical":
        classical += mlp_param_count(obs_dim, config.hidden_units, actions)
    else:
        quantum += 2 * n_qubits * layers
        post += n_qubits * actions + actions
    if config.critic == "classical":
        classical += mlp_param_count(obs_dim, config.hidden_units, 1)
    else:
        quantum += 2 * n_qubits * layers
        post += 2
    return ParamBreakdown(classical=classical, quantum=quantum, post=post)


def resource_estimate(n: int, approach: str) -> tuple[int, int]:
    """(qubits, depth of one data-uploading block) for an approach at size n."""
    if n < 2:
        raise ValueError("need n >= 2")
    if approach == "multi-step":
        spec = qsim.build_vqc(n, dru_repetitions=1, use_dru=True)
    elif approach == "single-step":
        spec = singlestep.build_singlestep_circuit(n, use_dru=True, dru_repetitions=1)
    else:
        raise ValueError(f"unknown approach {approach!r}")
    return spec.n_qubits, qsim.circuit_depth(spec)


def adam_timing(sizes: list[int], repeats: int = 1000, seed: int = 0) -> list[dict]:
    """Median/quartile wall time of bare optimizer steps per parameter count.

    Gradients are drawn up front so the measurement excludes their cost.
    """
    rng = np.random.default_rng(seed)
    out = []
    for size in sizes:
        adam = AdamState(dim=size, lr=1e-3)
        params = rng.normal(size=size)
        grads = rng.normal(size=(min(repeats, 64), size))
        samples = np.empty(repeats)
        for i in range(repeats):
            g = grads[i % len(grads)]
            start = time.perf_counter_ns()
            params = adam_step(adam, params, g)
            samples[i] = time.perf_counter_ns() - start
        q1, med, q3 = np.percentile(samples, [25, 50, 75])
        out.append(
            {
                "size": size,
                "repeats": repeats,
                "median_ns": float(med),
                "q1_ns": float(q1),
                "q3_ns": float(q3),
            }
        )
    return out


# ---------------------------------------------------------------------------
# CLI


def _csv_ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x != ""]


def _csv_floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x != ""]


def _experiment_config(args) -> ExperimentConfig:
    overrides = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            overrides = json.load(fh)
    merged = dict(
        workload=args.workload,
        model=args.model,
        folds=args.folds,
        seeds=args.seeds,
        episodes=args.episodes,
        n_max=args.n_max,
        use_dru=not args.no_dru,
        dru_repetitions=args.dru_repetitions,
        extra_layers=args.extra_layers,
        out_dir=args.out_dir,
    )
    merged.update(overrides)
    return ExperimentConfig(**merged)


def _cmd_gen_workload(args) -> int:
    catalog = generate_catalog(args.seed, args.tables, args.max_attrs)
    if args.min_spread > 1.0:
        workload = build_informative_workload(
            args.seed + 1, catalog, args.count, args.relations, args.min_spread
        )
    else:
        workload = make_workload(args.seed + 1, catalog, args.count, args.relations)
    save_workload(args.out, workload)
    print(f"wrote {args.count} queries over {args.tables} tables to {args.out}")
    return 0


def _cmd_train(args) -> int:
    config = _experiment_config(args)
    written = run_experiment(config)
    for path in written:
        print(f"results: {path}")
    return 0


def _cmd_eval(args) -> int:
    workload = load_workload(args.workload)
    model, meta = load_checkpoint(args.checkpoint)
    queries = [workload.queries[i] for i in workload.fold_indices(args.fold)]
    pool = QueryPool(workload.catalog, queries, model.config.n_max)
    costs = evaluate_greedy(model, queries, workload.catalog, model.config.n_max, pool.c_dp)
    rows = [
        ResultRow(meta["model_kind"], args.fold, int(meta["rng_seed"]), "test", 0.0, qi, cost)
        for qi, cost in zip(workload.fold_indices(args.fold), costs)
    ]
    os.makedirs(args.out_dir, exist_ok=True)
    base = os.path.join(args.out_dir, f"eval_{meta['model_kind']}_fold{args.fold}")
    write_rows(f"{base}.csv", rows)
    write_summary(f"{base}_summary.csv", rows)
    print(f"median relative cost: {np.median(costs):.4f} over {len(costs)} queries")
    return 0


def _cmd_noisy_eval(args) -> int:
    workload = load_workload(args.workload)
    rows = noisy_eval(
        args.checkpoint,
        workload,
        args.fold,
        args.noise,
        trajectories=args.trajectories,
        seed=args.seed,
    )
    os.makedirs(args.out_dir, exist_ok=True)
    base = os.path.join(args.out_dir, f"noisy_fold{args.fold}")
    write_rows(f"{base}.csv", rows)
    write_summary(f"{base}_summary.csv", rows)
    for rec in summarize(rows):
        print(f"p={rec['noise_p']}: median={rec['median']:.4f} (n={rec['count']})")
    return 0


def _cmd_params(args) -> int:
    settings = VQCSettings(
        use_dru=not args.no_dru,
        dru_repetitions=args.dru_repetitions,
        extra_layers=args.extra_layers,
    )
    lines = [["model", "n", "classical", "quantum", "post", "total"]]
    for name in PPO_MODELS:
        config = model_config_from_name(name, n_max=args.n_max, vqc=settings)
        b = count_parameters(config)
        lines.append([name, args.n_max, b.classical, b.quantum, b.post, b.total])
    _emit_table(lines, args.out)
    return 0


def _cmd_resources(args) -> int:
    lines = [["approach", "n", "qubits", "depth"]]
    for n in range(args.n_min, args.n_max + 1):
        for approach in ("multi-step", "single-step"):
            qubits, depth = resource_estimate(n, approach)
            lines.append([approach, n, qubits, depth])
    _emit_table(lines, args.out)
    return 0


def _cmd_adam_bench(args) -> int:
    rows = adam_timing(args.sizes, repeats=args.repeats)
    lines = [["size", "repeats", "median_ns", "q1_ns", "q3_ns"]]
    for rec in rows:
        lines.append([rec["size"], rec["repeats"], rec["median_ns"], rec["q1_ns"], rec["q3_ns"]])
    _emit_table(lines, args.out)
    return 0


def _cmd_merge(args) -> int:
    rows = []
    for path in args.inputs:
        rows.extend(read_rows(path))
    write_rows(args.out, rows)
    write_summary(os.path.splitext(args.out)[0] + "_summary.csv", rows)
    print(f"merged {len(args.inputs)} files, {len(rows)} rows -> {args.out}")
    return 0


def _emit_table(lines: list[list], out: str | None) -> None:
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(RESULTS_HEADER + "\n")
            csv.writer(fh).writerows(lines)
        print(f"wrote {out}")
    else:
        for line in lines:
            print(",".join(str(v) for v in line))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qjoin", description="join-order RL experiments on synthetic catalogs"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-workload", help="generate a synthetic catalog and query workload")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tables", type=int, default=8)
    p.add_argument("--max-attrs", type=int, default=5)
    p.add_argument("--count", type=int, default=500)
    p.add_argument("--relations", type=int, default=4)
    p.add_argument(
        "--min-spread",
        type=float,
        default=1.0,
        help="keep only queries whose median plan cost is at least this "
        "multiple of the optimum (1.0 disables filtering)",
    )
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_workload)

    p = sub.add_parser("train", help="train and evaluate over folds x seeds")
    p.add_argument("--workload", required=True)
    p.add_argument("--model", default="classical", choices=[*PPO_MODELS, "singlestep"])
    p.add_argument("--folds", type=_csv_ints, default=[0])
    p.add_argument("--seeds", type=_csv_ints, default=[0])
    p.add_argument("--episodes", type=int, default=10_000)
    p.add_argument("--n-max", type=int, default=4)
    p.add_argument("--no-dru", action="store_true")
    p.add_argument("--dru-repetitions", type=int, default=5)
    p.add_argument("--extra-layers", type=int, default=0)
    p.add_argument("--out-dir", default="results")
    p.add_argument("--config", help="JSON file overriding ExperimentConfig fields")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="greedy ideal evaluation of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--workload", required=True)
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--out-dir", default="results")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("noisy-eval", help="noisy greedy evaluation of a quantum actor")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--workload", required=True)
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--noise", type=_csv_floats, default=[0.0, 0.01, 0.02, 0.03, 0.04, 0.05])
    p.add_argument("--trajectories", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="results")
    p.set_defaults(func=_cmd_noisy_eval)

    p = sub.add_parser("params", help="parameter-count table for the model zoo")
    p.add_argument("--n-max", type=int, default=4)
    p.add_argument("--no-dru", action="store_true")
    p.add_argument("--dru-repetitions", type=int, default=5)
    p.add_argument("--extra-layers", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_params)

    p = sub.add_parser("resources", help="qubit and depth requirements by query size")
    p.add_argument("--n-min", type=int, default=2)
    p.add_argument("--n-max", type=int, default=30)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_resources)

    p = sub.add_parser("adam-bench", help="optimizer step timing micro-benchmark")
    p.add_argument("--sizes", type=_csv_ints, default=[100, 1000, 10_000, 100_000])
    p.add_argument("--repeats", type=int, default=1000)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_adam_bench)

    p = sub.add_parser("merge", help="merge result CSVs and recompute summaries")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_merge)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
