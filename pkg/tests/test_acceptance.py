"""Acceptance suite: one test per release criterion, at pinned tolerances.

Run with `pytest tests/test_acceptance.py -v -s` to see one PASS line per
criterion. The two training-based criteria (8 and 9) dominate the runtime;
everything else finishes in seconds.
"""

import time

import numpy as np
import pytest
from scipy import stats

from conftest import random_circuit
from qjoin.bench import build_informative_workload, count_parameters, noisy_eval
from qjoin.catalog import Catalog, Table, generate_catalog, generate_query, make_workload
from qjoin.env import (
    action_mask,
    action_pair,
    baseline_length,
    encode_baseline,
    encode_reduced,
    reduced_length,
    reset,
    reward_bounds,
    step,
)
from qjoin.jointree import cardinality, cost_out, dp_optimal, enumerate_bushy
from qjoin.ppo import (
    ActorCriticModel,
    PPOConfig,
    VQCSettings,
    model_config_from_name,
    save_checkpoint,
    train,
)
from qjoin.qsim import (
    NoiseSpec,
    diagonal_observable,
    expectation,
    gradients_parameter_shift,
    simulate,
    simulate_noisy,
    CircuitSpec,
    Gate,
    ParamSlot,
)
from qjoin.singlestep import train_singlestep

WORKLOAD_CATALOG_SEED = 101
WORKLOAD_SEED = 202
RUN_PAIRS = [(0, 0), (1, 1), (2, 2), (3, 3), (4, 4)]  # (fold, seed)
FULL_VQC = VQCSettings(use_dru=True, dru_repetitions=5)  # 20 variational layers
NOISE_GRID = [0.0, 0.01, 0.02, 0.03, 0.04, 0.05]


def report(criterion: int, text: str):
    print(f"\n[PASS] criterion {criterion}: {text}")


@pytest.fixture(scope="session")
def workload():
    catalog = generate_catalog(WORKLOAD_CATALOG_SEED, 8, 5)
    return make_workload(WORKLOAD_SEED, catalog, 500, 4)


@pytest.fixture(scope="session")
def classical_runs(workload):
    results = []
    for fold, seed in RUN_PAIRS:
        cfg = model_config_from_name("classical", n_max=4)
        results.append(
            train(workload, fold, cfg, PPOConfig(total_episodes=10_000, seed=seed))
        )
    return results


@pytest.fixture(scope="session")
def qcritic_runs(workload):
    results = []
    for fold, seed in RUN_PAIRS:
        cfg = model_config_from_name("q-critic", n_max=4, vqc=FULL_VQC)
        results.append(
            train(workload, fold, cfg, PPOConfig(total_episodes=10_000, seed=seed))
        )
    return results


@pytest.fixture(scope="session")
def noise_workload():
    """Cost-sensitive queries: with the stock generator the median 4-relation
    query is nearly cost-flat, so plan quality (and hence noise damage) would
    be invisible in the median. Filtering for informative queries mirrors the
    cost-sensitive subquery harvesting behind the original noise figures."""
    catalog = generate_catalog(101, 5, 5)
    return build_informative_workload(404, catalog, 500, 4, min_median_ratio=3.0)


@pytest.fixture(scope="session")
def qactor_checkpoint(noise_workload, tmp_path_factory):
    """Q-Actor with 8 variational layers (2 re-uploading repetitions): shallow
    enough that per-gate errors accumulate gradually across the whole 1-5%
    grid instead of saturating at the first step."""
    cfg = model_config_from_name(
        "q-actor", n_max=4, vqc=VQCSettings(use_dru=True, dru_repetitions=2)
    )
    ppo = PPOConfig(
        total_episodes=10_000, seed=0, lr_classical=1e-3, episodes_per_update=32
    )
    result = train(noise_workload, 0, cfg, ppo)
    path = tmp_path_factory.mktemp("ckpt") / "qactor.json"
    save_checkpoint(str(path), result.model, 0, result.episodes)
    return str(path), result


def test_criterion_1_oracle_equivalence():
    catalog = generate_catalog(17, 9, 3)
    start = time.monotonic()
    for seed in range(200):
        n = 2 + seed % 5
        query = generate_query(seed, catalog, n)
        plan = dp_optimal(query, catalog)
        cache: dict[int, float] = {}
        best = min(
            cost_out(t, query, catalog, card_cache=cache)
            for t in enumerate_bushy(query)
        )
        assert plan.cost == best  # exact float equality, zero tolerance
    elapsed = time.monotonic() - start
    assert elapsed < 10.0, f"oracle sweep took {elapsed:.1f}s"
    report(1, f"dp_optimal equals exhaustive minimum on 200 queries ({elapsed:.1f}s)")


def test_criterion_2_cost_telescoping():
    catalog = generate_catalog(23, 9, 4)
    rng = np.random.default_rng(42)
    checked = 0
    for i in range(1000):
        n = 2 + i % 5
        query = generate_query(10_000 + i, catalog, n)
        state, _ = reset(query, catalog)
        deltas = []
        while not state.done:
            choices = np.flatnonzero(action_mask(state))
            state, _, _ = step(state, action_pair(int(rng.choice(choices)), state.n_max))
            deltas.append(state.last_cost_delta)
        final_tree = next(t for t in state.forest if t is not None)
        total, reference = sum(deltas), cost_out(final_tree, query, catalog)
        assert abs(total - reference) <= 1e-9 * max(abs(reference), 1.0)
        checked += 1
    report(2, f"sum of step costs telescopes to plan cost on {checked} rollouts")


def test_criterion_3_reward_contract():
    catalog = generate_catalog(29, 8, 4)
    rng = np.random.default_rng(3)
    for i in range(300):
        n = 2 + i % 5
        query = generate_query(20_000 + i, catalog, n)
        lo, hi = reward_bounds(n)
        state, _ = reset(query, catalog)
        while not state.done:
            choices = np.flatnonzero(action_mask(state))
            state, reward, _ = step(
                state, action_pair(int(rng.choice(choices)), state.n_max)
            )
            assert lo - 1e-12 <= reward <= hi + 1e-12
    # exact clip case: C_t / C_dp = 10 with n = 4 yields exactly -1/3
    query = generate_query(7, catalog, 4)
    state, _ = reset(query, catalog)
    k, l = action_pair(int(np.flatnonzero(action_mask(state))[0]), state.n_max)
    first_join = state.forest[k].leaves | state.forest[l].leaves
    card = cardinality(first_join, query, catalog)
    forced, _ = reset(query, catalog, c_dp=card / 10.0)
    _, reward, _ = step(forced, (k, l))
    assert reward == (-3.0 + 2.0) / 3.0
    # unclipped reference point: ratio exactly 1 gives +1/3
    forced, _ = reset(query, catalog, c_dp=card)
    _, reward, _ = step(forced, (k, l))
    assert reward == (-1.0 + 2.0) / 3.0
    report(3, "rewards bounded and the clipped case equals -1/3 exactly")


def test_criterion_4_gradient_fidelity():
    rng = np.random.default_rng(77)
    start = time.monotonic()
    h = 1e-4
    for i in range(100):
        spec, inputs, params = random_circuit(rng, max_qubits=4, max_layers=3)
        obs = int(rng.integers(0, spec.n_qubits)) if i % 2 == 0 else "all"
        diag = diagonal_observable(spec, obs)
        analytic = gradients_parameter_shift(spec, inputs, params, diag)
        for j in range(spec.param_count):
            plus, minus = params.copy(), params.copy()
            plus[j] += h
            minus[j] -= h
            numeric = (
                expectation(simulate(spec, inputs, plus), diag)
                - expectation(simulate(spec, inputs, minus), diag)
            ) / (2 * h)
            assert abs(analytic[j] - numeric) < 1e-5
    elapsed = time.monotonic() - start
    assert elapsed < 30.0, f"gradient sweep took {elapsed:.1f}s"
    report(4, f"parameter-shift matches finite differences on 100 circuits ({elapsed:.1f}s)")


def test_criterion_5_noise_oracle():
    spec = CircuitSpec(
        n_qubits=1, gates=(Gate("rx", (0,), ParamSlot(0)),), input_count=0, param_count=1
    )
    rng = np.random.default_rng(2024)
    for p in (0.01, 0.03, 0.05):
        result = simulate_noisy(spec, [], [0.0], NoiseSpec(p=p, trajectories=10_000), rng)
        expected = 1.0 - 4.0 * p / 3.0
        stderr = max(result.z_stderr[0], 1e-12)
        assert abs(result.z_mean[0] - expected) <= 3.0 * stderr, (
            f"p={p}: mean {result.z_mean[0]:.5f} vs {expected:.5f} "
            f"(3*stderr={3 * stderr:.5f})"
        )
    report(5, "single-gate depolarizing reproduces 1 - 4p/3 within 3 standard errors")


def test_criterion_6_encoding_sizes():
    tables = tuple(
        Table(f"t{i}", 100, tuple(f"c{j}" for j in range(6 if i < 13 else 5)))
        for i in range(39)
    )
    catalog = Catalog(tables=tables, join_selectivity={(0, 1): 0.5, (1, 2): 0.5})
    assert catalog.num_attributes == 208
    assert baseline_length(catalog) == 3250
    query = generate_query(1, catalog, 3)
    state, _ = reset(query, catalog)
    assert encode_baseline(state).vector.shape == (3250,)
    assert reduced_length(17) == 612
    assert reduced_length(4) == 40
    report(6, "baseline length 3250 (a=208, r=39); reduced lengths 612 and 40")


def test_criterion_7_parameter_count_reproduction():
    classical4 = count_parameters(model_config_from_name("classical", n_max=4, vqc=FULL_VQC))
    qcritic4 = count_parameters(model_config_from_name("q-critic", n_max=4, vqc=FULL_VQC))
    reduction4 = 1.0 - qcritic4.total / classical4.total
    assert reduction4 == pytest.approx(0.47, abs=0.02)
    classical30 = count_parameters(model_config_from_name("classical", n_max=30, vqc=FULL_VQC))
    qcritic30 = count_parameters(model_config_from_name("q-critic", n_max=30, vqc=FULL_VQC))
    reduction30 = 1.0 - qcritic30.total / classical30.total
    assert reduction30 == pytest.approx(0.38, abs=0.02)
    # cross-check the closed forms against instantiated parameter containers
    for name in ("classical", "q-critic"):
        cfg = model_config_from_name(name, n_max=4, vqc=FULL_VQC)
        model = ActorCriticModel(cfg, np.random.default_rng(0))
        actual = sum(len(v) for v in model.group_params().values())
        assert actual == count_parameters(cfg).total
    report(
        7,
        f"q-critic uses {reduction4:.1%} fewer parameters at n=4 "
        f"and {reduction30:.1%} fewer at n=30",
    )


def test_criterion_10_masking_soundness():
    catalog = generate_catalog(31, 9, 4)
    rng = np.random.default_rng(10)
    queries = [generate_query(30_000 + i, catalog, 2 + i % 4) for i in range(100)]
    n_max = 5
    pools = {}
    sampled = 0
    model = None
    episodes = 0
    while sampled < 100_000:
        if episodes % 1000 == 0:
            cfg = model_config_from_name("classical", n_max=n_max, hidden_units=32)
            model = ActorCriticModel(cfg, np.random.default_rng(episodes))
        query = queries[int(rng.integers(len(queries)))]
        c_dp = pools.get(query)
        if c_dp is None:
            c_dp = pools[query] = dp_optimal(query, catalog).cost
        state, obs = reset(query, catalog, n_max=n_max, c_dp=c_dp)
        steps = 0
        while not state.done:
            mask = action_mask(state)
            probs, _ = model.policy(obs.vector, mask)
            act = int(rng.choice(len(probs), p=probs))
            assert mask[act], "sampled an invalid action"
            state, _, _ = step(state, action_pair(act, n_max))
            obs = encode_reduced(state)
            sampled += 1
            steps += 1
        assert steps == query.num_relations - 1
        episodes += 1
    report(10, f"zero invalid actions over {sampled} sampled steps, {episodes} episodes")


def test_criterion_8_desk_scale_training(workload, classical_runs, qcritic_runs):
    """Classical reaches <=1.05 rolling median in >=3 of 5 runs; Q-Critic lands
    within 10% of Classical's final rolling median on the same fold/seed pairs
    (compared through the median over the five runs)."""
    reached = 0
    for result in classical_runs:
        best = min(p.rolling_median for p in result.curve)
        if best <= 1.05:
            reached += 1
    assert reached >= 3, f"classical reached 1.05 in only {reached}/5 runs"
    classical_final = float(np.median([r.final_rolling_median for r in classical_runs]))
    qcritic_final = float(np.median([r.final_rolling_median for r in qcritic_runs]))
    assert qcritic_final <= 1.10 * classical_final, (
        f"q-critic final rolling median {qcritic_final:.4f} vs "
        f"classical {classical_final:.4f}"
    )
    report(
        8,
        f"classical reached <=1.05 in {reached}/5 runs; q-critic final median "
        f"{qcritic_final:.4f} within 10% of classical {classical_final:.4f}",
    )


def test_criterion_9_noise_degradation_trend(noise_workload, qactor_checkpoint):
    path, result = qactor_checkpoint
    # sanity: the checkpoint must beat scrambled play for noise to have bite
    assert result.test_median < 3.0, f"actor too weak: {result.test_median:.2f}"
    rows = noisy_eval(path, noise_workload, 0, NOISE_GRID, trajectories=128, seed=7)
    medians = []
    for p in NOISE_GRID:
        vals = [r.relative_cost for r in rows if r.noise_p == p]
        medians.append(float(np.median(vals)))
    rho = stats.spearmanr(NOISE_GRID, medians).statistic
    assert rho >= 0.8, f"Spearman rho {rho:.3f} over medians {medians}"
    report(
        9,
        "noisy medians "
        + ", ".join(f"{p:.2f}:{m:.3f}" for p, m in zip(NOISE_GRID, medians))
        + f" (rho={rho:.3f})",
    )


def test_supplementary_singlestep_gap(workload, qcritic_runs):
    """Directional check only: multi-step Q-Critic is at least as good as the
    single-step scorer on held-out queries (the paper-scale 17% figure is not
    reproducible at desk scale)."""
    ss = train_singlestep(workload, 0, FULL_VQC, budget=600, seed=0)
    qcritic_median = float(np.median([r.test_median for r in qcritic_runs]))
    assert ss.test_median >= qcritic_median - 1e-9, (
        f"single-step {ss.test_median:.4f} unexpectedly beats "
        f"q-critic {qcritic_median:.4f}"
    )
    print(
        f"\n[PASS] supplementary: single-step test median {ss.test_median:.4f} "
        f">= q-critic {qcritic_median:.4f}"
    )
