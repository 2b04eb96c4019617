"""Proximal policy optimization over the join-order environment.

Four pluggable actor/critic combinations share one trainer: Classical
(MLP/MLP), Q-Critic (MLP actor, circuit critic), Q-Actor (circuit actor,
MLP critic), and Fully-Quantum. Circuit actors decode per-qubit <Z>
through a dense head into action logits; circuit critics scale the
tensor-Z expectation with a trainable weight and bias.

The update maximizes the clipped surrogate minus the weighted value loss
plus an entropy bonus; advantages come from GAE. Circuit parameters are
trained with exact analytic gradients (adjoint backprop by default, the
parameter-shift rule on request; the two are interchangeable and tested
equal).
"""

from __future__ import annotations

import json
import os
from collections import deque
from dataclasses import asdict, dataclass, field

import numpy as np

from . import qsim
from .catalog import Catalog, Query, Workload
from .env import (
    action_mask,
    action_pair,
    encode_reduced,
    num_actions,
    reduced_length,
    relative_cost,
    reset,
    step,
)
from .jointree import dp_optimal
from .nn import AdamState, DenseNet, adam_step, masked_entropy, masked_softmax

CHECKPOINT_FORMAT = "qjoin-checkpoint-v1"

MODEL_NAMES = {
    ("classical", "classical"): "classical",
    ("classical", "vqc"): "q-critic",
    ("vqc", "classical"): "q-actor",
    ("vqc", "vqc"): "fully-quantum",
}


@dataclass
class VQCSettings:
    use_dru: bool = True
    dru_repetitions: int = 5
    extra_layers: int = 0


@dataclass
class ModelConfig:
    actor: str = "classical"  # "classical" | "vqc"
    critic: str = "classical"
    n_max: int = 4
    hidden_units: int = 128
    vqc: VQCSettings = field(default_factory=VQCSettings)

    def __post_init__(self):
        if (self.actor, self.critic) not in MODEL_NAMES:
            raise ValueError(f"unknown actor/critic combination {(self.actor, self.critic)}")

    @property
    def name(self) -> str:
        return MODEL_NAMES[(self.actor, self.critic)]


def model_config_from_name(name: str, **kwargs) -> ModelConfig:
    for (actor, critic), known in MODEL_NAMES.items():
        if known == name:
            return ModelConfig(actor=actor, critic=critic, **kwargs)
    raise ValueError(f"unknown model configuration {name!r}")


@dataclass
class PPOConfig:
    clip_eps: float = 0.2
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    gamma: float = 0.99
    gae_lambda: float = 0.95
    episodes_per_update: int = 8
    epochs: int = 4
    minibatch_size: int = 32
    lr_classical: float = 2.5e-4
    lr_quantum: float = 1e-2
    lr_post: float = 2.5e-4
    total_episodes: int = 10_000
    seed: int = 0
    normalize_advantages: bool = True
    quantum_grad_method: str = "adjoint"  # "adjoint" | "parameter-shift"
    log_every: int = 100
    rolling_window: int = 500

    def __post_init__(self):
        if self.clip_eps <= 0:
            raise ValueError("clip epsilon must be positive")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0,1]")
        if not 0 <= self.gae_lambda <= 1:
            raise ValueError("lambda must lie in [0,1]")
        if self.value_coef < 0 or self.entropy_coef < 0:
            raise ValueError("loss coefficients must be nonnegative")

    def learning_rate(self, kind: str) -> float:
        return {"classical": self.lr_classical, "quantum": self.lr_quantum, "post": self.lr_post}[kind]


class ClassicalActor:
    kind = "classical"

    def __init__(self, rng, obs_dim, n_actions, hidden):
        self.net = DenseNet.create(
            rng, [obs_dim, hidden, hidden, n_actions], ["tanh", "tanh", "identity"]
        )

    def logits_trace(self, obs):
        return self.net.forward_trace(obs)

    def gradients(self, trace, upstream, grad_method):
        flat, _ = self.net.backward(trace, upstream)
        return {"actor_net": flat}

    def groups(self):
        return {"actor_net": ("classical", self.net)}


class VQCActor:
    kind = "vqc"

    def __init__(self, rng, n_max, n_actions, settings: VQCSettings):
        self.spec = qsim.build_vqc(
            n_max,
            dru_repetitions=settings.dru_repetitions,
            use_dru=settings.use_dru,
            extra_layers=settings.extra_layers,
        )
        self.circuit_params = rng.uniform(0.0, 2 * np.pi, self.spec.param_count)
        self.head = DenseNet.create(rng, [self.spec.n_qubits, n_actions], ["identity"])

    def logits_trace(self, obs):
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        states = qsim.simulate_batch(self.spec, obs, self.circuit_params)
        z = qsim.expect_z_each(states)
        logits, head_trace = self.head.forward_trace(z)
        return logits, (obs, states, head_trace)

    def gradients(self, trace, upstream, grad_method):
        obs, states, head_trace = trace
        head_flat, z_grad = self.head.backward(head_trace, upstream)
        diag_batch = z_grad @ qsim.z_sign_matrix(self.spec.n_qubits)
        circuit = qsim.vjp_gradients(
            self.spec, obs, self.circuit_params, diag_batch,
            method=grad_method, final_states=states,
        )
        return {"actor_circuit": circuit, "actor_head": head_flat}

    def groups(self):
        return {
            "actor_circuit": ("quantum", self),
            "actor_head": ("post", self.head),
        }


class ClassicalCritic:
    kind = "classical"

    def __init__(self, rng, obs_dim, hidden):
        self.net = DenseNet.create(rng, [obs_dim, hidden, hidden, 1], ["tanh", "tanh", "identity"])

    def values_trace(self, obs):
        out, trace = self.net.forward_trace(obs)
        return out[..., 0], trace

    def gradients(self, trace, upstream_v, grad_method):
        flat, _ = self.net.backward(trace, np.asarray(upstream_v)[..., None])
        return {"critic_net": flat}

    def groups(self):
        return {"critic_net": ("classical", self.net)}


class VQCCritic:
    kind = "vqc"

    def __init__(self, rng, n_max, settings: VQCSettings):
        self.spec = qsim.build_vqc(
            n_max,
            dru_repetitions=settings.dru_repetitions,
            use_dru=settings.use_dru,
            extra_layers=settings.extra_layers,
        )
        self.circuit_params = rng.uniform(0.0, 2 * np.pi, self.spec.param_count)
        self.scale = np.array([1.0, 0.0])  # trainable weight and bias on <Z...Z>

    def values_trace(self, obs):
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        states = qsim.simulate_batch(self.spec, obs, self.circuit_params)
        zz = qsim.expect_z_all_batch(states)
        return self.scale[0] * zz + self.scale[1], (obs, states, zz)

    def gradients(self, trace, upstream_v, grad_method):
        obs, states, zz = trace
        upstream_v = np.asarray(upstream_v, dtype=np.float64)
        scale_grad = np.array([float(upstream_v @ zz), float(upstream_v.sum())])
        diag_batch = (upstream_v * self.scale[0])[:, None] * qsim.diagonal_observable(
            self.spec, "all"
        )[None, :]
        circuit = qsim.vjp_gradients(
            self.spec, obs, self.circuit_params, diag_batch,
            method=grad_method, final_states=states,
        )
        return {"critic_circuit": circuit, "critic_scale": scale_grad}

    def groups(self):
        return {
            "critic_circuit": ("quantum", self),
            "critic_scale": ("post", self),
        }


class ActorCriticModel:
    """One actor plus one critic over the reduced observation encoding."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        obs_dim = reduced_length(config.n_max)
        n_act = num_actions(config.n_max)
        if config.actor == "classical":
            self.actor = ClassicalActor(rng, obs_dim, n_act, config.hidden_units)
        else:
            self.actor = VQCActor(rng, config.n_max, n_act, config.vqc)
        if config.critic == "classical":
            self.critic = ClassicalCritic(rng, obs_dim, config.hidden_units)
        else:
            self.critic = VQCCritic(rng, config.n_max, config.vqc)

    @property
    def name(self) -> str:
        return self.config.name

    def policy(self, obs_vector, mask):
        """Masked action distribution and value estimate for one observation."""
        logits, _ = self.actor.logits_trace(obs_vector[None, :])
        probs = masked_softmax(logits[0], mask)
        value, _ = self.critic.values_trace(obs_vector[None, :])
        return probs, float(np.atleast_1d(value)[0])

    def _all_groups(self):
        return {**self.actor.groups(), **self.critic.groups()}

    def group_params(self) -> dict[str, np.ndarray]:
        return {name: self.get_group(name) for name in self._all_groups()}

    def group_kinds(self) -> dict[str, str]:
        return {name: kind for name, (kind, _) in self._all_groups().items()}

    def get_group(self, name: str) -> np.ndarray:
        owner = self._all_groups()[name][1]
        if name in ("actor_circuit", "critic_circuit"):
            return owner.circuit_params.copy()
        if name == "critic_scale":
            return owner.scale.copy()
        return owner.params_flat()

    def set_group(self, name: str, values: np.ndarray) -> None:
        owner = self._all_groups()[name][1]
        if name in ("actor_circuit", "critic_circuit"):
            owner.circuit_params = np.asarray(values, dtype=np.float64).copy()
        elif name == "critic_scale":
            owner.scale = np.asarray(values, dtype=np.float64).copy()
        else:
            owner.set_params_flat(np.asarray(values, dtype=np.float64))

    def parameter_counts(self) -> dict[str, int]:
        return {name: len(vals) for name, vals in self.group_params().items()}


def policy_forward(model: ActorCriticModel, observation, mask):
    """Masked action distribution plus value estimate for one observation."""
    vector = observation.vector if hasattr(observation, "vector") else np.asarray(observation)
    return model.policy(vector, mask)


class QueryPool:
    """Training/test queries with cached exhaustive-search optima."""

    def __init__(self, catalog: Catalog, queries: list[Query], n_max: int):
        self.catalog = catalog
        self.queries = list(queries)
        self.n_max = n_max
        self._c_dp: dict[Query, float] = {}

    def c_dp(self, query: Query) -> float:
        got = self._c_dp.get(query)
        if got is None:
            got = self._c_dp[query] = dp_optimal(query, self.catalog).cost
        return got

    def sample(self, rng: np.random.Generator) -> Query:
        return self.queries[int(rng.integers(len(self.queries)))]


@dataclass
class TrajectoryBatch:
    observations: np.ndarray  # (N, obs_dim)
    masks: np.ndarray         # (N, n_actions) bool
    actions: np.ndarray       # (N,) flat action indices
    log_probs: np.ndarray     # (N,) at collection time
    rewards: np.ndarray       # (N,)
    values: np.ndarray        # (N,) critic estimates at collection time
    dones: np.ndarray         # (N,) bool
    episode_ids: np.ndarray   # (N,)
    episode_costs: list[float]  # per-episode relative cost of the final plan

    def __len__(self) -> int:
        return len(self.actions)


def run_episode(model, query, catalog, n_max, c_dp, rng=None, greedy=False):
    """One episode; returns per-step records plus the final relative cost."""
    state, obs = reset(query, catalog, n_max=n_max, c_dp=c_dp)
    records = []
    while not state.done:
        mask = action_mask(state)
        logits, _ = model.actor.logits_trace(obs.vector[None, :])
        probs = masked_softmax(logits[0], mask)
        if greedy:
            act = int(np.argmax(probs))
        else:
            act = int(rng.choice(len(probs), p=probs))
        logp = float(np.log(probs[act]))
        state, reward, done = step(state, action_pair(act, n_max))
        records.append((obs.vector, mask, act, logp, reward, done))
        obs = encode_reduced(state)
    total_cost = sum(state.subtree_costs)
    return records, relative_cost(total_cost, c_dp)


def collect_rollouts(
    pool: QueryPool, model: ActorCriticModel, count: int, rng: np.random.Generator
) -> TrajectoryBatch:
    """Sample `count` episodes from the pool's queries under the current policy."""
    if count < 1:
        raise ValueError("need at least one episode per rollout batch")
    rows, episode_costs, episode_ids = [], [], []
    for ep in range(count):
        query = pool.sample(rng)
        records, rel = run_episode(model, query, pool.catalog, pool.n_max, pool.c_dp(query), rng)
        rows.extend(records)
        episode_costs.append(rel)
        episode_ids.extend([ep] * len(records))
    observations = np.stack([r[0] for r in rows])
    values, _ = model.critic.values_trace(observations)
    return TrajectoryBatch(
        observations=observations,
        masks=np.stack([r[1] for r in rows]),
        actions=np.array([r[2] for r in rows], dtype=np.int64),
        log_probs=np.array([r[3] for r in rows]),
        rewards=np.array([r[4] for r in rows]),
        values=np.asarray(values, dtype=np.float64),
        dones=np.array([r[5] for r in rows], dtype=bool),
        episode_ids=np.array(episode_ids, dtype=np.int64),
        episode_costs=episode_costs,
    )


def compute_advantages(
    batch: TrajectoryBatch, gamma: float, lam: float, normalize: bool = True
):
    """GAE advantages and value targets (advantages + collected values)."""
    n = len(batch)
    advantages = np.zeros(n)
    last = 0.0
    for t in range(n - 1, -1, -1):
        if batch.dones[t]:
            next_value, last = 0.0, 0.0
        else:
            next_value = batch.values[t + 1]
        delta = batch.rewards[t] + gamma * next_value - batch.values[t]
        last = delta + gamma * lam * (0.0 if batch.dones[t] else last)
        advantages[t] = last
    returns = advantages + batch.values
    if normalize and n > 1:
        std = advantages.std()
        if std > 1e-8:
            advantages = (advantages - advantages.mean()) / std
    return advantages, returns


@dataclass
class LossReport:
    clip_objective: float
    value_loss: float
    entropy: float
    grad_norms: dict[str, float]


def ppo_update(
    model: ActorCriticModel,
    batch: TrajectoryBatch,
    config: PPOConfig,
    optimizers: dict[str, AdamState],
    rng: np.random.Generator,
) -> LossReport:
    """One PPO optimization stage: epochs x minibatches over the batch."""
    if len(batch) == 0:
        raise ValueError("empty trajectory batch")
    advantages, returns = compute_advantages(
        batch, config.gamma, config.gae_lambda, config.normalize_advantages
    )
    n = len(batch)
    clip_terms, vf_terms, ent_terms = [], [], []
    grad_norms: dict[str, float] = {}
    for _ in range(config.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, config.minibatch_size):
            idx = perm[start : start + config.minibatch_size]
            b = len(idx)
            obs = batch.observations[idx]
            masks = batch.masks[idx]
            acts = batch.actions[idx]
            adv = advantages[idx]

            logits, actor_trace = model.actor.logits_trace(obs)
            probs = masked_softmax(logits, masks)
            logp = np.log(probs[np.arange(b), acts])
            ratio = np.exp(logp - batch.log_probs[idx])
            unclipped = ratio * adv
            clipped = np.clip(ratio, 1 - config.clip_eps, 1 + config.clip_eps) * adv
            objective = np.minimum(unclipped, clipped)
            entropy = masked_entropy(probs)

            active = unclipped <= clipped
            coeff = np.where(active, ratio * adv, 0.0) / b
            one_hot = np.zeros_like(probs)
            one_hot[np.arange(b), acts] = 1.0
            dlogits = -coeff[:, None] * (one_hot - probs)
            safe_log = np.where(probs > 0, np.log(np.where(probs > 0, probs, 1.0)), 0.0)
            ds_dlogits = -probs * (safe_log + entropy[:, None])
            dlogits -= config.entropy_coef * ds_dlogits / b
            actor_grads = model.actor.gradients(
                actor_trace, dlogits, config.quantum_grad_method
            )

            v, critic_trace = model.critic.values_trace(obs)
            verr = v - returns[idx]
            dv = config.value_coef * 2.0 * verr / b
            critic_grads = model.critic.gradients(
                critic_trace, dv, config.quantum_grad_method
            )

            if not np.isfinite(objective).all() or not np.isfinite(verr).all():
                raise FloatingPointError("non-finite PPO loss; aborting update")

            for name, grads in {**actor_grads, **critic_grads}.items():
                params = model.get_group(name)
                model.set_group(name, adam_step(optimizers[name], params, grads))
                grad_norms[name] = float(np.linalg.norm(grads))

            clip_terms.append(float(objective.mean()))
            vf_terms.append(float((verr**2).mean()))
            ent_terms.append(float(entropy.mean()))
    return LossReport(
        clip_objective=float(np.mean(clip_terms)),
        value_loss=float(np.mean(vf_terms)),
        entropy=float(np.mean(ent_terms)),
        grad_norms=grad_norms,
    )


def make_optimizers(model: ActorCriticModel, config: PPOConfig) -> dict[str, AdamState]:
    kinds = model.group_kinds()
    return {
        name: AdamState(dim=len(params), lr=config.learning_rate(kinds[name]))
        for name, params in model.group_params().items()
    }


@dataclass
class CurvePoint:
    episode: int
    rolling_median: float
    clip_objective: float
    value_loss: float
    entropy: float


@dataclass
class TrainResult:
    model: ActorCriticModel
    curve: list[CurvePoint]
    final_rolling_median: float
    test_costs: list[float]
    test_median: float
    episodes: int


def evaluate_greedy(model, queries, catalog, n_max, c_dp_of=None) -> list[float]:
    """Relative cost of the argmax policy on each query; deterministic."""
    costs = []
    for q in queries:
        c_dp = c_dp_of(q) if c_dp_of else dp_optimal(q, catalog).cost
        _, rel = run_episode(model, q, catalog, n_max, c_dp, greedy=True)
        costs.append(rel)
    return costs


def train(
    workload: Workload,
    fold: int,
    model_config: ModelConfig,
    ppo_config: PPOConfig,
    log_path: str | None = None,
) -> TrainResult:
    """Train on the nine in-folds, then greedy-evaluate on the held-out fold.

    The rolling median of per-episode relative cost (sampled actions) is
    logged every `log_every` episodes over a `rolling_window`-episode window.
    """
    if not 0 <= fold < 10:
        raise ValueError("fold must lie in 0..9")
    if ppo_config.total_episodes < 1:
        raise ValueError("episode budget must be positive")
    seeds = np.random.SeedSequence(ppo_config.seed).spawn(3)
    init_rng, rollout_rng, update_rng = (np.random.default_rng(s) for s in seeds)

    model = ActorCriticModel(model_config, init_rng)
    train_queries = [workload.queries[i] for i in workload.training_indices(fold)]
    pool = QueryPool(workload.catalog, train_queries, model_config.n_max)
    optimizers = make_optimizers(model, ppo_config)

    recent: deque[float] = deque(maxlen=ppo_config.rolling_window)
    curve: list[CurvePoint] = []
    episodes_done = 0
    next_log = ppo_config.log_every
    report = LossReport(0.0, 0.0, 0.0, {})
    while episodes_done < ppo_config.total_episodes:
        count = min(ppo_config.episodes_per_update, ppo_config.total_episodes - episodes_done)
        batch = collect_rollouts(pool, model, count, rollout_rng)
        recent.extend(batch.episode_costs)
        episodes_done += count
        report = ppo_update(model, batch, ppo_config, optimizers, update_rng)
        while next_log <= episodes_done:
            curve.append(
                CurvePoint(
                    episode=next_log,
                    rolling_median=float(np.median(recent)),
                    clip_objective=report.clip_objective,
                    value_loss=report.value_loss,
                    entropy=report.entropy,
                )
            )
            next_log += ppo_config.log_every

    test_idx = workload.fold_indices(fold)
    test_queries = [workload.queries[i] for i in test_idx]
    test_pool = QueryPool(workload.catalog, test_queries, model_config.n_max)
    test_costs = evaluate_greedy(
        model, test_queries, workload.catalog, model_config.n_max, test_pool.c_dp
    )
    result = TrainResult(
        model=model,
        curve=curve,
        final_rolling_median=float(np.median(recent)),
        test_costs=test_costs,
        test_median=float(np.median(test_costs)) if test_costs else float("nan"),
        episodes=episodes_done,
    )
    if log_path is not None:
        write_training_log(log_path, result.curve)
    return result


def write_training_log(path: str, curve: list[CurvePoint]) -> None:
    partial = f"{path}.partial"
    with open(partial, "w", encoding="utf-8") as fh:
        fh.write("episode,rolling_median_rel_cost,clip_loss,vf_loss,entropy\n")
        for p in curve:
            fh.write(
                f"{p.episode},{p.rolling_median!r},{p.clip_objective!r},"
                f"{p.value_loss!r},{p.entropy!r}\n"
            )
    os.replace(partial, path)


def save_checkpoint(path: str, model: ActorCriticModel, seed: int, step_count: int) -> None:
    """Flat per-group parameter vectors plus reconstruction metadata."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "model_config": asdict(model.config),
        "model_kind": model.name,
        "shapes": model.parameter_counts(),
        "rng_seed": seed,
        "step_count": step_count,
        "params": {name: list(map(float, vals)) for name, vals in model.group_params().items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_checkpoint(path: str) -> tuple[ActorCriticModel, dict]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a {CHECKPOINT_FORMAT} checkpoint")
    cfg = doc["model_config"]
    config = ModelConfig(
        actor=cfg["actor"],
        critic=cfg["critic"],
        n_max=cfg["n_max"],
        hidden_units=cfg["hidden_units"],
        vqc=VQCSettings(**cfg["vqc"]),
    )
    model = ActorCriticModel(config, np.random.default_rng(0))
    for name, values in doc["params"].items():
        expected = model.parameter_counts()[name]
        if expected != len(values):
            raise ValueError(f"checkpoint group {name!r} has {len(values)} values, expected {expected}")
        model.set_group(name, np.array(values, dtype=np.float64))
    meta = {k: doc[k] for k in ("model_kind", "shapes", "rng_seed", "step_count")}
    return model, meta
