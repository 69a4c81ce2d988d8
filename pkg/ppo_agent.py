"""
PPO with a clipped surrogate, GAE and a small actor-critic MLP, all in numpy.

Network
    actor   obs -> 64 -> 64 -> [U association logits | U key logits | C means | C log-stds]
    critic  obs -> 64 -> 64 -> 1
    tanh on hidden layers, linear outputs, log-stds clamped to [-5, 2].

The joint log-probability of an action is the sum over heads. Categorical heads
use log-softmax. Continuous heads are tanh-squashed Gaussians: the buffer keeps
the pre-tanh sample u, and

    log pi(a) = log N(u; mu, sigma) - log(1 - tanh(u)^2)

where the correction is computed as 2 (log 2 - u - softplus(-2u)).

Loss on a minibatch of B samples with ratio m = exp(logp - logp_old):

    L = -mean(min(m A, clip(m, 1-eps, 1+eps) A))
        - entropy_coef * mean(entropy)
        + value_coef * mean((V - R)^2)

Entropy uses the exact categorical entropy plus the entropy of the unsquashed
Gaussian. Gradients are back-propagated by hand (Mlp.backward) and checked
against central finite differences in the test suite. Advantages are
normalised per update batch; when their spread is below 1e-8 they are only
centred.

Rewards are multiplied by reward_scale before they enter the buffer, so the
critic fits returns of order one; the training log keeps the unscaled values.

Optimiser is Adam with global gradient-norm clipping. Any non-finite gradient or
parameter aborts the update with NonFiniteGradientError and leaves the previous
parameters in place.
"""
from __future__ import annotations

import logging
import math
import sys
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from time import monotonic
from typing import Callable, Deque, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import log_softmax

from environment import Action, ActionSpec, Environment
from scenario import ConfigError

logger = logging.getLogger("uav_relay_sim.ppo_agent")

AGENT_STREAM = 2
UPDATE_STREAM = 3
SAMPLING_STREAM = 4
LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
POLICY_VERSION = "ppo-mlp-1"
STATS_WINDOW_SECONDS = 60.0
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
ADVANTAGE_STD_FLOOR = 1e-8


def eprint(message: str) -> None:
    print(message, file=sys.stderr)


class NonFiniteGradientError(RuntimeError):
    def __init__(self, names: Sequence[str], stage: str) -> None:
        shown = ", ".join(names[:5]) + (" ..." if len(names) > 5 else "")
        super().__init__(f"Non-finite values in {stage} of {len(names)} tensor(s): {shown}")
        self.names = list(names)
        self.stage = stage


@dataclass(frozen=True)
class PpoHyperparams:
    learning_rate: float = 0.003
    gamma: float = 0.99
    clip: float = 0.2
    epochs: int = 10
    minibatch: int = 64
    gae_lambda: float = 0.95
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    reward_scale: float = 0.05
    rollout_episodes: int = 10
    episodes: int = 2000
    hidden_size: int = 64
    hidden_layers: int = 2
    num_workers: int = 1
    checkpoint_interval: int = 100
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("ppo_gamma", "must lie in [0, 1]")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ConfigError("ppo_gae_lambda", "must lie in [0, 1]")
        if not self.clip > 0.0:
            raise ConfigError("ppo_clip", "must be positive")
        if not self.reward_scale > 0.0:
            raise ConfigError("ppo_reward_scale", "must be positive")
        if self.learning_rate < 0.0:
            raise ConfigError("ppo_learning_rate", "must not be negative")
        for name in ("epochs", "minibatch", "rollout_episodes", "hidden_size", "hidden_layers", "num_workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"ppo_{name}", "must be at least 1")
        if self.episodes < 0 or self.checkpoint_interval < 0:
            raise ConfigError("ppo_episodes", "episode counts must not be negative")
        for name in ("entropy_coef", "value_coef", "max_grad_norm"):
            if getattr(self, name) < 0.0:
                raise ConfigError(f"ppo_{name}", "must not be negative")

    @property
    def hidden_sizes(self) -> Tuple[int, ...]:
        return (self.hidden_size,) * self.hidden_layers


class Mlp:
    """Dense tanh network with an explicit backward pass."""

    def __init__(
        self,
        name: str,
        sizes: Sequence[int],
        rng: Optional[np.random.Generator] = None,
        output_gain: float = 1.0,
    ) -> None:
        if len(sizes) < 2:
            raise ValueError("An MLP needs at least an input and an output size")
        self.name = name
        self.sizes = tuple(int(s) for s in sizes)
        self.weights: List[np.ndarray] = []
        self.biases: List[np.ndarray] = []
        for index, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            if rng is None:
                weight = np.zeros((fan_in, fan_out))
            else:
                gain = output_gain if index == len(self.sizes) - 2 else 1.0
                weight = rng.normal(0.0, gain / math.sqrt(fan_in), size=(fan_in, fan_out))
            self.weights.append(weight)
            self.biases.append(np.zeros(fan_out))

    def parameters(self) -> Dict[str, np.ndarray]:
        params: Dict[str, np.ndarray] = {}
        for index, (weight, bias) in enumerate(zip(self.weights, self.biases)):
            params[f"{self.name}.{index}.weight"] = weight
            params[f"{self.name}.{index}.bias"] = bias
        return params

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray]]:
        activations = [x]
        h = x
        last = len(self.weights) - 1
        for index, (weight, bias) in enumerate(zip(self.weights, self.biases)):
            z = h @ weight + bias
            h = z if index == last else np.tanh(z)
            activations.append(h)
        return h, activations

    def backward(self, activations: List[np.ndarray], grad_out: np.ndarray) -> Dict[str, np.ndarray]:
        grads: Dict[str, np.ndarray] = {}
        g = grad_out
        last = len(self.weights) - 1
        for index in range(last, -1, -1):
            if index != last:
                g = g * (1.0 - activations[index + 1] ** 2)
            grads[f"{self.name}.{index}.weight"] = activations[index].T @ g
            grads[f"{self.name}.{index}.bias"] = g.sum(axis=0)
            g = g @ self.weights[index].T
        return grads


@dataclass
class PolicyHeads:
    logits: List[np.ndarray]
    mean: np.ndarray
    raw_log_std: np.ndarray

    @property
    def log_std(self) -> np.ndarray:
        return np.clip(self.raw_log_std, LOG_STD_MIN, LOG_STD_MAX)


class ActorCritic:
    def __init__(
        self,
        spec: ActionSpec,
        hidden_sizes: Sequence[int] = (64, 64),
        rng: Optional[np.random.Generator] = None,
    ) -> None:
        self.spec = spec
        self.categorical_sizes = spec.categorical_sizes
        self.continuous_dims = spec.continuous_dims
        self.hidden_sizes = tuple(hidden_sizes)
        out = sum(self.categorical_sizes) + 2 * self.continuous_dims
        self.actor = Mlp("actor", (spec.observation_size, *self.hidden_sizes, out), rng, output_gain=0.01)
        self.critic = Mlp("critic", (spec.observation_size, *self.hidden_sizes, 1), rng)

    def parameters(self) -> Dict[str, np.ndarray]:
        params = self.actor.parameters()
        params.update(self.critic.parameters())
        return params

    def _split(self, out: np.ndarray) -> PolicyHeads:
        logits = []
        offset = 0
        for size in self.categorical_sizes:
            logits.append(out[:, offset: offset + size])
            offset += size
        c = self.continuous_dims
        return PolicyHeads(logits, out[:, offset: offset + c], out[:, offset + c: offset + 2 * c])

    def policy_forward(self, obs: np.ndarray) -> Tuple[PolicyHeads, np.ndarray]:
        """Distribution parameters and state values for a batch (or one) observation."""
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        out, _ = self.actor.forward(obs)
        value, _ = self.critic.forward(obs)
        return self._split(out), value[:, 0]


def squash_correction(pre_tanh: np.ndarray) -> np.ndarray:
    """log(1 - tanh(u)^2), stable for large |u|."""
    return 2.0 * (math.log(2.0) - pre_tanh - np.logaddexp(0.0, -2.0 * pre_tanh))


def gaussian_log_prob(pre_tanh: np.ndarray, mean: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    z = (pre_tanh - mean) / np.exp(log_std)
    base = -0.5 * z**2 - log_std - HALF_LOG_2PI
    return np.sum(base - squash_correction(pre_tanh), axis=-1)


def clipped_surrogate(
    log_prob_new: np.ndarray, log_prob_old: np.ndarray, advantages: np.ndarray, clip: float
) -> np.ndarray:
    ratio = np.exp(np.asarray(log_prob_new) - np.asarray(log_prob_old))
    advantages = np.asarray(advantages)
    return np.minimum(ratio * advantages, np.clip(ratio, 1.0 - clip, 1.0 + clip) * advantages)


def compute_gae(
    rewards: Sequence[float],
    values: Sequence[float],
    next_values: Sequence[float],
    dones: Sequence[bool],
    gamma: float,
    lam: float,
) -> Tuple[np.ndarray, np.ndarray]:
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    next_values = np.asarray(next_values, dtype=np.float64)
    not_done = 1.0 - np.asarray(dones, dtype=np.float64)
    advantages = np.zeros_like(rewards)
    running = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        delta = rewards[t] + gamma * next_values[t] * not_done[t] - values[t]
        running = delta + gamma * lam * not_done[t] * running
        advantages[t] = running
    return advantages, advantages + values


@dataclass
class Batch:
    obs: np.ndarray
    categorical: np.ndarray
    pre_tanh: np.ndarray
    old_log_prob: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    def __len__(self) -> int:
        return len(self.obs)

    def subset(self, index: np.ndarray) -> "Batch":
        return Batch(
            self.obs[index],
            self.categorical[index],
            self.pre_tanh[index],
            self.old_log_prob[index],
            self.advantages[index],
            self.returns[index],
        )


@dataclass
class LossInfo:
    total: float
    policy: float
    value: float
    entropy: float
    clip_fraction: float
    approx_kl: float


def loss_and_gradients(
    network: ActorCritic, batch: Batch, hp: PpoHyperparams
) -> Tuple[LossInfo, Dict[str, np.ndarray]]:
    n = len(batch)
    out, actor_acts = network.actor.forward(batch.obs)
    heads = network._split(out)
    grad_out = np.zeros_like(out)

    log_prob = np.zeros(n)
    entropy = np.zeros(n)
    rows = np.arange(n)
    categorical_parts = []
    offset = 0
    for head, logits in enumerate(heads.logits):
        size = logits.shape[1]
        log_p = log_softmax(logits, axis=1)
        p = np.exp(log_p)
        chosen = batch.categorical[:, head]
        log_prob += log_p[rows, chosen]
        head_entropy = -np.sum(p * log_p, axis=1)
        entropy += head_entropy
        categorical_parts.append((offset, size, chosen, p, log_p, head_entropy))
        offset += size

    c = network.continuous_dims
    log_std = heads.log_std
    std = np.exp(log_std)
    z = (batch.pre_tanh - heads.mean) / std
    if c:
        log_prob += gaussian_log_prob(batch.pre_tanh, heads.mean, log_std)
        entropy += np.sum(log_std + 0.5 + HALF_LOG_2PI, axis=1)

    ratio = np.exp(log_prob - batch.old_log_prob)
    unclipped = ratio * batch.advantages
    clipped = np.clip(ratio, 1.0 - hp.clip, 1.0 + hp.clip) * batch.advantages
    surrogate = np.minimum(unclipped, clipped)
    active = unclipped <= clipped

    values, critic_acts = network.critic.forward(batch.obs)
    values = values[:, 0]
    value_error = values - batch.returns

    policy_loss = -float(np.mean(surrogate))
    value_loss = float(np.mean(value_error**2))
    mean_entropy = float(np.mean(entropy))
    total = policy_loss - hp.entropy_coef * mean_entropy + hp.value_coef * value_loss

    d_log_prob = -(unclipped * active) / n
    d_entropy = -hp.entropy_coef / n
    for head_offset, size, chosen, p, log_p, head_entropy in categorical_parts:
        onehot = np.zeros_like(p)
        onehot[rows, chosen] = 1.0
        d_entropy_d_logits = -p * (log_p + head_entropy[:, None])
        grad_out[:, head_offset: head_offset + size] = (
            d_log_prob[:, None] * (onehot - p) + d_entropy * d_entropy_d_logits
        )
    if c:
        in_range = (heads.raw_log_std > LOG_STD_MIN) & (heads.raw_log_std < LOG_STD_MAX)
        grad_out[:, offset: offset + c] = d_log_prob[:, None] * z / std
        grad_out[:, offset + c: offset + 2 * c] = (d_log_prob[:, None] * (z**2 - 1.0) + d_entropy) * in_range

    grads = network.actor.backward(actor_acts, grad_out)
    grad_values = (2.0 * hp.value_coef / n) * value_error
    grads.update(network.critic.backward(critic_acts, grad_values[:, None]))

    info = LossInfo(
        total=total,
        policy=policy_loss,
        value=value_loss,
        entropy=mean_entropy,
        clip_fraction=float(np.mean(np.abs(ratio - 1.0) > hp.clip)),
        approx_kl=float(np.mean(batch.old_log_prob - log_prob)),
    )
    return info, grads


def _non_finite(tensors: Dict[str, np.ndarray]) -> List[str]:
    return [name for name, value in tensors.items() if not np.all(np.isfinite(value))]


def clip_grad_norm(grads: Dict[str, np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm > 0.0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads.values():
            g *= scale
    return norm


@dataclass
class AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros(cls, params: Dict[str, np.ndarray]) -> "AdamState":
        return cls(
            {name: np.zeros_like(p) for name, p in params.items()},
            {name: np.zeros_like(p) for name, p in params.items()},
        )


def adam_step(
    params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: AdamState, hp: PpoHyperparams
) -> None:
    state.step += 1
    b1, b2 = hp.adam_beta1, hp.adam_beta2
    correction1 = 1.0 - b1**state.step
    correction2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads[name]
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / correction1
        v_hat = state.v[name] / correction2
        p -= hp.learning_rate * m_hat / (np.sqrt(v_hat) + hp.adam_eps)


class RolloutBuffer:
    def __init__(self, capacity: int, num_categorical: int, continuous_dims: int, observation_size: int) -> None:
        self.capacity = capacity
        self.num_categorical = num_categorical
        self.continuous_dims = continuous_dims
        self.observation_size = observation_size
        self.clear()

    def clear(self) -> None:
        self.obs: List[np.ndarray] = []
        self.categorical: List[np.ndarray] = []
        self.pre_tanh: List[np.ndarray] = []
        self.log_probs: List[float] = []
        self.values: List[float] = []
        self.rewards: List[float] = []
        self.dones: List[bool] = []
        self.advantages: Optional[np.ndarray] = None
        self.returns: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.rewards)

    def add(
        self,
        obs: np.ndarray,
        categorical: Sequence[int],
        pre_tanh: Sequence[float],
        log_prob: float,
        value: float,
        reward: float,
        done: bool,
    ) -> None:
        if len(self) >= self.capacity:
            raise ValueError(f"Rollout buffer is full ({self.capacity} transitions)")
        self.obs.append(np.asarray(obs, dtype=np.float64))
        self.categorical.append(np.asarray(categorical, dtype=np.int64).reshape(self.num_categorical))
        self.pre_tanh.append(np.asarray(pre_tanh, dtype=np.float64).reshape(self.continuous_dims))
        self.log_probs.append(float(log_prob))
        self.values.append(float(value))
        self.rewards.append(float(reward))
        self.dones.append(bool(done))
        self.advantages = None
        self.returns = None

    def finish(self, gamma: float, lam: float, last_value: float = 0.0) -> None:
        """Compute advantages and returns; an unfinished trailing episode bootstraps from last_value."""
        values = np.asarray(self.values)
        next_values = np.append(values[1:], last_value)
        self.advantages, self.returns = compute_gae(self.rewards, values, next_values, self.dones, gamma, lam)

    def batch(self) -> Batch:
        if self.advantages is None or self.returns is None:
            raise RuntimeError("Advantages must be computed before the update phase")
        return Batch(
            obs=np.stack(self.obs).reshape(len(self), self.observation_size),
            categorical=np.stack(self.categorical).reshape(len(self), self.num_categorical),
            pre_tanh=np.stack(self.pre_tanh).reshape(len(self), self.continuous_dims),
            old_log_prob=np.asarray(self.log_probs),
            advantages=self.advantages.copy(),
            returns=self.returns.copy(),
        )


def normalize_advantages(advantages: np.ndarray) -> np.ndarray:
    centred = advantages - advantages.mean()
    std = centred.std()
    if std < ADVANTAGE_STD_FLOOR:
        return centred
    return centred / std


@dataclass
class UpdateStats:
    policy_loss: float = 0.0
    value_loss: float = 0.0
    entropy: float = 0.0
    clip_fraction: float = 0.0
    approx_kl: float = 0.0
    grad_norm: float = 0.0
    minibatches: int = 0


def update(
    buffer: RolloutBuffer,
    network: ActorCritic,
    adam: AdamState,
    hp: PpoHyperparams,
    rng: np.random.Generator,
) -> UpdateStats:
    """K epochs of shuffled minibatches over one rollout; the buffer is cleared afterwards."""
    batch = buffer.batch()
    batch.advantages = normalize_advantages(batch.advantages)
    params = network.parameters()
    stats = UpdateStats()
    size = min(hp.minibatch, len(batch))
    for _ in range(hp.epochs):
        order = rng.permutation(len(batch))
        for start in range(0, len(batch), size):
            info, grads = loss_and_gradients(network, batch.subset(order[start: start + size]), hp)
            bad = _non_finite(grads)
            if bad:
                logger.error("Non-finite gradient in %s (loss %.6g)", ", ".join(bad), info.total)
                raise NonFiniteGradientError(bad, "gradients")
            backup = {name: p.copy() for name, p in params.items()}
            stats.grad_norm += clip_grad_norm(grads, hp.max_grad_norm)
            adam_step(params, grads, adam, hp)
            bad = _non_finite(params)
            if bad:
                for name, p in params.items():
                    p[...] = backup[name]
                logger.error("Non-finite parameters after update in %s", ", ".join(bad))
                raise NonFiniteGradientError(bad, "parameters")
            stats.policy_loss += info.policy
            stats.value_loss += info.value
            stats.entropy += info.entropy
            stats.clip_fraction += info.clip_fraction
            stats.approx_kl += info.approx_kl
            stats.minibatches += 1
    if stats.minibatches:
        k = stats.minibatches
        stats.policy_loss /= k
        stats.value_loss /= k
        stats.entropy /= k
        stats.clip_fraction /= k
        stats.approx_kl /= k
        stats.grad_norm /= k
    buffer.clear()
    return stats


@dataclass
class Sample:
    action: Action
    categorical: np.ndarray
    pre_tanh: np.ndarray
    log_prob: float
    value: float


@dataclass
class PolicyParameters:
    tensors: Dict[str, np.ndarray]
    hyperparams: PpoHyperparams
    seed: int
    episodes: int
    head_sizes: Dict[str, int]
    adam_step: int = 0
    version: str = POLICY_VERSION


class PpoAgent:
    def __init__(
        self,
        spec: ActionSpec,
        hp: Optional[PpoHyperparams] = None,
        seed: int = 0,
        network: Optional[ActorCritic] = None,
    ) -> None:
        self.spec = spec
        self.hp = hp or PpoHyperparams()
        self.seed = seed
        self.network = network or ActorCritic(
            spec, self.hp.hidden_sizes, np.random.default_rng([seed, AGENT_STREAM])
        )
        self.adam = AdamState.zeros(self.network.parameters())
        self.update_rng = np.random.default_rng([seed, UPDATE_STREAM])
        self.episodes_trained = 0

    def act(
        self, obs: np.ndarray, rng: Optional[np.random.Generator] = None, greedy: bool = False
    ) -> Sample:
        heads, value = self.network.policy_forward(obs)
        if not greedy and rng is None:
            raise ValueError("Sampling needs an rng; pass greedy=True for deterministic actions")
        categorical = []
        log_prob = 0.0
        for logits in heads.logits:
            log_p = log_softmax(logits[0])
            if greedy:
                choice = int(np.argmax(log_p))
            else:
                choice = int(rng.choice(len(log_p), p=np.exp(log_p) / np.exp(log_p).sum()))
            categorical.append(choice)
            log_prob += float(log_p[choice])
        mean = heads.mean[0]
        log_std = heads.log_std[0]
        if greedy:
            pre_tanh = mean.copy()
        else:
            pre_tanh = mean + np.exp(log_std) * rng.standard_normal(len(mean))
        if len(mean):
            log_prob += float(gaussian_log_prob(pre_tanh, mean, log_std))
        action = Action(categorical=tuple(categorical), continuous=tuple(np.tanh(pre_tanh)))
        return Sample(action, np.asarray(categorical, dtype=np.int64), pre_tanh, log_prob, float(value[0]))

    def new_buffer(self, episodes: int, horizon: int) -> RolloutBuffer:
        return RolloutBuffer(
            episodes * horizon,
            len(self.spec.categorical_sizes),
            self.spec.continuous_dims,
            self.spec.observation_size,
        )

    def update(self, buffer: RolloutBuffer) -> UpdateStats:
        buffer.finish(self.hp.gamma, self.hp.gae_lambda)
        return update(buffer, self.network, self.adam, self.hp, self.update_rng)

    def export_parameters(self) -> PolicyParameters:
        tensors = {name: p.copy() for name, p in self.network.parameters().items()}
        for name, m in self.adam.m.items():
            tensors[f"adam.m.{name}"] = m.copy()
        for name, v in self.adam.v.items():
            tensors[f"adam.v.{name}"] = v.copy()
        return PolicyParameters(
            tensors=tensors,
            hyperparams=self.hp,
            seed=self.seed,
            episodes=self.episodes_trained,
            head_sizes=self.spec.head_sizes(),
            adam_step=self.adam.step,
        )

    @classmethod
    def from_parameters(cls, params: PolicyParameters, spec: ActionSpec) -> "PpoAgent":
        agent = cls(spec, params.hyperparams, params.seed)
        own = agent.network.parameters()
        for name, p in own.items():
            for prefix, target in (("", own), ("adam.m.", agent.adam.m), ("adam.v.", agent.adam.v)):
                stored = params.tensors.get(prefix + name)
                if stored is None:
                    raise ValueError(f"Checkpoint has no tensor {prefix + name}")
                if stored.shape != p.shape:
                    raise ValueError(f"Tensor {prefix + name} has shape {stored.shape}, expected {p.shape}")
                target[name][...] = stored
        agent.adam.step = params.adam_step
        agent.episodes_trained = params.episodes
        return agent


class StatsTracker:
    def __init__(self, enabled: bool) -> None:
        self.enabled = enabled
        self.start_time = monotonic()
        self.last_report_time = self.start_time
        self.window: Deque[Tuple[float, int]] = deque()
        self.window_transitions = 0
        self.total_transitions = 0
        self.total_episodes = 0

    def _prune_window(self, now: float) -> None:
        cutoff = now - STATS_WINDOW_SECONDS
        while self.window and self.window[0][0] < cutoff:
            _, count = self.window.popleft()
            self.window_transitions -= count

    def _report(self, now: float, force: bool = False) -> None:
        if not self.enabled or self.total_episodes == 0:
            return
        if not force and (now - self.last_report_time) < STATS_WINDOW_SECONDS:
            return
        self._prune_window(now)
        window_span = max(now - (self.window[0][0] if self.window else self.start_time), 1e-9)
        total_span = max(now - self.start_time, 1e-9)
        eprint(
            "[stats] last 60s: "
            f"{len(self.window)} episodes, {self.window_transitions} transitions, "
            f"{len(self.window) / window_span:.2f} episodes/s; "
            f"total: {self.total_episodes} episodes, {self.total_transitions} transitions, "
            f"{self.total_episodes / total_span:.2f} episodes/s"
        )
        self.last_report_time = now

    def record(self, transitions: int) -> None:
        if not self.enabled:
            return
        now = monotonic()
        self.window.append((now, transitions))
        self.window_transitions += transitions
        self.total_transitions += transitions
        self.total_episodes += 1
        self._report(now)

    def finish(self) -> None:
        self._report(monotonic(), force=True)


@dataclass(frozen=True)
class TrainingRecord:
    episode: int
    cum_reward: float
    cum_penalty: float
    loss_pi: float
    loss_v: float
    entropy: float


@dataclass
class EpisodeRollout:
    episode: int
    samples: List[Sample] = field(default_factory=list)
    observations: List[np.ndarray] = field(default_factory=list)
    rewards: List[float] = field(default_factory=list)
    penalties: List[float] = field(default_factory=list)
    dones: List[bool] = field(default_factory=list)


def collect_episode(agent: PpoAgent, env: Environment, seed: int, episode: int) -> EpisodeRollout:
    """Roll one episode with a read-only view of the agent's parameters."""
    rng = np.random.default_rng([seed, SAMPLING_STREAM, env.instance_index, episode])
    rollout = EpisodeRollout(episode)
    obs = env.reset(seed=seed, episode=episode)
    while not env.done:
        sample = agent.act(obs, rng)
        transition = env.step(sample.action)
        rollout.samples.append(sample)
        rollout.observations.append(obs)
        rollout.rewards.append(transition.reward)
        rollout.penalties.append(transition.outcome.penalty)
        rollout.dones.append(transition.done)
        obs = transition.next_observation
    return rollout


EnvFactory = Callable[[int], Environment]
CheckpointSink = Callable[[int, PpoAgent], None]


def train(
    env_factory: EnvFactory,
    hp: PpoHyperparams,
    seed: int,
    checkpoint_sink: Optional[CheckpointSink] = None,
    stats: Optional[StatsTracker] = None,
    agent: Optional[PpoAgent] = None,
) -> Tuple[PpoAgent, List[TrainingRecord]]:
    """
    Collect hp.rollout_episodes episodes, update, repeat until hp.episodes are
    done. With num_workers > 1 the episodes of one round are spread over that
    many environment instances in threads; the update stays single-threaded.
    """
    envs = [env_factory(index) for index in range(hp.num_workers)]
    agent = agent or PpoAgent(envs[0].spec, hp, seed)
    stats = stats or StatsTracker(False)
    horizon = envs[0].config.horizon
    log: List[TrainingRecord] = []
    pool = ThreadPoolExecutor(max_workers=hp.num_workers) if hp.num_workers > 1 else None
    try:
        episode = agent.episodes_trained
        end = agent.episodes_trained + hp.episodes
        while episode < end:
            batch_episodes = list(range(episode, min(episode + hp.rollout_episodes, end)))
            rollouts = _collect(agent, envs, seed, batch_episodes, pool)
            buffer = agent.new_buffer(len(batch_episodes), horizon)
            for rollout in rollouts:
                for obs, sample, reward, done in zip(
                    rollout.observations, rollout.samples, rollout.rewards, rollout.dones
                ):
                    buffer.add(
                        obs, sample.categorical, sample.pre_tanh, sample.log_prob, sample.value,
                        reward * hp.reward_scale, done,
                    )
                stats.record(len(rollout.rewards))
            result = agent.update(buffer)
            for rollout in rollouts:
                log.append(
                    TrainingRecord(
                        episode=rollout.episode,
                        cum_reward=math.fsum(rollout.rewards),
                        cum_penalty=math.fsum(rollout.penalties),
                        loss_pi=result.policy_loss,
                        loss_v=result.value_loss,
                        entropy=result.entropy,
                    )
                )
            previous = episode
            episode = batch_episodes[-1] + 1
            agent.episodes_trained = episode
            logger.info(
                "Episodes %d-%d: reward %.4f penalty %.4f loss_pi %.5f loss_v %.5f",
                previous, episode - 1, log[-1].cum_reward, log[-1].cum_penalty,
                result.policy_loss, result.value_loss,
            )
            if checkpoint_sink and hp.checkpoint_interval:
                if episode // hp.checkpoint_interval > previous // hp.checkpoint_interval:
                    checkpoint_sink(episode, agent)
    finally:
        if pool is not None:
            pool.shutdown()
    stats.finish()
    if checkpoint_sink and (not hp.checkpoint_interval or agent.episodes_trained % hp.checkpoint_interval):
        checkpoint_sink(agent.episodes_trained, agent)
    return agent, log


def _collect(
    agent: PpoAgent,
    envs: List[Environment],
    seed: int,
    episodes: Iterable[int],
    pool: Optional[ThreadPoolExecutor],
) -> List[EpisodeRollout]:
    episodes = list(episodes)
    if pool is None:
        return [collect_episode(agent, envs[0], seed, episode) for episode in episodes]
    rollouts: List[EpisodeRollout] = []
    for start in range(0, len(episodes), len(envs)):
        chunk = episodes[start: start + len(envs)]
        futures = [pool.submit(collect_episode, agent, envs[i], seed, e) for i, e in enumerate(chunk)]
        rollouts.extend(future.result() for future in futures)
    return rollouts


def greedy_chooser(agent: PpoAgent) -> Callable[[Environment], Action]:
    def choose(env: Environment) -> Action:
        return agent.act(env.observation(), greedy=True).action

    return choose

