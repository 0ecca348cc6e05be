"""Deep Q-learning agent on symbolic gridworld observations.

A small fully-connected Q-network (129 -> 128 -> 64 -> 3, ReLU) trained
with one-step TD targets, uniform experience replay, a periodically
synced target network and epsilon-greedy exploration. Every transition
is replayed under all 8 grid symmetries, which is what makes the policy
generalize beyond the training layouts. Forward and backward passes run
on the selected kernel backend.
"""

import io
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .gridworld import (
    Action, Status, DEFAULT_MAX_STEPS, OBS_SIZE,
    dihedral_transforms, encode_observation, generate_suite, initial_state,
    layout_hash, start_poses, step,
)

DEFAULT_LAYER_SIZES = (OBS_SIZE, 128, 64, 3)
N_ACTIONS = 3

CHECKPOINT_VERSION = 1
TRAIN_LOG_HEADER = "episode,return,steps,epsilon,loss"


@dataclass
class QNetwork:
    layer_sizes: tuple
    params: list  # [W1, b1, W2, b2, W3, b3], float64

    def copy(self):
        return QNetwork(self.layer_sizes, [p.copy() for p in self.params])


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    final_learning_rate: float = 0.001  # != learning_rate anneals linearly
    gamma: float = 0.9
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_fraction: float = 0.15  # fraction of total steps to anneal over
    batch_size: int = 64
    target_sync_interval: int = 1000
    total_env_steps: int = 300000
    buffer_capacity: int = 200000
    warmup_steps: int = 1000
    optimizer: str = "adam"  # "adam" or "sgd"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    symmetry_augment: bool = True
    random_start: bool = True
    select_interval: int = 0  # > 0 keeps the best periodic snapshot
    select_suite_seed: int = 50000
    select_suite_size: int = 100
    suite_size: int = 200
    suite_seed: int = 10000
    lava_min: int = 1
    lava_max: int = 4
    max_steps: int = DEFAULT_MAX_STEPS
    seed: int = 1


@dataclass
class EvalResult:
    mean_reward: float
    reward_stddev: float
    success_rate: float
    lava_rate: float
    timeout_rate: float
    episodes: int


def init_network(seed, layer_sizes=DEFAULT_LAYER_SIZES):
    """He-initialized weights, zero biases; deterministic per seed."""
    rng = np.random.default_rng(seed)
    params = []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        scale = np.sqrt(2.0 / fan_in)
        params.append(rng.normal(0.0, scale, size=(fan_in, fan_out)))
        params.append(np.zeros(fan_out))
    return QNetwork(tuple(layer_sizes), params)


def forward(net, obs):
    """Action values for a single observation."""
    obs = np.asarray(obs, dtype=np.float64)
    if obs.shape != (net.layer_sizes[0],):
        raise ValueError(f"observation shape {obs.shape} does not match "
                         f"input layer size {net.layer_sizes[0]}")
    return kernels.forward(net.params, obs[None, :])[0]


def act(net, obs, epsilon, rng):
    """Epsilon-greedy action; greedy ties break to the lowest index."""
    if epsilon > 0.0 and rng.random() < epsilon:
        return Action(int(rng.integers(N_ACTIONS)))
    return Action(int(np.argmax(forward(net, obs))))


class ReplayBuffer:
    """Fixed-capacity ring buffer with uniform sampling."""

    def __init__(self, capacity, obs_size=OBS_SIZE):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_size))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_size))
        self.dones = np.zeros(capacity)
        self._next = 0
        self._size = 0

    def __len__(self):
        return self._size

    def push(self, obs, action, reward, next_obs, done):
        i = self._next
        self.obs[i] = obs
        self.actions[i] = int(action)
        self.rewards[i] = reward
        self.next_obs[i] = next_obs
        self.dones[i] = float(done)
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size, rng):
        idx = rng.integers(self._size, size=batch_size)
        return (self.obs[idx], self.actions[idx], self.rewards[idx],
                self.next_obs[idx], self.dones[idx])


def _td_targets(target_net, batch, config):
    _, _, rewards, next_obs, dones = batch
    next_q = kernels.forward(target_net.params, next_obs)
    return rewards + config.gamma * (1.0 - dones) * next_q.max(axis=1)


def td_update(net, target_net, batch, config, learning_rate=None):
    """One SGD step toward r + gamma * (1 - done) * max_a Q_target(s', a).

    Returns the pre-step loss.
    """
    obs, actions = batch[0], batch[1]
    targets = _td_targets(target_net, batch, config)
    lr = config.learning_rate if learning_rate is None else learning_rate
    return kernels.grad_step(net.params, obs, actions, targets, lr)


class AdamState:
    """First/second moment accumulators for one parameter list."""

    def __init__(self, params):
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0


def adam_update(net, target_net, batch, config, state, learning_rate):
    """One bias-corrected Adam step on the TD loss; returns the loss."""
    obs, actions = batch[0], batch[1]
    targets = _td_targets(target_net, batch, config)
    loss, grads = kernels.gradients(net.params, obs, actions, targets)
    b1, b2 = config.adam_beta1, config.adam_beta2
    state.t += 1
    for p, g, m, v in zip(net.params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** state.t)
        v_hat = v / (1.0 - b2 ** state.t)
        p -= learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_epsilon)
    return loss


def learning_rate_at(config, env_step):
    """Linear anneal from learning_rate to final_learning_rate."""
    frac = min(1.0, env_step / max(1, config.total_env_steps))
    return (config.learning_rate
            + frac * (config.final_learning_rate - config.learning_rate))


def epsilon_at(config, env_step):
    """Linear anneal from epsilon_start to epsilon_end."""
    horizon = max(1, int(config.epsilon_fraction * config.total_env_steps))
    frac = min(1.0, env_step / horizon)
    return config.epsilon_start + frac * (config.epsilon_end - config.epsilon_start)


def train(config, suite=None):
    """Train a Q-network; returns (net, log_rows).

    Each log row is (episode, return, steps, epsilon, loss). Episodes
    cycle uniformly at random over the training suite; with
    random_start on, each episode additionally begins from a uniformly
    chosen reachable empty cell and heading of the sampled layout. Each
    stored transition is replayed under all 8 grid symmetries when
    symmetry_augment is on. With select_interval > 0 the network is
    periodically scored on a separate selection suite and the best
    scoring parameters are returned instead of the final ones. Fully
    deterministic for a fixed config and suite.
    """
    if config.optimizer not in ("adam", "sgd"):
        raise ValueError(f"unknown optimizer {config.optimizer!r}")
    if suite is None:
        suite = generate_suite(config.suite_seed, config.suite_size,
                               config.lava_min, config.lava_max)
    rng = np.random.default_rng(config.seed)
    net = init_network(int(rng.integers(2**62)))
    target_net = net.copy()
    buffer = ReplayBuffer(config.buffer_capacity)
    transforms = dihedral_transforms() if config.symmetry_augment else None
    # Start each training episode anywhere in the layout: same grids,
    # vastly broader state coverage than just the designated start pose.
    pose_cache = [start_poses(l) for l in suite] if config.random_start \
        else None
    adam = AdamState(net.params)
    select_suite = None
    if config.select_interval > 0:
        select_suite = generate_suite(
            config.select_suite_seed, config.select_suite_size,
            config.lava_min, config.lava_max,
            exclude_hashes={layout_hash(l) for l in suite})
    best_success = -1.0
    best_params = None
    log = []
    env_steps = 0
    episode = 0
    warmup = max(config.warmup_steps, config.batch_size)

    while env_steps < config.total_env_steps:
        index = int(rng.integers(len(suite)))
        if pose_cache is None:
            layout = suite[index]
        else:
            poses = pose_cache[index]
            layout = poses[int(rng.integers(len(poses)))]
        state = initial_state(layout, config.max_steps)
        obs = encode_observation(state)
        ep_return = 0.0
        ep_loss = 0.0
        n_updates = 0
        done = False
        while not done and env_steps < config.total_env_steps:
            epsilon = epsilon_at(config, env_steps)
            action = act(net, obs, epsilon, rng)
            state, reward, done = step(state, action)
            next_obs = encode_observation(state)
            # The step limit is not observable, so a timeout is not a real
            # terminal: bootstrap through it to keep targets consistent.
            terminal = done and state.status != Status.Timeout
            if transforms is None:
                buffer.push(obs, action, reward, next_obs, terminal)
            else:
                for perm, action_map in transforms:
                    aug_obs = np.zeros_like(obs)
                    aug_obs[perm] = obs
                    aug_next = np.zeros_like(next_obs)
                    aug_next[perm] = next_obs
                    buffer.push(aug_obs, int(action_map[action]), reward,
                                aug_next, terminal)
            obs = next_obs
            ep_return += reward
            env_steps += 1
            if env_steps >= warmup:
                batch = buffer.sample(config.batch_size, rng)
                lr = learning_rate_at(config, env_steps)
                if config.optimizer == "adam":
                    ep_loss += adam_update(net, target_net, batch, config,
                                           adam, lr)
                else:
                    ep_loss += td_update(net, target_net, batch, config, lr)
                n_updates += 1
            if env_steps % config.target_sync_interval == 0:
                target_net = net.copy()
            if (select_suite is not None
                    and env_steps % config.select_interval == 0):
                result = evaluate(net, select_suite,
                                  max_steps=config.max_steps)
                if result.success_rate >= best_success:
                    best_success = result.success_rate
                    best_params = [p.copy() for p in net.params]
        log.append((episode, ep_return, state.steps_taken,
                    epsilon_at(config, env_steps),
                    ep_loss / n_updates if n_updates else 0.0))
        episode += 1
    if best_params is not None:
        net = QNetwork(net.layer_sizes, best_params)
    return net, log


def _as_policy(net_or_policy):
    """Accept a QNetwork (greedy) or a callable EnvState -> Action."""
    if isinstance(net_or_policy, QNetwork):
        net = net_or_policy
        return lambda state: Action(
            int(np.argmax(forward(net, encode_observation(state)))))
    return net_or_policy


def rollout(net_or_policy, layout, max_steps=DEFAULT_MAX_STEPS):
    """One greedy episode; returns (return, steps, final status)."""
    policy = _as_policy(net_or_policy)
    state = initial_state(layout, max_steps)
    total = 0.0
    done = False
    while not done:
        state, reward, done = step(state, policy(state))
        total += reward
    return total, state.steps_taken, state.status


def evaluate(net_or_policy, suite, episodes_per_layout=1,
             max_steps=DEFAULT_MAX_STEPS):
    """Greedy evaluation over a layout suite."""
    if not suite:
        raise ValueError("evaluation suite is empty")
    rewards = []
    outcomes = {Status.Success: 0, Status.LavaDeath: 0, Status.Timeout: 0}
    for layout in suite:
        for _ in range(episodes_per_layout):
            total, _, status = rollout(net_or_policy, layout, max_steps)
            rewards.append(total)
            outcomes[status] += 1
    n = len(rewards)
    rewards = np.asarray(rewards)
    return EvalResult(
        mean_reward=float(rewards.mean()),
        reward_stddev=float(rewards.std()),
        success_rate=outcomes[Status.Success] / n,
        lava_rate=outcomes[Status.LavaDeath] / n,
        timeout_rate=outcomes[Status.Timeout] / n,
        episodes=n,
    )


def save_checkpoint(net, path):
    """Versioned npz checkpoint; bit-exact round trip."""
    arrays = {f"param_{i}": p for i, p in enumerate(net.params)}
    np.savez(path, version=np.int64(CHECKPOINT_VERSION),
             layer_sizes=np.asarray(net.layer_sizes, dtype=np.int64), **arrays)


def load_checkpoint(path):
    with np.load(path) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        sizes = tuple(int(s) for s in data["layer_sizes"])
        params = [data[f"param_{i}"] for i in range(2 * (len(sizes) - 1))]
    return QNetwork(sizes, params)


def write_train_log(log, path):
    with open(path, "w") as fh:
        fh.write(TRAIN_LOG_HEADER + "\n")
        for episode, ret, steps, epsilon, loss in log:
            fh.write(f"{episode},{ret:.17g},{steps},{epsilon:.17g},{loss:.17g}\n")
