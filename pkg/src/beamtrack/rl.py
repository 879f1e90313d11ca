"""Beam-tracking MDP, replay memory, and the DDPG training loop."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import neural
from .channel import noise_variance_for_snr, observe
from .link import DelayLedger, LedgerCounter, SlotKind, average_delay_ms, packet_success
from .neural import Activation, MlpParams
from .scenario import ScenarioConfig, state_at

STATE_DIM = 4
ACTION_DIM = 2
ACTION_SCALE = np.array([math.pi, 1.0])
_BEAM_EPS = 1e-6


class EpisodeDoneError(RuntimeError):
    """``step`` called on a finished episode."""


class BufferUnderfilledError(ValueError):
    pass


@dataclass(frozen=True)
class Observation:
    omega: float
    y_re: float
    y_im: float
    T: int


@dataclass(frozen=True)
class Action:
    a_b: float
    a_f: float

    def clipped(self) -> "Action":
        return Action(min(max(self.a_b, 0.0), math.pi), min(max(self.a_f, 0.0), 1.0))


@dataclass(frozen=True)
class TransitionTuple:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool = False


@dataclass
class EnvParams:
    n_r: int = 16
    n_t: int = 16
    snr_db: float = 20.0
    threshold_db: float = 5.0
    slots_per_step: int = 20
    initial_beam: float = 3.0 * math.pi / 4.0
    packet_bonus: float = 0.0
    max_steps: int = 1000

    def noise_variance(self) -> float:
        return noise_variance_for_snr(self.snr_db, self.n_r, self.n_t)


@dataclass
class AgentConfig:
    gamma: float = 0.9
    lr_actor: float = 1e-4
    lr_critic: float = 1e-4
    tau_mix: float = 0.01
    batch_size: int = 16
    memory_capacity: int = 5000
    hidden: int = 200
    noise_sigma: float = 0.3
    noise_decay: float = 0.9995
    warmup_factor: int = 10
    episodes: int = 300
    actor_output: str = "sigmoid"

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not 0.0 <= self.tau_mix <= 1.0:
            raise ValueError("tau_mix must lie in [0, 1]")
        if self.actor_output not in ("sigmoid", "relu"):
            raise ValueError("actor_output must be 'sigmoid' or 'relu'")


def normalize(obs: Observation, slots_per_step: int) -> np.ndarray:
    """Network input: beam angle over pi, signal over 3x the aligned amplitude,
    slots since tracking in steps (capped at 10) scaled to [0, 1]."""
    t = min(obs.T / slots_per_step, 10.0) / 10.0
    return np.array([obs.omega / math.pi, obs.y_re / 3.0, obs.y_im / 3.0, t])


class BeamEnv:
    """One vehicle pass; each step spans ``slots_per_step`` slots."""

    def __init__(self, scenario: ScenarioConfig, channel, params: EnvParams | None = None):
        self.scenario = scenario
        self.channel = channel
        self.params = params or EnvParams()
        if self.params.slots_per_step < 2:
            raise ValueError("slots_per_step must be at least 2")
        self.sigma2 = self.params.noise_variance()
        self.done = True

    @property
    def n_slots(self) -> int:
        return self.scenario.n_slots

    def reset(self, rng: np.random.Generator) -> Observation:
        p = self.params
        self.rng = rng
        self.channel.reset(rng)
        self.slot = 0
        self.steps = 0
        self.beam = p.initial_beam
        self.last_track = 0
        self.counter = LedgerCounter()
        self.done = False
        snap = self.channel.snapshot(state_at(self.scenario, 0.0), 0)
        sig = observe(snap, self.beam, math.pi - self.beam, p.n_r, p.n_t, self.sigma2, rng)
        self.obs = Observation(self.beam, sig.y_re, sig.y_im, 0)
        return self.obs

    @property
    def ledger(self) -> DelayLedger:
        return self.counter.ledger()

    def step(self, action: Action) -> tuple[Observation, float, bool, int]:
        if self.done:
            raise EpisodeDoneError("episode is finished; call reset()")
        p = self.params
        action = action.clipped()
        dt = self.scenario.slot_duration
        end = min(self.slot + p.slots_per_step, self.n_slots)
        tracking = failures = packets = 0
        y = complex(self.obs.y_re, self.obs.y_im)
        for k in range(self.slot, end):
            snap = self.channel.snapshot(state_at(self.scenario, k * dt), k)
            if k == self.slot and action.a_f >= 0.5:
                self.beam = min(max(action.a_b, _BEAM_EPS), math.pi - _BEAM_EPS)
                self.last_track = k
                self.counter.add(SlotKind.TRACKING)
                tracking += 1
                continue
            ok, _ = packet_success(snap, self.beam, math.pi - self.beam, p.n_r, p.n_t,
                                   self.sigma2, threshold_db=p.threshold_db)
            if ok:
                packets += 1
                self.counter.add(SlotKind.SUCCESS)
            else:
                failures += 1
                self.counter.add(SlotKind.FAILURE)
            if k == end - 1:
                sig = observe(snap, self.beam, math.pi - self.beam, p.n_r, p.n_t,
                              self.sigma2, self.rng)
                y = sig.y
        self.slot = end
        self.steps += 1
        self.done = self.slot >= self.n_slots or self.steps >= p.max_steps
        reward = -float(tracking + failures) + p.packet_bonus * packets
        self.obs = Observation(self.beam, y.real, y.imag, self.slot - self.last_track)
        return self.obs, reward, self.done, packets


def env_reset(env: BeamEnv, rng: np.random.Generator) -> Observation:
    return env.reset(rng)


def env_step(env: BeamEnv, action: Action):
    return env.step(action)


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions, sampled uniformly with replacement."""

    def __init__(self, capacity: int, state_dim: int = STATE_DIM, action_dim: int = ACTION_DIM):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.dones = np.zeros(capacity)
        self.cursor = 0
        self.fill = 0

    def __len__(self) -> int:
        return self.fill

    def push(self, t: TransitionTuple) -> None:
        if not math.isfinite(t.reward):
            raise ValueError("transition reward must be finite")
        i = self.cursor
        self.states[i] = t.state
        self.actions[i] = t.action
        self.rewards[i] = t.reward
        self.next_states[i] = t.next_state
        self.dones[i] = float(t.done)
        self.cursor = (i + 1) % self.capacity
        self.fill = min(self.fill + 1, self.capacity)

    def _order(self) -> np.ndarray:
        if self.fill < self.capacity:
            return np.arange(self.fill)
        return (np.arange(self.capacity) + self.cursor) % self.capacity

    def contents(self) -> list[TransitionTuple]:
        """Stored transitions, oldest first."""
        return [TransitionTuple(self.states[i].copy(), self.actions[i].copy(),
                                float(self.rewards[i]), self.next_states[i].copy(),
                                bool(self.dones[i])) for i in self._order()]

    def sample_indices(self, m: int, rng: np.random.Generator) -> np.ndarray:
        if self.fill < m:
            raise BufferUnderfilledError(f"buffer holds {self.fill} transitions, need {m}")
        return rng.integers(0, self.fill, size=m)

    def sample(self, m: int, rng: np.random.Generator):
        idx = self.sample_indices(m, rng)
        return (self.states[idx], self.actions[idx], self.rewards[idx],
                self.next_states[idx], self.dones[idx])


def buffer_push(buf: ReplayBuffer, t: TransitionTuple) -> None:
    buf.push(t)


def buffer_sample(buf: ReplayBuffer, m: int, rng: np.random.Generator):
    return buf.sample(m, rng)


# --- agent -----------------------------------------------------------------

def actor_architecture(hidden: int = 200) -> list[int]:
    return [STATE_DIM, hidden, hidden, max(1, hidden // 20), ACTION_DIM]


def critic_architecture(hidden: int = 200) -> list[int]:
    return [STATE_DIM + ACTION_DIM, hidden, max(1, hidden // 20), 1]


class DdpgAgent:
    def __init__(self, cfg: AgentConfig, rng: np.random.Generator):
        self.cfg = cfg
        R, I, S = Activation.RELU, Activation.IDENTITY, Activation.SCALED_SIGMOID
        out_act = S if cfg.actor_output == "sigmoid" else R
        self.actor = neural.init_mlp(actor_architecture(cfg.hidden), [R, R, R, out_act], rng,
                                     bounds=(np.zeros(ACTION_DIM), ACTION_SCALE))
        self.critic = neural.init_mlp(critic_architecture(cfg.hidden), [R, R, I], rng)
        self.actor_target = self.actor.copy()
        self.critic_target = self.critic.copy()
        self.actor_opt = neural.OptimizerState.for_net(self.actor, cfg.lr_actor)
        self.critic_opt = neural.OptimizerState.for_net(self.critic, cfg.lr_critic)

    def policy(self, state: np.ndarray, target: bool = False) -> np.ndarray:
        """Raw action(s) in bounds ([0, pi], [0, 1])."""
        out, _ = neural.forward(self.actor_target if target else self.actor, state)
        return np.clip(out, 0.0, ACTION_SCALE)

    def act(self, state: np.ndarray, sigma: float = 0.0,
            rng: np.random.Generator | None = None) -> Action:
        a = self.policy(state)
        if sigma > 0.0:
            a = a + sigma * ACTION_SCALE * rng.standard_normal(ACTION_DIM)
        a = np.clip(a, 0.0, ACTION_SCALE)
        return Action(float(a[0]), float(a[1]))


def critic_update(agent: DdpgAgent, batch) -> float:
    """One descent step on the TD mean-squared error; returns the pre-step loss."""
    S, A, R, S2, D = batch
    m = len(R)
    a2 = agent.policy(S2, target=True) / ACTION_SCALE
    q2, _ = neural.forward(agent.critic_target, np.hstack([S2, a2]))
    y = R + agent.cfg.gamma * (1.0 - D) * q2[:, 0]
    q, cache = neural.forward(agent.critic, np.hstack([S, A]))
    err = q[:, 0] - y
    loss = float(np.mean(err * err))
    if not math.isfinite(loss):
        raise FloatingPointError("critic loss is not finite")
    grads, _ = neural.backward(agent.critic, cache, (2.0 / m) * err[:, None])
    agent.critic, agent.critic_opt = neural.apply_gradients(agent.critic, agent.critic_opt, grads)
    return loss


def actor_gradient(agent: DdpgAgent, S: np.ndarray):
    """Mean Q at the actor's actions and its gradient w.r.t. actor parameters."""
    m = S.shape[0]
    a_raw, a_cache = neural.forward(agent.actor, S)
    an = a_raw / ACTION_SCALE
    q, c_cache = neural.forward(agent.critic, np.hstack([S, an]))
    _, dq_dinput = neural.backward(agent.critic, c_cache, np.full((m, 1), 1.0 / m))
    dq_da = dq_dinput[:, STATE_DIM:] / ACTION_SCALE
    grads, _ = neural.backward(agent.actor, a_cache, dq_da)
    return float(np.mean(q)), grads


def actor_update(agent: DdpgAgent, batch) -> float:
    """One ascent step on mean Q(s, actor(s)); returns the pre-step objective."""
    S = batch[0]
    objective, grads = actor_gradient(agent, S)
    agent.actor, agent.actor_opt = neural.apply_gradients(
        agent.actor, agent.actor_opt, grads, ascend=True)
    return objective


def soft_update_targets(agent: DdpgAgent) -> None:
    tau = agent.cfg.tau_mix
    agent.actor_target = neural.soft_update(agent.actor_target, agent.actor, tau)
    agent.critic_target = neural.soft_update(agent.critic_target, agent.critic, tau)


# --- training / evaluation -------------------------------------------------

LOG_COLUMNS = ("episode", "steps", "ep_packet", "ep_reward", "avg_delay_ms", "wall_seconds")


def episode_delay_ms(ledger: DelayLedger, slot_duration: float) -> float:
    """Average delay; an episode with no delivered packet reports its full length."""
    if ledger.successful_packets == 0:
        return ledger.total_delay_slots * slot_duration * 1e3
    return average_delay_ms(ledger, slot_duration)


def _streams(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    seed = int(rng.integers(0, 2 ** 63 - 1))
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def train(cfg: AgentConfig, scenario: ScenarioConfig, channel, rng: np.random.Generator,
          env_params: EnvParams | None = None, wall_time: bool = False,
          on_episode: Callable[[dict], None] | None = None):
    """Run DDPG for ``cfg.episodes`` episodes. Returns (agent, log rows)."""
    init_rng, env_rng, noise_rng, batch_rng = _streams(rng, 4)
    agent = DdpgAgent(cfg, init_rng)
    env = BeamEnv(scenario, channel, env_params)
    buf = ReplayBuffer(cfg.memory_capacity)
    warmup = cfg.warmup_factor * cfg.batch_size
    sigma = cfg.noise_sigma
    learning = cfg.lr_actor > 0 or cfg.lr_critic > 0
    log = []
    sps = env.params.slots_per_step
    for episode in range(1, cfg.episodes + 1):
        t0 = time.perf_counter()
        obs = env.reset(env_rng)
        s = normalize(obs, sps)
        ep_reward = 0.0
        ep_packet = 0
        done = False
        while not done:
            action = agent.act(s, sigma, noise_rng)
            obs, reward, done, packets = env.step(action)
            s2 = normalize(obs, sps)
            buf.push(TransitionTuple(s, np.array([action.a_b, action.a_f]) / ACTION_SCALE,
                                     reward, s2, done))
            ep_reward += reward
            ep_packet += packets
            if len(buf) >= warmup:
                batch = buf.sample(cfg.batch_size, batch_rng)
                if learning:
                    critic_update(agent, batch)
                    actor_update(agent, batch)
                soft_update_targets(agent)
            sigma *= cfg.noise_decay
            s = s2
        row = {
            "episode": episode,
            "steps": env.steps,
            "ep_packet": ep_packet,
            "ep_reward": ep_reward,
            "avg_delay_ms": episode_delay_ms(env.ledger, scenario.slot_duration),
            "wall_seconds": (time.perf_counter() - t0) if wall_time else 0.0,
        }
        log.append(row)
        if on_episode is not None:
            on_episode(row)
    return agent, log


def run_policy_episode(env: BeamEnv, policy: Callable[[np.ndarray], Action],
                       rng: np.random.Generator) -> DelayLedger:
    obs = env.reset(rng)
    done = False
    while not done:
        obs, _, done, _ = env.step(policy(normalize(obs, env.params.slots_per_step)))
    return env.ledger


def evaluate(agent: DdpgAgent | None, scenario: ScenarioConfig, channel, n_episodes: int,
             rng: np.random.Generator, env_params: EnvParams | None = None,
             policy: Callable[[np.ndarray], Action] | None = None) -> tuple[float, int]:
    """Noise-free rollouts; returns (mean delay in ms over pooled ledgers, packets)."""
    if policy is None:
        if agent is None:
            raise ValueError("need an agent or an explicit policy")
        policy = agent.act
    env = BeamEnv(scenario, channel, env_params)
    total = DelayLedger()
    for _ in range(n_episodes):
        total = total + run_policy_episode(env, policy, rng)
    return episode_delay_ms(total, scenario.slot_duration), total.successful_packets


def save_agent(agent: DdpgAgent, path) -> None:
    """Checkpoint as four networks: actor, critic, actor target, critic target."""
    neural.save_checkpoint(path, [agent.actor, agent.critic,
                                  agent.actor_target, agent.critic_target])


def load_agent(path, cfg: AgentConfig | None = None) -> DdpgAgent:
    nets = neural.load_checkpoint(path)
    if len(nets) != 4:
        raise ValueError(f"expected 4 networks in an agent checkpoint, found {len(nets)}")
    cfg = cfg or AgentConfig()
    actor, critic = nets[0], nets[1]
    if actor.input_dim != STATE_DIM or actor.output_dim != ACTION_DIM:
        raise ValueError("checkpoint actor does not match the state/action dimensions")
    if critic.input_dim != STATE_DIM + ACTION_DIM or critic.output_dim != 1:
        raise ValueError("checkpoint critic does not match the state/action dimensions")
    agent = DdpgAgent(cfg, np.random.default_rng(0))
    agent.actor, agent.critic, agent.actor_target, agent.critic_target = nets
    agent.actor_opt = neural.OptimizerState.for_net(agent.actor, cfg.lr_actor)
    agent.critic_opt = neural.OptimizerState.for_net(agent.critic, cfg.lr_critic)
    return agent
