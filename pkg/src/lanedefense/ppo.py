"""Clipped-surrogate PPO with GAE for the shared defender policy and the attacker.

Both sides are fed from the same simulated ticks; one call to
:meth:`CoTrainer.iterate` collects a rollout and updates every learning
side exactly once.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import nets
from .engine import (
    AttackerAction,
    DamageType,
    GridConfig,
    NO_SPAWN,
    Role,
    RoleSheet,
    Rules,
    UnitSpec,
    new_game,
    step,
)
from .metrics import EpisodeTrace, TraceRecorder
from .nets import NetSpec, Params, TrainingError
from .observe import (
    ATTACKER_OBS_DIM,
    DEFENDER_OBS_DIM,
    compute_rewards,
    encode_all_defenders,
    encode_attacker_obs,
)

log = logging.getLogger(__name__)

DEFENDER_TAGS = (0, 1, 2, 3)
ATTACKER_TAG = 4


@dataclass
class Hyperparams:
    learning_rate: float = 3.0e-4
    batch_size: int = 128
    clip_epsilon: float = 0.2
    entropy_beta: float = 5.0e-4
    gamma: float = 0.99
    gae_lambda: float = 0.95
    epochs_per_update: int = 3
    horizon: int = 2048
    value_coef: float = 0.5
    max_grad_norm: float = 0.5

    def validate(self) -> None:
        for name, v in asdict(self).items():
            if v <= 0:
                raise ValueError(f"hyperparameter {name} must be positive, got {v}")
        if self.clip_epsilon >= 1:
            raise ValueError("clip_epsilon must be < 1")


def compute_gae(
    rewards: Sequence[float],
    values: Sequence[float],
    dones: Sequence[bool],
    gamma: float,
    lam: float,
    next_values: Optional[Sequence[float]] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimates for one agent's transition stream.

    ``next_values[t]`` is the bootstrap V(s_{t+1}): zero after a terminal
    state, the critic's estimate after a truncation or a rollout cut. When
    omitted it is ``values[t+1]`` (0 past the end) masked by ``dones``.
    ``dones`` cuts the advantage recursion at episode boundaries.
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    d = np.asarray(dones, dtype=np.float64)
    n = len(r)
    if not (len(v) == len(d) == n):
        raise ValueError("rewards, values and dones must have equal length")
    if next_values is None:
        nv = np.append(v[1:], 0.0) * (1.0 - d)
    else:
        nv = np.asarray(next_values, dtype=np.float64)
    adv = np.zeros(n)
    running = 0.0
    for t in reversed(range(n)):
        delta = r[t] + gamma * nv[t] - v[t]
        running = delta + gamma * lam * (1.0 - d[t]) * running
        adv[t] = running
    return adv, adv + v


@dataclass
class Transition:
    obs: np.ndarray
    action: np.ndarray
    log_prob: float
    reward: float
    value: float
    next_value: float
    done: bool
    tag: int


class RolloutBuffer:
    """Transitions for one side, kept as separate per-agent streams."""

    def __init__(self):
        self.streams: Dict[int, List[Transition]] = {}

    def add(self, tr: Transition) -> None:
        self.streams.setdefault(tr.tag, []).append(tr)

    def __len__(self) -> int:
        return sum(len(s) for s in self.streams.values())

    def batch(self, gamma: float, lam: float) -> Dict[str, np.ndarray]:
        """Flatten all streams into arrays with advantages and returns attached."""
        parts = {k: [] for k in ("obs", "actions", "logp", "adv", "ret", "values")}
        for tag in sorted(self.streams):
            s = self.streams[tag]
            if not s:
                continue
            adv, ret = compute_gae(
                [t.reward for t in s], [t.value for t in s], [t.done for t in s],
                gamma, lam, [t.next_value for t in s],
            )
            parts["obs"].append(np.stack([t.obs for t in s]))
            parts["actions"].append(np.stack([t.action for t in s]))
            parts["logp"].append(np.array([t.log_prob for t in s]))
            parts["values"].append(np.array([t.value for t in s]))
            parts["adv"].append(adv)
            parts["ret"].append(ret)
        return {k: np.concatenate(v) for k, v in parts.items()}


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    std = adv.std()
    if std < 1e-12:
        return adv - adv.mean()
    return (adv - adv.mean()) / std


def clipped_surrogate(
    spec: NetSpec,
    params: Params,
    obs: np.ndarray,
    actions: np.ndarray,
    old_logp: np.ndarray,
    adv: np.ndarray,
    clip_epsilon: float,
    entropy_beta: float,
    spawn_masked: bool = False,
) -> Tuple[float, Params, Dict[str, float]]:
    """PPO policy loss ``-mean(min(rA, clip(r)A)) - beta*mean(H)`` and its gradient."""
    logits, acts = nets.forward(spec, params, obs, return_cache=True)
    logp, ent, dlogp, dent = nets.log_prob_entropy_grads(logits, spec.heads, actions, spawn_masked)
    n = len(adv)
    ratio = np.exp(logp - old_logp)
    clipped = np.clip(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon)
    surr1 = ratio * adv
    surr2 = clipped * adv
    pg_loss = -np.minimum(surr1, surr2).mean()
    ent_mean = ent.mean()
    loss = pg_loss - entropy_beta * ent_mean
    # d/dlogp of min(rA, clip(r)A): rA where the unclipped branch is active
    active = surr1 <= surr2
    dloss_dlogp = np.where(active, -ratio * adv, 0.0) / n
    dout = dloss_dlogp[:, None] * dlogp - (entropy_beta / n) * dent
    grads = nets.backward(spec, params, acts, dout)
    log_ratio = logp - old_logp
    stats = {
        "policy_loss": float(pg_loss),
        "entropy": float(ent_mean),
        "clip_frac": float(np.mean(np.abs(ratio - 1.0) > clip_epsilon)),
        "approx_kl": float(np.mean((ratio - 1.0) - log_ratio)),
    }
    return float(loss), grads, stats


def value_loss(spec: NetSpec, params: Params, obs: np.ndarray, returns: np.ndarray,
               value_coef: float) -> Tuple[float, Params]:
    out, acts = nets.forward(spec, params, obs, return_cache=True)
    err = out[:, 0] - returns
    loss = value_coef * float((err ** 2).mean())
    dout = (value_coef * 2.0 * err / len(err))[:, None]
    return loss, nets.backward(spec, params, acts, dout)


class LearnerSide:
    """Policy + critic + their optimisers for one side of the game."""

    learns = True

    def __init__(self, policy_spec: NetSpec, value_spec: NetSpec, rng: np.random.Generator,
                 hyper: Hyperparams, spawn_masked: bool = False):
        self.policy_spec = policy_spec
        self.value_spec = value_spec
        self.spawn_masked = spawn_masked
        self.hyper = hyper
        self.params = nets.init_params(policy_spec, rng)
        self.vparams = nets.init_params(value_spec, rng)
        self.opt = nets.Adam(self.params, hyper.learning_rate, max_grad_norm=hyper.max_grad_norm)
        self.vopt = nets.Adam(self.vparams, hyper.learning_rate, max_grad_norm=hyper.max_grad_norm)
        self.updates = 0

    def act(self, obs: np.ndarray, rng: np.random.Generator):
        logits = nets.forward(self.policy_spec, self.params, obs)
        actions, logp = nets.sample_action(logits, self.policy_spec.heads, rng, self.spawn_masked)
        return actions, logp, self.value(obs)

    def value(self, obs: np.ndarray) -> np.ndarray:
        return nets.value(self.value_spec, self.vparams, np.atleast_2d(obs))

    def update(self, buffer: RolloutBuffer, rng: np.random.Generator) -> Dict[str, float]:
        h = self.hyper
        data = buffer.batch(h.gamma, h.gae_lambda)
        params, vparams, stats = ppo_update(
            self.policy_spec, self.params, self.value_spec, self.vparams,
            self.opt, self.vopt, data, h, rng, self.spawn_masked,
        )
        self.params, self.vparams = params, vparams
        self.updates += 1
        return stats


def ppo_update(
    policy_spec: NetSpec,
    params: Params,
    value_spec: NetSpec,
    vparams: Params,
    opt: nets.Adam,
    vopt: nets.Adam,
    data: Dict[str, np.ndarray],
    hyper: Hyperparams,
    rng: np.random.Generator,
    spawn_masked: bool = False,
) -> Tuple[Params, Params, Dict[str, float]]:
    adv = normalize_advantages(data["adv"])
    n = len(adv)
    totals: Dict[str, float] = {}
    n_batches = 0
    for _ in range(hyper.epochs_per_update):
        order = rng.permutation(n)
        for start in range(0, n, hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            loss, grads, st = clipped_surrogate(
                policy_spec, params, data["obs"][idx], data["actions"][idx], data["logp"][idx],
                adv[idx], hyper.clip_epsilon, hyper.entropy_beta, spawn_masked,
            )
            vl, vgrads = value_loss(value_spec, vparams, data["obs"][idx], data["ret"][idx], hyper.value_coef)
            if not (np.isfinite(loss) and np.isfinite(vl)):
                raise TrainingError(f"non-finite loss (policy={loss}, value={vl}) after {n_batches} minibatches")
            params = opt.step(params, grads)
            vparams = vopt.step(vparams, vgrads)
            st["value_loss"] = vl
            for k, v in st.items():
                totals[k] = totals.get(k, 0.0) + v
            n_batches += 1
    stats = {k: v / max(n_batches, 1) for k, v in totals.items()}
    stats["n_samples"] = n
    return params, vparams, stats


# ---------------------------------------------------------------------------
# action decoding


def decode_attacker_action(indices: Sequence[int]) -> AttackerAction:
    """Map the 13 head indices to an AttackerAction (spawn head index 1 = spawn)."""
    i = [int(v) for v in indices]
    if i[0] == 0:
        return NO_SPAWN
    spec = UnitSpec(
        lane=i[1], health=i[2] + 1, damage=i[3] + 1, speed=i[4] + 1, range=i[5] + 1,
        regen=i[6], leech=i[7], phys_def=i[8], magic_def=i[9], phys_pen=i[10],
        magic_pen=i[11], dtype=DamageType(i[12]),
    )
    return AttackerAction(True, spec)


def encode_attacker_action(action: AttackerAction) -> np.ndarray:
    if not action.spawn:
        return np.zeros(13, dtype=np.int64)
    s = action.spec
    return np.array([1, s.lane, s.health - 1, s.damage - 1, s.speed - 1, s.range - 1, s.regen,
                     s.leech, s.phys_def, s.magic_def, s.phys_pen, s.magic_pen, int(s.dtype)],
                    dtype=np.int64)


def make_defender_side(rng, hyper: Hyperparams) -> LearnerSide:
    return LearnerSide(
        NetSpec(DEFENDER_OBS_DIM, nets.DEFENDER_HEADS),
        NetSpec(DEFENDER_OBS_DIM, value_head=True),
        rng, hyper,
    )


def make_attacker_side(rng, hyper: Hyperparams, lanes: int = 10) -> LearnerSide:
    return LearnerSide(
        NetSpec(ATTACKER_OBS_DIM, nets.attacker_heads(lanes)),
        NetSpec(ATTACKER_OBS_DIM, value_head=True),
        rng, hyper, spawn_masked=True,
    )


# ---------------------------------------------------------------------------
# rollouts


@dataclass
class FinishedEpisode:
    index: int
    seed: int
    length: int
    terminal: str
    trace: Optional[EpisodeTrace]
    defender_return: float
    attacker_return: float


class CoTrainer:
    """Plays episodes back to back and feeds both sides' buffers from the same ticks.

    ``defender`` / ``attacker`` are either :class:`LearnerSide` objects or
    fixed policies exposing ``act(obs, rng) -> (actions, logp, values)`` and
    ``learns = False``; fixed sides get no buffer and are never updated.
    """

    def __init__(
        self,
        defender,
        attacker,
        episode_seed: Callable[[int], int],
        rng: np.random.Generator,
        config: GridConfig = GridConfig(),
        rules: Rules = Rules(),
        roles: Optional[Dict[Role, RoleSheet]] = None,
        record_traces: bool = True,
        trace_config: Optional[dict] = None,
    ):
        self.defender = defender
        self.attacker = attacker
        self.episode_seed = episode_seed
        self.rng = rng
        self.config = config
        self.rules = rules
        self.roles = roles
        self.record_traces = record_traces
        self.trace_config = trace_config or {}
        self.games_started = 0
        self.finished: List[FinishedEpisode] = []
        self._start_episode()

    def _start_episode(self) -> None:
        self.episode_index = self.games_started
        self.seed = self.episode_seed(self.episode_index)
        self.games_started += 1
        self.state = new_game(self.config, self.seed, self.rules, self.roles)
        self.recorder = TraceRecorder(self.seed, self.episode_index, self.trace_config) if self.record_traces else None
        self.ep_returns = [0.0, 0.0]
        self._observe()

    def _observe(self) -> None:
        self.d_obs = encode_all_defenders(self.state)
        self.a_obs = encode_attacker_obs(self.state)

    def play_tick(self, d_buf: Optional[RolloutBuffer], a_buf: Optional[RolloutBuffer]) -> Optional[FinishedEpisode]:
        d_actions, d_logp, d_val = self.defender.act(self.d_obs, self.rng)
        a_actions, a_logp, a_val = self.attacker.act(self.a_obs[None, :], self.rng)
        att_action = decode_attacker_action(a_actions[0])
        prev_d_obs, prev_a_obs = self.d_obs, self.a_obs
        self.state, outcome = step(self.state, [int(a[0]) for a in d_actions], att_action)
        if self.recorder is not None:
            self.recorder.record(self.state, outcome)
        rew = compute_rewards(outcome)
        self.ep_returns[0] += rew.defender_rewards[0]
        self.ep_returns[1] += rew.attacker_reward
        term = outcome.terminal
        if term.done:
            done = True
            if term.attacker_win:
                d_next = np.zeros(4)
                a_next = 0.0
            else:
                self._observe()
                d_next = self.defender.value(self.d_obs) if d_buf is not None else np.zeros(4)
                a_next = float(self.attacker.value(self.a_obs)[0]) if a_buf is not None else 0.0
        else:
            done = False
            self._observe()
            d_next = self.defender.value(self.d_obs) if d_buf is not None else np.zeros(4)
            a_next = float(self.attacker.value(self.a_obs)[0]) if a_buf is not None else 0.0
        if d_buf is not None:
            for i in DEFENDER_TAGS:
                d_buf.add(Transition(prev_d_obs[i], d_actions[i], float(d_logp[i]),
                                     rew.defender_rewards[i], float(d_val[i]), float(d_next[i]), done, i))
        if a_buf is not None:
            a_buf.add(Transition(prev_a_obs, a_actions[0], float(a_logp[0]), rew.attacker_reward,
                                 float(a_val[0]), a_next, done, ATTACKER_TAG))
        if not done:
            return None
        ep = FinishedEpisode(
            index=self.episode_index,
            seed=self.seed,
            length=self.state.tick,
            terminal=term.value,
            trace=self.recorder.trace if self.recorder is not None else None,
            defender_return=self.ep_returns[0],
            attacker_return=self.ep_returns[1],
        )
        self.finished.append(ep)
        self._start_episode()
        return ep

    def collect_rollout(self, horizon: int, stop: Optional[Callable[[], bool]] = None):
        """Play until every learning side holds ``horizon`` transitions.

        ``stop`` is polled after each finished episode and ends collection
        early when it returns True. Returns (defender_buffer, attacker_buffer,
        finished episodes); buffers are None for non-learning sides.
        """
        d_buf = RolloutBuffer() if self.defender.learns else None
        a_buf = RolloutBuffer() if self.attacker.learns else None
        episodes: List[FinishedEpisode] = []
        while True:
            if all(b is None or len(b) >= horizon for b in (d_buf, a_buf)):
                break
            ep = self.play_tick(d_buf, a_buf)
            if ep is not None:
                episodes.append(ep)
                if stop is not None and stop():
                    break
        return d_buf, a_buf, episodes

    def iterate(self, horizon: int, stop: Optional[Callable[[], bool]] = None):
        """One co-training iteration: collect, then update each learning side once."""
        d_buf, a_buf, episodes = self.collect_rollout(horizon, stop)
        stats = {}
        if d_buf is not None and len(d_buf):
            stats["defender"] = self.defender.update(d_buf, self.rng)
        if a_buf is not None and len(a_buf):
            stats["attacker"] = self.attacker.update(a_buf, self.rng)
        return episodes, stats
