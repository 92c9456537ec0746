"""On-policy training: rollouts, generalised advantage estimation, clipped
PPO surrogate, value regression and the synchronous epoch loop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .curriculum import EpisodeCounter, bounds_at
from .mathkit import AdamState, ConfigurationError, RngStream, TrainingDivergence, adam_step
from .net import MlpParams, MlpSpec, init_params, make_head, mlp_backward, mlp_forward
from .reward import CurriculumCoeff, RewardWeights, total_reward, update_curriculum_coeff

METRIC_COLUMNS = (
    "epoch", "mean_return", "r_vel_sum", "r_reg_sum", "r_alive_sum", "r_foot_sum",
    "actor_loss", "critic_loss", "clip_fraction", "C_v", "C_f",
    "bound_lo_x", "bound_hi_x", "bound_lo_y", "bound_hi_y", "bound_lo_w", "bound_hi_w",
)
# appended after the fixed schema
EXTRA_COLUMNS = ("k_vel_mean", "eval_k_vel", "episodes", "falls", "cold_reads", "flight_steps")

UPDATE_MODES = ("minibatches", "passes")


# ---------------------------------------------------------------------------
# advantages and losses


@dataclass
class AdvantageBatch:
    advantages: np.ndarray
    targets: np.ndarray
    mean: float = 0.0
    std: float = 1.0


def compute_gae(rewards, values, dones, bootstrap: float, gamma: float, lam: float,
                truncated=None, truncation_values=None) -> AdvantageBatch:
    """GAE over one environment's sequence.

    ``dones[t]`` marks a termination after step ``t`` (next value 0).
    ``truncated[t]`` marks a cut after step ``t`` where the episode could have
    continued; ``truncation_values[t]`` is then the value of the final state.
    The last step bootstraps from ``bootstrap`` unless it is done or truncated.
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    d = np.asarray(dones, dtype=bool)
    T = r.shape[0]
    if v.shape[0] != T or d.shape[0] != T:
        raise ValueError("rewards, values and dones must have equal length")
    if T < 1:
        raise ValueError("empty rollout")
    tr = np.zeros(T, dtype=bool) if truncated is None else np.asarray(truncated, dtype=bool)
    tv = np.zeros(T) if truncation_values is None else np.asarray(truncation_values, dtype=np.float64)
    if tr.shape[0] != T or tv.shape[0] != T:
        raise ValueError("truncation arrays must match the rollout length")
    adv = np.empty(T)
    acc = 0.0
    for t in range(T - 1, -1, -1):
        if d[t]:
            next_v, cont = 0.0, 0.0
        elif tr[t]:
            next_v, cont = tv[t], 0.0
        elif t == T - 1:
            next_v, cont = bootstrap, 0.0
        else:
            next_v, cont = v[t + 1], 1.0
        delta = r[t] + gamma * next_v - v[t]
        acc = delta + gamma * lam * cont * acc
        adv[t] = acc
    return AdvantageBatch(adv, adv + v)


def normalize_advantages(adv) -> tuple[np.ndarray, float, float]:
    adv = np.asarray(adv, dtype=np.float64)
    mean = float(adv.mean())
    if adv.size < 2:
        return adv - mean, mean, 1.0
    std = float(adv.std())
    return (adv - mean) / (std + 1e-12), mean, std


def ppo_actor_loss(logp_new, logp_old, advantages, eps: float):
    """Negated clipped surrogate. Returns ``(loss, dloss/dlogp_new, clip_fraction)``."""
    ln = np.asarray(logp_new, dtype=np.float64)
    lo = np.asarray(logp_old, dtype=np.float64)
    a = np.asarray(advantages, dtype=np.float64)
    if not (ln.shape == lo.shape == a.shape):
        raise ValueError("ppo loss inputs must have equal shapes")
    log_ratio = ln - lo
    if not np.all(np.isfinite(log_ratio)) or np.any(np.abs(log_ratio) > 20.0):
        raise TrainingDivergence("probability ratio out of range (|log ratio| > 20)")
    ratio = np.exp(log_ratio)
    unclipped = ratio * a
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps) * a
    surrogate = np.minimum(unclipped, clipped)
    n = a.size
    loss = -float(surrogate.mean())
    # the unclipped branch is active when it is the smaller one (ties count as unclipped)
    active = unclipped <= clipped
    grad = np.where(active, -unclipped / n, 0.0)
    clip_fraction = float(np.mean(np.abs(ratio - 1.0) > eps))
    return loss, grad, clip_fraction


def critic_loss(values_pred, value_targets):
    v = np.asarray(values_pred, dtype=np.float64)
    t = np.asarray(value_targets, dtype=np.float64)
    if v.shape != t.shape:
        raise ValueError("critic loss inputs must have equal shapes")
    diff = v - t
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


# ---------------------------------------------------------------------------
# configuration and rollout storage


@dataclass
class PpoConfig:
    clip: float = 0.2
    gamma: float = 0.99
    lam: float = 0.97
    lr: float = 1e-4
    minibatch: int = 480
    updates: int = 10
    steps: int = 800
    n_envs: int = 12
    update_mode: str = "minibatches"  # "passes": `updates` full passes over the epoch
    normalize_advantages: bool = True
    hidden: tuple = (512, 512)
    head: str = "beta"
    c_vel: float = 0.01
    k_vel: float = 0.95
    c_foot: float = 0.05
    k_foot: float = 0.995
    eval_episodes: int = 0  # deterministic evaluation episodes per epoch (0 = off)

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigurationError("gamma must lie in (0, 1]")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigurationError("lambda must lie in [0, 1]")
        if self.clip <= 0:
            raise ConfigurationError("clip epsilon must be positive")
        if self.update_mode not in UPDATE_MODES:
            raise ConfigurationError(f"update_mode must be one of {UPDATE_MODES}")
        for k in ("minibatch", "updates", "steps", "n_envs"):
            if getattr(self, k) < 1:
                raise ConfigurationError(f"{k} must be >= 1")


@dataclass
class Rollout:
    """Per-environment arrays of shape ``(E, T, ...)``."""

    obs: np.ndarray
    actions: np.ndarray  # head-space samples
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    truncated: np.ndarray
    truncation_values: np.ndarray
    bootstrap: np.ndarray  # (E,) V(s_T) at the epoch cut
    terms: np.ndarray  # (E, T, 4) raw reward terms
    k_vel: np.ndarray  # (E, T)

    @property
    def n_transitions(self) -> int:
        return int(self.rewards.size)


# ---------------------------------------------------------------------------
# policy


class Policy:
    """Actor/critic pair with the environment's fixed observation scaling."""

    def __init__(self, obs_dim: int, action_dim: int, hidden=(512, 512), head: str = "beta",
                 offset=None, scale=None, rng: RngStream | None = None):
        self.head = make_head(head, action_dim)
        self.actor_spec = MlpSpec(obs_dim, self.head.raw_width, tuple(hidden))
        self.critic_spec = MlpSpec(obs_dim, 1, tuple(hidden))
        rng = rng or RngStream(0)
        g = rng.generator
        self.actor = init_params(self.actor_spec, g, final_scale=0.01)
        self.critic = init_params(self.critic_spec, g, final_scale=1.0)
        self.offset = np.zeros(obs_dim) if offset is None else np.asarray(offset, dtype=np.float64)
        self.scale = np.ones(obs_dim) if scale is None else np.asarray(scale, dtype=np.float64)

    def normalize(self, obs):
        return (np.asarray(obs, dtype=np.float64) - self.offset) / self.scale

    def actor_raw(self, obs):
        out, _ = mlp_forward(self.actor_spec, self.actor, self.normalize(obs))
        return out

    def value(self, obs):
        out, _ = mlp_forward(self.critic_spec, self.critic, self.normalize(obs))
        return out[..., 0]

    def act_deterministic(self, obs) -> np.ndarray:
        """Unit action from the distribution mode."""
        return self.head.to_unit(self.head.mode(self.actor_raw(obs)))


# ---------------------------------------------------------------------------
# trainer


@dataclass
class EpochStats:
    actor_loss: float = 0.0
    critic_loss: float = 0.0
    clip_fraction: float = 0.0
    adv_mean: float = 0.0
    adv_std: float = 1.0
    samples_used: int = 0


class Trainer:
    """Synchronous PPO over ``E`` environments sharing one episode counter."""

    def __init__(self, env_factory, config: PpoConfig | None = None,
                 weights: RewardWeights | None = None, seed: int = 0):
        self.config = config or PpoConfig()
        self.weights = weights or RewardWeights()
        root = RngStream(seed)
        self.counter = EpisodeCounter()
        c = self.config
        # per-environment streams keyed by index so results do not depend on ordering
        self.envs = [env_factory(i, self.counter, root.child(100 + i)) for i in range(c.n_envs)]
        self.action_rngs = [root.child(200 + i) for i in range(c.n_envs)]
        self.update_rng = root.child(1)
        env0 = self.envs[0]
        offset, scale = env0.observation_normalizer()
        self.policy = Policy(env0.obs_dim, env0.action_dim, c.hidden, c.head, offset, scale,
                             root.child(2))
        self.actor_adam = AdamState.zeros(self.policy.actor_spec.n_params, lr=c.lr)
        self.critic_adam = AdamState.zeros(self.policy.critic_spec.n_params, lr=c.lr)
        self.c_vel = CurriculumCoeff(c.c_vel, c.k_vel)
        self.c_foot = CurriculumCoeff(c.c_foot, c.k_foot)
        self.epoch = 0
        self.eval_env = None
        self.eval_rng = root.child(3)
        self._obs = None
        self._ep_return = np.zeros(c.n_envs)
        self.completed_returns: list[float] = []
        self.falls = 0
        self.faults = 0

    # -- collection ---------------------------------------------------------
    def _ensure_reset(self):
        if self._obs is None:
            self._obs = np.stack([env.reset() for env in self.envs])
            self._ep_return[:] = 0.0

    def collect_epoch(self) -> Rollout:
        c = self.config
        E, T = c.n_envs, c.steps
        self._ensure_reset()
        pol = self.policy
        head = pol.head
        m = self.envs[0].action_dim
        obs_buf = np.empty((E, T, self.envs[0].obs_dim))
        act_buf = np.empty((E, T, m))
        logp = np.empty((E, T))
        rew = np.empty((E, T))
        val = np.empty((E, T))
        done = np.zeros((E, T), dtype=bool)
        trunc = np.zeros((E, T), dtype=bool)
        trunc_v = np.zeros((E, T))
        terms = np.empty((E, T, 4))
        kv = np.empty((E, T))
        self.completed_returns = []
        self.falls = 0
        cv, cf = self.c_vel.value, self.c_foot.value
        for t in range(T):
            obs = self._obs
            raw = pol.actor_raw(obs)
            v = pol.value(obs)
            for e in range(E):
                env = self.envs[e]
                a = head.sample(raw[e], self.action_rngs[e].generator)
                obs_buf[e, t] = obs[e]
                act_buf[e, t] = a
                logp[e, t] = head.log_prob(raw[e], a)
                val[e, t] = v[e]
                res = env.step(head.to_unit(a))
                rt = total_reward(res.reward_inputs, self.weights, env.alive_thresholds, cv, cf)
                rew[e, t] = rt.total
                terms[e, t] = (rt.vel, rt.reg, rt.alive, rt.foot)
                kv[e, t] = rt.k_vel
                self._ep_return[e] += rt.total
                if res.info.get("fault"):
                    self.faults += 1
                if res.done or res.truncated:
                    done[e, t] = res.done
                    if res.truncated:
                        trunc[e, t] = True
                        trunc_v[e, t] = float(pol.value(res.observation))
                    if res.done:
                        self.falls += 1
                    self.completed_returns.append(float(self._ep_return[e]))
                    self._ep_return[e] = 0.0
                    self._obs[e] = env.reset()
                else:
                    self._obs[e] = res.observation
            if not np.all(np.isfinite(rew[:, t])):
                raise TrainingDivergence(f"non-finite reward at step {t}")
        bootstrap = pol.value(self._obs)
        return Rollout(obs_buf, act_buf, logp, rew, val, done, trunc, trunc_v, bootstrap,
                       terms, kv)

    # -- update --------------------------------------------------------------
    def advantages(self, ro: Rollout) -> tuple[np.ndarray, np.ndarray]:
        c = self.config
        adv = np.empty_like(ro.rewards)
        tgt = np.empty_like(ro.rewards)
        for e in range(ro.rewards.shape[0]):
            b = compute_gae(ro.rewards[e], ro.values[e], ro.dones[e], float(ro.bootstrap[e]),
                            c.gamma, c.lam, ro.truncated[e], ro.truncation_values[e])
            adv[e], tgt[e] = b.advantages, b.targets
        return adv.ravel(), tgt.ravel()

    def _minibatches(self, n: int):
        c = self.config
        if c.update_mode == "passes":
            for _ in range(c.updates):
                perm = self.update_rng.permutation(n)
                for s in range(0, n, c.minibatch):
                    yield perm[s:s + c.minibatch]
            return
        perm = self.update_rng.permutation(n)
        pos = 0
        for _ in range(c.updates):
            if pos + c.minibatch > n:
                perm = self.update_rng.permutation(n)
                pos = 0
            yield perm[pos:pos + c.minibatch]
            pos += c.minibatch

    def update_networks(self, ro: Rollout) -> EpochStats:
        c = self.config
        pol = self.policy
        adv, targets = self.advantages(ro)
        stats = EpochStats()
        if c.normalize_advantages:
            adv, stats.adv_mean, stats.adv_std = normalize_advantages(adv)
        obs = pol.normalize(ro.obs.reshape(-1, ro.obs.shape[-1]))
        acts = ro.actions.reshape(-1, ro.actions.shape[-1])
        logp_old = ro.log_probs.ravel()
        a_losses, c_losses, clips = [], [], []
        for idx in self._minibatches(adv.size):
            x = obs[idx]
            raw, tape = mlp_forward(pol.actor_spec, pol.actor, x)
            logp_new = pol.head.log_prob(raw, acts[idx])
            loss, g_logp, clip_frac = ppo_actor_loss(logp_new, logp_old[idx], adv[idx], c.clip)
            g_raw = pol.head.log_prob_grad(raw, acts[idx]) * g_logp[:, None]
            grad = mlp_backward(pol.actor_spec, pol.actor, tape, g_raw)
            new, self.actor_adam = adam_step(self.actor_adam, pol.actor.flat, grad)
            vpred, vtape = mlp_forward(pol.critic_spec, pol.critic, x)
            closs, g_v = critic_loss(vpred[:, 0], targets[idx])
            cgrad = mlp_backward(pol.critic_spec, pol.critic, vtape, g_v[:, None])
            cnew, self.critic_adam = adam_step(self.critic_adam, pol.critic.flat, cgrad)
            if not (np.all(np.isfinite(new)) and np.all(np.isfinite(cnew))):
                raise TrainingDivergence("non-finite parameters after update")
            pol.actor.set_flat(new)
            pol.critic.set_flat(cnew)
            a_losses.append(loss)
            c_losses.append(closs)
            clips.append(clip_frac)
            stats.samples_used += idx.size
        stats.actor_loss = float(np.mean(a_losses))
        stats.critic_loss = float(np.mean(c_losses))
        stats.clip_fraction = float(np.mean(clips))
        return stats

    # -- evaluation ------------------------------------------------------------
    def evaluate_tracking(self, episodes: int, steps: int = 200) -> float:
        """Mean tracking kernel of the deterministic policy on fresh episodes."""
        if self.eval_env is None:
            self.eval_env = self._make_eval_env()
        env = self.eval_env
        total, n = 0.0, 0
        for _ in range(episodes):
            bounds = bounds_at(env.scheduler, max(self.counter.value - 1, 0))
            v = bounds.lower + self.eval_rng.uniform(0.0, 1.0, 3) * (bounds.upper - bounds.lower)
            obs = env.reset(v_des=v)
            for _ in range(steps):
                res = env.step(self.policy.act_deterministic(obs))
                rt = total_reward(res.reward_inputs, self.weights, env.alive_thresholds, 1.0, 1.0)
                total += rt.k_vel
                n += 1
                obs = res.observation
                if res.done:
                    break
        return total / max(n, 1)

    def _make_eval_env(self):
        factory = getattr(self, "eval_env_factory", None)
        if factory is None:
            raise ConfigurationError("no evaluation environment factory configured")
        return factory()

    # -- epoch ---------------------------------------------------------------
    def train_epoch(self) -> dict:
        ro = self.collect_epoch()
        stats = self.update_networks(ro)
        c = self.config
        if self.completed_returns:
            mean_return = float(np.mean(self.completed_returns))
        else:
            mean_return = float(ro.rewards.sum(axis=1).mean())
        bounds = bounds_at(self.envs[0].scheduler, max(self.counter.value - 1, 0))
        eval_k = self.evaluate_tracking(c.eval_episodes) if c.eval_episodes > 0 else float("nan")
        record = {
            "epoch": self.epoch,
            "mean_return": mean_return,
            "r_vel_sum": float(ro.terms[..., 0].sum()),
            "r_reg_sum": float(ro.terms[..., 1].sum()),
            "r_alive_sum": float(ro.terms[..., 2].sum()),
            "r_foot_sum": float(ro.terms[..., 3].sum()),
            "actor_loss": stats.actor_loss,
            "critic_loss": stats.critic_loss,
            "clip_fraction": stats.clip_fraction,
            "C_v": self.c_vel.value,
            "C_f": self.c_foot.value,
            "bound_lo_x": float(bounds.lower[0]), "bound_hi_x": float(bounds.upper[0]),
            "bound_lo_y": float(bounds.lower[1]), "bound_hi_y": float(bounds.upper[1]),
            "bound_lo_w": float(bounds.lower[2]), "bound_hi_w": float(bounds.upper[2]),
            "k_vel_mean": float(ro.k_vel.mean()),
            "eval_k_vel": eval_k,
            "episodes": self.counter.value,
            "falls": self.falls,
            "cold_reads": sum(e.latency_buffer.cold_reads for e in self.envs
                              if e.latency_buffer is not None),
            "flight_steps": sum(e.flight_count for e in self.envs),
        }
        # coefficients are updated once per epoch after logging the value in use
        self.c_vel = update_curriculum_coeff(self.c_vel)
        self.c_foot = update_curriculum_coeff(self.c_foot)
        self.epoch += 1
        return record

    # -- persistence ---------------------------------------------------------
    def runtime_state(self) -> dict:
        return {
            "envs": [env.get_state() for env in self.envs],
            "action_rngs": [r.get_state() for r in self.action_rngs],
            "update_rng": self.update_rng.get_state(),
            "eval_rng": self.eval_rng.get_state(),
            "obs": None if self._obs is None else self._obs.tolist(),
            "ep_return": self._ep_return.tolist(),
            "counter": self.counter.value,
            "eval_env": None if self.eval_env is None else self.eval_env.get_state(),
        }

    def restore_runtime_state(self, st: dict) -> None:
        for env, s in zip(self.envs, st["envs"]):
            env.set_state(s)
        for r, s in zip(self.action_rngs, st["action_rngs"]):
            r.set_state(s)
        self.update_rng.set_state(st["update_rng"])
        self.eval_rng.set_state(st["eval_rng"])
        self._obs = None if st["obs"] is None else np.array(st["obs"])
        self._ep_return = np.array(st["ep_return"])
        self.counter.value = st["counter"]
        if st.get("eval_env") is not None:
            if self.eval_env is None:
                self.eval_env = self._make_eval_env()
            self.eval_env.set_state(st["eval_env"])


def format_metrics_row(record: dict) -> str:
    cols = METRIC_COLUMNS + EXTRA_COLUMNS
    out = []
    for k in cols:
        v = record[k]
        if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
            out.append(str(int(v)))
        elif isinstance(v, float) and math.isnan(v):
            out.append("nan")
        else:
            out.append(repr(float(v)))
    return ",".join(out)


def metrics_header() -> str:
    return ",".join(METRIC_COLUMNS + EXTRA_COLUMNS)
