"""PPO with GAE and a clipped surrogate, parameterized by exploration
strategy (diagonal / gsde / lattice).

The trainer exposes a light estimator-style surface: fit / predict /
get_params, plus checkpoint save and load.
"""

import json
import time
from dataclasses import asdict, dataclass

import numpy as np

from .buffer import RolloutBuffer, compute_gae
from .envs import EpisodeMetrics, make_env
from .errors import CheckpointCorrupt, NonFiniteLoss
from .exploration import LatticeConfig, resample_perturbations
from .policy import (
    GradientTape,
    Mlp,
    MlpPolicy,
    dist_internals,
    entropy_and_grad,
    entropy_batch,
    log_prob,
    log_prob_and_grad,
)

CHECKPOINT_SCHEMA = 1


@dataclass
class PpoConfig:
    """Optimization hyperparameters. gradient_steps is the rollout length per
    environment between updates."""

    learning_rate: float = 2.5e-5
    batch_size: int = 32
    gradient_steps: int = 128
    n_epochs: int = 10
    gamma: float = 0.99
    gae_lambda: float = 0.9
    clip_range: float = 0.3
    entropy_coef: float = 3.6e-6
    value_coef: float = 0.84
    max_grad_norm: float = 0.7
    n_envs: int = 16


class Adam:
    """Adaptive first-order optimizer over a named parameter dict."""

    def __init__(self, params: dict[str, np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray],
             grads: dict[str, np.ndarray], skip: set[str] = frozenset()):
        if self.lr == 0.0:
            return
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in params.items():
            if k in skip:
                continue
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            m_hat = self.m[k] / bc1
            v_hat = self.v[k] / bc2
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class PPOTrainer:
    """On-policy trainer binding envs, networks and the exploration model."""

    def __init__(self, env_name: str, env_kwargs: dict | None = None,
                 strategy: str = "lattice",
                 lattice_cfg: LatticeConfig | None = None,
                 ppo_cfg: PpoConfig | None = None,
                 hiddens=(256, 256), critic_hiddens=(256, 256),
                 activation: str = "relu", seed: int = 0):
        self.env_name = env_name
        self.env_kwargs = dict(env_kwargs or {})
        self.strategy = strategy
        self.cfg = lattice_cfg if lattice_cfg is not None else LatticeConfig()
        self.ppo = ppo_cfg if ppo_cfg is not None else PpoConfig()
        self.hiddens = tuple(hiddens)
        self.critic_hiddens = tuple(critic_hiddens)
        self.activation = activation
        self.seed = int(seed)

        ss = np.random.SeedSequence(self.seed)
        init_ss, shuffle_ss, *env_ss = ss.spawn(2 + self.ppo.n_envs)
        init_rng = np.random.default_rng(init_ss)
        self.shuffle_rng = np.random.default_rng(shuffle_ss)
        self.env_rngs = [np.random.default_rng(s) for s in env_ss]

        probe = make_env(env_name, seed=0, **self.env_kwargs)
        self.obs_dim = probe.obs_dim
        self.action_dim = probe.action_dim

        self.policy = MlpPolicy(self.obs_dim, self.action_dim, self.cfg,
                                strategy=strategy, hiddens=self.hiddens,
                                activation=activation, rng=init_rng)
        self.value_net = Mlp(init_rng, self.obs_dim, self.critic_hiddens, 1,
                             activation, prefix="v.")
        self.params = self.policy.params
        self.params.update(self.value_net.params)
        self.value_net.params = self.params
        self.policy.params = self.params
        self.policy.net.params = self.params

        self.optimizer = Adam(self.params, self.ppo.learning_rate)
        self.skip = {k for k, flag in self.policy.learnable_noise.items()
                     if not flag}

        self.envs = [
            make_env(env_name,
                     seed=int(np.random.default_rng(s).integers(2 ** 31)),
                     **self.env_kwargs)
            for s in ss.spawn(self.ppo.n_envs)
        ]
        self._obs = np.stack([env.reset() for env in self.envs])
        self._perturbations = [None] * self.ppo.n_envs
        self._ep_step = np.zeros(self.ppo.n_envs, dtype=int)
        self._ep_id = np.arange(self.ppo.n_envs)
        self._next_ep_id = self.ppo.n_envs
        self._ep_rewards = [[] for _ in range(self.ppo.n_envs)]
        self._ep_solved = [[] for _ in range(self.ppo.n_envs)]
        self._ep_actions = [[] for _ in range(self.ppo.n_envs)]
        self.recent_episodes: list[EpisodeMetrics] = []
        self.env_steps = 0
        self.updates = 0

    # ------------------------------------------------------------------ API

    def get_params(self) -> dict:
        """Estimator-style hyperparameter echo."""
        return {
            "env_name": self.env_name,
            "env_kwargs": dict(self.env_kwargs),
            "strategy": self.strategy,
            "lattice": asdict(self.cfg),
            "ppo": asdict(self.ppo),
            "hiddens": list(self.hiddens),
            "critic_hiddens": list(self.critic_hiddens),
            "activation": self.activation,
            "seed": self.seed,
        }

    def predict(self, obs: np.ndarray, deterministic: bool = True,
                rng: np.random.Generator | None = None) -> np.ndarray:
        """Mean action, or a draw from the analytic action distribution."""
        obs = np.atleast_2d(np.asarray(obs, dtype=float))
        it = dist_internals(self.policy, obs, self.cfg)
        if deterministic:
            return it.mean
        if rng is None:
            raise ValueError("stochastic predict needs an rng")
        if it.kind == "diagonal":
            return it.mean + rng.standard_normal(it.mean.shape) * it.sigma
        z = rng.standard_normal(it.mean.shape)
        return it.mean + np.einsum("bij,bj->bi", it.chol, z)

    # ------------------------------------------------------- rollout phase

    def _sample_actions(self, it) -> np.ndarray:
        """Strategy-specific sampling path; advances per-env noise state."""
        n = self.ppo.n_envs
        actions = np.empty((n, self.action_dim))
        if self.strategy == "diagonal":
            sigma = np.exp(self.params["log_sigma"])
            for i in range(n):
                actions[i] = it.mean[i] + \
                    self.env_rngs[i].standard_normal(self.action_dim) * sigma
            return actions
        period = self.cfg.period_steps
        std = self.policy.noise_std
        alpha = self.policy.alpha
        W = self.policy.W
        for i in range(n):
            due = self._perturbations[i] is None or (
                period is not None and self._ep_step[i] % period == 0)
            if due:
                self._perturbations[i] = resample_perturbations(
                    std, self.cfg, self.action_dim, self.env_rngs[i])
            else:
                self._perturbations[i].age += 1
            p = self._perturbations[i]
            x_i = it.x[i]
            noise = p.P_a @ x_i + alpha * (W @ (p.P_x @ x_i))
            actions[i] = it.mean[i] + noise
        return actions

    def collect_rollout(self, n_steps: int) -> RolloutBuffer:
        buf = RolloutBuffer.allocate(n_steps, self.ppo.n_envs, self.obs_dim,
                                     self.policy.n_latent, self.action_dim)
        self.recent_episodes = []
        for t in range(n_steps):
            obs = self._obs
            it = dist_internals(self.policy, obs, self.cfg)
            actions = self._sample_actions(it)
            logp = log_prob(self.policy, obs, actions, self.cfg, internals=it)
            _, values = self.value_net.forward(obs)
            buf.obs[t] = obs
            buf.latents[t] = it.x
            buf.actions[t] = actions
            buf.log_probs[t] = logp
            buf.values[t] = values[:, 0]
            buf.episode_ids[t] = self._ep_id
            next_obs = np.empty_like(self._obs)
            for i, env in enumerate(self.envs):
                o, r, done, info = env.step(actions[i])
                buf.rewards[t, i] = r
                buf.dones[t, i] = done
                self._ep_rewards[i].append(r)
                self._ep_solved[i].append(info["solved"])
                self._ep_actions[i].append(np.clip(actions[i], 0.0, 1.0))
                if done:
                    self.recent_episodes.append(EpisodeMetrics.from_logs(
                        self._ep_rewards[i], self._ep_solved[i],
                        self._ep_actions[i], env.max_steps))
                    self._ep_rewards[i] = []
                    self._ep_solved[i] = []
                    self._ep_actions[i] = []
                    o = env.reset()
                    self._ep_step[i] = 0
                    self._perturbations[i] = None
                    self._ep_id[i] = self._next_ep_id
                    self._next_ep_id += 1
                else:
                    self._ep_step[i] += 1
                next_obs[i] = o
            self._obs = next_obs
            self.env_steps += self.ppo.n_envs
        return buf

    # -------------------------------------------------------- update phase

    def ppo_update(self, buffer: RolloutBuffer) -> dict:
        _, last_values = self.value_net.forward(self._obs)
        advantages, returns = compute_gae(buffer, last_values[:, 0],
                                          self.ppo.gamma, self.ppo.gae_lambda)
        obs = buffer.flat(buffer.obs)
        actions = buffer.flat(buffer.actions)
        old_logp = buffer.flat(buffer.log_probs)
        adv_flat = buffer.flat(advantages)
        ret_flat = buffer.flat(returns)
        n = obs.shape[0]
        tape = GradientTape(self.params)
        stats = {"pg_loss": 0.0, "value_loss": 0.0, "entropy": 0.0,
                 "approx_kl": 0.0, "clip_fraction": 0.0, "grad_norm": 0.0}
        n_batches = 0
        eps = self.ppo.clip_range
        for _ in range(self.ppo.n_epochs):
            perm = self.shuffle_rng.permutation(n)
            for start in range(0, n, self.ppo.batch_size):
                idx = perm[start:start + self.ppo.batch_size]
                b = len(idx)
                adv = adv_flat[idx]
                adv = (adv - adv.mean()) / (adv.std() + 1e-8)
                tape.zero_()
                it = dist_internals(self.policy, obs[idx], self.cfg,
                                    need_cache=True)
                # policy gradient through the clipped surrogate
                probe = log_prob(self.policy, obs[idx], actions[idx],
                                 self.cfg, internals=it)
                ratio = np.exp(probe - old_logp[idx])
                inactive = ((adv > 0) & (ratio > 1.0 + eps)) | \
                           ((adv < 0) & (ratio < 1.0 - eps))
                w_pg = np.where(inactive, 0.0, -(adv * ratio) / b)
                log_prob_and_grad(self.policy, obs[idx], actions[idx],
                                  self.cfg, tape, weights=w_pg, internals=it)
                # entropy bonus
                w_ent = np.full(b, -self.ppo.entropy_coef / b)
                ent = entropy_and_grad(self.policy, self.cfg, tape, it,
                                       weights=w_ent)
                # value loss
                _, v_out, v_cache = self.value_net.forward(obs[idx],
                                                           need_cache=True)
                v = v_out[:, 0]
                d_v = (self.ppo.value_coef * 2.0 * (v - ret_flat[idx]) / b)
                self.value_net.backward(v_cache, d_v[:, None], tape)

                surr = np.minimum(ratio * adv,
                                  np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv)
                pg_loss = -float(np.mean(surr))
                value_loss = self.ppo.value_coef * float(
                    np.mean((v - ret_flat[idx]) ** 2))
                total = pg_loss + value_loss \
                    - self.ppo.entropy_coef * float(np.mean(ent))
                if not np.isfinite(total) or not tape.all_finite():
                    raise NonFiniteLoss(
                        f"non-finite loss in minibatch starting at {start}")
                norm = tape.clip_global_norm(self.ppo.max_grad_norm)
                self.optimizer.step(self.params, tape.grads, skip=self.skip)

                with np.errstate(over="ignore"):
                    log_ratio = probe - old_logp[idx]
                stats["pg_loss"] += pg_loss
                stats["value_loss"] += value_loss
                stats["entropy"] += float(np.mean(ent))
                stats["approx_kl"] += float(np.mean(
                    np.expm1(log_ratio) - log_ratio))
                stats["clip_fraction"] += float(
                    np.mean(np.abs(ratio - 1.0) > eps))
                stats["grad_norm"] += norm
                n_batches += 1
        for k in stats:
            stats[k] /= max(n_batches, 1)
        self.updates += 1
        return stats

    # ------------------------------------------------------- training loop

    def fit(self, total_steps: int, on_update=None,
            target_solved: float | None = None,
            checkpoint_path_fn=None, checkpoint_every: int = 0):
        """Run PPO until total_steps env steps (or early target)."""
        start = time.monotonic()
        window: list[EpisodeMetrics] = []
        while self.env_steps < total_steps:
            buf = self.collect_rollout(self.ppo.gradient_steps)
            stats = self.ppo_update(buf)
            window.extend(self.recent_episodes)
            window = window[-64:]
            row = {
                "update": self.updates,
                "env_steps": self.env_steps,
                "mean_episode_reward": float(np.mean(
                    [e.cumulative_reward for e in window])) if window else 0.0,
                "solved_fraction": float(np.mean(
                    [e.solved_fraction for e in window])) if window else 0.0,
                "energy": float(np.mean(
                    [e.energy for e in window])) if window else 0.0,
                "mean_entropy": stats["entropy"],
                "wall_time_s": time.monotonic() - start,
            }
            if on_update is not None:
                on_update(row, stats)
            if checkpoint_every and checkpoint_path_fn is not None \
                    and self.updates % checkpoint_every == 0:
                save_checkpoint(checkpoint_path_fn(self.updates), self)
            if target_solved is not None and window \
                    and row["solved_fraction"] >= target_solved:
                break
        return self


def evaluate_policy(trainer: PPOTrainer, n_episodes: int = 100,
                    deterministic: bool = False, seed: int = 0) -> dict:
    """Roll out fresh episodes and report mean +/- sem of the episode
    metrics, plus the per-episode records used to compute them.

    With deterministic=True all noise is disabled and the mean action is
    taken at every step.
    """
    ss = np.random.SeedSequence(seed)
    env_ss, noise_ss = ss.spawn(2)
    env = make_env(trainer.env_name,
                   seed=int(np.random.default_rng(env_ss).integers(2 ** 31)),
                   **trainer.env_kwargs)
    rng = np.random.default_rng(noise_ss)
    episodes = []
    for _ in range(n_episodes):
        obs = env.reset()
        rewards, solved, actions = [], [], []
        done = False
        perturbation = None
        ep_step = 0
        period = trainer.cfg.period_steps
        while not done:
            if deterministic:
                action = trainer.predict(obs, deterministic=True)[0]
            elif trainer.strategy == "diagonal":
                sigma = np.exp(trainer.params["log_sigma"])
                action = trainer.predict(obs, deterministic=True)[0] \
                    + rng.standard_normal(trainer.action_dim) * sigma
            else:
                due = perturbation is None or (
                    period is not None and ep_step % period == 0)
                if due:
                    perturbation = resample_perturbations(
                        trainer.policy.noise_std, trainer.cfg,
                        trainer.action_dim, rng)
                x, mean = trainer.policy.forward(np.atleast_2d(obs))
                noise = perturbation.P_a @ x[0] + trainer.policy.alpha * (
                    trainer.policy.W @ (perturbation.P_x @ x[0]))
                action = mean[0] + noise
            obs, r, done, info = env.step(action)
            rewards.append(r)
            solved.append(info["solved"])
            actions.append(np.clip(action, 0.0, 1.0))
            ep_step += 1
        episodes.append(EpisodeMetrics.from_logs(rewards, solved, actions,
                                                 env.max_steps))

    def agg(values):
        values = np.asarray(values, dtype=float)
        sem = float(values.std(ddof=1) / np.sqrt(len(values))) \
            if len(values) > 1 else 0.0
        return {"mean": float(values.mean()), "sem": sem}

    return {
        "n_episodes": n_episodes,
        "deterministic": deterministic,
        "reward": agg([e.cumulative_reward for e in episodes]),
        "solved_fraction": agg([e.solved_fraction for e in episodes]),
        "energy": agg([e.energy for e in episodes]),
        "per_episode": [
            {"reward": e.cumulative_reward,
             "solved_fraction": e.solved_fraction,
             "energy": e.energy}
            for e in episodes
        ],
    }


# ------------------------------------------------------------- checkpoints

def save_checkpoint(path, trainer: PPOTrainer, config_echo: dict | None = None):
    """JSON-encoded parameter list with a layout header and config echo."""
    payload = {
        "schema_version": CHECKPOINT_SCHEMA,
        "layout": trainer.get_params(),
        "env_steps": trainer.env_steps,
        "updates": trainer.updates,
        "params": {k: v.tolist() for k, v in trainer.params.items()},
    }
    if config_echo is not None:
        payload["config_echo"] = config_echo
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_checkpoint(path) -> PPOTrainer:
    """Rebuild a trainer (policy + value nets + config) from a checkpoint."""
    try:
        with open(path) as fh:
            payload = json.load(fh)
        layout = payload["layout"]
        trainer = PPOTrainer(
            env_name=layout["env_name"],
            env_kwargs=layout["env_kwargs"],
            strategy=layout["strategy"],
            lattice_cfg=LatticeConfig(**layout["lattice"]),
            ppo_cfg=PpoConfig(**layout["ppo"]),
            hiddens=layout["hiddens"],
            critic_hiddens=layout["critic_hiddens"],
            activation=layout["activation"],
            seed=layout["seed"],
        )
        for k, v in payload["params"].items():
            arr = np.asarray(v, dtype=float)
            if arr.shape != trainer.params[k].shape:
                raise CheckpointCorrupt(
                    f"parameter {k} has shape {arr.shape}, expected "
                    f"{trainer.params[k].shape}")
            trainer.params[k][...] = arr
        trainer.env_steps = int(payload.get("env_steps", 0))
        trainer.updates = int(payload.get("updates", 0))
        return trainer
    except CheckpointCorrupt:
        raise
    except (OSError, KeyError, ValueError, TypeError, json.JSONDecodeError) as exc:
        raise CheckpointCorrupt(f"cannot load checkpoint {path}: {exc}") from exc
