"""A small value-based learner over the six discrete actions.

The network keeps the two-body input topology: the lidar block and the
pedestrian history each pass through their own rectified body layer, their
outputs are concatenated with the direct inputs (goal, flag and VIP of every
frame) and a shared trunk feeds an advantage head and a value head,
combined dueling-style into action values. Gradients are written out by hand
in numpy.
"""

from __future__ import annotations

import copy
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from crowdnav.env import Action, CrowdNavEnv, CurriculumState, EnvConfig, curriculum_update, rng_streams
from crowdnav.observation import AgentVariant

logger = logging.getLogger(__name__)

PARAM_ORDER = ("lidar_W", "lidar_b", "ped_W", "ped_b", "trunk_W", "trunk_b", "adv_W", "adv_b", "value_W", "value_b")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class NetworkSpec:
    lidar_dim: int = 40
    n_frames: int = 8
    frame_direct: int = 9
    frame_ped: int = 49
    lidar_hidden: int = 64
    ped_hidden: int = 128
    trunk_hidden: int = 128
    n_actions: int = len(Action)

    @property
    def ped_dim(self) -> int:
        return self.n_frames * self.frame_ped

    @property
    def direct_dim(self) -> int:
        return self.n_frames * self.frame_direct

    @property
    def obs_dim(self) -> int:
        return self.lidar_dim + self.ped_dim + self.direct_dim

    def indices(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(lidar, ped, direct) column indices: lidar first, then frames of direct + ped."""
        frame = self.frame_direct + self.frame_ped
        starts = self.lidar_dim + frame * np.arange(self.n_frames)
        direct = (starts[:, None] + np.arange(self.frame_direct)).ravel()
        ped = (starts[:, None] + self.frame_direct + np.arange(self.frame_ped)).ravel()
        return np.arange(self.lidar_dim), ped, direct

    def shapes(self) -> dict:
        trunk_in = self.lidar_hidden + self.ped_hidden + self.direct_dim
        return {
            "lidar_W": (self.lidar_hidden, self.lidar_dim),
            "lidar_b": (self.lidar_hidden,),
            "ped_W": (self.ped_hidden, self.ped_dim),
            "ped_b": (self.ped_hidden,),
            "trunk_W": (self.trunk_hidden, trunk_in),
            "trunk_b": (self.trunk_hidden,),
            "adv_W": (self.n_actions, self.trunk_hidden),
            "adv_b": (self.n_actions,),
            "value_W": (1, self.trunk_hidden),
            "value_b": (1,),
        }

    def parameter_count(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes().values())


def shape_audit(spec: NetworkSpec, params: dict) -> None:
    """Raise ``ValueError`` unless ``params`` matches ``spec`` tensor for tensor."""
    shapes = spec.shapes()
    if set(params) != set(shapes):
        raise ValueError(f"parameter names {sorted(params)} != {sorted(shapes)}")
    for name, shape in shapes.items():
        if tuple(params[name].shape) != shape:
            raise ValueError(f"{name} has shape {params[name].shape}, expected {shape}")


def init_params(spec: NetworkSpec, rng, dtype=np.float64) -> dict:
    """Uniform fan-in scaled weights, zero biases."""
    params = {}
    for name, shape in spec.shapes().items():
        if name.endswith("_W"):
            bound = 1.0 / math.sqrt(shape[1])
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
        else:
            params[name] = np.zeros(shape, dtype=dtype)
    return params


def zero_params(spec: NetworkSpec) -> dict:
    return {name: np.zeros(shape) for name, shape in spec.shapes().items()}


def _relu(x):
    return np.maximum(x, 0.0)


def forward_batch(spec: NetworkSpec, params: dict, X: np.ndarray):
    """Action values ``(B, A)``, state values ``(B,)`` and the backward cache."""
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[1] != spec.obs_dim:
        raise ValueError(f"expected observations of shape (B, {spec.obs_dim}), got {X.shape}")
    li, pi, di = spec.indices()
    xl, xp, xd = X[:, li], X[:, pi], X[:, di]
    zl = xl @ params["lidar_W"].T + params["lidar_b"]
    zp = xp @ params["ped_W"].T + params["ped_b"]
    hl, hp = _relu(zl), _relu(zp)
    z = np.concatenate([hl, hp, xd], axis=1)
    zt = z @ params["trunk_W"].T + params["trunk_b"]
    h = _relu(zt)
    adv = h @ params["adv_W"].T + params["adv_b"]
    value = h @ params["value_W"].T + params["value_b"]
    q = value + adv - adv.mean(axis=1, keepdims=True)
    cache = (xl, xp, zl, zp, z, zt, h)
    return q, value[:, 0], cache


def forward(spec: NetworkSpec, params: dict, obs: np.ndarray):
    """Action values (``n_actions``) and the scalar state value for one observation."""
    obs = np.asarray(obs, dtype=float)
    if obs.shape != (spec.obs_dim,):
        raise ValueError(f"observation has shape {obs.shape}, expected ({spec.obs_dim},)")
    q, v, _ = forward_batch(spec, params, obs[None, :])
    return q[0], float(v[0])


def backward(spec: NetworkSpec, params: dict, cache, dq: np.ndarray) -> dict:
    """Parameter gradients given ``dL/dq`` of shape ``(B, A)``."""
    xl, xp, zl, zp, z, zt, h = cache
    dvalue = dq.sum(axis=1, keepdims=True)
    dadv = dq - dq.mean(axis=1, keepdims=True)
    grads = {
        "adv_W": dadv.T @ h,
        "adv_b": dadv.sum(axis=0),
        "value_W": dvalue.T @ h,
        "value_b": dvalue.sum(axis=0),
    }
    dh = dadv @ params["adv_W"] + dvalue @ params["value_W"]
    dzt = dh * (zt > 0)
    grads["trunk_W"] = dzt.T @ z
    grads["trunk_b"] = dzt.sum(axis=0)
    dz = dzt @ params["trunk_W"]
    nl = spec.lidar_hidden
    dzl = dz[:, :nl] * (zl > 0)
    dzp = dz[:, nl : nl + spec.ped_hidden] * (zp > 0)
    grads["lidar_W"] = dzl.T @ xl
    grads["lidar_b"] = dzl.sum(axis=0)
    grads["ped_W"] = dzp.T @ xp
    grads["ped_b"] = dzp.sum(axis=0)
    return grads


def act(spec: NetworkSpec, params: dict, obs: np.ndarray, epsilon: float, rng) -> Action:
    """Epsilon-greedy action; ties go to the lowest action index."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must be in [0, 1]")
    if epsilon > 0.0 and rng.random() < epsilon:
        return Action(int(rng.integers(spec.n_actions)))
    q, _, _ = forward_batch(spec, params, np.asarray(obs, dtype=params["adv_W"].dtype)[None, :])
    return Action(int(np.argmax(q[0])))  # argmax returns the first maximum


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    learning_rate: float = 5e-4
    gamma: float = 0.99
    replay_capacity: int = 50_000
    batch_size: int = 64
    eps_start: float = 1.0
    eps_end: float = 0.02
    eps_decay_episodes: int = 300
    target_update: int = 500
    max_episodes: int = 2000
    learning_starts: int = 1000
    train_every: int = 2
    grad_clip: float = 10.0
    double_q: bool = True
    success_window: int = 100
    stop_at_success: Optional[float] = None  # end early once the windowed rate reaches this
    precision: str = "float32"  # training arithmetic; gradient checks use float64
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        for name in ("eps_start", "eps_end"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.precision not in ("float32", "float64"):
            raise ValueError("precision must be float32 or float64")
        if self.batch_size < 1 or self.replay_capacity < self.batch_size:
            raise ValueError("replay capacity must hold at least one batch")

    def epsilon(self, episode: int) -> float:
        frac = min(1.0, episode / max(self.eps_decay_episodes, 1))
        return self.eps_start + frac * (self.eps_end - self.eps_start)


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()})


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray

    def __len__(self):
        return len(self.actions)


def td_targets(spec, params, target_params, batch: Batch, cfg: TrainConfig) -> np.ndarray:
    q_next_target, _, _ = forward_batch(spec, target_params, batch.next_obs)
    if cfg.double_q:
        q_next_online, _, _ = forward_batch(spec, params, batch.next_obs)
        best = np.argmax(q_next_online, axis=1)
    else:
        best = np.argmax(q_next_target, axis=1)
    bootstrap = q_next_target[np.arange(len(batch)), best]
    return batch.rewards + cfg.gamma * (1.0 - batch.dones) * bootstrap


def td_loss_and_grads(spec, params, batch: Batch, targets: np.ndarray):
    """Mean squared TD error against fixed ``targets`` and its parameter gradients."""
    q, _, cache = forward_batch(spec, params, batch.obs)
    rows = np.arange(len(batch))
    delta = q[rows, batch.actions] - np.asarray(targets, dtype=q.dtype)
    loss = float(np.mean(delta**2))
    if not math.isfinite(loss):
        raise TrainingError(f"non-finite TD loss {loss!r} (max |target| {np.nanmax(np.abs(targets))!r})")
    dq = np.zeros_like(q)
    dq[rows, batch.actions] = 2.0 * delta / len(batch)
    return loss, backward(spec, params, cache, dq)


def train_step(
    spec: NetworkSpec,
    params: dict,
    batch: Batch,
    cfg: TrainConfig,
    target_params: Optional[dict] = None,
    opt: Optional[AdamState] = None,
):
    """One Adam step on the mean squared one-step TD error.

    Returns ``(new_params, loss, opt)``; ``target_params`` defaults to
    ``params`` itself (no separate target network).
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    target_params = params if target_params is None else target_params
    opt = AdamState.zeros_like(params) if opt is None else opt
    targets = td_targets(spec, params, target_params, batch, cfg)
    loss, grads = td_loss_and_grads(spec, params, batch, targets)
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    scale = cfg.grad_clip / norm if cfg.grad_clip and norm > cfg.grad_clip else 1.0
    b1, b2 = cfg.adam_betas
    opt.t += 1
    new = {}
    for k, p in params.items():
        g = grads[k] * scale
        opt.m[k] = b1 * opt.m[k] + (1 - b1) * g
        opt.v[k] = b2 * opt.v[k] + (1 - b2) * g * g
        m_hat = opt.m[k] / (1 - b1**opt.t)
        v_hat = opt.v[k] / (1 - b2**opt.t)
        new[k] = p - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    return new, loss, opt


class ReplayBuffer:
    def __init__(self, capacity: int, obs_dim: int):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim), dtype=np.float32)
        self.next_obs = np.zeros((capacity, obs_dim), dtype=np.float32)
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity)
        self.size = 0
        self._i = 0

    def add(self, obs, action, reward, next_obs, done):
        i = self._i
        self.obs[i] = obs
        self.next_obs[i] = next_obs
        self.actions[i] = int(action)
        self.rewards[i] = reward
        self.dones[i] = float(done)
        self._i = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, n: int, rng, dtype=np.float64) -> Batch:
        idx = rng.integers(0, self.size, size=n)
        return Batch(
            self.obs[idx].astype(dtype, copy=False),
            self.actions[idx],
            self.rewards[idx].astype(dtype),
            self.next_obs[idx].astype(dtype, copy=False),
            self.dones[idx].astype(dtype),
        )


@dataclass
class TrainResult:
    params: dict
    best_params: dict
    best_success_rate: float
    curve: list = field(default_factory=list)  # dicts: episode, reward, success, obstacles, epsilon


def train(
    scenario_factory: Callable,
    spec: NetworkSpec,
    cfg: TrainConfig,
    seed: int,
    env_config: EnvConfig = EnvConfig(),
    curriculum: Optional[CurriculumState] = None,
    params: Optional[dict] = None,
) -> TrainResult:
    """Train with epsilon-greedy exploration and a replay buffer.

    ``scenario_factory(n_obstacles, seed)`` builds each episode's scenario;
    the obstacle count comes from ``curriculum``, updated between episodes.
    """
    streams = rng_streams(seed)
    rng = streams["learner"]
    episode_seeds = streams["scenario"].integers(0, 2**31 - 1, size=cfg.max_episodes)
    dtype = np.dtype(cfg.precision)
    if params is None:
        params = init_params(spec, rng, dtype=dtype)
    else:
        params = {k: np.array(v, dtype=dtype) for k, v in params.items()}
    target = copy.deepcopy(params)
    opt = AdamState.zeros_like(params)
    buffer = ReplayBuffer(cfg.replay_capacity, spec.obs_dim)
    curriculum = CurriculumState() if curriculum is None else curriculum
    env = CrowdNavEnv(env_config)

    curve, successes = [], []
    best_rate, best_params = -1.0, copy.deepcopy(params)
    steps = updates = 0
    for episode in range(cfg.max_episodes):
        eps = cfg.epsilon(episode)
        n_obs = curriculum.current_obstacle_count
        obs = env.reset(scenario_factory(n_obs, int(episode_seeds[episode])))
        ret, done = 0.0, False
        while not done:
            a = act(spec, params, obs, eps, rng)
            res = env.step(a)
            # a timeout is not terminal for the value target
            buffer.add(obs, a, res.reward, res.observation, res.done_reason in ("success", "collision"))
            ret += res.reward
            obs, done = res.observation, res.done
            steps += 1
            if buffer.size >= max(cfg.learning_starts, cfg.batch_size) and steps % cfg.train_every == 0:
                params, _, opt = train_step(spec, params, buffer.sample(cfg.batch_size, rng, dtype), cfg, target, opt)
                updates += 1
                if updates % cfg.target_update == 0:
                    target = copy.deepcopy(params)
        success = res.done_reason == "success"
        successes.append(success)
        curve.append(
            {"episode": episode, "reward": ret, "success": int(success), "obstacles": n_obs, "epsilon": eps}
        )
        curriculum = curriculum_update(curriculum, ret)
        window = successes[-cfg.success_window :]
        if len(window) == cfg.success_window:
            rate = sum(window) / len(window)
            if rate > best_rate:
                best_rate, best_params = rate, copy.deepcopy(params)
            if cfg.stop_at_success is not None and rate >= cfg.stop_at_success:
                logger.info("episode %d success-rate %.2f reached target, stopping", episode, rate)
                break
        if episode % 50 == 0:
            logger.info("episode %d return %.3f success-rate %.2f eps %.3f", episode, ret, np.mean(window), eps)
    if best_rate < 0:
        best_rate, best_params = float(np.mean(successes)) if successes else 0.0, copy.deepcopy(params)
    return TrainResult(params, best_params, best_rate, curve)


# ---------------------------------------------------------------------------
# checkpoints

MAGIC = b"CNAVCKPT"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, spec: NetworkSpec, params: dict, variant: AgentVariant = AgentVariant.COMPLETE) -> None:
    """Header (names, shapes, byte offsets) followed by little-endian float32 tensors."""
    shape_audit(spec, params)
    tensors, blobs, offset = [], [], 0
    for name in PARAM_ORDER:
        data = np.ascontiguousarray(params[name], dtype="<f4").tobytes()
        tensors.append({"name": name, "shape": list(params[name].shape), "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = json.dumps(
        {"spec": asdict(spec), "variant": AgentVariant(variant).value, "dtype": "<f4", "tensors": tensors}
    ).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path):
    """Return ``(spec, params, variant)``; parameters come back as float64."""
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<II", raw, len(MAGIC))
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    start = len(MAGIC) + 8
    header = json.loads(raw[start : start + hlen])
    data = raw[start + hlen :]
    spec = NetworkSpec(**header["spec"])
    params = {}
    for t in header["tensors"]:
        arr = np.frombuffer(data, dtype="<f4", count=t["nbytes"] // 4, offset=t["offset"])
        params[t["name"]] = arr.reshape(t["shape"]).astype(np.float64)
    shape_audit(spec, params)
    return spec, params, AgentVariant(header["variant"])


# ---------------------------------------------------------------------------
# estimator facade


class DQNAgent(BaseEstimator):
    """Estimator-style wrapper: ``fit`` trains, ``predict`` picks greedy actions.

    ``fit`` takes a scenario factory ``(n_obstacles, seed) -> Scenario``
    instead of a design matrix; ``predict``/``decision_function`` take a
    matrix of observations, one per row.
    """

    def __init__(
        self,
        lidar_hidden=64,
        ped_hidden=128,
        trunk_hidden=128,
        learning_rate=5e-4,
        gamma=0.99,
        replay_capacity=50_000,
        batch_size=64,
        eps_start=1.0,
        eps_end=0.02,
        eps_decay_episodes=300,
        target_update=500,
        max_episodes=2000,
        learning_starts=1000,
        train_every=2,
        variant="complete",
        random_state=0,
    ):
        self.lidar_hidden = lidar_hidden
        self.ped_hidden = ped_hidden
        self.trunk_hidden = trunk_hidden
        self.learning_rate = learning_rate
        self.gamma = gamma
        self.replay_capacity = replay_capacity
        self.batch_size = batch_size
        self.eps_start = eps_start
        self.eps_end = eps_end
        self.eps_decay_episodes = eps_decay_episodes
        self.target_update = target_update
        self.max_episodes = max_episodes
        self.learning_starts = learning_starts
        self.train_every = train_every
        self.variant = variant
        self.random_state = random_state

    def _spec(self) -> NetworkSpec:
        return NetworkSpec(lidar_hidden=self.lidar_hidden, ped_hidden=self.ped_hidden, trunk_hidden=self.trunk_hidden)

    def _train_config(self) -> TrainConfig:
        names = TrainConfig.__dataclass_fields__
        return TrainConfig(**{k: v for k, v in self.get_params().items() if k in names})

    def fit(self, scenario_factory, env_config: Optional[EnvConfig] = None, curriculum=None):
        env_config = env_config or EnvConfig(variant=AgentVariant(self.variant))
        self.spec_ = self._spec()
        result = train(scenario_factory, self.spec_, self._train_config(), self.random_state, env_config, curriculum)
        self.params_ = result.best_params
        self.last_params_ = result.params
        self.curve_ = result.curve
        self.best_success_rate_ = result.best_success_rate
        self.n_features_in_ = self.spec_.obs_dim
        return self

    def decision_function(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=float)
        q, _, _ = forward_batch(self.spec_, self.params_, X)
        return q

    def predict(self, X):
        return np.argmax(self.decision_function(X), axis=1)

    def save(self, path) -> None:
        check_is_fitted(self, "params_")
        save_checkpoint(path, self.spec_, self.params_, AgentVariant(self.variant))

    @classmethod
    def load(cls, path) -> "DQNAgent":
        spec, params, variant = load_checkpoint(path)
        agent = cls(
            lidar_hidden=spec.lidar_hidden, ped_hidden=spec.ped_hidden, trunk_hidden=spec.trunk_hidden,
            variant=variant.value,
        )
        agent.spec_, agent.params_, agent.n_features_in_ = spec, params, spec.obs_dim
        return agent
