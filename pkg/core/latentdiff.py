
"""DDIM diffusion over standardized encoder latents.

Step indices run 0..T; index 0 is the clean latent with alpha_bar = 1.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from core import ndtensor as nd
from core.errors import BadRange, EmptyDataset, ShapeMismatch
from core.ndtensor import ParamStore, Tensor
from utils.helpers import learning_rate
from utils.models import DiffusionConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DiffusionSchedule:
    T: int
    betas: np.ndarray
    alpha_bar: np.ndarray

    def sigma(self, t: int, t_prev: int, eta: float) -> float:
        a_t, a_prev = self.alpha_bar[t], self.alpha_bar[t_prev]
        if t == 0 or a_t >= 1.0:
            return 0.0
        return float(eta * np.sqrt((1.0 - a_prev) / (1.0 - a_t)) * np.sqrt(1.0 - a_t / a_prev))

    def posterior_variance(self, t: int) -> float:
        """Variance of q(h_{t-1} | h_t, h_0)."""
        if t <= 0:
            return 0.0
        return float((1.0 - self.alpha_bar[t - 1]) / (1.0 - self.alpha_bar[t]) * self.betas[t])

    def timesteps(self, num_steps: int) -> List[Tuple[int, int]]:
        """(t, t_prev) pairs of an evenly spaced subsequence from T down to 0."""
        if not 1 <= num_steps <= self.T:
            raise BadRange(f"num_steps must be in [1, {self.T}], got {num_steps}")
        grid = np.unique(np.round(np.linspace(0, self.T, num_steps + 1)).astype(np.int64))[::-1]
        return [(int(t), int(t_prev)) for t, t_prev in zip(grid[:-1], grid[1:])]


def make_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> DiffusionSchedule:
    if T < 2:
        raise BadRange(f"diffusion needs T >= 2, got {T}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise BadRange(f"beta range ({beta_start}, {beta_end}) must satisfy 0 < start <= end < 1")
    betas = np.concatenate([[0.0], np.linspace(beta_start, beta_end, T)])
    return DiffusionSchedule(T=T, betas=betas, alpha_bar=np.cumprod(1.0 - betas))


def q_sample(schedule: DiffusionSchedule, h0: np.ndarray, t, eps: np.ndarray) -> np.ndarray:
    h0 = np.asarray(h0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if h0.shape != eps.shape:
        raise ShapeMismatch(f"latent {h0.shape} and noise {eps.shape} differ")
    a = schedule.alpha_bar[np.asarray(t)]
    if np.ndim(a):
        a = a.reshape(-1, *([1] * (h0.ndim - 1)))
    return np.sqrt(a) * h0 + np.sqrt(1.0 - a) * eps


def ddim_step(
    schedule: DiffusionSchedule,
    h_t: np.ndarray,
    eps_hat: np.ndarray,
    t: int,
    t_prev: int,
    eta: float = 0.0,
    noise: Optional[np.ndarray] = None,
) -> np.ndarray:
    """One update in x0-prediction form; `noise` is only read when eta > 0."""
    if t_prev >= t:
        raise BadRange(f"t_prev={t_prev} must precede t={t}")
    a_t, a_prev = schedule.alpha_bar[t], schedule.alpha_bar[t_prev]
    sigma = schedule.sigma(t, t_prev, eta)
    x0 = (h_t - np.sqrt(1.0 - a_t) * eps_hat) / np.sqrt(a_t)
    h_prev = np.sqrt(a_prev) * x0 + np.sqrt(max(1.0 - a_prev - sigma ** 2, 0.0)) * eps_hat
    if eta > 0 and sigma > 0:
        if noise is None:
            raise ValueError("eta > 0 needs a noise draw")
        h_prev = h_prev + sigma * noise
    return h_prev


def sinusoidal_table(T: int, width: int) -> np.ndarray:
    half = width // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half, 1))
    angles = np.arange(T + 1)[:, None] * freqs[None, :]
    table = np.zeros((T + 1, width))
    table[:, 0:2 * half:2] = np.sin(angles)
    table[:, 1:2 * half:2] = np.cos(angles)
    return table


class SkipNet:
    """Noise predictor: N down layers, N up layers, each up layer also fed the mirrored down output."""

    def __init__(self, latent_dim: int, hidden: int, depth: int, T: int, rng: np.random.Generator, prefix: str = "diff"):
        self.latent_dim = latent_dim
        self.hidden = hidden
        self.depth = depth
        self.prefix = prefix
        self.time_table = sinusoidal_table(T, hidden)
        self.store = ParamStore()
        p = prefix

        self.store.add(f"{p}.time.w", nd.glorot(rng, hidden, hidden))
        self.store.add(f"{p}.in.w", nd.glorot(rng, latent_dim, hidden))
        self.store.add(f"{p}.in.b", np.zeros((1, hidden)))
        for i in range(1, depth + 1):
            self.store.add(f"{p}.down{i}.w", nd.glorot(rng, hidden, hidden))
            self.store.add(f"{p}.down{i}.b", np.zeros((1, hidden)))
            self.store.add(f"{p}.up{i}.w", nd.glorot(rng, 2 * hidden, hidden))
            self.store.add(f"{p}.up{i}.b", np.zeros((1, hidden)))
        self.store.add(f"{p}.out.w", nd.glorot(rng, hidden, latent_dim))
        self.store.add(f"{p}.out.b", np.zeros((1, latent_dim)))

    def _dense(self, name: str, x: Tensor) -> Tensor:
        return nd.add(nd.matmul(x, self.store[f"{name}.w"]), self.store[f"{name}.b"])

    def forward(self, h_t: Tensor, t: np.ndarray) -> Tensor:
        p = self.prefix
        t = np.broadcast_to(np.asarray(t, dtype=np.int64), (h_t.shape[0],))
        if t.min() < 1 or t.max() >= len(self.time_table):
            raise BadRange(f"time step outside [1, {len(self.time_table) - 1}]")
        temb = nd.matmul(nd.take_rows(nd.Tensor(self.time_table), t), self.store[f"{p}.time.w"])

        downs = [nd.gelu(nd.add(self._dense(f"{p}.in", h_t), temb))]
        for i in range(1, self.depth + 1):
            downs.append(nd.gelu(self._dense(f"{p}.down{i}", nd.add(downs[-1], temb))))
        u = downs[-1]
        for i in range(1, self.depth + 1):
            u = nd.gelu(self._dense(f"{p}.up{i}", nd.concat([u, downs[self.depth - i]], axis=1)))
        return self._dense(f"{p}.out", u)


def skipnet_forward(net: SkipNet, h_t: np.ndarray, t) -> np.ndarray:
    with nd.no_grad():
        return net.forward(nd.Tensor(np.atleast_2d(h_t)), t).data.astype(np.float64)


def ancestral_sample(
    schedule: DiffusionSchedule,
    eps_fn: Callable[[np.ndarray, int], np.ndarray],
    n: int,
    dim: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Full-length DDPM chain, the reference for eta = 1 sampling."""
    h = rng.standard_normal((n, dim))
    for t in range(schedule.T, 0, -1):
        beta, a_bar = schedule.betas[t], schedule.alpha_bar[t]
        mean = (h - beta / np.sqrt(1.0 - a_bar) * eps_fn(h, t)) / np.sqrt(1.0 - beta)
        noise = rng.standard_normal(h.shape) if t > 1 else 0.0
        h = mean + np.sqrt(schedule.posterior_variance(t)) * noise
    return h


class LatentDiffusion:
    def __init__(self, schedule: DiffusionSchedule, net: SkipNet, mean: np.ndarray, std: np.ndarray):
        self.schedule = schedule
        self.net = net
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)

    @classmethod
    def create(cls, latent_dim: int, config: DiffusionConfig, rng: np.random.Generator) -> "LatentDiffusion":
        schedule = make_schedule(config.T, config.beta_start, config.beta_end)
        net = SkipNet(latent_dim, config.hidden, config.depth, config.T, rng)
        return cls(schedule, net, np.zeros(latent_dim), np.ones(latent_dim))

    def standardize(self, latents: np.ndarray) -> np.ndarray:
        return (latents - self.mean) / self.std

    def restore(self, latents: np.ndarray) -> np.ndarray:
        return latents * self.std + self.mean

    def eps(self, h: np.ndarray, t: int) -> np.ndarray:
        return skipnet_forward(self.net, h, t)

    def sample(self, n: int, num_steps: int, eta: float = 0.0, seed: int = 0) -> np.ndarray:
        """Draw n latents in the original (unstandardized) scale."""
        rng = np.random.default_rng(seed)
        h = rng.standard_normal((n, self.net.latent_dim))
        for t, t_prev in self.schedule.timesteps(num_steps):
            noise = rng.standard_normal(h.shape) if eta > 0 else None
            h = ddim_step(self.schedule, h, self.eps(h, t), t, t_prev, eta, noise)
        return self.restore(h)

    # ---- Checkpoint ----

    def state_arrays(self) -> Dict[str, np.ndarray]:
        arrays = dict(self.net.store.arrays())
        arrays[f"{self.net.prefix}.stats"] = np.stack([self.mean, self.std])
        return arrays

    def meta(self) -> Dict[str, str]:
        return {
            "T": str(self.schedule.T),
            "beta_start": repr(float(self.schedule.betas[1])),
            "beta_end": repr(float(self.schedule.betas[-1])),
            "depth": str(self.net.depth),
            "hidden": str(self.net.hidden),
            "latent_dim": str(self.net.latent_dim),
        }

    @classmethod
    def from_state(cls, arrays: Dict[str, np.ndarray], meta: Dict[str, str]) -> "LatentDiffusion":
        T = int(meta["T"])
        schedule = make_schedule(T, float(meta["beta_start"]), float(meta["beta_end"]))
        net = SkipNet(int(meta["latent_dim"]), int(meta["hidden"]), int(meta["depth"]), T, np.random.default_rng(0))
        net.store.load_arrays(arrays)
        stats = arrays[f"{net.prefix}.stats"].astype(np.float64)
        return cls(schedule, net, stats[0], stats[1])


def train_diffusion(
    latents: np.ndarray,
    config: DiffusionConfig,
    seed: int = 0,
    grad_clip: float = 5.0,
    progress: bool = False,
) -> Tuple[LatentDiffusion, List[float]]:
    """Fit the noise predictor with an MAE loss over uniformly drawn steps; returns per-epoch mean losses."""
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim != 2 or not len(latents):
        raise EmptyDataset("No latents to train the diffusion model on")
    rng = np.random.default_rng(seed)
    model = LatentDiffusion.create(latents.shape[1], config, rng)
    model.mean = latents.mean(axis=0)
    std = latents.std(axis=0)
    model.std = np.where(std > 1e-8, std, 1.0)
    data = model.standardize(latents)

    steps_per_epoch = int(np.ceil(len(data) / config.batch_size))
    warmup = steps_per_epoch if config.warmup_steps is None else config.warmup_steps
    store = model.net.store
    history = []
    for epoch in tqdm(range(config.epochs), desc="diffusion", disable=not progress):
        order = rng.permutation(len(data))
        losses = []
        for start in range(0, len(data), config.batch_size):
            h0 = data[order[start:start + config.batch_size]]
            t = rng.integers(1, config.T + 1, size=len(h0))
            eps = rng.standard_normal(h0.shape)
            h_t = q_sample(model.schedule, h0, t, eps)

            store.zero_grad()
            loss = nd.mae(model.net.forward(nd.Tensor(h_t), t), nd.Tensor(eps))
            loss.backward()
            nd.clip_grad_norm(store, grad_clip)
            nd.adam_step(store, learning_rate(store.step, config.lr, warmup, config.decay_rate))
            losses.append(loss.item())
        history.append(float(np.mean(losses)))
        logger.info(f"Diffusion epoch {epoch + 1}/{config.epochs}: loss {history[-1]:.4f}")
    return model, history
