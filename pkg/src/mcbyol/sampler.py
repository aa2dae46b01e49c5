"""Optimizer/sampler family: MAP SGD, cyclic snapshot SGD, SGLD, SGHMC,
and cyclical SGHMC with a cold-posterior temperature.

Update conventions (per step k, learning rate l = cyclic_lr(cfg, k)):

    grad drift     d = (l/2) * n * grad_U        (n = dataset size)
    SGLD           theta <- theta - d + sqrt(T*l) * eps
    SGHMC          m <- beta*m - d + sqrt(T*(1-beta)*l) * eps
                   theta <- theta + m

grad_U is the minibatch estimate of the scaled negative log posterior:
the batch-mean twin-network loss gradient plus the Gaussian-prior term
theta / (prior_std^2 * n) on the encoder slice only.  Temperature
multiplies the noise variance; the optional temper_drift flag instead
divides the drift by T and leaves the noise untempered (same stationary
law, different timescale).

Noise is injected only in the tail of each cycle (within-cycle position
>= noise_start_frac * cycle_len) and only for the stochastic kinds;
map_sgd and snap_sgd are always noiseless.  Drawing happens only when the
noise is active, so two samplers with the same seed consume identical
noise streams.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape
from .errors import ConfigError, ContractError
from .model import TwinModel, byol_loss_symmetrized

KINDS = ("map_sgd", "snap_sgd", "sgld", "sghmc", "csghmc")
NOISY_KINDS = ("sgld", "sghmc", "csghmc")


@dataclass
class SamplerConfig:
    kind: str = "csghmc"
    lr0: float = 0.2
    beta: float = 0.9
    temperature: float = 0.1
    cycle_len: int = 50
    total_steps: int = 200
    n_dataset: int = 1
    noise_start_frac: float = 0.8
    prior_std: float = 1.0
    temper_drift: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown sampler kind {self.kind!r}")
        if self.lr0 <= 0:
            raise ConfigError("lr0 must be positive")
        if not 0.0 <= self.beta < 1.0:
            raise ConfigError("beta must lie in [0, 1)")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if self.cycle_len < 1:
            raise ConfigError("cycle_len must be >= 1")
        if self.total_steps < 1:
            raise ConfigError("total_steps must be >= 1")
        if self.n_dataset < 1:
            raise ConfigError("n_dataset must be >= 1")
        if not 0.0 <= self.noise_start_frac <= 1.0:
            raise ConfigError("noise_start_frac must lie in [0, 1]")
        if self.prior_std <= 0:
            raise ConfigError("prior_std must be positive")


@dataclass
class SamplerState:
    momentum: np.ndarray
    step: int = 0
    rng: np.random.Generator = field(
        default_factory=lambda: np.random.Generator(np.random.Philox(0)))


def make_state(dim: int, seed: int) -> SamplerState:
    """Fresh state: zero momentum, counter-based Gaussian noise source."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    return SamplerState(momentum=np.zeros(dim), step=0, rng=rng)


def cyclic_lr(cfg: SamplerConfig, k: int) -> float:
    """Cosine cyclic schedule; constant lr0 for plain MAP SGD."""
    if not 0 <= k < cfg.total_steps:
        raise ContractError(f"step {k} outside [0, {cfg.total_steps})")
    if cfg.kind == "map_sgd":
        return cfg.lr0
    pos = k % cfg.cycle_len
    return (cfg.lr0 / 2.0) * (np.cos(np.pi * pos / cfg.cycle_len) + 1.0)


def noise_active(cfg: SamplerConfig, k: int) -> bool:
    """True when this step injects Gaussian noise: stochastic kind and the
    within-cycle position has reached the sampling stage of the cycle."""
    if cfg.kind not in NOISY_KINDS:
        return False
    return (k % cfg.cycle_len) >= cfg.noise_start_frac * cfg.cycle_len


def should_yield(cfg: SamplerConfig, k: int) -> bool:
    """Snapshot at each cycle end; the non-cyclic kinds use the same fixed
    interval so every baseline collects equally many snapshots."""
    if k < 0:
        raise ContractError("step must be non-negative")
    return (k + 1) % cfg.cycle_len == 0


def posterior_grad(model: TwinModel, view_a: np.ndarray, view_b: np.ndarray,
                   cfg: SamplerConfig) -> tuple[np.ndarray, float]:
    """Gradient of the minibatch posterior estimate on the online parameters.

    Returns (grad_U, loss) where grad_U = d/dtheta [batch-mean symmetrized
    loss] plus theta / (prior_std^2 * n) on the encoder slice; projector and
    predictor receive only the likelihood gradient.  Callers scale by n.
    """
    model.zero_online_grads()
    tape = Tape()
    loss = byol_loss_symmetrized(tape, model, view_a, view_b)
    tape.backward(loss)
    grad = model.online_grad_flat()
    d_enc = model.encoder_dim
    enc_flat = model.online_encoder.flatten()
    grad[:d_enc] += enc_flat / (cfg.prior_std ** 2 * cfg.n_dataset)
    return grad, float(loss.values)


def _drift(cfg: SamplerConfig, grad_u: np.ndarray, lr: float) -> np.ndarray:
    d = (0.5 * lr * cfg.n_dataset) * grad_u
    if cfg.temper_drift:
        d = d / cfg.temperature
    return d


def _noise_scale(cfg: SamplerConfig, lr: float, one_minus_beta: float) -> float:
    if cfg.temper_drift:
        return float(np.sqrt(one_minus_beta * lr))
    return float(np.sqrt(cfg.temperature * one_minus_beta * lr))


def sgld_step(params: np.ndarray, state: SamplerState, grad_u: np.ndarray,
              lr: float, cfg: SamplerConfig, noise_on: bool = True,
              eps: np.ndarray | None = None) -> np.ndarray:
    """One Langevin update; returns the new parameter vector."""
    if lr <= 0:
        raise ContractError("lr must be positive")
    delta = -_drift(cfg, grad_u, lr)
    if noise_on:
        if eps is None:
            eps = state.rng.standard_normal(params.shape)
        delta = delta + _noise_scale(cfg, lr, 1.0) * eps
    state.step += 1
    return params + delta


def sghmc_step(params: np.ndarray, state: SamplerState, grad_u: np.ndarray,
               lr: float, cfg: SamplerConfig, noise_on: bool = True,
               eps: np.ndarray | None = None) -> np.ndarray:
    """One momentum update; mutates state.momentum, returns new parameters.

    With beta = 0 this reproduces sgld_step bit-for-bit under a shared
    noise draw.
    """
    if lr <= 0:
        raise ContractError("lr must be positive")
    if state.momentum.shape != params.shape:
        raise ContractError("momentum buffer shape does not match parameters")
    m = cfg.beta * state.momentum - _drift(cfg, grad_u, lr)
    if noise_on:
        if eps is None:
            eps = state.rng.standard_normal(params.shape)
        m = m + _noise_scale(cfg, lr, 1.0 - cfg.beta) * eps
    state.momentum = m
    state.step += 1
    return params + m
