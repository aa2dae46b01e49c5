"""Twin-network model: online encoder/projector/predictor, EMA target, losses.

The online network is trained; the target network is its exponential
moving average and never receives gradients.  All networks are dense MLPs
(activation on hidden layers, linear output).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, Tensor
from .errors import ConfigError, DimensionError, NumericError
from .params import ParamVector


@dataclass
class Architecture:
    input_dim: int
    encoder_hidden: list[int] = field(default_factory=lambda: [64, 64])
    embed_dim: int = 16
    proj_hidden: int = 32
    proj_dim: int = 8
    pred_hidden: int = 32
    activation: str = "tanh"

    def __post_init__(self):
        widths = [self.input_dim, *self.encoder_hidden, self.embed_dim,
                  self.proj_hidden, self.proj_dim, self.pred_hidden]
        if any(w < 1 for w in widths):
            raise ConfigError(f"layer widths must be positive, got {widths}")
        if self.activation not in ("tanh", "relu"):
            raise ConfigError(f"unknown activation {self.activation!r}")

    def encoder_widths(self) -> list[int]:
        return [self.input_dim, *self.encoder_hidden, self.embed_dim]

    def projector_widths(self) -> list[int]:
        return [self.embed_dim, self.proj_hidden, self.proj_dim]

    def predictor_widths(self) -> list[int]:
        # predictor maps projection space onto itself
        return [self.proj_dim, self.pred_hidden, self.proj_dim]


@dataclass
class TwinModel:
    arch: Architecture
    online_encoder: ParamVector
    online_projector: ParamVector
    online_predictor: ParamVector
    target_encoder: ParamVector
    target_projector: ParamVector
    tau: float = 0.99

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"tau must lie in [0, 1], got {self.tau}")

    # flat-vector view over all online parameters; order is fixed:
    # encoder, projector, predictor (the prior applies to the leading
    # encoder slice, see sampler.posterior_grad)
    def online_parts(self) -> tuple[ParamVector, ParamVector, ParamVector]:
        return self.online_encoder, self.online_projector, self.online_predictor

    @property
    def online_dim(self) -> int:
        return sum(p.total_dim for p in self.online_parts())

    @property
    def encoder_dim(self) -> int:
        return self.online_encoder.total_dim

    def online_flat(self) -> np.ndarray:
        return np.concatenate([p.flatten() for p in self.online_parts()])

    def set_online_flat(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.online_dim,):
            raise DimensionError(f"set_online_flat: need {self.online_dim} values")
        offset = 0
        for p in self.online_parts():
            p.set_flat(vec[offset:offset + p.total_dim])
            offset += p.total_dim

    def online_grad_flat(self) -> np.ndarray:
        return np.concatenate([p.grad_flat() for p in self.online_parts()])

    def zero_online_grads(self) -> None:
        for p in self.online_parts():
            p.zero_grad()

    def clone(self) -> "TwinModel":
        return TwinModel(
            arch=self.arch,
            online_encoder=self.online_encoder.copy(),
            online_projector=self.online_projector.copy(),
            online_predictor=self.online_predictor.copy(),
            target_encoder=self.target_encoder.copy(),
            target_projector=self.target_projector.copy(),
            tau=self.tau,
        )


def init_mlp(widths: list[int], rng: np.random.Generator, requires_grad: bool) -> ParamVector:
    """Scaled-uniform fan-in init: W, b ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    segments: dict[str, Tensor] = {}
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        segments[f"layer{i}.w"] = Tensor(
            rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad)
        segments[f"layer{i}.b"] = Tensor(
            rng.uniform(-bound, bound, size=(fan_out,)), requires_grad)
    return ParamVector(segments)


def init_twin(arch: Architecture, seed: int, tau: float = 0.99) -> TwinModel:
    """Online weights seeded; target starts as an exact copy of the online
    encoder and projector (the predictor has no target counterpart)."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    encoder = init_mlp(arch.encoder_widths(), rng, requires_grad=True)
    projector = init_mlp(arch.projector_widths(), rng, requires_grad=True)
    predictor = init_mlp(arch.predictor_widths(), rng, requires_grad=True)
    target_encoder = encoder.copy()
    target_encoder.set_requires_grad(False)
    target_projector = projector.copy()
    target_projector.set_requires_grad(False)
    return TwinModel(arch, encoder, projector, predictor,
                     target_encoder, target_projector, tau)


def _activation_fn(tape: Tape, name: str):
    return tape.tanh if name == "tanh" else tape.relu


def mlp_forward(tape: Tape, pv: ParamVector, x: Tensor, activation: str) -> Tensor:
    """Tape-recorded forward pass; activation on hidden layers only."""
    act = _activation_fn(tape, activation)
    n_layers = len(pv.names) // 2
    h = x
    for i in range(n_layers):
        h = tape.bias_add(tape.matmul(h, pv[f"layer{i}.w"]), pv[f"layer{i}.b"])
        if i < n_layers - 1:
            h = act(h)
    return h


def mlp_forward_np(pv: ParamVector, x: np.ndarray, activation: str) -> np.ndarray:
    """Inference-mode forward pass, no tape."""
    fn = np.tanh if activation == "tanh" else lambda v: np.maximum(v, 0.0)
    n_layers = len(pv.names) // 2
    h = np.asarray(x, dtype=np.float64)
    for i in range(n_layers):
        h = h @ pv[f"layer{i}.w"].values + pv[f"layer{i}.b"].values
        if i < n_layers - 1:
            h = fn(h)
    return h


def _check_views(model: TwinModel, view_a: np.ndarray, view_b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(view_a, dtype=np.float64)
    b = np.asarray(view_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError("views must be 2-D batches")
    if a.shape != b.shape:
        raise DimensionError(f"view batch shapes differ: {a.shape} vs {b.shape}")
    if a.shape[1] != model.arch.input_dim:
        raise DimensionError(f"views have width {a.shape[1]}, model expects {model.arch.input_dim}")
    if a.shape[0] < 1:
        raise DimensionError("views must contain at least one row")
    return a, b


def byol_loss_one_direction(tape: Tape, model: TwinModel,
                            view_a: np.ndarray, view_b: np.ndarray) -> Tensor:
    """Mean over the batch of ||q_bar - y_bar||^2 where q_bar is the
    normalized online prediction of view_a and y_bar the normalized target
    projection of view_b.  The target branch carries no gradient."""
    a, b = _check_views(model, view_a, view_b)
    act = model.arch.activation

    xa = Tensor(a)
    z = mlp_forward(tape, model.online_encoder, xa, act)
    y = mlp_forward(tape, model.online_projector, z, act)
    q = mlp_forward(tape, model.online_predictor, y, act)
    q_bar = tape.l2_normalize(q)

    xb = Tensor(b)
    zt = mlp_forward(tape, model.target_encoder, xb, act)
    yt = mlp_forward(tape, model.target_projector, zt, act)
    y_bar = tape.l2_normalize(yt)

    return tape.mse(q_bar, y_bar)


def byol_loss_symmetrized(tape: Tape, model: TwinModel,
                          view_a: np.ndarray, view_b: np.ndarray) -> Tensor:
    """Sum of the two view assignments: L(a, b) + L(b, a)."""
    return tape.add(byol_loss_one_direction(tape, model, view_a, view_b),
                    byol_loss_one_direction(tape, model, view_b, view_a))


def byol_loss_cosine_form(model: TwinModel, view_a: np.ndarray, view_b: np.ndarray) -> float:
    """Independent numpy evaluation of the same loss as 2 - 2<q_bar, y_bar>,
    averaged over the batch.  Used to cross-check the squared-distance form."""
    a, b = _check_views(model, view_a, view_b)
    act = model.arch.activation
    q = mlp_forward_np(model.online_predictor,
                       mlp_forward_np(model.online_projector,
                                      mlp_forward_np(model.online_encoder, a, act), act), act)
    y = mlp_forward_np(model.target_projector,
                       mlp_forward_np(model.target_encoder, b, act), act)
    q_bar = q / (np.linalg.norm(q, axis=1, keepdims=True) + 1e-12)
    y_bar = y / (np.linalg.norm(y, axis=1, keepdims=True) + 1e-12)
    cos = (q_bar * y_bar).sum(axis=1)
    return float(np.mean(2.0 - 2.0 * cos))


def ema_update(model: TwinModel) -> None:
    """target <- tau * target + (1 - tau) * online, on encoder and projector."""
    tau = model.tau
    for target, online in ((model.target_encoder, model.online_encoder),
                           (model.target_projector, model.online_projector)):
        for name, t in target.items():
            t.values = tau * t.values + (1.0 - tau) * online[name].values


def embed(model: TwinModel, x: np.ndarray) -> np.ndarray:
    """Online-encoder representation of x, shape (N, embed_dim); no tape."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.arch.input_dim:
        raise DimensionError(f"embed: expected (N, {model.arch.input_dim}) input, got {x.shape}")
    z = mlp_forward_np(model.online_encoder, x, model.arch.activation)
    if not np.all(np.isfinite(z)):
        raise NumericError("embedding contains non-finite values")
    return z
