"""A small fully connected residual network with hand-written backprop.

The architecture is fixed up to widths: an input projection, a stack of
residual blocks (linear -> LayerNorm -> dropout -> ReLU, twice, plus an
identity skip) and an output projection.  Everything runs in float64 so
analytic gradients can be checked against central finite differences.

Inputs are batched row vectors of shape (B, d); parameters live in a
flat {name: array} dict so they serialize to JSON checkpoints directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LN_EPS = 1e-10
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    output_dim: int
    hidden_dim: int = 1024
    num_blocks: int = 2
    dropout: float = 0.5

    def __post_init__(self) -> None:
        for name in ("input_dim", "output_dim", "hidden_dim"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.num_blocks < 0:
            raise ValueError("num_blocks must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "hidden_dim": self.hidden_dim,
            "num_blocks": self.num_blocks,
            "dropout": self.dropout,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpConfig":
        return cls(
            input_dim=int(d["input_dim"]),
            output_dim=int(d["output_dim"]),
            hidden_dim=int(d["hidden_dim"]),
            num_blocks=int(d["num_blocks"]),
            dropout=float(d["dropout"]),
        )


def param_names(config: MlpConfig) -> list[str]:
    names = ["fc_in.w", "fc_in.b"]
    for i in range(config.num_blocks):
        for half in ("1", "2"):
            names += [
                f"block{i}.fc{half}.w",
                f"block{i}.fc{half}.b",
                f"block{i}.ln{half}.g",
                f"block{i}.ln{half}.b",
            ]
    names += ["fc_out.w", "fc_out.b"]
    return names


def init_params(config: MlpConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Kaiming-uniform weights (fan-in), zero biases, unit LayerNorm gains."""

    def linear(out_dim: int, in_dim: int) -> np.ndarray:
        bound = np.sqrt(6.0 / in_dim)
        return rng.uniform(-bound, bound, size=(out_dim, in_dim))

    h = config.hidden_dim
    params: dict[str, np.ndarray] = {
        "fc_in.w": linear(h, config.input_dim),
        "fc_in.b": np.zeros(h),
    }
    for i in range(config.num_blocks):
        for half in ("1", "2"):
            params[f"block{i}.fc{half}.w"] = linear(h, h)
            params[f"block{i}.fc{half}.b"] = np.zeros(h)
            params[f"block{i}.ln{half}.g"] = np.ones(h)
            params[f"block{i}.ln{half}.b"] = np.zeros(h)
    params["fc_out.w"] = linear(config.output_dim, h)
    params["fc_out.b"] = np.zeros(config.output_dim)
    return params


def _linear_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return x @ w.T + b


def _linear_backward(dy: np.ndarray, x: np.ndarray, w: np.ndarray):
    dw = dy.T @ x
    db = dy.sum(axis=0)
    dx = dy @ w
    return dx, dw, db


def _layernorm_forward(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    return g * xhat + b, (xhat, inv)


def _layernorm_backward(dy: np.ndarray, cache, g: np.ndarray):
    xhat, inv = cache
    d = xhat.shape[1]
    dxhat = dy * g
    dg = (dy * xhat).sum(axis=0)
    db = dy.sum(axis=0)
    # Standard LayerNorm gradient with the mean and variance terms folded in.
    dx = inv / d * (d * dxhat - dxhat.sum(axis=1, keepdims=True) - xhat * (dxhat * xhat).sum(axis=1, keepdims=True))
    return dx, dg, db


def _dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray:
    return (rng.random(shape) >= rate).astype(np.float64)


def forward(
    params: dict[str, np.ndarray],
    config: MlpConfig,
    x: np.ndarray,
    train: bool = False,
    rng: np.random.Generator | None = None,
):
    """Run the network; returns (output, cache) with cache feeding backward.

    ``train`` enables inverted dropout (activations divided by the keep
    probability so expectations match eval mode), which requires ``rng``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != config.input_dim:
        raise ValueError(f"input must have shape (B, {config.input_dim}), got {x.shape}")
    if train and config.dropout > 0.0 and rng is None:
        raise ValueError("training-mode forward with dropout needs an rng")

    keep = 1.0 - config.dropout
    use_dropout = train and config.dropout > 0.0
    cache: dict = {"x": x, "train": train, "blocks": []}

    h = _linear_forward(x, params["fc_in.w"], params["fc_in.b"])
    for i in range(config.num_blocks):
        block: dict = {}
        u = h
        for half in ("1", "2"):
            a = _linear_forward(u, params[f"block{i}.fc{half}.w"], params[f"block{i}.fc{half}.b"])
            n, ln_cache = _layernorm_forward(a, params[f"block{i}.ln{half}.g"], params[f"block{i}.ln{half}.b"])
            if use_dropout:
                mask = _dropout_mask(n.shape, config.dropout, rng)
                d = n * mask / keep
            else:
                mask = None
                d = n
            r = np.maximum(d, 0.0)
            block[f"lin_in{half}"] = u
            block[f"ln{half}"] = ln_cache
            block[f"mask{half}"] = mask
            block[f"pre_relu{half}"] = d
            u = r
        h = h + u
        cache["blocks"].append(block)
    cache["h_out"] = h
    y = _linear_forward(h, params["fc_out.w"], params["fc_out.b"])
    if not np.isfinite(y).all():
        raise FloatingPointError("non-finite activations in forward pass")
    return y, cache


def backward(
    params: dict[str, np.ndarray],
    config: MlpConfig,
    cache: dict,
    dy: np.ndarray,
):
    """Exact gradients of the cached forward pass; returns (grads, dx)."""
    dy = np.asarray(dy, dtype=np.float64)
    h_out = cache["h_out"]
    if dy.shape != (h_out.shape[0], config.output_dim):
        raise ValueError(f"dy must have shape ({h_out.shape[0]}, {config.output_dim}), got {dy.shape}")

    keep = 1.0 - config.dropout
    grads: dict[str, np.ndarray] = {}

    dh, grads["fc_out.w"], grads["fc_out.b"] = _linear_backward(dy, h_out, params["fc_out.w"])
    for i in reversed(range(config.num_blocks)):
        block = cache["blocks"][i]
        du = dh.copy()  # gradient entering the block's top, skip handled below
        for half in ("2", "1"):
            d_pre = block[f"pre_relu{half}"]
            du = du * (d_pre > 0.0)
            mask = block[f"mask{half}"]
            if mask is not None:
                du = du * mask / keep
            du, dg, dbeta = _layernorm_backward(du, block[f"ln{half}"], params[f"block{i}.ln{half}.g"])
            grads[f"block{i}.ln{half}.g"] = dg
            grads[f"block{i}.ln{half}.b"] = dbeta
            du, dw, db = _linear_backward(du, block[f"lin_in{half}"], params[f"block{i}.fc{half}.w"])
            grads[f"block{i}.fc{half}.w"] = dw
            grads[f"block{i}.fc{half}.b"] = db
        dh = dh + du  # identity skip
    dx, grads["fc_in.w"], grads["fc_in.b"] = _linear_backward(dh, cache["x"], params["fc_in.w"])
    return grads, dx


@dataclass
class AdamState:
    """First and second moment accumulators plus the step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0


def init_adam(params: dict[str, np.ndarray]) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
        t=0,
    )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    eps: float = ADAM_EPS,
):
    """One bias-corrected Adam update; returns (new params, new state)."""
    if set(grads) != set(params):
        raise ValueError("grads must provide exactly one entry per parameter")
    t = state.t + 1
    new_params: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {k} {p.shape}")
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for {k}")
        m = beta1 * state.m[k] + (1.0 - beta1) * g
        v = beta2 * state.v[k] + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        new_params[k] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[k] = m
        new_v[k] = v
    return new_params, AdamState(m=new_m, v=new_v, t=t)


def lr_schedule(base_lr: float, epoch: int, decay: float = 0.96, every: int = 4) -> float:
    """Step decay: base_lr * decay ** floor(epoch / every)."""
    if base_lr <= 0:
        raise ValueError(f"base_lr must be > 0, got {base_lr}")
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    if every <= 0:
        raise ValueError(f"every must be >= 1, got {every}")
    return base_lr * decay ** (epoch // every)


def params_to_jsonable(params: dict[str, np.ndarray]) -> dict:
    """{name: {shape, values}} with values flattened row-major."""
    return {
        k: {"shape": list(p.shape), "values": np.asarray(p, dtype=np.float64).ravel().tolist()}
        for k, p in params.items()
    }


def params_from_jsonable(blob: dict) -> dict[str, np.ndarray]:
    params = {}
    for k, entry in blob.items():
        shape = tuple(int(s) for s in entry["shape"])
        values = np.asarray(entry["values"], dtype=np.float64)
        expected = int(np.prod(shape)) if shape else 1
        if values.size != expected:
            raise ValueError(f"parameter {k}: expected {expected} values, got {values.size}")
        params[k] = values.reshape(shape)
    return params
