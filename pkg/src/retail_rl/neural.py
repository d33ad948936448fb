"""Shared Q-network: stock convolution, dense trunk with layer norm + SELU, linear head.

Everything is float64 numpy with hand-written reverse mode. Parameters live in
a plain ``dict[str, ndarray]`` so that target copies, checkpoints and the
optimizer can treat them uniformly.

Input rows are raw observation vectors ``[stock (M), shelf_life, forecast (H),
cost, price]``. They are feature-scaled inside :func:`forward`: shelf lives are
divided by ``shelf_scale``, forecasts by ``forecast_scale``, and cost/price go
through ``log1p``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SELU_ALPHA = 1.6732632423543772848170429916717
SELU_SCALE = 1.0507009873554804934193349852946
LN_EPS = 1e-5
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetworkSpec:
    max_stock: int
    horizon: int
    n_actions: int
    outputs_per_action: int = 1
    conv_kernel: int = 5
    conv_channels: int = 4
    trunk: tuple = (128, 64)
    shelf_scale: float = 30.0
    forecast_scale: float = 10.0
    observe_position: bool = False  # append on-hand count and in-transit units as inputs

    def __post_init__(self):
        object.__setattr__(self, "trunk", tuple(int(w) for w in self.trunk))
        if min((self.max_stock, self.horizon, self.n_actions, self.outputs_per_action,
                self.conv_kernel, self.conv_channels) + self.trunk) < 1:
            raise ValueError("network widths must be positive")
        if self.conv_kernel > self.max_stock:
            raise ValueError("convolution kernel wider than the stock vector")

    @property
    def input_width(self) -> int:
        return self.max_stock + self.horizon + 3 + int(self.observe_position)

    @property
    def conv_positions(self) -> int:
        return self.max_stock - self.conv_kernel + 1

    @property
    def feature_width(self) -> int:
        return self.conv_positions * self.conv_channels + self.horizon + 3 + 2 * int(self.observe_position)

    @property
    def n_outputs(self) -> int:
        return self.n_actions * self.outputs_per_action

    def to_dict(self) -> dict:
        d = asdict(self)
        d["trunk"] = list(self.trunk)
        return d


def selu(x):
    return SELU_SCALE * np.where(x > 0, x, SELU_ALPHA * np.expm1(np.minimum(x, 0.0)))


def selu_grad(x):
    return SELU_SCALE * np.where(x > 0, 1.0, SELU_ALPHA * np.exp(np.minimum(x, 0.0)))


def layer_norm(z, gain, bias):
    mu = z.mean(axis=-1, keepdims=True)
    sd = np.sqrt(z.var(axis=-1, keepdims=True) + LN_EPS)
    zhat = (z - mu) / sd
    return gain * zhat + bias, zhat, sd


def init_params(spec: NetworkSpec, rng: np.random.Generator, head_scale: float = 0.1) -> dict:
    """LeCun-normal weights (suited to SELU), zero biases, unit layer-norm gains."""
    p = {
        "conv_w": rng.standard_normal((spec.conv_kernel, spec.conv_channels)) / np.sqrt(spec.conv_kernel),
        "conv_b": np.zeros(spec.conv_channels),
    }
    width = spec.feature_width
    for i, out in enumerate(spec.trunk):
        p[f"w{i}"] = rng.standard_normal((width, out)) / np.sqrt(width)
        p[f"b{i}"] = np.zeros(out)
        p[f"g{i}"] = np.ones(out)
        p[f"beta{i}"] = np.zeros(out)
        width = out
    p["head_w"] = head_scale * rng.standard_normal((width, spec.n_outputs)) / np.sqrt(width)
    p["head_b"] = np.zeros(spec.n_outputs)
    return p


def check_params(spec: NetworkSpec, params: dict) -> None:
    expected = init_params(spec, np.random.default_rng(0))
    if set(expected) != set(params):
        raise ValueError("parameter names do not match the network spec")
    for name, arr in expected.items():
        if params[name].shape != arr.shape:
            raise ValueError(f"parameter {name} has shape {params[name].shape}, expected {arr.shape}")


def features(spec: NetworkSpec, x: np.ndarray):
    m, h = spec.max_stock, spec.horizon
    stock = x[:, :m] / spec.shelf_scale
    aux = np.concatenate(
        [
            x[:, m:m + 1] / spec.shelf_scale,
            x[:, m + 1:m + 1 + h] / spec.forecast_scale,
            np.log1p(np.maximum(x[:, m + 1 + h:m + 3 + h], 0.0)),
        ]
        + ([np.count_nonzero(x[:, :m], axis=1)[:, None] / spec.forecast_scale,
            x[:, m + 3 + h:m + 4 + h] / spec.forecast_scale] if spec.observe_position else []),
        axis=1,
    )
    return stock, aux


def forward(spec: NetworkSpec, params: dict, x: np.ndarray, return_cache: bool = False):
    """Network output of shape ``[B, n_actions, outputs_per_action]``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != spec.input_width:
        raise ValueError(f"observation width {x.shape[1]} != {spec.input_width}")
    stock, aux = features(spec, x)
    windows = sliding_window_view(stock, spec.conv_kernel, axis=1)  # [B, P, k]
    conv = windows @ params["conv_w"] + params["conv_b"]           # [B, P, C]
    h = np.concatenate([conv.reshape(len(x), -1), aux], axis=1)
    cache = {"windows": windows, "layers": []}
    for i in range(len(spec.trunk)):
        z = h @ params[f"w{i}"] + params[f"b{i}"]
        y, zhat, sd = layer_norm(z, params[f"g{i}"], params[f"beta{i}"])
        cache["layers"].append((h, zhat, sd, y))
        h = selu(y)
    out = h @ params["head_w"] + params["head_b"]
    cache["last"] = h
    out = out.reshape(len(x), spec.n_actions, spec.outputs_per_action)
    return (out, cache) if return_cache else out


def backward(spec: NetworkSpec, params: dict, cache: dict, dout: np.ndarray) -> dict:
    """Gradients of ``sum(dout * out)`` w.r.t. every parameter."""
    dout = dout.reshape(len(cache["last"]), spec.n_outputs)
    grads = {
        "head_w": cache["last"].T @ dout,
        "head_b": dout.sum(axis=0),
    }
    dh = dout @ params["head_w"].T
    for i in reversed(range(len(spec.trunk))):
        h_in, zhat, sd, y = cache["layers"][i]
        dy = dh * selu_grad(y)
        grads[f"g{i}"] = (dy * zhat).sum(axis=0)
        grads[f"beta{i}"] = dy.sum(axis=0)
        dzhat = dy * params[f"g{i}"]
        dz = (dzhat - dzhat.mean(axis=-1, keepdims=True)
              - zhat * (dzhat * zhat).mean(axis=-1, keepdims=True)) / sd
        grads[f"w{i}"] = h_in.T @ dz
        grads[f"b{i}"] = dz.sum(axis=0)
        dh = dz @ params[f"w{i}"].T
    n_conv = spec.conv_positions * spec.conv_channels
    dconv = dh[:, :n_conv].reshape(-1, spec.conv_positions, spec.conv_channels)
    grads["conv_w"] = np.einsum("bpk,bpc->kc", cache["windows"], dconv)
    grads["conv_b"] = dconv.sum(axis=(0, 1))
    return grads


class Adam:
    """Adam with optional global-norm clipping. Non-finite gradients skip the step."""

    def __init__(self, params: dict, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, clip_norm: float | None = 10.0):
        self.lr, self.beta1, self.beta2, self.eps, self.clip_norm = lr, beta1, beta2, eps, clip_norm
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0
        self.skipped = 0

    def step(self, params: dict, grads: dict, lr: float | None = None) -> bool:
        sq = sum(float(np.sum(g * g)) for g in grads.values())
        if not np.isfinite(sq):
            self.skipped += 1
            return False
        scale = 1.0
        if self.clip_norm is not None and sq > self.clip_norm ** 2:
            scale = self.clip_norm / np.sqrt(sq)
        self.t += 1
        lr = self.lr if lr is None else lr
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            g = g * scale
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return True


def copy_params(params: dict) -> dict:
    return {k: v.copy() for k, v in params.items()}


def sync_target(params: dict, target: dict) -> dict:
    """Hard copy of ``params`` into ``target`` (in place); returns ``target``."""
    if set(params) != set(target):
        raise ValueError("target parameter names differ")
    for k, v in params.items():
        if target[k].shape != v.shape:
            raise ValueError(f"shape mismatch for {k}")
        np.copyto(target[k], v)
    return target


def save_checkpoint(path, spec: NetworkSpec, params: dict, meta: dict | None = None) -> None:
    header = {"format_version": CHECKPOINT_VERSION, "spec": spec.to_dict(), "meta": meta or {}}
    arrays = {f"param/{k}": v for k, v in params.items()}
    with open(Path(path), "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header, sort_keys=True)), **arrays)


def load_checkpoint(path):
    """Returns ``(spec, params, meta)``."""
    with np.load(Path(path), allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        if header.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('format_version')}")
        params = {k[len("param/"):]: data[k].copy() for k in data.files if k.startswith("param/")}
    spec = NetworkSpec(**header["spec"])
    check_params(spec, params)
    return spec, params, header["meta"]
