"""Small dense-network engine with hand-written backprop.

Networks are built from a list of layer descriptors (plain dicts)::

    {"kind": "dense", "in": 3, "out": 400}
    {"kind": "batchnorm", "dim": 400}
    {"kind": "relu"} / {"kind": "tanh"} / {"kind": "identity"}
    {"kind": "concat", "dim": 1}

A ``concat`` layer appends the next ``dim`` input columns to the running
activation. That is how the critic receives the action only at its second
hidden layer: the network input is ``[state, action]`` and the action columns
are held back until the concat point.

Everything is float64.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import _kernels
from .errors import ConfigError, ContractError, NumericalError

ACTIVATIONS = ("relu", "tanh", "identity")
FINAL_LAYER_BOUND = 3e-3

BN_MOMENTUM = 0.99
BN_EPSILON = 1e-5


def _check_spec(layer_spec: Sequence[dict]) -> tuple[int, int]:
    """Validate widths; return (input width, output width)."""
    if not layer_spec:
        raise ConfigError("empty layer spec")
    width = None
    base = None
    extra = 0
    for i, layer in enumerate(layer_spec):
        kind = layer.get("kind")
        if kind == "dense":
            fan_in, fan_out = int(layer["in"]), int(layer["out"])
            if fan_in < 1 or fan_out < 1:
                raise ConfigError(f"layer {i}: dense sizes must be positive")
            if width is None:
                base = width = fan_in
            elif width != fan_in:
                raise ConfigError(f"layer {i}: dense expects {fan_in} inputs, got {width}")
            width = fan_out
        elif kind == "batchnorm":
            dim = int(layer["dim"])
            if width is None:
                base = width = dim
            elif width != dim:
                raise ConfigError(f"layer {i}: batchnorm over {dim} dims, got {width}")
        elif kind == "concat":
            if width is None:
                raise ConfigError(f"layer {i}: concat cannot be the first layer")
            dim = int(layer["dim"])
            if dim < 1:
                raise ConfigError(f"layer {i}: concat dim must be positive")
            width += dim
            extra += dim
        elif kind in ACTIVATIONS:
            if width is None:
                raise ConfigError(f"layer {i}: activation cannot be the first layer")
        else:
            raise ConfigError(f"layer {i}: unknown layer kind {kind!r}")
    return base + extra, width


@dataclass
class Network:
    """Layer descriptors plus named parameter arrays.

    ``params`` holds trainable tensors (``"<i>.weight"``, ``"<i>.bias"``,
    ``"<i>.gain"``, ``"<i>.shift"``); ``buffers`` holds batch-norm running
    statistics. Dict insertion order is the checkpoint order.
    """

    spec: list[dict]
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]
    momentum: float = BN_MOMENTUM
    epsilon: float = BN_EPSILON

    def __post_init__(self):
        # parameters live as views into one flat vector so Adam can update them in bulk
        total = sum(p.size for p in self.params.values())
        self.flat = np.empty(total)
        offset = 0
        for name, p in self.params.items():
            view = self.flat[offset:offset + p.size].reshape(p.shape)
            view[...] = p
            self.params[name] = view
            offset += p.size

    def is_flat(self) -> bool:
        return all(p.base is self.flat for p in self.params.values())

    @property
    def in_dim(self) -> int:
        return _check_spec(self.spec)[0]

    @property
    def out_dim(self) -> int:
        return _check_spec(self.spec)[1]

    def copy(self) -> "Network":
        return Network(
            [dict(layer) for layer in self.spec],
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.buffers.items()},
            self.momentum,
            self.epsilon,
        )

    def tensors(self) -> dict[str, np.ndarray]:
        """Parameters and buffers in checkpoint order."""
        return {**self.params, **self.buffers}

    def dense_layer(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        return self.params[f"{i}.weight"], self.params[f"{i}.bias"]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())


@dataclass
class GradientBundle:
    params: dict[str, np.ndarray]
    input_gradient: np.ndarray


@dataclass
class ForwardCache:
    spec: list[dict]
    mode: str
    base_width: int
    entries: list[Any] = field(default_factory=list)


def init_network(
    layer_spec: Sequence[dict],
    seed: int,
    *,
    final_bound: float = FINAL_LAYER_BOUND,
    momentum: float = BN_MOMENTUM,
    epsilon: float = BN_EPSILON,
) -> Network:
    """Draw a fresh network.

    Hidden dense layers get weights and biases from U[-1/sqrt(fan_in), 1/sqrt(fan_in)];
    the last dense layer gets U[-final_bound, final_bound] so initial outputs sit
    near zero.
    """
    spec = [dict(layer) for layer in layer_spec]
    _check_spec(spec)
    if not 0.0 < momentum < 1.0:
        raise ConfigError("batchnorm momentum must lie in (0, 1)")
    if epsilon < 0:
        raise ConfigError("batchnorm epsilon must be non-negative")
    rng = np.random.default_rng(seed)
    last_dense = max((i for i, l in enumerate(spec) if l["kind"] == "dense"), default=-1)
    params: dict[str, np.ndarray] = {}
    buffers: dict[str, np.ndarray] = {}
    for i, layer in enumerate(spec):
        if layer["kind"] == "dense":
            fan_in, fan_out = int(layer["in"]), int(layer["out"])
            bound = final_bound if i == last_dense else 1.0 / math.sqrt(fan_in)
            params[f"{i}.weight"] = rng.uniform(-bound, bound, size=(fan_out, fan_in))
            params[f"{i}.bias"] = rng.uniform(-bound, bound, size=fan_out)
        elif layer["kind"] == "batchnorm":
            dim = int(layer["dim"])
            params[f"{i}.gain"] = np.ones(dim)
            params[f"{i}.shift"] = np.zeros(dim)
            buffers[f"{i}.running_mean"] = np.zeros(dim)
            buffers[f"{i}.running_var"] = np.ones(dim)
    return Network(spec, params, buffers, momentum, epsilon)


def mlp_spec(
    in_dim: int,
    hidden: Sequence[int],
    out_dim: int,
    *,
    out_activation: str = "identity",
    batch_norm: bool = False,
    concat_dim: int = 0,
    concat_at: int = 1,
) -> list[dict]:
    """Dense stack with relu hidden layers.

    With ``batch_norm`` the input and every hidden pre-activation *before* the
    concat point are normalized (dense -> batchnorm -> relu). ``concat_dim``
    extra input columns join in front of hidden layer ``concat_at``.
    """
    spec: list[dict] = []
    width = in_dim
    if batch_norm:
        spec.append({"kind": "batchnorm", "dim": in_dim})
    for j, units in enumerate(hidden):
        if concat_dim and j == concat_at:
            spec.append({"kind": "concat", "dim": concat_dim})
            width += concat_dim
        spec.append({"kind": "dense", "in": width, "out": units})
        if batch_norm and not (concat_dim and j >= concat_at):
            spec.append({"kind": "batchnorm", "dim": units})
        spec.append({"kind": "relu"})
        width = units
    if concat_dim and concat_at >= len(hidden):
        spec.append({"kind": "concat", "dim": concat_dim})
        width += concat_dim
    spec.append({"kind": "dense", "in": width, "out": out_dim})
    spec.append({"kind": out_activation})
    return spec


def actor_spec(obs_dim: int, act_dim: int, hidden=(400, 300), batch_norm: bool = True) -> list[dict]:
    return mlp_spec(obs_dim, hidden, act_dim, out_activation="tanh", batch_norm=batch_norm)


def critic_spec(obs_dim: int, act_dim: int, hidden=(400, 300), batch_norm: bool = True) -> list[dict]:
    # the action joins at the second hidden layer
    return mlp_spec(
        obs_dim, hidden, 1, out_activation="identity", batch_norm=batch_norm,
        concat_dim=act_dim, concat_at=1,
    )


def forward(
    net: Network, inputs: np.ndarray, mode: str = "train", *, update_stats: bool = True
) -> tuple[np.ndarray, ForwardCache]:
    """Run a batch through the network.

    In train mode batch-norm layers use batch statistics and (unless
    ``update_stats`` is false) fold them into the running averages. Eval mode
    reads running statistics only and never mutates ``net``.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected a 2-D batch, got shape {x.shape}")
    in_dim, _ = _check_spec(net.spec)
    if x.shape[1] != in_dim:
        raise ValueError(f"input width {x.shape[1]} does not match network input {in_dim}")
    if not np.isfinite(x).all():
        raise ValueError("non-finite network input")

    extra_total = sum(int(l["dim"]) for l in net.spec if l["kind"] == "concat")
    base = in_dim - extra_total
    cache = ForwardCache(net.spec, mode, base)
    h = x[:, :base]
    col = base
    n = x.shape[0]
    for i, layer in enumerate(net.spec):
        kind = layer["kind"]
        if kind == "dense":
            w, b = net.dense_layer(i)
            cache.entries.append(h)
            h = h @ w.T
            h += b
        elif kind == "batchnorm":
            gain, shift = net.params[f"{i}.gain"], net.params[f"{i}.shift"]
            if mode == "train":
                if n < 2:
                    raise ValueError("train-mode batch norm needs a batch of at least 2")
                h, xhat, inv_std, mean, var = _kernels.batchnorm_train(
                    np.ascontiguousarray(h), gain, shift, net.epsilon)
                cache.entries.append((xhat, inv_std))
                if update_stats:
                    m = net.momentum
                    rm, rv = net.buffers[f"{i}.running_mean"], net.buffers[f"{i}.running_var"]
                    rm *= m
                    rm += (1.0 - m) * mean
                    rv *= m
                    rv += (1.0 - m) * var
            else:
                mean = net.buffers[f"{i}.running_mean"]
                inv_std = 1.0 / np.sqrt(net.buffers[f"{i}.running_var"] + net.epsilon)
                xhat = (h - mean) * inv_std
                cache.entries.append((xhat, inv_std))
                h = xhat * gain + shift
        elif kind == "relu":
            mask = h > 0
            cache.entries.append(mask)
            h = h * mask
        elif kind == "tanh":
            h = np.tanh(h)
            cache.entries.append(h)
        elif kind == "identity":
            cache.entries.append(None)
        elif kind == "concat":
            dim = int(layer["dim"])
            cache.entries.append((h.shape[1], col, dim))
            h = np.concatenate([h, x[:, col:col + dim]], axis=1)
            col += dim
    return h, cache


def backward(
    net: Network, cache: ForwardCache, output_grad: np.ndarray, *, param_grads: bool = True,
    concat_inputs_only: bool = False,
) -> GradientBundle:
    """Reverse-mode gradients of ``sum(output * output_grad)``.

    Train-mode batch-norm gradients include the dependence of the batch mean
    and variance on every sample. With ``param_grads=False`` only the input
    gradient is computed and ``params`` comes back empty. Adding
    ``concat_inputs_only`` stops at the first concat layer: only the columns
    fed in through concat layers get their gradient, the rest stay zero.
    """
    if cache.spec != net.spec or len(cache.entries) != len(net.spec):
        raise ContractError("forward cache does not belong to this network")
    stop = -1
    if concat_inputs_only:
        if param_grads:
            raise ValueError("concat_inputs_only requires param_grads=False")
        stop = min((i for i, l in enumerate(net.spec) if l["kind"] == "concat"), default=-1)
        if stop < 0:
            raise ValueError("network has no concat layer")
    g = np.asarray(output_grad, dtype=np.float64)
    in_dim = _check_spec(net.spec)[0]
    grads: dict[str, np.ndarray] = {}
    extra_grads: dict[int, np.ndarray] = {}
    for i in range(len(net.spec) - 1, -1, -1):
        kind = net.spec[i]["kind"]
        entry = cache.entries[i]
        if kind == "dense":
            h = entry
            w = net.params[f"{i}.weight"]
            if param_grads:
                grads[f"{i}.weight"] = g.T @ h
                grads[f"{i}.bias"] = g.sum(axis=0)
            g = g @ w
        elif kind == "batchnorm":
            xhat, inv_std = entry
            gain = net.params[f"{i}.gain"]
            if cache.mode == "train":
                g, dgain, dshift = _kernels.batchnorm_train_backward(
                    np.ascontiguousarray(g), xhat, inv_std, gain)
            else:
                dgain, dshift = (g * xhat).sum(axis=0), g.sum(axis=0)
                g = g * (gain * inv_std)
            if param_grads:
                grads[f"{i}.gain"] = dgain
                grads[f"{i}.shift"] = dshift
        elif kind == "relu":
            g = g * entry
        elif kind == "tanh":
            g = g * (1.0 - entry ** 2)
        elif kind == "concat":
            width, col, dim = entry
            extra_grads[col] = g[:, width:width + dim]
            g = g[:, :width]
            if i == stop:
                break
    input_gradient = np.zeros((g.shape[0], in_dim))
    if stop < 0:
        input_gradient[:, :cache.base_width] = g
    for col, eg in extra_grads.items():
        input_gradient[:, col:col + eg.shape[1]] = eg
    ordered = {name: grads[name] for name in net.params} if param_grads else {}
    return GradientBundle(ordered, input_gradient)


@dataclass
class AdamState:
    """Adam moments, stored flat in the network's parameter order."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0
    step_count: int = 0
    decay_mask: np.ndarray | None = None

    def moments(self, net: Network) -> dict[str, tuple[np.ndarray, np.ndarray]]:
        """Per-parameter (first, second) moment views."""
        out, offset = {}, 0
        for name, p in net.params.items():
            sl = slice(offset, offset + p.size)
            out[name] = (self.first_moment[sl].reshape(p.shape), self.second_moment[sl].reshape(p.shape))
            offset += p.size
        return out


def adam_state(net: Network, learning_rate: float, *, weight_decay: float = 0.0,
               beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8) -> AdamState:
    if learning_rate <= 0:
        raise ConfigError("learning rate must be positive")
    if weight_decay < 0:
        raise ConfigError("weight decay must be non-negative")
    if not (0.0 < beta1 < 1.0 and 0.0 < beta2 < 1.0):
        raise ConfigError("Adam betas must lie in (0, 1)")
    mask = np.concatenate([
        np.full(p.size, 1.0 if name.endswith(".weight") else 0.0) for name, p in net.params.items()
    ])
    n = mask.size
    return AdamState(np.zeros(n), np.zeros(n), learning_rate, beta1, beta2, epsilon,
                     weight_decay, 0, mask)


def adam_step(net: Network, grads: GradientBundle, state: AdamState) -> tuple[Network, AdamState]:
    """One bias-corrected Adam update, in place.

    Weight decay is plain L2 on dense weights: ``weight_decay * W`` is added to
    their gradient before the moment updates.
    """
    if grads.params.keys() != net.params.keys():
        raise ContractError("gradient names do not match network parameters")
    for name, g in grads.params.items():
        if g.shape != net.params[name].shape:
            raise ContractError(f"gradient shape mismatch for {name}")
    g = np.concatenate([g.ravel() for g in grads.params.values()])
    if g.size != state.first_moment.size:
        raise ContractError("optimizer state does not match network")
    if not np.isfinite(g).all():
        bad = [k for k, v in grads.params.items() if not np.isfinite(v).all()]
        raise NumericalError(f"non-finite gradient for {', '.join(bad)}; update rejected")
    if not net.is_flat():
        net.__post_init__()
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    lr_t = state.learning_rate * math.sqrt(1.0 - b2 ** t) / (1.0 - b1 ** t)
    eps_t = state.epsilon * math.sqrt(1.0 - b2 ** t)
    _kernels.adam_update(net.flat, g, state.first_moment, state.second_moment, state.decay_mask,
                         state.weight_decay, b1, b2, lr_t, eps_t)
    return net, state


def soft_update(target: Network, source: Network, tau: float) -> Network:
    """theta' <- tau * theta + (1 - tau) * theta', including running statistics."""
    if not 0.0 < tau <= 1.0:
        raise ConfigError("tau must lie in (0, 1]")
    if target.spec != source.spec:
        raise ContractError("soft_update between different architectures")
    if target.is_flat() and source.is_flat() and target.flat.size == source.flat.size:
        _blend(target.flat, source.flat, tau)
        for name, t in target.buffers.items():
            _blend(t, source.buffers[name], tau)
        return target
    src = source.tensors()
    for name, t in target.tensors().items():
        _blend(t, src[name], tau)
    return target


def _blend(t: np.ndarray, s: np.ndarray, tau: float) -> None:
    if tau == 1.0:
        np.copyto(t, s)
    elif t.flags.c_contiguous and s.flags.c_contiguous:
        _kernels.blend(t.reshape(-1), s.reshape(-1), tau)
    else:
        t *= 1.0 - tau
        t += tau * s


def save_checkpoint(path: str | Path, networks: dict[str, Network], meta: dict | None = None) -> Path:
    """Write ``path`` (JSON manifest) and ``path.with_suffix('.bin')``.

    The binary file is every tensor as little-endian float64, in manifest order.
    """
    path = Path(path)
    manifest: dict[str, Any] = {"format": "deepdpg-checkpoint/1", "meta": meta or {}, "networks": []}
    chunks = []
    offset = 0
    for net_name, net in networks.items():
        entries = []
        for name, arr in net.tensors().items():
            kind = "param" if name in net.params else "buffer"
            entries.append({"name": name, "kind": kind, "shape": list(arr.shape), "offset": offset})
            chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
            offset += arr.size
        manifest["networks"].append({
            "name": net_name, "spec": net.spec, "momentum": net.momentum,
            "epsilon": net.epsilon, "tensors": entries,
        })
    bin_path = path.with_suffix(".bin")
    manifest["data_file"] = bin_path.name
    path.parent.mkdir(parents=True, exist_ok=True)
    bin_path.write_bytes(b"".join(chunks))
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_checkpoint(path: str | Path) -> tuple[dict[str, Network], dict]:
    path = Path(path)
    manifest = json.loads(path.read_text())
    data = np.frombuffer((path.parent / manifest["data_file"]).read_bytes(), dtype="<f8")
    networks = {}
    for entry in manifest["networks"]:
        params, buffers = {}, {}
        for t in entry["tensors"]:
            size = int(np.prod(t["shape"], dtype=np.int64))
            arr = data[t["offset"]:t["offset"] + size].astype(np.float64).reshape(t["shape"])
            (params if t["kind"] == "param" else buffers)[t["name"]] = arr
        net = Network(entry["spec"], params, buffers, entry["momentum"], entry["epsilon"])
        _check_spec(net.spec)
        networks[entry["name"]] = net
    return networks, manifest["meta"]
