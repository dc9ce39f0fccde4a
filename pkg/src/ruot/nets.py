"""Small feed-forward networks for the velocity, growth and log-density fields.

Every network takes a state ``x`` of shape ``(n, d)`` (or ``(d,)``) and a time
``t`` (scalar or shape ``(n,)``); time is appended to the state as the last
input coordinate. All parameters are float64 so that finite-difference checks
of the gradients are meaningful.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import torch
from torch import nn

from .errors import ConfigError, NumericError, ShapeError

DTYPE = torch.float64

_ACTIVATIONS: dict[str, Callable[[torch.Tensor], torch.Tensor]] = {
    "tanh": torch.tanh,
    "softplus": nn.functional.softplus,
    "silu": nn.functional.silu,
}

# Applied to the raw last layer; used to keep a growth rate on one side of zero.
_OUTPUT_MAPS: dict[str, Callable[[torch.Tensor], torch.Tensor]] = {
    "identity": lambda z: z,
    "softplus": nn.functional.softplus,
    "neg_softplus": lambda z: -nn.functional.softplus(z),
}


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_layers: tuple[int, ...] = (64, 64, 64)
    output_dim: int = 1
    activation: str = "tanh"
    output_activation: str = "identity"

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        if self.input_dim < 2:
            raise ConfigError(f"input_dim must be >= 2 (state + time), got {self.input_dim}")
        if self.output_dim < 1:
            raise ConfigError(f"output_dim must be positive, got {self.output_dim}")
        if any(h < 1 for h in self.hidden_layers):
            raise ConfigError(f"hidden layer widths must be positive, got {self.hidden_layers}")
        if self.activation not in _ACTIVATIONS:
            raise ConfigError(
                f"activation {self.activation!r} is not one of the smooth choices {sorted(_ACTIVATIONS)}"
            )
        if self.output_activation not in _OUTPUT_MAPS:
            raise ConfigError(f"unknown output_activation {self.output_activation!r}")

    @property
    def state_dim(self) -> int:
        return self.input_dim - 1

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim, *self.hidden_layers, self.output_dim]

    def n_params(self) -> int:
        sizes = self.layer_sizes
        return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_layers"] = list(self.hidden_layers)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MlpSpec":
        return cls(**d)


def as_time(t, n: int) -> torch.Tensor:
    """Broadcast a scalar or per-row time to a float64 tensor of shape ``(n,)``."""
    t = torch.as_tensor(t, dtype=DTYPE)
    if t.dim() == 0:
        return t.expand(n)
    if t.shape != (n,):
        raise ShapeError(f"time must be scalar or shape ({n},), got {tuple(t.shape)}")
    return t


class Mlp(nn.Module):
    """Fully connected network ``(x, t) -> R^output_dim``."""

    def __init__(self, spec: MlpSpec):
        super().__init__()
        self.spec = spec
        sizes = spec.layer_sizes
        self.layers = nn.ModuleList(
            nn.Linear(a, b, dtype=DTYPE) for a, b in zip(sizes[:-1], sizes[1:])
        )
        self._act = _ACTIVATIONS[spec.activation]
        self._out = _OUTPUT_MAPS[spec.output_activation]

    def forward(self, x, t) -> torch.Tensor:
        x = torch.as_tensor(x, dtype=DTYPE)
        single = x.dim() == 1
        if single:
            x = x.unsqueeze(0)
        if x.dim() != 2 or x.shape[1] != self.spec.state_dim:
            raise ShapeError(
                f"expected state of dimension {self.spec.state_dim}, got shape {tuple(x.shape)}"
            )
        h = torch.cat([x, as_time(t, x.shape[0]).unsqueeze(1)], dim=1)
        for layer in self.layers[:-1]:
            h = self._act(layer(h))
        out = self._out(self.layers[-1](h))
        return out[0] if single else out


def mlp_init(spec: MlpSpec, seed: int) -> Mlp:
    """Build a network with parameters drawn uniformly in ``±1/sqrt(fan_in)``.

    The output-layer bias is zero. Identical ``(spec, seed)`` give bitwise
    identical parameters.
    """
    net = Mlp(spec)
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for i, layer in enumerate(net.layers):
            bound = 1.0 / math.sqrt(layer.in_features)
            layer.weight.copy_(
                (torch.rand(layer.weight.shape, generator=gen, dtype=DTYPE) * 2 - 1) * bound
            )
            if i == len(net.layers) - 1:
                layer.bias.zero_()
            else:
                layer.bias.copy_(
                    (torch.rand(layer.bias.shape, generator=gen, dtype=DTYPE) * 2 - 1) * bound
                )
    return net


def mlp_forward(net: nn.Module, x, t) -> torch.Tensor:
    return net(x, t)


def _prepare_input(x) -> tuple[torch.Tensor, bool]:
    x = torch.as_tensor(x, dtype=DTYPE)
    single = x.dim() == 1
    if single:
        x = x.unsqueeze(0)
    if not x.requires_grad:
        x = x.detach().requires_grad_(True)
    return x, single


def mlp_grad_input(net: nn.Module, x, t, create_graph: bool = False) -> torch.Tensor:
    """Jacobian of the output with respect to the state.

    Returns shape ``(n, output_dim, d)``, or ``(output_dim, d)`` for a single
    state. One backward pass per output coordinate.
    """
    x, single = _prepare_input(x)
    with torch.enable_grad():
        y = net(x, t)
        if y.dim() == 1:
            y = y.unsqueeze(1)
        rows = []
        for j in range(y.shape[1]):
            (gj,) = torch.autograd.grad(
                y[:, j].sum(), x, create_graph=create_graph, retain_graph=True
            )
            rows.append(gj)
    jac = torch.stack(rows, dim=1)
    return jac[0] if single else jac


def scalar_grads(net: nn.Module, x: torch.Tensor, t: torch.Tensor, create_graph: bool = True):
    """Value, state gradient and time derivative of a scalar field.

    ``x`` of shape ``(n, d)`` and ``t`` of shape ``(n,)`` must already require
    grad if derivatives through them are wanted downstream. Returns
    ``(s, grad_x s, d_t s)`` with shapes ``(n,)``, ``(n, d)``, ``(n,)``.
    """
    with torch.enable_grad():
        if not x.requires_grad:
            x = x.detach().requires_grad_(True)
        if not t.requires_grad:
            t = t.detach().requires_grad_(True)
        s = net(x, t).reshape(-1)
        gx, gt = torch.autograd.grad(s.sum(), (x, t), create_graph=create_graph, allow_unused=True)
    # fields that ignore x or t get exact zero derivatives
    gx = torch.zeros_like(x) if gx is None else gx
    gt = torch.zeros_like(t) if gt is None else gt
    return s, gx, gt


def divergence(net: nn.Module, x: torch.Tensor, t, create_graph: bool = True):
    """Value and exact divergence of a vector field ``R^d -> R^d``.

    Uses ``d`` backward passes (trace of the full Jacobian).
    """
    with torch.enable_grad():
        if not x.requires_grad:
            x = x.detach().requires_grad_(True)
        v = net(x, t)
        div = torch.zeros(v.shape[0], dtype=DTYPE)
        for j in range(v.shape[1]):
            (gj,) = torch.autograd.grad(
                v[:, j].sum(), x, create_graph=create_graph, retain_graph=True
            )
            div = div + gj[:, j]
    return v, div


def grad_params(
    loss_fn: Callable[[], torch.Tensor], nets: Sequence[nn.Module]
) -> list[OrderedDict[str, torch.Tensor]]:
    """Exact gradient of a scalar loss with respect to the parameters of each net.

    Parameters the loss does not touch get a zero block.
    """
    with torch.enable_grad():
        loss = loss_fn()
        if loss.dim() != 0:
            raise ShapeError(f"loss must be a scalar, got shape {tuple(loss.shape)}")
        if not torch.isfinite(loss):
            raise NumericError(f"non-finite loss value {loss.item()}")
        named = [list(net.named_parameters()) for net in nets]
        flat = [p for group in named for _, p in group]
        grads = torch.autograd.grad(loss, flat, allow_unused=True)
    out, i = [], 0
    for group in named:
        d = OrderedDict()
        for name, p in group:
            g = grads[i]
            i += 1
            g = torch.zeros_like(p) if g is None else g
            if not torch.isfinite(g).all():
                raise NumericError(f"non-finite gradient in parameter {name!r}")
            d[name] = g
        out.append(d)
    return out


def get_flat_params(net: nn.Module) -> torch.Tensor:
    return torch.cat([p.detach().reshape(-1) for p in net.parameters()])


def set_flat_params(net: nn.Module, flat: torch.Tensor) -> None:
    flat = torch.as_tensor(flat, dtype=DTYPE)
    total = sum(p.numel() for p in net.parameters())
    if flat.numel() != total:
        raise ShapeError(f"expected {total} parameters, got {flat.numel()}")
    i = 0
    with torch.no_grad():
        for p in net.parameters():
            n = p.numel()
            p.copy_(flat[i : i + n].reshape(p.shape))
            i += n


def flatten_grads(grads: OrderedDict[str, torch.Tensor]) -> torch.Tensor:
    return torch.cat([g.reshape(-1) for g in grads.values()])


@dataclass
class FieldSet:
    """The three learned fields. ``g`` may be ``None`` for growth-free dynamics."""

    v: nn.Module
    g: nn.Module | None
    s: nn.Module
    extra: dict = field(default_factory=dict)

    def modules(self) -> list[nn.Module]:
        return [m for m in (self.v, self.g, self.s) if m is not None]


def build_fields(dim: int, seed: int, hidden=(64, 64, 64), activation="tanh",
                 growth_output="identity") -> FieldSet:
    """Fresh velocity, growth and log-density networks for ``dim``-dimensional states."""
    v = mlp_init(MlpSpec(dim + 1, tuple(hidden), dim, activation), seed)
    g = mlp_init(MlpSpec(dim + 1, tuple(hidden), 1, activation, growth_output), seed + 1)
    s = mlp_init(MlpSpec(dim + 1, tuple(hidden), 1, activation), seed + 2)
    return FieldSet(v, g, s)
