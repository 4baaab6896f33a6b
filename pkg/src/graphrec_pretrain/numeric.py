"""Numeric core: float64 tensors, seeded RNG streams, Adam, dropout, gradient checks.

Reverse-mode differentiation is delegated to torch autograd on CPU float64
tensors.  Everything stochastic draws from :class:`RngStream` (numpy's
counter-based Philox seeded through ``SeedSequence``) so that runs are
reproducible independently of torch's global generator.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import torch

DTYPE = torch.float64


class ConfigurationError(ValueError):
    """Raised for invalid shapes, ratios or hyperparameters."""


class NumericError(FloatingPointError):
    """Raised when a loss or gradient becomes non-finite."""


def _label_to_int(label: int | str) -> int:
    if isinstance(label, str):
        return zlib.crc32(label.encode("utf-8"))
    return int(label)


@dataclass(frozen=True)
class RngStream:
    """A seeded Philox stream with deterministic named substreams.

    ``child("dropout")`` always yields the same substream for the same parent,
    regardless of how many draws the parent has already made.
    """

    seed: int
    key: tuple[int, ...] = ()
    _gen: np.random.Generator | None = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=self.key)
        object.__setattr__(self, "_gen", np.random.Generator(np.random.Philox(ss)))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def child(self, *labels: int | str) -> "RngStream":
        return RngStream(self.seed, self.key + tuple(_label_to_int(l) for l in labels))

    # thin conveniences over the numpy generator
    def random(self, size=None):
        return self._gen.random(size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, x):
        return self._gen.permutation(x)

    def choice(self, a, size=None, replace=True):
        return self._gen.choice(a, size=size, replace=replace)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)


def tensor(values, requires_grad: bool = False) -> torch.Tensor:
    t = torch.as_tensor(np.asarray(values, dtype=np.float64), dtype=DTYPE).clone()
    t.requires_grad_(requires_grad)
    return t


def uniform_parameter(rng: RngStream, shape: Sequence[int], bound: float) -> torch.Tensor:
    return tensor(rng.uniform(-bound, bound, size=tuple(shape)), requires_grad=True)


def xavier_parameter(rng: RngStream, shape: Sequence[int]) -> torch.Tensor:
    """Xavier/Glorot uniform init for a 2-D (or 1-D, treated as 1 x n) weight."""
    fan_in = shape[0]
    fan_out = shape[1] if len(shape) > 1 else 1
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return uniform_parameter(rng, shape, bound)


def zeros_parameter(shape: Sequence[int]) -> torch.Tensor:
    return torch.zeros(tuple(shape), dtype=DTYPE, requires_grad=True)


# --------------------------------------------------------------------------- Adam


@dataclass
class AdamState:
    m: torch.Tensor
    v: torch.Tensor
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_parameter(cls, param: torch.Tensor, lr: float = 1e-3, **kw) -> "AdamState":
        return cls(torch.zeros_like(param, dtype=DTYPE), torch.zeros_like(param, dtype=DTYPE), lr=lr, **kw)


def adam_step(param: torch.Tensor, state: AdamState) -> None:
    """Bias-corrected Adam update of ``param`` in place.

    The gradient is read from ``param.grad`` and left untouched.
    """
    grad = param.grad
    if grad is None:
        raise ConfigurationError("parameter has no gradient")
    if grad.shape != state.m.shape or param.shape != state.m.shape:
        raise ConfigurationError(
            f"shape mismatch: param {tuple(param.shape)}, grad {tuple(grad.shape)}, moments {tuple(state.m.shape)}"
        )
    state.step += 1
    t = state.step
    with torch.no_grad():
        state.m.mul_(state.beta1).add_(grad, alpha=1.0 - state.beta1)
        state.v.mul_(state.beta2).addcmul_(grad, grad, value=1.0 - state.beta2)
        m_hat = state.m / (1.0 - state.beta1**t)
        v_hat = state.v / (1.0 - state.beta2**t)
        param.sub_(state.lr * m_hat / (v_hat.sqrt() + state.eps))


class Adam:
    """Adam over a fixed list of parameters."""

    def __init__(self, params: Iterable[torch.Tensor], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = [p for p in params if p.requires_grad]
        self.states = [
            AdamState.for_parameter(p, lr=lr, beta1=betas[0], beta2=betas[1], eps=eps) for p in self.params
        ]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for p, s in zip(self.params, self.states):
            if p.grad is None:
                continue
            adam_step(p, s)


# ------------------------------------------------------------------------ dropout


def apply_dropout(t: torch.Tensor, ratio: float, rng: RngStream | None, training: bool) -> torch.Tensor:
    """Inverted dropout; identity when not training or ``ratio == 0``."""
    if not 0.0 <= ratio < 1.0:
        raise ConfigurationError(f"dropout ratio must be in [0, 1), got {ratio}")
    if not training or ratio == 0.0:
        return t
    keep = rng.random(tuple(t.shape)) >= ratio
    mask = torch.from_numpy(keep.astype(np.float64) / (1.0 - ratio))
    return t * mask


# ---------------------------------------------------------------- gradient check


def finite_difference_check(
    loss_fn: Callable[[], torch.Tensor],
    params: Sequence[torch.Tensor],
    h: float = 1e-6,
    names: Sequence[str] | None = None,
) -> float:
    """Max over all entries of ``|g_analytic - g_fd| / max(1, |g_fd|)``.

    ``loss_fn`` must be deterministic and close over ``params``; entries are
    perturbed in place and restored.
    """
    if not 1e-6 <= h <= 1e-4:
        raise ConfigurationError(f"step h={h} outside the supported range")
    names = list(names) if names is not None else [f"param[{i}]" for i in range(len(params))]
    loss = loss_fn()
    if not torch.isfinite(loss):
        bad = [n for n, p in zip(names, params) if not torch.isfinite(p).all()]
        raise NumericError(f"non-finite loss {loss.item()}; non-finite entries in {bad or 'no parameter'}")
    grads = torch.autograd.grad(loss, list(params), allow_unused=True)
    worst = 0.0
    with torch.no_grad():
        for name, p, g in zip(names, params, grads):
            g = torch.zeros_like(p) if g is None else g
            flat = p.view(-1)
            gflat = g.reshape(-1)
            for idx in range(flat.numel()):
                orig = flat[idx].item()
                flat[idx] = orig + h
                up = loss_fn().item()
                flat[idx] = orig - h
                down = loss_fn().item()
                flat[idx] = orig
                if not (math.isfinite(up) and math.isfinite(down)):
                    raise NumericError(f"non-finite loss while perturbing {name}[{idx}]")
                fd = (up - down) / (2.0 * h)
                err = abs(gflat[idx].item() - fd) / max(1.0, abs(fd))
                worst = max(worst, err)
    return worst


def check_finite(value: torch.Tensor, where: str) -> None:
    if not torch.isfinite(value).all():
        raise NumericError(f"non-finite value in {where}")
