"""AdamW with global-norm clipping, the step-based LR schedule, and the
finite-difference gradient oracle."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import tensor as T
from .tensor import Parameter


def clip_grad_norm(params: Sequence[Parameter], max_norm: float) -> float:
    """Scale all gradients in place so their joint L2 norm is at most ``max_norm``.

    Returns the norm measured before clipping.
    """
    total = float(np.sqrt(sum(float(np.sum(np.square(p.grad, dtype=np.float64)))
                              for p in params if p.grad is not None)))
    if max_norm is not None and max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total


@dataclass
class AdamWState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


class AdamW:
    """Decoupled-weight-decay Adam.

    ``groups`` is a list of ``(params, lr_scale)`` pairs; the effective
    learning rate of a group is ``lr * lr_scale``.
    """

    def __init__(self, groups, lr=1e-3, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.0, clip_norm=1.0):
        if groups and isinstance(groups[0], Parameter):
            groups = [(list(groups), 1.0)]
        self.groups = [(list(ps), float(scale)) for ps, scale in groups]
        self.state = AdamWState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps,
                                weight_decay=weight_decay)
        self.clip_norm = clip_norm

    @property
    def params(self) -> list:
        return [p for ps, _ in self.groups for p in ps]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float | None = None) -> float:
        """Apply one update; returns the pre-clipping gradient norm."""
        st = self.state
        if lr is not None:
            st.lr = lr
        params = self.params
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
            elif not np.all(np.isfinite(p.grad)):
                raise FloatingPointError(f"non-finite gradient in parameter {p.name!r}")
        norm = clip_grad_norm(params, self.clip_norm)
        st.step += 1
        bc1 = 1.0 - st.beta1 ** st.step
        bc2 = 1.0 - st.beta2 ** st.step
        for group, scale in self.groups:
            lr_g = st.lr * scale
            for p in group:
                key = id(p)
                g = p.grad
                m = st.m.get(key)
                if m is None:
                    m = st.m[key] = np.zeros_like(p.data)
                    st.v[key] = np.zeros_like(p.data)
                v = st.v[key]
                m *= st.beta1
                m += (1.0 - st.beta1) * g
                v *= st.beta2
                v += (1.0 - st.beta2) * g * g
                if st.weight_decay:
                    p.data *= 1.0 - lr_g * st.weight_decay
                update = (m / bc1) / (np.sqrt(v / bc2) + st.eps)
                p.data -= (lr_g * update).astype(p.dtype, copy=False)
        return norm


def lr_at(step: int, total_steps: int, base_lr: float, warmup_frac: float = 0.1,
          drop_frac: float = 0.7, drop_factor: float = 0.1) -> float:
    """Linear warmup, then constant, then a single drop by ``drop_factor``."""
    warmup = int(round(warmup_frac * total_steps))
    if warmup > 0 and step < warmup:
        return base_lr * (step + 1) / warmup
    if step >= int(round(drop_frac * total_steps)):
        return base_lr * drop_factor
    return base_lr


def fd_errors(f: Callable[[], T.Tensor], params: Sequence[Parameter], h: float = 1e-3,
              limit: Optional[int] = None) -> dict:
    """Per-parameter max relative error between backprop and central differences.

    ``f`` recomputes a scalar loss from the current parameter values.  Params
    are expected to hold float64 data.  The error for a coordinate is
    ``|analytic - numeric| / max(1, |numeric|)``.  ``limit`` checks only the
    first that many coordinates of each parameter.
    """
    for p in params:
        p.grad = None
    loss = f()
    T.backward(loss, params)
    analytic = {id(p): p.grad.astype(np.float64).copy() for p in params}
    errors = {}
    with T.no_grad():
        for p in params:
            flat = p.data.reshape(-1)
            n = flat.size if limit is None else min(limit, flat.size)
            num = np.empty(n)
            for i in range(n):
                orig = flat[i]
                flat[i] = orig + h
                fp = float(f().data)
                flat[i] = orig - h
                fm = float(f().data)
                flat[i] = orig
                num[i] = (fp - fm) / (2 * h)
            ana = analytic[id(p)].reshape(-1)[:n]
            err = np.abs(ana - num) / np.maximum(1.0, np.abs(num))
            errors[p.name or str(id(p))] = float(err.max()) if err.size else 0.0
    return errors


def fd_check(f: Callable[[], T.Tensor], params: Sequence[Parameter], h: float = 1e-3) -> float:
    """Max relative gradient error over every coordinate of ``params``."""
    errs = fd_errors(f, params, h)
    return max(errs.values()) if errs else 0.0
