"""Finite-difference audit of the full model's backward pass."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .boxes import BBox
from .config import RunConfig, gradcheck_config
from .heads import assign_targets, compute_losses, stack_targets
from .model import TrackerNet
from .optim import fd_errors

TOLERANCE = 1e-3


@dataclass
class GradcheckReport:
    groups: dict  # top-level component -> max relative error
    per_parameter: dict = field(repr=False)
    n_parameters: int = 0
    seconds: float = 0.0
    tolerance: float = TOLERANCE

    @property
    def max_error(self) -> float:
        return max(self.groups.values()) if self.groups else 0.0

    @property
    def passed(self) -> bool:
        return bool(self.max_error < self.tolerance)

    def lines(self) -> list:
        out = [f"{name:<10} max rel err {err:.3e}" for name, err in self.groups.items()]
        verdict = "PASS" if self.passed else "FAIL"
        out.append(f"overall    max rel err {self.max_error:.3e}  ({self.n_parameters} scalars, "
                   f"{self.seconds:.1f}s)  {verdict} at {self.tolerance:g}")
        return out


def gradcheck(cfg: Optional[RunConfig] = None, h: float = 1e-3, seed: int = 0,
              perturb: float = 0.02, max_params: Optional[int] = None) -> GradcheckReport:
    """Compare backprop against central differences for every parameter scalar.

    The model is built in float64 and every parameter is nudged by seeded
    N(0, ``perturb``) noise, so zero-initialized tables do not sit at a
    special point.  The IoU-derived targets q and GIoU weights p are computed
    once and held fixed, matching their stop-gradient role in training; that
    keeps the checked function smooth.  ``max_params`` caps the number of
    scalars per tensor (for quick smoke runs); ``None`` checks all of them.
    """
    cfg = cfg or gradcheck_config()
    mc = cfg.model
    rng = np.random.default_rng(seed)
    with T.default_dtype(np.float64):
        model = TrackerNet(mc)
        for p in model.parameters():
            p.data = p.data + rng.normal(0.0, perturb, p.shape)
        z = rng.normal(size=(1, mc.template_size, mc.template_size, 3))
        x = rng.normal(size=(1, mc.search_size, mc.search_size, 3))
        s = mc.search_size
        gt = BBox(0.3 * s, 0.35 * s, 0.3 * s, 0.25 * s)
        targets = stack_targets([assign_targets(gt, mc.search_grid, mc.stride)])

        def loss(frozen=None):
            tc = cfg.train
            return compute_losses(model(z, x), targets, mc.search_grid, mc.stride,
                                  loss_mode=mc.loss_mode, alpha=tc.vfl_alpha, gamma=tc.vfl_gamma,
                                  lambda_cls=tc.lambda_cls, lambda_reg=tc.lambda_reg, frozen=frozen)

        with T.no_grad():
            frozen = loss()
        params = list(model.parameters())
        start = time.perf_counter()
        errors = fd_errors(lambda: loss(frozen).total, params, h=h, limit=max_params)
        seconds = time.perf_counter() - start
    groups: dict = {}
    for name, err in errors.items():
        key = name.split(".", 1)[0]
        groups[key] = max(groups.get(key, 0.0), err)
    n = sum(min(p.size, max_params) if max_params else p.size for p in params)
    return GradcheckReport(groups, errors, n, seconds)
