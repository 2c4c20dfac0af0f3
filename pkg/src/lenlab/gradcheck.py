"""Finite-difference check of a whole model's parameter gradients.

Runs in 64-bit precision. Every parameter tensor is checked; ``per_tensor``
limits the check to a seeded random subset of elements per tensor (the full
sweep needs two forward passes per parameter).
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import model as M
from . import tensor as T

# central-difference step and the gradient magnitude below which errors are measured absolutely
STEP = 1e-5
FLOOR = 1e-5
BATCH = [([5, 6, 7, 8, 9, 10], [7, 8, M.EOS_ID]), ([11, 5, 6], [9, M.EOS_ID])]


@dataclass
class GradCheckResult:
    scheme: str
    max_rel_err: float
    worst_parameter: str
    checked: int
    total: int
    seconds: float


def check_model_gradients(scheme: str, per_tensor: int | None = None, seed: int = 0, d_model: int = 32,
                          layers: int = 2) -> GradCheckResult:
    t0 = time.time()
    with T.precision(np.float64):
        cfg = M.ModelConfig(12, scheme, d_model=d_model, enc_layers=layers, enc_heads=4, dec_layers=layers,
                            dec_heads=4, enc_max_len=16, dec_max_len=8, head_dim=d_model // 4, ffn_mult=2)
        model = M.build_model(cfg, seed)
        T.backward(M.loss(model, BATCH))
        rng = np.random.default_rng(seed)
        worst, worst_name, checked = 0.0, "", 0
        for name, p in model.named_parameters():
            analytic = (p.grad if p.grad is not None else np.zeros_like(p.data)).reshape(-1)
            idx = (np.arange(p.size) if per_tensor is None or per_tensor >= p.size
                   else rng.choice(p.size, size=per_tensor, replace=False))
            numeric = T.numeric_grad(lambda _: M.loss(model, BATCH), p, STEP, idx).reshape(-1)
            err = T.relative_error(analytic[idx], numeric[idx], FLOOR)
            checked += len(idx)
            if err >= worst:
                worst, worst_name = err, name
        model.zero_grad()
    return GradCheckResult(scheme, worst, worst_name, checked, model.num_parameters(), time.time() - t0)
