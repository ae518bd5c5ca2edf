"""Analytic gradients of the training loss vs central finite differences."""

from __future__ import annotations

import numpy as np
import torch

from mrisynth.model import ModelConfig, build_model
from mrisynth.training import mse_loss

GRAD_CFG = ModelConfig(feature_size=8, window=2, depths=(1, 1), num_heads=(2, 4))


def finite_difference_check(
    n_samples: int = 24, h: float = 1e-5, seed: int = 7
) -> tuple[int, float]:
    """Sample parameters, compare autograd to (f(p+h)-f(p-h))/2h at float64.

    Returns (number checked, worst relative error).
    """
    module = build_model(GRAD_CFG, seed=3).to_module().double().train()
    rng = np.random.default_rng(seed)
    x = torch.tensor(rng.normal(size=(1, 3, 8, 8, 8)), dtype=torch.float64)
    y = torch.tensor(rng.normal(size=(1, 1, 8, 8, 8)), dtype=torch.float64)

    loss = mse_loss(y, module(x))
    loss.backward()
    params = [(name, p) for name, p in module.named_parameters() if p.grad is not None]

    def loss_value() -> float:
        with torch.no_grad():
            return float(mse_loss(y, module(x)))

    worst = 0.0
    checked = 0
    while checked < n_samples:
        name, p = params[int(rng.integers(len(params)))]
        idx = int(rng.integers(p.numel()))
        with torch.no_grad():
            flat = p.view(-1)
            orig = float(flat[idx])
            flat[idx] = orig + h
            up = loss_value()
            flat[idx] = orig - h
            down = loss_value()
            flat[idx] = orig
        fd = (up - down) / (2 * h)
        analytic = float(p.grad.view(-1)[idx])
        rel = abs(fd - analytic) / max(abs(fd), abs(analytic), 1e-8)
        worst = max(worst, rel)
        checked += 1
    return checked, worst


def test_analytic_gradients_match_finite_differences():
    checked, worst = finite_difference_check()
    assert checked >= 20
    assert worst < 1e-3, f"worst relative gradient error {worst:.3e}"


def test_gradients_flow_to_every_parameter():
    module = build_model(GRAD_CFG, seed=0).to_module().double().train()
    rng = np.random.default_rng(0)
    x = torch.tensor(rng.normal(size=(1, 3, 8, 8, 8)), dtype=torch.float64)
    y = torch.tensor(rng.normal(size=(1, 1, 8, 8, 8)), dtype=torch.float64)
    mse_loss(y, module(x)).backward()
    missing = [name for name, p in module.named_parameters() if p.grad is None]
    assert not missing, f"parameters without gradient: {missing[:5]}"
