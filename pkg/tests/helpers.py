"""Small numeric helpers shared across test modules."""

import torch


def fd_gradient(f, theta0: torch.Tensor, h: float = 1e-4) -> torch.Tensor:
    """Central finite differences of a scalar function at theta0 (1-D, float64)."""
    g = torch.zeros_like(theta0)
    for i in range(theta0.numel()):
        tp, tm = theta0.clone(), theta0.clone()
        tp[i] += h
        tm[i] -= h
        g[i] = (f(tp) - f(tm)) / (2 * h)
    return g


def autograd_gradient(f, theta0: torch.Tensor) -> torch.Tensor:
    theta = theta0.clone().requires_grad_(True)
    f(theta).backward()
    return theta.grad.detach()


def max_rel_err(analytic: torch.Tensor, reference: torch.Tensor) -> float:
    return ((analytic - reference).abs() / reference.abs().clamp_min(1e-6)).max().item()
