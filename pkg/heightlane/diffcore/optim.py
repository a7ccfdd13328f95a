"""Functional Adam with explicit, checkpointable state."""

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import torch


@dataclass
class AdamState:
    step: int = 0
    exp_avg: List[torch.Tensor] = field(default_factory=list)
    exp_avg_sq: List[torch.Tensor] = field(default_factory=list)


@torch.no_grad()
def adam_step(
    params: Sequence[torch.Tensor],
    grads: Sequence[torch.Tensor],
    state: AdamState,
    lr: float = 1e-3,
    betas: Tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> AdamState:
    """
    One bias-corrected Adam update, applied to params in place.

    Missing gradients (None) are treated as zero.

    Returns:
        AdamState: The advanced state (same object)
    """
    if not state.exp_avg:
        state.exp_avg = [torch.zeros_like(p) for p in params]
        state.exp_avg_sq = [torch.zeros_like(p) for p in params]
    state.step += 1
    beta1, beta2 = betas
    correction1 = 1.0 - beta1 ** state.step
    correction2 = 1.0 - beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.exp_avg, state.exp_avg_sq):
        if g is None:
            g = torch.zeros_like(p)
        m.mul_(beta1).add_(g, alpha=1.0 - beta1)
        v.mul_(beta2).addcmul_(g, g, value=1.0 - beta2)
        denom = (v / correction2).sqrt_().add_(eps)
        p.sub_(lr * (m / correction1) / denom)
    return state
