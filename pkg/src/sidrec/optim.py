from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch


@dataclass
class AdamState:
    step: int = 0
    exp_avg: list = field(default_factory=list)
    exp_avg_sq: list = field(default_factory=list)

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls(0, [torch.zeros_like(p) for p in params], [torch.zeros_like(p) for p in params])

    def state_dict(self) -> dict:
        return {"step": self.step, "exp_avg": list(self.exp_avg), "exp_avg_sq": list(self.exp_avg_sq)}

    @classmethod
    def from_state_dict(cls, d: dict) -> "AdamState":
        return cls(int(d["step"]), list(d["exp_avg"]), list(d["exp_avg_sq"]))


@torch.no_grad()
def adam_step(params, grads, state: AdamState, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.0) -> AdamState:
    """In-place bias-corrected Adam update with L2 penalty added to the gradient.

    Raises FloatingPointError before touching anything if a gradient is non-finite.
    """
    params = list(params)
    grads = list(grads)
    if len(params) != len(grads) or len(params) != len(state.exp_avg):
        raise ValueError("params, grads and optimizer state disagree in length")
    for g in grads:
        if g is not None and not torch.isfinite(g).all():
            raise FloatingPointError("non-finite gradient; Adam step aborted")
    state.step += 1
    bc1 = 1 - beta1 ** state.step
    bc2 = 1 - beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.exp_avg, state.exp_avg_sq):
        if g is None:
            g = torch.zeros_like(p)
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {tuple(g.shape)} != parameter shape {tuple(p.shape)}")
        if weight_decay:
            g = g + weight_decay * p
        m.mul_(beta1).add_(g, alpha=1 - beta1)
        v.mul_(beta2).addcmul_(g, g, value=1 - beta2)
        denom = (v / bc2).sqrt_().add_(eps)
        p.addcdiv_(m, denom, value=-lr / bc1)
    return state


def lr_schedule(epoch: int, initial_lr: float = 1e-3, period: int = 5) -> float:
    """Halve the learning rate every ``period`` epochs (epoch counted from 0)."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return initial_lr * 0.5 ** math.floor(epoch / period)
