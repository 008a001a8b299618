"""Central finite-difference gradient checking for named parameter tensors."""

from __future__ import annotations

from typing import Callable

import torch


# Central stencils as (offset multiples of eps, weights); the derivative is
# sum(w * f(x + k * eps)) / eps.  The 5-point rule has O(eps^4) truncation
# error, which lets eps be large enough that float64 roundoff stays near 1e-13
# even for parameters whose true gradient is of order 1e-8.
STENCILS = {
    2: ((1, -1), (0.5, -0.5)),
    4: ((2, 1, -1, -2), (-1 / 12, 8 / 12, -8 / 12, 1 / 12)),
}
DEFAULT_EPS = {2: 1e-6, 4: 1e-3}


@torch.no_grad()
def finite_difference(loss_fn: Callable[[], torch.Tensor], param: torch.Tensor,
                      eps: float | None = None, order: int = 4) -> torch.Tensor:
    """Central-difference estimate of d loss / d param, entry by entry, perturbing in place.

    ``order=2`` is (f(x + eps) - f(x - eps)) / (2 eps); ``order=4`` is the 5-point rule.
    """
    offsets, weights = STENCILS[order]
    eps = DEFAULT_EPS[order] if eps is None else eps
    grad = torch.zeros_like(param)
    flat = param.view(-1)
    out = grad.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        total = 0.0
        for k, w in zip(offsets, weights):
            flat[i] = orig + k * eps
            total += w * float(loss_fn())
        flat[i] = orig
        out[i] = total / eps
    return grad


def relative_error(analytic: torch.Tensor, numeric: torch.Tensor, floor: float = 1e-12) -> float:
    """||a - n|| / max(||a||, ||n||); 0 when both are below ``floor``."""
    scale = max(analytic.norm().item(), numeric.norm().item())
    if scale < floor:
        return 0.0
    return (analytic - numeric).norm().item() / scale


def check_gradients(module: torch.nn.Module, loss_fn: Callable[[], torch.Tensor],
                    eps: float | None = None, order: int = 4) -> dict[str, float]:
    """Relative error between autograd and central differences for every parameter."""
    named = list(module.named_parameters())
    loss = loss_fn()
    grads = torch.autograd.grad(loss, [p for _, p in named], allow_unused=True)
    errors = {}
    for (name, p), g in zip(named, grads):
        if g is None:
            g = torch.zeros_like(p)
        errors[name] = relative_error(g, finite_difference(loss_fn, p, eps, order))
    return errors
