"""Central-finite-difference gradient checking shared by the test suite."""

import torch

FD_STEP = 1e-5


def central_difference_grad(fn, inputs: list[torch.Tensor], step: float = FD_STEP):
    """Numeric gradient of a scalar function w.r.t. each float64 input."""
    grads = []
    with torch.no_grad():
        for x in inputs:
            grad = torch.zeros_like(x)
            flat, grad_flat = x.reshape(-1), grad.reshape(-1)
            for idx in range(flat.numel()):
                orig = flat[idx].item()
                flat[idx] = orig + step
                hi = float(fn())
                flat[idx] = orig - step
                lo = float(fn())
                flat[idx] = orig
                grad_flat[idx] = (hi - lo) / (2.0 * step)
            grads.append(grad)
    return grads


def analytic_grad(fn, inputs: list[torch.Tensor]):
    for x in inputs:
        x.requires_grad_(True)
        if x.grad is not None:
            x.grad = None
    value = fn()
    grads = torch.autograd.grad(value, inputs, allow_unused=False)
    for x in inputs:
        x.requires_grad_(False)
    return [g.detach().clone() for g in grads]


def max_relative_error(analytic: torch.Tensor, numeric: torch.Tensor) -> float:
    diff = (analytic - numeric).abs()
    scale = torch.maximum(analytic.abs(), numeric.abs())
    floor = 1e-6 * max(float(scale.max()), 1.0)
    return float((diff / scale.clamp(min=floor)).max())


def check_gradients(fn, inputs: list[torch.Tensor], tolerance: float = 1e-4) -> float:
    """Compare autograd against central differences; returns the worst error."""
    analytic = analytic_grad(fn, inputs)
    numeric = central_difference_grad(fn, inputs)
    worst = max(max_relative_error(a, n) for a, n in zip(analytic, numeric))
    assert worst <= tolerance, f"gradient mismatch: max relative error {worst:.3e}"
    return worst
