"""Shared test utilities: central finite differences and small fixtures."""

from __future__ import annotations

import torch

from flexio.locoformer import rms_group_norm

FD_STEP = 1e-5
FD_TOL = 1e-3


def rel_err(a: torch.Tensor, b: torch.Tensor) -> float:
    scale = max(a.norm().item(), b.norm().item(), 1e-12)
    return (a - b).norm().item() / scale


def central_difference(fn, tensor: torch.Tensor, indices, h: float = FD_STEP) -> torch.Tensor:
    """d fn / d tensor.flat[i] for each ``i`` by central differences (in place, restored)."""
    flat = tensor.data.view(-1)
    out = torch.empty(len(indices), dtype=torch.float64)
    with torch.no_grad():
        for k, i in enumerate(indices):
            orig = flat[i].item()
            flat[i] = orig + h
            plus = fn().item()
            flat[i] = orig - h
            minus = fn().item()
            flat[i] = orig
            out[k] = (plus - minus) / (2 * h)
    return out


def gradient_errors(fn, tensors: dict[str, torch.Tensor], generator: torch.Generator,
                    max_per_tensor: int | None = None) -> dict[str, float]:
    """Relative error between autograd and finite differences for every tensor.

    ``fn`` must return a scalar built from ``tensors``. When ``max_per_tensor``
    is set only a random subset of entries of each tensor is probed.
    """
    names = list(tensors)
    loss = fn()
    grads = torch.autograd.grad(loss, [tensors[n] for n in names], allow_unused=True)
    errors = {}
    for name, grad in zip(names, grads):
        t = tensors[name]
        grad = torch.zeros_like(t) if grad is None else grad
        n = t.numel()
        if max_per_tensor is None or n <= max_per_tensor:
            idx = list(range(n))
        else:
            idx = torch.randperm(n, generator=generator)[:max_per_tensor].tolist()
        fd = central_difference(fn, t, idx)
        errors[name] = rel_err(fd, grad.reshape(-1)[idx].detach())
    return errors


def directional_error(fn, params: list[torch.Tensor], generator: torch.Generator, h: float = FD_STEP) -> float:
    """Compare grad·v with (f(θ+hv) - f(θ-hv)) / 2h for a random unit direction v."""
    loss = fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    dirs = [torch.randn(p.shape, generator=generator, dtype=p.dtype) for p in params]
    norm = torch.sqrt(sum((d**2).sum() for d in dirs))
    dirs = [d / norm for d in dirs]
    analytic = sum((g * d).sum() for g, d in zip(grads, dirs) if g is not None).item()
    with torch.no_grad():
        for p, d in zip(params, dirs):
            p.add_(h * d)
        plus = fn().item()
        for p, d in zip(params, dirs):
            p.sub_(2 * h * d)
        minus = fn().item()
        for p, d in zip(params, dirs):
            p.add_(h * d)
    numeric = (plus - minus) / (2 * h)
    return abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-12)


def randomize_(module: torch.nn.Module, generator: torch.Generator, scale: float = 0.5) -> torch.nn.Module:
    """Overwrite every parameter with Gaussian noise (so no branch is trivially zero)."""
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(scale * torch.randn(p.shape, generator=generator, dtype=p.dtype))
    return module


def tac_reference(layer, z: torch.Tensor) -> torch.Tensor:
    """Single-channel TAC written as three plain fully connected layers on one TF bin at a time."""
    w_in, b_in = layer.fc_in[0].weight, layer.fc_in[0].bias
    a_in = layer.fc_in[1].weight
    w_avg, b_avg = layer.fc_avg[0].weight, layer.fc_avg[0].bias
    a_avg = layer.fc_avg[1].weight
    w_cat, b_cat = layer.fc_cat.weight, layer.fc_cat.bias
    norm = layer.norm

    def prelu(v, a):
        return torch.where(v >= 0, v, a * v)

    d, t, f = z.shape
    out = torch.empty_like(z)
    for ti in range(t):
        for fi in range(f):
            x = z[:, ti, fi]
            h = prelu(w_in @ x + b_in, a_in)
            g = prelu(w_avg @ h + b_avg, a_avg)
            y = w_cat @ torch.cat([h, g]) + b_cat
            y = rms_group_norm(y, norm.groups, norm.weight, norm.bias, norm.eps)
            out[:, ti, fi] = x + y
    return out
