"""Central finite-difference check of autograd gradients along random directions."""
import torch


def directional_check(fn, tensors, n_dirs=3, eps=1e-6, seed=0):
    """Worst relative error between ``grad . v`` and the central difference along ``v``.

    ``fn()`` evaluates a scalar from the current contents of ``tensors``
    (parameters or inputs, float64, requires_grad set).
    """
    gen = torch.Generator().manual_seed(seed)
    value = fn()
    grads = torch.autograd.grad(value, tensors, allow_unused=True)
    grads = [torch.zeros_like(t) if g is None else g for t, g in zip(tensors, grads)]
    worst = 0.0
    for _ in range(n_dirs):
        dirs = [torch.randn(t.shape, generator=gen, dtype=t.dtype) for t in tensors]
        norm = torch.sqrt(sum((d * d).sum() for d in dirs))
        dirs = [d / norm for d in dirs]
        analytic = float(sum((g * d).sum() for g, d in zip(grads, dirs)))
        with torch.no_grad():
            for t, d in zip(tensors, dirs):
                t.add_(eps * d)
            plus = float(fn())
            for t, d in zip(tensors, dirs):
                t.sub_(2 * eps * d)
            minus = float(fn())
            for t, d in zip(tensors, dirs):
                t.add_(eps * d)
        numeric = (plus - minus) / (2 * eps)
        denom = max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic - numeric) / denom)
    return worst
