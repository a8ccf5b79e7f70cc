import numpy as np
import pytest
import torch

torch.set_num_threads(1)


def central_difference_check(loss_fn, params, h=1e-6, norms=None):
    """Largest per-tensor relative error between autograd and central differences.

    ``loss_fn`` takes no arguments and returns a scalar double tensor that
    depends on ``params`` (a dict of leaf tensors). A dict passed as ``norms``
    receives ``(analytic_norm, numeric_norm)`` per tensor.
    """
    for p in params.values():
        p.grad = None
    loss_fn().backward()
    # a parameter that does not reach the loss has no grad; its true gradient is zero
    analytic = {k: torch.zeros_like(p) if p.grad is None else p.grad.detach().clone() for k, p in params.items()}
    worst = {}
    with torch.no_grad():
        for name, p in params.items():
            flat = p.view(-1)
            numeric = torch.zeros_like(flat)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                up = loss_fn().item()
                flat[i] = orig - h
                down = loss_fn().item()
                flat[i] = orig
                numeric[i] = (up - down) / (2 * h)
            a = analytic[name].view(-1)
            # tensors whose gradient is zero (scale-invariant directions) compare absolutely
            denom = max(a.norm().item(), numeric.norm().item(), 1e-6)
            worst[name] = (a - numeric).norm().item() / denom
            if norms is not None:
                norms[name] = (a.norm().item(), numeric.norm().item())
    return worst


def leaf_params(module):
    return dict(module.named_parameters())


@pytest.fixture
def rng():
    return np.random.default_rng(0)
