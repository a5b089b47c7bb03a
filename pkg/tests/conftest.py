import sys

import numpy as np
import pytest
import torch

from smmnet.data import SyntheticConfig, make_synthetic_dataset
from smmnet.verification import finite_diff_grad, relative_error


@pytest.fixture(scope="session")
def toy_dataset():
    return make_synthetic_dataset(SyntheticConfig(), seed=0)


def sample_coords(sizes, n, rng):
    """Pick ~n flat coordinates spread over tensors of the given sizes (at least 2 each)."""
    total = sum(sizes)
    picks = []
    for k, size in enumerate(sizes):
        m = min(size, max(2, int(round(n * size / total))))
        picks.append((k, rng.choice(size, size=m, replace=False)))
    return picks


def grad_check(loss_fn, params, n_coords=100, seed=0, epsilon=1e-6):
    """Compare autograd against central differences on sampled coordinates of ``params``.

    ``loss_fn()`` must rebuild the scalar loss from the current parameter
    values. Returns (analytic, numeric) flat arrays over the sampled coordinates.
    """
    rng = np.random.default_rng(seed)
    for p in params:
        p.grad = None
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    analytic, numeric = [], []
    for k, coords in sample_coords([p.numel() for p in params], n_coords, rng):
        p = params[k]
        g = grads[k]
        g = torch.zeros_like(p) if g is None else g
        analytic.append(g.detach().reshape(-1)[coords].numpy())
        base = p.detach().clone()

        def f(x, p=p, base=base):
            with torch.no_grad():
                p.copy_(torch.from_numpy(x).reshape(base.shape))
            with torch.no_grad():
                return float(loss_fn())

        numeric.append(finite_diff_grad(f, base.numpy(), epsilon, coords=list(coords)))
        with torch.no_grad():
            p.copy_(base)
    return np.concatenate(analytic), np.concatenate(numeric)


def assert_grads_close(analytic, numeric, tol=1e-4):
    err = relative_error(analytic, numeric)
    worst = int(np.argmax(err))
    assert err.max() < tol, (
        f"max relative error {err.max():.3e} at coord {worst}: "
        f"analytic {analytic[worst]!r} vs numeric {numeric[worst]!r}"
    )


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
