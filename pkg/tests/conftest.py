import numpy as np
import pytest

from laud.tensor import Tensor


def numerical_grad(f, arr, eps=1e-6, indices=None):
    """Central finite differences of scalar ``f()`` w.r.t. entries of ``arr`` (mutated in place)."""
    flat = arr.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    out = {}
    for i in idx:
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        out[i] = (fp - fm) / (2 * eps)
    return out


def rel_error(a, b):
    """``|a - b| / max(|a|, |b|)`` in the 2-norm, so near-zero entries don't dominate."""
    a, b = np.ravel(np.asarray(a, dtype=np.float64)), np.ravel(np.asarray(b, dtype=np.float64))
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


def check_gradients(build, tensors, rng, n_probe=None, eps=1e-6):
    """Compare autodiff against finite differences for ``sum(build() * R)``.

    Returns the worst per-tensor relative error over the probed entries.
    """
    out = build()
    proj = rng.standard_normal(out.shape)

    def scalar():
        return float(np.sum(build().data * proj))

    for t in tensors:
        t.grad = None
    out = build()
    out.backward(proj)
    worst = 0.0
    for t in tensors:
        analytic = t.grad.reshape(-1)
        n = t.data.size
        idx = range(n) if n_probe is None or n <= n_probe else rng.choice(n, n_probe, replace=False)
        num = numerical_grad(scalar, t.data, eps, idx)
        keys = list(num)
        worst = max(worst, rel_error(analytic[keys], [num[i] for i in keys]))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def leaf(arr):
    return Tensor(np.array(arr, dtype=np.float64), requires_grad=True)
