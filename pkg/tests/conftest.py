import numpy as np
import pytest


def central_fd(f, arr, idx, eps=1e-6):
    """Two-sided finite difference of scalar f() w.r.t. arr[idx], in place."""
    old = arr[idx]
    arr[idx] = old + eps
    fp = f()
    arr[idx] = old - eps
    fm = f()
    arr[idx] = old
    return (fp - fm) / (2.0 * eps)


def check_grad(f, arr, analytic, rng, samples=6, eps=1e-6, rtol=1e-4,
               atol=1e-9):
    """Compare analytic gradients against central differences at random
    entries; returns the worst relative error seen."""
    worst = 0.0
    flat = rng.choice(arr.size, size=min(samples, arr.size), replace=False)
    for fi in flat:
        idx = np.unravel_index(int(fi), arr.shape)
        fd = central_fd(f, arr, idx, eps=eps)
        an = analytic[idx]
        err = abs(fd - an)
        rel = err / max(abs(fd), abs(an), 1e-12)
        if err > atol and rel > worst:
            worst = rel
        assert err <= atol or rel <= rtol, (
            f"gradient mismatch at {idx}: fd={fd:.10g} analytic={an:.10g} "
            f"rel={rel:.3g}")
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(0)
