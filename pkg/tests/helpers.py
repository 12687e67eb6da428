"""Shared test utilities: central finite-difference gradient checks."""
import numpy as np

from decolearn import tensor as T

FD_STEP = 1e-6
GRAD_RTOL = 1e-4


def fd_check(fn, leaves, seed=0, max_entries=40, h=FD_STEP, rtol=GRAD_RTOL, floor=1e-8):
    """Compare autodiff and central differences for ``sum(fn(*leaves) * R)``.

    ``R`` is a fixed random projection so every output entry contributes.
    A random subset of at most ``max_entries`` coordinates per leaf is probed.
    Returns the worst relative error seen.
    """
    rng = np.random.default_rng(seed)
    out = fn(*leaves)
    proj = rng.standard_normal(out.shape)

    def scalar():
        with T.no_grad():
            return float(np.sum(fn(*leaves).data * proj))

    for leaf in leaves:
        leaf.grad = None
    loss = T.sum_(T.mul(out, proj))
    T.backward(loss, inputs=leaves)
    worst = 0.0
    for leaf in leaves:
        flat = leaf.data.reshape(-1)
        g = leaf.grad.reshape(-1)
        idx = rng.choice(flat.size, size=min(max_entries, flat.size), replace=False)
        for i in idx:
            old = flat[i]
            flat[i] = old + h
            fp = scalar()
            flat[i] = old - h
            fm = scalar()
            flat[i] = old
            fd = (fp - fm) / (2 * h)
            # absolute slack for float64 round-off in the difference quotient
            slack = 1e-9 * max(1.0, abs(fp))
            err = max(abs(g[i] - fd) - slack, 0.0) / (abs(fd) + floor)
            worst = max(worst, err)
            assert err <= rtol, f"grad mismatch at {i}: autodiff {g[i]!r} vs fd {fd!r} (rel {err:.2e})"
    return worst


def leaf(data, complex_=False):
    return T.Tensor(np.array(data, dtype=np.float64), requires_grad=True,
                    dtype=T.COMPLEX if complex_ else T.REAL)


def away_from_zero(rng, shape, margin=0.05):
    """Random values with |x| > margin, keeping kinked primitives differentiable."""
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-300) * margin * 2 + x, x)
