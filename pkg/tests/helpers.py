"""Shared test oracles: finite differences and tolerant comparisons."""

import numpy as np


def finite_difference(f, arrays, h=1e-5):
    """Central-difference gradient of scalar f with respect to each array.

    f is called with the (mutated in place, then restored) arrays and must
    return a float. Returns one gradient array per input.
    """
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f()
            flat[i] = orig - h
            fm = f()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def rel_error(got, want):
    """Normwise relative error, guarded for tiny references."""
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    denom = max(np.linalg.norm(want.ravel()), 1e-8)
    return np.linalg.norm((got - want).ravel()) / denom


def check_grads(build_loss, params, h=1e-5, tol=1e-4):
    """Assert tape gradients match central differences for every param.

    build_loss() must rebuild the scalar loss Tensor from the current
    parameter values each call.
    """
    loss = build_loss()
    for p in params:
        p.zero_grad()
    loss.backward()
    got = [p.grad.copy() for p in params]
    want = finite_difference(lambda: build_loss().item(),
                             [p.values for p in params], h=h)
    for g, w in zip(got, want):
        err = rel_error(g, w)
        assert err < tol, f"gradient mismatch: rel err {err:.3e}"
