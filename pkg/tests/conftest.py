"""Shared test helpers: finite-difference gradient checking."""

import numpy as np

from earnet import tensor as T


def fd_check(build_loss, params, rtol=1e-6, eps=1e-5, floor=1e-3):
    """Assert analytic gradients of a scalar-valued builder match central
    finite differences.

    ``build_loss`` is re-invoked per probe, so it must be deterministic and
    must read the parameters by reference. Everything runs in float64;
    callers are responsible for constructing float64 params.
    """
    with T.Tape() as tape:
        loss = build_loss()
    grads = tape.backward(loss, populate_grad=False)

    def f():
        return build_loss().item()

    numeric = T.finite_diff_oracle(f, params, eps=eps)
    for p in params:
        analytic = grads.get(p)
        assert analytic is not None, f"no gradient reached param of shape {p.shape}"
        err = T.max_relative_error(analytic, numeric[p], floor=floor)
        assert err < rtol, f"gradient mismatch {err:.3e} on shape {p.shape}"


def f64_param(rng: np.random.Generator, shape, scale=1.0) -> T.Parameter:
    return T.Parameter(rng.normal(scale=scale, size=shape), dtype=np.float64)
