"""Shared test helpers: the central finite-difference gradient oracle."""

from __future__ import annotations

import numpy as np

from srmtlab import numkit as nk


def finite_difference_grad(fn, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar-valued ``fn`` at ``x``.

    ``fn`` maps a plain ndarray to a float and must not touch autodiff; this
    keeps the oracle independent of the tape it is used to check.
    """
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn(x)
        flat[i] = orig - h
        fm = fn(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(approx: np.ndarray, exact: np.ndarray) -> float:
    denom = max(np.abs(approx).max(), np.abs(exact).max(), 1e-8)
    return float(np.abs(approx - exact).max() / denom)


def check_gradient(build_loss, shapes: dict[str, tuple], seed: int = 0,
                   h: float = 1e-5, tol: float = 1e-4, values=None) -> float:
    """Compare tape gradients with the finite-difference oracle.

    ``build_loss`` receives a dict of nk.Tensor leaves (one per entry in
    ``shapes``) and returns a scalar nk.Tensor. Returns the worst relative
    error across all leaves and asserts it is below ``tol``. Pass ``values``
    to pin the evaluation point (e.g. away from relu kinks, where a central
    difference is not a valid derivative estimate).
    """
    if values is None:
        rng = np.random.default_rng(seed)
        values = {name: rng.standard_normal(shape) for name, shape in shapes.items()}

    leaves = {name: nk.parameter(v.copy()) for name, v in values.items()}
    with nk.Tape() as tape:
        loss = build_loss(leaves)
    nk.backward(tape, loss)

    worst = 0.0
    for name in shapes:
        def scalar_fn(x, _name=name):
            probe = {n: nk.Tensor(values[n]) if n != _name else nk.Tensor(x)
                     for n in shapes}
            return build_loss(probe).item()

        numeric = finite_difference_grad(scalar_fn, values[name].copy(), h=h)
        analytic = nk.grad_or_zeros(leaves[name])
        err = relative_error(analytic, numeric)
        assert err < tol, f"gradient check failed for {name}: rel err {err:.3e} >= {tol}"
        worst = max(worst, err)
    return worst
