import numpy as np


def sgd_momentum_step(params, grads, velocity, lr, momentum=0.9):
    """One SGD-with-momentum update over parallel dicts of arrays.

    ``v <- momentum * v - lr * g`` then ``w <- w + v``.  Returns new
    ``(params, velocity)`` dicts; the inputs are not modified.
    """
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    if not 0 <= momentum < 1:
        raise ValueError("momentum must lie in [0, 1)")
    new_params, new_velocity = {}, {}
    for name, w in params.items():
        g, v = grads[name], velocity[name]
        if g.shape != w.shape or v.shape != w.shape:
            raise ValueError(
                f"shape mismatch for {name!r}: param {w.shape}, grad {g.shape}, velocity {v.shape}"
            )
        v = momentum * v - lr * g
        new_velocity[name] = v.astype(w.dtype, copy=False)
        new_params[name] = (w + v).astype(w.dtype, copy=False)
    return new_params, new_velocity


def zeros_like_params(params):
    return {name: np.zeros_like(w) for name, w in params.items()}
