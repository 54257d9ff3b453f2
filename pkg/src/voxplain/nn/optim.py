"""Adam and Nesterov momentum updates over dictionaries of arrays.

Both functions are pure: they return new parameter and state
dictionaries and leave their inputs untouched.
"""

import numpy as np

from ..exceptions import NonFiniteError


def _check_grads(grads):
    for key, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {key}", layer=key.split("/")[0])


def adam_step(params, grads, state=None, lr=2.7e-5, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update.

    Parameters
    ----------
    params, grads : dict of str -> ndarray
        Only keys present in ``grads`` are updated.
    state : dict or None
        ``{"step": int, "m": {...}, "v": {...}}``; None starts fresh.

    Returns
    -------
    (new_params, new_state)
    """
    _check_grads(grads)
    state = state or {"step": 0, "m": {}, "v": {}}
    t = state["step"] + 1
    m_new, v_new = dict(state["m"]), dict(state["v"])
    out = dict(params)
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for key, g in grads.items():
        m = beta1 * m_new.get(key, 0.0) + (1.0 - beta1) * g
        v = beta2 * v_new.get(key, 0.0) + (1.0 - beta2) * g * g
        m_new[key], v_new[key] = m, v
        out[key] = params[key] - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return out, {"step": t, "m": m_new, "v": v_new}


def nesterov_lookahead(params, state, momentum=0.9):
    """Parameters at which the next Nesterov gradient is evaluated."""
    if not state:
        return dict(params)
    vel = state["velocity"]
    return {k: (v + momentum * vel[k] if k in vel else v) for k, v in params.items()}


def nesterov_step(params, grads_at_lookahead, state=None, lr=0.001, momentum=0.9):
    """One Nesterov accelerated gradient update.

    ``velocity <- momentum * velocity - lr * grad(params + momentum * velocity)``
    then ``params <- params + velocity``. The caller evaluates the gradient
    at :func:`nesterov_lookahead`.
    """
    _check_grads(grads_at_lookahead)
    state = state or {"step": 0, "velocity": {}}
    vel = dict(state["velocity"])
    out = dict(params)
    for key, g in grads_at_lookahead.items():
        v = momentum * vel.get(key, 0.0) - lr * g
        vel[key] = v
        out[key] = params[key] + v
    return out, {"step": state["step"] + 1, "velocity": vel}
