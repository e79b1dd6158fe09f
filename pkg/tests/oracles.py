"""Independent reference implementations used by the tests.

Nothing here calls into the numpy paths it checks: the aggregation oracle
is scalar Python over plain lists, and the gradient oracle only evaluates
the loss.
"""

from __future__ import annotations

import math

import numpy as np

from fedsim.model import loss_and_accuracy


def fd_gradient(spec, params, batch, step=1e-5):
    """Central finite differences of the mean loss."""
    params = np.array(params, dtype=np.float64)
    out = np.empty_like(params)
    for i in range(params.size):
        up, down = params.copy(), params.copy()
        up[i] += step
        down[i] -= step
        out[i] = (loss_and_accuracy(spec, up, batch)[0]
                  - loss_and_accuracy(spec, down, batch)[0]) / (2 * step)
    return out


def max_relative_error(a, b, floor=1e-6):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def scalar_cosine(a, b):
    ab = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return max(-1.0, min(1.0, ab / (na * nb)))


def scalar_seafl(models, bases, sizes, base_rounds, global_w, t, alpha, mu, beta, theta):
    """Plain-list evaluation of the staleness/importance weighting and mixing.

    Returns ``(gammas, importances, raw, normalized, new_global)``.
    """
    total = sum(sizes)
    gammas, imps, raw = [], [], []
    for w_k, base, n_k, t_k in zip(models, bases, sizes, base_rounds):
        gamma = alpha * beta / ((t - t_k) + beta)
        delta = [x - y for x, y in zip(w_k, base)]
        s = mu * (scalar_cosine(delta, global_w) + 1.0) / 2.0
        gammas.append(gamma)
        imps.append(s)
        raw.append(n_k / total * (gamma + s))
    z = sum(raw)
    norm_w = [p / z for p in raw]
    fresh = [sum(norm_w[k] * models[k][i] for k in range(len(models)))
             for i in range(len(global_w))]
    new = [(1 - theta) * g + theta * f for g, f in zip(global_w, fresh)]
    return gammas, imps, raw, norm_w, new
