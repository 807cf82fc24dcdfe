"""Shared test oracles."""
import numpy as np

from grfpinn import diffcore as dc


def tape_grads(params, objective):
    """Gradients of ``objective()`` w.r.t. each parameter tensor via the tape."""
    with dc.Tape() as tape:
        out = objective()
    tape.backward(out)
    return [p.grad.copy() if p.grad is not None else np.zeros_like(p.value) for p in params]


def directional_error(params, objective, rng, step=1e-5):
    """|tape . d - central difference along d| / max(1, |tape . d|) for a random unit d."""
    grads = tape_grads(params, objective)
    dirs = [rng.normal(size=p.shape) for p in params]
    norm = np.sqrt(sum(float(np.sum(d * d)) for d in dirs))
    dirs = [d / norm for d in dirs]
    analytic = sum(float(np.sum(g * d)) for g, d in zip(grads, dirs))
    vals = []
    for sign in (1.0, -1.0):
        for p, d in zip(params, dirs):
            p.value += sign * step * d
        vals.append(float(objective().value))
        for p, d in zip(params, dirs):
            p.value -= sign * step * d
    fd = (vals[0] - vals[1]) / (2 * step)
    return abs(analytic - fd) / max(1.0, abs(analytic))


def coordinate_error(params, objective, step=1e-5):
    """Max per-coordinate relative error over every entry of every parameter."""
    grads = tape_grads(params, objective)
    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            up = float(objective().value)
            flat[i] = old - step
            down = float(objective().value)
            flat[i] = old
            fd = (up - down) / (2 * step)
            an = float(g.reshape(-1)[i])
            worst = max(worst, abs(an - fd) / max(1.0, abs(an)))
    return worst
