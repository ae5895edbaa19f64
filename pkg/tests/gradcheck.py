"""Central finite differences for layer and network gradient checks."""

import numpy as np


def numeric_grad(fn, x: np.ndarray, h: float) -> np.ndarray:
    """d fn / d x by central differences; ``fn`` returns a float for the current ``x``."""
    grad = np.zeros(x.shape, dtype=np.float64)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        plus = fn()
        flat[i] = old - h
        minus = fn()
        flat[i] = old
        g[i] = (plus - minus) / (2 * h)
    return grad


def rel_error(analytic, numeric) -> float:
    """||analytic - numeric|| / ||numeric||."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(n), 1e-12))


def projected(out: np.ndarray, probe: np.ndarray) -> float:
    """Scalar objective sum(out * probe), accumulated in float64."""
    return float(np.sum(out.astype(np.float64) * probe))


def activation_pattern(net, x, rng_seed: int = 0):
    """Leaky-ReLU signs and max-pool argmaxes of a training-mode forward pass."""
    _, trace = net.forward(x, train=True, rng=np.random.default_rng(rng_seed))
    parts = []
    for spec, cache in zip(net.specs, trace.caches):
        if spec.kind == "leaky_relu":
            parts.append(cache.ravel())
        elif spec.kind == "max_pool3x3":
            parts.append(cache[0].ravel())
    return np.concatenate([p.astype(np.int64) for p in parts])


def network_numeric_grad(net, loss, x, param: np.ndarray, h: float):
    """Central differences for one parameter tensor, plus a mask of valid coordinates.

    A coordinate is valid when neither ``p + h`` nor ``p - h`` changes the
    activation pattern; across a kink of leaky ReLU or max pooling the
    difference quotient does not estimate the derivative.
    """
    base = activation_pattern(net, x)
    grad = np.zeros(param.shape, dtype=np.float64)
    valid = np.ones(param.shape, dtype=bool)
    flat, g, ok = param.reshape(-1), grad.reshape(-1), valid.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        plus, same_plus = loss(), np.array_equal(activation_pattern(net, x), base)
        flat[i] = old - h
        minus, same_minus = loss(), np.array_equal(activation_pattern(net, x), base)
        flat[i] = old
        g[i] = (plus - minus) / (2 * h)
        ok[i] = same_plus and same_minus
    return grad, valid


def clear_kinks(net, x, margin: float):
    """Shift biases so every conv/dense channel stays ``margin`` away from the leaky-ReLU kink.

    Even channels are pushed to the positive branch and odd ones to the
    negative branch, so both slopes are exercised. Pooling ties are not
    controlled; :func:`network_numeric_grad` masks those coordinates.
    """
    owner = 0
    for i, spec in enumerate(net.specs):
        if spec.kind not in ("conv3x3", "dense"):
            continue
        seen = {}
        net._run(net._to_internal(x), True, np.random.default_rng(0), False,
                 record=lambda k, s, out: seen.__setitem__(k, out))
        z = seen[i]
        axes = tuple(range(z.ndim - 1))
        positive = np.arange(z.shape[-1]) % 2 == 0
        shift = np.where(positive, margin - z.min(axis=axes), -margin - z.max(axis=axes))
        if i + 1 < len(net.specs) and net.specs[i + 1].kind == "leaky_relu":
            net.params[owner + 1] += shift.astype(net.params[owner + 1].dtype)
        owner += 2
