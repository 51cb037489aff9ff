"""Independent float64 reference implementations used as test oracles.

Nothing here imports the package's ops; the loops are deliberately naive.
"""

from __future__ import annotations

import numpy as np


def conv2d_loops(x, k, b, stride=1, padding=0):
    """Direct nested-loop cross-correlation on one ``[C, H, W]`` sample."""
    x = np.asarray(x, np.float64)
    k = np.asarray(k, np.float64)
    c_in, h, w = x.shape
    c_out, _, kh, kw = k.shape
    xp = np.zeros((c_in, h + 2 * padding, w + 2 * padding))
    xp[:, padding:padding + h, padding:padding + w] = x
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((c_out, ho, wo))
    for o in range(c_out):
        for i in range(ho):
            for j in range(wo):
                acc = float(b[o])
                for c in range(c_in):
                    for u in range(kh):
                        for v in range(kw):
                            acc += xp[c, i * stride + u, j * stride + v] * k[o, c, u, v]
                out[o, i, j] = acc
    return out


def conv2d_offsets(x, k, b, stride=1, padding=0):
    """Same result as :func:`conv2d_loops`, summing over kernel offsets (faster)."""
    x = np.asarray(x, np.float64)
    k = np.asarray(k, np.float64)
    c_in, h, w = x.shape
    c_out, _, kh, kw = k.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((c_out, ho, wo)) + np.asarray(b, np.float64)[:, None, None]
    for u in range(kh):
        for v in range(kw):
            patch = xp[:, u:u + stride * (ho - 1) + 1:stride, v:v + stride * (wo - 1) + 1:stride]
            out += np.einsum("chw,oc->ohw", patch, k[:, :, u, v])
    return out


def maxpool_scan(x):
    """2x2/2 max pool by explicit window scan; also returns the argmax pattern."""
    x = np.asarray(x, np.float64)
    c, h, w = x.shape
    out = np.zeros((c, h // 2, w // 2))
    pattern = np.zeros((c, h // 2, w // 2), dtype=np.int64)
    for ch in range(c):
        for i in range(h // 2):
            for j in range(w // 2):
                window = [x[ch, 2 * i, 2 * j], x[ch, 2 * i, 2 * j + 1], x[ch, 2 * i + 1, 2 * j], x[ch, 2 * i + 1, 2 * j + 1]]
                best = 0
                for t in range(1, 4):
                    if window[t] > window[best]:
                        best = t
                out[ch, i, j] = window[best]
                pattern[ch, i, j] = best
    return out, pattern


def sigmoid64(z):
    return 1.0 / (1.0 + np.exp(-np.asarray(z, np.float64)))


def bce_scalar(p, t, eps=1e-7):
    p = min(max(float(p), eps), 1 - eps)
    return -(t * np.log(p) + (1 - t) * np.log(1 - p))


def adam_reference(w0, grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    """Textbook ADAM on a scalar, given the gradient at each step as a function."""
    w, m, v = float(w0), 0.0, 0.0
    trace = []
    for t in range(1, len(grads) + 1):
        g = grads[t - 1](w)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
        trace.append(w)
    return trace


# -- random small networks -------------------------------------------------


def random_net_spec(rng: np.random.Generator) -> dict:
    """A small single-branch or Siamese conv net with < 1k parameters."""
    while True:
        c = int(rng.integers(1, 3))
        h = w = int(rng.choice([4, 6, 8]))
        k = int(rng.integers(1, 4))
        stride = int(rng.integers(1, 3))
        pad = int(rng.integers(0, 2))
        c_out = int(rng.integers(1, 4))
        ho = (h + 2 * pad - k) // stride + 1
        wo = (w + 2 * pad - k) // stride + 1
        if ho < 1 or wo < 1:
            continue
        pool = bool(ho % 2 == 0 and wo % 2 == 0 and rng.random() < 0.6)
        flat = c_out * (ho // 2 if pool else ho) * (wo // 2 if pool else wo)
        siamese = bool(rng.random() < 0.5)
        merge = str(rng.choice(["concat", "subtract"])) if siamese else None
        hidden = int(rng.integers(2, 6))
        head_in = 2 * flat if merge == "concat" else flat
        n_params = c_out * c * k * k + c_out + hidden * head_in + hidden + hidden + 1
        if n_params <= 1000:
            return dict(c=c, h=h, w=w, k=k, stride=stride, pad=pad, c_out=c_out, pool=pool,
                        siamese=siamese, merge=merge, hidden=hidden, flat=flat, head_in=head_in,
                        n_params=n_params)


def random_net_params(spec: dict, rng: np.random.Generator) -> dict[str, np.ndarray]:
    s = spec
    return {
        "conv.kernel": rng.normal(0, 0.7, (s["c_out"], s["c"], s["k"], s["k"])),
        "conv.bias": rng.normal(0, 0.3, s["c_out"]),
        "fc1.weight": rng.normal(0, 0.7, (s["hidden"], s["head_in"])),
        "fc1.bias": rng.normal(0, 0.3, s["hidden"]),
        "fc2.weight": rng.normal(0, 0.7, (1, s["hidden"])),
        "fc2.bias": rng.normal(0, 0.3, 1),
    }


def random_net_inputs(spec: dict, rng: np.random.Generator, batch: int = 2):
    shape = (batch, spec["c"], spec["h"], spec["w"])
    a = rng.uniform(0, 1, shape)
    b = rng.uniform(0, 1, shape) if spec["siamese"] else None
    t = rng.integers(0, 2, batch).astype(float)
    return a, b, t


def net_loss64(spec: dict, params: dict[str, np.ndarray], a, b, t):
    """Float64 loss of the random net and its activation pattern (relu masks, pool argmax)."""
    pattern = []

    def branch(x):
        z = conv2d_offsets(x, params["conv.kernel"], params["conv.bias"], spec["stride"], spec["pad"])
        pattern.append(z > 0)
        z = np.maximum(z, 0)
        if spec["pool"]:
            z, arg = maxpool_scan(z)
            pattern.append(arg)
        return z.reshape(-1)

    losses = []
    for n in range(len(a)):
        ea = branch(a[n])
        if spec["siamese"]:
            eb = branch(b[n])
            merged = np.concatenate([ea, eb]) if spec["merge"] == "concat" else ea - eb
        else:
            merged = ea
        h1 = params["fc1.weight"] @ merged + params["fc1.bias"]
        pattern.append(h1 > 0)
        h1 = np.maximum(h1, 0)
        logit = (params["fc2.weight"] @ h1 + params["fc2.bias"])[0]
        losses.append(bce_scalar(sigmoid64(logit), t[n]))
    return float(np.mean(losses)), pattern


def _same_pattern(p, q) -> bool:
    return len(p) == len(q) and all(np.array_equal(x, y) for x, y in zip(p, q))


def finite_difference_grads(spec, params, a, b, t, h=1e-5, min_h=1e-9):
    """Central differences for every parameter element, in float64.

    If a +-h step changes the activation pattern (crossing a relu kink or
    a pool argmax switch), h is shrunk until both evaluations stay on the
    same smooth piece as the centre point.
    """
    _, base_pattern = net_loss64(spec, params, a, b, t)
    grads = {}
    for name, value in params.items():
        g = np.zeros_like(value, dtype=np.float64)
        for idx in np.ndindex(value.shape):
            step = h
            while True:
                plus = {k: v.copy() for k, v in params.items()}
                minus = {k: v.copy() for k, v in params.items()}
                plus[name][idx] += step
                minus[name][idx] -= step
                lp, pp = net_loss64(spec, plus, a, b, t)
                lm, pm = net_loss64(spec, minus, a, b, t)
                if (_same_pattern(pp, base_pattern) and _same_pattern(pm, base_pattern)) or step <= min_h:
                    break
                step /= 10
            g[idx] = (lp - lm) / (2 * step)
        grads[name] = g
    return grads


# -- float64 replica of the package's model families ------------------------


def encoder64(state: dict, blocks, x, prefix="encoder"):
    """Encoder forward on one ``[D, H, W]`` sample from a state dict, in float64."""
    h = np.asarray(x, np.float64)
    for i, (_, k, pool) in enumerate(blocks, start=1):
        h = conv2d_offsets(h, state[f"{prefix}.conv{i}.kernel"], state[f"{prefix}.conv{i}.bias"], 1, k // 2)
        h = np.maximum(h, 0)
        if pool:
            h = maxpool_scan(h)[0]
    w, b = state[f"{prefix}.embed.weight"], state[f"{prefix}.embed.bias"]
    return np.maximum(np.asarray(w, np.float64) @ h.reshape(-1) + b, 0)


def siamese_loss64(state: dict, blocks, merge, a, b, t):
    """Mean BCE of the Siamese model over pairs ``(a[n], b[n])``, float64."""

    def dense(name, v):
        return np.asarray(state[f"{name}.weight"], np.float64) @ v + state[f"{name}.bias"]

    losses = []
    for n in range(len(a)):
        ea, eb = encoder64(state, blocks, a[n]), encoder64(state, blocks, b[n])
        m = np.concatenate([ea, eb]) if merge == "concat" else ea - eb
        h = np.maximum(dense("head.fc1", m), 0)
        h = np.maximum(dense("head.fc2", h), 0)
        losses.append(bce_scalar(sigmoid64(dense("head.fc3", h)[0]), t[n]))
    return float(np.mean(losses))
