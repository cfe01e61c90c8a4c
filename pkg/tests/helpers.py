"""Independent oracles shared by the test modules."""

import numpy as np

from deepdpg import nn


def rel_err(a, b, floor=1e-4):
    """Elementwise relative error with a floor on the scale.

    The floor keeps exactly-zero analytic gradients (e.g. a batch-norm shift
    feeding another batch norm) from turning finite-difference noise into a
    huge relative error.
    """
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def central_diff(f, arr, h=1e-5):
    """Central differences of scalar ``f()`` w.r.t. every entry of ``arr`` (mutated in place, restored)."""
    out = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + h
        fp = f()
        arr[i] = old - h
        fm = f()
        arr[i] = old
        out[i] = (fp - fm) / (2 * h)
    return out


def check_gradients(net, x, mode, rng, h=1e-5):
    """Return the worst relative error over all parameter and input gradients."""
    y, cache = nn.forward(net, x, mode, update_stats=False)
    w = rng.normal(size=y.shape)
    g = nn.backward(net, cache, w)

    def objective():
        out, _ = nn.forward(net, x, mode, update_stats=False)
        return float((out * w).sum())

    worst = 0.0
    for name, p in net.params.items():
        fd = central_diff(objective, p, h)
        worst = max(worst, float(rel_err(g.params[name], fd).max()))
    fd_x = central_diff(objective, x, h)
    worst = max(worst, float(rel_err(g.input_gradient, fd_x).max()))
    return worst


def random_spec(rng, max_layers=3, max_units=16):
    """A random small stack mixing dense, batchnorm, concat and activations."""
    in_dim = int(rng.integers(1, 5))
    spec = []
    width = in_dim
    if rng.random() < 0.5:
        spec.append({"kind": "batchnorm", "dim": in_dim})
    n_dense = int(rng.integers(1, max_layers + 1))
    concat_at = int(rng.integers(0, n_dense)) if rng.random() < 0.5 and n_dense > 1 else -1
    for j in range(n_dense):
        if j == concat_at and j > 0:
            extra = int(rng.integers(1, 3))
            spec.append({"kind": "concat", "dim": extra})
            width += extra
        out = int(rng.integers(1, max_units + 1)) if j < n_dense - 1 else int(rng.integers(1, 4))
        spec.append({"kind": "dense", "in": width, "out": out})
        if j < n_dense - 1 and rng.random() < 0.5:
            spec.append({"kind": "batchnorm", "dim": out})
        spec.append({"kind": str(rng.choice(["relu", "tanh", "identity"]))})
        width = out
    return spec


def perturbed_network(spec, seed, scale=0.5):
    """Network with parameters pushed away from their init (so final layers are not ~0)."""
    net = nn.init_network(spec, seed)
    rng = np.random.default_rng(seed + 1)
    for p in net.params.values():
        p += scale * rng.normal(size=p.shape)
    for name, b in net.buffers.items():
        if name.endswith("running_var"):
            b[...] = rng.uniform(0.5, 2.0, size=b.shape)
        else:
            b[...] = rng.normal(size=b.shape)
    return net


def riccati_lqr(A, B, Q, R, Qf, H):
    """Finite-horizon discrete Riccati recursion for time-invariant LQ.

    Returns gains K_t (u = K_t x) and cost-to-go matrices P_t for
    cost sum 0.5 x'Qx + 0.5 u'Ru + 0.5 x_H' Qf x_H.
    """
    P = Qf.copy()
    Ks = [None] * H
    Ps = [None] * (H + 1)
    Ps[H] = P
    for t in range(H - 1, -1, -1):
        K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
        P = Q + A.T @ P @ A + A.T @ P @ B @ K
        P = 0.5 * (P + P.T)
        Ks[t] = K
        Ps[t] = P
    return Ks, Ps


def dare_gain(A, B, Q, R, iters=10000):
    """Infinite-horizon LQR gain by fixed-point iteration of the Riccati map."""
    P = Q.copy()
    for _ in range(iters):
        K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
        P_new = Q + A.T @ P @ A + A.T @ P @ B @ K
        if np.max(np.abs(P_new - P)) < 1e-13 * max(1.0, np.max(np.abs(P))):
            P = P_new
            break
        P = P_new
    K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    return K, P
