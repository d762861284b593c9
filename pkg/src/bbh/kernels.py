"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment
variable ``BBH_DISABLE_NUMBA`` is unset (or "0"). Both paths are always
importable as ``numpy_impl`` / ``numba_impl`` so they can be compared.
"""

import os
from types import SimpleNamespace

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None


def _env_disabled():
    return os.environ.get("BBH_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def _knn_d1_numpy(q, p):
    """Nearest neighbours per coordinate for 1-D samples.

    q: (n, P) posterior samples, p: (m, P) prior samples. Returns
    (num_dist, num_idx, den_dist, den_idx), each (n, P). Ties resolve to
    the first index.
    """
    n = q.shape[0]
    dqp = np.abs(q[:, None, :] - p[None, :, :])
    num_idx = np.argmin(dqp, axis=1)
    num_dist = np.take_along_axis(dqp, num_idx[:, None, :], axis=1)[:, 0, :]
    dqq = np.abs(q[:, None, :] - q[None, :, :])
    diag = np.arange(n)
    dqq[diag, diag, :] = np.inf
    den_idx = np.argmin(dqq, axis=1)
    den_dist = np.take_along_axis(dqq, den_idx[:, None, :], axis=1)[:, 0, :]
    return num_dist, num_idx, den_dist, den_idx


def _maxpool2_numpy(x):
    """2x2/stride-2 max pool on NHWC input (odd trailing rows/cols dropped)."""
    N, H, W, C = x.shape
    Ho, Wo = H // 2, W // 2
    win = x[:, : 2 * Ho, : 2 * Wo, :].reshape(N, Ho, 2, Wo, 2, C)
    win = win.transpose(0, 1, 3, 5, 2, 4).reshape(N, Ho, Wo, C, 4)
    arg = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, arg


def _maxpool2_backward_numpy(grad_out, arg, in_shape):
    N, H, W, C = in_shape
    Ho, Wo = grad_out.shape[1], grad_out.shape[2]
    g = np.zeros((N, Ho, Wo, C, 4))
    np.put_along_axis(g, arg[..., None], grad_out[..., None], axis=-1)
    g = g.reshape(N, Ho, Wo, C, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(N, 2 * Ho, 2 * Wo, C)
    dx = np.zeros(in_shape)
    dx[:, : 2 * Ho, : 2 * Wo, :] = g
    return dx


def _col2im_numpy(cols, padded_shape, kh, kw, stride):
    """Scatter-add patch gradients (N, Ho, Wo, kh, kw, C) into a padded image."""
    N, Hp, Wp, C = padded_shape
    Ho, Wo = cols.shape[1], cols.shape[2]
    dx = np.zeros(padded_shape)
    for i in range(kh):
        for j in range(kw):
            dx[:, i : i + stride * Ho : stride, j : j + stride * Wo : stride, :] += cols[:, :, :, i, j, :]
    return dx


def _adam_update_numpy(param, grad, m, v, lr, beta1, beta2, eps, c1, c2):
    """In-place bias-corrected Adam update of one flat parameter array."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * (grad * grad)
    denom = np.sqrt(v / c2)
    denom += eps
    param -= lr * (m / c1) / denom


numpy_impl = SimpleNamespace(
    name="numpy",
    adam_update=_adam_update_numpy,
    knn_d1=_knn_d1_numpy,
    maxpool2=_maxpool2_numpy,
    maxpool2_backward=_maxpool2_backward_numpy,
    col2im=_col2im_numpy,
)


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

def _build_numba_impl():
    njit = numba.njit(cache=True, nogil=True)

    @njit
    def knn_d1(q, p):
        n, P = q.shape
        m = p.shape[0]
        num_dist = np.empty((n, P))
        den_dist = np.empty((n, P))
        num_idx = np.empty((n, P), dtype=np.int64)
        den_idx = np.empty((n, P), dtype=np.int64)
        for k in range(P):
            for i in range(n):
                qi = q[i, k]
                best = np.inf
                arg = 0
                for j in range(m):
                    d = abs(qi - p[j, k])
                    if d < best:
                        best = d
                        arg = j
                num_dist[i, k] = best
                num_idx[i, k] = arg
                best = np.inf
                arg = 0
                for j in range(n):
                    if j == i:
                        continue
                    d = abs(qi - q[j, k])
                    if d < best:
                        best = d
                        arg = j
                den_dist[i, k] = best
                den_idx[i, k] = arg
        return num_dist, num_idx, den_dist, den_idx

    @njit
    def _maxpool2(x):
        N, H, W, C = x.shape
        Ho, Wo = H // 2, W // 2
        out = np.empty((N, Ho, Wo, C))
        arg = np.empty((N, Ho, Wo, C), dtype=np.int64)
        for b in range(N):
            for r in range(Ho):
                for s in range(Wo):
                    for c in range(C):
                        best = x[b, 2 * r, 2 * s, c]
                        a = 0
                        for t in range(1, 4):
                            v = x[b, 2 * r + t // 2, 2 * s + t % 2, c]
                            if v > best:
                                best = v
                                a = t
                        out[b, r, s, c] = best
                        arg[b, r, s, c] = a
        return out, arg

    @njit
    def _maxpool2_backward(grad_out, arg, dx):
        N, Ho, Wo, C = grad_out.shape
        for b in range(N):
            for r in range(Ho):
                for s in range(Wo):
                    for c in range(C):
                        t = arg[b, r, s, c]
                        dx[b, 2 * r + t // 2, 2 * s + t % 2, c] += grad_out[b, r, s, c]
        return dx

    @njit
    def _col2im(cols, dx, stride):
        N, Ho, Wo, kh, kw, C = cols.shape
        for b in range(N):
            for r in range(Ho):
                for s in range(Wo):
                    for i in range(kh):
                        for j in range(kw):
                            for c in range(C):
                                dx[b, r * stride + i, s * stride + j, c] += cols[b, r, s, i, j, c]
        return dx

    @njit
    def _adam(param, grad, m, v, lr, beta1, beta2, eps, c1, c2):
        for i in range(param.size):
            g = grad[i]
            mi = beta1 * m[i] + (1.0 - beta1) * g
            vi = beta2 * v[i] + (1.0 - beta2) * g * g
            m[i] = mi
            v[i] = vi
            param[i] -= lr * (mi / c1) / (np.sqrt(vi / c2) + eps)

    def adam_update(param, grad, m, v, lr, beta1, beta2, eps, c1, c2):
        if not (param.flags.c_contiguous and m.flags.c_contiguous and v.flags.c_contiguous):
            raise ValueError("adam_update needs C-contiguous parameter and moment arrays")
        _adam(param.reshape(-1), np.ascontiguousarray(grad, dtype=np.float64).reshape(-1),
              m.reshape(-1), v.reshape(-1), lr, beta1, beta2, eps, c1, c2)

    def maxpool2(x):
        return _maxpool2(np.ascontiguousarray(x, dtype=np.float64))

    def maxpool2_backward(grad_out, arg, in_shape):
        dx = np.zeros(in_shape)
        return _maxpool2_backward(np.ascontiguousarray(grad_out), arg, dx)

    def col2im(cols, padded_shape, kh, kw, stride):
        dx = np.zeros(padded_shape)
        return _col2im(np.ascontiguousarray(cols), dx, stride)

    def knn(q, p):
        return knn_d1(np.ascontiguousarray(q, dtype=np.float64), np.ascontiguousarray(p, dtype=np.float64))

    return SimpleNamespace(
        name="numba",
        adam_update=adam_update,
        knn_d1=knn,
        maxpool2=maxpool2,
        maxpool2_backward=maxpool2_backward,
        col2im=col2im,
    )


numba_impl = _build_numba_impl() if numba is not None else None

active = numba_impl if (numba_impl is not None and not _env_disabled()) else numpy_impl
BACKEND = active.name


def knn_d1(q, p):
    return active.knn_d1(q, p)


def maxpool2(x):
    return active.maxpool2(x)


def maxpool2_backward(grad_out, arg, in_shape):
    return active.maxpool2_backward(grad_out, arg, in_shape)


def col2im(cols, padded_shape, kh, kw, stride):
    return active.col2im(cols, padded_shape, kh, kw, stride)


def adam_update(param, grad, m, v, lr, beta1, beta2, eps, c1, c2):
    active.adam_update(param, grad, m, v, lr, beta1, beta2, eps, c1, c2)
