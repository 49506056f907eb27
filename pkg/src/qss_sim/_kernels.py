"""Hot numeric kernels, each with a numba path and a pure-numpy path.

The numba path is used when numba imports and ``QSS_DISABLE_NUMBA`` is unset
(or ``0``).  Both paths take and return the same arrays and agree to rounding
error; ``benchmarks/bench_kernels.py`` times them against each other.
"""

import os

import numpy as np

from . import qcore

try:
    import numba
except ImportError:  # pragma: no cover - numba is an optional accelerator
    numba = None

USE_NUMBA = numba is not None and os.environ.get("QSS_DISABLE_NUMBA", "0").lower() in ("", "0", "false", "no")


def _pair_coefficients() -> np.ndarray:
    """Coefficients of <phi_g|phi_h> for g < h as rows (A, B, C, D).

    With G = [[z, c], [conj(c), t]] the overlap is sum_kl (U_g^+ U_h)_kl G_kl,
    i.e. A z + B c + C conj(c) + D t.  The eight matrices are real.
    """
    rows = []
    for g in range(8):
        for h in range(g + 1, 8):
            m = (qcore.EIGHT_OPS[g].conj().T @ qcore.EIGHT_OPS[h]).real
            rows.append((m[0, 0], m[0, 1], m[1, 0], m[1, 1]))
    return np.ascontiguousarray(rows, dtype=np.float64)


PAIR_COEFFS = _pair_coefficients()  # shape (28, 4)


def _overlap_sum_grid_numpy(x, q, z, coeffs):
    t = 1.0 - z
    a, b, c, d = (coeffs[:, k][None, :] for k in range(4))
    re = a * z[:, None] + d * t[:, None] + 0.5 * (b + c) * x[:, None]
    im = 0.5 * (b - c) * q[:, None]
    return 2.0 * np.hypot(re, im).sum(axis=1)


def _replay_labels_numpy(start, a_mat, b_mat, table):
    codes = start.astype(np.int64).copy()
    h = 4
    for p in range(a_mat.shape[0]):
        codes = table[a_mat[p], codes]
        flip = b_mat[p] == 1
        codes[flip] = table[h, codes[flip]]
    return codes


if numba is not None:

    @numba.njit(cache=True)
    def _overlap_sum_grid_numba(x, q, z, coeffs):  # pragma: no cover - compiled
        n = x.shape[0]
        out = np.empty(n)
        for i in range(n):
            zi = z[i]
            ti = 1.0 - zi
            acc = 0.0
            for k in range(coeffs.shape[0]):
                re = coeffs[k, 0] * zi + coeffs[k, 3] * ti + 0.5 * (coeffs[k, 1] + coeffs[k, 2]) * x[i]
                im = 0.5 * (coeffs[k, 1] - coeffs[k, 2]) * q[i]
                acc += np.sqrt(re * re + im * im)
            out[i] = 2.0 * acc
        return out

    @numba.njit(cache=True)
    def _replay_labels_numba(start, a_mat, b_mat, table):  # pragma: no cover - compiled
        n = start.shape[0]
        out = np.empty(n, dtype=np.int64)
        for k in range(n):
            code = np.int64(start[k])
            for p in range(a_mat.shape[0]):
                code = table[a_mat[p, k], code]
                if b_mat[p, k] == 1:
                    code = table[4, code]
            out[k] = code
        return out


def overlap_sum_grid(x, q, z, use_numba=None) -> np.ndarray:
    """Sum over ordered pairs i != j of |<phi_i|phi_j>| at each (x, q, z) point.

    Evaluates the eight-state Gram entries from the scalar parameters alone,
    without building state vectors.  Inputs are broadcast to 1-D float arrays.
    """
    x, q, z = np.broadcast_arrays(*(np.asarray(v, dtype=np.float64) for v in (x, q, z)))
    shape = x.shape
    x, q, z = (np.ascontiguousarray(v).reshape(-1) for v in (x, q, z))
    fast = USE_NUMBA if use_numba is None else (use_numba and numba is not None)
    fn = _overlap_sum_grid_numba if fast else _overlap_sum_grid_numpy
    return fn(x, q, z, PAIR_COEFFS).reshape(shape)


def replay_labels(start_codes, a_mat, b_mat, use_numba=None) -> np.ndarray:
    """Push label codes through a sequence of encoding steps.

    ``a_mat[p, k]``/``b_mat[p, k]`` is party p's encoding of photon k; rows are
    applied in order.  Returns the final label codes (see ``LabelState.code``).
    """
    start = np.ascontiguousarray(start_codes, dtype=np.int64)
    a_mat = np.ascontiguousarray(a_mat, dtype=np.int64).reshape(-1, start.shape[0])
    b_mat = np.ascontiguousarray(b_mat, dtype=np.int64).reshape(-1, start.shape[0])
    table = np.ascontiguousarray(qcore.LABEL_TABLE, dtype=np.int64)
    fast = USE_NUMBA if use_numba is None else (use_numba and numba is not None)
    fn = _replay_labels_numba if fast else _replay_labels_numpy
    return fn(start, a_mat, b_mat, table)
