"""Hot numeric kernels: numba-jitted with pure-numpy fallbacks.

Four inner loops dominate non-BLAS runtime: the scatter-add behind embedding
gradients, the fused Adam update, filtered rank counting during evaluation,
and the self-excluding row means behind negative prototypes. Each exists in
two variants that produce bitwise-identical results:

  *_jit    -- numba @njit (no fastmath, so no reassociation)
  *_numpy  -- vectorized numpy

Selection happens once at import: numba is used when importable unless
``NADEX_NO_NUMBA`` is set to a non-empty value other than "0". The plain
names (``scatter_add_rows`` etc.) point at the active variant;
``benchmarks/backend_bench.py`` times both.
"""

import os

import numpy as np

try:
    from numba import njit

    _NUMBA_IMPORTED = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _NUMBA_IMPORTED = False

_flag = os.environ.get("NADEX_NO_NUMBA", "")
NUMBA_DISABLED = _flag not in ("", "0")
NUMBA_ENABLED = _NUMBA_IMPORTED and not NUMBA_DISABLED


# ---------------------------------------------------------------------------
# numpy fallbacks


def scatter_add_rows_numpy(out, ids, rows):
    """out[ids[k], :] += rows[k, :], duplicates accumulating in k order."""
    np.add.at(out, ids, rows)


def adam_update_numpy(param, grad, m, v, lr, beta1, beta2, eps, c1, c2):
    """One Adam update in place on param/m/v.

    ``c1``/``c2`` are the precomputed bias corrections 1 - beta**step; the
    caller computes them so both backends consume identical doubles.
    """
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * (grad * grad)
    m_hat = m / c1
    v_hat = v / c2
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)


def filtered_rank_numpy(scores, gold, excluded):
    """1-based rank of ``gold`` among non-excluded entities, ties pessimistic.

    ``excluded`` is a boolean mask of entities removed from the competition
    (the time-aware filter set minus the gold itself).
    """
    gold_score = scores[gold]
    live = ~excluded
    live[gold] = False
    higher = int(np.count_nonzero(live & (scores > gold_score)))
    ties = int(np.count_nonzero(live & (scores == gold_score)))
    return 1 + higher + ties


def exclusive_row_means_numpy(embeddings):
    """Row i holds the mean of every other row, computed by zeroing a
    diagonal so the accumulation order matches the jit variant exactly."""
    n, h = embeddings.shape
    out = np.empty((n, h), dtype=embeddings.dtype)
    keep = np.empty((n, 1), dtype=embeddings.dtype)
    for i in range(n):
        keep[:, 0] = 1.0
        keep[i, 0] = 0.0
        out[i] = (embeddings * keep).sum(axis=0)
    out /= n - 1
    return out


# ---------------------------------------------------------------------------
# numba variants

if _NUMBA_IMPORTED:

    @njit(cache=True)
    def scatter_add_rows_jit(out, ids, rows):
        for k in range(ids.shape[0]):
            r = ids[k]
            for c in range(rows.shape[1]):
                out[r, c] += rows[k, c]

    @njit(cache=True)
    def adam_update_jit(param, grad, m, v, lr, beta1, beta2, eps, c1, c2):
        for i in range(param.shape[0]):
            mi = beta1 * m[i] + (1.0 - beta1) * grad[i]
            vi = beta2 * v[i] + (1.0 - beta2) * (grad[i] * grad[i])
            m[i] = mi
            v[i] = vi
            param[i] -= lr * (mi / c1) / (np.sqrt(vi / c2) + eps)

    @njit(cache=True)
    def filtered_rank_jit(scores, gold, excluded):
        gold_score = scores[gold]
        higher = 0
        ties = 0
        for e in range(scores.shape[0]):
            if e == gold or excluded[e]:
                continue
            if scores[e] > gold_score:
                higher += 1
            elif scores[e] == gold_score:
                ties += 1
        return 1 + higher + ties

    @njit(cache=True)
    def exclusive_row_means_jit(embeddings):
        n, h = embeddings.shape
        out = np.zeros((n, h), dtype=embeddings.dtype)
        for i in range(n):
            for j in range(n):
                if j != i:
                    for c in range(h):
                        out[i, c] += embeddings[j, c]
        out /= n - 1
        return out

else:  # pragma: no cover
    scatter_add_rows_jit = None
    adam_update_jit = None
    filtered_rank_jit = None
    exclusive_row_means_jit = None


def _adam_update_jit_flat(param, grad, m, v, lr, beta1, beta2, eps, c1, c2):
    adam_update_jit(
        param.reshape(-1), grad.reshape(-1), m.reshape(-1), v.reshape(-1),
        lr, beta1, beta2, eps, c1, c2,
    )


if NUMBA_ENABLED:
    scatter_add_rows = scatter_add_rows_jit
    adam_update = _adam_update_jit_flat
    filtered_rank = filtered_rank_jit
    exclusive_row_means = exclusive_row_means_jit
    BACKEND = "numba"
else:
    scatter_add_rows = scatter_add_rows_numpy
    adam_update = adam_update_numpy
    filtered_rank = filtered_rank_numpy
    exclusive_row_means = exclusive_row_means_numpy
    BACKEND = "numpy"


def warmup():
    """Trigger jit compilation on tiny inputs so timed runs measure steady state."""
    if not NUMBA_ENABLED:
        return
    e = np.ones((2, 3))
    scatter_add_rows(np.zeros((2, 3)), np.array([0, 1], dtype=np.int64), e)
    adam_update(np.ones(3), np.ones(3), np.zeros(3), np.zeros(3),
                1e-3, 0.9, 0.999, 1e-8, 0.1, 0.001)
    filtered_rank(np.arange(4.0), 1, np.zeros(4, dtype=np.bool_))
    exclusive_row_means(e)
