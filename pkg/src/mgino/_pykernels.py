"""Pure numpy implementations of the hot kernels.

These are the reference versions; ``_ckernels`` must agree with them up to summation-order rounding.
"""

from __future__ import annotations

import numpy as np


def segment_sum(values: np.ndarray, ids: np.ndarray, num_segments: int) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    out = np.zeros((num_segments,) + values.shape[1:])
    if values.shape[0] == 0:
        return out
    flat = values.reshape(values.shape[0], -1)
    order = np.argsort(ids, kind="stable")
    sorted_ids = ids[order]
    starts = np.flatnonzero(np.r_[True, sorted_ids[1:] != sorted_ids[:-1]])
    sums = np.add.reduceat(flat[order], starts, axis=0)
    out.reshape(num_segments, -1)[sorted_ids[starts]] = sums
    return out


def radius_neighbors(queries: np.ndarray, sources: np.ndarray, radius: float):
    """CSR radius neighborhoods, ``dist <= radius``, ascending source index.

    Returns ``(indptr, indices, distances)``.
    """
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    sources = np.ascontiguousarray(sources, dtype=np.float64)
    nq = queries.shape[0]
    ns = sources.shape[0]
    if nq == 0 or ns == 0:
        return np.zeros(nq + 1, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0)
    r2 = radius * radius
    indptr = [0]
    idx_chunks = []
    dist_chunks = []
    chunk = max(1, int(2_000_000 // max(ns, 1)))
    for start in range(0, nq, chunk):
        q = queries[start:start + chunk]
        diff = q[:, None, :] - sources[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        rows, cols = np.nonzero(d2 <= r2)
        counts = np.bincount(rows, minlength=q.shape[0])
        indptr.extend((indptr[-1] + np.cumsum(counts)).tolist())
        idx_chunks.append(cols.astype(np.int64))
        dist_chunks.append(np.sqrt(d2[rows, cols]))
    return (np.asarray(indptr, dtype=np.int64), np.concatenate(idx_chunks),
            np.concatenate(dist_chunks))
