# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, floor

cnp.import_array()


def segment_sum(values, cnp.int64_t[::1] ids, Py_ssize_t num_segments):
    arr = np.ascontiguousarray(values, dtype=np.float64)
    cdef Py_ssize_t n = arr.shape[0]
    cdef tuple tail = tuple(arr.shape[1:])
    out = np.zeros((num_segments,) + tail)
    if n == 0:
        return out
    cdef double[:, ::1] src = arr.reshape(n, -1)
    cdef double[:, ::1] dst = out.reshape(num_segments, -1)
    cdef Py_ssize_t m = src.shape[1]
    cdef Py_ssize_t i, j, k
    for i in range(n):
        k = ids[i]
        if k < 0 or k >= num_segments:
            raise IndexError("segment id out of range")
        for j in range(m):
            dst[k, j] += src[i, j]
    return out


def radius_neighbors(queries, sources, double radius):
    """Uniform-bin radius search; same output contract as the numpy version."""
    cdef double[:, ::1] q = np.ascontiguousarray(queries, dtype=np.float64)
    cdef double[:, ::1] s = np.ascontiguousarray(sources, dtype=np.float64)
    cdef Py_ssize_t nq = q.shape[0]
    cdef Py_ssize_t ns = s.shape[0]
    cdef Py_ssize_t dim = q.shape[1] if nq > 0 else (s.shape[1] if ns > 0 else 0)
    if nq == 0 or ns == 0:
        return np.zeros(nq + 1, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0)
    if dim > 3:
        raise ValueError("radius_neighbors supports at most 3 dimensions")
    cdef double r2 = radius * radius
    cdef double cell = radius if radius > 0 else 1.0
    cdef double lo[3]
    cdef Py_ssize_t nb[3]
    cdef Py_ssize_t d, i, j, c
    cdef double hi
    for d in range(3):
        lo[d] = 0.0
        nb[d] = 1
    for d in range(dim):
        lo[d] = s[0, d]
        hi = s[0, d]
        for i in range(ns):
            if s[i, d] < lo[d]:
                lo[d] = s[i, d]
            if s[i, d] > hi:
                hi = s[i, d]
        nb[d] = <Py_ssize_t>floor((hi - lo[d]) / cell) + 1
    cdef Py_ssize_t ncells = nb[0] * nb[1] * nb[2]
    # bin sources (counting sort keeps ascending index order inside each bin)
    cdef cnp.int64_t[::1] cell_of = np.empty(ns, dtype=np.int64)
    cdef cnp.int64_t[::1] start = np.zeros(ncells + 1, dtype=np.int64)
    cdef Py_ssize_t b[3]
    for i in range(ns):
        for d in range(3):
            b[d] = 0
        for d in range(dim):
            b[d] = <Py_ssize_t>floor((s[i, d] - lo[d]) / cell)
            if b[d] >= nb[d]:
                b[d] = nb[d] - 1
        c = (b[0] * nb[1] + b[1]) * nb[2] + b[2]
        cell_of[i] = c
        start[c + 1] += 1
    for c in range(ncells):
        start[c + 1] += start[c]
    cdef cnp.int64_t[::1] fill = np.array(start[:ncells], dtype=np.int64)
    cdef cnp.int64_t[::1] members = np.empty(ns, dtype=np.int64)
    for i in range(ns):
        c = cell_of[i]
        members[fill[c]] = i
        fill[c] += 1

    cdef cnp.int64_t[::1] indptr = np.zeros(nq + 1, dtype=np.int64)
    cap = max(16, 8 * nq)
    idx_arr = np.empty(cap, dtype=np.int64)
    dist_arr = np.empty(cap)
    cdef cnp.int64_t[::1] idx_buf = idx_arr
    cdef double[::1] dist_buf = dist_arr
    cdef cnp.int64_t[::1] scratch = np.empty(ns, dtype=np.int64)
    cdef double[::1] scratch_d = np.empty(ns)
    cdef Py_ssize_t count = 0, found, a0, a1, a2, p, e, t
    cdef Py_ssize_t lo_b[3]
    cdef Py_ssize_t hi_b[3]
    cdef double acc, diff, bq
    cdef cnp.int64_t key
    cdef double keyd
    for j in range(nq):
        for d in range(3):
            lo_b[d] = 0
            hi_b[d] = 0
        for d in range(dim):
            bq = floor((q[j, d] - lo[d]) / cell)
            lo_b[d] = <Py_ssize_t>bq - 1
            hi_b[d] = <Py_ssize_t>bq + 1
            if lo_b[d] < 0:
                lo_b[d] = 0
            if hi_b[d] > nb[d] - 1:
                hi_b[d] = nb[d] - 1
        found = 0
        for a0 in range(lo_b[0], hi_b[0] + 1):
            for a1 in range(lo_b[1], hi_b[1] + 1):
                for a2 in range(lo_b[2], hi_b[2] + 1):
                    c = (a0 * nb[1] + a1) * nb[2] + a2
                    for p in range(start[c], start[c + 1]):
                        i = members[p]
                        acc = 0.0
                        for d in range(dim):
                            diff = q[j, d] - s[i, d]
                            acc = acc + diff * diff
                        if acc <= r2:
                            scratch[found] = i
                            scratch_d[found] = acc
                            found += 1
        # insertion sort by source index
        for e in range(1, found):
            key = scratch[e]
            keyd = scratch_d[e]
            t = e - 1
            while t >= 0 and scratch[t] > key:
                scratch[t + 1] = scratch[t]
                scratch_d[t + 1] = scratch_d[t]
                t -= 1
            scratch[t + 1] = key
            scratch_d[t + 1] = keyd
        if count + found > cap:
            while count + found > cap:
                cap *= 2
            idx_arr = np.resize(idx_arr, cap)
            dist_arr = np.resize(dist_arr, cap)
            idx_buf = idx_arr
            dist_buf = dist_arr
        for e in range(found):
            idx_buf[count + e] = scratch[e]
            dist_buf[count + e] = sqrt(scratch_d[e])
        count += found
        indptr[j + 1] = count
    return np.asarray(indptr), idx_arr[:count].copy(), dist_arr[:count].copy()
