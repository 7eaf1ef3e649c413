# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled slot-loop kernels. See ``_kernels_py`` for the reference semantics."""
import numpy as np
cimport numpy as cnp
from libc.stdint cimport int64_t

cnp.import_array()


cdef inline bint _better(long c, int i, long s, long bc, int bi, long bs) nogil:
    if c != bc:
        return c < bc
    if i != bi:
        return i > bi
    return s < bs


cdef inline void _consider(const double[::1] csum, long n, long s, const int64_t[::1] dur,
                           double p_r, const double[::1] smin, double tol,
                           long* bc, int* bi, long* bs) nogil:
    cdef int i
    cdef long d, c
    cdef double mean
    for i in range(dur.shape[0]):
        d = dur[i]
        if s + d > n - 1:
            continue
        mean = (csum[s + d + 1] - csum[s + 1]) / d
        if p_r - mean >= smin[i] - tol:
            c = s + d
            if bi[0] < 0 or _better(c, i, s, bc[0], bi[0], bs[0]):
                bc[0] = c
                bi[0] = i
                bs[0] = s


def gopt_decide(csum, long t, long horizon, durations, double p_r, sinr_min, double tol):
    cdef const double[::1] cs = np.ascontiguousarray(csum, dtype=np.float64)
    cdef const int64_t[::1] dur = np.ascontiguousarray(durations, dtype=np.int64)
    cdef const double[::1] smin = np.ascontiguousarray(sinr_min, dtype=np.float64)
    cdef long n = cs.shape[0] - 1
    cdef long bc = 0, bs = -1, s, hi
    cdef int bi = -1
    hi = t + horizon
    if hi > n - 1:
        hi = n - 1
    with nogil:
        for s in range(t, hi + 1):
            _consider(cs, n, s, dur, p_r, smin, tol, &bc, &bi, &bs)
    if bi < 0:
        return -1, -1
    return bs, bi


def gopt_next(csum, long t, long horizon, durations, double p_r, sinr_min, double tol):
    cdef const double[::1] cs = np.ascontiguousarray(csum, dtype=np.float64)
    cdef const int64_t[::1] dur = np.ascontiguousarray(durations, dtype=np.int64)
    cdef const double[::1] smin = np.ascontiguousarray(sinr_min, dtype=np.float64)
    cdef long n = cs.shape[0] - 1
    cdef long bc = 0, bs = -1, s, hi, dmin
    cdef int bi = -1, i
    dmin = dur[0]
    for i in range(dur.shape[0]):
        if dur[i] < dmin:
            dmin = dur[i]
    hi = t + horizon
    if hi > n - 1:
        hi = n - 1
    with nogil:
        for s in range(t, hi + 1):
            _consider(cs, n, s, dur, p_r, smin, tol, &bc, &bi, &bs)
        while True:
            if bi >= 0 and bs == t:
                break
            if bi < 0 and t + horizon + 1 + dmin > n - 1:
                break
            t += 1
            s = t + horizon
            if s <= n - 1:
                _consider(cs, n, s, dur, p_r, smin, tol, &bc, &bi, &bs)
    if bi < 0:
        return -1, -1
    return bs, bi


def csma_scan(rssi, long t, long end, double threshold, long difs_slots,
              int phase, long difs_remaining, long backoff):
    cdef const double[::1] r = np.ascontiguousarray(rssi, dtype=np.float64)
    cdef long k, grant = -1
    with nogil:
        for k in range(t, end):
            if r[k] >= threshold:
                phase = 0 if difs_slots else 1
                difs_remaining = difs_slots
                continue
            if phase == 0:
                difs_remaining -= 1
                if difs_remaining <= 0:
                    phase = 1
            elif backoff == 0:
                grant = k
                break
            else:
                backoff -= 1
    return grant, phase, difs_remaining, backoff
