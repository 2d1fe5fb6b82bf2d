# cython: language_level=3
"""Compiled inner loops. Semantics mirror ``_pykernels`` operation for operation."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()

ctypedef cnp.int64_t i64
ctypedef cnp.uint8_t u8


def run_device(const i64[::1] idx, const double[::1] metric,
               const double[::1] loss_weak, const double[::1] loss_strong,
               const double[::1] thresholds, long P, long Q, long M,
               i64[::1] hist, i64[::1] sends_by_state, u8[::1] sent):
    cdef Py_ssize_t t, L = idx.shape[0]
    cdef long n = M
    cdef i64 k, n_sent = 0
    cdef double total = 0.0
    with nogil:
        for t in range(L):
            hist[n - Q] += 1
            k = idx[t]
            if n >= P and metric[k] >= thresholds[n - P]:
                sent[t] = 1
                total += loss_strong[k]
                sends_by_state[n - Q] += 1
                n_sent += 1
                n = n - P + Q
            else:
                sent[t] = 0
                total += loss_weak[k]
                n = n + Q
            if n > M:
                n = M
    return total, n_sent


def bucket_trajectory(const u8[::1] requests, long P, long Q, long M, i64[::1] out):
    cdef Py_ssize_t t, L = requests.shape[0]
    cdef long n = M
    with nogil:
        out[0] = n
        for t in range(L):
            if requests[t] and n >= P:
                n = n - P + Q
            else:
                n = n + Q
            if n > M:
                n = M
            out[t + 1] = n


def run_multi(const i64[:, ::1] idx, const i64[:, ::1] order,
              const double[::1] metric, const double[::1] loss_weak,
              const double[::1] loss_strong, const double[::1] thresholds,
              long P, long Q, long M, bint use_switch, long Ps, long Qs, long Ms,
              double[::1] loss_sums, i64[::1] attempts, i64[::1] forwarded,
              i64[::1] switch_hist, i64[::1] sum_hist,
              u8[:, ::1] sent, u8[:, ::1] fwd):
    cdef Py_ssize_t t, i, j, L = idx.shape[0], N = idx.shape[1]
    cdef long s, ns = Ms
    cdef i64 k
    cdef long[::1] n = np.full(N, M, dtype=np.int_)
    with nogil:
        for t in range(L):
            s = 0
            for i in range(N):
                s += n[i]
            sum_hist[s - N * Q] += 1
            if use_switch:
                switch_hist[ns - Qs] += 1
            for i in range(N):
                k = idx[t, i]
                if n[i] >= P and metric[k] >= thresholds[n[i] - P]:
                    sent[t, i] = 1
                    attempts[i] += 1
                    n[i] = n[i] - P + Q
                else:
                    sent[t, i] = 0
                    n[i] = n[i] + Q
                if n[i] > M:
                    n[i] = M
            if use_switch:
                for j in range(N):
                    i = order[t, j]
                    fwd[t, i] = 0
                    if sent[t, i]:
                        if ns >= Ps:
                            ns = ns - Ps
                            fwd[t, i] = 1
                ns = ns + Qs
                if ns > Ms:
                    ns = Ms
            else:
                for i in range(N):
                    fwd[t, i] = sent[t, i]
            for i in range(N):
                k = idx[t, i]
                if fwd[t, i]:
                    forwarded[i] += 1
                    loss_sums[i] += loss_strong[k]
                else:
                    loss_sums[i] += loss_weak[k]


def run_smart(const i64[:, ::1] idx, const double[::1] metric,
              const double[::1] loss_weak, const double[::1] loss_strong,
              const double[::1] thresholds, long P, long Q, long M,
              double[::1] loss_sums, i64[::1] sends, i64[::1] hist,
              i64[::1] sends_by_state, u8[:, ::1] sent):
    cdef Py_ssize_t t, i, j, L = idx.shape[0], N = idx.shape[1]
    cdef long n = M
    cdef i64 k, dev
    cdef double m
    cdef i64[::1] rank = np.empty(N, dtype=np.int64)
    with nogil:
        for t in range(L):
            hist[n - Q] += 1
            # stable insertion sort of devices by descending metric
            for i in range(N):
                m = metric[idx[t, i]]
                j = i
                while j > 0 and metric[idx[t, rank[j - 1]]] < m:
                    rank[j] = rank[j - 1]
                    j -= 1
                rank[j] = i
            for j in range(N):
                dev = rank[j]
                k = idx[t, dev]
                if n >= P and metric[k] >= thresholds[n - P]:
                    sent[t, dev] = 1
                    sends[dev] += 1
                    sends_by_state[n - Q] += 1
                    loss_sums[dev] += loss_strong[k]
                    n = n - P + Q
                else:
                    sent[t, dev] = 0
                    loss_sums[dev] += loss_weak[k]
                    n = n + Q
                if n > M:
                    n = M


def value_iteration(const double[::1] F, const double[::1] G, const double[::1] xs,
                    long P, long Q, long M, double gamma, double tol, long max_sweeps,
                    double[::1] V, i64[::1] choice, double[::1] history):
    cdef Py_ssize_t H = F.shape[0], S = M - Q + 1
    cdef Py_ssize_t lo, hi, mid, c, c_best, pos
    cdef long n, sweep = 0
    cdef double keep, snd, d, y, y_best, diff, resid = 0.0
    cdef bint changed
    cdef double[::1] Vn = np.zeros(S, dtype=np.float64)
    cdef i64[::1] prev = np.full(M - P + 1, -1, dtype=np.int64)
    cdef Py_ssize_t hlen = history.shape[0]
    with nogil:
        while sweep < max_sweeps:
            sweep += 1
            for n in range(Q, P):
                Vn[n - Q] = gamma * V[(M if n + Q > M else n + Q) - Q]
            changed = False
            for n in range(P, M + 1):
                keep = V[(M if n + Q > M else n + Q) - Q]
                snd = V[n - P]
                d = gamma * (keep - snd)
                # pos = number of breakpoints strictly below d
                lo = 0
                hi = H - 1
                while lo < hi:
                    mid = (lo + hi) >> 1
                    if xs[mid] < d:
                        lo = mid + 1
                    else:
                        hi = mid
                pos = lo
                c_best = -1
                y_best = 0.0
                c = pos + 1
                while c >= pos - 1:
                    if 0 <= c < H:
                        y = G[c] - F[c] * d
                        if c_best < 0 or y > y_best:
                            y_best = y
                            c_best = c
                    c -= 1
                Vn[n - Q] = gamma * keep + y_best
                if c_best != prev[n - P]:
                    changed = True
                prev[n - P] = c_best
            resid = 0.0
            for c in range(S):
                diff = fabs(Vn[c] - V[c])
                if diff > resid:
                    resid = diff
                V[c] = Vn[c]
            if sweep - 1 < hlen:
                history[sweep - 1] = resid
            if resid < tol and not changed:
                break
    for c in range(M - P + 1):
        choice[c] = prev[c]
    return sweep, resid, bool(resid < tol and not changed)
