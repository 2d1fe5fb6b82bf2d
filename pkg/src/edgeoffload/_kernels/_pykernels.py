"""Pure-Python reference kernels; same signatures and float semantics as the
compiled versions, so both backends give bit-identical results."""

import numpy as np


def run_device(idx, metric, loss_weak, loss_strong, thresholds, P, Q, M,
               hist, sends_by_state, sent):
    idx = idx.tolist()
    m_ = metric.tolist()
    lw = loss_weak.tolist()
    ls = loss_strong.tolist()
    th = thresholds.tolist()
    h = [0] * len(hist)
    sb = [0] * len(sends_by_state)
    out = bytearray(len(idx))
    n = M
    total = 0.0
    n_sent = 0
    for t, k in enumerate(idx):
        h[n - Q] += 1
        if n >= P and m_[k] >= th[n - P]:
            out[t] = 1
            total += ls[k]
            sb[n - Q] += 1
            n_sent += 1
            n = n - P + Q
        else:
            total += lw[k]
            n = n + Q
        if n > M:
            n = M
    hist += np.asarray(h, dtype=np.int64)
    sends_by_state += np.asarray(sb, dtype=np.int64)
    sent[:] = np.frombuffer(bytes(out), dtype=np.uint8)
    return total, n_sent


def bucket_trajectory(requests, P, Q, M, out):
    n = M
    traj = [n]
    for req in requests.tolist():
        if req and n >= P:
            n = n - P + Q
        else:
            n = n + Q
        if n > M:
            n = M
        traj.append(n)
    out[:] = traj


def run_multi(idx, order, metric, loss_weak, loss_strong, thresholds, P, Q, M,
              use_switch, Ps, Qs, Ms, loss_sums, attempts, forwarded,
              switch_hist, sum_hist, sent, fwd):
    L, N = idx.shape
    rows = idx.tolist()
    orders = order.tolist() if use_switch else None
    m_ = metric.tolist()
    lw = loss_weak.tolist()
    ls = loss_strong.tolist()
    th = thresholds.tolist()
    n = [M] * N
    ns = Ms
    sums = loss_sums.tolist()
    att = [0] * N
    fw = [0] * N
    sh = [0] * len(switch_hist)
    uh = [0] * len(sum_hist)
    sent_rows = []
    fwd_rows = []
    base = N * Q
    for t in range(L):
        row = rows[t]
        uh[sum(n) - base] += 1
        if use_switch:
            sh[ns - Qs] += 1
        a = [0] * N
        for i in range(N):
            k = row[i]
            ni = n[i]
            if ni >= P and m_[k] >= th[ni - P]:
                a[i] = 1
                att[i] += 1
                ni = ni - P + Q
            else:
                ni = ni + Q
            n[i] = M if ni > M else ni
        if use_switch:
            f = [0] * N
            for i in orders[t]:
                if a[i] and ns >= Ps:
                    ns = ns - Ps
                    f[i] = 1
            ns = ns + Qs
            if ns > Ms:
                ns = Ms
        else:
            f = a
        for i in range(N):
            k = row[i]
            if f[i]:
                fw[i] += 1
                sums[i] += ls[k]
            else:
                sums[i] += lw[k]
        sent_rows.append(a)
        fwd_rows.append(f)
    loss_sums[:] = sums
    attempts += np.asarray(att, dtype=np.int64)
    forwarded += np.asarray(fw, dtype=np.int64)
    switch_hist += np.asarray(sh, dtype=np.int64)
    sum_hist += np.asarray(uh, dtype=np.int64)
    sent[:] = np.asarray(sent_rows, dtype=np.uint8).reshape(L, N)
    fwd[:] = np.asarray(fwd_rows, dtype=np.uint8).reshape(L, N)


def run_smart(idx, metric, loss_weak, loss_strong, thresholds, P, Q, M,
              loss_sums, sends, hist, sends_by_state, sent):
    L, N = idx.shape
    rows = idx.tolist()
    m_ = metric.tolist()
    lw = loss_weak.tolist()
    ls = loss_strong.tolist()
    th = thresholds.tolist()
    sums = loss_sums.tolist()
    sd = [0] * N
    h = [0] * len(hist)
    sb = [0] * len(sends_by_state)
    sent_rows = []
    n = M
    for t in range(L):
        row = rows[t]
        h[n - Q] += 1
        a = [0] * N
        for dev in sorted(range(N), key=lambda i: -m_[row[i]]):
            k = row[dev]
            if n >= P and m_[k] >= th[n - P]:
                a[dev] = 1
                sd[dev] += 1
                sb[n - Q] += 1
                sums[dev] += ls[k]
                n = n - P + Q
            else:
                sums[dev] += lw[k]
                n = n + Q
            if n > M:
                n = M
        sent_rows.append(a)
    loss_sums[:] = sums
    sends += np.asarray(sd, dtype=np.int64)
    hist += np.asarray(h, dtype=np.int64)
    sends_by_state += np.asarray(sb, dtype=np.int64)
    sent[:] = np.asarray(sent_rows, dtype=np.uint8).reshape(L, N)


def value_iteration(F, G, xs, P, Q, M, gamma, tol, max_sweeps, V, choice, history):
    F = np.asarray(F)
    G = np.asarray(G)
    H = F.shape[0]
    lowstates = np.arange(Q, P)
    low_next = np.minimum(M, lowstates + Q) - Q
    hi_states = np.arange(P, M + 1)
    keep_idx = np.minimum(M, hi_states + Q) - Q
    send_idx = hi_states - P
    prev = np.full(M - P + 1, -1, dtype=np.int64)
    sweep = 0
    resid = 0.0
    converged = False
    v = np.array(V, dtype=np.float64)
    while sweep < max_sweeps:
        sweep += 1
        vn = np.empty_like(v)
        vn[lowstates - Q] = gamma * v[low_next]
        keep = v[keep_idx]
        d = gamma * (keep - v[send_idx])
        pos = np.searchsorted(xs, d, side="left")
        # candidate columns in descending hull index: first max wins ties
        cand = np.stack([pos + 1, pos, pos - 1], axis=1)
        valid = (cand >= 0) & (cand < H)
        cc = np.clip(cand, 0, H - 1)
        y = G[cc] - F[cc] * d[:, None]
        y = np.where(valid, y, -np.inf)
        j = np.argmax(y, axis=1)
        rows = np.arange(len(hi_states))
        best = cc[rows, j]
        vn[hi_states - Q] = gamma * keep + y[rows, j]
        changed = bool(np.any(best != prev))
        prev = best
        resid = float(np.max(np.abs(vn - v)))
        v = vn
        if sweep - 1 < history.shape[0]:
            history[sweep - 1] = resid
        if resid < tol and not changed:
            converged = True
            break
    V[:] = v
    choice[:] = prev
    return sweep, resid, converged
