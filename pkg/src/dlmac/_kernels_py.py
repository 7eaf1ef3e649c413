"""Pure-Python versions of the slot-loop kernels.

Same signatures and results as the compiled ``_kernels`` extension; used when
the extension is not built or when ``DLMAC_PURE_PYTHON=1``.

``csum`` arguments are float64 prefix sums with ``csum[k] = sum(rssi[:k])``, so
the trace has ``len(csum) - 1`` slots. A transmission decided at slot ``s``
with airtime ``D`` occupies slots ``s+1 .. s+D``.
"""


def _better(c, i, s, best):
    # earliest completion, then higher MCS (higher rate), then earlier start
    bc, bi, bs = best
    if c != bc:
        return c < bc
    if i != bi:
        return i > bi
    return s < bs


def _consider(csum, n, s, durations, p_r, sinr_min, tol, best):
    for i in range(len(durations)):
        d = durations[i]
        if s + d > n - 1:
            continue
        mean = (csum[s + d + 1] - csum[s + 1]) / d
        if p_r - mean >= sinr_min[i] - tol:
            c = s + d
            if best is None or _better(c, i, s, best):
                best = (c, i, s)
    return best


def gopt_decide(csum, t, horizon, durations, p_r, sinr_min, tol):
    """Best (start, mcs) over starts in ``[t, t + horizon]``; ``(-1, -1)`` if none."""
    n = len(csum) - 1
    durations = [int(d) for d in durations]
    sinr_min = [float(x) for x in sinr_min]
    best = None
    for s in range(t, min(t + horizon, n - 1) + 1):
        best = _consider(csum, n, s, durations, p_r, sinr_min, tol, best)
    if best is None:
        return -1, -1
    return best[2], best[1]


def gopt_next(csum, t, horizon, durations, p_r, sinr_min, tol):
    """Re-invoke :func:`gopt_decide` slot by slot until its start equals the
    current slot; returns that ``(start, mcs)`` or ``(-1, -1)`` if the trace ends
    first. Candidates are added incrementally as the horizon slides."""
    n = len(csum) - 1
    durations = [int(d) for d in durations]
    sinr_min = [float(x) for x in sinr_min]
    dmin = min(durations)
    best = None
    for s in range(t, min(t + horizon, n - 1) + 1):
        best = _consider(csum, n, s, durations, p_r, sinr_min, tol, best)
    while True:
        if best is not None and best[2] == t:
            return best[2], best[1]
        if best is None and t + horizon + 1 + dmin > n - 1:
            return -1, -1
        t += 1
        s = t + horizon
        if s <= n - 1:
            best = _consider(csum, n, s, durations, p_r, sinr_min, tol, best)


def csma_scan(rssi, t, end, threshold, difs_slots, phase, difs_remaining, backoff):
    """Advance the carrier-sense state machine from slot ``t`` up to ``end``.

    ``phase`` is 0 (DIFS sensing) or 1 (backoff). Returns
    ``(grant_slot, phase, difs_remaining, backoff)`` with ``grant_slot = -1``
    when no access was granted before ``end``.
    """
    for k in range(t, end):
        if rssi[k] >= threshold:
            phase = 0 if difs_slots else 1
            difs_remaining = difs_slots
            continue
        if phase == 0:
            difs_remaining -= 1
            if difs_remaining <= 0:
                phase = 1
        elif backoff == 0:
            return k, phase, difs_remaining, backoff
        else:
            backoff -= 1
    return -1, phase, difs_remaining, backoff
