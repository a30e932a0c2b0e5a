"""Compiled parallel-update step and run loops.

All randomness enters through a ``(n_agents, 4)`` block of uniforms per step:
column 0 picks the option, 1 decides a push attempt, 2 is the ticket in
conflict resolution and 3 is the exit coin.  The Python-facing step uses a
numpy ``Generator`` for the block; whole runs draw it from numba's per-thread
Mersenne Twister after seeding it with the run's own seed.
"""

from __future__ import annotations

import numba
import numpy as np

LEAVE = 8
NOPT = 10


@numba.njit(cache=True, nogil=True)
def _sample(cum_row, u):
    k = 0
    while k < NOPT - 1 and u >= cum_row[k]:
        k += 1
    return k


@numba.njit(cache=True, nogil=True)
def step_core(occ, pos, target, rate, cum, q_exit, gamma, u,
              claim_w, claim_who, touched, kind, pushee, flags):
    """One synchronous update.  Returns the number of agents that left.

    ``claim_w``/``claim_who`` are per-cell scratch arrays (zero / -1 on entry
    and restored on exit).  ``kind[a]`` records what agent ``a`` attempted:
    0 nothing, 1 move, 2 push, 3 leave.  ``flags[a]`` bit 1 marks a winner,
    bit 2 an agent already displaced this step.
    """
    n = pos.shape[0]
    n_cells = occ.shape[0]
    n_touched = 0
    out_w = 0.0
    out_who = -1
    for a in range(n):
        kind[a] = 0
        flags[a] = 0
        c = pos[a]
        if c < 0:
            continue
        k = _sample(cum[c], u[a, 0])
        if k == LEAVE:
            w = rate[c, LEAVE]
            out_w += w
            if u[a, 2] * out_w < w:
                out_who = a
            kind[a] = 3
            continue
        if k >= 8:
            continue
        t = target[c, k]
        if t < 0:
            continue
        w = rate[c, k]
        dest = -1
        if occ[t] < 0:
            dest = t
            kind[a] = 1
        elif gamma > 0.0 and u[a, 1] < gamma:
            z = target[t, k]
            if z >= 0 and occ[z] < 0:
                dest = z
                kind[a] = 2
                pushee[a] = occ[t]
        if dest < 0:
            continue
        if claim_who[dest] < 0:
            touched[n_touched] = dest
            n_touched += 1
        claim_w[dest] += w
        if u[a, 2] * claim_w[dest] < w:
            claim_who[dest] = a

    # winners of cell claims
    for m in range(n_touched):
        flags[claim_who[touched[m]]] |= 1
    exited = 0
    if out_who >= 0:
        flags[out_who] |= 1
        if u[out_who, 3] < q_exit:
            occ[pos[out_who]] = -1
            pos[out_who] = -1
            flags[out_who] |= 2
            exited = 1

    # direct moves first; their targets were empty before the step
    for m in range(n_touched):
        dest = touched[m]
        a = claim_who[dest]
        if kind[a] == 1:
            occ[pos[a]] = -1
            occ[dest] = a
            pos[a] = dest
            flags[a] |= 2

    # local pushes: neither party may take part in any other action
    for m in range(n_touched):
        dest = touched[m]
        a = claim_who[dest]
        if kind[a] != 2:
            continue
        b = pushee[a]
        if (flags[a] & 2) or (flags[b] & 3) or pos[b] < 0:
            continue
        mid = pos[b]
        occ[pos[a]] = -1
        occ[mid] = a
        occ[dest] = b
        pos[a] = mid
        pos[b] = dest
        flags[a] |= 2
        flags[b] |= 2

    for m in range(n_touched):
        dest = touched[m]
        claim_w[dest] = 0.0
        claim_who[dest] = -1
    return exited


@numba.njit(cache=True, nogil=True)
def _place(n_cells, n_agents, occ, pos):
    perm = np.arange(n_cells)
    for a in range(n_agents):
        r = a + int(np.random.random() * (n_cells - a))
        if r >= n_cells:
            r = n_cells - 1
        tmp = perm[a]
        perm[a] = perm[r]
        perm[r] = tmp
        pos[a] = perm[a]
        occ[perm[a]] = a


@numba.njit(cache=True, nogil=True)
def run_kernel(seed, n_agents, start, target, rate, cum, q_exit, gamma, meas, max_steps,
               series, occ_sum, occ_final):
    """Simulate one run until the corridor is empty or ``max_steps`` is hit.

    ``start`` < 0 places agents uniformly without replacement, otherwise a
    single agent starts in cell ``start``.  ``series[s]`` receives the count in
    the measurement cells after step ``s`` (``s = 0`` is the initial state) for
    as many steps as it holds; ``occ_sum[s, c]`` accumulates occupancy the same
    way.  Returns ``(steps, last_departure_step, max_count, remaining)``.
    """
    np.random.seed(seed)
    n_cells = target.shape[0]
    occ = np.full(n_cells, -1, np.int64)
    pos = np.full(n_agents, -1, np.int64)
    if start >= 0:
        pos[0] = start
        occ[start] = 0
    else:
        _place(n_cells, n_agents, occ, pos)
    claim_w = np.zeros(n_cells)
    claim_who = np.full(n_cells, -1, np.int64)
    touched = np.empty(n_cells, np.int64)
    kind = np.zeros(n_agents, np.int64)
    pushee = np.zeros(n_agents, np.int64)
    flags = np.zeros(n_agents, np.int64)
    u = np.empty((n_agents, 4))
    n_series = series.shape[0]
    n_occ = occ_sum.shape[0]

    count = 0
    for c in range(n_cells):
        if meas[c] and occ[c] >= 0:
            count += 1
    if n_series > 0:
        series[0] = count
    if n_occ > 0:
        for c in range(n_cells):
            if occ[c] >= 0:
                occ_sum[0, c] += 1
    max_count = count
    remaining = n_agents
    last = 0
    step = 0
    while remaining > 0 and step < max_steps:
        step += 1
        for a in range(n_agents):
            for r in range(4):
                u[a, r] = np.random.random()
        left = step_core(occ, pos, target, rate, cum, q_exit, gamma, u,
                         claim_w, claim_who, touched, kind, pushee, flags)
        if left > 0:
            remaining -= left
            last = step
        count = 0
        for c in range(n_cells):
            if meas[c] and occ[c] >= 0:
                count += 1
        if count > max_count:
            max_count = count
        if step < n_series:
            series[step] = count
        if step < n_occ:
            for c in range(n_cells):
                if occ[c] >= 0:
                    occ_sum[step, c] += 1
    for c in range(n_cells):
        occ_final[c] = occ[c]
    return step, last, max_count, remaining


@numba.njit(cache=True, nogil=True)
def ensemble_kernel(seeds, n_agents, target, rate, cum, q_exit, gamma, meas, max_steps,
                    series_sum, occ_sum, out):
    """Run one simulation per seed.  ``out[r] = (steps, last, max_count, remaining)``."""
    n_cells = target.shape[0]
    occ_final = np.empty(n_cells, np.int64)
    series = np.zeros(series_sum.shape[0], np.int64)
    for r in range(seeds.shape[0]):
        series[:] = 0
        steps, last, mx, rem = run_kernel(seeds[r], n_agents, -1, target, rate, cum, q_exit,
                                          gamma, meas, max_steps, series, occ_sum, occ_final)
        for s in range(series.shape[0]):
            series_sum[s] += series[s]
        out[r, 0] = steps
        out[r, 1] = last
        out[r, 2] = mx
        out[r, 3] = rem


@numba.njit(cache=True, nogil=True)
def single_agent_kernel(seeds, start, target, rate, cum, q_exit, max_steps, out):
    """Steps until a lone agent starting at ``start`` has left, one per seed."""
    n_cells = target.shape[0]
    occ_final = np.empty(n_cells, np.int64)
    meas = np.zeros(n_cells, np.bool_)
    series = np.zeros(0, np.int64)
    occ_sum = np.zeros((0, n_cells), np.int64)
    for r in range(seeds.shape[0]):
        steps, last, mx, rem = run_kernel(seeds[r], 1, start, target, rate, cum, q_exit, 0.0,
                                          meas, max_steps, series, occ_sum, occ_final)
        out[r] = last if rem == 0 else -1
