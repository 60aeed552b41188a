"""Compiled inner loops of the frame-synchronous decoder."""

import numpy as np
from numba import njit

NEG_INF = -np.inf


@njit(cache=True)
def _grow_f8(a, n):
    out = np.empty(max(2 * a.size, n, 16), dtype=a.dtype)
    out[:a.size] = a
    return out


@njit(cache=True)
def _grow_i8(a, n):
    out = np.empty(max(2 * a.size, n, 16), dtype=a.dtype)
    out[:a.size] = a
    return out


@njit(cache=True)
def run_frames(L, t0,
               node_state, child_ptr, child_idx, roots, node_end, kw_ptr, kw_units,
               d, T, active, n_active, stamp, nd, nT, touched,
               D_prev, beam, use_ext, ext_entry, ext_prune, ext_D,
               gate_k, gate_thr, unit_ns,
               out_dbest, out_Dbest, out_bstart, out_nactive,
               rep_unit, rep_t, rep_D, rep_T, n_rep):
    """Advance the token set over every row of ``L`` (frames t0, t0+1, ...).

    Scores live on graph nodes; a node's forward predecessor is its parent,
    or the previous frame's best end score for roots. ``nd``/``nT`` collect
    the best predecessor per node: a forward candidate replaces a self-loop
    on ties, a self-loop replaces a forward one only if strictly better. In
    external mode the entry score and pruning reference come from
    ``ext_entry``/``ext_prune``, and ``ext_D`` replaces the frame's own
    D_best for report gating.

    A keyword end state is reported only if its confidence with ``gate_k``
    could reach ``gate_thr`` (a hair of slack keeps the gate conservative;
    the spotter applies the exact threshold). ``gate_thr = -inf`` reports all.
    """
    gate = gate_thr > NEG_INF
    n_frames = L.shape[0]
    for i in range(n_frames):
        t = t0 + i
        n_t = 0
        # forward candidates below ``lo`` cannot survive pruning, so they are
        # never touched: every self-loop value bounds d_best(t) from below
        if use_ext:
            lo = ext_prune[i] - beam
        else:
            lb = NEG_INF
            for a in range(n_active):
                n = active[a]
                v = d[n] + L[i, node_state[n]]
                if v > lb:
                    lb = v
            lo = lb - beam
        # skipped candidates into end states still count towards D_best
        Dskip = NEG_INF
        Tskip = -1
        for a in range(n_active):
            n = active[a]
            dn = d[n]
            Tn = T[n]
            if stamp[n] != t:
                stamp[n] = t
                nd[n] = dn
                nT[n] = Tn
                touched[n_t] = n
                n_t += 1
            elif dn > nd[n]:
                nd[n] = dn
                nT[n] = Tn
            for k in range(child_ptr[n], child_ptr[n + 1]):
                c = child_idx[k]
                v = dn + L[i, node_state[c]]
                if v < lo:
                    if node_end[c] and v > Dskip:
                        Dskip = v
                        Tskip = Tn
                    continue
                if stamp[c] != t:
                    stamp[c] = t
                    nd[c] = dn
                    nT[c] = Tn
                    touched[n_t] = c
                    n_t += 1
                elif dn >= nd[c]:
                    nd[c] = dn
                    nT[c] = Tn
        entry = ext_entry[i] if use_ext else D_prev
        if entry > NEG_INF:
            for k in range(roots.size):
                r = roots[k]
                v = entry + L[i, node_state[r]]
                if v < lo:
                    if node_end[r] and v > Dskip:
                        Dskip = v
                        Tskip = t
                    continue
                if stamp[r] != t:
                    stamp[r] = t
                    nd[r] = entry
                    nT[r] = t
                    touched[n_t] = r
                    n_t += 1
                elif entry >= nd[r]:
                    nd[r] = entry
                    nT[r] = t

        dbest = NEG_INF
        Dbest = NEG_INF
        bstart = -1
        for j in range(n_t):
            n = touched[j]
            v = L[i, node_state[n]] + nd[n]
            d[n] = v
            T[n] = nT[n]
            if v > dbest:
                dbest = v
            if node_end[n] and v > Dbest:
                Dbest = v
                bstart = nT[n]
        if Dskip > Dbest:
            Dbest = Dskip
            bstart = Tskip

        thr = (ext_prune[i] if use_ext else dbest) - beam
        Dref = ext_D[i] if use_ext else Dbest
        na = 0
        for j in range(n_t):
            n = touched[j]
            v = d[n]
            if not (v > NEG_INF and v >= thr):
                d[n] = NEG_INF
                continue
            active[na] = n
            na += 1
            for k in range(kw_ptr[n], kw_ptr[n + 1]):
                if gate:
                    dur = t - T[n]
                    if dur <= 0:
                        continue
                    c = 100.0 - gate_k * (Dref - v) / (dur * unit_ns[kw_units[k]])
                    if c < gate_thr - 1e-6:
                        continue
                if n_rep >= rep_unit.size:
                    rep_unit = _grow_i8(rep_unit, n_rep + 1)
                    rep_t = _grow_i8(rep_t, n_rep + 1)
                    rep_D = _grow_f8(rep_D, n_rep + 1)
                    rep_T = _grow_i8(rep_T, n_rep + 1)
                rep_unit[n_rep] = kw_units[k]
                rep_t[n_rep] = t
                rep_D[n_rep] = v
                rep_T[n_rep] = T[n]
                n_rep += 1
        n_active = na

        out_dbest[i] = dbest
        out_Dbest[i] = Dbest
        out_bstart[i] = bstart
        out_nactive[i] = n_active
        D_prev = Dbest
    return n_active, D_prev, rep_unit, rep_t, rep_D, rep_T, n_rep


@njit(cache=True)
def pool_max(values, target, n_target):
    """out[t, target[s]] = max over s of values[t, s]."""
    out = np.full((values.shape[0], n_target), NEG_INF, dtype=np.float32)
    for t in range(values.shape[0]):
        row = out[t]
        for s in range(values.shape[1]):
            x = values[t, s]
            j = target[s]
            if x > row[j]:
                row[j] = x
    return out
