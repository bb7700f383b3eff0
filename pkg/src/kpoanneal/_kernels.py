"""Compiled inner loops for large density matrices."""

from __future__ import annotations

import numpy as np
from numba import njit

BLOCK = 32


@njit(cache=True, fastmath=True)
def lindblad_apply(indptr, indices, data, rho, jump_src, jump_val, jump_rate,
                   diag_ops, diag_rate, out):
    """``out = G + G^dag`` with ``G = -i A rho + 1/2 sum_c r_c C_c rho C_c^dag``.

    ``A`` is CSR (``indptr``, ``indices``, ``data``). Jump operators with at
    most one entry per row are given as ``jump_src[c, i]`` (column of the
    entry in row ``i`` or -1) and ``jump_val[c, i]``; diagonal operators as
    rows of ``diag_ops``.
    """
    D = rho.shape[0]
    n_jump = jump_src.shape[0]
    n_diag = diag_ops.shape[0]
    for i in range(D):
        row = out[i]
        for j in range(D):
            row[j] = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            c = -1j * data[p]
            src = rho[indices[p]]
            for j in range(D):
                row[j] += c * src[j]
        rho_i = rho[i]
        for m in range(n_diag):
            ci = 0.5 * diag_rate[m] * diag_ops[m, i]
            dm = diag_ops[m]
            for j in range(D):
                row[j] += ci * np.conj(dm[j]) * rho_i[j]
        for c in range(n_jump):
            s = jump_src[c, i]
            if s < 0:
                continue
            vi = 0.5 * jump_rate[c] * jump_val[c, i]
            src = rho[s]
            srcs = jump_src[c]
            vals = jump_val[c]
            for j in range(D):
                sj = srcs[j]
                if sj >= 0:
                    row[j] += vi * np.conj(vals[j]) * src[sj]
    hermitian_complete(out)


@njit(cache=True, fastmath=True)
def hermitian_complete(G):
    """In place ``G <- G + G^dag`` (tiled transpose)."""
    D = G.shape[0]
    for bi in range(0, D, BLOCK):
        for bj in range(bi, D, BLOCK):
            for i in range(bi, min(bi + BLOCK, D)):
                j0 = max(bj, i) if bi == bj else bj
                for j in range(j0, min(bj + BLOCK, D)):
                    a = G[i, j]
                    b = G[j, i]
                    if i == j:
                        G[i, i] = 2.0 * a.real
                    else:
                        G[i, j] = a + np.conj(b)
                        G[j, i] = b + np.conj(a)


@njit(cache=True, fastmath=True)
def scaled_rms(err, y0, y1, atol, rtol):
    """RMS of ``err / (atol + rtol max(|y0|, |y1|))`` over flat arrays."""
    acc = 0.0
    n = err.shape[0]
    for k in range(n):
        a = y0[k]
        b = y1[k]
        m2 = max(a.real * a.real + a.imag * a.imag, b.real * b.real + b.imag * b.imag)
        s = atol + rtol * np.sqrt(m2)
        e = err[k]
        acc += (e.real * e.real + e.imag * e.imag) / (s * s)
    return np.sqrt(acc / n)


@njit(cache=True, fastmath=True)
def stage_combine(K, coeffs, n, h, base, out):
    """``out = base + h * sum_{k<n} coeffs[k] K[k]`` in one pass."""
    m = K.shape[1]
    w = h * coeffs
    for idx in range(m):
        acc = base[idx]
        for k in range(n):
            acc += w[k] * K[k, idx]
        out[idx] = acc


@njit(cache=True)
def schedule_fractions(t, sched):
    """``(delta, pump_fraction, drive_fraction)``; ``sched`` starts with
    ``(t_s, t_sp, t_rd, delta_initial, pump_exponent, drive_exponent)``."""
    t_s, t_sp, t_rd = sched[0], sched[1], sched[2]
    ramp = min(max(t, 0.0) / t_s, 1.0)
    delta = sched[3] * (1.0 - ramp)
    pump = ramp ** sched[4]
    drive = ramp ** sched[5]
    hold_end = t_s + t_sp
    off = t_s + t_rd
    if t > hold_end:
        if off > hold_end:
            drive = min(max((off - t) / (off - hold_end), 0.0), 1.0)
        else:
            drive = 0.0
    return delta, pump, drive


@njit(cache=True, fastmath=True)
def _heff_rhs(t, y, op, sched, out):
    # out = -i (H_eff(t) - E_ref(t)) y; terms: static, detuning, pump, drive, identity.
    # op = (diag (5, n), off_indptr (m, n + 1), off_indices, real off_data, off_term (m,),
    #       mode dims, real pump/drive bands (modes, 2, 4, max dim))
    diag, off_indptr, off_indices, off_data, off_term, dims, bands = op
    delta, pump, drive = schedule_fractions(t, sched)
    e_ref = sched[6] * pump * pump + sched[7] * delta * pump
    coef = (1.0, delta, pump, drive, -e_ref)
    n = y.shape[0]
    for i in range(n):
        d = (diag[0, i] + delta * diag[1, i] + pump * diag[2, i] + drive * diag[3, i]
             - e_ref * diag[4, i])
        out[i] = d * y[i]
    for m in range(off_term.shape[0]):
        c = coef[off_term[m]]
        ptr = off_indptr[m]
        for i in range(n):
            re = 0.0
            im = 0.0
            for p in range(ptr[i], ptr[i + 1]):
                v = y[off_indices[p]]
                re += off_data[p] * v.real
                im += off_data[p] * v.imag
            out[i] += c * complex(re, im)
    # banded single-mode terms on the (left, mode, right) view of the state
    band = np.empty((4, bands.shape[3]))
    right = n
    for j in range(dims.shape[0]):
        d = dims[j]
        right //= d
        left = n // (d * right)
        for o in range(4):
            for k in range(d):
                band[o, k] = pump * bands[j, 0, o, k] + drive * bands[j, 1, o, k]
        for o in range(4):
            shift = o - 2 if o < 2 else o - 1
            k_lo = max(0, -shift)
            k_hi = min(d, d - shift)
            for l in range(left):
                base = l * d * right
                for k in range(k_lo, k_hi):
                    c = band[o, k]
                    row = base + k * right
                    src = row + shift * right
                    for r in range(right):
                        out[row + r] += c * y[src + r]
    for i in range(n):
        out[i] = complex(out[i].imag, -out[i].real)


@njit(cache=True)
def _norm2(y):
    acc = 0.0
    for i in range(y.shape[0]):
        acc += y[i].real * y[i].real + y[i].imag * y[i].imag
    return acc


@njit(cache=True)
def _dense(y_prev, K, h, theta, P, out):
    for k in range(y_prev.shape[0]):
        out[k] = y_prev[k]
    for s in range(7):
        b = P[s, 0] * theta + P[s, 1] * theta**2 + P[s, 2] * theta**3 + P[s, 3] * theta**4
        if b != 0.0:
            w = h * b
            for k in range(y_prev.shape[0]):
                out[k] += w * K[s, k]


@njit(cache=True)
def _initial_step(t, y, f, t_bound, rtol, atol, op, sched, tmp, f1):
    n = y.shape[0]
    d0 = 0.0
    d1 = 0.0
    for k in range(n):
        s = atol + rtol * abs(y[k])
        d0 += abs(y[k]) ** 2 / (s * s)
        d1 += abs(f[k]) ** 2 / (s * s)
    d0 = np.sqrt(d0 / n)
    d1 = np.sqrt(d1 / n)
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    span = t_bound - t
    if span > 0:
        h0 = min(h0, span)
    for k in range(n):
        tmp[k] = y[k] + h0 * f[k]
    _heff_rhs(t + h0, tmp, op, sched, f1)
    d2 = 0.0
    for k in range(n):
        s = atol + rtol * abs(y[k])
        d2 += abs(f1[k] - f[k]) ** 2 / (s * s)
    d2 = np.sqrt(d2 / n) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, max(span, 1e-14))


@njit(cache=True, fastmath=True)
def trajectory_kernel(op, sched, psi0, t_grid, stops,
                      chan_kind, chan_index, chan_rate, jump_src, jump_val, diag_ops,
                      rng, rtol, atol, tab_c, tab_a, tab_e, tab_p, jump_tol,
                      states_out, jump_t, jump_c):
    """Norm-threshold quantum-jump trajectory for a sparse ``H_eff`` (see ``_heff_rhs``).

    Mirrors :func:`kpoanneal.solvers.run_trajectory`: same Dormand-Prince
    step control, same bisection for the jump time, and the same order of
    random draws. Normalized states at ``t_grid`` go to ``states_out``.
    Channel ``c`` is a one-entry-per-row operator ``jump_src/jump_val[idx]``
    when ``chan_kind[c] == 0`` and the diagonal ``diag_ops[idx]`` otherwise.
    Returns ``(n_jumps, n_steps)``; ``n_jumps = -1`` flags a zero-rate jump
    and ``-2`` an exhausted jump buffer.
    """
    n = psi0.shape[0]
    n_grid = t_grid.shape[0]
    K = np.empty((7, n), dtype=np.complex128)
    ha = np.empty(7)
    y = psi0 / np.sqrt(_norm2(psi0))
    y_new = np.empty(n, dtype=np.complex128)
    y_prev = np.empty(n, dtype=np.complex128)
    tmp = np.empty(n, dtype=np.complex128)
    f = np.empty(n, dtype=np.complex128)
    u = rng.random()
    states_out[0] = y
    k_grid = 1
    n_jumps = 0
    n_steps = 0
    n_chan = chan_kind.shape[0]
    weights = np.empty(max(n_chan, 1))
    t = t_grid[0]
    h = -1.0
    for stop in stops:
        _heff_rhs(t, y, op, sched, f)
        if h <= 0:
            h = _initial_step(t, y, f, stop, rtol, atol, op, sched,
                              tmp, K[1])
        while t < stop:
            span = stop - t
            hh = min(h, span)
            rejected = False
            while True:
                if hh < 1e-14:
                    return -3, n_steps
                for k in range(n):
                    K[0, k] = f[k]
                for i in range(1, 6):
                    for s in range(i):
                        ha[s] = hh * tab_a[i, s]
                    for k in range(n):
                        acc = y[k]
                        for s in range(i):
                            acc += ha[s] * K[s, k]
                        tmp[k] = acc
                    _heff_rhs(t + tab_c[i] * hh, tmp, op, sched, K[i])
                for s in range(6):
                    ha[s] = hh * tab_a[6, s]
                for k in range(n):
                    acc = y[k]
                    for s in range(6):
                        acc += ha[s] * K[s, k]
                    y_new[k] = acc
                t_new = t + hh if hh < span else stop
                _heff_rhs(t_new, y_new, op, sched, K[6])
                for s in range(7):
                    ha[s] = hh * tab_e[s]
                for k in range(n):
                    acc = 0j
                    for s in range(7):
                        acc += ha[s] * K[s, k]
                    tmp[k] = acc
                err = scaled_rms(tmp, y, y_new, atol, rtol)
                if err <= 1.0:
                    factor = 10.0 if err == 0 else min(10.0, 0.9 * err ** -0.2)
                    if rejected:
                        factor = min(1.0, factor)
                    h = hh * factor
                    break
                hh *= max(0.2, 0.9 * err ** -0.2)
                rejected = True
            n_steps += 1
            t_prev = t
            for k in range(n):
                y_prev[k] = y[k]
            step = t_new - t_prev
            if _norm2(y_new) <= u:
                # bisection for ||psi||^2 = u on the dense output
                lo = t_prev
                hi = t_new
                for k in range(n):
                    tmp[k] = y_new[k]
                t_jump = hi
                for _ in range(200):
                    mid = 0.5 * (lo + hi)
                    _dense(y_prev, K, step, (mid - t_prev) / step, tab_p, y)
                    val = _norm2(y) - u
                    if abs(val) < jump_tol:
                        t_jump = mid
                        for k in range(n):
                            tmp[k] = y[k]
                        break
                    if val > 0:
                        lo = mid
                    else:
                        hi = mid
                        for k in range(n):
                            tmp[k] = y[k]
                    t_jump = hi
                    if hi - lo <= 1e-15 * max(1.0, abs(hi)):
                        break
                while k_grid < n_grid and t_grid[k_grid] < t_jump:
                    _dense(y_prev, K, step, (t_grid[k_grid] - t_prev) / step, tab_p, y)
                    nrm = np.sqrt(_norm2(y))
                    for k in range(n):
                        states_out[k_grid, k] = y[k] / nrm
                    k_grid += 1
                # channel weights rate * ||C psi||^2 in channel order
                total = 0.0
                for c in range(n_chan):
                    idx = chan_index[c]
                    w = 0.0
                    if chan_kind[c] == 0:
                        for i in range(n):
                            src = jump_src[idx, i]
                            if src >= 0:
                                v = jump_val[idx, i] * tmp[src]
                                w += v.real * v.real + v.imag * v.imag
                    else:
                        for i in range(n):
                            v = diag_ops[idx, i] * tmp[i]
                            w += v.real * v.real + v.imag * v.imag
                    weights[c] = chan_rate[c] * w
                    total += weights[c]
                if not total > 0:
                    return -1, n_steps
                r = rng.random() * total
                cum = 0.0
                chosen = n_chan - 1
                for c in range(n_chan):
                    cum += weights[c]
                    if cum > r:
                        chosen = c
                        break
                idx = chan_index[chosen]
                if chan_kind[chosen] == 0:
                    for i in range(n):
                        src = jump_src[idx, i]
                        y[i] = jump_val[idx, i] * tmp[src] if src >= 0 else 0j
                else:
                    for i in range(n):
                        y[i] = diag_ops[idx, i] * tmp[i]
                nrm = np.sqrt(_norm2(y))
                for i in range(n):
                    y[i] /= nrm
                if n_jumps >= jump_t.shape[0]:
                    return -2, n_steps
                jump_t[n_jumps] = t_jump
                jump_c[n_jumps] = chosen
                n_jumps += 1
                u = rng.random()
                t = t_jump
                _heff_rhs(t, y, op, sched, f)
                continue
            while k_grid < n_grid and t_grid[k_grid] <= t_new:
                if t_grid[k_grid] == t_new:
                    for k in range(n):
                        tmp[k] = y_new[k]
                else:
                    _dense(y_prev, K, step, (t_grid[k_grid] - t_prev) / step, tab_p, tmp)
                nrm = np.sqrt(_norm2(tmp))
                for k in range(n):
                    states_out[k_grid, k] = tmp[k] / nrm
                k_grid += 1
            t = t_new
            for k in range(n):
                y[k] = y_new[k]
                f[k] = K[6, k]
    return n_jumps, n_steps
