"""Compiled Dormand-Prince 5(4) stepper for rho' = (A + f(t) B) rho.

The drive ``f`` is piecewise ``offset + amp * cos(w t + phi)``; segment
boundaries and output sample times are hit exactly by the step controller.
"""

import numpy as np
from numba import njit

# Dormand & Prince (1980) tableau
C2, C3, C4, C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
A21 = 1 / 5
A31, A32 = 3 / 40, 9 / 40
A41, A42, A43 = 44 / 45, -56 / 15, 32 / 9
A51, A52, A53, A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
A61, A62, A63, A64, A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
B1, B3, B4, B5, B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
E1, E3, E4, E5, E6, E7 = (71 / 57600, -71 / 16695, 71 / 1920, -17253 / 339200,
                          22 / 525, -1 / 40)

OK, STEP_UNDERFLOW, TOO_MANY_STEPS = 0, 1, 2


@njit(cache=True, nogil=True, inline='always')
def _drive(t, seg, t0, t1, amp, w, phi, off):
    if seg < 0 or t < t0[seg] or t > t1[seg]:
        return 0.0
    return off[seg] + amp[seg] * np.cos(w[seg] * t + phi[seg])


@njit(cache=True, nogil=True, inline='always')
def _rhs(t, y, out, a_ptr, a_idx, a_val, b_ptr, b_idx, b_val,
         seg, t0, t1, amp, w, phi, off):
    f = _drive(t, seg, t0, t1, amp, w, phi, off)
    n = y.shape[0]
    for r in range(n):
        acc = 0j
        for k in range(a_ptr[r], a_ptr[r + 1]):
            acc += a_val[k] * y[a_idx[k]]
        if f != 0.0:
            accb = 0j
            for k in range(b_ptr[r], b_ptr[r + 1]):
                accb += b_val[k] * y[b_idx[k]]
            acc += f * accb
        out[r] = acc


@njit(cache=True, nogil=True)
def _find_segment(t, t0, t1):
    for s in range(t0.shape[0]):
        if t0[s] <= t < t1[s]:
            return s
    return -1


@njit(cache=True, nogil=True)
def integrate_kernel(a_ptr, a_idx, a_val, b_ptr, b_idx, b_val, y0, sample_times,
                     t0, t1, amp, w, phi, off, rtol, atol, h_init, max_steps):
    """Integrate from t=0 and return the state at every ``sample_times`` entry.

    Returns ``(samples, n_accepted, n_rejected, status)``.
    """
    n = y0.shape[0]
    ns = sample_times.shape[0]
    samples = np.empty((ns, n), dtype=np.complex128)
    y = y0.copy()
    ynew = np.empty(n, dtype=np.complex128)
    tmp = np.empty(n, dtype=np.complex128)
    k1 = np.empty(n, dtype=np.complex128)
    k2 = np.empty(n, dtype=np.complex128)
    k3 = np.empty(n, dtype=np.complex128)
    k4 = np.empty(n, dtype=np.complex128)
    k5 = np.empty(n, dtype=np.complex128)
    k6 = np.empty(n, dtype=np.complex128)
    k7 = np.empty(n, dtype=np.complex128)

    # breakpoints: segment edges, kept sorted and merged with sample times below
    nb = 2 * t0.shape[0]
    brk = np.empty(nb)
    for s in range(t0.shape[0]):
        brk[2 * s] = t0[s]
        brk[2 * s + 1] = t1[s]
    brk = np.sort(brk)

    t = 0.0
    h_free = h_init
    si = 0
    bi = 0
    while si < ns and sample_times[si] <= 0.0:
        samples[si] = y
        si += 1
    while bi < nb and brk[bi] <= 0.0:
        bi += 1
    seg = _find_segment(t, t0, t1)
    _rhs(t, y, k1, a_ptr, a_idx, a_val, b_ptr, b_idx, b_val, seg, t0, t1, amp, w, phi, off)
    n_acc = 0
    n_rej = 0
    while si < ns:
        if n_acc + n_rej >= max_steps:
            return samples, n_acc, n_rej, TOO_MANY_STEPS
        stop = sample_times[si]
        if bi < nb and brk[bi] < stop:
            stop = brk[bi]
        h = h_free
        hit = False
        if t + h >= stop:
            h = stop - t
            hit = True
        if h <= 1e-15 * max(abs(t), 1e-12):
            return samples, n_acc, n_rej, STEP_UNDERFLOW

        for i in range(n):
            tmp[i] = y[i] + h * A21 * k1[i]
        _rhs(t + C2 * h, tmp, k2, a_ptr, a_idx, a_val, b_ptr, b_idx, b_val, seg, t0, t1, amp, w, phi, off)
        for i in range(n):
            tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i])
        _rhs(t + C3 * h, tmp, k3, a_ptr, a_idx, a_val, b_ptr, b_idx, b_val, seg, t0, t1, amp, w, phi, off)
        for i in range(n):
            tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i])
        _rhs(t + C4 * h, tmp, k4, a_ptr, a_idx, a_val, b_ptr, b_idx, b_val, seg, t0, t1, amp, w, phi, off)
        for i in range(n):
            tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i])
        _rhs(t + C5 * h, tmp, k5, a_ptr, a_idx, a_val, b_ptr, b_idx, b_val, seg, t0, t1, amp, w, phi, off)
        for i in range(n):
            tmp[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i]
                                 + A65 * k5[i])
        _rhs(t + h, tmp, k6, a_ptr, a_idx, a_val, b_ptr, b_idx, b_val, seg, t0, t1, amp, w, phi, off)
        for i in range(n):
            ynew[i] = y[i] + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i])
        _rhs(t + h, ynew, k7, a_ptr, a_idx, a_val, b_ptr, b_idx, b_val, seg, t0, t1, amp, w, phi, off)

        err = 0.0
        for i in range(n):
            e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i])
            m2 = max(y[i].real ** 2 + y[i].imag ** 2, ynew[i].real ** 2 + ynew[i].imag ** 2)
            sc = atol + rtol * np.sqrt(m2)
            err += (e.real ** 2 + e.imag ** 2) / (sc * sc)
        err = np.sqrt(err / n)

        if err <= 1.0:
            factor = 10.0 if err == 0.0 else min(10.0, 0.9 * err ** -0.2)
            # a step clipped to a breakpoint says nothing against the free step size
            h_free = max(h_free, h * factor) if hit else h * factor
            t = stop if hit else t + h
            for i in range(n):
                y[i] = ynew[i]
                k1[i] = k7[i]
            n_acc += 1
            if hit:
                while si < ns and sample_times[si] <= t:
                    samples[si] = y
                    si += 1
                moved = False
                while bi < nb and brk[bi] <= t:
                    bi += 1
                    moved = True
                if moved:
                    seg = _find_segment(t, t0, t1)
                    _rhs(t, y, k1, a_ptr, a_idx, a_val, b_ptr, b_idx, b_val,
                         seg, t0, t1, amp, w, phi, off)
        else:
            n_rej += 1
            h_free = h * max(0.2, 0.9 * err ** -0.2)
    return samples, n_acc, n_rej, OK


@njit(cache=True, nogil=True, inline='always')
def _matvec(m, v, out):
    n = v.shape[0]
    for r in range(n):
        acc = 0j
        for c in range(n):
            acc += m[r, c] * v[c]
        out[r] = acc


@njit(cache=True, nogil=True, inline='always')
def _bvec(f, b_ptr, b_idx, b_val, v, out):
    n = v.shape[0]
    for r in range(n):
        acc = 0j
        for k in range(b_ptr[r], b_ptr[r + 1]):
            acc += b_val[k] * v[b_idx[k]]
        out[r] = f * acc


@njit(cache=True, nogil=True)
def etdrk4_kernel(e_half, p_half, e_full, f1, f2, f3, b_ptr, b_idx, b_val, y0, h,
                  n_steps, record_every, record_from, t0, t1, amp, w, phi, off):
    """Fixed-step Cox-Matthews ETDRK4 for rho' = A rho + f(t) B rho.

    ``e_*``/``p_half``/``f*`` are the precomputed exponential and phi-function
    matrices of ``h A``, with ``h`` already folded into ``p_half`` and ``f*``.
    The state is recorded after step ``record_from`` and every
    ``record_every`` steps thereafter (step 0 is the initial state).
    """
    n = y0.shape[0]
    n_rec = 0
    if record_from <= n_steps:
        n_rec = (n_steps - record_from) // record_every + 1
    out = np.empty((n_rec, n), dtype=np.complex128)
    y = y0.copy()
    a = np.empty(n, dtype=np.complex128)
    b = np.empty(n, dtype=np.complex128)
    c = np.empty(n, dtype=np.complex128)
    nu = np.empty(n, dtype=np.complex128)
    na = np.empty(n, dtype=np.complex128)
    nb = np.empty(n, dtype=np.complex128)
    nc = np.empty(n, dtype=np.complex128)
    ey = np.empty(n, dtype=np.complex128)
    tmp = np.empty(n, dtype=np.complex128)
    tmp2 = np.empty(n, dtype=np.complex128)
    ri = 0
    if record_from == 0:
        out[0] = y
        ri = 1
    for step in range(n_steps):
        t = step * h
        seg = _find_segment(t, t0, t1)
        fu = _drive(t, seg, t0, t1, amp, w, phi, off)
        fm = _drive(t + 0.5 * h, seg, t0, t1, amp, w, phi, off)
        fe = _drive(t + h, seg, t0, t1, amp, w, phi, off)

        _bvec(fu, b_ptr, b_idx, b_val, y, nu)
        _matvec(e_half, y, ey)
        _matvec(p_half, nu, tmp)
        for i in range(n):
            a[i] = ey[i] + tmp[i]
        _bvec(fm, b_ptr, b_idx, b_val, a, na)
        _matvec(p_half, na, tmp)
        for i in range(n):
            b[i] = ey[i] + tmp[i]
        _bvec(fm, b_ptr, b_idx, b_val, b, nb)
        _matvec(e_half, a, ey)
        for i in range(n):
            tmp2[i] = 2.0 * nb[i] - nu[i]
        _matvec(p_half, tmp2, tmp)
        for i in range(n):
            c[i] = ey[i] + tmp[i]
        _bvec(fe, b_ptr, b_idx, b_val, c, nc)

        _matvec(e_full, y, ey)
        _matvec(f1, nu, tmp)
        for i in range(n):
            ey[i] += tmp[i]
            tmp2[i] = na[i] + nb[i]
        _matvec(f2, tmp2, tmp)
        for i in range(n):
            ey[i] += tmp[i]
        _matvec(f3, nc, tmp)
        for i in range(n):
            y[i] = ey[i] + tmp[i]

        k = step + 1
        if k >= record_from and (k - record_from) % record_every == 0:
            out[ri] = y
            ri += 1
    return out
