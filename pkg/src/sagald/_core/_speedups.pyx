# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled engine: same kernel contract as `_pyengine`, bit-identical output.

The pure numpy engine is the reference for the arithmetic; every accumulation
here follows the same left-to-right order, transcendentals are restricted to
libm tanh/sqrt (exactly what the numpy engine routes through), and the build
disables fused multiply-add contraction.  The rare rejection-overflow path
re-enters Python through the shared `slow_residual_draw`, so even that branch
is common code.
"""

import numpy as np

from libc.math cimport tanh, sqrt, isfinite

from ..noise import slow_residual_draw

BACKEND = "cython"


cdef inline void _fcomp(const long long[::1] kinds,
                        const double[:, :, ::1] aff_a, const double[:, ::1] aff_b,
                        const double[:, ::1] well_u, const double[::1] well_amp,
                        Py_ssize_t i, double[:, ::1] x, Py_ssize_t r,
                        double[::1] out, Py_ssize_t d) noexcept nogil:
    cdef Py_ssize_t a, c
    cdef double t, w
    if kinds[i] == 0:
        for a in range(d):
            t = aff_b[i, a]
            for c in range(d):
                t += x[r, c] * aff_a[i, a, c]
            out[a] = t
    else:
        t = x[r, 0] * well_u[i, 0]
        for c in range(1, d):
            t += x[r, c] * well_u[i, c]
        w = well_amp[i] * tanh(t)
        for c in range(d):
            out[c] = x[r, c] - w * well_u[i, c]


cdef inline double _sq_row(double[:, ::1] v, Py_ssize_t r, Py_ssize_t d) noexcept nogil:
    cdef double acc = v[r, 0] * v[r, 0]
    cdef Py_ssize_t c
    for c in range(1, d):
        acc += v[r, c] * v[r, c]
    return acc


cdef inline double _sq_table_row(double[:, :, ::1] t, Py_ssize_t r, Py_ssize_t i,
                                 Py_ssize_t d) noexcept nogil:
    cdef double acc = t[r, i, 0] * t[r, i, 0]
    cdef Py_ssize_t c
    for c in range(1, d):
        acc += t[r, i, c] * t[r, i, c]
    return acc


cdef inline void _mean_and_fs(const long long[::1] kinds,
                              const double[:, :, ::1] aff_a, const double[:, ::1] aff_b,
                              const double[:, ::1] well_u, const double[::1] well_amp,
                              double[:, ::1] x, double[:, :, ::1] table,
                              Py_ssize_t r, Py_ssize_t s,
                              double eta, double eta_over_n,
                              double[::1] fs, double[::1] m,
                              Py_ssize_t n, Py_ssize_t d) noexcept nogil:
    cdef Py_ssize_t i, c
    cdef double acc, upd
    _fcomp(kinds, aff_a, aff_b, well_u, well_amp, s, x, r, fs, d)
    for c in range(d):
        acc = table[r, 0, c]
        for i in range(1, n):
            acc += table[r, i, c]
        upd = eta_over_n * acc + eta * (fs[c] - table[r, s, c])
        m[c] = x[r, c] - upd


cdef inline unsigned char _in_ball_all(double[:, ::1] x, double[:, :, ::1] table,
                                       Py_ssize_t r, double radius_sq_x,
                                       double radius_sq_rows,
                                       Py_ssize_t n, Py_ssize_t d) noexcept nogil:
    cdef Py_ssize_t i
    if not _sq_row(x, r, d) <= radius_sq_x:
        return 0
    for i in range(n):
        if not _sq_table_row(table, r, i, d) <= radius_sq_rows:
            return 0
    return 1


def direct_chunk(const long long[::1] kinds,
                 const double[:, :, ::1] aff_a, const double[:, ::1] aff_b,
                 const double[:, ::1] well_u, const double[::1] well_amp,
                 double[:, ::1] x, double[:, :, ::1] table,
                 const double[:, :, ::1] gauss, const long long[:, ::1] idx,
                 Py_ssize_t n_steps,
                 double eta, double eta_over_n, double sqrt2eta,
                 unsigned char[::1] bad, long long[::1] bad_step,
                 long long abs_step0,
                 double[:, ::1] out_xsq, double[:, :, ::1] out_gsq,
                 long long[::1] phi_codes, double[:, ::1] phi_params,
                 double[:, ::1] phi_acc,
                 double[:, ::1] traj_x, double[:, :, ::1] traj_g):
    cdef Py_ssize_t rb = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    cdef Py_ssize_t n = table.shape[1]
    cdef Py_ssize_t n_obs = phi_codes.shape[0]
    cdef bint want_xsq = out_xsq.shape[0] > 0
    cdef bint want_gsq = out_gsq.shape[0] > 0
    cdef bint want_traj = traj_x.shape[0] > 0
    fs_np = np.empty(d)
    m_np = np.empty(d)
    cdef double[::1] fs = fs_np
    cdef double[::1] m = m_np
    cdef Py_ssize_t r, t, c, i, s, o
    cdef double xn, val, sq
    cdef bint fin
    with nogil:
        for r in range(rb):
            for t in range(n_steps):
                s = idx[r, t]
                _mean_and_fs(kinds, aff_a, aff_b, well_u, well_amp,
                             x, table, r, s, eta, eta_over_n, fs, m, n, d)
                fin = True
                for c in range(d):
                    xn = m[c] + sqrt2eta * gauss[r, t, c]
                    if not isfinite(xn):
                        fin = False
                    x[r, c] = xn
                if not fin and bad[r] == 0:
                    bad[r] = 1
                    bad_step[r] = abs_step0 + t
                for c in range(d):
                    table[r, s, c] = fs[c]
                if want_xsq:
                    out_xsq[r, t] = _sq_row(x, r, d)
                if want_gsq:
                    for i in range(n):
                        out_gsq[r, t, i] = _sq_table_row(table, r, i, d)
                if want_traj and r == 0:
                    for c in range(d):
                        traj_x[t, c] = x[0, c]
                    for i in range(n):
                        for c in range(d):
                            traj_g[t, i, c] = table[0, i, c]
                for o in range(n_obs):
                    if phi_codes[o] == 0:
                        val = phi_params[o, 0]
                    elif phi_codes[o] == 1:
                        val = x[r, <Py_ssize_t> phi_params[o, 0]]
                    elif phi_codes[o] == 2:
                        val = sqrt(_sq_row(x, r, d))
                    elif phi_codes[o] == 3:
                        sq = _sq_row(x, r, d)
                        val = sq
                        if val > phi_params[o, 0]:
                            val = phi_params[o, 0]
                    else:
                        val = (phi_params[o, 0] - x[r, 0]) / phi_params[o, 1]
                        if val < 0.0:
                            val = 0.0
                        if val > 1.0:
                            val = 1.0
                    phi_acc[r, o] += val


cdef int _map_one(const long long[::1] kinds,
                  const double[:, :, ::1] aff_a, const double[:, ::1] aff_b,
                  const double[:, ::1] well_u, const double[::1] well_amp,
                  double[:, ::1] x, double[:, :, ::1] table, Py_ssize_t r,
                  const double[:, :, ::1] gauss, const long long[:, ::1] idx,
                  const double[:, ::1] sel, const double[:, :, ::1] regen,
                  const double[:, :, :, ::1] rz, const double[:, :, ::1] rlw,
                  Py_ssize_t t,
                  double eta, double eta_over_n, double sqrt2eta,
                  double k2, double g2, double rr, double r2,
                  double beta, double resid_const,
                  double[::1] fs, double[::1] m, double[::1] xn,
                  Py_ssize_t n, Py_ssize_t d) noexcept nogil:
    """One map transition for replication r; returns 1 when the rejection
    block is exhausted (caller takes the Python overflow path).  xn receives
    the new x, fs the table row; neither x nor table is written here."""
    cdef Py_ssize_t s = idx[r, t]
    cdef Py_ssize_t c, j
    cdef double ysq, zsq, yc
    cdef bint good
    _mean_and_fs(kinds, aff_a, aff_b, well_u, well_amp,
                 x, table, r, s, eta, eta_over_n, fs, m, n, d)
    good = _in_ball_all(x, table, r, k2, g2, n, d)
    if good and sel[r, t] <= beta:
        for c in range(d):
            xn[c] = rr * regen[r, t, c]
        return 0
    if good:
        for j in range(rz.shape[2]):
            ysq = 0.0
            zsq = 0.0
            for c in range(d):
                yc = m[c] + sqrt2eta * rz[r, t, j, c]
                xn[c] = yc
                if c == 0:
                    ysq = yc * yc
                    zsq = rz[r, t, j, c] * rz[r, t, j, c]
                else:
                    ysq += yc * yc
                    zsq += rz[r, t, j, c] * rz[r, t, j, c]
            if ysq > r2 or rlw[r, t, j] >= 0.5 * zsq + resid_const:
                return 0
        return 1
    for c in range(d):
        xn[c] = m[c] + sqrt2eta * gauss[r, t, c]
    return 0


def map_chunk(const long long[::1] kinds,
              const double[:, :, ::1] aff_a, const double[:, ::1] aff_b,
              const double[:, ::1] well_u, const double[::1] well_amp,
              double[:, ::1] xa, double[:, :, ::1] ta,
              double[:, ::1] xb, double[:, :, ::1] tb, bint coupled,
              const double[:, :, ::1] gauss, const long long[:, ::1] idx,
              const double[:, ::1] sel, const double[:, :, ::1] regen,
              const double[:, :, :, ::1] rz, const double[:, :, ::1] rlw,
              Py_ssize_t n_steps,
              double eta, double eta_over_n, double sqrt2eta,
              double k2, double g2, double rr, double r2,
              double beta, double resid_const,
              long long block_len, long long rel_step0,
              unsigned char[::1] met, long long[::1] meet_step,
              unsigned char[:, ::1] carry,
              long long[::1] cnt_h, long long[::1] cnt_d,
              long long[::1] cnt_hbar_d, long long[::1] cnt_i,
              long long[::1] viol, long long[::1] viol_info,
              long long[::1] occ_count,
              unsigned char[::1] bad, long long[::1] bad_step,
              long long[::1] rep_ids, long long abs_step0, long long seed):
    cdef Py_ssize_t rb = xa.shape[0]
    cdef Py_ssize_t d = xa.shape[1]
    cdef Py_ssize_t n = ta.shape[1]
    cdef bint want_blocks = cnt_h.shape[0] > 0
    cdef bint want_occ = occ_count.shape[0] > 0
    fs_np = np.empty(d)
    m_np = np.empty(d)
    xn_np = np.empty(d)
    cdef double[::1] fs = fs_np
    cdef double[::1] m = m_np
    cdef double[::1] xn = xn_np
    cdef Py_ssize_t r, t, c, i, s
    cdef long long rel, pos, blk
    cdef bint fin, eq, in_d, unmet_r, i_event
    cdef int need_slow
    with nogil:
        for r in range(rb):
            for t in range(n_steps):
                rel = rel_step0 + t
                pos = rel % block_len
                blk = rel // block_len
                s = idx[r, t]
                if want_blocks and pos == 0:
                    unmet_r = met[r] == 0
                    in_d = _in_ball_all(xa, ta, r, k2, k2, n, d)
                    if coupled and unmet_r:
                        in_d = in_d and _in_ball_all(xb, tb, r, k2, k2, n, d)
                    if not unmet_r:
                        cnt_h[blk] += 1
                    if in_d:
                        cnt_d[blk] += 1
                    if unmet_r and in_d:
                        cnt_hbar_d[blk] += 1
                    carry[r, 0] = 1
                    carry[r, 1] = 1
                    carry[r, 2] = 1 if unmet_r else 0
                    carry[r, 3] = 1 if in_d else 0
                # chain A
                need_slow = _map_one(kinds, aff_a, aff_b, well_u, well_amp,
                                     xa, ta, r, gauss, idx, sel, regen, rz, rlw,
                                     t, eta, eta_over_n, sqrt2eta, k2, g2, rr,
                                     r2, beta, resid_const, fs, m, xn, n, d)
                if need_slow:
                    with gil:
                        _slow_fill(xn_np, m_np, seed, rep_ids[r],
                                   abs_step0 + t, sqrt2eta, resid_const, r2)
                fin = True
                for c in range(d):
                    if not isfinite(xn[c]):
                        fin = False
                    xa[r, c] = xn[c]
                if not fin and bad[r] == 0:
                    bad[r] = 1
                    bad_step[r] = abs_step0 + t
                for c in range(d):
                    ta[r, s, c] = fs[c]
                if coupled:
                    need_slow = _map_one(kinds, aff_a, aff_b, well_u, well_amp,
                                         xb, tb, r, gauss, idx, sel, regen, rz,
                                         rlw, t, eta, eta_over_n, sqrt2eta, k2,
                                         g2, rr, r2, beta, resid_const,
                                         fs, m, xn, n, d)
                    if need_slow:
                        with gil:
                            _slow_fill(xn_np, m_np, seed, rep_ids[r],
                                       abs_step0 + t, sqrt2eta, resid_const, r2)
                    for c in range(d):
                        xb[r, c] = xn[c]
                    for c in range(d):
                        tb[r, s, c] = fs[c]
                    if met[r] == 0:
                        eq = True
                        for c in range(d):
                            if xa[r, c] != xb[r, c]:
                                eq = False
                                break
                        if eq:
                            for i in range(n):
                                for c in range(d):
                                    if ta[r, i, c] != tb[r, i, c]:
                                        eq = False
                                        break
                                if not eq:
                                    break
                        if eq:
                            met[r] = 1
                            meet_step[r] = rel + 1
                if want_blocks:
                    if not sel[r, t] <= beta:
                        carry[r, 0] = 0
                    if pos >= 1 and idx[r, t] != pos - 1:
                        carry[r, 1] = 0
                    if pos == block_len - 1:
                        i_event = (carry[r, 2] == 1 and carry[r, 3] == 1
                                   and carry[r, 0] == 1 and carry[r, 1] == 1)
                        if i_event:
                            cnt_i[blk] += 1
                            if met[r] == 0:
                                if viol[0] == 0:
                                    viol_info[0] = rep_ids[r]
                                    viol_info[1] = blk
                                viol[0] += 1
                if want_occ:
                    if _in_ball_all(xa, ta, r, k2, k2, n, d):
                        occ_count[r] += 1


def _slow_fill(xn_np, m_np, seed, rep, abs_step, sqrt2eta, resid_const, r2):
    y = slow_residual_draw((int(seed), int(rep), int(abs_step)), m_np.copy(),
                           sqrt2eta, resid_const, r2)
    xn_np[...] = y
