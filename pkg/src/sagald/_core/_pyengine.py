"""Pure numpy engine: batched chain evolution, vectorized across replications.

Every arithmetic step mirrors the compiled engine operation for operation
(fixed left-to-right accumulation, no fused multiply-adds, libm tanh), so the
two engines produce bit-identical trajectories.  Cross-replication reductions
never happen here; drivers reduce per-replication outputs in a fixed order.

Array conventions: x is (R, d), table is (R, N, d); noise slices carry the
step axis second, e.g. gauss is (R, C, d) for a C-step segment.  `bad` flags
replications that produced a non-finite coordinate (first step recorded in
`bad_step`); their values keep evolving as NaN and are reported by the driver.
"""

from __future__ import annotations

import numpy as np

from ..model import _tanh_batch
from ..noise import slow_residual_draw

BACKEND = "python"


def _eval_component(kinds, aff_a, aff_b, well_u, well_amp, i, x):
    """F_i on a batch of states, canonical accumulation order."""
    r, d = x.shape
    if kinds[i] == 0:
        acc = np.repeat(aff_b[i][None, :], r, axis=0)
        for c in range(d):
            acc += x[:, c:c + 1] * aff_a[i][:, c][None, :]
        return acc
    t = x[:, 0] * well_u[i, 0]
    for c in range(1, d):
        t += x[:, c] * well_u[i, c]
    w = well_amp[i] * _tanh_batch(t)
    return x - w[:, None] * well_u[i][None, :]


def _eval_all(kinds, aff_a, aff_b, well_u, well_amp, x):
    r, d = x.shape
    n = kinds.shape[0]
    out = np.empty((r, n, d))
    for i in range(n):
        out[:, i, :] = _eval_component(kinds, aff_a, aff_b, well_u, well_amp, i, x)
    return out


def _row_sum(table):
    acc = table[:, 0, :].copy()
    for i in range(1, table.shape[1]):
        acc += table[:, i, :]
    return acc


def _sq_rows(v):
    """Squared norms along the last axis, accumulated left to right."""
    acc = v[..., 0] * v[..., 0]
    for c in range(1, v.shape[-1]):
        acc += v[..., c] * v[..., c]
    return acc


def _drift_mean(kinds, aff_a, aff_b, well_u, well_amp, x, table, idx_t,
                eta, eta_over_n):
    """(mean, fs): the conditional mean of x' and F_s(x) for the table update."""
    fv = _eval_all(kinds, aff_a, aff_b, well_u, well_amp, x)
    sel = idx_t[:, None, None]
    fs = np.take_along_axis(fv, sel, axis=1)[:, 0, :]
    gs = np.take_along_axis(table, sel, axis=1)[:, 0, :]
    upd = eta_over_n * _row_sum(table) + eta * (fs - gs)
    return x - upd, fs


def _flag_bad(x_new, bad, bad_step, abs_step):
    fin = np.isfinite(x_new).all(axis=1)
    newly = (~fin) & (bad == 0)
    if newly.any():
        bad[newly] = 1
        bad_step[newly] = abs_step


def direct_chunk(kinds, aff_a, aff_b, well_u, well_amp,
                 x, table, gauss, idx, n_steps,
                 eta, eta_over_n, sqrt2eta,
                 bad, bad_step, abs_step0,
                 out_xsq, out_gsq,
                 phi_codes, phi_params, phi_acc,
                 traj_x, traj_g):
    """Advance the direct chain n_steps; updates x/table in place."""
    want_xsq = out_xsq.shape[0] > 0
    want_gsq = out_gsq.shape[0] > 0
    want_traj = traj_x.shape[0] > 0
    n_obs = phi_codes.shape[0]
    for t in range(n_steps):
        idx_t = idx[:, t]
        m, fs = _drift_mean(kinds, aff_a, aff_b, well_u, well_amp,
                            x, table, idx_t, eta, eta_over_n)
        x_new = m + sqrt2eta * gauss[:, t, :]
        _flag_bad(x_new, bad, bad_step, abs_step0 + t)
        x[...] = x_new
        np.put_along_axis(table, idx_t[:, None, None], fs[:, None, :], axis=1)
        if want_xsq:
            out_xsq[:, t] = _sq_rows(x)
        if want_gsq:
            out_gsq[:, t, :] = _sq_rows(table)
        if want_traj:
            traj_x[t] = x[0]
            traj_g[t] = table[0]
        for o in range(n_obs):
            phi_acc[:, o] += _phi_value(phi_codes[o], phi_params[o], x)


def _phi_value(code, params, x):
    if code == 0:
        return params[0]
    if code == 1:
        return x[:, int(params[0])]
    if code == 2:
        return np.sqrt(_sq_rows(x))
    if code == 3:
        return np.minimum(_sq_rows(x), params[0])
    if code == 4:
        t = (params[0] - x[:, 0]) / params[1]
        return np.minimum(np.maximum(t, 0.0), 1.0)
    raise ValueError(f"unknown observable opcode {code}")


def _map_substep(kinds, aff_a, aff_b, well_u, well_amp,
                 x, table, idx_t, sel_t, gauss_t, regen_t, rz_t, rlw_t,
                 eta, eta_over_n, sqrt2eta, k2, g2, rr, r2, beta, resid_const,
                 rep_ids, abs_step, seed):
    """One random-map transition for a batch; returns (x_new, fs)."""
    m, fs = _drift_mean(kinds, aff_a, aff_b, well_u, well_amp,
                        x, table, idx_t, eta, eta_over_n)
    good = _sq_rows(x) <= k2
    for i in range(table.shape[1]):
        good &= _sq_rows(table[:, i, :]) <= g2
    x_new = m + sqrt2eta * gauss_t
    regen_mask = good & (sel_t <= beta)
    if regen_mask.any():
        scaled = rr * regen_t
        x_new[regen_mask] = scaled[regen_mask]
    pending = good & ~regen_mask
    if pending.any():
        n_prop = rz_t.shape[1]
        for j in range(n_prop):
            z = rz_t[:, j, :]
            y = m + sqrt2eta * z
            accept = (_sq_rows(y) > r2) \
                | (rlw_t[:, j] >= 0.5 * _sq_rows(z) + resid_const)
            take = pending & accept
            if take.any():
                x_new[take] = y[take]
            pending &= ~accept
            if not pending.any():
                break
        for r in np.nonzero(pending)[0]:
            x_new[r] = slow_residual_draw((seed, int(rep_ids[r]), abs_step),
                                          m[r], sqrt2eta, resid_const, r2)
    return x_new, fs


def _all_blocks_within(x, table, k2):
    ok = _sq_rows(x) <= k2
    for i in range(table.shape[1]):
        ok &= _sq_rows(table[:, i, :]) <= k2
    return ok


def map_chunk(kinds, aff_a, aff_b, well_u, well_amp,
              xa, ta, xb, tb, coupled,
              gauss, idx, sel, regen, rz, rlw, n_steps,
              eta, eta_over_n, sqrt2eta, k2, g2, rr, r2, beta, resid_const,
              block_len, rel_step0,
              met, meet_step, carry,
              cnt_h, cnt_d, cnt_hbar_d, cnt_i, viol, viol_info,
              occ_count,
              bad, bad_step,
              rep_ids, abs_step0, seed):
    """Advance one (or a coupled pair of) random-map chain(s) n_steps.

    Segments must start on the chunk grid used by the noise stream; block
    bookkeeping uses the step index relative to the coupling start and is
    carried across segment boundaries in `carry` ([sel_ok, sweep_ok,
    start_unmet, start_inD] per replication).
    """
    want_blocks = cnt_h.shape[0] > 0
    want_occ = occ_count.shape[0] > 0
    rb = xa.shape[0]
    for t in range(n_steps):
        rel = rel_step0 + t
        pos = rel % block_len
        blk = rel // block_len
        if want_blocks and pos == 0:
            unmet = met == 0
            in_d = _all_blocks_within(xa, ta, k2)
            if coupled:
                in_d &= (~unmet) | _all_blocks_within(xb, tb, k2)
            cnt_h[blk] += int(np.sum(~unmet))
            cnt_d[blk] += int(np.sum(in_d))
            cnt_hbar_d[blk] += int(np.sum(unmet & in_d))
            carry[:, 0] = 1
            carry[:, 1] = 1
            carry[:, 2] = unmet
            carry[:, 3] = in_d
        idx_t = idx[:, t]
        sel_t = sel[:, t]
        xa_new, fs_a = _map_substep(
            kinds, aff_a, aff_b, well_u, well_amp,
            xa, ta, idx_t, sel_t, gauss[:, t, :], regen[:, t, :],
            rz[:, t, :, :], rlw[:, t, :],
            eta, eta_over_n, sqrt2eta, k2, g2, rr, r2, beta, resid_const,
            rep_ids, abs_step0 + t, seed)
        _flag_bad(xa_new, bad, bad_step, abs_step0 + t)
        xa[...] = xa_new
        np.put_along_axis(ta, idx_t[:, None, None], fs_a[:, None, :], axis=1)
        if coupled:
            unmet = met == 0
            # Once a pair has met, the shared map keeps the copies equal, so
            # updating B unconditionally both preserves B == A and avoids
            # per-replication masking.
            xb_new, fs_b = _map_substep(
                kinds, aff_a, aff_b, well_u, well_amp,
                xb, tb, idx_t, sel_t, gauss[:, t, :], regen[:, t, :],
                rz[:, t, :, :], rlw[:, t, :],
                eta, eta_over_n, sqrt2eta, k2, g2, rr, r2, beta,
                resid_const, rep_ids, abs_step0 + t, seed)
            xb[...] = xb_new
            np.put_along_axis(tb, idx_t[:, None, None], fs_b[:, None, :],
                              axis=1)
            # meeting: exact floating-point equality of x and every row
            eqx = unmet & np.all(xa == xb, axis=1)
            for r in np.nonzero(eqx)[0]:
                if np.array_equal(ta[r], tb[r]):
                    met[r] = 1
                    meet_step[r] = rel + 1
        if want_blocks:
            carry[:, 0] &= sel_t <= beta
            if pos >= 1:
                carry[:, 1] &= idx_t == pos - 1
            if pos == block_len - 1:
                i_event = (carry[:, 2] == 1) & (carry[:, 3] == 1) \
                    & (carry[:, 0] == 1) & (carry[:, 1] == 1)
                cnt_i[blk] += int(np.sum(i_event))
                broken = i_event & (met == 0)
                if broken.any():
                    first = int(np.nonzero(broken)[0][0])
                    if viol[0] == 0:
                        viol_info[0] = rep_ids[first]
                        viol_info[1] = blk
                    viol[0] += int(np.sum(broken))
        if want_occ:
            occ = _all_blocks_within(xa, ta, k2)
            occ_count[occ] += 1
