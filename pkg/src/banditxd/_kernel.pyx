# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled replication loop.

Mirrors the pure-Python driver (engine._run_python plus the policy classes)
operation for operation: both consume the bit-generator stream in the same
order and perform the same float arithmetic, so traces are bitwise identical
across backends.  Any behavioral change here must be made in the Python
implementation as well.
"""

from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport ceil, exp, floor, fmax, log, pow, sqrt

import numpy as np

from numpy.random cimport bitgen_t
from numpy.random.c_distributions cimport random_standard_normal, random_standard_uniform

cdef enum:  # policy codes (see engine.POLICY_KINDS)
    P_CONSE = 0
    P_DPCONSE = 1
    P_RCT = 2
    P_UCB = 3
    P_SEONLY = 4

cdef enum:  # event codes (see engine._EVENT_NAMES)
    EV_PULL = 0
    EV_ELIMINATE = 1
    EV_EPOCH = 2
    EV_PHASE = 3
    EV_ESTIMATE = 4

cdef enum:  # noise codes (see engine._NOISE_NAMES)
    NZ_BATCH_MEAN = 0
    NZ_BATCH_LENGTH = 1
    NZ_RCT_LENGTH = 2
    NZ_RELEASE = 3

cdef enum:  # estimate flag codes (see engine._FLAG_NAMES)
    FL_FINAL = 0
    FL_UNDER = 1
    FL_MISSING = 2


cdef inline double _laplace_from_u(double u, double scale) noexcept nogil:
    if u < 0.5:
        if u <= 0.0:
            u = 5e-324
        return scale * log(2.0 * u)
    return -scale * log(2.0 * (1.0 - u))


cdef inline long long _lap_plus_from_u(double u, double m, double eps) noexcept nogil:
    cdef double floor_m = floor(m)
    cdef long long fm = <long long> floor_m
    cdef double q = exp(-0.5 * eps)
    cdef double log_q = log(q)
    cdef double q_top = pow(q, floor_m + 1.0)
    cdef double total = (1.0 + q - q_top) / (1.0 - q)
    cdef double target = u * total
    cdef double neg_mass = (q - q_top) / (1.0 - q)
    cdef double w
    cdef long long k
    if target < neg_mass:
        w = target * (1.0 - q) + q_top
        if w < 5e-324:
            w = 5e-324
        k = <long long> ceil(-log(w) / log_q)
        if k < -fm:
            k = -fm
        elif k > -1:
            k = -1
        while k > -fm and (pow(q, <double> (-(k - 1))) - q_top) / (1.0 - q) >= target:
            k -= 1
        while (pow(q, <double> (-k)) - q_top) / (1.0 - q) < target:
            k += 1
    else:
        w = 1.0 + q - q_top - target * (1.0 - q)
        if w < 5e-324:
            w = 5e-324
        k = <long long> ceil(log(w) / log_q - 1.0)
        if k < 0:
            k = 0
        while k > 0 and (1.0 + q - q_top - pow(q, <double> (k - 1) + 1.0)) / (1.0 - q) >= target:
            k -= 1
        while (1.0 + q - q_top - pow(q, <double> k + 1.0)) / (1.0 - q) < target:
            k += 1
    return fm + k


def simulate(
    long long n, int m, int policy, double alpha, double epsilon, double c_ucb, double rct_mult,
    int a_kind, const double[::1] stat_p, const int[::1] period_row, const double[:, ::1] row_p,
    const long long[::1] obl_seq,
    const signed char[:, ::1] rkind, const double[:, ::1] rp1, const double[:, ::1] rp2,
    const double[:, ::1] rtable,
    const double[::1] delta, const signed char[::1] opt,
    const long long[::1] sched_r, const double[::1] sched_h, const double[::1] sched_c,
    const long long[::1] ck_ts, object bit_generator,
    bint record_events, bint record_actions,
    double[::1] ck_reg,
    double[::1] est_value, signed char[::1] est_flag, long long[::1] est_samples,
    long long[:, ::1] rct_counts, long long[::1] fhat,
    long long[::1] occurrences, long long[::1] subopt_first, long long[::1] subopt_total,
    long long[::1] elim_epoch, signed char[::1] elim_arm, signed char[::1] viable,
    long long[::1] t_j, long long[::1] scalars_out,
    long long[::1] ev_t, short[::1] ev_feature, signed char[::1] ev_arm,
    double[::1] ev_value, long long[::1] ev_aux, signed char[::1] ev_kind,
    signed char[::1] nl_kind, short[::1] nl_feature, short[::1] nl_epoch, signed char[::1] nl_arm,
    double[::1] nl_scale, double[::1] nl_m, double[::1] nl_draw, long long[::1] nl_count,
    signed char[::1] actions,
):
    cdef bitgen_t *rng = <bitgen_t *> PyCapsule_GetPointer(bit_generator.capsule, "BitGenerator")

    cdef long long half = n // 2 if (policy == P_CONSE or policy == P_DPCONSE) else n
    cdef bint is_dp = policy == P_DPCONSE
    cdef bint is_elim = policy == P_CONSE or policy == P_DPCONSE or policy == P_SEONLY
    cdef int n_epochs = sched_r.shape[0]
    cdef long long ev_cap = ev_t.shape[0]
    cdef long long nl_cap = nl_kind.shape[0]

    # per-feature mutable state
    arr_epoch = np.zeros(m, dtype=np.int64)
    arr_batch_r = np.zeros(m, dtype=np.int64)
    arr_batch_sum = np.zeros((m, 2))
    arr_batch_cnt = np.zeros((m, 2), dtype=np.int64)
    arr_cum_sum = np.zeros((m, 2))
    arr_cum_cnt = np.zeros((m, 2), dtype=np.int64)
    arr_n_occ = np.zeros(m, dtype=np.int64)
    arr_rct_sum = np.zeros((m, 2))
    arr_rct_cnt = np.zeros((m, 2), dtype=np.int64)
    arr_batch_real = np.zeros(m, dtype=np.int64)
    arr_emitted = np.zeros(m, dtype=np.int8)
    arr_cnt_sum = np.zeros((m, 2))
    arr_cnt_cnt = np.zeros((m, 2), dtype=np.int64)
    cdef long long[::1] epoch = arr_epoch
    cdef long long[::1] batch_r = arr_batch_r
    cdef double[:, ::1] batch_sum = arr_batch_sum
    cdef long long[:, ::1] batch_cnt = arr_batch_cnt
    cdef double[:, ::1] cum_sum = arr_cum_sum
    cdef long long[:, ::1] cum_cnt = arr_cum_cnt
    cdef long long[::1] n_occ = arr_n_occ
    cdef double[:, ::1] rct_sum = arr_rct_sum
    cdef long long[:, ::1] rct_cnt = arr_rct_cnt
    cdef long long[::1] batch_real = arr_batch_real
    cdef signed char[::1] emitted = arr_emitted
    cdef double[:, ::1] cnt_sum = arr_cnt_sum       # rct/ucb overall sums
    cdef long long[:, ::1] cnt_cnt = arr_cnt_cnt

    cdef double regret = 0.0
    cdef long long ck_i = 0, ck_len = ck_ts.shape[0]
    cdef long long ev_n = 0, nl_n = 0
    cdef long long t_min = 0
    cdef long long t, tgt, drawn, collected
    cdef int j, a, e, removed, eidx
    cdef double u, acc, reward, z, m0, m1, top, thr, scale, noise0, noise1
    cdef double raw, value, g, smallest, floor_term, log_t, u0, u1

    for t in range(1, n + 1):
        # --- feature arrival -------------------------------------------------
        if a_kind == 0:
            u = random_standard_uniform(rng)
            j = m - 1
            acc = 0.0
            for a in range(m - 1):
                acc += stat_p[a]
                if u < acc:
                    j = a
                    break
        elif a_kind == 1:
            u = random_standard_uniform(rng)
            eidx = period_row[t - 1]
            j = m - 1
            acc = 0.0
            for a in range(m - 1):
                acc += row_p[eidx, a]
                if u < acc:
                    j = a
                    break
        else:
            j = <int> obl_seq[t - 1]

        # --- arm choice -------------------------------------------------------
        if is_elim:
            if t <= half:
                if viable[j] == 2:
                    u = random_standard_uniform(rng)
                    a = 1 if u < 0.5 else 0
                else:
                    a = viable[j]
            else:
                if n_occ[j] + 1 <= t_j[j]:
                    u = random_standard_uniform(rng)
                    a = 1 if u < 0.5 else 0
                elif viable[j] != 2:
                    a = viable[j]
                else:
                    m0 = cum_sum[j, 0] / cum_cnt[j, 0] if cum_cnt[j, 0] else 0.0
                    m1 = cum_sum[j, 1] / cum_cnt[j, 1] if cum_cnt[j, 1] else 0.0
                    a = 1 if m1 >= m0 else 0
        elif policy == P_RCT:
            u = random_standard_uniform(rng)
            a = 1 if u < 0.5 else 0
        else:  # UCB
            if cnt_cnt[j, 0] == 0:
                a = 0
            elif cnt_cnt[j, 1] == 0:
                a = 1
            else:
                log_t = log(<double> t)
                u0 = cnt_sum[j, 0] / cnt_cnt[j, 0] + c_ucb * sqrt(log_t / cnt_cnt[j, 0])
                u1 = cnt_sum[j, 1] / cnt_cnt[j, 1] + c_ucb * sqrt(log_t / cnt_cnt[j, 1])
                a = 1 if u1 > u0 else 0

        # --- reward -----------------------------------------------------------
        if rkind[j, a] == 0:
            u = random_standard_uniform(rng)
            reward = 1.0 if u < rp1[j, a] else 0.0
        elif rkind[j, a] == 1:
            z = random_standard_normal(rng)
            reward = rp1[j, a] + rp2[j, a] * z
            if reward < 0.0:
                reward = 0.0
            elif reward > 1.0:
                reward = 1.0
        elif rkind[j, a] == 2:
            reward = rp1[j, a]
        else:
            reward = rtable[t - 1, a]

        if record_actions:
            actions[t - 1] = a
        if record_events and ev_n < ev_cap:
            ev_t[ev_n] = t; ev_feature[ev_n] = j + 1; ev_arm[ev_n] = a
            ev_value[ev_n] = reward; ev_aux[ev_n] = 0; ev_kind[ev_n] = EV_PULL
            ev_n += 1

        # --- regret bookkeeping ----------------------------------------------
        occurrences[j] += 1
        if opt[j] >= 0 and a != opt[j]:
            regret += delta[j] if delta[j] > 0 else -delta[j]
            subopt_total[j] += 1
            if t <= n // 2:
                subopt_first[j] += 1

        # --- policy update ----------------------------------------------------
        if is_elim:
            n_occ[j] += 1
            if t <= half:
                cum_sum[j, a] += reward
                cum_cnt[j, a] += 1
                if viable[j] == 2:
                    batch_sum[j, a] += reward
                    batch_cnt[j, a] += 1
                    batch_r[j] += 1
                    e = <int> epoch[j]
                    if e >= n_epochs:
                        e = n_epochs - 1
                    tgt = batch_real[j] if is_dp else sched_r[e]
                    if batch_r[j] >= tgt:
                        if e >= 1 and (not is_dp or batch_real[j] > 0):
                            m0 = batch_sum[j, 0] / batch_cnt[j, 0] if batch_cnt[j, 0] else 0.0
                            m1 = batch_sum[j, 1] / batch_cnt[j, 1] if batch_cnt[j, 1] else 0.0
                            if is_dp:
                                scale = 2.0 / (epsilon * <double> sched_r[e])
                                noise0 = _laplace_from_u(random_standard_uniform(rng), scale)
                                if nl_n < nl_cap:
                                    nl_kind[nl_n] = NZ_BATCH_MEAN; nl_feature[nl_n] = j + 1
                                    nl_epoch[nl_n] = e; nl_arm[nl_n] = 0
                                    nl_scale[nl_n] = scale; nl_m[nl_n] = 0.0; nl_draw[nl_n] = noise0
                                    nl_n += 1
                                noise1 = _laplace_from_u(random_standard_uniform(rng), scale)
                                if nl_n < nl_cap:
                                    nl_kind[nl_n] = NZ_BATCH_MEAN; nl_feature[nl_n] = j + 1
                                    nl_epoch[nl_n] = e; nl_arm[nl_n] = 1
                                    nl_scale[nl_n] = scale; nl_m[nl_n] = 0.0; nl_draw[nl_n] = noise1
                                    nl_n += 1
                                m0 = m0 + noise0
                                m1 = m1 + noise1
                                thr = 2.0 * sched_h[e] + 2.0 * sched_c[e]
                            else:
                                thr = 2.0 * sched_h[e]
                            top = m0 if m0 >= m1 else m1
                            removed = -1
                            if top - m0 > thr:
                                removed = 0
                            elif top - m1 > thr:
                                removed = 1
                            if removed >= 0:
                                viable[j] = <signed char> (1 - removed)
                                elim_epoch[j] = e
                                elim_arm[j] = <signed char> removed
                                if record_events and ev_n < ev_cap:
                                    ev_t[ev_n] = t; ev_feature[ev_n] = j + 1
                                    ev_arm[ev_n] = removed; ev_value[ev_n] = 0.0
                                    ev_aux[ev_n] = e; ev_kind[ev_n] = EV_ELIMINATE
                                    ev_n += 1
                        epoch[j] += 1
                        batch_r[j] = 0
                        batch_sum[j, 0] = 0.0
                        batch_sum[j, 1] = 0.0
                        batch_cnt[j, 0] = 0
                        batch_cnt[j, 1] = 0
                        if is_dp:
                            e = <int> epoch[j]
                            if e >= n_epochs:
                                e = n_epochs - 1
                            u = random_standard_uniform(rng)
                            drawn = _lap_plus_from_u(u, <double> sched_r[e], epsilon)
                            batch_real[j] = drawn
                            if nl_n < nl_cap:
                                nl_kind[nl_n] = NZ_BATCH_LENGTH; nl_feature[nl_n] = j + 1
                                nl_epoch[nl_n] = e; nl_arm[nl_n] = -1
                                nl_scale[nl_n] = epsilon; nl_m[nl_n] = <double> sched_r[e]
                                nl_draw[nl_n] = <double> drawn
                                nl_n += 1
                        if record_events and ev_n < ev_cap:
                            ev_t[ev_n] = t; ev_feature[ev_n] = j + 1; ev_arm[ev_n] = -1
                            ev_value[ev_n] = 0.0; ev_aux[ev_n] = epoch[j]; ev_kind[ev_n] = EV_EPOCH
                            ev_n += 1
                if t == half and policy != P_SEONLY:
                    # phase transition: fix the common RCT length
                    for a in range(m):
                        fhat[a] = n_occ[a]
                    floor_term = log(<double> n) / epsilon if is_dp else log(<double> n)
                    if alpha == 1.0:
                        smallest = 1.0
                    else:
                        smallest = pow(<double> fhat[0], 1.0 - alpha)
                        for a in range(1, m):
                            g = pow(<double> fhat[a], 1.0 - alpha)
                            if g < smallest:
                                smallest = g
                    t_min = <long long> ceil(fmax(floor_term, smallest))
                    for a in range(m):
                        n_occ[a] = 0
                        rct_sum[a, 0] = 0.0
                        rct_sum[a, 1] = 0.0
                        rct_cnt[a, 0] = 0
                        rct_cnt[a, 1] = 0
                    if record_events and ev_n < ev_cap:
                        ev_t[ev_n] = t; ev_feature[ev_n] = 0; ev_arm[ev_n] = -1
                        ev_value[ev_n] = 0.0; ev_aux[ev_n] = t_min; ev_kind[ev_n] = EV_PHASE
                        ev_n += 1
                    for a in range(m):
                        if is_dp:
                            u = random_standard_uniform(rng)
                            drawn = _lap_plus_from_u(u, rct_mult * <double> t_min, epsilon)
                            t_j[a] = drawn
                            if nl_n < nl_cap:
                                nl_kind[nl_n] = NZ_RCT_LENGTH; nl_feature[nl_n] = a + 1
                                nl_epoch[nl_n] = 0; nl_arm[nl_n] = -1
                                nl_scale[nl_n] = epsilon; nl_m[nl_n] = rct_mult * <double> t_min
                                nl_draw[nl_n] = <double> drawn
                                nl_n += 1
                            if drawn == 0:
                                emitted[a] = 1
                                est_value[a] = 0.0
                                est_flag[a] = FL_MISSING
                                est_samples[a] = 0
                                if record_events and ev_n < ev_cap:
                                    ev_t[ev_n] = t; ev_feature[ev_n] = a + 1; ev_arm[ev_n] = -1
                                    ev_value[ev_n] = 0.0; ev_aux[ev_n] = 0; ev_kind[ev_n] = EV_ESTIMATE
                                    ev_n += 1
                        else:
                            t_j[a] = t_min
            else:
                # second half: RCT then greedy tail
                if n_occ[j] <= t_j[j]:
                    rct_sum[j, a] += reward
                    rct_cnt[j, a] += 1
                    if n_occ[j] == t_j[j] and not emitted[j]:
                        m0 = rct_sum[j, 0] / rct_cnt[j, 0] if rct_cnt[j, 0] else 0.0
                        m1 = rct_sum[j, 1] / rct_cnt[j, 1] if rct_cnt[j, 1] else 0.0
                        raw = m1 - m0
                        if is_dp:
                            scale = 2.0 / (epsilon * <double> t_j[j])
                            noise0 = _laplace_from_u(random_standard_uniform(rng), scale)
                            if nl_n < nl_cap:
                                nl_kind[nl_n] = NZ_RELEASE; nl_feature[nl_n] = j + 1
                                nl_epoch[nl_n] = 0; nl_arm[nl_n] = -1
                                nl_scale[nl_n] = scale; nl_m[nl_n] = 0.0; nl_draw[nl_n] = noise0
                                nl_n += 1
                            value = raw + noise0
                        else:
                            value = raw
                        emitted[j] = 1
                        est_value[j] = value
                        est_flag[j] = FL_FINAL
                        est_samples[j] = t_j[j]
                        if record_events and ev_n < ev_cap:
                            ev_t[ev_n] = t; ev_feature[ev_n] = j + 1; ev_arm[ev_n] = -1
                            ev_value[ev_n] = value; ev_aux[ev_n] = t_j[j]; ev_kind[ev_n] = EV_ESTIMATE
                            ev_n += 1
        else:
            cnt_sum[j, a] += reward
            cnt_cnt[j, a] += 1

        if ck_i < ck_len and t == ck_ts[ck_i]:
            ck_reg[ck_i] = regret
            ck_i += 1

    # --- finalize -------------------------------------------------------------
    if is_elim and policy != P_SEONLY:
        for j in range(m):
            if emitted[j]:
                continue
            collected = n_occ[j]
            if collected == 0 or rct_cnt[j, 0] == 0 or rct_cnt[j, 1] == 0:
                est_value[j] = 0.0
                est_flag[j] = FL_MISSING
                est_samples[j] = collected
                continue
            m0 = rct_sum[j, 0] / rct_cnt[j, 0]
            m1 = rct_sum[j, 1] / rct_cnt[j, 1]
            raw = m1 - m0
            if is_dp:
                scale = 2.0 / (epsilon * <double> collected)
                noise0 = _laplace_from_u(random_standard_uniform(rng), scale)
                if nl_n < nl_cap:
                    nl_kind[nl_n] = NZ_RELEASE; nl_feature[nl_n] = j + 1
                    nl_epoch[nl_n] = 0; nl_arm[nl_n] = -1
                    nl_scale[nl_n] = scale; nl_m[nl_n] = 0.0; nl_draw[nl_n] = noise0
                    nl_n += 1
                raw = raw + noise0
            est_value[j] = raw
            est_flag[j] = FL_UNDER
            est_samples[j] = collected
        for j in range(m):
            rct_counts[j, 0] = rct_cnt[j, 0]
            rct_counts[j, 1] = rct_cnt[j, 1]
    elif policy == P_SEONLY:
        for j in range(m):
            if cum_cnt[j, 0] == 0 or cum_cnt[j, 1] == 0:
                est_value[j] = 0.0
                est_flag[j] = FL_MISSING
            else:
                est_value[j] = cum_sum[j, 1] / cum_cnt[j, 1] - cum_sum[j, 0] / cum_cnt[j, 0]
                est_flag[j] = FL_FINAL
            est_samples[j] = cum_cnt[j, 0] + cum_cnt[j, 1]
            rct_counts[j, 0] = cum_cnt[j, 0]
            rct_counts[j, 1] = cum_cnt[j, 1]
    else:
        for j in range(m):
            if cnt_cnt[j, 0] == 0 or cnt_cnt[j, 1] == 0:
                est_value[j] = 0.0
                est_flag[j] = FL_MISSING
            else:
                est_value[j] = cnt_sum[j, 1] / cnt_cnt[j, 1] - cnt_sum[j, 0] / cnt_cnt[j, 0]
                est_flag[j] = FL_FINAL
            est_samples[j] = cnt_cnt[j, 0] + cnt_cnt[j, 1]
            rct_counts[j, 0] = cnt_cnt[j, 0]
            rct_counts[j, 1] = cnt_cnt[j, 1]

    scalars_out[0] = t_min
    scalars_out[1] = ev_n
    nl_count[0] = nl_n
    return regret
