# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops; see ``_kernels_py`` for the reference semantics."""
import numpy as np

from libc.math cimport cos, sqrt, floor

cdef double HBARC = 0.1973


cdef inline bint _keep(signed char o1, signed char o2, int mode) noexcept nogil:
    if mode == 0:
        return True
    if mode == 1:
        return o1 != o2
    return o1 == 0 and o2 == 0


cdef inline double _qinv_prf(const double[::1] p1, const double[::1] p2, double* qs) noexcept nogil:
    """Q_inv of the pair; writes the rest-frame relative momentum into qs when not NULL."""
    cdef double P0 = p1[0] + p2[0]
    cdef double q0 = p1[0] - p2[0]
    cdef double b[3]
    cdef double q[3]
    cdef double bq = 0.0, bb = 0.0, qq = 0.0, m2, gamma, coef
    cdef int k
    for k in range(3):
        q[k] = p1[k + 1] - p2[k + 1]
        qq += q[k] * q[k]
    if qs != NULL:
        for k in range(3):
            b[k] = (p1[k + 1] + p2[k + 1]) / P0
            bq += b[k] * q[k]
            bb += b[k] * b[k]
        m2 = P0 * P0 * (1.0 - bb)
        gamma = P0 / sqrt(m2)
        coef = gamma * gamma / (gamma + 1.0) * bq - gamma * q0
        for k in range(3):
            qs[k] = q[k] + coef * b[k]
    qq -= q0 * q0
    if qq < 0.0:
        qq = 0.0
    return sqrt(qq)


def be_same(const double[:, :, ::1] p, const double[:, :, ::1] x, const signed char[:, ::1] origin,
            Py_ssize_t start, Py_ssize_t stop, int pair_mode, bint coherent,
            double lo, double hi, Py_ssize_t nbins):
    sw_arr = np.zeros(nbins)
    sw2_arr = np.zeros(nbins)
    cnt_arr = np.zeros(nbins)
    cdef double[::1] sw = sw_arr
    cdef double[::1] sw2 = sw2_arr
    cdef double[::1] cnt = cnt_arr
    cdef Py_ssize_t m = p.shape[1], e, i, j, idx
    cdef double scale = nbins / (hi - lo), qv, w, ph
    cdef double qs[3]
    if pair_mode < 0 or pair_mode > 2:
        raise ValueError(f"unknown pair mode {pair_mode}")
    with nogil:
        for e in range(start, stop):
            for i in range(m):
                for j in range(i + 1, m):
                    if not _keep(origin[e, i], origin[e, j], pair_mode):
                        continue
                    qv = _qinv_prf(p[e, i], p[e, j], qs if coherent else NULL)
                    if qv < lo:
                        continue
                    idx = <Py_ssize_t>floor((qv - lo) * scale)
                    if idx < 0 or idx >= nbins:
                        continue
                    if coherent:
                        ph = (qs[0] * (x[e, i, 0] - x[e, j, 0]) + qs[1] * (x[e, i, 1] - x[e, j, 1])
                              + qs[2] * (x[e, i, 2] - x[e, j, 2])) / HBARC
                        w = 1.0 + cos(ph)
                    else:
                        w = 1.0
                    sw[idx] += w
                    sw2[idx] += w * w
                    cnt[idx] += 1.0
    return sw_arr, sw2_arr, cnt_arr


def be_mixed(const double[:, :, ::1] p, const signed char[:, ::1] origin,
             Py_ssize_t start, Py_ssize_t stop, Py_ssize_t partners, int pair_mode,
             double lo, double hi, Py_ssize_t nbins):
    cnt_arr = np.zeros(nbins)
    cdef double[::1] cnt = cnt_arr
    cdef Py_ssize_t n = p.shape[0], m = p.shape[1], e, f, k, i, j, idx
    cdef double scale = nbins / (hi - lo), qv
    if pair_mode < 0 or pair_mode > 2:
        raise ValueError(f"unknown pair mode {pair_mode}")
    with nogil:
        for e in range(start, stop):
            for k in range(1, partners + 1):
                f = (e + k) % n
                for i in range(m):
                    for j in range(m):
                        if not _keep(origin[e, i], origin[f, j], pair_mode):
                            continue
                        qv = _qinv_prf(p[e, i], p[f, j], NULL)
                        if qv < lo:
                            continue
                        idx = <Py_ssize_t>floor((qv - lo) * scale)
                        if idx < 0 or idx >= nbins:
                            continue
                        cnt[idx] += 1.0
    return cnt_arr


from libc.math cimport exp, log1p, atan, sin, isfinite

cdef enum:
    MAXT = 16
    MAXD = 4


cdef bint _packet_velocity(const double* y, double z, Py_ssize_t T, Py_ssize_t D,
                           const double[:, ::1] centers, const double[:, ::1] kicks,
                           const double[::1] logc_re, const double[::1] logc_im,
                           double sigma0, double k, double eps, double* v) noexcept nogil:
    """Velocity at one point; returns False at a node (v untouched)."""
    cdef double tau = z / (2.0 * k * sigma0 * sigma0)
    cdef double den = 4.0 * sigma0 * sigma0 * (1.0 + tau * tau)
    cdef double lr[MAXT]
    cdef double li[MAXT]
    cdef double s, ymc, ss, kk, ky, shift, a, ar, ai
    cdef double pr = 0.0, pi = 0.0, incoh = 0.0, dens
    cdef double dr[MAXD]
    cdef double di[MAXD]
    cdef double gr, gi
    cdef Py_ssize_t t, d
    for d in range(D):
        dr[d] = 0.0
        di[d] = 0.0
    for t in range(T):
        ss = 0.0
        kk = 0.0
        ky = 0.0
        for d in range(D):
            s = y[d] - centers[t, d] - kicks[t, d] * (z / k)
            ymc = y[d] - centers[t, d]
            ss += s * s
            kk += kicks[t, d] * kicks[t, d]
            ky += kicks[t, d] * ymc
        lr[t] = logc_re[t] - ss / den - 0.25 * D * log1p(tau * tau)
        li[t] = logc_im[t] + ss * tau / den + ky - kk * z / (2.0 * k) - 0.5 * D * atan(tau)
    shift = lr[0]
    for t in range(1, T):
        if lr[t] > shift:
            shift = lr[t]
    for t in range(T):
        a = exp(lr[t] - shift)
        ar = a * cos(li[t])
        ai = a * sin(li[t])
        pr += ar
        pi += ai
        incoh += a * a
        for d in range(D):
            s = y[d] - centers[t, d] - kicks[t, d] * (z / k)
            gr = -2.0 * s / den
            gi = 2.0 * s * tau / den + kicks[t, d]
            dr[d] += ar * gr - ai * gi
            di[d] += ar * gi + ai * gr
    dens = pr * pr + pi * pi
    if not (dens >= eps * incoh) or dens == 0.0:
        return False
    for d in range(D):
        # Im(conj(psi) * dpsi) / |psi|^2 / k
        v[d] = (pr * di[d] - pi * dr[d]) / dens / k
        if not isfinite(v[d]):
            return False
    return True


def rk4_packets(const double[:, ::1] pos, double z0, double dz, Py_ssize_t nsteps,
                const double[:, ::1] centers, const double[:, ::1] kicks,
                const double[::1] logc_re, const double[::1] logc_im,
                double sigma0, double k, double eps):
    cdef Py_ssize_t n = pos.shape[0], D = pos.shape[1], T = centers.shape[0]
    if T > MAXT or D > MAXD:
        raise ValueError(f"compiled kernel supports at most {MAXT} terms and {MAXD} dimensions")
    out_arr = np.array(pos, dtype=np.float64, copy=True)
    hit_arr = np.full(n, -1, dtype=np.int64)
    cdef double[:, ::1] out = out_arr
    cdef long long[::1] hit = hit_arr
    cdef double y[MAXD]
    cdef double tmp[MAXD]
    cdef double k1[MAXD]
    cdef double k2[MAXD]
    cdef double k3[MAXD]
    cdef double k4[MAXD]
    cdef Py_ssize_t i, step, d
    cdef double z
    cdef bint ok
    with nogil:
        for i in range(n):
            for d in range(D):
                y[d] = out[i, d]
            for step in range(nsteps):
                z = z0 + step * dz
                ok = _packet_velocity(y, z, T, D, centers, kicks, logc_re, logc_im, sigma0, k, eps, k1)
                if ok:
                    for d in range(D):
                        tmp[d] = y[d] + 0.5 * dz * k1[d]
                    ok = _packet_velocity(tmp, z + 0.5 * dz, T, D, centers, kicks, logc_re, logc_im, sigma0, k, eps, k2)
                if ok:
                    for d in range(D):
                        tmp[d] = y[d] + 0.5 * dz * k2[d]
                    ok = _packet_velocity(tmp, z + 0.5 * dz, T, D, centers, kicks, logc_re, logc_im, sigma0, k, eps, k3)
                if ok:
                    for d in range(D):
                        tmp[d] = y[d] + dz * k3[d]
                    ok = _packet_velocity(tmp, z + dz, T, D, centers, kicks, logc_re, logc_im, sigma0, k, eps, k4)
                if not ok:
                    hit[i] = step
                    break
                for d in range(D):
                    y[d] = y[d] + dz / 6.0 * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d] + k4[d])
            for d in range(D):
                out[i, d] = y[d]
    return out_arr, hit_arr
