"""NumPy reference implementations of the hot loops.

These are the fallback when the compiled extension is unavailable and the
oracle the compiled kernels are tested against. Signatures match
``tsvfsim._kernels`` exactly.

Pair-mode codes select which particle pairs enter a histogram:
0 = all pairs, 1 = one upper-origin and one lower-origin particle,
2 = both upper-origin.
"""
from __future__ import annotations

import numpy as np

HBARC = 0.1973  # GeV fm


def _pair_mask(o1, o2, mode):
    if mode == 0:
        return np.ones(o1.shape, dtype=bool)
    if mode == 1:
        return o1 != o2
    if mode == 2:
        return (o1 == 0) & (o2 == 0)
    raise ValueError(f"unknown pair mode {mode}")


def _prf_relative(p1, p2):
    """Relative momentum ``p1 - p2`` boosted to the pair rest frame (spatial part) and Q_inv."""
    P = p1 + p2
    q = p1 - p2
    m2 = P[..., 0] ** 2 - np.sum(P[..., 1:] ** 2, axis=-1)
    minv = np.sqrt(m2)
    beta = P[..., 1:] / P[..., :1]
    gamma = P[..., 0] / minv
    bq = np.sum(beta * q[..., 1:], axis=-1)
    coef = gamma**2 / (gamma + 1) * bq - gamma * q[..., 0]
    qs = q[..., 1:] + coef[..., None] * beta
    r2 = np.sum(q[..., 1:] ** 2, axis=-1) - q[..., 0] ** 2
    qinv = np.sqrt(np.maximum(r2, 0.0))
    return qs, qinv


def _bin(qinv, lo, hi, nbins):
    idx = np.floor((qinv - lo) * (nbins / (hi - lo))).astype(np.int64)
    ok = (qinv >= lo) & (idx >= 0) & (idx < nbins)
    return idx, ok


def be_same(p, x, origin, start, stop, pair_mode, coherent, lo, hi, nbins):
    """Same-event pair histogram over events ``[start, stop)``.

    Returns ``(sum_w, sum_w2, count)``; the weight is
    ``1 + cos(q* . (x1 - x2) / hbar c)`` when `coherent`, else 1.
    """
    sw = np.zeros(nbins)
    sw2 = np.zeros(nbins)
    cnt = np.zeros(nbins)
    m = p.shape[1]
    pe, xe, oe = p[start:stop], x[start:stop], origin[start:stop]
    for i in range(m):
        for j in range(i + 1, m):
            mask = _pair_mask(oe[:, i], oe[:, j], pair_mode)
            qs, qinv = _prf_relative(pe[:, i], pe[:, j])
            idx, ok = _bin(qinv, lo, hi, nbins)
            ok &= mask
            if coherent:
                w = 1.0 + np.cos(np.sum(qs * (xe[:, i] - xe[:, j]), axis=-1) / HBARC)
            else:
                w = np.ones(qinv.shape)
            sw += np.bincount(idx[ok], weights=w[ok], minlength=nbins)
            sw2 += np.bincount(idx[ok], weights=w[ok] ** 2, minlength=nbins)
            cnt += np.bincount(idx[ok], minlength=nbins)
    return sw, sw2, cnt


def be_mixed(p, origin, start, stop, partners, pair_mode, lo, hi, nbins):
    """Mixed-event histogram: particles of event ``e`` against events ``e+1..e+partners`` (cyclic)."""
    n, m = p.shape[0], p.shape[1]
    cnt = np.zeros(nbins)
    ev = np.arange(start, stop)
    for k in range(1, partners + 1):
        other = (ev + k) % n
        for i in range(m):
            for j in range(m):
                mask = _pair_mask(origin[ev, i], origin[other, j], pair_mode)
                _, qinv = _prf_relative(p[ev, i], p[other, j])
                idx, ok = _bin(qinv, lo, hi, nbins)
                ok &= mask
                cnt += np.bincount(idx[ok], minlength=nbins)
    return cnt


# --- Gaussian packet guidance -------------------------------------------------------
#
# A packet field is a sum of terms C_t * prod_d g(y_d; c_td, kappa_td), each g a
# freely spreading 1D Gaussian packet of initial width sigma0 with the
# propagation coordinate z playing the role of time (hbar/m -> 1/k). Terms are
# handled through complex logarithms so that far tails never underflow.


def packet_terms(pos, z, centers, kicks, logc_re, logc_im, sigma0, k):
    """Per-term complex log-amplitude and log-gradient: ``(L (N,T), G (N,T,D))``."""
    tau = z / (2.0 * k * sigma0**2)
    den = 4.0 * sigma0**2 * (1.0 + tau**2)
    s = pos[:, None, :] - centers[None, :, :] - kicks[None, :, :] * (z / k)
    y_minus_c = pos[:, None, :] - centers[None, :, :]
    d = centers.shape[1]
    lr = logc_re[None, :] - np.sum(s**2, axis=-1) / den - 0.25 * d * np.log1p(tau**2)
    li = (
        logc_im[None, :]
        + np.sum(s**2, axis=-1) * tau / den
        + np.sum(kicks[None] * y_minus_c, axis=-1)
        - np.sum(kicks**2, axis=-1)[None, :] * z / (2.0 * k)
        - 0.5 * d * np.arctan(tau)
    )
    g = (-2.0 * s / den) + 1j * (2.0 * s * tau / den + kicks[None])
    return lr + 1j * li, g


def packet_velocity(pos, z, centers, kicks, logc_re, logc_im, sigma0, k, eps):
    """Guidance velocity ``(1/k) Im(grad psi / psi)`` and node mask for each row of `pos`."""
    L, G = packet_terms(pos, z, centers, kicks, logc_re, logc_im, sigma0, k)
    shift = np.max(L.real, axis=1, keepdims=True)
    amp = np.exp(L - shift)
    psi = amp.sum(axis=1)
    dpsi = np.einsum("nt,ntd->nd", amp, G)
    dens = np.abs(psi) ** 2
    incoh = np.sum(np.abs(amp) ** 2, axis=1)
    node = dens < eps * incoh
    with np.errstate(invalid="ignore", divide="ignore"):
        v = np.imag(np.conj(psi)[:, None] * dpsi) / dens[:, None] / k
    return v, node


def rk4_packets(pos, z0, dz, nsteps, centers, kicks, logc_re, logc_im, sigma0, k, eps):
    """Fixed-step RK4 of the guidance equation for an ensemble.

    Returns the final positions and, per trajectory, the index of the first
    step at which a stage came within the node floor (-1 if none). Such a
    trajectory is frozen at the start of that step so the caller can resume
    it with smaller steps.
    """
    y = np.array(pos, dtype=float, copy=True)
    n = y.shape[0]
    hit = np.full(n, -1, dtype=np.int64)
    active = np.ones(n, dtype=bool)
    args = (centers, kicks, logc_re, logc_im, sigma0, k, eps)
    for step in range(nsteps):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        z = z0 + step * dz
        ya = y[idx]
        k1, n1 = packet_velocity(ya, z, *args)
        k2, n2 = packet_velocity(ya + 0.5 * dz * k1, z + 0.5 * dz, *args)
        k3, n3 = packet_velocity(ya + 0.5 * dz * k2, z + 0.5 * dz, *args)
        k4, n4 = packet_velocity(ya + dz * k3, z + dz, *args)
        bad = n1 | n2 | n3 | n4 | ~np.all(np.isfinite(k1 + k2 + k3 + k4), axis=1)
        good = idx[~bad]
        y[good] = ya[~bad] + dz / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)[~bad]
        hit[idx[bad]] = step
        active[idx[bad]] = False
    return y, hit
