"""Identical-boson emission, Q_inv correlation functions and the absorber gedanken experiment.

Each event emits ``multiplicity`` pions with independent thermal-like
momenta and emission points. Same-event pairs are weighted by the
symmetrized emission probability

    1/2 |A(1,2) + A(2,1)|^2,  A(1,2) = exp(i (p1.x1 + p2.x2) / hbar c),

evaluated in the pair rest frame, where it reduces to
``1 + cos(q*.(x1 - x2) / hbar c)`` with ``|q*| = Q_inv``. The reference
distribution pairs particles from different events (cyclic partners).

Units: GeV for momenta and energies, fm for lengths.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import curve_fit

from . import config
from . import kernels
from . import rng as rngmod
from .errors import ContractViolation

HBARC = kernels._py.HBARC  # GeV fm
M_PI = 0.13957  # charged pion mass, GeV

UPPER, LOWER = 0, 1
ORIGIN_NAMES = ("upper", "lower")
PAIR_ALL, PAIR_CROSS, PAIR_UPPER = 0, 1, 2


@dataclass(frozen=True)
class SourceModel:
    """Emission region and momentum scale.

    ``gaussian``: points ~ N(0, radius^2) per axis.
    ``two_halves``: an upper and a lower spot at ``+-separation/2`` on y,
    each ~ N(., spot_size^2) per axis; every particle is tagged with its spot.
    """

    geometry: str = "gaussian"
    radius: float = 5.0
    separation: float = 6.0
    spot_size: float = 1.0
    momentum_scale: float = 0.1
    multiplicity: int = 8

    def __post_init__(self):
        if self.geometry not in ("gaussian", "two_halves"):
            raise ValueError(f"unknown geometry {self.geometry!r}")
        for name in ("radius", "separation", "spot_size", "momentum_scale"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.multiplicity < 2:
            raise ValueError("multiplicity must be at least 2")


@dataclass(frozen=True)
class PairEvent:
    p1: np.ndarray
    p2: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    origin_tags: tuple

    def __post_init__(self):
        check_on_shell(np.stack([self.p1, self.p2]))


def check_on_shell(p: np.ndarray, mass: float = M_PI):
    p = np.asarray(p, dtype=float)
    dev = p[..., 0] ** 2 - np.sum(p[..., 1:] ** 2, axis=-1) - mass**2
    if np.any(np.abs(dev) > config.get().onshell):
        raise ContractViolation(f"off-shell four-momentum (max |E^2 - p^2 - m^2| = {np.max(np.abs(dev)):.3g})")


def q_inv(p1, p2) -> float | np.ndarray:
    """``sqrt(|p1 - p2|^2 - (E1 - E2)^2)`` for four-momenta ``(E, px, py, pz)``."""
    p1, p2 = np.asarray(p1, dtype=float), np.asarray(p2, dtype=float)
    d = p1 - p2
    r = np.sum(d[..., 1:] ** 2, axis=-1) - d[..., 0] ** 2
    if np.any(r < -config.get().radicand):
        raise ContractViolation("negative Q_inv radicand: off-shell input")
    out = np.sqrt(np.maximum(r, 0.0))
    return float(out) if out.ndim == 0 else out


def four_momentum(px, py, pz, mass: float = M_PI) -> np.ndarray:
    p = np.stack(np.broadcast_arrays(px, py, pz), axis=-1).astype(float)
    e = np.sqrt(mass**2 + np.sum(p**2, axis=-1))
    return np.concatenate([e[..., None], p], axis=-1)


def boost_z(p: np.ndarray, beta: float) -> np.ndarray:
    g = 1.0 / np.sqrt(1 - beta**2)
    p = np.array(p, dtype=float)
    e, pz = p[..., 0].copy(), p[..., 3].copy()
    p[..., 0] = g * (e - beta * pz)
    p[..., 3] = g * (pz - beta * e)
    return p


def emission_probability(a12, a21):
    """Symmetrized two-boson emission probability ``1/2 |a12 + a21|^2``."""
    return 0.5 * np.abs(np.asarray(a12) + np.asarray(a21)) ** 2


def phase_average(a: complex, n: int, seed: int) -> float:
    """Mean emission probability of ``(a, a e^{i phi})`` over uniform random ``phi``."""
    phi = rngmod.stream(seed, "phase_average").uniform(0, 2 * np.pi, n)
    return float(np.mean(emission_probability(a, a * np.exp(1j * phi))))


# --- sampling ---------------------------------------------------------------------


@dataclass
class EventSample:
    p: np.ndarray  # (events, multiplicity, 4)
    x: np.ndarray  # (events, multiplicity, 3)
    origin: np.ndarray  # (events, multiplicity) int8, UPPER/LOWER

    def __len__(self):
        return self.p.shape[0]


def _sample_chunk(src: SourceModel, n: int, seed: int, idx: int) -> EventSample:
    g = rngmod.stream(seed, "be_events", idx)
    m = src.multiplicity
    mom = g.normal(0.0, src.momentum_scale, (n, m, 3))
    p = four_momentum(mom[..., 0], mom[..., 1], mom[..., 2])
    if src.geometry == "gaussian":
        x = g.normal(0.0, src.radius, (n, m, 3))
        origin = np.zeros((n, m), dtype=np.int8)
    else:
        origin = (g.random((n, m)) < 0.5).astype(np.int8)
        x = g.normal(0.0, src.spot_size, (n, m, 3))
        x[..., 1] += np.where(origin == UPPER, 0.5, -0.5) * src.separation
    return EventSample(p, x, origin)


def sample_events(src: SourceModel, n_events: int, seed: int, chunk_size: int = 8192) -> EventSample:
    """Seeded events; chunk ``k`` always draws from stream ``(seed, "be_events", k)``."""
    if n_events < 1:
        raise ValueError("n_events must be >= 1")
    parts = [_sample_chunk(src, b - a, seed, i) for i, a, b in rngmod.chunks(n_events, chunk_size)]
    return EventSample(
        np.concatenate([c.p for c in parts]),
        np.concatenate([c.x for c in parts]),
        np.concatenate([c.origin for c in parts]),
    )


class PairSample(Sequence):
    """Independent emitted pairs, stored as arrays and viewed as :class:`PairEvent`."""

    def __init__(self, events: EventSample):
        self.events = events

    def __len__(self):
        return len(self.events)

    def __getitem__(self, k):
        if isinstance(k, slice):
            return [self[i] for i in range(*k.indices(len(self)))]
        e = self.events
        return PairEvent(e.p[k, 0], e.p[k, 1], e.x[k, 0], e.x[k, 1], tuple(ORIGIN_NAMES[o] for o in e.origin[k]))

    @property
    def points(self) -> np.ndarray:
        return self.events.x.reshape(-1, 3)

    @property
    def origins(self) -> np.ndarray:
        return self.events.origin.reshape(-1)


def sample_pairs(src: SourceModel, n: int, seed: int) -> PairSample:
    """`n` seeded pairs (two-particle events) with the source's emission geometry."""
    if n < 1:
        raise ValueError("n must be >= 1")
    two = SourceModel(src.geometry, src.radius, src.separation, src.spot_size, src.momentum_scale, 2)
    return PairSample(sample_events(two, n, seed))


def pair_amplitudes(pair: PairEvent) -> tuple[complex, complex]:
    """Plane-wave amplitudes for the two particle-to-point assignments, in the pair rest frame."""
    qs, _ = kernels._py._prf_relative(pair.p1, pair.p2)
    dx = pair.x1 - pair.x2
    phase = float(np.dot(qs, dx)) / (2 * HBARC)
    return np.exp(1j * phase), np.exp(-1j * phase)


# --- histograms --------------------------------------------------------------------


@dataclass
class CorrelationHistogram:
    bin_edges: np.ndarray
    same: np.ndarray  # weighted same-event counts
    same_sq: np.ndarray  # sum of squared weights
    same_pairs: np.ndarray  # unweighted same-event pair counts
    mixed: np.ndarray
    n_same: float
    n_mixed: float
    meta: dict = field(default_factory=dict)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    @property
    def valid(self) -> np.ndarray:
        return (self.mixed > 0) & (self.same_pairs > 0)

    @property
    def C(self) -> np.ndarray:
        """``(same / N_same) / (mixed / N_mixed)``; NaN in invalid bins."""
        out = np.full(self.same.shape, np.nan)
        v = self.valid
        out[v] = (self.same[v] / self.n_same) / (self.mixed[v] / self.n_mixed)
        return out

    @property
    def C_err(self) -> np.ndarray:
        out = np.full(self.same.shape, np.nan)
        v = self.valid
        c = self.C[v]
        out[v] = c * np.sqrt(self.same_sq[v] / self.same[v] ** 2 + 1.0 / self.mixed[v])
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["q_lo", "q_hi", "same", "mixed", "C", "C_err"])
            for lo, hi, s, m, c, e in zip(self.bin_edges[:-1], self.bin_edges[1:], self.same, self.mixed, self.C, self.C_err):
                w.writerow([f"{lo:.6g}", f"{hi:.6g}", f"{s:.10g}", f"{m:.10g}", f"{c:.10g}", f"{e:.10g}"])

    def above(self, q: float) -> tuple[float, float]:
        """Weighted mean of C over valid bins with lower edge >= `q`, and its error."""
        sel = self.valid & (self.bin_edges[:-1] >= q - 1e-12)
        sel &= self.C_err > 0
        if not sel.any():
            return float("nan"), float("nan")
        c, e = self.C[sel], self.C_err[sel]
        w = 1 / e**2
        return float(np.sum(w * c) / np.sum(w)), float(1 / np.sqrt(np.sum(w)))


def _hist_chunk(args):
    sample, task, mode, coherent, partners, lo, hi, nbins = args
    _, a, b = task
    s = kernels.be_same(sample.p, sample.x, sample.origin, a, b, mode, coherent, lo, hi, nbins)
    m = kernels.be_mixed(sample.p, sample.origin, a, b, partners, mode, lo, hi, nbins)
    return s, m


def histogram(
    sample: EventSample,
    pair_mode: int = PAIR_ALL,
    coherent: bool = True,
    bins: int = 40,
    q_range: tuple[float, float] = (0.0, 0.4),
    partners: int = 10,
    chunk_size: int = 8192,
    workers: int = 1,
) -> CorrelationHistogram:
    """Same/mixed histograms merged chunk by chunk in fixed order."""
    n = len(sample)
    partners = min(partners, n - 1)
    if partners < 1:
        raise ValueError("event mixing needs at least two events")
    lo, hi = q_range
    tasks = [(sample, t, pair_mode, coherent, partners, lo, hi, bins) for t in rngmod.chunks(n, chunk_size)]
    results = rngmod.map_chunks(_hist_chunk, tasks, workers)
    sw, sw2, cnt, mix = (np.zeros(bins) for _ in range(4))
    for (a, b, c), m in results:
        sw += a
        sw2 += b
        cnt += c
        mix += m
    return CorrelationHistogram(
        bin_edges=np.linspace(lo, hi, bins + 1),
        same=sw,
        same_sq=sw2,
        same_pairs=cnt,
        mixed=mix,
        n_same=float(cnt.sum()),
        n_mixed=float(mix.sum()),
    )


def gaussian_model(q, lam, radius):
    return 1.0 + lam * np.exp(-((q * radius / HBARC) ** 2))


def two_spot_model(q, lam, separation, spot_size):
    """Isotropic average of ``1 + lam cos(q.dx)`` for spots separated by `separation`."""
    return 1.0 + lam * np.sinc(q * separation / (np.pi * HBARC)) * np.exp(-((q * spot_size / HBARC) ** 2))


@dataclass
class FitResult:
    lam: float
    lam_err: float
    radius: float
    radius_err: float

    @property
    def intercept(self) -> float:
        return 1.0 + self.lam


def _fit_mask(h: CorrelationHistogram) -> np.ndarray:
    return h.valid & (h.C_err > 0)


def fit_gaussian(h: CorrelationHistogram, r0: float = 5.0) -> FitResult:
    """Fit ``1 + lam exp(-Q^2 R^2)``; NaN parameters if the histogram cannot constrain it."""
    v = _fit_mask(h)
    if v.sum() < 3:
        return FitResult(np.nan, np.nan, np.nan, np.nan)
    try:
        popt, pcov = curve_fit(gaussian_model, h.centers[v], h.C[v], p0=(1.0, r0), sigma=h.C_err[v], absolute_sigma=True)
    except RuntimeError:
        return FitResult(np.nan, np.nan, np.nan, np.nan)
    err = np.sqrt(np.diag(pcov))
    return FitResult(float(popt[0]), float(err[0]), float(abs(popt[1])), float(err[1]))


def fit_two_spot(h: CorrelationHistogram, separation: float, spot_size: float) -> tuple[float, float]:
    """Fitted ``lam`` (and error) of :func:`two_spot_model` with geometry fixed."""
    v = _fit_mask(h)
    if v.sum() < 2:
        return np.nan, np.nan
    popt, pcov = curve_fit(
        lambda q, lam: two_spot_model(q, lam, separation, spot_size),
        h.centers[v], h.C[v], p0=(0.5,), sigma=h.C_err[v], absolute_sigma=True,
    )
    return float(popt[0]), float(np.sqrt(pcov[0, 0]))


@dataclass
class CorrelationReport:
    histogram: CorrelationHistogram
    fit: FitResult
    c_high: float
    c_high_err: float

    @property
    def c0(self) -> float:
        return self.fit.intercept

    def summary(self) -> dict:
        return {
            "C0": self.c0,
            "C0_err": self.fit.lam_err,
            "lambda": self.fit.lam,
            "R_fit_fm": self.fit.radius,
            "R_fit_err_fm": self.fit.radius_err,
            "C_high": self.c_high,
            "C_high_err": self.c_high_err,
            "first_bin_C": float(self.histogram.C[0]),
            "n_same": self.histogram.n_same,
            "n_mixed": self.histogram.n_mixed,
            "invalid_bins": int(np.count_nonzero(~self.histogram.valid)),
        }


def correlation(
    src: SourceModel,
    n_events: int,
    seed: int,
    bins: int = 40,
    q_range: tuple[float, float] = (0.0, 0.4),
    high_q: float = 0.3,
    workers: int = 1,
) -> CorrelationReport:
    """Q_inv correlation function with event-mixing reference and a Gaussian fit.

    ``C(Q -> 0)`` is the fitted intercept ``1 + lambda``; the large-Q level
    is the error-weighted mean over bins above `high_q`.
    """
    if n_events < 100:
        raise ValueError("n_events must be >= 100")
    sample = sample_events(src, n_events, seed)
    h = histogram(sample, PAIR_ALL, True, bins, q_range, workers=workers)
    fit = fit_gaussian(h, src.radius if src.geometry == "gaussian" else src.spot_size)
    hi, hi_err = h.above(high_q)
    h.meta.update({"geometry": src.geometry, "n_events": n_events, "seed": seed})
    return CorrelationReport(h, fit, hi, hi_err)


def expected_gaussian(sample: EventSample, h: CorrelationHistogram, radius: float) -> np.ndarray:
    """Pair-averaged closed form ``1 + exp(-Q^2 R^2)`` within each bin (the exact expectation)."""
    m = sample.p.shape[1]
    lo, hi, nb = h.bin_edges[0], h.bin_edges[-1], len(h.same)
    acc, cnt = np.zeros(nb), np.zeros(nb)
    for i in range(m):
        for j in range(i + 1, m):
            q = q_inv(sample.p[:, i], sample.p[:, j])
            idx, ok = kernels._py._bin(q, lo, hi, nb)
            acc += np.bincount(idx[ok], weights=gaussian_model(q[ok], 1.0, radius), minlength=nb)
            cnt += np.bincount(idx[ok], minlength=nb)
    with np.errstate(invalid="ignore"):
        return acc / cnt


# --- absorber gedanken experiment -------------------------------------------------


@dataclass
class AbsorberReport:
    absorber_on: bool
    c0: float
    c0_err: float
    histogram: CorrelationHistogram
    selection_histogram: CorrelationHistogram | None = None

    def summary(self) -> dict:
        out = {"absorber_on": self.absorber_on, "C0": self.c0, "C0_err": self.c0_err,
               "n_same": self.histogram.n_same, "n_mixed": self.histogram.n_mixed}
        if self.selection_histogram is not None:
            out["selection_identical"] = bool(
                np.array_equal(self.selection_histogram.same, self.histogram.same)
                and np.array_equal(self.selection_histogram.mixed, self.histogram.mixed)
            )
        return out


def absorber_gedanken(
    src: SourceModel,
    absorber_on: bool,
    n_events: int,
    seed: int,
    bins: int = 40,
    q_range: tuple[float, float] = (0.0, 0.4),
    workers: int = 1,
) -> AbsorberReport:
    """Pairs with one pion from each half, with and without an absorber in the lower half.

    Without the absorber the two assignments of particles to spots are
    indistinguishable and the pair weight is the symmetrized one. With the
    absorber the lower-origin pion's emission context differs from the
    upper one's, so the assignment is resolved and the pair carries no
    interference term. The selection variant resolves the origin by
    tagging at birth instead; in this model it yields the identical
    histogram.
    """
    if src.geometry != "two_halves":
        raise ValueError("the absorber gedanken experiment needs a two_halves source")
    sample = sample_events(src, n_events, seed)
    h = histogram(sample, PAIR_CROSS, not absorber_on, bins, q_range, workers=workers)
    lam, lam_err = fit_two_spot(h, src.separation, src.spot_size)
    sel = histogram(sample, PAIR_CROSS, False, bins, q_range, workers=workers) if absorber_on else None
    h.meta.update({"absorber_on": absorber_on, "n_events": n_events, "seed": seed})
    return AbsorberReport(absorber_on, 1.0 + lam, lam_err, h, sel)
