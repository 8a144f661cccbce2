"""Guiding-equation trajectories and the two-hot-spot intensity-interferometry comparison.

Geometry is planar. Stationary fields (:class:`SourceField`) superpose
cylindrical waves ``e^{ikr}/sqrt(r)`` and plane waves; time-dependent fields
(:class:`PacketField`) superpose products of freely spreading Gaussian
packets in the paraxial picture, with the propagation coordinate ``z``
serving as time (``c = 1``). The guidance velocity is

    v = (c / k) Im(psi* grad psi) / |psi|^2,

the massive-particle law with ``hbar/m`` replaced by ``c/k`` so that a single
wave guides at speed ``c``.

The interferometry model follows both photons jointly through the
two-photon wavefunction

    Psi(y1, y2; z) = phi_u(y1) phi_l(y2) + e^{i theta} phi_l(y1) phi_u(y2),

built from the upper and lower hot spots. Each photon also carries an
independent out-of-plane coordinate whose sign decides which telescope
(A or B) it reaches.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import kstest

from . import config
from . import kernels
from . import rng as rngmod
from .errors import NodeError

C_LIGHT = 1.0


# --- stationary source fields -----------------------------------------------------


@dataclass(frozen=True)
class Source:
    """One wave: ``kind`` ``"spherical"`` (cylindrical ``e^{ikr}/sqrt r`` in the plane) or ``"plane"``."""

    position: tuple
    strength: complex = 1.0
    k: float = 1.0
    kind: str = "spherical"
    direction: tuple = (1.0, 0.0)

    def __post_init__(self):
        if self.kind not in ("spherical", "plane"):
            raise ValueError(f"unknown source kind {self.kind!r}")
        if not self.k > 0:
            raise ValueError("wavenumber must be positive")
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))
        d = np.asarray(self.direction, dtype=float)
        object.__setattr__(self, "direction", tuple(d / np.linalg.norm(d)))


@dataclass(frozen=True)
class SourceField:
    """Superposition of stationary waves sharing one wavenumber (the guiding field)."""

    sources: tuple
    c: float = C_LIGHT

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(self.sources))
        if not self.sources:
            raise ValueError("a guiding field needs at least one source")
        ks = {s.k for s in self.sources}
        if len(ks) != 1:
            raise ValueError("all sources must share one wavenumber")

    @property
    def k(self) -> float:
        return self.sources[0].k

    def terms(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Per-source values and gradients at point `x`: ``(psi_j, grad psi_j)``."""
        x = np.asarray(x, dtype=float)
        vals, grads = [], []
        for s in self.sources:
            if s.kind == "plane":
                n = np.asarray(s.direction)
                p = s.strength * np.exp(1j * s.k * np.dot(n, x - np.asarray(s.position)))
                vals.append(p)
                grads.append(1j * s.k * n * p)
            else:
                d = x - np.asarray(s.position)
                r = float(np.hypot(*d))
                if r == 0.0:
                    raise NodeError("field evaluated at a point source")
                p = s.strength * np.exp(1j * s.k * r) / np.sqrt(r)
                vals.append(p)
                grads.append((1j * s.k - 0.5 / r) * p * d / r)
        return np.array(vals), np.array(grads)

    def psi(self, x) -> complex:
        return complex(self.terms(x)[0].sum())

    def grad(self, x) -> np.ndarray:
        return self.terms(x)[1].sum(axis=0)

    def velocity(self, x, t: float = 0.0) -> np.ndarray:
        vals, grads = self.terms(x)
        psi, g = vals.sum(), grads.sum(axis=0)
        dens = abs(psi) ** 2
        if dens < config.get().node_floor * np.sum(np.abs(vals) ** 2):
            raise NodeError(f"|psi|^2 = {dens:.3g} below the node floor at {np.asarray(x)}")
        return self.c / self.k * np.imag(np.conj(psi) * g) / dens


GuidingField = SourceField


def two_hot_spots(separation: float, k: float = 1.0, delta: float = 0.0, strength: complex = 1.0) -> SourceField:
    """Two equal cylindrical sources at ``(0, +-separation/2)``; `delta` is the path difference in wavelengths."""
    phase = np.exp(2j * np.pi * delta)
    return SourceField(
        (
            Source((0.0, separation / 2), strength, k),
            Source((0.0, -separation / 2), strength * phase, k),
        )
    )


def velocity(field, x, t: float = 0.0) -> np.ndarray:
    """Guidance velocity of `field` at `x` (raises :class:`NodeError` near nodes)."""
    return field.velocity(x, t)


# --- time-dependent packet fields ---------------------------------------------------


@dataclass(frozen=True, eq=False)
class PacketField:
    """Sum of terms ``coefficient_t * prod_d g(y_d - center_td)`` of free Gaussian packets.

    Each 1D packet starts with width `sigma0` and transverse wavenumber
    ``kicks_td``; ``z`` plays the role of time with ``hbar/m -> 1/k``.
    """

    centers: np.ndarray
    coefficients: np.ndarray
    kicks: np.ndarray | None = None
    sigma0: float = 1.0
    k: float = 1.0

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.centers, dtype=float))
        coef = np.asarray(self.coefficients, dtype=complex).reshape(-1)
        if coef.shape[0] != c.shape[0]:
            raise ValueError("one coefficient per term is required")
        if np.any(coef == 0):
            raise ValueError("zero coefficients are not allowed; drop the term")
        kicks = np.zeros_like(c) if self.kicks is None else np.atleast_2d(np.asarray(self.kicks, dtype=float))
        object.__setattr__(self, "centers", np.ascontiguousarray(c))
        object.__setattr__(self, "coefficients", coef)
        object.__setattr__(self, "kicks", np.ascontiguousarray(kicks))

    @property
    def dims(self) -> int:
        return self.centers.shape[1]

    def _args(self):
        return (
            self.centers,
            self.kicks,
            np.ascontiguousarray(np.log(np.abs(self.coefficients))),
            np.ascontiguousarray(np.angle(self.coefficients)),
            float(self.sigma0),
            float(self.k),
        )

    def term_values(self, pos, z) -> np.ndarray:
        pos = np.atleast_2d(np.asarray(pos, dtype=float))
        L, _ = kernels._py.packet_terms(pos, z, *self._args())
        return np.exp(L)

    def psi(self, pos, z) -> np.ndarray:
        return self.term_values(pos, z).sum(axis=1)

    def density(self, pos, z) -> np.ndarray:
        return np.abs(self.psi(pos, z)) ** 2

    def grad(self, pos, z) -> np.ndarray:
        pos = np.atleast_2d(np.asarray(pos, dtype=float))
        L, G = kernels._py.packet_terms(pos, z, *self._args())
        return np.einsum("nt,ntd->nd", np.exp(L), G)

    def velocities(self, pos, z) -> tuple[np.ndarray, np.ndarray]:
        pos = np.atleast_2d(np.asarray(pos, dtype=float))
        return kernels._py.packet_velocity(pos, z, *self._args(), config.get().node_floor)

    def velocity(self, x, t: float = 0.0) -> np.ndarray:
        v, node = self.velocities(np.asarray(x, dtype=float)[None, :], t)
        if node[0] or not np.all(np.isfinite(v)):
            raise NodeError(f"packet field node near {np.asarray(x)} at z = {t}")
        return C_LIGHT * v[0]


# --- integration --------------------------------------------------------------------


@dataclass
class Trajectory:
    times: np.ndarray
    positions: np.ndarray
    origin: str | None = None
    node_trapped: bool = False

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.positions = np.asarray(self.positions, dtype=float)
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must increase strictly")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("trajectory positions must be finite")

    @property
    def end(self) -> np.ndarray:
        return self.positions[-1]


def _rk4_step(f: Callable, x, t, h):
    k1 = f(x, t)
    k2 = f(x + 0.5 * h * k1, t + 0.5 * h)
    k3 = f(x + 0.5 * h * k2, t + 0.5 * h)
    k4 = f(x + h * k3, t + h)
    return x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _adaptive_step(f, x, t, h, depth, max_halvings):
    """One step of size `h`, split into halves on NodeError up to `max_halvings` times."""
    try:
        return _rk4_step(f, x, t, h)
    except NodeError:
        if depth >= max_halvings:
            raise
        mid = _adaptive_step(f, x, t, h / 2, depth + 1, max_halvings)
        return _adaptive_step(f, mid, t + h / 2, h / 2, depth + 1, max_halvings)


def integrate(field, start, dt: float, t_end: float, t0: float = 0.0, max_halvings: int = 8,
              origin: str | None = None) -> Trajectory:
    """Fixed-step RK4 of ``dx/dt = v(x, t)`` from `t0` to `t_end`.

    A step that meets a node is retried in halves down to ``dt / 2**max_halvings``;
    beyond that the trajectory stops and is flagged ``node_trapped``.
    """
    if dt <= 0 or t_end <= t0:
        raise ValueError("need dt > 0 and t_end > t0")
    x = np.asarray(start, dtype=float)
    field.velocity(x, t0)  # start must be off nodes
    n = int(round((t_end - t0) / dt))
    times, pos = [t0], [x.copy()]
    f = field.velocity
    for i in range(n):
        t = t0 + i * dt
        try:
            x = _adaptive_step(f, x, t, dt, 0, max_halvings)
        except NodeError:
            return Trajectory(np.array(times), np.array(pos), origin, node_trapped=True)
        times.append(t0 + (i + 1) * dt)
        pos.append(x.copy())
    return Trajectory(np.array(times), np.array(pos), origin)


@dataclass
class EnsembleResult:
    positions: np.ndarray
    node_trapped: np.ndarray


def integrate_ensemble(field: PacketField, starts: np.ndarray, dz: float, z_end: float, z0: float = 0.0,
                       max_halvings: int = 8) -> EnsembleResult:
    """Final positions of many trajectories through the compiled (or NumPy) RK4 kernel.

    Trajectories that meet a node are resumed individually with step halving;
    those still trapped are flagged and keep their last position.
    """
    starts = np.ascontiguousarray(np.atleast_2d(np.asarray(starts, dtype=float)))
    nsteps = int(round((z_end - z0) / dz))
    out, hit = kernels.rk4_packets(starts, z0, dz, nsteps, *field._args(), config.get().node_floor)
    trapped = np.zeros(len(starts), dtype=bool)
    for i in np.nonzero(hit >= 0)[0]:
        x = out[i].copy()
        try:
            for step in range(hit[i], nsteps):
                x = _adaptive_step(field.velocity, x, z0 + step * dz, dz, 0, max_halvings)
        except NodeError:
            trapped[i] = True
        out[i] = x
    return EnsembleResult(out, trapped)


# --- equivariance check ---------------------------------------------------------------


def two_packet_field(a: float = 8.0, sigma0: float = 1.0, k: float = 1.0, theta: float = 0.0) -> PacketField:
    """1D transverse field of two packets from spots at ``+-a`` (upper, lower)."""
    return PacketField([[a], [-a]], [1.0, np.exp(1j * theta)], sigma0=sigma0, k=k)


def sample_density(field: PacketField, n: int, z: float, seed: int, *path) -> np.ndarray:
    """Exact draws from ``|psi(., z)|^2`` by rejection from the incoherent term mixture.

    Valid when each term's own density is a normalized Gaussian of equal
    weight (true for unit-modulus coefficients at ``z = 0``); the acceptance
    ratio ``|psi|^2 / (T * sum |term|^2)`` is at most 1.
    """
    g = rngmod.stream(seed, "sample_density", *path)
    T, D = field.centers.shape
    width = field.sigma0 * np.sqrt(1 + (z / (2 * field.k * field.sigma0**2)) ** 2)
    out = np.empty((0, D))
    while len(out) < n:
        m = 2 * (n - len(out)) + 16
        which = g.integers(0, T, m)
        cand = field.centers[which] + field.kicks[which] * z / field.k + g.normal(0, width, (m, D))
        terms = field.term_values(cand, z)
        ratio = np.abs(terms.sum(axis=1)) ** 2 / (T * np.sum(np.abs(terms) ** 2, axis=1))
        keep = g.random(m) < ratio
        out = np.vstack([out, cand[keep]])
    return out[:n]


def density_cdf(field: PacketField, z: float, lo: float, hi: float, points: int = 200001):
    """CDF of a 1D field's ``|psi(., z)|^2`` by trapezoid quadrature on ``[lo, hi]``."""
    grid = np.linspace(lo, hi, points)
    dens = field.density(grid[:, None], z)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
    cum /= cum[-1]
    return lambda y: np.interp(y, grid, cum)


@dataclass
class EquivarianceReport:
    n: int
    z_end: float
    ks_statistic: float
    ks_initial: float
    node_trapped: int
    order_preserved: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def equivariance_check(n: int = 10**5, seed: int = 0, z_end: float = 40.0, dz: float = 0.1,
                       field: PacketField | None = None) -> EquivarianceReport:
    """Evolve ``|psi|^2``-distributed starts and compare their final density with ``|psi(., z_end)|^2``."""
    field = two_packet_field() if field is None else field
    starts = sample_density(field, n, 0.0, seed, "equivariance")
    res = integrate_ensemble(field, starts, dz, z_end)
    span = np.max(np.abs(field.centers)) + 12 * field.sigma0 * np.sqrt(1 + (z_end / (2 * field.k * field.sigma0**2)) ** 2)
    cdf_end = density_cdf(field, z_end, -span, span)
    cdf_0 = density_cdf(field, 0.0, -span, span)
    ks_end = kstest(res.positions[:, 0], cdf_end).statistic
    ks_0 = kstest(starts[:, 0], cdf_0).statistic
    order = np.argsort(starts[:, 0], kind="stable")
    preserved = bool(np.all(np.diff(res.positions[order, 0]) >= 0))
    return EquivarianceReport(n, z_end, float(ks_end), float(ks_0), int(res.node_trapped.sum()), preserved)


# --- intensity interferometry ---------------------------------------------------------


@dataclass(frozen=True)
class HBTModel:
    """Two hot spots at transverse ``+-a`` emitting packets of width `sigma0`, observed at distance `L`."""

    a: float = 8.0
    sigma0: float = 1.0
    k: float = 1.0
    L: float = 40.0

    @property
    def beta(self) -> complex:
        sigma_t = self.sigma0 + 1j * self.L / (2 * self.k * self.sigma0)
        return 1.0 / (4 * self.sigma0 * sigma_t)

    @property
    def fringe_period(self) -> float:
        """Period in ``u = y_A - y_B`` of the exchange term at the observation distance."""
        return float(np.pi / (2 * self.a * abs(self.beta.imag)))

    def joint_field(self, delta: float = 0.0) -> PacketField:
        """``phi_u(y1) phi_l(y2) + e^{2 pi i delta} phi_l(y1) phi_u(y2)``."""
        return PacketField(
            [[self.a, -self.a], [-self.a, self.a]],
            [1.0, np.exp(2j * np.pi * delta)],
            sigma0=self.sigma0,
            k=self.k,
        )

    def product_field(self, upper_first: bool) -> PacketField:
        c = [[self.a, -self.a]] if upper_first else [[-self.a, self.a]]
        return PacketField(c, [1.0], sigma0=self.sigma0, k=self.k)


@dataclass(frozen=True)
class DetectorGeometry:
    """Telescopes A and B at distance `distance`; B is moved back in ``moved_back_twice``.

    The moved telescope sits at twice the distance with half the aperture
    angle, which keeps its transverse acceptance ``distance * aperture``.
    """

    distance: float = 40.0
    aperture: float | None = None
    arrangement: str = "baseline"

    def __post_init__(self):
        if self.arrangement not in ("baseline", "moved_back_twice"):
            raise ValueError(f"unknown arrangement {self.arrangement!r}")

    def resolved(self, model: HBTModel) -> "DetectorGeometry":
        if self.aperture is not None:
            return self
        return DetectorGeometry(self.distance, model.fringe_period / (16 * self.distance), self.arrangement)

    @property
    def telescopes(self) -> list[tuple[float, float]]:
        """``(distance, aperture)`` of A and B."""
        a = (self.distance, self.aperture)
        if self.arrangement == "moved_back_twice":
            return [a, (2 * self.distance, self.aperture / 2)]
        return [a, a]

    @property
    def half_window(self) -> float:
        d, ap = self.telescopes[1]
        return d * ap


def _u_density(field: PacketField, z: float, u: np.ndarray, span: float, points: int = 4001) -> np.ndarray:
    """Density of ``u = y1 - y2`` under ``|Psi(y1, y2; z)|^2`` (quadrature over the centre of mass)."""
    s = np.linspace(-span, span, points)
    u = np.asarray(u, dtype=float)
    out = np.empty(u.shape)
    step = max(1, 2**18 // points)
    for i in range(0, u.size, step):
        uu, ss = np.meshgrid(u[i:i + step], s, indexing="ij")
        pos = np.stack([ss + uu / 2, ss - uu / 2], axis=-1).reshape(-1, 2)
        dens = field.density(pos, z).reshape(uu.shape)
        out[i:i + step] = np.trapezoid(dens, s, axis=1)
    return out


@dataclass
class HBTEnsemble:
    """Joint trajectories of photon pairs at the observation distance."""

    model: HBTModel
    y_end: np.ndarray  # (n, 2)
    origin: np.ndarray  # (n, 2) 0 = upper, 1 = lower
    telescope: np.ndarray  # (n, 2) 0 = A, 1 = B
    node_trapped: np.ndarray
    delta: float

    @property
    def coincident(self) -> np.ndarray:
        return self.telescope[:, 0] != self.telescope[:, 1]

    def u(self) -> np.ndarray:
        """``y_A - y_B`` for coincident pairs (NaN otherwise)."""
        a_is_1 = self.telescope[:, 0] == 0
        ya = np.where(a_is_1, self.y_end[:, 0], self.y_end[:, 1])
        yb = np.where(a_is_1, self.y_end[:, 1], self.y_end[:, 0])
        return np.where(self.coincident, ya - yb, np.nan)

    def b_origin(self) -> np.ndarray:
        return np.where(self.telescope[:, 0] == 1, self.origin[:, 0], self.origin[:, 1])


def simulate_hbt(model: HBTModel, n: int, seed: int, delta: float = 0.0, dz: float = 0.1,
                 chunk_size: int = 16384) -> HBTEnsemble:
    """Photon pairs born classically at the spots and guided jointly to ``z = L``.

    Starts are drawn from ``|Psi(., 0)|^2``; each photon's origin is the spot
    it was born at. Out-of-plane coordinates evolve as free Gaussian
    trajectories (pure scaling), so their signs, drawn 50/50, fix the
    telescope each photon reaches.
    """
    field = model.joint_field(delta)
    ys, ws, trapped = [], [], []
    for idx, a, b in rngmod.chunks(n, chunk_size):
        starts = sample_density(field, b - a, 0.0, seed, "hbt", idx)
        ws.append(rngmod.stream(seed, "hbt_w", idx).normal(0.0, model.sigma0, (b - a, 2)))
        res = integrate_ensemble(field, starts, dz, model.L)
        ys.append(np.concatenate([starts, res.positions], axis=1))
        trapped.append(res.node_trapped)
    y = np.concatenate(ys)
    origin = (y[:, :2] < 0).astype(np.int8)
    telescope = (np.concatenate(ws) > 0).astype(np.int8)
    return HBTEnsemble(model, y[:, 2:], origin, telescope, np.concatenate(trapped), delta)


@dataclass
class RateRecord:
    model: str
    arrangement: str
    delta: float
    rate: float
    error: float

    def to_dict(self) -> dict:
        return {"model": self.model, "arrangement": self.arrangement, "delta": self.delta,
                "rate": self.rate, "error": self.error}


def u_densities(model: HBTModel, u, delta: float = 0.0) -> dict:
    """Closed-form densities of ``u = y1 - y2`` at the observation distance.

    With ``alpha = 1 / (4 sigma0^2 (1 + i tau))`` each direct term integrates
    over the centre of mass to a Gaussian ``exp(-Re(alpha) (u -+ 2a)^2)`` and
    the exchange term to ``2 exp(-Re(alpha)(u^2 + 4a^2)) cos(4 a Im(alpha) u - theta)``.
    ``symmetrized`` is normalized as a whole; ``upper_lower`` and
    ``lower_upper`` (photon 1 from the upper / lower spot) are each normalized.
    """
    u = np.asarray(u, dtype=float)
    tau = model.L / (2 * model.k * model.sigma0**2)
    alpha = 1.0 / (4 * model.sigma0**2 * (1 + 1j * tau))
    ra, ia, a = alpha.real, alpha.imag, model.a
    theta = 2 * np.pi * delta
    gauss_norm = np.sqrt(np.pi / ra)
    ul = np.exp(-ra * (u - 2 * a) ** 2) / gauss_norm
    lu = np.exp(-ra * (u + 2 * a) ** 2) / gauss_norm
    cross = 2 * np.exp(-ra * (u**2 + 4 * a**2)) * np.cos(4 * a * ia * u - theta) / gauss_norm
    # Norm of the exchange term is conserved: exp(-a^2 / sigma0^2) cos(theta) per unit direct weight.
    norm_sym = 2 + 2 * np.exp(-(a / model.sigma0) ** 2) * np.cos(theta)
    return {"symmetrized": (ul + lu + cross) / norm_sym, "upper_lower": ul, "lower_upper": lu}


def qm_rates(model: HBTModel, centers, half_window: float, delta: float = 0.0, nodes: int = 64) -> dict:
    """Coincidence rates per window centre in ``u = y_A - y_B`` (Gauss-Legendre over each window).

    ``symmetrized``: both telescopes unresolved; ``normal``: distinguishable
    photons (no exchange term); ``resolved``: B accepts only upper-origin
    photons. All include the factor 1/2 for the photons reaching different
    telescopes.
    """
    x, w = np.polynomial.legendre.leggauss(nodes)
    c = np.atleast_1d(np.asarray(centers, dtype=float))
    u = c[:, None] + half_window * x[None, :]
    f = u_densities(model, u, delta)
    integ = {k: half_window * (v @ w) for k, v in f.items()}
    # Telescope B on the upper-origin photon: u = y_lower - y_upper.
    return {
        "symmetrized": 0.5 * integ["symmetrized"],
        "normal": 0.25 * (integ["upper_lower"] + integ["lower_upper"]),
        "resolved": 0.25 * integ["lower_upper"],
    }


def dbb_rates(ens: HBTEnsemble, centers: np.ndarray, half_window: float, resolved: bool) -> tuple[np.ndarray, np.ndarray]:
    """Coincidence fractions per window centre; with `resolved`, B photons must be of upper origin."""
    u = ens.u()
    sel = ens.coincident & ~ens.node_trapped
    if resolved:
        sel &= ens.b_origin() == 0
    n = len(u)
    rates, errs = [], []
    for c in np.atleast_1d(centers):
        hit = sel & (np.abs(u - c) < half_window)
        p = hit.sum() / n
        rates.append(p)
        errs.append(np.sqrt(max(p * (1 - p), 1.0 / n) / n))
    return np.array(rates), np.array(errs)


@dataclass
class HBTReport:
    arrangement: str
    delta: float
    rate_qm: float
    rate_dbb: float
    rate_dbb_err: float
    rate_normal: float
    node_trapped: int
    records: list = field(default_factory=list)

    @property
    def ratio(self) -> float:
        return self.rate_dbb / self.rate_qm

    @property
    def ratio_err(self) -> float:
        return self.rate_dbb_err / self.rate_qm

    def to_dict(self) -> dict:
        return {
            "arrangement": self.arrangement,
            "delta": self.delta,
            "rate_qm": self.rate_qm,
            "rate_dbb": self.rate_dbb,
            "rate_dbb_err": self.rate_dbb_err,
            "rate_normal": self.rate_normal,
            "ratio_dbb_qm": self.ratio,
            "ratio_err": self.ratio_err,
            "node_trapped": self.node_trapped,
        }


def hbt_compare(model: HBTModel, detectors: DetectorGeometry, n: int, seed: int, delta: float = 0.0,
                ensemble: HBTEnsemble | None = None) -> HBTReport:
    """Coincidence rates of both models at fringe offset `delta` (in fringe periods).

    The telescope baseline is ``u = delta * period``. In the moved
    arrangement quantum mechanics counts only origin-resolved (unsymmetrized)
    pairs, while the guided photons keep their enhanced distribution and B
    registers those of upper origin.
    """
    det = detectors.resolved(model)
    ens = simulate_hbt(model, n, seed) if ensemble is None else ensemble
    hw = det.half_window
    center = delta * model.fringe_period
    qm = qm_rates(model, [center], hw)
    moved = det.arrangement == "moved_back_twice"
    rate_qm = float(qm["resolved"][0] if moved else qm["symmetrized"][0])
    rd, re = dbb_rates(ens, [center], hw, resolved=moved)
    records = [
        RateRecord("qm", det.arrangement, delta, rate_qm, 0.0),
        RateRecord("dbb", det.arrangement, delta, float(rd[0]), float(re[0])),
        RateRecord("normal", det.arrangement, delta, float(qm["normal"][0]), 0.0),
    ]
    return HBTReport(det.arrangement, delta, rate_qm, float(rd[0]), float(re[0]), float(qm["normal"][0]),
                     int(ens.node_trapped.sum()), records)


@dataclass
class CorrespondenceReport:
    delta_range: tuple
    spans_period: bool
    mean_qm: float
    mean_dbb: float
    mean_dbb_err: float
    mean_normal: float

    @property
    def deviation_qm(self) -> float:
        return self.mean_qm / self.mean_normal - 1

    @property
    def deviation_dbb(self) -> float:
        return self.mean_dbb / self.mean_normal - 1

    @property
    def ratio_qm(self) -> float:
        return self.mean_qm / self.mean_normal

    def to_dict(self) -> dict:
        return {
            "delta_range": list(self.delta_range),
            "spans_period": self.spans_period,
            "mean_qm": self.mean_qm,
            "mean_dbb": self.mean_dbb,
            "mean_dbb_err": self.mean_dbb_err,
            "mean_normal": self.mean_normal,
            "deviation_qm": self.deviation_qm,
            "deviation_dbb": self.deviation_dbb,
        }


def correspondence_average(model: HBTModel, detectors: DetectorGeometry, delta_range: Sequence[float], n: int,
                           seed: int, points: int = 64, ensemble: HBTEnsemble | None = None) -> CorrespondenceReport:
    """Average the baseline coincidence rate over fringe offsets in `delta_range`.

    Offsets are sampled at the midpoints of `points` equal sub-intervals; a
    zero-width range evaluates the single offset. ``spans_period`` records
    whether the range covers at least one full fringe.
    """
    lo, hi = float(delta_range[0]), float(delta_range[1])
    if hi < lo:
        raise ValueError("delta_range must be increasing")
    det = detectors.resolved(model)
    hw = det.half_window
    if hi == lo:
        deltas = np.array([lo])
    else:
        deltas = lo + (np.arange(points) + 0.5) * (hi - lo) / points
    centers = deltas * model.fringe_period
    qm = qm_rates(model, centers, hw)
    need_dbb = ensemble is not None or n > 0
    if need_dbb:
        ens = simulate_hbt(model, n, seed) if ensemble is None else ensemble
        rd, _ = dbb_rates(ens, centers, hw, resolved=False)
        # Windows may overlap, so the error of the mean comes from the pooled hit count.
        mean_dbb = float(rd.mean())
        pooled = rd.sum() * len(ens.u())
        err = mean_dbb / np.sqrt(pooled) if pooled > 0 else float("nan")
    else:
        mean_dbb, err = float("nan"), float("nan")
    return CorrespondenceReport((lo, hi), hi - lo >= 1.0 - 1e-12, float(qm["symmetrized"].mean()), mean_dbb,
                                float(err), float(qm["normal"].mean()))


# --- output ---------------------------------------------------------------------------


def pair_trajectories(model: HBTModel, starts: np.ndarray, dz: float = 0.1, delta: float = 0.0) -> list[Trajectory]:
    """Full joint trajectories of a few pairs, one :class:`Trajectory` per photon with points ``(z, y)``."""
    field = model.joint_field(delta)
    out = []
    for s in np.atleast_2d(starts):
        tr = integrate(field, s, dz, model.L)
        for j in range(2):
            origin = "upper_spot" if s[j] > 0 else "lower_spot"
            pts = np.stack([tr.times, tr.positions[:, j]], axis=1)
            out.append(Trajectory(tr.times, pts, origin, tr.node_trapped))
    return out


def write_trajectories_csv(path, trajectories: Sequence[Trajectory]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "y", "origin"])
        for tr in trajectories:
            for t, p in zip(tr.times, tr.positions):
                w.writerow([f"{t:.10g}", f"{p[0]:.10g}", f"{p[1]:.10g}", tr.origin or ""])


def write_records_json(path, records: Sequence[RateRecord]) -> None:
    with open(path, "w") as fh:
        json.dump([r.to_dict() for r in records], fh, indent=2, sort_keys=True)
        fh.write("\n")
