"""Dephasing of a qubit pair in a common boson bath and its CHER marginals.

Units: hbar = k_B = 1.  Frequencies are measured in units of the spectral
cutoff (``omega_c`` for super-Ohmic baths, ``gamma`` for Drude-Lorentz), so
temperatures such as 2.4 or 3.6 are dimensionless.

The two bath functions are

    theta(t) = 4 * int_0^inf J(w)/w^2 (w t - sin w t) dw
    Phi(t)   = 4 * int_0^inf J(w)/w^2 coth(w / 2T) (1 - cos w t) dw

and the dephasing factors of the pair are

    phi1  = exp(+i theta - Phi)      (x1 marginal)
    phi9  = exp(-4 Phi)              (u marginal, frequency sqrt(2) u)
    phi13 = exp(-i theta - Phi)      (x13 marginal)
    phi6  = 1                        (independent delta component)
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate, special

from .grids import MARGINAL_POINTS, SQRT2, Marginal, MarginalTriple, uniform_axis

log = logging.getLogger(__name__)

QUAD_RTOL = 1e-8
N_TIMES = 4096
DECAY_TARGET = 1e-6
DECAY_LIMIT = 1e-3
IMAG_RESIDUE = 1e-6
# half-widths (in units of omega_c or gamma) that keep the lost tail mass below 1e-3
DEFAULT_HALF_WIDTH = {"super_ohmic": 16.0, "drude_lorentz": 20.0}


class QuadratureError(ArithmeticError):
    """An adaptive integral did not reach the requested tolerance."""

    def __init__(self, message, **diagnostics):
        super().__init__(f"{message} ({', '.join(f'{k}={v!r}' for k, v in diagnostics.items())})")
        self.diagnostics = diagnostics


class AliasingError(ValueError):
    """The characteristic function has not decayed by the end of the time grid."""


class InversionError(ValueError):
    """The characteristic function is inconsistent with a real density."""


@dataclass(frozen=True)
class SpectralDensity:
    """Bath coupling weight J(w).

    ``kind`` is ``"super_ohmic"`` (uses eta, s, omega_c) or
    ``"drude_lorentz"`` (uses eta, gamma).
    """

    kind: str
    eta: float = 0.1
    s: float = 2.0
    omega_c: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        if self.kind not in ("super_ohmic", "drude_lorentz"):
            raise ValueError(f"unknown spectral density kind {self.kind!r}")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.kind == "super_ohmic":
            if not self.s > 1:
                raise ValueError("super-Ohmic densities need s > 1")
            if not self.omega_c > 0:
                raise ValueError("omega_c must be positive")
        elif not self.gamma > 0:
            raise ValueError("gamma must be positive")

    @classmethod
    def super_ohmic(cls, eta=0.1, s=2.0, omega_c=1.0):
        return cls("super_ohmic", eta=eta, s=s, omega_c=omega_c)

    @classmethod
    def drude_lorentz(cls, eta=0.1, gamma=1.0):
        return cls("drude_lorentz", eta=eta, gamma=gamma)

    @property
    def scale(self) -> float:
        return self.omega_c if self.kind == "super_ohmic" else self.gamma

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.kind == "super_ohmic":
            d.pop("gamma")
        else:
            d.pop("s")
            d.pop("omega_c")
        return d

    def __call__(self, omega):
        return spectral_density(omega, self)

    def over_omega2(self, omega):
        """J(w)/w^2, written so that no 0/0 appears for w > 0."""
        omega = np.asarray(omega, dtype=float)
        if self.kind == "super_ohmic":
            wc = self.omega_c
            return self.eta * omega ** (self.s - 2.0) * wc ** (1.0 - self.s) * np.exp(-omega / wc)
        g = self.gamma
        return (2.0 * self.eta * g / np.pi) / (omega * (omega * omega + g * g))

    def cutoff(self, temperature: float) -> float:
        """Frequency beyond which the tail is handled separately."""
        if self.kind == "super_ohmic":
            return self.omega_c * (45.0 + 3.0 * self.s)
        return 50.0 * max(self.gamma, temperature)


@dataclass(frozen=True)
class BathConfig:
    temperature: float = 0.0

    def __post_init__(self):
        if not self.temperature >= 0:
            raise ValueError("temperature must be >= 0")


def spectral_density(omega, sd: SpectralDensity):
    """Evaluate J(w) for w >= 0."""
    omega = np.asarray(omega, dtype=float)
    if np.any(omega < 0):
        raise ValueError("spectral density is defined for omega >= 0 only")
    if sd.kind == "super_ohmic":
        wc = sd.omega_c
        out = sd.eta * omega**sd.s * wc ** (1.0 - sd.s) * np.exp(-omega / wc)
    else:
        g = sd.gamma
        out = (2.0 * sd.eta * g / np.pi) * omega / (omega * omega + g * g)
    return out if out.ndim else float(out)


def _coth_weight(omega, temperature):
    if temperature == 0:
        return np.ones_like(omega)
    with np.errstate(over="ignore", divide="ignore"):
        return 1.0 / np.tanh(omega / (2.0 * temperature))


def _one_minus_cos(x):
    return 2.0 * np.sin(0.5 * x) ** 2


def _x_minus_sin(x):
    x = np.asarray(x, dtype=float)
    out = np.atleast_1d(x - np.sin(x))
    x = np.atleast_1d(x)
    small = np.abs(x) < 0.5
    if np.any(small):
        # Taylor series where x - sin(x) cancels catastrophically
        xs = x[small]
        x2 = xs * xs
        out[small] = xs * x2 / 6.0 * (1 - x2 / 20 * (1 - x2 / 42 * (1 - x2 / 72 * (1 - x2 / 110 * (1 - x2 / 156)))))
    return out if out.size > 1 or out.ndim == x.ndim and x.shape != (1,) else out[0]


# --- scalar adaptive quadrature ---------------------------------------------


def _quad(f, a, b, **kw):
    # QAWF (oscillatory weight on an infinite range) insists on epsabs > 0
    epsabs = 1e-16 if "weight" in kw and np.isinf(b) else 0.0
    val, err = integrate.quad(f, a, b, limit=2000, epsabs=epsabs, epsrel=1e-11, full_output=1, **kw)[:2]
    return val, err


def _checked(parts, what, t):
    value = sum(p[0] for p in parts)
    err = sum(p[1] for p in parts)
    scale = max(abs(value), sum(abs(p[0]) for p in parts) * 1e-6, 1e-300)
    if err > QUAD_RTOL * scale and err > 1e-14:
        raise QuadratureError(f"{what} quadrature did not converge", t=t, value=value, abserr=err)
    return value


def _breakpoints(sd, temperature, upper):
    pts = {sd.scale, 0.1 * sd.scale}
    if temperature > 0:
        pts.add(2.0 * temperature)
    return sorted(p for p in pts if 0 < p < upper)


def theta(t: float, sd: SpectralDensity) -> float:
    """Phase function theta(t) by adaptive quadrature (relative tolerance 1e-8)."""
    if t < 0:
        raise ValueError("t must be >= 0")
    if t == 0:
        return 0.0
    W = sd.cutoff(0.0)
    split = min(W, 1.0 / t)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        parts = [
            _quad(lambda w: sd.over_omega2(w) * _x_minus_sin(w * t), 0.0, split, points=_breakpoints(sd, 0, split))
        ]
        if split < W:
            p1 = _quad(lambda w: sd.over_omega2(w) * w, split, W, points=_breakpoints(sd, 0, W) or None)
            parts.append((t * p1[0], t * p1[1]))
            p2 = _quad(sd.over_omega2, split, W, weight="sin", wvar=t)
            parts.append((-p2[0], p2[1]))
        p3 = _quad(lambda w: sd.over_omega2(w) * w, W, np.inf)
        parts.append((t * p3[0], t * p3[1]))
        p4 = _quad(sd.over_omega2, W, np.inf, weight="sin", wvar=t)
        parts.append((-p4[0], p4[1]))
    return 4.0 * _checked(parts, "theta", t)


def phi_decoherence(t: float, sd: SpectralDensity, bath: BathConfig) -> float:
    """Decoherence function Phi(t) by adaptive quadrature (relative tolerance 1e-8)."""
    if t < 0:
        raise ValueError("t must be >= 0")
    if t == 0:
        return 0.0
    T = bath.temperature
    W = sd.cutoff(T)
    split = min(W, 1.0 / t)

    def g(w):
        return sd.over_omega2(w) * _coth_weight(w, T)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        parts = [_quad(lambda w: g(w) * _one_minus_cos(w * t), 0.0, split, points=_breakpoints(sd, T, split))]
        if split < W:
            parts.append(_quad(g, split, W, points=_breakpoints(sd, T, W) or None))
            p = _quad(g, split, W, weight="cos", wvar=t)
            parts.append((-p[0], p[1]))
        parts.append(_quad(g, W, np.inf))
        p = _quad(g, W, np.inf, weight="cos", wvar=t)
        parts.append((-p[0], p[1]))
    return 4.0 * _checked(parts, "Phi", t)


# --- vectorised panel quadrature over a whole time grid ----------------------


def _oscillatory_tail_moments(a, n_max):
    """C_n(a) = int_a^inf cos(y)/y^n dy and S_n likewise, for n = 1..n_max."""
    si, ci = special.sici(a)
    C = [None, -ci]
    S = [None, 0.5 * np.pi - si]
    ca, sa = np.cos(a), np.sin(a)
    for n in range(2, n_max + 1):
        an = (n - 1) * a ** (n - 1)
        C.append(ca / an - S[n - 1] / (n - 1))
        S.append(sa / an + C[n - 1] / (n - 1))
    return C, S


def _tail_oscillation(sd, W, times, kind):
    """int_W^inf (J/w^2) {cos | sin}(w t) dw for algebraic tails, else zero.

    For the Drude-Lorentz family J/w^2 = c (w^-3 - g^2 w^-5 + g^4 w^-7 - ...)
    once w >> gamma; three terms keep the relative error below (gamma/W)^6.
    The thermal factor is 1 to double precision beyond W >= 50 T.
    """
    out = np.zeros_like(times)
    if sd.kind != "drude_lorentz":
        return out
    pos = times > 0
    t = times[pos]
    c = 2.0 * sd.eta * sd.gamma / np.pi
    g2 = sd.gamma**2
    C, S = _oscillatory_tail_moments(W * t, 7)
    M = C if kind == "cos" else S
    acc = np.zeros_like(t)
    for k, n in enumerate((3, 5, 7)):
        acc += (-g2) ** k * t ** (n - 1) * M[n]
    out[pos] = c * acc
    return out


def _gauss_panels(edges, order):
    x, w = np.polynomial.legendre.leggauss(order)
    a, b = edges[:-1, None], edges[1:, None]
    half = 0.5 * (b - a)
    return (half * x + 0.5 * (a + b)).ravel(), (half * w).ravel()


def _panel_edges(sd, temperature, W, t_max, refine):
    """Panel edges on [0, W]: graded towards 0, then as wide as the
    oscillation at ``t_max`` and the relative smoothness of J allow."""
    osc = 12.0 * np.pi / max(t_max, 1e-12)
    h0 = min(osc, 0.05 * sd.scale)
    if temperature > 0:
        h0 = min(h0, 0.5 * temperature)
    h0 /= refine
    edges = list(h0 * 2.0 ** -np.arange(12, 0, -1))
    e = h0
    while e < W:
        edges.append(e)
        e += min(osc, max(0.25 * sd.scale, 0.2 * e)) / refine
    edges.append(W)
    return np.concatenate([[0.0], edges])


def _grid_bath_integrals(times, sd, temperature, refine=1, order=24, n_blocks=8, chunk=2_000_000):
    """Return (theta, Phi) on every point of ``times`` using Gauss-Legendre panels.

    The time grid is split into blocks; each block gets panels narrow enough
    to resolve cos(w t) at its largest t.  The non-oscillatory part of the
    tail beyond the cutoff is integrated exactly with ``quad``; the
    oscillatory part uses the asymptotic series of ``_tail_oscillation``.
    """
    times = np.asarray(times, dtype=float)
    W = sd.cutoff(temperature)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        tail_g0w = _quad(lambda w: sd.over_omega2(w) * w, W, np.inf)[0]
        tail_g = _quad(lambda w: sd.over_omega2(w) * _coth_weight(w, temperature), W, np.inf)[0]

    th = np.zeros_like(times)
    ph = np.zeros_like(times)
    blocks = np.array_split(np.arange(times.size), min(n_blocks, times.size))
    for idx in blocks:
        tb = times[idx]
        nodes, weights = _gauss_panels(_panel_edges(sd, temperature, W, tb.max(), refine), order)
        g0 = sd.over_omega2(nodes) * weights
        g = g0 * _coth_weight(nodes, temperature)
        step = max(1, chunk // nodes.size)
        for lo in range(0, tb.size, step):
            sl = slice(lo, lo + step)
            x = np.outer(tb[sl], nodes)
            th[idx[sl]] = _x_minus_sin(x) @ g0
            ph[idx[sl]] = _one_minus_cos(x) @ g
    th += times * tail_g0w - _tail_oscillation(sd, W, times, "sin")
    ph += tail_g - _tail_oscillation(sd, W, times, "cos")
    ph[times == 0] = 0.0
    th[times == 0] = 0.0
    return 4.0 * th, 4.0 * ph


def bath_functions(times, sd: SpectralDensity, bath: BathConfig, rtol=1e-9, max_refine=8):
    """theta and Phi on a time grid, refining panels until two passes agree."""
    times = np.asarray(times, dtype=float)
    if times.size and times.min() < 0:
        raise ValueError("times must be >= 0")
    probe = np.unique(np.r_[np.arange(0, times.size, max(1, times.size // 32)), times.size - 1])
    refine = 1
    th, ph = _grid_bath_integrals(times, sd, bath.temperature, refine)
    while True:
        th2, ph2 = _grid_bath_integrals(times[probe], sd, bath.temperature, 2 * refine)
        scale = np.maximum(np.abs(np.r_[th2, ph2]), 1e-12)
        diff = np.abs(np.r_[th[probe] - th2, ph[probe] - ph2]) / scale
        if diff.max() <= rtol:
            return th, ph
        refine *= 2
        if refine > max_refine:
            raise QuadratureError("panel quadrature did not converge", max_rel_change=float(diff.max()))
        th, ph = _grid_bath_integrals(times, sd, bath.temperature, refine)


@dataclass(frozen=True)
class DephasingTrace:
    times: np.ndarray
    phi1: np.ndarray
    phi9: np.ndarray
    phi13: np.ndarray
    theta: np.ndarray = field(repr=False)
    Phi: np.ndarray = field(repr=False)

    @property
    def phi6(self) -> np.ndarray:
        return np.ones_like(self.times)


def dephasing_factors(times, sd: SpectralDensity, bath: BathConfig) -> DephasingTrace:
    """Dephasing factors of the qubit pair on a uniform grid starting at t = 0."""
    times = np.asarray(times, dtype=float)
    if times[0] != 0:
        raise ValueError("time grid must start at 0")
    if times.size > 2 and not np.allclose(np.diff(times), times[1] - times[0], rtol=1e-9, atol=0):
        raise ValueError("time grid must be uniform")
    th, ph = bath_functions(times, sd, bath)
    for a in (times, th, ph):
        a.setflags(write=False)
    return DephasingTrace(
        times=times,
        phi1=np.exp(1j * th - ph),
        phi9=np.exp(-4.0 * ph),
        phi13=np.exp(-1j * th - ph),
        theta=th,
        Phi=ph,
    )


# --- characteristic-function inversion ---------------------------------------


def _fit_atom(phi, times, axis_scale, tail_fraction=0.25, flat_tol=2e-2):
    """Detect a non-decaying tail c * exp(-i a x0 t) (a point mass at x0)."""
    n0 = int((1 - tail_fraction) * times.size)
    tail = phi[n0:]
    mag = np.abs(tail)
    if mag.min() <= 0 or np.ptp(mag) > flat_tol * mag.mean():
        return None
    phase = np.unwrap(np.angle(tail))
    # inverse powers absorb the algebraically decaying continuous part
    tt = times[n0:]
    basis = np.stack([tt, np.ones_like(tt), 1.0 / tt, 1.0 / tt**2], axis=1)
    slope = np.linalg.lstsq(basis, phase, rcond=None)[0][0]
    x0 = -slope / axis_scale
    # a point mass of a real density has a real weight; a residual phase is
    # the slowly decaying continuous part and stays in phi
    weight = np.mean(tail * np.exp(1j * axis_scale * x0 * times[n0:])).real
    return complex(weight), float(x0)


def _fourier_sum(phi, dt, axis_scale, x):
    """(a/2pi) * sum_k dt phi_k e^{i a x t_k} over the hermitian-extended grid.

    Returns the full complex result so that the imaginary residue can be
    inspected; negative times enter through phi(-t) = conj(phi(t)).
    """
    k = np.arange(phi.size)
    out = np.empty(x.size, dtype=complex)
    for lo in range(0, x.size, 128):
        xs = x[lo : lo + 128]
        E = np.exp(1j * axis_scale * dt * np.outer(xs, k))
        pos = E[:, 1:] @ phi[1:]
        neg = E[:, 1:].conj() @ phi[1:].conj()
        out[lo : lo + 128] = phi[0] + pos + neg
    return axis_scale * dt * out / (2.0 * np.pi)


def marginal_from_characteristic(
    phi, times, axis_scale: float, out_grid, axis_label: str = "x", allow_atom: bool = True
) -> Marginal:
    """Invert phi(t) = int p(x) exp(-i a x t) dx onto ``out_grid``.

    ``phi`` is sampled for t >= 0 on a uniform grid starting at 0.  The
    result is the trapezoidal sum of the hermitian extension evaluated
    directly at every output abscissa.  A non-decaying tail consistent with
    a point mass is split off and returned as a discrete delta in the output
    bin that contains it.
    """
    phi = np.asarray(phi, dtype=complex)
    times = np.asarray(times, dtype=float)
    out_grid = np.asarray(out_grid, dtype=float)
    if phi.shape != times.shape:
        raise ValueError("phi and times must have equal shapes")
    if times[0] != 0:
        raise ValueError("time grid must start at 0")
    if abs(phi[0] - 1) > IMAG_RESIDUE:
        raise InversionError(f"phi(0) = {phi[0]!r}; a normalised real density needs phi(0) = 1")
    dt = times[1] - times[0]

    atom = None
    if abs(phi[-1]) > DECAY_LIMIT:
        atom = _fit_atom(phi, times, axis_scale) if allow_atom else None
        if atom is None:
            raise AliasingError(
                f"|phi(t_max)| = {abs(phi[-1]):.3g} > {DECAY_LIMIT}; extend the time grid"
            )
        weight, x0 = atom
        phi = phi - weight * np.exp(-1j * axis_scale * x0 * times)
        if abs(phi[-1]) > DECAY_LIMIT:
            raise AliasingError(
                f"tail after removing a point mass at {x0:.4g} is {abs(phi[-1]):.3g} > {DECAY_LIMIT}"
            )
    elif abs(phi[-1]) > DECAY_TARGET:
        log.debug("phi(t_max) = %.3g has not reached %.0e", abs(phi[-1]), DECAY_TARGET)

    period = 2.0 * np.pi / (axis_scale * dt)
    if np.ptp(out_grid) > period:
        raise AliasingError(f"output window {np.ptp(out_grid):.3g} exceeds the Fourier period {period:.3g}")

    dens = _fourier_sum(phi, dt, axis_scale, out_grid)
    residue = np.max(np.abs(dens.imag))
    if residue > IMAG_RESIDUE:
        raise InversionError(f"imaginary residue {residue:.3g} exceeds {IMAG_RESIDUE}")
    values = dens.real
    if atom is not None:
        weight, x0 = atom
        if abs(weight.imag) > IMAG_RESIDUE * max(1.0, abs(weight)):
            raise InversionError("point-mass weight is not real")
        dx = out_grid[1] - out_grid[0]
        j = int(np.round((x0 - out_grid[0]) / dx))
        if 0 <= j < out_grid.size:
            values = values.copy()
            # trapezoid weights halve the end bins
            values[j] += weight.real / (dx if 0 < j < out_grid.size - 1 else 0.5 * dx)
    return Marginal(axis_label, out_grid, values)


# --- the three ground-truth marginals ---------------------------------------


@dataclass(frozen=True)
class CherGridConfig:
    """Output windows and time-grid policy for the FToG marginals."""

    window: tuple = (-16.0, 16.0)
    u_window: tuple | None = None
    n_points: int = MARGINAL_POINTS
    n_times: int = N_TIMES
    t_start: float = 5.0
    t_cap: float = 400.0

    def axis(self, oblique=False):
        lo, hi = (self.u_window or self.window) if oblique else self.window
        return uniform_axis(lo, hi, self.n_points)

    @classmethod
    def for_density(cls, sd: "SpectralDensity", **kw) -> "CherGridConfig":
        h = DEFAULT_HALF_WIDTH[sd.kind] * sd.scale
        return cls(window=(-h, h), **kw)


def choose_t_max(sd: SpectralDensity, bath: BathConfig, cfg: CherGridConfig, decay_rate: float = 1.0) -> float:
    """Smallest doubling of ``t_start`` at which exp(-rate * Phi) <= 1e-6, capped."""
    t = cfg.t_start
    target = -np.log(DECAY_TARGET)
    while t < cfg.t_cap and decay_rate * phi_decoherence(t, sd, bath) < target:
        t *= 2.0
    return min(t, cfg.t_cap)


def cher_marginal_triple(sd: SpectralDensity, bath: BathConfig, grids: CherGridConfig | None = None) -> MarginalTriple:
    """Ground-truth (x1, x13, u) marginals from the dephasing factors."""
    grids = grids or CherGridConfig.for_density(sd)
    t_axis = choose_t_max(sd, bath, grids, decay_rate=1.0)
    times = np.linspace(0.0, t_axis, grids.n_times)
    trace = dephasing_factors(times, sd, bath)
    x = grids.axis()
    u = grids.axis(oblique=True)
    m1 = marginal_from_characteristic(trace.phi1, times, 1.0, x, "x1")
    m13 = marginal_from_characteristic(trace.phi13, times, 1.0, x, "x13")
    # phi9 decays four times faster; a shorter grid avoids wasting resolution
    t_u = choose_t_max(sd, bath, grids, decay_rate=4.0)
    times_u = np.linspace(0.0, t_u, grids.n_times)
    trace_u = dephasing_factors(times_u, sd, bath) if t_u != t_axis else trace
    mu = marginal_from_characteristic(trace_u.phi9, times_u, SQRT2, u, "u")
    meta = {
        "source": "cher",
        "spectral_density": sd.to_dict(),
        "temperature": bath.temperature,
        "window": list(grids.window),
        "u_window": list(grids.u_window or grids.window),
        "n_times": grids.n_times,
        "t_max": t_axis,
        "t_max_u": t_u,
        "tail_abs_phi1": float(abs(trace.phi1[-1])),
    }
    return MarginalTriple(m1, m13, mu, meta=meta)
