"""Wigner functions of noisy coherent and cat states.

Conventions: hbar = 1, x = (a + a^dag)/sqrt(2), p = (a - a^dag)/(i sqrt(2)),
so the vacuum has variance 1/2 in each quadrature and W_vac(0, 0) = 1/pi.

The noise is a thermal attenuation channel with transmissivity mu^2 and
environment occupation nbar.  In the Fock basis it is applied as a pure-loss
channel followed by a quantum-limited amplifier (gain G = 1 + (1 - mu^2) nbar,
loss transmissivity mu^2 / G), which composes to exactly the same Gaussian
channel.  The Fock route is the reference; ``wigner_closed_form`` is a fast
sum of (complex-centred) Gaussians that must agree with it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .grids import JOINT_POINTS, MARGINAL_POINTS, SQRT2, JointGrid, Marginal, MarginalTriple, uniform_axis

TAIL_LIMIT = 1e-6
DEFAULT_NCUT = 60


class TruncationError(ValueError):
    """The Fock truncation is too small for the requested state."""


@dataclass(frozen=True)
class NoisyStateParams:
    kind: str
    alpha: complex
    theta_rel: float = 0.0
    mu: float = 1.0
    nbar: float = 0.0

    def __post_init__(self):
        if self.kind not in ("coherent", "cat"):
            raise ValueError(f"unknown state kind {self.kind!r}")
        if not 0.0 < self.mu <= 1.0:
            raise ValueError("mu must lie in (0, 1]")
        if self.nbar < 0:
            raise ValueError("nbar must be >= 0")
        object.__setattr__(self, "alpha", complex(self.alpha))

    @property
    def nu(self) -> float:
        return (1.0 - self.mu**2) * self.nbar

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "alpha_re": self.alpha.real,
            "alpha_im": self.alpha.imag,
            "theta_rel": self.theta_rel,
            "mu": self.mu,
            "nbar": self.nbar,
            "nu": self.nu,
        }


@dataclass(frozen=True)
class FockDensity:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("density matrix must be square")
        if not np.allclose(m, m.conj().T, rtol=0, atol=1e-10):
            raise ValueError("density matrix must be hermitian")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def purity(self) -> float:
        return float(np.real(np.trace(self.matrix @ self.matrix)))

    def mean_photon(self) -> float:
        return float(np.sum(np.arange(self.dim) * np.diag(self.matrix).real))

    def tail_mass(self) -> float:
        top = max(1, self.dim // 10)
        return float(np.sum(np.diag(self.matrix).real[-top:]))


@dataclass(frozen=True)
class WignerGridConfig:
    window: tuple = (-6.0, 6.0)
    n_joint: int = JOINT_POINTS
    n_marginal: int = MARGINAL_POINTS

    def joint_axis(self):
        return uniform_axis(*self.window, self.n_joint)

    def marginal_axis(self):
        return uniform_axis(*self.window, self.n_marginal)


def coherent_amplitudes(alpha: complex, dim: int) -> np.ndarray:
    n = np.arange(dim)
    if alpha == 0:
        out = np.zeros(dim, dtype=complex)
        out[0] = 1.0
        return out
    log_mag = -0.5 * abs(alpha) ** 2 + n * np.log(abs(alpha)) - 0.5 * gammaln(n + 1)
    return np.exp(log_mag) * np.exp(1j * n * np.angle(alpha))


def pure_state(params: NoisyStateParams, dim: int) -> np.ndarray:
    psi = coherent_amplitudes(params.alpha, dim)
    if params.kind == "cat":
        psi = psi + np.exp(1j * params.theta_rel) * coherent_amplitudes(-params.alpha, dim)
        norm = np.linalg.norm(psi)
        if norm < 1e-12:
            raise ValueError("cat state with alpha=0 and theta=pi has zero norm")
        psi = psi / norm
    return psi


def _loss_kraus(tau: float, dim: int):
    n = np.arange(dim)
    for k in range(dim):
        m = n[k:]
        logc = gammaln(m + 1) - gammaln(k + 1) - gammaln(m - k + 1)
        with np.errstate(divide="ignore"):
            amp = 0.5 * (logc + (m - k) * np.log(tau) + k * np.log1p(-tau)) if tau < 1 else None
        if amp is None:
            if k > 0:
                break
            yield np.eye(dim)
            break
        A = np.zeros((dim, dim))
        A[m - k, m] = np.exp(amp)
        yield A


def _amplifier_kraus(gain: float, dim: int):
    if gain == 1.0:
        yield np.eye(dim)
        return
    n = np.arange(dim)
    r = np.log((gain - 1.0) / gain)
    for k in range(dim):
        src = n[: dim - k]
        logc = gammaln(src + k + 1) - gammaln(k + 1) - gammaln(src + 1)
        B = np.zeros((dim, dim))
        B[src + k, src] = np.exp(0.5 * (logc - (src + 1) * np.log(gain) + k * r))
        yield B


def thermal_attenuation(rho: np.ndarray, mu: float, nbar: float) -> np.ndarray:
    """Apply the thermal attenuator (transmissivity mu^2, occupation nbar)."""
    dim = rho.shape[0]
    gain = 1.0 + (1.0 - mu**2) * nbar
    tau = mu**2 / gain
    out = np.zeros_like(rho)
    for A in _loss_kraus(tau, dim):
        out += A @ rho @ A.T
    rho, out = out, np.zeros_like(rho)
    for B in _amplifier_kraus(gain, dim):
        out += B @ rho @ B.T
    return out


def fock_density(params: NoisyStateParams, n_cut: int = DEFAULT_NCUT) -> FockDensity:
    """Density matrix of the noisy state in a truncated Fock basis."""
    need = 4 * (abs(params.alpha) ** 2 + params.nbar) + 20
    if n_cut < need - 1e-9:
        raise TruncationError(f"n_cut={n_cut} below the required {need:.0f}")
    psi = pure_state(params, n_cut)
    rho = np.outer(psi, psi.conj())
    if params.mu != 1.0 or params.nbar != 0.0:
        rho = thermal_attenuation(rho, params.mu, params.nbar)
    rho = 0.5 * (rho + rho.conj().T)
    out = FockDensity(rho)
    if out.tail_mass() > TAIL_LIMIT:
        raise TruncationError(f"population {out.tail_mass():.2e} in the top Fock levels; raise n_cut")
    return out


# --- Wigner function in the Fock basis -------------------------------------


def wigner_from_density(rho: FockDensity, grid: WignerGridConfig | None = None) -> JointGrid:
    """Laguerre expansion W(x, p) = sum_mn rho_mn W_|m><n|(x, p).

    For m = n + k the element is (-1)^n / pi * A^k e^{-|A|^2/2} l_n^k(|A|^2)
    with A = sqrt(2) (x - i p) and l_n^k the normalised Laguerre polynomial,
    generated by upward recurrence in n at fixed k.
    """
    grid = grid or WignerGridConfig()
    axis = grid.joint_axis()
    X, P = np.meshgrid(axis, axis, indexing="ij")
    A = SQRT2 * (X - 1j * P)
    y = (A * A.conj()).real
    mat = rho.matrix
    dim = rho.dim
    W = np.zeros_like(y)
    Pk = np.exp(-0.5 * y).astype(complex)
    for k in range(dim):
        if k > 0:
            Pk = Pk * A / np.sqrt(k)
        diag = np.diagonal(mat, offset=-k)  # rho[n + k, n]
        q_prev = np.zeros_like(Pk)
        q = Pk
        acc = diag[0] * q
        for n in range(1, dim - k):
            q_next = ((2 * n - 1 + k - y) * q / np.sqrt(n * (n + k))
                      - np.sqrt((n - 1) * (n - 1 + k) / (n * (n + k))) * q_prev)
            q_prev, q = q, q_next
            acc = acc + (-1) ** n * diag[n] * q
        W += acc.real if k == 0 else 2.0 * acc.real
    return JointGrid(axis, axis.copy(), W / np.pi)


def hermite_functions(x, dim):
    """Position-space Fock wavefunctions psi_n(x), n < dim (hbar = 1)."""
    x = np.asarray(x, dtype=float)
    out = np.empty((dim, x.size))
    out[0] = np.pi**-0.25 * np.exp(-0.5 * x * x)
    if dim > 1:
        out[1] = SQRT2 * x * out[0]
    for n in range(1, dim - 1):
        out[n + 1] = np.sqrt(2.0 / (n + 1)) * x * out[n] - np.sqrt(n / (n + 1)) * out[n - 1]
    return out


def rotate(rho: FockDensity, angle: float) -> FockDensity:
    """exp(-i angle n) rho exp(+i angle n)."""
    n = np.arange(rho.dim)
    phase = np.exp(-1j * angle * n)
    return FockDensity(phase[:, None] * rho.matrix * phase.conj()[None, :])


def _position_density(mat, x):
    psi = hermite_functions(x, mat.shape[0])
    return np.einsum("mx,mn,nx->x", psi, mat, psi).real


def wigner_marginals(rho: FockDensity, grid: WignerGridConfig | None = None) -> MarginalTriple:
    """W(x), W(p) and W(u), u = (x + p)/sqrt(2), from wavefunction overlaps."""
    grid = grid or WignerGridConfig()
    q = grid.marginal_axis()
    wx = _position_density(rho.matrix, q)
    # quadrature x cos(a) + p sin(a) is the position of the state rotated by exp(-i a n)
    wp = _position_density(rotate(rho, np.pi / 2).matrix, q)
    wu = _position_density(rotate(rho, np.pi / 4).matrix, q)
    for name, v in (("x", wx), ("p", wp), ("u", wu)):
        if v.min() < -1e-9:
            raise ArithmeticError(f"W({name}) dips to {v.min():.3g}; rotation sign or normalisation is wrong")
    return MarginalTriple(Marginal("x", q, wx), Marginal("p", q, wp), Marginal("u", q, wu))


# --- closed form ------------------------------------------------------------


def _gaussian_terms(params: NoisyStateParams):
    """(weight, centre_x, centre_p, variance) for every term of the output state.

    The Wigner function of |b><c| is <c|b>/pi exp(-(x-X)^2 - (p-P)^2) with
    complex X = (b + c*)/sqrt(2), P = (b - c*)/(i sqrt(2)); the channel scales
    the centre by mu and widens the variance from 1/2 to (1 + 2 nu)/2.
    """
    a = params.alpha
    var = 0.5 + params.nu
    if params.kind == "coherent":
        pairs = [(1.0, a, a)]
    else:
        e = np.exp(1j * params.theta_rel)
        overlap = np.exp(-2 * abs(a) ** 2)
        norm = 2.0 * (1.0 + np.cos(params.theta_rel) * overlap)
        pairs = [(1 / norm, a, a), (1 / norm, -a, -a), (e.conjugate() / norm, a, -a), (e / norm, -a, a)]
    terms = []
    for w, b, c in pairs:
        ov = np.exp(-0.5 * abs(b) ** 2 - 0.5 * abs(c) ** 2 + c.conjugate() * b)
        X = (b + c.conjugate()) / SQRT2
        P = (b - c.conjugate()) / (1j * SQRT2)
        terms.append((w * ov, params.mu * X, params.mu * P, var))
    return terms


def wigner_closed_form(params: NoisyStateParams, grid: WignerGridConfig | None = None) -> JointGrid:
    grid = grid or WignerGridConfig()
    axis = grid.joint_axis()
    X, P = np.meshgrid(axis, axis, indexing="ij")
    W = np.zeros(X.shape, dtype=complex)
    for w, cx, cp, var in _gaussian_terms(params):
        W += w * np.exp(-((X - cx) ** 2 + (P - cp) ** 2) / (2 * var)) / (2 * np.pi * var)
    return JointGrid(axis, axis.copy(), W.real)


def marginals_closed_form(params: NoisyStateParams, grid: WignerGridConfig | None = None) -> MarginalTriple:
    grid = grid or WignerGridConfig()
    q = grid.marginal_axis()
    out = {"x": np.zeros(q.size, complex), "p": np.zeros(q.size, complex), "u": np.zeros(q.size, complex)}
    for w, cx, cp, var in _gaussian_terms(params):
        norm = w / np.sqrt(2 * np.pi * var)
        out["x"] += norm * np.exp(-((q - cx) ** 2) / (2 * var))
        out["p"] += norm * np.exp(-((q - cp) ** 2) / (2 * var))
        out["u"] += norm * np.exp(-((q - (cx + cp) / SQRT2) ** 2) / (2 * var))
    return MarginalTriple(*(Marginal(k, q, v.real) for k, v in out.items()))
