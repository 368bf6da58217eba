"""Finite-time and limiting second-order operators, non-Markov probabilities, Rabi signals.

``L^omega(T) X`` is the order-g^2 operator

    int_{R^3} int_0^T e^{i omega s} ( e^{i s |k|} E_free(k, -s)^* [E(k), X]
                                     - e^{-i s |k|} [E(k)^*, X] E_free(k, -s) ) ds dk

with ``E_free(k, s) = e^{i s H} E(k) e^{-i s H}``.  In the energy basis every
matrix element carries a single phase ``exp(i s (|k| - R))``; the time
integral is done in closed form and its large-T limit is the Plemelj split
``pi delta + i PV``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import EqualLevels, ShapeMismatch, ValidationError
from .generator import BlockOperator, bethe_matrix, coupling_density, gamma_matrix
from .matter_model import MatterModel, form_factor_matrices
from .quadrature import (
    RADIUS_FLOOR,
    QuadConfig,
    composite_integral,
    finite_time_oscillatory,
    oscillatory_limit,
    radial_rule_for,
)

_ROUND = 12  # decimals used to group equal resonance radii


def _dense(model: MatterModel, x) -> np.ndarray:
    if isinstance(x, BlockOperator):
        if x.dims != model.level_dims:
            raise ShapeMismatch(f"operator shape {x.dims} does not match model {model.level_dims}")
        return x.to_dense()
    x = np.asarray(x, dtype=complex)
    if x.shape != (model.dim, model.dim):
        raise ShapeMismatch(f"expected a {model.dim}x{model.dim} matrix, got {x.shape}")
    return x


def _integrands(density, x: np.ndarray):
    """Radial integrands of the two L-terms, indexed ``[n, a, b, d]``.

    Term 1 pairs with the phase of ``rho - (e_a - e_b - omega)``, term 2 with
    the conjugate phase of ``rho - (omega + e_d - e_b)``.
    """

    def f1(rho):
        w = density(rho)  # [n, p, q, r, s]
        return np.einsum("nabbx,xd->nabd", w, x) - np.einsum("bx,nabxd->nabd", x, w)

    def f2(rho):
        w = density(rho)
        return np.einsum("naxbd,xb->nbad", w, x) - np.einsum("ax,nxbbd->nbad", x, w)

    return f1, f2


def _l_operator(model, omega, x, config, integrate, table=None):
    config = config or QuadConfig()
    density = coupling_density(model, config, table)
    rule = radial_rule_for(model.cutoff, config)
    x = _dense(model, x)
    e = model.energies
    n = model.dim
    f1, f2 = _integrands(density, x)
    # resonance radii per (a, b) for term 1 and per (b, d) for term 2
    r1 = np.round(e[:, None] - e[None, :] - omega, _ROUND)
    r2 = np.round(omega + e[None, :] - e[:, None], _ROUND)  # indexed [b, d]
    out = np.zeros((n, n), dtype=complex)
    for radius in np.unique(r1):
        mask = (r1 == radius).astype(float)
        g = lambda rho, mask=mask: np.einsum("nabd,ab->nad", f1(rho), mask)
        out += integrate(g, radius, rule, False)
    for radius in np.unique(r2):
        mask = (r2 == radius).astype(float)
        g = lambda rho, mask=mask: np.einsum("nbad,bd->nad", f2(rho), mask)
        out -= integrate(g, radius, rule, True)
    return out


def l_omega_finite_t(model: MatterModel, omega: float, x, T: float, config: QuadConfig | None = None, table=None):
    """``L^omega(T) X`` as a dense matter-space matrix."""
    if not T > 0:
        raise ValidationError("T must be positive")
    config = config or QuadConfig()

    def integrate(f, radius, rule, conj):
        return finite_time_oscillatory(f, -radius, T, rule, tol=config.tol, conjugate=conj)

    return _l_operator(model, omega, x, config, integrate, table)


def l_infinity(model: MatterModel, omega: float, x, config: QuadConfig | None = None, table=None):
    """Large-time limit of :func:`l_omega_finite_t`, in closed form.

    Each resonance radius ``R > 0`` contributes ``pi f(R)`` from the sphere
    ``|k| = R``; every radius contributes ``i PV int f(r) / (r - R) dr``.
    """
    config = config or QuadConfig()

    def integrate(f, radius, rule, conj):
        return oscillatory_limit(f, -radius, rule, config.pv_window_frac, config.tol, conjugate=conj)

    return _l_operator(model, omega, x, config, integrate, table)


@dataclass(frozen=True, eq=False)
class OmegaGenerator:
    """Matrix of ``X -> L_inf^omega X`` on column-major vectorized matter operators."""

    omega: float
    matrix: np.ndarray
    dim: int

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=complex)
        return (self.matrix @ x.ravel(order="F")).reshape((self.dim, self.dim), order="F")


def omega_generator(model: MatterModel, omega: float, config: QuadConfig | None = None) -> OmegaGenerator:
    n = model.dim
    mat = np.empty((n * n, n * n), dtype=complex)
    e = np.zeros((n, n), dtype=complex)
    for k in range(n * n):
        e[k % n, k // n] = 1.0
        mat[:, k] = l_infinity(model, omega, e, config).ravel(order="F")
        e[k % n, k // n] = 0.0
    return OmegaGenerator(float(omega), mat, n)


def t_operator(model: MatterModel, lam: int, config: QuadConfig | None = None) -> np.ndarray:
    """Resonance operator ``T_lam = gamma / 2 + i bethe`` on level ``lam``."""
    config = config or QuadConfig()
    density = coupling_density(model, config)
    g = gamma_matrix(model, lam, config, density)
    b = bethe_matrix(model, lam, config, density)
    return 0.5 * g + 1j * b


# --------------------------------------------------------------------------
# non-Markov transition probability


def _level_of(model: MatterModel, index: int) -> int:
    if not 0 <= index < model.dim:
        raise ShapeMismatch(f"basis index {index} outside [0, {model.dim})")
    return int(model.level_index[index])


def _fejer(x, t):
    """``(1 - cos(t x)) / x**2``, stable at ``x = 0``."""
    return 0.5 * t * t * np.sinc(t * x / (2 * np.pi)) ** 2


def non_markov_probability(
    model: MatterModel, j: int, m: int, t: float, g: float, config: QuadConfig | None = None, modes=None
) -> float:
    """Second-order transition probability from ``u_j`` to ``u_m`` at time ``t``.

    ``P = 2 g^2 int (1 - cos(t (|k| - Delta))) / (|k| - Delta)^2 |<E(k) u_j, u_m>|^2 dk``
    with ``Delta = lambda_j - lambda_m``: resonant (and linearly growing in
    ``t``) for downward transitions, bounded for upward ones.

    ``modes`` may be a pair ``(k, weights)`` of momentum nodes with
    quadrature weights for ``dk``; the integral is then the corresponding
    finite sum (used to compare against a discretized field).
    """
    config = config or QuadConfig()
    lj, lm = _level_of(model, j), _level_of(model, m)
    if lj == lm:
        raise EqualLevels("non-Markov probability needs distinct levels")
    if t < 0 or g < 0:
        raise ValidationError("t and g must be nonnegative")
    if t == 0 or g == 0:
        return 0.0
    delta = model.level_energies[lj] - model.level_energies[lm]
    if modes is not None:
        ks, w = modes
        ks = np.asarray(ks, dtype=float)
        mats = form_factor_matrices(model, ks)[:, :, m, j]
        amp = np.sum(np.abs(mats) ** 2, axis=1)
        rho = np.linalg.norm(ks, axis=1)
        return float(2 * g * g * np.sum(np.asarray(w) * amp * _fejer(rho - delta, t)))
    density = coupling_density(model, config)
    rule = radial_rule_for(model.cutoff, config)
    r_max = rule.r_max
    panels = int(max(np.ceil(r_max * t / np.pi), np.ceil(8 * r_max / model.cutoff.scale), 8))

    def f(rho):
        w = density(rho)[:, j, m, m, j].real
        return w * _fejer(rho - delta, t)

    return float(2 * g * g * composite_integral(f, 0.0, r_max, panels, tol=config.tol))


def fgr_rate(model: MatterModel, j: int, m: int, config: QuadConfig | None = None) -> float:
    """``2 pi int_{|k| = lambda_j - lambda_m} |<E(k) u_j, u_m>|^2 dsigma`` (zero if upward)."""
    config = config or QuadConfig()
    lj, lm = _level_of(model, j), _level_of(model, m)
    radius = model.level_energies[lj] - model.level_energies[lm]
    if radius <= RADIUS_FLOOR:
        return 0.0
    return float(2 * np.pi * coupling_density(model, config)(radius)[0, j, m, m, j].real)


# --------------------------------------------------------------------------
# Rabi cycles


@dataclass(frozen=True)
class RabiSignal:
    omega: float
    periodic: complex  # coefficient of exp(i omega t)
    offset: complex

    @property
    def period(self) -> float:
        return 2 * np.pi / abs(self.omega)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return self.periodic * np.exp(1j * self.omega * t) + self.offset


def rabi_signal(model: MatterModel, x, lam: int, mu: int, g: float, u=None, v=None, config=None) -> RabiSignal:
    """Leading-order coherence ``<S(t, g) X u, v>`` between levels ``lam`` and ``mu``.

    ``u`` and ``v`` are unit vectors in the two level subspaces, given as
    coefficient vectors inside the level blocks (default: first basis vector).
    """
    if lam == mu:
        raise EqualLevels("Rabi amplitude needs two distinct levels; use the semigroup for lam == mu")
    n = model.dim
    omega = float(model.level_energies[mu] - model.level_energies[lam])
    uu = _embed(model, lam, u)
    vv = _embed(model, mu, v)
    x = _dense(model, x)
    a0 = np.vdot(vv, l_infinity(model, 0.0, x, config) @ uu)
    aw = np.vdot(vv, l_infinity(model, omega, x, config) @ uu)
    pref = (1j * g) ** 2 / (1j * omega)
    assert uu.shape == (n,)
    return RabiSignal(omega, complex(pref * a0), complex(-pref * aw))


def _embed(model, level, coeffs):
    d = model.levels[level].dim
    c = np.zeros(d, dtype=complex)
    if coeffs is None:
        c[0] = 1.0
    else:
        c[:] = np.asarray(coeffs, dtype=complex)
        nrm = np.linalg.norm(c)
        if not abs(nrm - 1.0) < 1e-12:
            raise ValidationError("level vectors must have unit norm")
    out = np.zeros(model.dim, dtype=complex)
    out[model.block(level)] = c
    return out


def rabi_amplitude(model: MatterModel, x, lam: int, mu: int, t, g: float, u=None, v=None, config=None):
    """``(ig)^2 / (i omega) (e^{i omega t} <L_inf^0 X u, v> - <L_inf^omega X u, v>)``."""
    return rabi_signal(model, x, lam, mu, g, u, v, config)(t)


def rabi_bound_components(g: float, t) -> tuple[np.ndarray, np.ndarray]:
    """The two pieces of the remainder estimate: ``g^3 (t + t^3)`` and ``g^2 / (1 + t)``."""
    t = np.asarray(t, dtype=float)
    return g**3 * (t + t**3), g**2 / (1 + t)


def write_rabi_csv(stream, t, signal) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["t", "re", "im"])
    for ti, si in zip(np.asarray(t), np.asarray(signal)):
        w.writerow([f"{ti:.17g}", f"{si.real:.17g}", f"{si.imag:.17g}"])
