"""Integration primitives: sphere surfaces, radial lines, principal values.

All integrands are vectorized: they receive an array of nodes and return an
array whose first axis runs over the nodes (trailing axes may hold matrices).
Sums are taken in a fixed node order so results are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from functools import lru_cache

import numpy as np

from .errors import ConvergenceFailure, NonPositiveRadius, PoleTooCloseToOrigin, ValidationError

#: Resonance radii at or below this value are treated as "no sphere".
RADIUS_FLOOR = 1e-12


@dataclass(frozen=True)
class QuadConfig:
    """Tunable quadrature parameters (``quad.<name>`` configuration keys)."""

    sphere_degree: int = 20
    radial_nodes: int = 96
    pv_window_frac: float = 0.25
    tol: float = 1e-10

    def with_overrides(self, overrides: dict) -> "QuadConfig":
        known = {f.name: f.type for f in fields(self)}
        kw = {}
        for key, val in overrides.items():
            name = key.removeprefix("quad.")
            if name not in known:
                raise ValidationError(f"unknown quadrature key {key!r}")
            kw[name] = int(val) if name in ("sphere_degree", "radial_nodes") else float(val)
        return replace(self, **kw)


@lru_cache(maxsize=64)
def _gauss_legendre(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    x.flags.writeable = False
    w.flags.writeable = False
    return x, w


def gauss_legendre(a: float, b: float, n: int):
    """Gauss-Legendre nodes and weights on ``[a, b]``."""
    x, w = _gauss_legendre(n)
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


def composite_gauss_legendre(a: float, b: float, panels: int, n: int = 16):
    x, w = _gauss_legendre(n)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    nodes = (edges[:-1, None] + half[:, None] * (x[None] + 1.0)).ravel()
    weights = (half[:, None] * w[None]).ravel()
    return nodes, weights


# --------------------------------------------------------------------------
# sphere


@dataclass(frozen=True, eq=False)
class SphereRule:
    """Product rule: Gauss-Legendre in cos(theta) times uniform azimuth."""

    nodes: np.ndarray
    weights: np.ndarray
    degree: int

    def __len__(self):
        return len(self.weights)


@lru_cache(maxsize=16)
def sphere_rule(degree: int = 20) -> SphereRule:
    """Rule exact for spherical harmonics up to ``degree``."""
    if degree < 0:
        raise ValidationError("sphere degree must be nonnegative")
    n_theta = degree // 2 + 1
    n_phi = degree + 1
    mu, wmu = _gauss_legendre(n_theta)
    phi = 2 * np.pi * (np.arange(n_phi) + 0.5) / n_phi
    s = np.sqrt(1.0 - mu**2)
    nodes = np.stack(
        [
            np.outer(s, np.cos(phi)).ravel(),
            np.outer(s, np.sin(phi)).ravel(),
            np.repeat(mu, n_phi),
        ],
        axis=1,
    )
    weights = np.repeat(wmu, n_phi) * (2 * np.pi / n_phi)
    nodes.flags.writeable = False
    weights.flags.writeable = False
    return SphereRule(nodes, weights, degree)


def sphere_integral(f, radius: float, rule: SphereRule | None = None):
    """``int_{|k| = radius} f(k/|k|) dsigma(k)``."""
    if not radius > 0:
        raise NonPositiveRadius(f"sphere radius must be positive, got {radius}")
    rule = rule or sphere_rule()
    vals = np.asarray(f(rule.nodes))
    return radius**2 * np.tensordot(rule.weights, vals, axes=(0, 0))


# --------------------------------------------------------------------------
# radial


@dataclass(frozen=True, eq=False)
class RadialRule:
    """Gauss-Legendre on ``(0, r_max)`` after ``r = scale * u / (1 - u)``."""

    nodes: np.ndarray
    weights: np.ndarray
    r_max: float
    scale: float
    n: int
    tol: float = 1e-10

    def refined(self) -> "RadialRule":
        return radial_rule(2 * self.n, self.scale, self.r_max, self.tol)


def _mapped_nodes(a: float, b: float, n: int, scale: float):
    """Nodes on ``[a, b]`` through ``r = a + scale * u / (1 - u)``."""
    u_max = (b - a) / (scale + (b - a))
    u, wu = gauss_legendre(0.0, u_max, n)
    r = a + scale * u / (1.0 - u)
    return r, wu * scale / (1.0 - u) ** 2


def radial_rule(n: int = 96, scale: float = 2.0, r_max: float = 10.0, tol: float = 1e-10) -> RadialRule:
    if not r_max > 0 or not scale > 0:
        raise ValidationError("radial rule needs positive scale and r_max")
    r, w = _mapped_nodes(0.0, r_max, n, scale)
    return RadialRule(r, w, float(r_max), float(scale), int(n), float(tol))


def radial_rule_for(cutoff, config: QuadConfig | None = None, floor: float = 1e-16) -> RadialRule:
    """Rule matched to a cutoff profile: ``r_max`` where ``phi**2 < floor``."""
    config = config or QuadConfig()
    return radial_rule(config.radial_nodes, cutoff.scale, cutoff.support_radius(floor), config.tol)


def _check(v_coarse, v_fine, tol: float, what: str):
    cert = float(np.max(np.abs(np.asarray(v_fine) - np.asarray(v_coarse)), initial=0.0))
    scale = max(1.0, float(np.max(np.abs(v_fine), initial=0.0)))
    if not np.isfinite(cert) or cert > tol * scale:
        raise ConvergenceFailure(
            f"{what}: n/2n certificate {cert:.3e} exceeds tolerance {tol:.1e}",
            estimate=v_fine,
            certificate=cert,
        )
    return cert


def radial_integral(f, rule: RadialRule, tol: float | None = None, full_output: bool = False):
    """``int_0^{r_max} f(r) dr`` with an n versus 2n convergence certificate."""
    tol = rule.tol if tol is None else tol
    fine = rule.refined()
    with np.errstate(all="ignore"):
        coarse_v = np.tensordot(rule.weights, np.asarray(f(rule.nodes)), axes=(0, 0))
        fine_v = np.tensordot(fine.weights, np.asarray(f(fine.nodes)), axes=(0, 0))
    cert = _check(coarse_v, fine_v, tol, "radial integral")
    return (fine_v, cert) if full_output else fine_v


def _pv_pieces(pole: float, r_max: float, scale: float, n: int, h: float):
    """Nodes/weights for the outer pieces and the symmetric window."""
    left_r, left_w = gauss_legendre(0.0, pole - h, n)
    win_r, win_w = gauss_legendre(pole - h, pole + h, n)
    if pole + h < r_max:
        right_r, right_w = _mapped_nodes(pole + h, r_max, n, scale)
    else:
        right_r, right_w = np.empty(0), np.empty(0)
    return (np.concatenate([left_r, right_r]), np.concatenate([left_w, right_w])), (win_r, win_w)


def _pv_sum(f, pole, r_max, scale, n, h):
    (out_r, out_w), (win_r, win_w) = _pv_pieces(pole, r_max, scale, n, h)
    f_pole = np.asarray(f(np.array([pole])))[0]
    f_out = np.asarray(f(out_r))
    f_win = np.asarray(f(win_r))
    shape = (-1,) + (1,) * (f_out.ndim - 1)
    outer = np.tensordot(out_w, f_out / (out_r - pole).reshape(shape), axes=(0, 0))
    inner = np.tensordot(win_w, (f_win - f_pole) / (win_r - pole).reshape(shape), axes=(0, 0))
    return outer + inner


def principal_value_radial(
    f,
    pole: float,
    rule: RadialRule,
    window_frac: float = 0.25,
    h: float | None = None,
    tol: float | None = None,
    full_output: bool = False,
):
    """``PV int_0^{r_max} f(r) / (r - pole) dr`` by symmetric-window subtraction.

    Inside ``[pole - h, pole + h]`` the regular quotient
    ``(f(r) - f(pole)) / (r - pole)`` is integrated (the subtracted constant
    integrates to zero over the symmetric window); outside, ordinary
    quadrature.  Poles at or below zero, or beyond ``r_max``, leave a regular
    integrand and are integrated directly.
    """
    tol = rule.tol if tol is None else tol
    r_max = rule.r_max
    if pole <= RADIUS_FLOOR or pole >= r_max:

        def g(r):
            vals = np.asarray(f(r))
            return vals / (r - pole).reshape((-1,) + (1,) * (vals.ndim - 1))

        return radial_integral(g, rule, tol, full_output)
    if h is None:
        h = min(window_frac * pole, pole, r_max - pole)
    elif h > pole:
        raise PoleTooCloseToOrigin(f"pole {pole} is closer to 0 than the window half-width {h}")
    h = min(h, r_max - pole)
    with np.errstate(all="ignore"):
        coarse = _pv_sum(f, pole, r_max, rule.scale, rule.n, h)
        fine = _pv_sum(f, pole, r_max, rule.scale, 2 * rule.n, h)
    cert = _check(coarse, fine, tol, "principal value")
    return (fine, cert) if full_output else fine


def oscillatory_kernel(x: np.ndarray, T: float) -> np.ndarray:
    """``int_0^T exp(i s x) ds = (exp(i T x) - 1) / (i x)``, stable at ``x = 0``."""
    half = 0.5 * T * x
    return T * np.exp(1j * half) * np.sinc(half / np.pi)


def _oscillatory_sum(f, shift, T, r_max, panels, conjugate=False):
    r, w = composite_gauss_legendre(0.0, r_max, panels)
    vals = np.asarray(f(r))
    kern = oscillatory_kernel(r + shift, T)
    if conjugate:
        kern = kern.conj()
    kern = kern.reshape((-1,) + (1,) * (vals.ndim - 1))
    return np.tensordot(w, vals * kern, axes=(0, 0))


def oscillation_panels(T: float, r_max: float, scale: float) -> int:
    """Panel count resolving both ``exp(i T r)`` and the cutoff scale."""
    return int(max(np.ceil(r_max * T / (2 * np.pi)), np.ceil(8 * r_max / scale), 8))


def finite_time_oscillatory(
    f,
    frequency_shift: float,
    T: float,
    rule: RadialRule,
    tol: float | None = None,
    full_output=False,
    conjugate: bool = False,
):
    """``int_0^{r_max} f(r) int_0^T exp(i s (r + shift)) ds dr``.

    The time integral is done in closed form; the radial one by composite
    Gauss-Legendre with panels shorter than one oscillation period.  With
    ``conjugate`` the time kernel is ``exp(-i s (r + shift))`` instead.
    """
    if not T > 0:
        raise ValidationError("T must be positive")
    tol = rule.tol if tol is None else tol
    panels = oscillation_panels(T, rule.r_max, rule.scale)
    with np.errstate(all="ignore"):
        coarse = _oscillatory_sum(f, frequency_shift, T, rule.r_max, panels, conjugate)
        fine = _oscillatory_sum(f, frequency_shift, T, rule.r_max, 2 * panels, conjugate)
    cert = _check(coarse, fine, tol, "finite-time oscillatory integral")
    return (fine, cert) if full_output else fine


def oscillatory_limit(
    f, frequency_shift: float, rule: RadialRule, window_frac: float = 0.25, tol=None, conjugate: bool = False
):
    """Large-T limit of :func:`finite_time_oscillatory` (Sokhotski-Plemelj).

    ``pi f(R) [R > 0] + i PV int f(r) / (r - R) dr`` with ``R = -shift``; the
    sign of the principal-value part flips with ``conjugate``.
    """
    pole = -frequency_shift
    sign = -1.0 if conjugate else 1.0
    pv = principal_value_radial(f, pole, rule, window_frac=window_frac, tol=tol)
    if RADIUS_FLOOR < pole < rule.r_max:
        return np.pi * np.asarray(f(np.array([pole])))[0] + sign * 1j * pv
    return sign * 1j * pv


def composite_integral(f, a: float, b: float, panels: int, tol: float = 1e-10, n: int = 16, full_output=False):
    """``int_a^b f`` by composite Gauss-Legendre, certified against doubled panels."""
    with np.errstate(all="ignore"):
        r, w = composite_gauss_legendre(a, b, panels, n)
        coarse = np.tensordot(w, np.asarray(f(r)), axes=(0, 0))
        r, w = composite_gauss_legendre(a, b, 2 * panels, n)
        fine = np.tensordot(w, np.asarray(f(r)), axes=(0, 0))
    cert = _check(coarse, fine, tol, "composite integral")
    return (fine, cert) if full_output else fine
