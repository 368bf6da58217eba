"""Brute-force reference: the emitter coupled to a finite set of photon modes.

The field is discretized into modes ``k_i`` with quadrature weights ``w_i``
and two transverse polarizations.  The Fock space is truncated at ``n_max``
photons and the Hamiltonian

    H(g) = sum_i |k_i| b_i^* b_i + H_mat + g sum_i (b_i (x) c_i^* + b_i^* (x) c_i)

with ``c_{i,sigma} = sqrt(w_i) eps_sigma(k_i) . E(k_i)`` is propagated by a
Lanczos approximation of ``exp(-i t H)``.

Modes sharing one frequency can be recombined unitarily without changing the
free Hamiltonian.  With ``compress=True`` each frequency shell is reduced to
the span of its couplings (an SVD of the stacked coupling matrices); the
remaining modes never leave the vacuum, so matter observables are unchanged.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import DimensionCap, InvalidGrid, PropagationToleranceExceeded, ShapeMismatch, ValidationError
from .matter_model import MatterModel, form_factor_matrices
from .quadrature import gauss_legendre, sphere_rule

DEFAULT_DIMENSION_CAP = 200_000


# --------------------------------------------------------------------------
# mode grids


@dataclass(frozen=True)
class GridConfig:
    radial_nodes: int = 64
    sphere_degree: int = 4
    cluster_width: float = 0.5
    cluster_share: float = 0.5
    support_floor: float = 1e-14


@dataclass(frozen=True, eq=False)
class ModeGrid:
    k: np.ndarray  # (M, 3)
    weights: np.ndarray  # (M,)
    polarizations: np.ndarray  # (M, 2, 3)
    radii: np.ndarray  # (n_shells,) distinct |k| values
    shell: np.ndarray  # (M,) shell index of every mode
    config: GridConfig = field(default_factory=GridConfig)

    def __len__(self):
        return len(self.weights)

    @property
    def n_modes(self) -> int:
        """Field modes counting both polarizations."""
        return 2 * len(self.weights)

    def validate(self, atol: float = 1e-14) -> None:
        if not (np.all(np.isfinite(self.k)) and np.all(np.isfinite(self.weights))):
            raise InvalidGrid("mode grid contains non-finite entries")
        if np.any(self.weights <= 0):
            raise InvalidGrid("mode weights must be positive")
        r = np.linalg.norm(self.k, axis=1)
        if np.any(r <= 0):
            raise InvalidGrid("modes must have nonzero momentum")
        omega = self.k / r[:, None]
        gram = np.einsum("mai,mbi->mab", self.polarizations, self.polarizations)
        if np.max(np.abs(gram - np.eye(2))) > atol:
            raise InvalidGrid("polarization pairs are not orthonormal")
        if np.max(np.abs(np.einsum("mai,mi->ma", self.polarizations, omega))) > atol:
            raise InvalidGrid("polarizations are not transverse")

    def spec(self) -> dict:
        return {**asdict(self.config), "n_shells": int(len(self.radii)), "n_directions": int(len(self) // len(self.radii))}


def polarization_pair(omega: np.ndarray) -> np.ndarray:
    """``(theta_hat, phi_hat)`` for unit vectors; azimuth 0 at the poles."""
    omega = np.atleast_2d(omega)
    omega = omega / np.linalg.norm(omega, axis=1, keepdims=True)
    x, y, ct = omega.T
    st = np.hypot(x, y)
    pole = st == 0
    safe = np.where(pole, 1.0, st)
    cp = np.where(pole, 1.0, x / safe)
    spp = np.where(pole, 0.0, y / safe)
    e1 = np.stack([ct * cp, ct * spp, -st], axis=1)
    e2 = np.stack([-spp, cp, np.zeros_like(cp)], axis=1)
    return np.stack([e1, e2], axis=1)


def resonant_radii(model: MatterModel) -> np.ndarray:
    e = model.level_energies
    return np.unique(np.concatenate([e[l] - e[:l] for l in range(1, len(e))] or [np.empty(0)]))


def _radial_nodes(model: MatterModel, cfg: GridConfig):
    """Gauss-Legendre nodes on panels, denser around each resonant shell."""
    r_max = model.cutoff.support_radius(cfg.support_floor)
    res = resonant_radii(model)
    res = res[res < r_max]
    w = cfg.cluster_width
    dense = []
    for r in res:
        lo, hi = max(0.0, r - w), min(r_max, r + w)
        if dense and lo <= dense[-1][1]:
            dense[-1] = (dense[-1][0], max(dense[-1][1], hi))
        else:
            dense.append((lo, hi))
    edges = sorted({0.0, r_max, *[a for a, _ in dense], *[b for _, b in dense]})
    panels = [(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]
    is_dense = [any(lo <= a and b <= hi for lo, hi in dense) for a, b in panels]
    dense_len = sum(b - a for (a, b), d in zip(panels, is_dense) if d)
    sparse_len = sum(b - a for (a, b), d in zip(panels, is_dense) if not d)
    n_dense = int(round(cfg.radial_nodes * cfg.cluster_share)) if dense_len > 0 else 0
    n_sparse = cfg.radial_nodes - n_dense
    nodes, weights = [], []
    for (a, b), d in zip(panels, is_dense):
        share = (b - a) / (dense_len if d else sparse_len)
        n = max(2, int(round(share * (n_dense if d else n_sparse))))
        x, wx = gauss_legendre(a, b, n)
        nodes.append(x)
        weights.append(wx)
    return np.concatenate(nodes), np.concatenate(weights)


def mode_grid(model: MatterModel, config: GridConfig | None = None) -> ModeGrid:
    """Radial Gauss-Legendre shells (clustered at resonances) times a sphere rule."""
    cfg = config or GridConfig()
    if cfg.radial_nodes < 2 or cfg.sphere_degree < 2:
        raise InvalidGrid("grid needs at least two radial nodes and sphere degree 2")
    r, wr = _radial_nodes(model, cfg)
    sph = sphere_rule(cfg.sphere_degree)
    ns = len(sph)
    k = (r[:, None, None] * sph.nodes[None]).reshape(-1, 3)
    w = (wr[:, None] * r[:, None] ** 2 * sph.weights[None]).ravel()
    pol = np.tile(polarization_pair(sph.nodes), (len(r), 1, 1))
    shell = np.repeat(np.arange(len(r)), ns)
    grid = ModeGrid(k, w, pol, r, shell, cfg)
    grid.validate()
    return grid


def mode_couplings(model: MatterModel, grid: ModeGrid) -> np.ndarray:
    """``c[i, sigma] = sqrt(w_i) eps_sigma(k_i) . E(k_i)``, shape ``(M, 2, N, N)``."""
    e = form_factor_matrices(model, grid.k)  # (M, 3, N, N)
    return np.sqrt(grid.weights)[:, None, None, None] * np.einsum("msc,mcab->msab", grid.polarizations, e)


def compress_shells(grid: ModeGrid, couplings: np.ndarray, rtol: float = 1e-13):
    """Effective modes per shell: returns (frequencies, couplings (M_eff, N, N))."""
    n = couplings.shape[-1]
    freqs, effective = [], []
    scale = float(np.max(np.abs(couplings), initial=0.0))
    for s, radius in enumerate(grid.radii):
        stack = couplings[grid.shell == s].reshape(-1, n * n)
        if not stack.size:
            continue
        _, sv, vh = np.linalg.svd(stack, full_matrices=False)
        keep = sv > rtol * max(scale, 1e-300)
        for val, row in zip(sv[keep], vh[keep]):
            freqs.append(radius)
            effective.append(val * row.reshape(n, n))
    if not effective:
        return np.empty(0), np.empty((0, n, n), dtype=complex)
    return np.array(freqs), np.array(effective)


# --------------------------------------------------------------------------
# truncated Fock space


def photon_basis(n_modes: int, n_max: int):
    """Occupation states with at most ``n_max`` photons, as sorted mode tuples."""
    states = [()]
    if n_max >= 1:
        states += [(i,) for i in range(n_modes)]
    if n_max >= 2:
        states += [(i, j) for i in range(n_modes) for j in range(i, n_modes)]
    return states


def photon_dimension(n_modes: int, n_max: int) -> int:
    return 1 + (n_modes if n_max >= 1 else 0) + (n_modes * (n_modes + 1) // 2 if n_max >= 2 else 0)


def _creation_table(n_modes: int, n_max: int):
    """Arrays (to, from, mode, amplitude) of all nonzero ``b_mode^*`` matrix elements."""
    to, frm, mode, amp = [], [], [], []
    if n_max >= 1:
        idx = np.arange(n_modes)
        to.append(1 + idx)
        frm.append(np.zeros(n_modes, dtype=int))
        mode.append(idx)
        amp.append(np.ones(n_modes))
    if n_max >= 2:
        # pair (i, j), i <= j, sits at 1 + M + offset(i) + (j - i)
        i, j = np.triu_indices(n_modes)
        pair = 1 + n_modes + i * n_modes - i * (i - 1) // 2 + (j - i)
        diag = i == j
        # b_i^* |j> and, for i != j, b_j^* |i>
        to += [pair, pair[~diag]]
        frm += [1 + j, 1 + i[~diag]]
        mode += [i, j[~diag]]
        amp += [np.where(diag, np.sqrt(2.0), 1.0), np.ones(int((~diag).sum()))]
    if not to:
        return (np.empty(0, dtype=int),) * 3 + (np.empty(0),)
    return np.concatenate(to), np.concatenate(frm), np.concatenate(mode), np.concatenate(amp)


@dataclass(frozen=True, eq=False)
class TruncatedFockSystem:
    model: MatterModel
    grid: ModeGrid
    n_max: int
    g: float
    frequencies: np.ndarray  # (M_eff,)
    couplings: np.ndarray  # (M_eff, N, N)
    hamiltonian: sp.csr_matrix
    photon_energies: np.ndarray  # (dim_ph,)
    compressed: bool
    cap: int

    @property
    def matter_dim(self) -> int:
        return self.model.dim

    @property
    def photon_dim(self) -> int:
        return len(self.photon_energies)

    @property
    def dim(self) -> int:
        return self.hamiltonian.shape[0]

    @property
    def n_modes(self) -> int:
        return len(self.frequencies)

    def free_energies(self) -> np.ndarray:
        """Diagonal of ``H(0)``: photon energy plus matter energy, photon-major."""
        return (self.photon_energies[:, None] + self.model.energies[None, :]).ravel()

    def hermiticity_defect(self) -> float:
        h = self.hamiltonian
        d = abs(h - h.conj().T).max() if h.nnz else 0.0
        return float(d) / max(1.0, float(abs(h).max()))

    def vacuum_state(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=complex)
        if u.shape != (self.matter_dim,):
            raise ShapeMismatch(f"matter state must have length {self.matter_dim}")
        psi = np.zeros(self.dim, dtype=complex)
        psi[: self.matter_dim] = u
        return psi

    def manifest(self) -> dict:
        return {
            "grid": self.grid.spec(),
            "n_max": self.n_max,
            "g": self.g,
            "compressed": self.compressed,
            "effective_modes": self.n_modes,
            "field_modes": self.grid.n_modes,
            "dimension": self.dim,
            "dimension_cap": self.cap,
            "seed": None,
        }

    def manifest_json(self) -> str:
        return json.dumps(self.manifest(), indent=2, sort_keys=True)


def build_system(
    model: MatterModel,
    grid: ModeGrid | GridConfig | None = None,
    n_max: int = 2,
    g: float = 0.0,
    compress: bool = False,
    cap: int = DEFAULT_DIMENSION_CAP,
) -> TruncatedFockSystem:
    """Assemble the sparse ``H(g)`` on the truncated Fock space times the matter space.

    Basis index is ``photon_index * N + matter_index``.
    """
    if n_max not in (1, 2):
        raise ValidationError("n_max must be 1 or 2")
    if g < 0:
        raise ValidationError("g must be nonnegative")
    if model.cutoff(0.0) != 0:
        raise ValidationError("the cutoff must vanish at the origin")
    if not isinstance(grid, ModeGrid):
        grid = mode_grid(model, grid)
    grid.validate()
    n = model.dim
    c = mode_couplings(model, grid)
    if compress:
        freqs, eff = compress_shells(grid, c)
    else:
        freqs = np.repeat(np.linalg.norm(grid.k, axis=1), 2)
        eff = c.reshape(-1, n, n)
    n_modes = len(freqs)
    dim = photon_dimension(n_modes, n_max) * n
    if dim > cap:
        raise DimensionCap(f"Fock dimension {dim} exceeds cap {cap}")

    occ = photon_basis(n_modes, n_max)
    e_ph = np.array([sum(freqs[i] for i in s) for s in occ], dtype=float)
    diag = (e_ph[:, None] + model.energies[None, :]).ravel()

    to, frm, mode, amp = _creation_table(n_modes, n_max)
    r, s = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    rows = (to[:, None, None] * n + r[None]).ravel()
    cols = (frm[:, None, None] * n + s[None]).ravel()
    vals = (g * amp[:, None, None] * eff[mode]).ravel()
    keep = vals != 0
    a = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(dim, dim)).tocsr()
    h = (sp.diags(diag.astype(complex)) + a + a.conj().T).tocsr()
    h.sum_duplicates()
    return TruncatedFockSystem(model, grid, n_max, float(g), freqs, eff, h, e_ph, compress, cap)


# --------------------------------------------------------------------------
# propagation


def _lanczos(h, v, m):
    """Orthonormal Krylov basis (fully reorthogonalized) and tridiagonal coefficients."""
    n = len(v)
    beta0 = np.linalg.norm(v)
    basis = np.empty((m + 1, n), dtype=complex)
    basis[0] = v / beta0
    alpha = np.zeros(m)
    beta = np.zeros(m)
    k = m
    for j in range(m):
        w = h @ basis[j]
        alpha[j] = np.vdot(basis[j], w).real
        w -= alpha[j] * basis[j]
        if j > 0:
            w -= beta[j - 1] * basis[j - 1]
        w -= basis[: j + 1].T @ (basis[: j + 1].conj() @ w)
        beta[j] = np.linalg.norm(w)
        if beta[j] < 1e-14 * max(1.0, abs(alpha[j])):
            k = j + 1
            break
        basis[j + 1] = w / beta[j]
    return beta0, basis[:k], alpha[:k], beta[:k], k < m


def _step(h, psi, dt_max, m, tol):
    """Advance by the largest ``dt <= dt_max`` meeting the error estimate; returns (psi, dt).

    The estimate is the residual weight ``beta_0 beta_k |[exp(-i dt T_k)]_{k,1}|``;
    an absolute floor of a few ulps keeps it attainable for tiny steps.
    """
    beta0, basis, alpha, beta, exact = _lanczos(h, psi, m)
    k = len(alpha)
    t_mat = np.diag(alpha) + np.diag(beta[: k - 1], 1) + np.diag(beta[: k - 1], -1)
    dt = dt_max
    while True:
        coef = scipy.linalg.expm(-1j * dt * t_mat)[:, 0]
        err = 0.0 if exact else beta0 * beta[k - 1] * abs(coef[k - 1])
        if err <= max(tol * dt, 4 * np.finfo(float).eps):
            return beta0 * (coef @ basis), dt
        dt *= 0.5
        if dt < 1e-10 * dt_max or dt < 1e-300:
            raise PropagationToleranceExceeded(f"Krylov step collapsed below {dt:.2e} (estimate {err:.2e})")


def propagate(system: TruncatedFockSystem, u, t_grid, krylov_dim: int = 30, tol: float = 1e-14, check: float = 1e-9):
    """States ``exp(-i t H) (vacuum (x) u)`` at every time in ``t_grid`` (ascending)."""
    u = np.asarray(u, dtype=complex)
    if abs(np.linalg.norm(u) - 1.0) > 1e-12:
        raise ValidationError("initial matter state must have unit norm")
    return np.array(list(iter_propagate(system, u, t_grid, krylov_dim, tol, check)))


def iter_propagate(system, u, t_grid, krylov_dim=30, tol=1e-14, check=1e-9):
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(t_grid < 0) or np.any(np.diff(t_grid) < 0):
        raise ValidationError("t_grid must be nonnegative and ascending")
    h = system.hamiltonian
    psi = system.vacuum_state(u)
    e0 = np.vdot(psi, h @ psi).real
    t = 0.0
    dt = 1.0
    for target in t_grid:
        while t < target:
            step = min(dt * 2.0, target - t)
            psi, dt = _step(h, psi, step, krylov_dim, tol)
            t = target if abs(target - (t + dt)) < 1e-14 * max(1.0, target) else t + dt
        norm_err = abs(np.linalg.norm(psi) - 1.0)
        e_err = abs(np.vdot(psi, h @ psi).real - e0) / max(1.0, abs(e0))
        if norm_err > check or e_err > check:
            raise PropagationToleranceExceeded(f"drift at t={target}: norm {norm_err:.2e}, energy {e_err:.2e}")
        yield psi.copy()


def _matter_view(system, psi):
    return psi.reshape(system.photon_dim, system.matter_dim)


def s_mat_exact(system: TruncatedFockSystem, x, t_grid, **kw) -> np.ndarray:
    """``S[t, b, a] = <(I (x) X) psi_a(t), psi_b(t)>`` over the matter basis."""
    n = system.matter_dim
    x = np.asarray(x, dtype=complex)
    if x.shape != (n, n):
        raise ShapeMismatch(f"X must be {n}x{n}")
    t_grid = np.asarray(t_grid, dtype=float)
    out = np.empty((len(t_grid), n, n), dtype=complex)
    gens = [iter_propagate(system, np.eye(n)[a], t_grid, **kw) for a in range(n)]
    for ti, states in enumerate(zip(*gens)):
        phi = np.stack([_matter_view(system, s) for s in states])  # (a, p, r)
        out[ti] = np.einsum("bpr,rs,aps->ba", phi.conj(), x, phi)
    return out


def coherence_exact(system: TruncatedFockSystem, x, a: int, b: int, t_grid, **kw) -> np.ndarray:
    """``<(I (x) X) psi_a(t), psi_b(t)>`` for one ordered pair of basis states."""
    n = system.matter_dim
    x = np.asarray(x, dtype=complex)
    ga = iter_propagate(system, np.eye(n)[a], t_grid, **kw)
    gb = iter_propagate(system, np.eye(n)[b], t_grid, **kw) if b != a else None
    out = []
    for sa in ga:
        sb = next(gb) if gb is not None else sa
        pa, pb = _matter_view(system, sa), _matter_view(system, sb)
        out.append(np.einsum("pr,rs,ps->", pb.conj(), x, pa))
    return np.array(out)


def marginal_probability_exact(system: TruncatedFockSystem, j: int, m: int, t_grid, **kw) -> np.ndarray:
    """``||(I (x) pi_{u_m}) psi_j(t)||^2`` on ``t_grid``."""
    n = system.matter_dim
    if not (0 <= j < n and 0 <= m < n):
        raise ShapeMismatch(f"basis indices must lie in [0, {n})")
    return np.array(
        [np.sum(np.abs(_matter_view(system, s)[:, m]) ** 2) for s in iter_propagate(system, np.eye(n)[j], t_grid, **kw)]
    )


def marginal_distribution_exact(system: TruncatedFockSystem, j: int, t_grid, **kw) -> np.ndarray:
    """All marginals ``P(j -> m)``, shape ``(len(t_grid), N)``."""
    n = system.matter_dim
    return np.array(
        [np.sum(np.abs(_matter_view(system, s)) ** 2, axis=0) for s in iter_propagate(system, np.eye(n)[j], t_grid, **kw)]
    )


def grid_modes(grid: ModeGrid):
    """``(k, weights)`` pair consumed by the discretized non-Markov probability."""
    return grid.k, grid.weights
