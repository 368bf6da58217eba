"""The Markov semigroup ``G(t) = exp(-t L)`` on block-diagonal observables."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ConvolutionQuadratureFailure, FgrViolated, ShapeMismatch, ValidationError
from .generator import BlockOperator, DissipativeGenerator, apply_generator
from .quadrature import composite_gauss_legendre


class SemigroupEngine:
    """Dense superoperator of the generator with cached exponentials.

    Vectorization follows :meth:`BlockOperator.vec`: levels ascending,
    column-major inside each block.
    """

    def __init__(self, gen: DissipativeGenerator, cache_size: int = 256):
        self.generator = gen
        self.model = gen.model
        self.dims = gen.dims
        n = sum(d * d for d in self.dims)
        sup = np.empty((n, n), dtype=complex)
        e = np.zeros(n, dtype=complex)
        for k in range(n):
            e[k] = 1.0
            sup[:, k] = apply_generator(gen, BlockOperator.from_vec(e, self.dims)).vec()
            e[k] = 0.0
        self.superop = sup
        self._cache: dict[float, np.ndarray] = {}
        self._cache_size = cache_size

    @property
    def size(self) -> int:
        return self.superop.shape[0]

    def propagator(self, t: float) -> np.ndarray:
        t = float(t)
        if t < 0:
            raise ValidationError("t must be nonnegative")
        g = self._cache.get(t)
        if g is None:
            g = scipy.linalg.expm(-t * self.superop)
            if len(self._cache) >= self._cache_size:
                self._cache.pop(next(iter(self._cache)))
            self._cache[t] = g
        return g

    def _check(self, x):
        if not isinstance(x, BlockOperator) or x.dims != self.dims:
            raise ShapeMismatch(f"operator shape {getattr(x, 'dims', None)} does not match model {self.dims}")

    def evolve(self, x: BlockOperator, t: float) -> BlockOperator:
        self._check(x)
        if t == 0:
            return BlockOperator(x.blocks)
        return BlockOperator.from_vec(self.propagator(t) @ x.vec(), self.dims)


def evolve(engine: SemigroupEngine, x: BlockOperator, t: float) -> BlockOperator:
    return engine.evolve(x, t)


# --------------------------------------------------------------------------
# triangular recursion


def _kernel_matrix(kern, d_upper: int, d_lower: int) -> np.ndarray:
    """Dense matrix of a jump kernel acting on column-major vectorized blocks."""
    out = np.empty((d_upper * d_upper, d_lower * d_lower), dtype=complex)
    e = np.zeros((d_lower, d_lower), dtype=complex)
    for k in range(d_lower * d_lower):
        a, b = k % d_lower, k // d_lower
        e[a, b] = 1.0
        out[:, k] = kern(e).ravel(order="F")
        e[a, b] = 0.0
    return out


class _Propagator:
    """``exp(-s T)`` for batches of ``s``, through an eigendecomposition when well conditioned."""

    def __init__(self, t_mat: np.ndarray, max_cond: float = 1e8):
        self.t = t_mat
        tau, v = np.linalg.eig(t_mat)
        self.diag = np.linalg.cond(v) <= max_cond
        if self.diag:
            self.tau, self.v, self.vinv = tau, v, np.linalg.inv(v)

    def __call__(self, s: np.ndarray) -> np.ndarray:
        if self.diag:
            return np.einsum("ik,nk,kj->nij", self.v, np.exp(-np.outer(s, self.tau)), self.vinv)
        return np.stack([scipy.linalg.expm(-si * self.t) for si in s])


class _Recursion:
    """phi_jm on batches of times for one fixed X, by nested Gauss-Legendre convolution."""

    def __init__(self, gen: DissipativeGenerator, x: BlockOperator, nodes_per_panel: int):
        self.x = x
        self.n = nodes_per_panel
        self.t_norm = gen.t_norm()
        dims = gen.dims
        self.dims = dims
        self.props = [_Propagator(t) for t in gen.t_matrices]
        self.kmat = {key: _kernel_matrix(k, dims[key[0]], dims[key[1]]) for key, k in gen.jumps.items()}

    def _jump(self, j, p, y):
        d = self.dims[j]
        vy = np.swapaxes(y, 1, 2).reshape(len(y), -1)
        out = (vy @ self.kmat[(j, p)].T).reshape(len(y), d, d)
        return np.swapaxes(out, 1, 2)

    def phi(self, j: int, m: int, ts: np.ndarray) -> np.ndarray:
        ts = np.asarray(ts, dtype=float)
        if j == m:
            e = self.props[j](ts)
            return e @ self.x.blocks[m] @ np.conj(np.swapaxes(e, 1, 2))
        t_max = float(np.max(ts, initial=0.0))
        panels = int(np.ceil(t_max * self.t_norm / 4.0)) + 1
        u, w = composite_gauss_legendre(0.0, 1.0, panels, self.n)
        s = (ts[:, None] * u[None]).ravel()
        ws = (ts[:, None] * w[None]).ravel()
        src = sum(self._jump(j, p, self.phi(p, m, s)) for p in range(m, j))
        e = self.props[j]((ts[:, None] - s.reshape(len(ts), -1)).ravel())
        terms = e @ src @ np.conj(np.swapaxes(e, 1, 2))
        d = self.dims[j]
        return (ws[:, None, None] * terms).reshape(len(ts), -1, d, d).sum(axis=1)


def block_recursion(
    engine: SemigroupEngine, x: BlockOperator, t: float, nodes_per_panel: int = 12, tol: float | None = None
) -> BlockOperator:
    """``G(t) X`` assembled from the blockwise triangular recursion.

    The diagonal terms are closed-form conjugations by ``exp(-t T_j)``; each
    off-diagonal term is a convolution integral over ``[0, t]`` evaluated by
    composite Gauss-Legendre, certified against a refined rule.
    """
    engine._check(x)
    if t < 0:
        raise ValidationError("t must be nonnegative")
    gen = engine.generator
    tol = gen.config.tol if tol is None else tol
    n_lv = len(engine.dims)
    coarse = _Recursion(gen, x, nodes_per_panel)
    fine = _Recursion(gen, x, 2 * nodes_per_panel)
    blocks = []
    for j in range(n_lv):
        acc_c = sum(coarse.phi(j, m, [t])[0] for m in range(j + 1))
        acc_f = sum(fine.phi(j, m, [t])[0] for m in range(j + 1))
        cert = float(np.max(np.abs(acc_f - acc_c), initial=0.0))
        if cert > tol * max(1.0, x.norm()):
            raise ConvolutionQuadratureFailure(f"convolution on level {j}: certificate {cert:.3e} exceeds {tol:.1e}")
        blocks.append(acc_f)
    return BlockOperator(blocks)


def phi_component(engine: SemigroupEngine, x: BlockOperator, j: int, m: int, t: float, nodes_per_panel: int = 24):
    """Single term ``phi_jm(t, X)``; zero for ``j < m``."""
    engine._check(x)
    if j < m:
        d = engine.dims[j]
        return np.zeros((d, d), dtype=complex)
    return _Recursion(engine.generator, x, nodes_per_panel).phi(j, m, [t])[0]


# --------------------------------------------------------------------------
# audits and decompositions


def _random_hermitian(rng, dims):
    blocks = []
    for d in dims:
        a = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
        blocks.append(0.5 * (a + a.conj().T))
    return BlockOperator(blocks)


def _random_psd(rng, dims):
    blocks = []
    for d in dims:
        a = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
        blocks.append(a @ a.conj().T)
    return BlockOperator(blocks)


@dataclass
class MarkovAudit:
    contraction_excess: float
    positivity_deficit: float
    identity_error: float
    n_samples: int
    t_grid: tuple

    def as_dict(self):
        return {
            "contraction_excess": self.contraction_excess,
            "positivity_deficit": self.positivity_deficit,
            "identity_error": self.identity_error,
            "n_samples": self.n_samples,
            "t_grid": list(self.t_grid),
        }


def markov_audit(engine: SemigroupEngine, n_samples: int = 100, t_grid=(0.1, 1.0, 10.0), seed: int = 0) -> MarkovAudit:
    """Contraction, positivity and unit preservation of ``G(t)`` on random samples.

    ``positivity_deficit`` is the smallest eigenvalue of ``G(t) X`` relative
    to ``||X||`` over PSD samples (nonnegative when positivity holds).
    """
    if n_samples < 1:
        raise ValidationError("n_samples must be at least 1")
    rng = np.random.default_rng(seed)
    ident = BlockOperator.identity(engine.dims)
    herm = [_random_hermitian(rng, engine.dims) for _ in range(n_samples)]
    psd = [_random_psd(rng, engine.dims) for _ in range(n_samples)]
    excess, deficit, id_err = -np.inf, np.inf, 0.0
    for t in t_grid:
        for x in herm:
            excess = max(excess, engine.evolve(x, t).norm() - x.norm())
        for x in psd:
            deficit = min(deficit, engine.evolve(x, t).min_eigenvalue() / x.norm())
        id_err = max(id_err, (engine.evolve(ident, t) - ident).norm())
    return MarkovAudit(float(excess), float(deficit), float(id_err), n_samples, tuple(float(t) for t in t_grid))


def decompose(x: BlockOperator):
    """Split ``X`` into ``<X u0, u0> I`` and a remainder vanishing on ``u0``."""
    c = x.blocks[0][0, 0]
    inv = BlockOperator.identity(x.dims) * c
    return inv, x - inv


@dataclass
class DecayFit:
    delta: float
    prefactor: float
    gamma: float
    skipped: bool = False
    below_bound: bool = False
    t_grid: np.ndarray = field(default=None, repr=False)
    norms: np.ndarray = field(default=None, repr=False)


def decay_rate(engine: SemigroupEngine, x: BlockOperator, t_grid=None, n_points: int = 41) -> DecayFit:
    """Least-squares fit of ``log ||G(t) X|| = log C - delta t`` for ``X`` in the decaying part."""
    engine._check(x)
    gamma = engine.generator.gamma_margin
    scale = max((float(np.linalg.norm(g, 2)) for g in engine.generator.gammas), default=0.0)
    if not gamma > 1e-12 * max(scale, 1.0):
        raise FgrViolated(f"no strictly positive decay margin (gamma = {gamma:.3e})")
    if x.norm() == 0:
        return DecayFit(np.inf, 0.0, gamma, skipped=True)
    if abs(x.blocks[0][0, 0]) > 1e-12 * x.norm():
        raise ValidationError("X has a component along the invariant subspace; call decompose first")
    t = np.linspace(0.0, 10.0 / gamma, n_points) if t_grid is None else np.asarray(t_grid, dtype=float)
    norms = np.array([engine.evolve(x, ti).norm() for ti in t])
    keep = norms > 1e-13 * norms[0]
    slope, icpt = np.polyfit(t[keep], np.log(norms[keep]), 1)
    delta = -float(slope)
    return DecayFit(delta, float(np.exp(icpt)), gamma, below_bound=delta < 0.9 * gamma, t_grid=t, norms=norms)


def markov_transition_probability(engine: SemigroupEngine, j: int, m: int, t: float, g: float) -> float:
    """``<G(t g^2) pi_{u_m} u_j, u_j>`` for global basis indices ``j`` and ``m``."""
    model = engine.model
    if not (0 <= j < model.dim and 0 <= m < model.dim):
        raise ShapeMismatch(f"basis indices must lie in [0, {model.dim})")
    y = engine.evolve(BlockOperator.basis_projector(model, m), t * g * g)
    lj = int(model.level_index[j])
    aj = j - model.offsets[lj]
    return float(y.blocks[lj][aj, aj].real)


def transition_trajectory(engine: SemigroupEngine, pairs, t_grid, g: float) -> np.ndarray:
    """Array of shape ``(len(t_grid), len(pairs))`` of Markov transition probabilities."""
    model = engine.model
    out = np.empty((len(t_grid), len(pairs)))
    for c, (j, m) in enumerate(pairs):
        proj = BlockOperator.basis_projector(model, m)
        lj = int(model.level_index[j])
        aj = j - model.offsets[lj]
        for r, t in enumerate(t_grid):
            out[r, c] = engine.evolve(proj, t * g * g).blocks[lj][aj, aj].real
    return out
