"""Finite-level emitter and its photon form factor.

The emitter is described by its low-lying levels (energy, degeneracy) and the
momentum matrix elements between them.  Units are hbar = c = 1.

Matrix conventions used throughout the package: the matter basis is the
concatenation of the level subspaces in ascending energy order, and an
operator ``Z`` is stored as the matrix with ``Z[b, a] = <Z u_a, u_b>``.  The
momentum operator is stored as ``dipole[c, row, col]`` (component ``c``), so the
coupling block ``d_{jm}[a, b, c]`` sits at ``dipole[c, slice_j, slice_m][a, b]``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import (
    DegenerateGround,
    ModelIOError,
    NonHermitianCouplings,
    TableDomainError,
    UnsortedEnergies,
    ValidationError,
    ZeroMomentum,
)

HERMITIAN_ATOL = 1e-12


@dataclass(frozen=True)
class CutoffProfile:
    """Smooth cutoff ``amplitude * (r/scale)**order * exp(-(r/scale)**2)``.

    Vanishes at the origin to order ``order`` (infrared regularity) and decays
    faster than any polynomial (ultraviolet regularity).
    """

    order: int = 1
    scale: float = 2.0
    amplitude: float = 1.0

    def __post_init__(self):
        if int(self.order) != self.order or self.order < 1:
            raise ValidationError(f"cutoff order must be a positive integer, got {self.order}")
        if not self.scale > 0 or not self.amplitude > 0:
            raise ValidationError("cutoff scale and amplitude must be positive")

    def __call__(self, r):
        x = np.asarray(r, dtype=float) / self.scale
        return self.amplitude * x**self.order * np.exp(-x * x)

    evaluate = __call__

    def support_radius(self, floor: float = 1e-16) -> float:
        """Radius beyond which ``phi(r)**2 < floor`` (past the maximum)."""
        x = np.sqrt(self.order / 2.0) + 1.0
        # phi decreases past its maximum at sqrt(order/2); march outward
        while (self.amplitude * x**self.order * np.exp(-x * x)) ** 2 >= floor:
            x += 0.05
        return float(x * self.scale)


@dataclass(frozen=True)
class Level:
    energy: float
    dim: int


@dataclass(frozen=True, eq=False)
class MatterModel:
    levels: tuple[Level, ...]
    dipole: np.ndarray  # (3, N, N), Hermitian in the (row, col) indices
    cutoff: CutoffProfile
    offsets: tuple[int, ...] = field(repr=False)

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def dim(self) -> int:
        return self.offsets[-1]

    @property
    def level_energies(self) -> np.ndarray:
        return np.array([lv.energy for lv in self.levels])

    @property
    def level_dims(self) -> tuple[int, ...]:
        return tuple(lv.dim for lv in self.levels)

    @property
    def energies(self) -> np.ndarray:
        """Energy of every basis vector."""
        return np.repeat(self.level_energies, self.level_dims)

    @property
    def level_index(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_levels), self.level_dims)

    def block(self, j: int) -> slice:
        return slice(self.offsets[j], self.offsets[j + 1])

    def basis_index(self, level: int, a: int = 0) -> int:
        if not 0 <= a < self.levels[level].dim:
            raise IndexError(f"level {level} has dimension {self.levels[level].dim}")
        return self.offsets[level] + a

    def projector(self, j: int) -> np.ndarray:
        p = np.zeros((self.dim, self.dim), dtype=complex)
        s = self.block(j)
        p[s, s] = np.eye(self.levels[j].dim)
        return p

    def coupling(self, j: int, m: int) -> np.ndarray:
        """Block ``d_{jm}`` with shape ``(dim_j, dim_m, 3)``."""
        return np.moveaxis(self.dipole[:, self.block(j), self.block(m)], 0, -1)

    @property
    def hamiltonian(self) -> np.ndarray:
        return np.diag(self.energies).astype(complex)

    def is_decoupled(self) -> bool:
        return not np.any(self.dipole)

    def with_dipole_scale(self, factor: float) -> "MatterModel":
        return MatterModel(self.levels, self.dipole * factor, self.cutoff, self.offsets)

    def with_cutoff(self, cutoff: CutoffProfile) -> "MatterModel":
        return MatterModel(self.levels, self.dipole, cutoff, self.offsets)


@dataclass(frozen=True)
class FormFactorSample:
    k: np.ndarray
    matrix: np.ndarray  # (3, N, N) full matter-space form factor
    model: MatterModel = field(repr=False)

    def block(self, j: int, m: int) -> np.ndarray:
        """``E_{jm}(k)`` as a ``(dim_j, dim_m, 3)`` array."""
        return np.moveaxis(self.matrix[:, self.model.block(j), self.model.block(m)], 0, -1)

    @property
    def blocks(self) -> dict[tuple[int, int], np.ndarray]:
        n = self.model.n_levels
        return {(j, m): self.block(j, m) for j in range(n) for m in range(n) if j != m}


def _as_block(value, dj: int, dm: int) -> np.ndarray:
    arr = np.asarray(value, dtype=complex)
    if arr.shape == (3,):
        arr = arr.reshape(1, 1, 3)
    if arr.shape != (dj, dm, 3):
        raise ValidationError(f"coupling block must have shape {(dj, dm, 3)}, got {arr.shape}")
    return arr


def build_model(
    levels: Sequence,
    couplings: Mapping[tuple[int, int], object],
    cutoff: CutoffProfile,
    atol: float = HERMITIAN_ATOL,
) -> MatterModel:
    """Validate the level structure and couplings and assemble a model.

    ``levels`` holds ``(energy, dim)`` pairs or :class:`Level` objects.
    ``couplings`` maps ordered pairs ``(j, m)``, ``j != m``, to blocks of
    shape ``(dim_j, dim_m, 3)`` (a bare 3-vector is accepted for 1x1 blocks).
    Pairs given in one direction only are completed by Hermiticity; pairs
    given in both directions must agree.
    """
    lv = tuple(l if isinstance(l, Level) else Level(float(l[0]), int(l[1])) for l in levels)
    if not lv:
        raise ValidationError("at least one level is required")
    energies = np.array([l.energy for l in lv])
    if not np.all(np.isfinite(energies)):
        raise ValidationError("level energies must be finite")
    if np.any(np.diff(energies) <= 0):
        raise UnsortedEnergies(f"energies must be strictly increasing: {energies.tolist()}")
    if any(l.dim < 1 for l in lv):
        raise ValidationError("level dimensions must be positive")
    if lv[0].dim != 1:
        raise DegenerateGround(f"ground level must be simple, got dimension {lv[0].dim}")
    offsets = tuple(int(x) for x in np.concatenate([[0], np.cumsum([l.dim for l in lv])]))
    n = offsets[-1]
    if n < 2:
        raise ValidationError("total matter dimension must be at least 2")

    dipole = np.zeros((3, n, n), dtype=complex)
    given = {}
    for (j, m), value in couplings.items():
        j, m = int(j), int(m)
        if j == m or not (0 <= j < len(lv) and 0 <= m < len(lv)):
            raise ValidationError(f"invalid coupling pair {(j, m)}")
        given[(j, m)] = _as_block(value, lv[j].dim, lv[m].dim)

    for (j, m), blk in given.items():
        if (m, j) in given:
            other = given[(m, j)]
            dev = float(np.max(np.abs(other - np.conj(np.transpose(blk, (1, 0, 2))))))
            if dev > atol:
                pair = (min(j, m), max(j, m))
                raise NonHermitianCouplings(pair, dev)
        sj = slice(offsets[j], offsets[j + 1])
        sm = slice(offsets[m], offsets[m + 1])
        dipole[:, sj, sm] = np.moveaxis(blk, -1, 0)
        dipole[:, sm, sj] = np.moveaxis(np.conj(np.transpose(blk, (1, 0, 2))), -1, 0)

    return MatterModel(lv, dipole, cutoff, offsets)


def default_model() -> MatterModel:
    """Three-level demonstration configuration."""
    return build_model(
        [(0.0, 1), (1.0, 1), (1.5, 1)],
        {(0, 1): (0, 0, 0.8), (0, 2): (0.5, 0, 0), (1, 2): (0, 0.3, 0)},
        CutoffProfile(order=1, scale=2.0),
    )


def two_level_model(gap=1.0, dipole=(0.0, 0.0, 1.0), order=1, scale=2.0, amplitude=1.0):
    return build_model(
        [(0.0, 1), (float(gap), 1)],
        {(0, 1): dipole},
        CutoffProfile(order=order, scale=scale, amplitude=amplitude),
    )


# --------------------------------------------------------------------------
# form factor


def transverse_project(k, v) -> np.ndarray:
    """Component of ``v`` orthogonal to ``k``."""
    k = np.asarray(k, dtype=float)
    v = np.asarray(v)
    kk = float(k @ k)
    if kk == 0.0:
        raise ZeroMomentum("transverse projection needs k != 0")
    return v - (k @ v) / kk * k


def _projectors(omega: np.ndarray) -> np.ndarray:
    """Transverse projectors ``I - w w^T`` for unit vectors ``omega`` (n, 3)."""
    return np.eye(3)[None] - omega[:, :, None] * omega[:, None, :]


def form_factor_matrices(model: MatterModel, ks) -> np.ndarray:
    """Dipole form factor at many momenta: shape ``(n, 3, N, N)``."""
    ks = np.atleast_2d(np.asarray(ks, dtype=float))
    r = np.linalg.norm(ks, axis=1)
    if np.any(r == 0):
        raise ZeroMomentum("form factor is undefined at k = 0")
    proj = _projectors(ks / r[:, None])
    amp = model.cutoff(r) / np.sqrt(r)
    return amp[:, None, None, None] * np.einsum("ncd,dij->ncij", proj, model.dipole)


def form_factor(model: MatterModel, k) -> FormFactorSample:
    k = np.asarray(k, dtype=float)
    return FormFactorSample(k, form_factor_matrices(model, k[None])[0], model)


@dataclass(frozen=True, eq=False)
class CouplingTable:
    """Momentum-dependent replacement for the constant momentum matrix elements.

    ``values[i, j, l]`` is a ``(3, N, N)`` matrix (same layout as
    ``MatterModel.dipole``) at radius ``radii[i]``, polar angle ``theta[j]``
    and azimuth ``phi[l]``.  Evaluation is trilinear in ``(r, theta, phi)``.
    The grid must span ``theta`` in ``[0, pi]`` and ``phi`` in ``[0, 2 pi]``.
    """

    radii: np.ndarray
    theta: np.ndarray
    phi: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.theta[0] > 0 or self.theta[-1] < np.pi or self.phi[0] > 0 or self.phi[-1] < 2 * np.pi:
            raise ValidationError("table must cover theta in [0, pi] and phi in [0, 2 pi]")
        shape = (len(self.radii), len(self.theta), len(self.phi))
        if self.values.shape[:3] != shape or self.values.shape[3] != 3:
            raise ValidationError(f"table values must have shape {shape} + (3, N, N)")
        flat = self.values.reshape(shape + (-1,))
        grid = (self.radii, self.theta, self.phi)
        object.__setattr__(self, "_re", RegularGridInterpolator(grid, flat.real))
        object.__setattr__(self, "_im", RegularGridInterpolator(grid, flat.imag))

    @classmethod
    def from_function(cls, fn: Callable[[np.ndarray], np.ndarray], radii, theta, phi):
        """Tabulate ``fn(k) -> (3, N, N)`` on a spherical grid."""
        radii, theta, phi = (np.asarray(x, dtype=float) for x in (radii, theta, phi))
        vals = []
        for r in radii:
            for t in theta:
                for p in phi:
                    k = r * np.array([np.sin(t) * np.cos(p), np.sin(t) * np.sin(p), np.cos(t)])
                    vals.append(np.asarray(fn(k), dtype=complex))
        vals = np.array(vals).reshape((len(radii), len(theta), len(phi)) + vals[0].shape)
        return cls(radii, theta, phi, vals)

    @classmethod
    def constant(cls, model: MatterModel, radii, n_theta=5, n_phi=9):
        theta = np.linspace(0, np.pi, n_theta)
        phi = np.linspace(0, 2 * np.pi, n_phi)
        vals = np.broadcast_to(model.dipole, (len(radii), n_theta, n_phi) + model.dipole.shape)
        return cls(np.asarray(radii, dtype=float), theta, phi, np.array(vals))

    def __call__(self, ks) -> np.ndarray:
        ks = np.atleast_2d(np.asarray(ks, dtype=float))
        r = np.linalg.norm(ks, axis=1)
        if np.any(r < self.radii[0]) or np.any(r > self.radii[-1]):
            raise TableDomainError(
                f"|k| outside tabulated range [{self.radii[0]}, {self.radii[-1]}]"
            )
        theta = np.arccos(np.clip(ks[:, 2] / np.where(r > 0, r, 1.0), -1.0, 1.0))
        phi = np.mod(np.arctan2(ks[:, 1], ks[:, 0]), 2 * np.pi)
        pts = np.column_stack([r, theta, phi])
        out = self._re(pts) + 1j * self._im(pts)
        return out.reshape((len(ks),) + self.values.shape[3:])

    def hermiticity_defect(self) -> float:
        """Max of ``|D(-k) - D(k)^dagger|`` over grid points whose antipode is tabulated.

        Returns ``nan`` when the grid has no antipodal pairs.
        """
        worst = np.nan
        for i, r in enumerate(self.radii):
            for j, t in enumerate(self.theta):
                for l, p in enumerate(self.phi):
                    ja = np.flatnonzero(np.isclose(self.theta, np.pi - t))
                    la = np.flatnonzero(np.isclose(self.phi, np.mod(p + np.pi, 2 * np.pi)))
                    if ja.size and la.size:
                        d = self.values[i, j, l]
                        da = self.values[i, ja[0], la[0]]
                        dev = float(np.max(np.abs(da - np.conj(np.swapaxes(d, -1, -2)))))
                        worst = dev if np.isnan(worst) else max(worst, dev)
        return worst


def form_factor_general_matrices(model: MatterModel, ks, table: CouplingTable) -> np.ndarray:
    ks = np.atleast_2d(np.asarray(ks, dtype=float))
    r = np.linalg.norm(ks, axis=1)
    if np.any(r == 0):
        raise ZeroMomentum("form factor is undefined at k = 0")
    d = table(ks)
    proj = _projectors(ks / r[:, None])
    amp = model.cutoff(r) / np.sqrt(r)
    return amp[:, None, None, None] * np.einsum("ncd,ndij->ncij", proj, d)


def form_factor_general(model: MatterModel, k, table: CouplingTable) -> FormFactorSample:
    """Form factor with k-dependent couplings (non-dipole phase factors).

    The table should satisfy ``D(-k) = D(k)^dagger``; this is checked on
    antipodal grid points and a warning is issued when it fails, since the
    requirement is an interpretation rather than something the table format
    can enforce.
    """
    defect = table.hermiticity_defect()
    if np.isfinite(defect) and defect > 1e-10:
        warnings.warn(
            f"coupling table violates D(-k) = D(k)^dagger by {defect:.2e}",
            stacklevel=2,
        )
    k = np.asarray(k, dtype=float)
    return FormFactorSample(k, form_factor_general_matrices(model, k[None], table)[0], model)


# --------------------------------------------------------------------------
# JSON model files


def model_to_dict(model: MatterModel) -> dict:
    couplings = []
    for j in range(model.n_levels):
        for m in range(j + 1, model.n_levels):
            blk = model.coupling(j, m)
            if not np.any(blk):
                continue
            matrix = [
                [[[float(z.real), float(z.imag)] for z in blk[a, b]] for b in range(blk.shape[1])]
                for a in range(blk.shape[0])
            ]
            couplings.append({"from": j, "to": m, "matrix": matrix})
    c = model.cutoff
    return {
        "levels": [{"energy": lv.energy, "dim": lv.dim} for lv in model.levels],
        "couplings": couplings,
        "cutoff": {"order": c.order, "scale": c.scale, "amplitude": c.amplitude},
    }


def model_from_dict(doc: dict) -> MatterModel:
    try:
        levels = [(float(l["energy"]), int(l["dim"])) for l in doc["levels"]]
        couplings = {}
        for entry in doc.get("couplings", []):
            mat = np.asarray(entry["matrix"], dtype=float)
            if mat.ndim != 4 or mat.shape[2:] != (3, 2):
                raise ValidationError("coupling matrix entries must be 3 [re, im] pairs")
            couplings[(int(entry["from"]), int(entry["to"]))] = mat[..., 0] + 1j * mat[..., 1]
        cut = doc.get("cutoff", {})
        cutoff = CutoffProfile(
            order=int(cut.get("order", 1)),
            scale=float(cut.get("scale", 2.0)),
            amplitude=float(cut.get("amplitude", 1.0)),
        )
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed model document: {exc!r}") from exc
    return build_model(levels, couplings, cutoff)


def load_model(path) -> MatterModel:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ModelIOError(f"cannot read model file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"model file {path} is not valid JSON: {exc}") from exc
    return model_from_dict(doc)


def save_model(model: MatterModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2) + "\n")
