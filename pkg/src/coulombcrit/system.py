"""Discrete particle systems: H_N, the equilibrium residuals, the electric
potential h_N, its stress tensor and the regular remainder R_N.

All pair sums are dense O(N^2) numpy reductions. numpy reduces along an axis
in a fixed order for a given array shape, so results are bit-identical from
run to run regardless of how many threads the surrounding program uses.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .kernel import (
    KernelSingularityError,
    ProblemSpec,
    coulomb_g,
    coulomb_grad,
    coulomb_hess,
)


class ProximityError(ValueError):
    """A field point (or contour) lies inside the guard radius of a particle."""


def _min_pair_gap(positions: np.ndarray) -> float:
    n = positions.shape[0]
    if n < 2:
        return float("inf")
    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    dist[np.diag_indices(n)] = np.inf
    return float(dist.min())


@dataclass(frozen=True, eq=False)
class Configuration:
    """Particle positions x_i (N x d) with nonzero signed charges d_i.

    ``total_charge`` is M_N = sum |d_i| and ``min_gap`` is q_N, the smallest
    pairwise distance. Both are computed on construction; the arrays are made
    read-only so a configuration can be shared freely.
    """

    positions: np.ndarray
    charges: np.ndarray
    total_charge: float = field(init=False)
    min_gap: float = field(init=False)

    def __post_init__(self) -> None:
        pos = np.array(self.positions, dtype=float, copy=True)
        if pos.ndim == 1:
            pos = pos[None, :]
        q = np.array(self.charges, dtype=float, copy=True).reshape(-1)
        if pos.ndim != 2 or pos.shape[0] < 1:
            raise ValueError("positions must be an (N, d) array with N >= 1")
        if q.shape[0] != pos.shape[0]:
            raise ValueError(f"{pos.shape[0]} positions but {q.shape[0]} charges")
        if not np.all(np.isfinite(pos)) or not np.all(np.isfinite(q)):
            raise ValueError("positions and charges must be finite")
        if np.any(q == 0.0):
            raise ValueError("all charges must be nonzero")
        gap = _min_pair_gap(pos)
        if gap <= 0.0:
            raise KernelSingularityError("kernel singularity: coincident particle positions")
        pos.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "charges", q)
        object.__setattr__(self, "total_charge", float(np.abs(q).sum()))
        object.__setattr__(self, "min_gap", gap)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def weights(self) -> np.ndarray:
        """m_i = d_i / M_N, the atom weights of the empirical measure."""
        return self.charges / self.total_charge

    @property
    def scale(self) -> float:
        """Tolerance scale 1 + max|x_i| + max|d_i| / M_N."""
        radius = float(np.sqrt(np.einsum("ij,ij->i", self.positions, self.positions)).max())
        return 1.0 + radius + float(np.abs(self.charges).max()) / self.total_charge

    def with_positions(self, positions: np.ndarray) -> Configuration:
        return Configuration(positions, self.charges)

    def permuted(self, order) -> Configuration:
        order = np.asarray(order)
        return Configuration(self.positions[order], self.charges[order])

    def translated(self, shift) -> Configuration:
        return Configuration(self.positions + np.asarray(shift, dtype=float), self.charges)

    # -- serialization -----------------------------------------------------

    def to_table(self) -> str:
        """One row per particle: d coordinates, then the charge."""
        rows = np.column_stack([self.positions, self.charges])
        lines = [" ".join(repr(float(v)) for v in row) for row in rows]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_table(cls, text: str) -> Configuration:
        rows = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                rows.append([float(tok) for tok in line.split()])
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {exc}") from None
        if not rows:
            raise ValueError("particle table is empty")
        widths = {len(r) for r in rows}
        if len(widths) != 1 or widths.pop() < 3:
            raise ValueError("every row needs the same number (>= 3) of columns: coordinates then charge")
        arr = np.array(rows)
        return cls(arr[:, :-1], arr[:, -1])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_table(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> Configuration:
        return cls.from_table(Path(path).read_text(encoding="utf-8"))

    def to_dict(self) -> dict[str, Any]:
        return {"positions": self.positions.tolist(), "charges": self.charges.tolist()}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Configuration:
        extra = set(data) - {"positions", "charges"}
        if extra:
            raise ValueError(f"unknown configuration keys {sorted(extra)}")
        return cls(np.asarray(data["positions"], dtype=float), np.asarray(data["charges"], dtype=float))


# ---------------------------------------------------------------------------
# pair machinery
# ---------------------------------------------------------------------------


def _pair_differences(cfg: Configuration) -> tuple[np.ndarray, np.ndarray]:
    """(x_i - x_j) for all pairs, with the diagonal replaced by a harmless unit
    vector, plus the boolean off-diagonal mask."""
    x = cfg.positions
    diff = x[:, None, :] - x[None, :, :]
    n = cfg.n
    off = ~np.eye(n, dtype=bool)
    diff[np.arange(n), np.arange(n), 0] = 1.0
    return diff, off


def _check_spec(cfg: Configuration, spec: ProblemSpec) -> None:
    if cfg.dim != spec.dim:
        raise ValueError(f"configuration is {cfg.dim}-dimensional but spec has dim={spec.dim}")


def regular_force(cfg: Configuration, spec: ProblemSpec) -> np.ndarray:
    """(grad F * mu_N)(x_k) + grad V(x_k) at every particle.

    The self term l = k is kept; it vanishes because grad F(0) = 0.
    """
    x = cfg.positions
    out = spec.potential.evaluate(x).gradient
    if not spec.interaction.is_zero:
        diff = x[:, None, :] - x[None, :, :]
        gF = spec.interaction.evaluate(diff).gradient
        out = out + np.einsum("l,kli->ki", cfg.weights, gF)
    return out


def hamiltonian(cfg: Configuration, spec: ProblemSpec) -> float:
    _check_spec(cfg, spec)
    diff, off = _pair_differences(cfg)
    d = cfg.charges
    pair = np.where(off, coulomb_g(diff, spec.dim), 0.0)
    if not spec.interaction.is_zero:
        pair = pair + np.where(off, spec.interaction.evaluate(diff).value, 0.0)
    dd = d[:, None] * d[None, :]
    interaction = float((dd * pair).sum()) / (2.0 * cfg.total_charge)
    confinement = float((d * spec.potential.evaluate(cfg.positions).value).sum())
    return interaction + confinement


def residuals(cfg: Configuration, spec: ProblemSpec) -> np.ndarray:
    """r_i = (1/M_N) sum_{j != i} d_j (grad g + grad F)(x_i - x_j) + grad V(x_i).

    Returns an (N, d) array; the configuration is critical iff every row is 0.
    """
    _check_spec(cfg, spec)
    diff, off = _pair_differences(cfg)
    force = coulomb_grad(diff, spec.dim)
    if not spec.interaction.is_zero:
        force = force + spec.interaction.evaluate(diff).gradient
    force = np.where(off[:, :, None], force, 0.0)
    pair = np.einsum("j,ijk->ik", cfg.charges, force) / cfg.total_charge
    return pair + spec.potential.evaluate(cfg.positions).gradient


def residual_norm(cfg: Configuration, spec: ProblemSpec) -> float:
    """max_i |r_i|."""
    r = residuals(cfg, spec)
    return float(np.sqrt(np.einsum("ij,ij->i", r, r)).max())


def hamiltonian_grad(cfg: Configuration, spec: ProblemSpec) -> np.ndarray:
    """Flat gradient of H_N; block i equals d_i r_i."""
    return (cfg.charges[:, None] * residuals(cfg, spec)).reshape(-1)


def hamiltonian_hess(cfg: Configuration, spec: ProblemSpec) -> np.ndarray:
    """Exact (N d) x (N d) Hessian of H_N."""
    _check_spec(cfg, spec)
    n, dim = cfg.n, cfg.dim
    diff, off = _pair_differences(cfg)
    k = coulomb_hess(diff, dim)
    if not spec.interaction.is_zero:
        k = k + spec.interaction.evaluate(diff).hessian
    k = np.where(off[:, :, None, None], k, 0.0)
    d = cfg.charges
    blocks = -(d[:, None] * d[None, :])[:, :, None, None] * k / cfg.total_charge
    diag = -blocks.sum(axis=1) + d[:, None, None] * spec.potential.evaluate(cfg.positions).hessian
    blocks[np.arange(n), np.arange(n)] = diag
    return blocks.transpose(0, 2, 1, 3).reshape(n * dim, n * dim)


def boundedness_statistic(cfg: Configuration, spec: ProblemSpec) -> float:
    """The tightness statistic

    (1/(2 M^2)) sum_{i != j} |d_i||d_j| (g + |F|)(x_i - x_j) + (1/M) sum_i |d_i| V(x_i).
    """
    _check_spec(cfg, spec)
    diff, off = _pair_differences(cfg)
    pair = np.where(off, coulomb_g(diff, spec.dim), 0.0)
    if not spec.interaction.is_zero:
        pair = pair + np.where(off, np.abs(spec.interaction.evaluate(diff).value), 0.0)
    a = np.abs(cfg.charges)
    m = cfg.total_charge
    two_body = float(((a[:, None] * a[None, :]) * pair).sum()) / (2.0 * m * m)
    return two_body + float((a * spec.potential.evaluate(cfg.positions).value).sum()) / m


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FieldSample:
    point: np.ndarray
    h: float
    grad_h: np.ndarray
    stress: np.ndarray
    remainder: np.ndarray

    @property
    def flux_tensor(self) -> np.ndarray:
        """R_N - [grad h_N, grad h_N]; its flux around x_i is (2 c_d d_i / M_N) r_i."""
        return self.remainder - self.stress


def stress_tensor(grad_h: np.ndarray) -> np.ndarray:
    """[X, X] = 2 X (x) X - |X|^2 Id, batched over leading axes."""
    dim = grad_h.shape[-1]
    sq = np.einsum("...i,...i->...", grad_h, grad_h)
    return 2.0 * grad_h[..., :, None] * grad_h[..., None, :] - sq[..., None, None] * np.eye(dim)


def default_guard(cfg: Configuration) -> float:
    return 1e-9 * cfg.scale


def fields(cfg: Configuration, spec: ProblemSpec, points, guard: float | None = None) -> dict[str, np.ndarray]:
    """Vectorised field evaluation at an (..., d) array of points.

    Returns a dict with ``h``, ``grad_h``, ``stress`` and ``remainder`` arrays.
    ``remainder`` is (R_N)_{ij} = (-2/M_N) sum_k d_k d_j g(x - x_k) w_i(x_k)
    with w = grad F * mu_N + grad V, so its row divergence is
    2 c_d mu_N (grad F * mu_N + grad V).
    """
    _check_spec(cfg, spec)
    pts = np.asarray(points, dtype=float)
    if pts.shape[-1] != cfg.dim:
        raise ValueError("point dimension does not match the configuration")
    guard = default_guard(cfg) if guard is None else float(guard)
    flat = pts.reshape(-1, cfg.dim)
    rel = flat[:, None, :] - cfg.positions[None, :, :]
    dist = np.sqrt(np.einsum("pkd,pkd->pk", rel, rel))
    if np.any(dist <= guard):
        raise ProximityError(f"field point within guard radius {guard:g} of a particle")
    m = cfg.weights
    h = np.einsum("k,pk->p", m, coulomb_g(rel, cfg.dim))
    gk = coulomb_grad(rel, cfg.dim)
    grad_h = np.einsum("k,pkd->pd", m, gk)
    w = regular_force(cfg, spec)
    remainder = -2.0 * np.einsum("k,pkj,ki->pij", m, gk, w)
    shape = pts.shape[:-1]
    dim = cfg.dim
    return {
        "h": h.reshape(shape),
        "grad_h": grad_h.reshape(shape + (dim,)),
        "stress": stress_tensor(grad_h).reshape(shape + (dim, dim)),
        "remainder": remainder.reshape(shape + (dim, dim)),
    }


def field_eval(cfg: Configuration, spec: ProblemSpec, x, guard: float | None = None) -> FieldSample:
    x = np.asarray(x, dtype=float)
    out = fields(cfg, spec, x[None, :], guard)
    return FieldSample(
        point=x,
        h=float(out["h"][0]),
        grad_h=out["grad_h"][0],
        stress=out["stress"][0],
        remainder=out["remainder"][0],
    )
