"""Numerical certificates for critical configurations.

Flux of the stress/remainder tensor around particles, its pointwise
divergence, the kernel factorization used in the vorticity weak form, the
discrete vorticity residual, and the stability conditions (discrete and
limit forms).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Any

import numpy as np

from .kernel import ProblemSpec, coulomb_grad, coulomb_hess
from .meanfield import GriddedMeasure, symmetric_pair_sum
from .system import (
    Configuration,
    ProximityError,
    _check_spec,
    _pair_differences,
    default_guard,
    fields,
    hamiltonian_hess,
    residuals,
)
from .testfields import TestField

MIN_NODES = 16
STABILITY_VARIANTS = ("literal", "grouped", "full_hessian")


def _flux_tensor(cfg: Configuration, spec: ProblemSpec, points: np.ndarray, guard: float | None) -> np.ndarray:
    out = fields(cfg, spec, points, guard)
    return out["remainder"] - out["stress"]


# ---------------------------------------------------------------------------
# flux
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FluxResult:
    computed: np.ndarray
    expected: np.ndarray
    delta_used: float
    nodes: int

    @property
    def error(self) -> float:
        return float(np.abs(self.computed - self.expected).max())

    def to_dict(self) -> dict[str, Any]:
        return {
            "computed": self.computed.tolist(),
            "expected": self.expected.tolist(),
            "delta_used": self.delta_used,
            "nodes": self.nodes,
            "error": self.error,
        }


def flux_integral(
    cfg: Configuration,
    spec: ProblemSpec,
    center,
    radius: float,
    nodes: int = 512,
    guard: float | None = None,
) -> np.ndarray:
    """Trapezoid rule for the outward flux of R_N - [grad h_N, grad h_N]
    through the circle of the given center and radius.

    The integrand is smooth and periodic on the circle, so the rule
    converges geometrically in ``nodes``.
    """
    _check_spec(cfg, spec)
    if cfg.dim != 2:
        raise ValueError("flux_integral integrates over circles and needs dim = 2")
    if nodes < MIN_NODES:
        raise ValueError(f"nodes must be >= {MIN_NODES}")
    if not radius > 0:
        raise ValueError("radius must be positive")
    center = np.asarray(center, dtype=float)
    guard = default_guard(cfg) if guard is None else float(guard)
    dist = np.sqrt(np.einsum("ki,ki->k", cfg.positions - center, cfg.positions - center))
    if np.any(np.abs(dist - radius) <= guard):
        raise ProximityError(f"circle passes within guard radius {guard:g} of a particle")
    theta = 2.0 * np.pi * np.arange(nodes) / nodes
    normal = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    tensor = _flux_tensor(cfg, spec, center + radius * normal, guard)
    return (2.0 * np.pi * radius / nodes) * np.einsum("pij,pj->i", tensor, normal)


def flux_expected(cfg: Configuration, spec: ProblemSpec, i: int) -> np.ndarray:
    """(2 c_d d_i / M_N) r_i: the flux carried by particle i."""
    if not 0 <= i < cfg.n:
        raise IndexError(f"particle index {i} out of range for N = {cfg.n}")
    return 2.0 * spec.c_d * cfg.weights[i] * residuals(cfg, spec)[i]


def _nearest_other(cfg: Configuration, i: int) -> float:
    if cfg.n == 1:
        return math.inf
    rel = np.delete(cfg.positions, i, axis=0) - cfg.positions[i]
    return float(np.sqrt(np.einsum("ki,ki->k", rel, rel)).min())


def flux_around(
    cfg: Configuration, spec: ProblemSpec, i: int, delta: float | None = None, nodes: int = 512
) -> FluxResult:
    """Flux through a circle of radius delta about particle i (default: half
    the minimum pair gap, or 1/2 for a single particle)."""
    if delta is None:
        delta = 0.5 * cfg.min_gap if cfg.n > 1 else 0.5
    if delta >= _nearest_other(cfg, i):
        raise ValueError("delta must be smaller than the distance to the nearest other particle")
    computed = flux_integral(cfg, spec, cfg.positions[i], delta, nodes)
    return FluxResult(computed, flux_expected(cfg, spec, i), float(delta), int(nodes))


def divergence_probe(cfg: Configuration, spec: ProblemSpec, x, step: float = 1e-3) -> np.ndarray:
    """Central-difference row divergence of R_N - [grad h_N, grad h_N] at x."""
    _check_spec(cfg, spec)
    x = np.asarray(x, dtype=float)
    if not step > 0:
        raise ValueError("step must be positive")
    rel = cfg.positions - x
    if np.sqrt(np.einsum("ki,ki->k", rel, rel)).min() <= 10.0 * step:
        raise ProximityError("probe point lies within 10 steps of a particle")
    eye = np.eye(cfg.dim)
    pts = np.concatenate([x + step * eye, x - step * eye])
    tensor = _flux_tensor(cfg, spec, pts, None)
    plus, minus = tensor[: cfg.dim], tensor[cfg.dim :]
    # div_i = sum_j d_j T_ij; plus[j] is T evaluated at x + step e_j
    return np.einsum("jij->i", plus - minus) / (2.0 * step)


# ---------------------------------------------------------------------------
# factorization and vorticity
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _gauss_legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes on [0, 1] and weights on [-1, 1]."""
    s, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (s + 1.0), w


def _segment_averages(x: np.ndarray, y: np.ndarray, phi: TestField, order: int) -> np.ndarray:
    s, w = _gauss_legendre(order)
    pts = s[:, None] * x + (1.0 - s[:, None]) * y
    jac = phi.jacobian(pts)
    avg = 0.5 * np.einsum("q,qkl->kl", w, jac)
    return np.array([avg[0, 0], avg[1, 1], avg[1, 0] + avg[0, 1]])


def factorization_split(
    x, y, phi: TestField, order: int = 32, tolerance: float = 1e-12, max_order: int = 2048
) -> dict[str, float]:
    """Both sides of grad g(X).(phi(x) - phi(y)) = Q1 G1 + Q2 G2 + Q3 G3.

    G_k are segment averages of derivatives of phi computed by Gauss-Legendre
    quadrature, doubling the order until two successive orders agree to
    ``tolerance``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != (2,) or y.shape != (2,) or phi.dim != 2:
        raise ValueError("factorization_split is two-dimensional")
    big = x - y
    r2 = float(big @ big)
    if r2 == 0.0:
        raise ValueError("factorization_split needs x != y")
    lhs = float(coulomb_grad(big, 2) @ (phi.value(x) - phi.value(y)))
    q = -np.array([big[0] ** 2, big[1] ** 2, big[0] * big[1]]) / r2
    prev = _segment_averages(x, y, phi, order)
    while True:
        nxt = _segment_averages(x, y, phi, 2 * order)
        order *= 2
        if np.abs(nxt - prev).max() <= tolerance or order >= max_order:
            break
        prev = nxt
    return {"lhs": lhs, "rhs": float(q @ nxt), "order": order}


def vorticity_residual(cfg: Configuration, spec: ProblemSpec, phi: TestField) -> float:
    """(1/2) sum_{i != j} m_i m_j (grad g + grad F)(x_i - x_j).(phi(x_i) - phi(x_j))
    + sum_i m_i grad V(x_i).phi(x_i)."""
    _check_spec(cfg, spec)
    if phi.dim != cfg.dim:
        raise ValueError("test field and configuration dimensions differ")
    vals = phi.value(cfg.positions)
    dim = cfg.dim

    def kernel(diff: list[np.ndarray], rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        big = np.stack(diff, axis=-1)
        force = coulomb_grad(big, dim)
        if not spec.interaction.is_zero:
            force = force + spec.interaction.evaluate(big).gradient
        dphi = vals[rows][:, None, :] - vals[cols][None, :, :]
        return np.einsum("abi,abi->ab", force, dphi)

    m = cfg.weights
    pair = 0.5 * symmetric_pair_sum(cfg.positions, m, kernel)
    grad_v = spec.potential.evaluate(cfg.positions).gradient
    return pair + float(np.einsum("k,ki,ki->", m, grad_v, vals))


# ---------------------------------------------------------------------------
# stability
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StabilityReport:
    variant: str
    min_eigenvalue: float
    tolerance: float
    passed: bool
    site_minima: np.ndarray | None = None
    pair_minimum: float | None = None
    pair_argmin: tuple[int, int] | None = None
    spectrum: np.ndarray | None = None

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "variant": self.variant,
            "min_eigenvalue": self.min_eigenvalue,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }
        if self.site_minima is not None:
            out["site_minimum"] = float(self.site_minima.min())
            out["site_argmin"] = int(self.site_minima.argmin())
            out["site_minima"] = self.site_minima.tolist()
        if self.pair_minimum is not None:
            out["pair_minimum"] = self.pair_minimum
            out["pair_argmin"] = list(self.pair_argmin)
        if self.spectrum is not None:
            near_zero = np.abs(self.spectrum) <= abs(self.tolerance)
            out["max_eigenvalue"] = float(self.spectrum[-1])
            out["near_zero_modes"] = int(near_zero.sum())
            out["lowest_eigenvalues"] = self.spectrum[: min(6, len(self.spectrum))].tolist()
        return out


def _site_minima(cfg: Configuration, spec: ProblemSpec, pair_hess: np.ndarray) -> np.ndarray:
    d = cfg.charges
    blocks = np.einsum("i,j,ijkl->ikl", d, d, pair_hess)
    blocks += d[:, None, None] * spec.potential.evaluate(cfg.positions).hessian
    return np.linalg.eigvalsh(blocks)[:, 0]


def stability_check(cfg: Configuration, spec: ProblemSpec, variant: str = "full_hessian") -> StabilityReport:
    """Positive-semidefiniteness checks on a configuration.

    ``literal`` tests, for each i, S_i = sum_{j != i} d_i d_j (D^2 g + D^2 F)(x_i - x_j)
    + d_i D^2 V(x_i), and for each pair d_i d_j D^2 g(x_i - x_j) + D^2 F(x_i - x_j);
    ``grouped`` uses d_i d_j (D^2 g + D^2 F) for the pairs instead;
    ``full_hessian`` takes the spectrum of the Hessian of H_N.
    The verdict is min eigenvalue >= -1e-8 * scale.
    """
    _check_spec(cfg, spec)
    if variant not in STABILITY_VARIANTS:
        raise ValueError(f"unknown stability variant {variant!r}; expected one of {STABILITY_VARIANTS}")
    tol = -1e-8 * cfg.scale
    if variant == "full_hessian":
        spectrum = np.linalg.eigvalsh(hamiltonian_hess(cfg, spec))
        lowest = float(spectrum[0])
        return StabilityReport(variant, lowest, tol, lowest >= tol, spectrum=spectrum)
    n, dim = cfg.n, cfg.dim
    diff, off = _pair_differences(cfg)
    hg = np.where(off[:, :, None, None], coulomb_hess(diff, dim), 0.0)
    hf = np.zeros_like(hg)
    if not spec.interaction.is_zero:
        hf = np.where(off[:, :, None, None], spec.interaction.evaluate(diff).hessian, 0.0)
    sites = _site_minima(cfg, spec, hg + hf)
    lowest = float(sites.min())
    pair_min, pair_arg = None, None
    if n > 1:
        iu, ju = np.triu_indices(n, 1)
        dd = (cfg.charges[iu] * cfg.charges[ju])[:, None, None]
        if variant == "literal":
            mats = dd * hg[iu, ju] + hf[iu, ju]
        else:
            mats = dd * (hg[iu, ju] + hf[iu, ju])
        mins = np.linalg.eigvalsh(mats)[:, 0]
        k = int(mins.argmin())
        pair_min, pair_arg = float(mins[k]), (int(iu[k]), int(ju[k]))
        lowest = min(lowest, pair_min)
    return StabilityReport(variant, lowest, tol, lowest >= tol, sites, pair_min, pair_arg)


def limit_stability_form(source: Configuration | GriddedMeasure, spec: ProblemSpec, phi: TestField) -> float:
    """Double integral of (phi(x) - phi(y))^T (D^2 g + D^2 F)(x - y) (phi(x) - phi(y))
    against mu x mu, off the diagonal.

    For D^2 g in the plane the integrand is
    -|dphi|^2 / |X|^2 + 2 (dphi . X)^2 / |X|^4, which stays bounded as X -> 0.
    """
    if spec.dim != 2:
        raise ValueError("limit_stability_form is two-dimensional")
    if isinstance(source, GriddedMeasure):
        if not source.is_nonnegative:
            raise ValueError("limit_stability_form needs a nonnegative measure")
        pts, mass = source.atoms()
    else:
        _check_spec(source, spec)
        pts, mass = source.positions, source.weights
    vals = phi.value(pts)

    def kernel(diff: list[np.ndarray], rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        dx, dy = diff
        px = vals[rows, 0, None] - vals[None, cols, 0]
        py = vals[rows, 1, None] - vals[None, cols, 1]
        r2 = dx * dx + dy * dy
        proj = dx * px + dy * py
        out = (2.0 * proj * proj / r2 - (px * px + py * py)) / r2
        if not spec.interaction.is_zero:
            hf = spec.interaction.evaluate(np.stack(diff, axis=-1)).hessian
            out += hf[..., 0, 0] * px * px + 2.0 * hf[..., 0, 1] * px * py + hf[..., 1, 1] * py * py
        return out

    return symmetric_pair_sum(pts, mass, kernel)


# ---------------------------------------------------------------------------
# report fragments
# ---------------------------------------------------------------------------


def inputs_hash(payload: Any) -> str:
    """Short stable digest of a JSON-serializable payload."""
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def fragment(name: str, inputs: Any, values: Any, tolerance: float | None, passed: bool) -> dict[str, Any]:
    return {
        "check": name,
        "inputs_hash": inputs_hash(inputs),
        "values": values,
        "tolerance": tolerance,
        "passed": bool(passed),
    }
