"""Continuum side: gridded measures, the circle-law equilibrium, dual-norm
gaps against a test-field dictionary, radial profiles, the limit vorticity
residual and the N-sweep convergence study."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .kernel import ProblemSpec
from .solver import SolverOptions, minimize_energy, random_configuration
from .system import Configuration, boundedness_statistic
from .testfields import TestField

PAIR_BLOCK = 256


@dataclass(frozen=True, eq=False)
class GriddedMeasure:
    """Piecewise-constant measure on a square grid in the plane.

    ``density[i, j]`` is the value on the cell whose center is
    ``origin + ((i + 1/2) h, (j + 1/2) h)`` with h = ``cell_size``.
    """

    origin: tuple[float, float]
    cell_size: float
    density: np.ndarray

    def __post_init__(self) -> None:
        dens = np.array(self.density, dtype=float)
        if dens.ndim != 2 or dens.size == 0:
            raise ValueError("density must be a nonempty 2D array")
        if not np.all(np.isfinite(dens)):
            raise ValueError("density must be finite")
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")
        dens.setflags(write=False)
        object.__setattr__(self, "density", dens)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def shape(self) -> tuple[int, int]:
        return self.density.shape

    @property
    def masses(self) -> np.ndarray:
        return self.density * self.cell_size**2

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    @property
    def is_nonnegative(self) -> bool:
        return bool(np.all(self.density >= 0))

    def centers(self) -> np.ndarray:
        """Cell centers, shape ``(nx, ny, 2)``."""
        nx, ny = self.shape
        h = self.cell_size
        xs = self.origin[0] + h * (np.arange(nx) + 0.5)
        ys = self.origin[1] + h * (np.arange(ny) + 0.5)
        return np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1)

    def atoms(self) -> tuple[np.ndarray, np.ndarray]:
        """Centers and masses of the cells that carry mass."""
        mass = self.masses.ravel()
        keep = mass != 0
        return self.centers().reshape(-1, 2)[keep], mass[keep]

    def to_text(self) -> str:
        nx, ny = self.shape
        lines = [
            f"origin {self.origin[0]!r} {self.origin[1]!r}",
            f"cell_size {self.cell_size!r}",
            f"dims {nx} {ny}",
        ]
        lines.extend(" ".join(repr(float(v)) for v in row) for row in self.density)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> GriddedMeasure:
        rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
        header = {}
        for key in ("origin", "cell_size", "dims"):
            if not rows or rows[0][0] != key:
                raise ValueError(f"gridded measure header is missing {key!r}")
            header[key] = rows.pop(0)[1:]
        nx, ny = (int(v) for v in header["dims"])
        dens = np.array([[float(v) for v in row] for row in rows], dtype=float)
        if dens.shape != (nx, ny):
            raise ValueError(f"expected {nx}x{ny} density values, got shape {dens.shape}")
        origin = tuple(float(v) for v in header["origin"])
        return cls(origin, float(header["cell_size"][0]), dens)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path: str | Path) -> GriddedMeasure:
        return cls.from_text(Path(path).read_text())


def _measure_atoms(source: Configuration | GriddedMeasure) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(source, GriddedMeasure):
        return source.atoms()
    return source.positions, source.weights


# ---------------------------------------------------------------------------
# circle law
# ---------------------------------------------------------------------------


def _arc_primitive(u: float, radius: float) -> float:
    """Antiderivative of sqrt(R^2 - u^2) on [-R, R]."""
    u = min(max(u, -radius), radius)
    return 0.5 * (u * math.sqrt(max(radius * radius - u * u, 0.0)) + radius * radius * math.asin(u / radius))


def _strip_area(a: float, b: float, lo: float, hi: float, radius: float) -> float:
    """Area of {a <= u <= b, lo <= v <= hi} inside the disk, for 0 <= lo < hi."""
    cuts = {a, b}
    for level in (lo, hi):
        if level <= radius:
            w = math.sqrt(radius * radius - level * level)
            cuts.update(c for c in (-w, w) if a < c < b)
    pts = sorted(cuts)
    area = 0.0
    for u0, u1 in zip(pts[:-1], pts[1:]):
        mid = 0.5 * (u0 + u1)
        top = math.sqrt(max(radius * radius - mid * mid, 0.0))
        if top >= hi:
            area += (hi - lo) * (u1 - u0)
        elif top > lo:
            area += _arc_primitive(u1, radius) - _arc_primitive(u0, radius) - lo * (u1 - u0)
    return area


def disk_cell_area(x0: float, x1: float, y0: float, y1: float, radius: float) -> float:
    """Exact area of the rectangle [x0, x1] x [y0, y1] intersected with the
    disk of the given radius about the origin."""
    total = 0.0
    if y1 > 0:
        total += _strip_area(x0, x1, max(y0, 0.0), y1, radius)
    if y0 < 0:
        total += _strip_area(x0, x1, max(-y1, 0.0), -y0, radius)
    return total


def circle_law(omega: float) -> tuple[float, float]:
    """(radius, density) of the equilibrium measure for V = omega |x|^2, F = 0."""
    if not omega > 0:
        raise ValueError("omega must be positive")
    return 1.0 / math.sqrt(2.0 * omega), 2.0 * omega / math.pi


def equilibrium_disk(omega: float, cells: int = 128) -> GriddedMeasure:
    """Uniform disk measure rasterized on a cells x cells grid spanning the
    bounding square of the support; boundary cells carry their exact area
    fraction, so the total mass is 1 up to rounding."""
    radius, rho = circle_law(omega)
    if cells < 2:
        raise ValueError("cells must be >= 2")
    h = 2.0 * radius / cells
    edges = -radius + h * np.arange(cells + 1)
    lo, hi = edges[:-1], edges[1:]
    near = np.where(lo * hi > 0, np.minimum(np.abs(lo), np.abs(hi)), 0.0)
    far = np.maximum(np.abs(lo), np.abs(hi))
    inside = np.hypot(far[:, None], far[None, :]) <= radius
    cut = ~inside & (np.hypot(near[:, None], near[None, :]) < radius)
    frac = inside.astype(float)
    for i, j in zip(*np.nonzero(cut)):
        frac[i, j] = disk_cell_area(lo[i], hi[i], lo[j], hi[j], radius) / h**2
    return GriddedMeasure((-radius, -radius), h, rho * frac)


def equilibrium_field(x: Any, omega: float) -> np.ndarray:
    """grad g * mu for the circle-law measure: -2 omega x inside, -x/|x|^2 outside."""
    x = np.asarray(x, dtype=float)
    radius, _ = circle_law(omega)
    r2 = np.einsum("...i,...i->...", x, x)[..., None]
    inside = r2 <= radius * radius
    return np.where(inside, -2.0 * omega * x, -x / np.where(inside, 1.0, r2))


# ---------------------------------------------------------------------------
# dual norms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Dictionary:
    """Test fields with their norms sup|phi| + sup|D phi|."""

    fields: tuple[TestField, ...]
    norms: tuple[float, ...] = field(init=False)

    def __post_init__(self) -> None:
        if not self.fields:
            raise ValueError("dictionary must be nonempty")
        object.__setattr__(self, "fields", tuple(self.fields))
        norms = tuple(sum(phi.sup_norms()) for phi in self.fields)
        if any(not n > 0 for n in norms):
            raise ValueError("every dictionary field needs a positive norm")
        object.__setattr__(self, "norms", norms)

    def __len__(self) -> int:
        return len(self.fields)


def default_dictionary(extent: float = 1.0, lattice: int = 5, radii: Sequence[float] = (0.4, 0.8)) -> Dictionary:
    """Constant bumps in both coordinate directions on a square lattice of
    centers covering [-extent, extent]^2, at each radius."""
    coords = np.linspace(-extent, extent, lattice)
    fields = []
    for radius in radii:
        for cx in coords:
            for cy in coords:
                for vec in ((1.0, 0.0), (0.0, 1.0)):
                    fields.append(TestField.constant(vec, (cx, cy), radius))
    return Dictionary(tuple(fields))


def pairing(source: Configuration | GriddedMeasure, phi: TestField) -> np.ndarray:
    """<mu, phi> = integral of phi against the measure (midpoint rule on grids)."""
    pts, mass = _measure_atoms(source)
    return np.einsum("k,ki->i", mass, phi.value(pts))


def dual_norm_gap(
    a: Configuration | GriddedMeasure, b: Configuration | GriddedMeasure, dictionary: Dictionary
) -> float:
    if len(dictionary) == 0:
        raise ValueError("dictionary must be nonempty")
    best = 0.0
    for phi, norm in zip(dictionary.fields, dictionary.norms):
        diff = pairing(a, phi) - pairing(b, phi)
        best = max(best, float(np.sqrt(diff @ diff)) / norm)
    return best


# ---------------------------------------------------------------------------
# radial profile
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RadialHistogram:
    edges: np.ndarray
    density: np.ndarray

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    def bulk_mean(self, r_max: float) -> float:
        """Mean density over the bins lying entirely within r_max."""
        keep = self.edges[1:] <= r_max
        if not np.any(keep):
            raise ValueError("no bin lies within r_max")
        return float(self.density[keep].mean())

    def rows(self) -> list[dict[str, float]]:
        return [
            {"r_inner": float(a), "r_outer": float(b), "density": float(d)}
            for a, b, d in zip(self.edges[:-1], self.edges[1:], self.density)
        ]


def radial_histogram(cfg: Configuration, bins: int, r_max: float | None = None) -> RadialHistogram:
    """Charge-weighted annulus counts divided by annulus area and M_N."""
    if bins < 4:
        raise ValueError("bins must be >= 4")
    r = np.sqrt(np.einsum("ij,ij->i", cfg.positions, cfg.positions))
    if r_max is None:
        r_max = float(r.max()) * (1.0 + 1e-9) if r.max() > 0 else 1.0
    edges = np.linspace(0.0, r_max, bins + 1)
    counts, _ = np.histogram(r, bins=edges, weights=cfg.weights)
    area = np.pi * (edges[1:] ** 2 - edges[:-1] ** 2)
    return RadialHistogram(edges, counts / area)


# ---------------------------------------------------------------------------
# cell-pair sums
# ---------------------------------------------------------------------------


def symmetric_pair_sum(
    points: np.ndarray,
    masses: np.ndarray,
    kernel: Callable[[list[np.ndarray], np.ndarray, np.ndarray], np.ndarray],
    block: int = PAIR_BLOCK,
) -> float:
    """sum_{a != b} m_a m_b K(a, b) for a symmetric kernel, visiting each
    unordered pair once in fixed row blocks.

    ``kernel(diff, rows, cols)`` receives the coordinate components of
    X = x_rows[:, None] - x_cols[None, :] and the index arrays, and returns
    the kernel values. Entries on or below the diagonal of the leading square
    are replaced by X = e_1 before the call and zeroed afterwards, so X is
    never zero.
    """
    n, dim = points.shape
    total = 0.0
    for lo in range(0, n, block):
        hi = min(n, lo + block)
        rows = np.arange(lo, hi)
        cols = np.arange(lo, n)
        lower = np.tril(np.ones((hi - lo, hi - lo), dtype=bool))
        diff = [points[lo:hi, k, None] - points[None, lo:, k] for k in range(dim)]
        for k, dk in enumerate(diff):
            dk[:, : hi - lo][lower] = 1.0 if k == 0 else 0.0
        vals = kernel(diff, rows, cols)
        vals[:, : hi - lo][lower] = 0.0
        total += float(np.einsum("i,ij,j->", masses[lo:hi], vals, masses[lo:]))
    return 2.0 * total


def continuum_vorticity_residual(mu: GriddedMeasure, spec: ProblemSpec, phi: TestField) -> float:
    """(1/2) sum_{c != c'} K(x_c, x_c') m_c m_c' + sum_c grad V(x_c).phi(x_c) m_c
    with K(x, y) = (grad g + grad F)(x - y).(phi(x) - phi(y))."""
    if spec.dim != 2:
        raise ValueError("continuum_vorticity_residual is two-dimensional")
    pts, mass = mu.atoms()
    vals = phi.value(pts)

    def kernel(diff: list[np.ndarray], rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        dx, dy = diff
        px = vals[rows, 0, None] - vals[None, cols, 0]
        py = vals[rows, 1, None] - vals[None, cols, 1]
        out = -(dx * px + dy * py) / (dx * dx + dy * dy)
        if not spec.interaction.is_zero:
            grad_f = spec.interaction.evaluate(np.stack(diff, axis=-1)).gradient
            out += grad_f[..., 0] * px + grad_f[..., 1] * py
        return out

    pair = 0.5 * symmetric_pair_sum(pts, mass, kernel)
    grad_v = spec.potential.evaluate(pts).gradient
    return pair + float(np.einsum("k,ki,ki->", mass, grad_v, vals))


# ---------------------------------------------------------------------------
# convergence study
# ---------------------------------------------------------------------------


def field_gap(cfg: Configuration, omega: float, window: float = 1.0, grid: int = 240, excision: float = 0.25) -> float:
    """L^2 distance between grad h_N and the circle-law field over the disk of
    radius ``window``, sampled on a grid x grid lattice, with every lattice
    point closer than excision * N^(-1/2) to a particle removed."""
    h = 2.0 * window / grid
    axis = -window + h * (np.arange(grid) + 0.5)
    pts = np.stack(np.meshgrid(axis, axis, indexing="ij"), axis=-1).reshape(-1, 2)
    pts = pts[np.einsum("ij,ij->i", pts, pts) <= window * window]
    rho = excision / math.sqrt(cfg.n)
    m = cfg.weights
    total = 0.0
    for lo in range(0, len(pts), 2048):
        chunk = pts[lo : lo + 2048]
        rel = chunk[:, None, :] - cfg.positions[None, :, :]
        r2 = np.einsum("pki,pki->pk", rel, rel)
        keep = r2.min(axis=1) > rho * rho
        rel, r2 = rel[keep], r2[keep]
        grad_h = -np.einsum("k,pki->pi", m, rel / r2[..., None])
        err = grad_h - equilibrium_field(chunk[keep], omega)
        total += float(np.einsum("pi,pi->", err, err))
    return math.sqrt(total * h * h)


@dataclass(frozen=True)
class StudyRow:
    n: int
    seed: int
    status: str
    iterations: int
    residual_norm: float
    boundedness: float
    dual_gap: float
    field_gap: float
    support_radius: float
    bulk_density: float
    seconds: float

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)


def convergence_study(
    spec: ProblemSpec,
    n_values: Sequence[int],
    seeds: Sequence[int],
    opts: SolverOptions | None = None,
    cells: int = 128,
    dictionary: Dictionary | None = None,
    box_half_width: float = 1.0,
) -> list[StudyRow]:
    """Minimize H_N for each (N, seed) from a uniform random start in the box
    and compare the result with the circle law for V = omega |x|^2."""
    if spec.dim != 2 or spec.potential.variant != "quadratic" or not spec.interaction.is_zero:
        raise ValueError("convergence_study needs d = 2, F = 0 and a quadratic V")
    omega = float(spec.potential.params.get("omega", 1.0))
    radius, _ = circle_law(omega)
    reference = equilibrium_disk(omega, cells)
    dictionary = dictionary or default_dictionary(extent=1.2 * radius)
    opts = opts or SolverOptions(max_iterations=20000, residual_tolerance=1e-8, mode="descent")
    rows = []
    for n in n_values:
        for seed in seeds:
            start = time.perf_counter()
            init = random_configuration(n, "all_plus", box_half_width, seed)
            report = minimize_energy(init, spec, opts)
            cfg = report.final_config
            hist = radial_histogram(cfg, 20, r_max=1.2 * radius)
            rows.append(
                StudyRow(
                    n=n,
                    seed=seed,
                    status=report.status,
                    iterations=report.iterations,
                    residual_norm=report.residual_norm,
                    boundedness=boundedness_statistic(cfg, spec),
                    dual_gap=dual_norm_gap(cfg, reference, dictionary),
                    field_gap=field_gap(cfg, omega, window=1.5 * radius),
                    support_radius=float(np.sqrt(np.einsum("ij,ij->i", cfg.positions, cfg.positions)).max()),
                    bulk_density=hist.bulk_mean(0.8 * radius),
                    seconds=time.perf_counter() - start,
                )
            )
    return rows
