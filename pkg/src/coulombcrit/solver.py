"""Critical points and minimisers of H_N, plus analytic relative equilibria."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .kernel import PotentialSpec, ProblemSpec
from .system import (
    Configuration,
    _check_spec,
    _min_pair_gap,
    _pair_differences,
    hamiltonian,
    hamiltonian_hess,
    residuals,
)

CONVERGED = "converged"
MAX_ITER = "max_iter"
COLLAPSE = "collapse_detected"
STALLED = "stalled"

# consecutive step halvings before the line search gives up
MAX_HALVINGS = 30
# consecutive gap-shrinking Newton steps that signal collapse
COLLAPSE_WINDOW = 30


@dataclass(frozen=True)
class SolverOptions:
    max_iterations: int = 200
    residual_tolerance: float = 1e-12
    min_gap_floor: float = 1e-8
    step_damping: float = 1.0
    mode: str = "newton"

    def __post_init__(self) -> None:
        if self.residual_tolerance <= 0:
            raise ValueError("residual_tolerance must be positive")
        if self.min_gap_floor <= 0:
            raise ValueError("min_gap_floor must be positive")
        if not 0 < self.step_damping <= 1:
            raise ValueError("step_damping must lie in (0, 1]")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be nonnegative")
        if self.mode not in ("newton", "descent"):
            raise ValueError(f"unknown solver mode {self.mode!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "max_iterations": self.max_iterations,
            "residual_tolerance": self.residual_tolerance,
            "min_gap_floor": self.min_gap_floor,
            "step_damping": self.step_damping,
            "mode": self.mode,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> SolverOptions:
        extra = set(data) - {"max_iterations", "residual_tolerance", "min_gap_floor", "step_damping", "mode"}
        if extra:
            raise ValueError(f"unknown solver keys {sorted(extra)}")
        return cls(**data)


@dataclass(frozen=True)
class TraceEntry:
    residual_norm: float
    min_gap: float
    energy: float


@dataclass
class SolveReport:
    final_config: Configuration
    residual_norm: float
    iterations: int
    status: str
    tolerance: float
    trace: list[TraceEntry] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    def to_dict(self) -> dict[str, Any]:
        return {
            "status": self.status,
            "residual_norm": self.residual_norm,
            "residual_tolerance": self.tolerance,
            "iterations": self.iterations,
            "final_config": self.final_config.to_dict(),
            "trace": [
                {"residual_norm": t.residual_norm, "min_gap": t.min_gap, "energy": t.energy}
                for t in self.trace
            ],
        }


def _max_norm(r: np.ndarray) -> float:
    return float(np.sqrt(np.einsum("ij,ij->i", r, r)).max())


def _gap(positions: np.ndarray) -> float:
    return _min_pair_gap(positions)


def _entry(cfg: Configuration, spec: ProblemSpec, r: np.ndarray) -> TraceEntry:
    return TraceEntry(_max_norm(r), cfg.min_gap, hamiltonian(cfg, spec))


def _closest_pair_attracts(cfg: Configuration) -> bool:
    if cfg.n < 2:
        return False
    diff, off = _pair_differences(cfg)
    r2 = np.where(off, np.einsum("ijk,ijk->ij", diff, diff), np.inf)
    i, j = np.unravel_index(int(np.argmin(r2)), r2.shape)
    return cfg.charges[i] * cfg.charges[j] < 0


def solve_critical(init: Configuration, spec: ProblemSpec, opts: SolverOptions | None = None) -> SolveReport:
    """Solve r(x) = 0 by Levenberg-regularised Newton steps.

    The Jacobian of r is the Hessian of H_N with block row i divided by d_i.
    The regularisation weight is nu * |r|, which vanishes at a root and so
    keeps local quadratic convergence while absorbing rotation/translation
    gauge modes. Trial steps are halved until the merit |r|^2 decreases and
    the minimum pair gap stays above ``min_gap_floor``.

    Collapse is reported when every halving is rejected with a trial gap
    below the floor, or after COLLAPSE_WINDOW consecutive accepted steps that
    each shrank the minimum gap while either being cut back by the gap guard
    or closing in on an opposite-sign closest pair without the residual
    dropping tenfold over the window. Both describe Newton chasing a
    collision it can only approach geometrically.
    """
    opts = opts or SolverOptions()
    if opts.mode == "descent":
        return minimize_energy(init, spec, opts)
    cfg = init
    n, dim = cfg.n, cfg.dim
    r = residuals(cfg, spec)
    trace = [_entry(cfg, spec, r)]
    nu = 1e-3
    row_scale = np.repeat(1.0 / cfg.charges, dim)[:, None]
    status = MAX_ITER
    guarded = attracting = 0
    for _ in range(opts.max_iterations):
        if trace[-1].residual_norm <= opts.residual_tolerance:
            break
        jac = row_scale * hamiltonian_hess(cfg, spec)
        rf = r.reshape(-1)
        merit = float(rf @ rf)
        jtj = jac.T @ jac
        lam = nu * math.sqrt(merit) + 1e-15 * float(np.abs(np.diag(jtj)).max())
        try:
            step = -np.linalg.solve(jtj + lam * np.eye(n * dim), jac.T @ rf)
        except np.linalg.LinAlgError:
            step = -np.linalg.lstsq(jac, rf, rcond=None)[0]
        step = opts.step_damping * step.reshape(n, dim)

        t = 1.0
        gap_hits = 0
        accepted = None
        for _ in range(MAX_HALVINGS):
            trial_pos = cfg.positions + t * step
            if _gap(trial_pos) < opts.min_gap_floor:
                gap_hits += 1
            else:
                trial = cfg.with_positions(trial_pos)
                r_trial = residuals(trial, spec)
                if float(np.einsum("ij,ij->", r_trial, r_trial)) < merit:
                    accepted = (trial, r_trial)
                    break
            t *= 0.5
        if accepted is None:
            if gap_hits > 0:
                status = COLLAPSE
                break
            nu *= 1e3
            if nu > 1e12:
                status = STALLED
                break
            continue
        previous_gap = cfg.min_gap
        cfg, r = accepted
        closing = cfg.min_gap < previous_gap
        guarded = guarded + 1 if gap_hits and closing else 0
        attracting = attracting + 1 if closing and _closest_pair_attracts(cfg) else 0
        nu = max(nu / 4.0, 1e-9) if t == 1.0 else nu * 4.0
        trace.append(_entry(cfg, spec, r))
        if guarded >= COLLAPSE_WINDOW:
            status = COLLAPSE
            break
        if attracting >= COLLAPSE_WINDOW and trace[-1].residual_norm > 0.1 * trace[-1 - COLLAPSE_WINDOW].residual_norm:
            status = COLLAPSE
            break
    if trace[-1].residual_norm <= opts.residual_tolerance:
        status = CONVERGED
    return SolveReport(cfg, trace[-1].residual_norm, len(trace) - 1, status, opts.residual_tolerance, trace)


_BLOCK_ROWS = 48


class _DescentEvaluator:
    """Fused O(N^2) evaluation of a descent trial step.

    The energy change of a step is formed from log1p of the relative change
    in squared pair distances, with the displacement differences taken
    directly. The Armijo test then compares quantities that are accurate
    relative to the change itself rather than to |H_N|, which is what lets
    descent reach residuals near 1e-10. Rows are processed in blocks so the
    temporaries stay small.
    """

    def __init__(self, charges: np.ndarray, spec: ProblemSpec) -> None:
        self.spec = spec
        self.charges = charges
        self.total = float(np.abs(charges).sum())
        self.weights = charges / self.total

    def _pair_energy(self, diff_old: list[np.ndarray], r2_old: np.ndarray, dlt: list[np.ndarray]) -> np.ndarray:
        dim = len(diff_old)
        num = dlt[0] * (2.0 * diff_old[0] + dlt[0])
        for k in range(1, dim):
            num += dlt[k] * (2.0 * diff_old[k] + dlt[k])
        rho = np.divide(num, r2_old, out=num)
        if dim == 2:
            return -0.5 * np.log1p(rho, out=rho)
        p = 1.0 - 0.5 * dim
        return r2_old**p * np.expm1(p * np.log1p(rho))

    def trial(self, old: np.ndarray, new: np.ndarray) -> tuple[float, float, np.ndarray]:
        """Return (min gap, H_N(new) - H_N(old), residuals at new)."""
        n, dim = new.shape
        disp = new - old
        q = self.charges
        w = self.weights
        interaction = self.spec.interaction
        gap2 = math.inf
        change = 0.0
        res = np.zeros_like(new)
        for lo in range(0, n, _BLOCK_ROWS):
            hi = min(n, lo + _BLOCK_ROWS)
            # pairs (i, j) with i in the block and j > i, each pair once
            lower = np.tril(np.ones((hi - lo, hi - lo), dtype=bool))
            d_old = [old[lo:hi, k, None] - old[None, lo:, k] for k in range(dim)]
            d_new = [new[lo:hi, k, None] - new[None, lo:, k] for k in range(dim)]
            dlt = [disp[lo:hi, k, None] - disp[None, lo:, k] for k in range(dim)]
            r2_old = sum(dk * dk for dk in d_old)
            r2_new = sum(dk * dk for dk in d_new)
            r2_old[:, : hi - lo][lower] = np.inf
            r2_new[:, : hi - lo][lower] = np.inf
            gap2 = min(gap2, float(r2_new.min()))
            # masked entries contribute 0 since r2_old = inf there
            pair = self._pair_energy(d_old, r2_old, dlt)
            if not interaction.is_zero:
                extra = interaction.evaluate(np.stack(d_new, axis=-1)).value
                extra -= interaction.evaluate(np.stack(d_old, axis=-1)).value
                extra[:, : hi - lo][lower] = 0.0
                pair += extra
            change += float(np.einsum("i,ij,j->", q[lo:hi], pair, q[lo:]))
            scale = 1.0 / r2_new if dim == 2 else (dim - 2) * r2_new ** (-0.5 * dim)
            force = [scale * dk for dk in d_new]
            if not interaction.is_zero:
                grad_f = interaction.evaluate(np.stack(d_new, axis=-1)).gradient
                grad_f[:, : hi - lo][lower] = 0.0
                force = [fk - grad_f[..., k] for k, fk in enumerate(force)]
            # force holds -(grad g + grad F)(x_i - x_j); it is odd in the pair
            for k in range(dim):
                res[lo:hi, k] -= np.einsum("ij,j->i", force[k], w[lo:])
                res[lo:, k] += np.einsum("ij,i->j", force[k], w[lo:hi])
        change /= self.total
        pot = self.spec.potential
        if pot.variant == "quadratic":
            omega = float(pot.params.get("omega", 1.0))
            dv = omega * (2.0 * np.einsum("ij,ij->i", old, disp) + np.einsum("ij,ij->i", disp, disp))
        else:
            dv = pot.evaluate(new).value - pot.evaluate(old).value
        change += float(np.einsum("i,i->", q, dv))
        res += pot.evaluate(new).gradient
        return math.sqrt(gap2) if n > 1 else math.inf, change, res


def minimize_energy(init: Configuration, spec: ProblemSpec, opts: SolverOptions | None = None) -> SolveReport:
    """Monotone gradient descent on H_N with Armijo backtracking.

    The trial step length comes from the Barzilai-Borwein formula (the
    conservative s.y / y.y variant); Armijo's sufficient-decrease test keeps
    H_N nonincreasing along the trace. Stops when max_i |r_i| <=
    residual_tolerance.
    """
    opts = opts or SolverOptions(max_iterations=20000, residual_tolerance=1e-8)
    _check_spec(init, spec)
    ev = _DescentEvaluator(init.charges, spec)
    d = init.charges[:, None]
    pos = init.positions.copy()
    r = residuals(init, spec)
    energy = hamiltonian(init, spec)
    trace = [TraceEntry(_max_norm(r), init.min_gap, energy)]
    grad = d * r
    if init.n > 1:
        t_trial = min(1.0, 0.1 * init.min_gap / max(float(np.abs(grad).max()), 1e-300))
    else:
        t_trial = 1.0
    status = MAX_ITER
    prev = None
    for _ in range(opts.max_iterations):
        if trace[-1].residual_norm <= opts.residual_tolerance:
            break
        if prev is not None:
            s = pos - prev[0]
            y = grad - prev[1]
            sy = float(np.einsum("ij,ij->", s, y))
            t_trial = sy / float(np.einsum("ij,ij->", y, y)) if sy > 0 else 2.0 * prev[2]
        t = opts.step_damping * min(max(t_trial, 1e-14), 1e8)
        g2 = float(np.einsum("ij,ij->", grad, grad))
        gap_hits = 0
        accepted = None
        for _ in range(MAX_HALVINGS):
            trial = pos - t * grad
            gap, change, r_trial = ev.trial(pos, trial)
            if gap < opts.min_gap_floor:
                gap_hits += 1
            elif change <= -1e-4 * t * g2:
                accepted = (trial, gap, change, r_trial)
                break
            t *= 0.5
        if accepted is None:
            status = COLLAPSE if gap_hits > 0 else STALLED
            break
        prev = (pos, grad, t)
        pos, gap, change, r = accepted
        energy += change
        grad = d * r
        trace.append(TraceEntry(_max_norm(r), gap, energy))
    if trace[-1].residual_norm <= opts.residual_tolerance:
        status = CONVERGED
    final = Configuration(pos, init.charges)
    return SolveReport(final, trace[-1].residual_norm, len(trace) - 1, status, opts.residual_tolerance, trace)


def polygon_relative_equilibrium(n: int, r: float, phase: float = 0.0) -> tuple[Configuration, float]:
    """n unit charges on a regular n-gon of radius r and the omega making it
    critical for V = omega |x|^2, F = 0, d = 2.

    From sum_{j != i} (x_i - x_j) / |x_i - x_j|^2 = ((n - 1) / 2) x_i / r^2
    the balance reads 2 omega x_i = (n - 1) x_i / (2 n r^2).
    """
    if int(n) != n or n < 2:
        raise ValueError("polygon needs n >= 2 vertices")
    if r <= 0:
        raise ValueError("polygon radius must be positive")
    angles = phase + 2.0 * np.pi * np.arange(n) / n
    pos = r * np.column_stack([np.cos(angles), np.sin(angles)])
    omega = (n - 1) / (4.0 * n * r * r)
    return Configuration(pos, np.ones(n)), omega


def polygon_problem(omega: float) -> ProblemSpec:
    return ProblemSpec(dim=2, potential=PotentialSpec.quadratic(omega))


def charge_pattern(n: int, pattern: str | Sequence[float]) -> np.ndarray:
    if isinstance(pattern, str):
        if pattern == "all_plus":
            return np.ones(n)
        if pattern == "alternating":
            return np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
        raise ValueError(f"unknown charge pattern {pattern!r}")
    charges = np.asarray(pattern, dtype=float)
    if charges.shape != (n,):
        raise ValueError(f"charge list has {charges.size} entries, expected {n}")
    return charges


def random_configuration(
    n: int,
    charge_pattern_: str | Sequence[float] = "all_plus",
    box_half_width: float = 1.0,
    seed: int = 0,
    dim: int = 2,
) -> Configuration:
    """Positions i.i.d. uniform in [-w, w]^dim, redrawn until every pair is
    more than 1e-3 w apart. Deterministic in ``seed``."""
    if n < 1:
        raise ValueError("need n >= 1")
    charges = charge_pattern(n, charge_pattern_)
    rng = np.random.default_rng(seed)
    while True:
        pos = rng.uniform(-box_half_width, box_half_width, size=(n, dim))
        if _gap(pos) > 1e-3 * box_half_width:
            return Configuration(pos, charges)
