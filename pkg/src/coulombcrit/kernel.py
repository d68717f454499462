"""Coulomb kernel, its derivatives, and the pluggable F / V function families.

Every routine accepts a single point of shape ``(d,)`` or a batch of shape
``(..., d)`` and broadcasts over the leading axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np


class KernelSingularityError(ValueError):
    """Raised when the Coulomb kernel is evaluated at the origin."""


def _as_points(x: Any, dim: int | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        raise ValueError("expected a point or an array of points, got a scalar")
    if dim is not None and x.shape[-1] != dim:
        raise ValueError(f"point dimension {x.shape[-1]} does not match dim={dim}")
    return x


def _squared_norm(x: np.ndarray) -> np.ndarray:
    r2 = np.einsum("...i,...i->...", x, x)
    if np.any(r2 == 0.0):
        raise KernelSingularityError("kernel singularity: Coulomb kernel evaluated at x = 0")
    return r2


def coulomb_g(x: Any, dim: int) -> np.ndarray | float:
    """-log|x| for d <= 2, |x|^(2-d) for d >= 3."""
    x = _as_points(x, dim)
    r2 = _squared_norm(x)
    if dim <= 2:
        out = -0.5 * np.log(r2)
    else:
        out = r2 ** (1.0 - 0.5 * dim)
    return float(out) if np.ndim(out) == 0 else out


def coulomb_grad(x: Any, dim: int) -> np.ndarray:
    x = _as_points(x, dim)
    r2 = _squared_norm(x)[..., None]
    if dim <= 2:
        return -x / r2
    return -(dim - 2) * x / r2 ** (0.5 * dim)


def coulomb_hess(x: Any, dim: int) -> np.ndarray:
    """Analytic Hessian of :func:`coulomb_g`, shape ``(..., d, d)``."""
    x = _as_points(x, dim)
    r2 = _squared_norm(x)[..., None, None]
    eye = np.eye(dim)
    outer = x[..., :, None] * x[..., None, :]
    if dim <= 2:
        return (2.0 * outer - r2 * eye) / r2**2
    # D^2 |x|^{2-d} = (d-2) (d |x|^{-d-2} x x^T - |x|^{-d} Id)
    return (dim - 2) * (dim * outer / r2 ** (0.5 * dim + 1.0) - eye / r2 ** (0.5 * dim))


def sphere_area(dim: int) -> float:
    """Surface measure of the unit sphere S^(dim-1)."""
    return 2.0 * math.pi ** (0.5 * dim) / math.gamma(0.5 * dim)


def coulomb_constant(dim: int) -> float:
    """c_d such that -Laplace(g) = c_d delta_0."""
    if dim < 2:
        raise ValueError("coulomb_constant requires dim >= 2")
    if dim == 2:
        return 2.0 * math.pi
    return (dim - 2) * sphere_area(dim)


# ---------------------------------------------------------------------------
# F and V families
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Evaluation:
    """Value and derivatives of a scalar function at one or many points."""

    value: np.ndarray
    gradient: np.ndarray
    hessian: np.ndarray

    @property
    def laplacian(self) -> np.ndarray:
        return np.trace(self.hessian, axis1=-2, axis2=-1)


def _radial(x: np.ndarray, f: np.ndarray, df: np.ndarray, d2f: np.ndarray) -> Evaluation:
    """Assemble derivatives of u(x) = f(|x|^2) from f, f', f'' evaluated at |x|^2."""
    dim = x.shape[-1]
    grad = 2.0 * df[..., None] * x
    outer = x[..., :, None] * x[..., None, :]
    hess = 2.0 * df[..., None, None] * np.eye(dim) + 4.0 * d2f[..., None, None] * outer
    return Evaluation(f, grad, hess)


def _power_series(s: np.ndarray, coefficients: tuple[float, ...]):
    """f(s) = sum_k c_k s^k with its first two s-derivatives."""
    f = np.zeros_like(s)
    df = np.zeros_like(s)
    d2f = np.zeros_like(s)
    for k, c in enumerate(coefficients):
        if c == 0.0:
            continue
        f = f + c * s**k
        if k >= 1:
            df = df + c * k * s ** (k - 1)
        if k >= 2:
            d2f = d2f + c * k * (k - 1) * s ** (k - 2)
    return f, df, d2f


_POTENTIAL_VARIANTS = ("zero", "quadratic", "linear", "polynomial", "gaussian_well")
_INTERACTION_VARIANTS = ("zero", "gaussian", "even_polynomial")


@dataclass(frozen=True)
class PotentialSpec:
    """External potential V.

    Variants and their parameters:

    * ``zero``
    * ``quadratic``: ``omega``; V = omega |x|^2
    * ``linear``: ``alpha1``, ``alpha2``; V = -alpha2 x1 + alpha1 x2 (d = 2 only)
    * ``polynomial``: ``coefficients`` c_k; V = sum_k c_k |x|^(2k)
    * ``gaussian_well``: ``depth``, ``width``, ``center``;
      V = -depth exp(-|x - center|^2 / width^2)
    """

    variant: str = "zero"
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.variant not in _POTENTIAL_VARIANTS:
            raise ValueError(f"unknown potential variant {self.variant!r}")
        allowed = {
            "zero": set(),
            "quadratic": {"omega"},
            "linear": {"alpha1", "alpha2"},
            "polynomial": {"coefficients"},
            "gaussian_well": {"depth", "width", "center"},
        }[self.variant]
        extra = set(self.params) - allowed
        if extra:
            raise ValueError(f"potential {self.variant!r} got unknown parameters {sorted(extra)}")
        if self.variant == "gaussian_well" and float(self.params.get("width", 1.0)) <= 0:
            raise ValueError("gaussian_well width must be positive")

    @classmethod
    def zero(cls) -> PotentialSpec:
        return cls("zero")

    @classmethod
    def quadratic(cls, omega: float) -> PotentialSpec:
        return cls("quadratic", {"omega": float(omega)})

    @classmethod
    def linear(cls, alpha1: float, alpha2: float) -> PotentialSpec:
        return cls("linear", {"alpha1": float(alpha1), "alpha2": float(alpha2)})

    @classmethod
    def polynomial(cls, coefficients) -> PotentialSpec:
        return cls("polynomial", {"coefficients": [float(c) for c in coefficients]})

    @classmethod
    def gaussian_well(cls, depth: float, width: float, center=None) -> PotentialSpec:
        params: dict[str, Any] = {"depth": float(depth), "width": float(width)}
        if center is not None:
            params["center"] = [float(c) for c in center]
        return cls("gaussian_well", params)

    def to_dict(self) -> dict[str, Any]:
        return {"variant": self.variant, **self.params}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> PotentialSpec:
        data = dict(data)
        variant = data.pop("variant", "zero")
        return cls(variant, data)

    def evaluate(self, x: Any) -> Evaluation:
        x = _as_points(x)
        dim = x.shape[-1]
        batch = x.shape[:-1]
        if self.variant == "zero":
            return Evaluation(np.zeros(batch), np.zeros_like(x), np.zeros(batch + (dim, dim)))
        if self.variant == "quadratic":
            s = np.einsum("...i,...i->...", x, x)
            omega = float(self.params.get("omega", 1.0))
            return _radial(x, omega * s, np.full_like(s, omega), np.zeros_like(s))
        if self.variant == "polynomial":
            s = np.einsum("...i,...i->...", x, x)
            return _radial(x, *_power_series(s, tuple(self.params.get("coefficients", ()))))
        if self.variant == "linear":
            if dim != 2:
                raise ValueError("linear potential is defined for d = 2 only")
            a1 = float(self.params.get("alpha1", 0.0))
            a2 = float(self.params.get("alpha2", 0.0))
            coef = np.array([-a2, a1])
            value = x @ coef
            grad = np.broadcast_to(coef, x.shape).copy()
            return Evaluation(value, grad, np.zeros(batch + (dim, dim)))
        # gaussian_well
        depth = float(self.params.get("depth", 1.0))
        width = float(self.params.get("width", 1.0))
        center = np.asarray(self.params.get("center", np.zeros(dim)), dtype=float)
        y = x - center
        s = np.einsum("...i,...i->...", y, y)
        e = np.exp(-s / width**2)
        return _radial(y, -depth * e, depth * e / width**2, -depth * e / width**4)


@dataclass(frozen=True)
class InteractionSpec:
    """Regular interaction F. Only even families exist, so F(x) = F(-x) by construction.

    * ``zero``
    * ``gaussian``: ``amplitude`` (beta), ``width`` (sigma); F = beta exp(-|x|^2 / sigma^2)
    * ``even_polynomial``: ``coefficients`` c_k; F = sum_k c_k |x|^(2k)
    """

    variant: str = "zero"
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.variant not in _INTERACTION_VARIANTS:
            raise ValueError(f"unknown interaction variant {self.variant!r}")
        allowed = {
            "zero": set(),
            "gaussian": {"amplitude", "width"},
            "even_polynomial": {"coefficients"},
        }[self.variant]
        extra = set(self.params) - allowed
        if extra:
            raise ValueError(f"interaction {self.variant!r} got unknown parameters {sorted(extra)}")
        if self.variant == "gaussian" and float(self.params.get("width", 1.0)) <= 0:
            raise ValueError("gaussian width must be positive")

    @classmethod
    def zero(cls) -> InteractionSpec:
        return cls("zero")

    @classmethod
    def gaussian(cls, amplitude: float, width: float) -> InteractionSpec:
        return cls("gaussian", {"amplitude": float(amplitude), "width": float(width)})

    @classmethod
    def even_polynomial(cls, coefficients) -> InteractionSpec:
        return cls("even_polynomial", {"coefficients": [float(c) for c in coefficients]})

    @property
    def is_zero(self) -> bool:
        return self.variant == "zero"

    def to_dict(self) -> dict[str, Any]:
        return {"variant": self.variant, **self.params}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> InteractionSpec:
        data = dict(data)
        variant = data.pop("variant", "zero")
        return cls(variant, data)

    def evaluate(self, x: Any) -> Evaluation:
        x = _as_points(x)
        dim = x.shape[-1]
        batch = x.shape[:-1]
        if self.variant == "zero":
            return Evaluation(np.zeros(batch), np.zeros_like(x), np.zeros(batch + (dim, dim)))
        s = np.einsum("...i,...i->...", x, x)
        if self.variant == "gaussian":
            beta = float(self.params.get("amplitude", 1.0))
            sigma2 = float(self.params.get("width", 1.0)) ** 2
            e = beta * np.exp(-s / sigma2)
            return _radial(x, e, -e / sigma2, e / sigma2**2)
        return _radial(x, *_power_series(s, tuple(self.params.get("coefficients", ()))))


def potential_eval(spec: PotentialSpec, x: Any) -> dict[str, np.ndarray]:
    ev = spec.evaluate(x)
    return {"value": ev.value, "gradient": ev.gradient, "hessian": ev.hessian, "laplacian": ev.laplacian}


def interaction_eval(spec: InteractionSpec, x: Any) -> dict[str, np.ndarray]:
    ev = spec.evaluate(x)
    return {"value": ev.value, "gradient": ev.gradient, "hessian": ev.hessian}


@dataclass(frozen=True)
class ProblemSpec:
    """Dimension plus the F and V families defining H_N."""

    dim: int = 2
    interaction: InteractionSpec = field(default_factory=InteractionSpec)
    potential: PotentialSpec = field(default_factory=PotentialSpec)

    def __post_init__(self) -> None:
        if int(self.dim) < 2:
            raise ValueError("dimension must be >= 2")

    @property
    def c_d(self) -> float:
        return coulomb_constant(self.dim)

    def to_dict(self) -> dict[str, Any]:
        return {
            "dim": self.dim,
            "interaction": self.interaction.to_dict(),
            "potential": self.potential.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ProblemSpec:
        extra = set(data) - {"dim", "interaction", "potential"}
        if extra:
            raise ValueError(f"unknown problem keys {sorted(extra)}")
        return cls(
            dim=int(data.get("dim", 2)),
            interaction=InteractionSpec.from_dict(data.get("interaction", {"variant": "zero"})),
            potential=PotentialSpec.from_dict(data.get("potential", {"variant": "zero"})),
        )
