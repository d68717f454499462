"""Smooth compactly supported vector fields used as test functions.

Each field equals a polynomial profile on the plateau ``|x - center| <= radius/2``
and is smoothly cut to zero at ``|x - center| = radius``. Values and
Jacobians are analytic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

VARIANTS = ("constant_bump", "coordinate_bump", "rotational_bump")


def _psi(t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """exp(-1/t) for t > 0 (else 0) and its derivative."""
    pos = t > 0
    safe = np.where(pos, t, 1.0)
    val = np.where(pos, np.exp(-1.0 / safe), 0.0)
    return val, np.where(pos, val / safe**2, 0.0)


def smooth_step(t: Any) -> tuple[np.ndarray, np.ndarray]:
    """C-infinity step: 0 for t <= 0, 1 for t >= 1; returns (value, derivative)."""
    t = np.asarray(t, dtype=float)
    a, da = _psi(t)
    b, db = _psi(1.0 - t)
    den = a + b
    return a / den, (da * b + a * db) / den**2


def cutoff(u: np.ndarray, radius: float) -> tuple[np.ndarray, np.ndarray]:
    """Radial cutoff chi(|u|) and its gradient; chi = 1 on |u| <= R/2, 0 on |u| >= R."""
    rho = np.sqrt(np.einsum("...i,...i->...", u, u))
    t = 2.0 * (radius - rho) / radius
    val, dval = smooth_step(t)
    safe = np.where(rho > 0, rho, 1.0)
    grad = (dval * (-2.0 / radius) / safe)[..., None] * u
    return val, np.where((rho > 0)[..., None], grad, 0.0)


@dataclass(frozen=True)
class TestField:
    """A bump vector field phi with analytic Jacobian.

    ``constant_bump`` uses ``vector``; ``coordinate_bump`` has component k equal
    to ``coefficients[k] * u1**a_k * u2**b_k`` with ``(a_k, b_k) = exponents[k]``
    and u = x - center; ``rotational_bump`` is (-u2, u1).
    """

    __test__ = False  # keep pytest from collecting this class

    variant: str
    center: tuple[float, ...] = (0.0, 0.0)
    radius: float = 1.0
    vector: tuple[float, ...] = (1.0, 0.0)
    exponents: tuple[tuple[int, int], ...] = ((1, 0), (0, 0))
    coefficients: tuple[float, ...] = (1.0, 0.0)

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown test field variant {self.variant!r}; expected one of {VARIANTS}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "vector", tuple(float(c) for c in self.vector))
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
        object.__setattr__(self, "exponents", tuple((int(a), int(b)) for a, b in self.exponents))
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if self.variant == "constant_bump" and len(self.vector) != len(self.center):
            raise ValueError("vector and center must have the same length")
        if self.variant != "constant_bump" and len(self.center) != 2:
            raise ValueError(f"{self.variant} is only defined in dimension 2")
        if self.variant == "coordinate_bump":
            if len(self.exponents) != 2 or len(self.coefficients) != 2:
                raise ValueError("coordinate_bump needs two exponent pairs and two coefficients")
            if any(a < 0 or b < 0 for a, b in self.exponents):
                raise ValueError("exponents must be nonnegative")

    @classmethod
    def constant(cls, vector, center=(0.0, 0.0), radius: float = 1.0) -> TestField:
        return cls("constant_bump", tuple(center), radius, vector=tuple(vector))

    @classmethod
    def coordinate(cls, exponents, coefficients=(1.0, 0.0), center=(0.0, 0.0), radius: float = 1.0) -> TestField:
        return cls("coordinate_bump", tuple(center), radius, exponents=tuple(exponents), coefficients=tuple(coefficients))

    @classmethod
    def rotational(cls, center=(0.0, 0.0), radius: float = 1.0) -> TestField:
        return cls("rotational_bump", tuple(center), radius)

    @property
    def dim(self) -> int:
        return len(self.center)

    def _profile(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Polynomial profile P(u) and its Jacobian DP[k, l] = d_l P^k."""
        batch = u.shape[:-1]
        dim = self.dim
        if self.variant == "constant_bump":
            p = np.broadcast_to(np.asarray(self.vector), batch + (dim,)).copy()
            return p, np.zeros(batch + (dim, dim))
        u1, u2 = u[..., 0], u[..., 1]
        if self.variant == "rotational_bump":
            p = np.stack([-u2, u1], axis=-1)
            jac = np.broadcast_to(np.array([[0.0, -1.0], [1.0, 0.0]]), batch + (2, 2)).copy()
            return p, jac
        comps, rows = [], []
        for (a, b), c in zip(self.exponents, self.coefficients):
            comps.append(c * u1**a * u2**b)
            d1 = c * a * u1 ** max(a - 1, 0) * u2**b
            d2 = c * b * u1**a * u2 ** max(b - 1, 0)
            rows.append(np.stack([d1, d2], axis=-1))
        return np.stack(comps, axis=-1), np.stack(rows, axis=-2)

    def value(self, x: Any) -> np.ndarray:
        u = np.asarray(x, dtype=float) - np.asarray(self.center)
        chi, _ = cutoff(u, self.radius)
        p, _ = self._profile(u)
        return chi[..., None] * p

    def jacobian(self, x: Any) -> np.ndarray:
        """D phi with entry [k, l] = d phi^k / d x_l."""
        u = np.asarray(x, dtype=float) - np.asarray(self.center)
        chi, dchi = cutoff(u, self.radius)
        p, dp = self._profile(u)
        return chi[..., None, None] * dp + p[..., :, None] * dchi[..., None, :]

    def sup_norms(self) -> tuple[float, float]:
        """Sup of |phi| and of the Frobenius norm of D phi, sampled on a polar grid."""
        rho = self.radius * np.linspace(0.0, 1.0, 65)
        theta = np.linspace(0.0, 2.0 * np.pi, 128, endpoint=False)
        if self.dim == 2:
            pts = np.stack(np.broadcast_arrays(rho[:, None] * np.cos(theta), rho[:, None] * np.sin(theta)), axis=-1)
        else:
            pts = np.zeros((len(rho), 1, self.dim))
            pts[..., 0] = rho[:, None]
        pts = pts + np.asarray(self.center)
        val = np.sqrt(np.einsum("...i,...i->...", *(2 * [self.value(pts)])))
        jac = np.sqrt(np.einsum("...ij,...ij->...", *(2 * [self.jacobian(pts)])))
        return float(val.max()), float(jac.max())

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"variant": self.variant, "center": list(self.center), "radius": self.radius}
        if self.variant == "constant_bump":
            out["vector"] = list(self.vector)
        elif self.variant == "coordinate_bump":
            out["exponents"] = [list(e) for e in self.exponents]
            out["coefficients"] = list(self.coefficients)
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> TestField:
        allowed = {"variant", "center", "radius", "vector", "exponents", "coefficients"}
        extra = set(data) - allowed
        if extra:
            raise ValueError(f"unknown test field keys {sorted(extra)}")
        if "variant" not in data:
            raise ValueError("test field needs a 'variant'")
        kwargs = {k: v for k, v in data.items() if k != "variant"}
        for key in ("center", "vector", "coefficients"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        if "exponents" in kwargs:
            kwargs["exponents"] = tuple(tuple(e) for e in kwargs["exponents"])
        return cls(data["variant"], **kwargs)
