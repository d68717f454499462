from __future__ import annotations

import math

import numpy as np
import pytest

from conftest import PAIR_A, signed_configuration
from coulombcrit import Configuration, InteractionSpec, PotentialSpec, ProblemSpec
from coulombcrit.diagnostics import (
    divergence_probe,
    factorization_split,
    flux_around,
    flux_expected,
    flux_integral,
    fragment,
    inputs_hash,
    limit_stability_form,
    stability_check,
    vorticity_residual,
)
from coulombcrit.kernel import coulomb_hess
from coulombcrit.solver import solve_critical
from coulombcrit.system import ProximityError, hamiltonian_hess, residuals
from coulombcrit.testfields import TestField

HARMONIC = ProblemSpec(2, potential=PotentialSpec.quadratic(1.0))
FREE = ProblemSpec(2)


def test_flux_examples(critical_pair):
    res = flux_around(critical_pair, HARMONIC, 0, delta=PAIR_A / 2)
    assert np.abs(res.computed).max() <= 1e-8
    assert res.delta_used < critical_pair.min_gap
    noncritical = Configuration([[0.5, 0.0], [-0.5, 0.0]], [1.0, 1.0])
    np.testing.assert_allclose(flux_integral(noncritical, HARMONIC, (0.5, 0.0), 0.25), [math.pi, 0.0], atol=1e-7)
    np.testing.assert_allclose(flux_expected(noncritical, HARMONIC, 0), [math.pi, 0.0], atol=1e-14)
    assert np.abs(flux_integral(critical_pair, HARMONIC, (0.0, 0.0), 1.0)).max() <= 1e-8


def test_flux_expected_single_particle():
    cfg = Configuration([[1.0, 0.0]], [1.0])
    np.testing.assert_allclose(flux_expected(cfg, HARMONIC, 0), [8 * math.pi, 0.0])
    res = flux_around(cfg, HARMONIC, 0, delta=0.3)
    np.testing.assert_allclose(res.computed, res.expected, rtol=1e-10, atol=1e-12)


def test_flux_expected_is_scaled_residual(rich_spec):
    cfg = signed_configuration(np.random.default_rng(0), 5)
    r = residuals(cfg, rich_spec)
    for i in range(cfg.n):
        np.testing.assert_allclose(flux_expected(cfg, rich_spec, i), 4 * math.pi * cfg.charges[i] / cfg.total_charge * r[i])


@pytest.mark.parametrize("seed", range(5))
def test_flux_residual_identity_with_interaction(rich_spec, seed):
    cfg = signed_configuration(np.random.default_rng(100 + seed), 5)
    for i in range(cfg.n):
        res = flux_around(cfg, rich_spec, i)
        assert res.error <= 1e-7 * (1 + np.abs(res.expected).max())
        half = flux_around(cfg, rich_spec, i, delta=res.delta_used / 2)
        assert np.abs(half.computed - res.computed).max() <= 1e-9 * (1 + np.abs(res.expected).max())


def test_enclosing_flux_sums_particle_fluxes(rich_spec):
    cfg = signed_configuration(np.random.default_rng(21), 5)
    total = sum(flux_expected(cfg, rich_spec, i) for i in range(cfg.n))
    big = flux_integral(cfg, rich_spec, (0.0, 0.0), 3.0, nodes=1024)
    np.testing.assert_allclose(big, total, atol=1e-8 * (1 + np.abs(total).max()))


def test_flux_errors(critical_pair):
    with pytest.raises(ProximityError):
        flux_integral(critical_pair, HARMONIC, (0.0, 0.0), PAIR_A)
    with pytest.raises(ValueError):
        flux_integral(critical_pair, HARMONIC, (0.0, 0.0), 1.0, nodes=8)
    with pytest.raises(ValueError):
        flux_around(critical_pair, HARMONIC, 0, delta=1.0)


def test_divergence_probe_examples():
    origin = Configuration([[0.0, 0.0]], [1.0])
    assert np.abs(divergence_probe(origin, FREE, (1.0, 0.0), 1e-3)).max() <= 1e-5
    with pytest.raises(ProximityError):
        divergence_probe(origin, FREE, (0.005, 0.0), 1e-3)


def test_divergence_probe_second_order(rich_spec):
    cfg = signed_configuration(np.random.default_rng(3), 5)
    x = np.array([1.4, 1.3])
    a = np.abs(divergence_probe(cfg, rich_spec, x, 1e-2)).max()
    b = np.abs(divergence_probe(cfg, rich_spec, x, 5e-3)).max()
    assert 3.5 <= a / b <= 4.5


def test_factorization_examples():
    square = TestField.coordinate(((2, 0), (0, 0)), (1.0, 0.0), radius=5.0)
    out = factorization_split((1.0, 0.0), (0.0, 0.0), square)
    assert out["lhs"] == pytest.approx(-1.0, abs=1e-14)
    assert out["rhs"] == pytest.approx(-1.0, abs=1e-12)
    swapped = factorization_split((0.0, 0.0), (1.0, 0.0), square)
    assert swapped["lhs"] == pytest.approx(out["lhs"], abs=1e-14)
    assert swapped["rhs"] == pytest.approx(out["rhs"], abs=1e-12)
    const = factorization_split((0.2, 0.1), (-0.3, 0.4), TestField.constant((1.0, 2.0), radius=5.0))
    assert const["lhs"] == 0.0 and abs(const["rhs"]) <= 1e-15
    with pytest.raises(ValueError):
        factorization_split((0.1, 0.1), (0.1, 0.1), square)


def test_factorization_across_cutoff_transition():
    phi = TestField.rotational(center=(0.1, 0.0), radius=0.8)
    rng = np.random.default_rng(4)
    for _ in range(30):
        x, y = rng.uniform(-1, 1, (2, 2))
        out = factorization_split(x, y, phi)
        assert abs(out["lhs"] - out["rhs"]) <= 1e-9 * (1 + abs(out["lhs"]))


def test_vorticity_examples():
    cfg = Configuration([[1.0, 0.0]], [1.0])
    assert vorticity_residual(cfg, HARMONIC, TestField.constant((1.0, 0.0), radius=4.0)) == pytest.approx(2.0)


def test_vorticity_direct_loop(rich_spec):
    cfg = signed_configuration(np.random.default_rng(30), 6)
    phi = TestField.coordinate(((1, 1), (0, 2)), (0.5, -1.0), radius=2.0)
    x, m, vals = cfg.positions, cfg.weights, phi.value(cfg.positions)
    total = 0.0
    for i in range(cfg.n):
        total += m[i] * rich_spec.potential.evaluate(x[i]).gradient @ vals[i]
        for j in range(cfg.n):
            if i != j:
                diff = x[i] - x[j]
                force = -diff / (diff @ diff) + rich_spec.interaction.evaluate(diff).gradient
                total += 0.5 * m[i] * m[j] * force @ (vals[i] - vals[j])
    assert vorticity_residual(cfg, rich_spec, phi) == pytest.approx(total, rel=1e-12, abs=1e-14)


def test_vorticity_vanishes_at_critical_point(critical_pair):
    for phi in (TestField.rotational(radius=2.0), TestField.coordinate(((1, 0), (0, 1)), (1.0, 1.0), center=(0.3, 0.0))):
        assert abs(vorticity_residual(critical_pair, HARMONIC, phi)) <= 1e-8 * critical_pair.scale


def test_stability_single_particle():
    report = stability_check(Configuration([[0.0, 0.0]], [1.0]), HARMONIC, "literal")
    assert report.min_eigenvalue == pytest.approx(2.0)
    assert report.passed
    assert stability_check(Configuration([[0.0, 0.0]], [1.0]), HARMONIC).min_eigenvalue == pytest.approx(2.0)


def test_stability_critical_pair(critical_pair):
    report = stability_check(critical_pair, HARMONIC)
    assert report.min_eigenvalue >= -1e-8
    assert report.to_dict()["near_zero_modes"] == 1
    assert report.passed


def test_literal_and_grouped_coincide_without_interaction():
    cfg = signed_configuration(np.random.default_rng(40), 6)
    lit = stability_check(cfg, HARMONIC, "literal")
    grp = stability_check(cfg, HARMONIC, "grouped")
    assert lit.min_eigenvalue == grp.min_eigenvalue
    np.testing.assert_array_equal(lit.site_minima, grp.site_minima)


def test_stability_variants_brute_force(rich_spec):
    cfg = signed_configuration(np.random.default_rng(41), 5)
    x, d = cfg.positions, cfg.charges
    hf = lambda v: rich_spec.interaction.evaluate(v).hessian  # noqa: E731
    sites, literal_pairs, grouped_pairs = [], [], []
    for i in range(cfg.n):
        s = d[i] * rich_spec.potential.evaluate(x[i]).hessian
        for j in range(cfg.n):
            if j != i:
                s = s + d[i] * d[j] * (coulomb_hess(x[i] - x[j], 2) + hf(x[i] - x[j]))
                if j > i:
                    literal_pairs.append(np.linalg.eigvalsh(d[i] * d[j] * coulomb_hess(x[i] - x[j], 2) + hf(x[i] - x[j]))[0])
                    grouped_pairs.append(np.linalg.eigvalsh(d[i] * d[j] * (coulomb_hess(x[i] - x[j], 2) + hf(x[i] - x[j])))[0])
        sites.append(np.linalg.eigvalsh(s)[0])
    lit = stability_check(cfg, rich_spec, "literal")
    grp = stability_check(cfg, rich_spec, "grouped")
    np.testing.assert_allclose(lit.site_minima, sites, rtol=1e-12)
    assert lit.pair_minimum == pytest.approx(min(literal_pairs), rel=1e-12)
    assert grp.pair_minimum == pytest.approx(min(grouped_pairs), rel=1e-12)
    full = stability_check(cfg, rich_spec)
    assert full.min_eigenvalue == pytest.approx(np.linalg.eigvalsh(hamiltonian_hess(cfg, rich_spec))[0], rel=1e-12)


def test_pair_condition_fails_without_interaction(critical_pair):
    # D^2 g has eigenvalues +-1/|X|^2, so every pair test is indefinite when F = 0.
    report = stability_check(critical_pair, HARMONIC, "literal")
    assert report.pair_minimum == pytest.approx(-1.0 / (2 * PAIR_A) ** 2)
    assert not report.passed


def test_stability_unknown_variant(critical_pair):
    with pytest.raises(ValueError):
        stability_check(critical_pair, HARMONIC, "diagonal")


def test_limit_form_constant_field_vanishes():
    cfg = signed_configuration(np.random.default_rng(50), 7)
    assert limit_stability_form(cfg, HARMONIC, TestField.constant((1.0, -2.0), radius=10.0)) == 0.0


def test_limit_form_direct_loop():
    spec = ProblemSpec(2, interaction=InteractionSpec.gaussian(0.4, 0.9))
    cfg = signed_configuration(np.random.default_rng(51), 6)
    phi = TestField.coordinate(((1, 1), (2, 0)), (1.0, 0.5), radius=1.5)
    x, m, vals = cfg.positions, cfg.weights, phi.value(cfg.positions)
    total = 0.0
    for i in range(cfg.n):
        for j in range(cfg.n):
            if i != j:
                diff, dphi = x[i] - x[j], vals[i] - vals[j]
                total += m[i] * m[j] * dphi @ (coulomb_hess(diff, 2) + spec.interaction.evaluate(diff).hessian) @ dphi
    assert limit_stability_form(cfg, spec, phi) == pytest.approx(total, rel=1e-12, abs=1e-15)


def test_fragments_are_stable():
    assert inputs_hash({"b": 1, "a": [1, 2]}) == inputs_hash({"a": [1, 2], "b": 1})
    frag = fragment("flux", {"n": 3}, {"error": 1e-12}, 1e-7, True)
    assert frag["passed"] is True and frag["check"] == "flux" and len(frag["inputs_hash"]) == 16


def test_solved_configuration_passes_all_identities(rich_spec):
    # The gaussian well has finite depth, so many signed starts run off to
    # infinity; this one reaches a genuine critical point.
    report = solve_critical(signed_configuration(np.random.default_rng(63), 4), rich_spec)
    assert report.converged
    cfg = report.final_config
    for i in range(cfg.n):
        assert np.abs(flux_around(cfg, rich_spec, i).computed).max() <= 1e-8
    phi = TestField.coordinate(((1, 0), (1, 1)), (1.0, 2.0), radius=3.0)
    assert abs(vorticity_residual(cfg, rich_spec, phi)) <= 1e-8 * cfg.scale
