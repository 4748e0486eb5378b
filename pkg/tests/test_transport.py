import math

import numpy as np
import pytest

from dflow.geometry import DomainError
from dflow.lagrangian import CostFamily, cost_table
from dflow.pde import ContractError, DiscreteMeasure, ScalarField, SpaceTimeGrid
from dflow.scenarios import growing_circle, static_flat_circle
from dflow.transport import (
    continuity_potential,
    continuity_residual,
    entropy,
    kantorovich,
    metric_derivative,
    W_cost,
    smooth_curve,
    wasserstein_geodesic,
)


def test_two_deltas_cost_entry():
    flow = static_flat_circle()
    grid = SpaceTimeGrid(flow, 16)
    table = cost_table(flow, CostFamily("L0"), 0.0, 0.5, grid)
    sol = kantorovich(DiscreteMeasure.delta(grid, 0.0, 1), DiscreteMeasure.delta(grid, 0.5, 6), table)
    assert sol.value == pytest.approx(table.values[1, 6])


def test_identical_measures_cost_nothing_and_duals_are_feasible():
    rng = np.random.default_rng(1)
    a = rng.dirichlet(np.ones(10))
    C = rng.uniform(0, 1, (10, 10))
    np.fill_diagonal(C, 0.0)
    C = C + C.T
    sol = kantorovich(a, a, C)
    assert sol.value == pytest.approx(0.0, abs=1e-12)
    assert np.all(sol.phi[:, None] + sol.psi[None, :] <= C + 1e-12)
    assert sol.marginal_error <= 1e-10


def test_zero_mass_in_heaviest_column_is_feasible():
    # totals differing by rounding with zero entries used to make the LP infeasible
    a = np.array([0.5, 0.5 - 1e-16, 0.0])
    b = np.array([0.0, 0.25, 0.75])
    sol = kantorovich(a, b, np.arange(9.0).reshape(3, 3))
    assert sol.gap <= 1e-12


def test_mass_mismatch_rejected():
    with pytest.raises(ContractError):
        kantorovich(np.array([0.5, 0.5]), np.array([0.5, 0.4]), np.zeros((2, 2)))


def test_antipodal_midpoint_is_a_delta_on_a_midpoint_node():
    flow = static_flat_circle()
    grid = SpaceTimeGrid(flow, 16)
    mu0, mu1 = DiscreteMeasure.delta(grid, 0.0, 0), DiscreteMeasure.delta(grid, 0.5, 8)
    mid = wasserstein_geodesic(mu0, mu1, flow, CostFamily("L0"), 0.0, 0.5, [0.25])[0]
    assert mid.p.max() == pytest.approx(1.0)
    assert int(np.argmax(mid.p)) in (4, 12)


def test_geodesic_midpoint_splits_the_cost():
    flow = static_flat_circle()
    fam = CostFamily("L0")
    gaps = []
    for n in (32, 64, 128):
        grid = SpaceTimeGrid(flow, n)
        mu0 = DiscreteMeasure.from_density(grid, 0.0, 1 + 0.5 * np.sin(grid.theta))
        mu1 = DiscreteMeasure.from_density(grid, 0.5, 1 + 0.5 * np.cos(2 * grid.theta))
        mid = wasserstein_geodesic(mu0, mu1, flow, fam, 0.0, 0.5, [0.25])[0]
        again = wasserstein_geodesic(mu0, mu1, flow, fam, 0.0, 0.5, [0.25])[0]
        assert np.array_equal(mid.p, again.p)
        assert mid.p.sum() == pytest.approx(1.0, abs=1e-12)
        total = W_cost(mu0, mu1, flow, fam, 0.0, 0.5)
        split = W_cost(mu0, mid, flow, fam, 0.0, 0.25) + W_cost(mid, mu1, flow, fam, 0.25, 0.5)
        # nodal rounding of the midpoint can only add cost; the excess vanishes with the grid
        assert split >= total - 1e-10
        gaps.append((split - total) / total)
    assert gaps[0] > gaps[1] > gaps[2]


def test_entropy_of_uniform_circle():
    grid = SpaceTimeGrid(static_flat_circle(), 20)
    assert entropy(DiscreteMeasure.uniform(grid, 0.0)) == pytest.approx(-math.log(2 * math.pi))


def test_continuity_potential_solves_the_equation():
    flow = growing_circle()
    grid = SpaceTimeGrid(flow, 64)
    t = 0.4
    rho = ScalarField(grid, t, 1 + 0.3 * np.cos(grid.theta), "generic")
    S = grid.S_values(t)
    # consistent data: d rho/dt - S rho must integrate to zero
    drho = ScalarField(grid, t, S * rho.values + 0.2 * np.sin(2 * grid.theta), "generic")
    phi = continuity_potential(rho, drho, flow, t)
    assert continuity_residual(rho, drho, phi, flow, t) <= 1e-10
    with pytest.raises(ValueError):
        continuity_potential(rho, drho.with_values(drho.values + 1.0), flow, t)


def test_smoothing_errors():
    flow = static_flat_circle()
    grid = SpaceTimeGrid(flow, 8)
    curve = [DiscreteMeasure.uniform(grid, 0.1)]
    with pytest.raises(DomainError):
        smooth_curve(curve, flow, -0.1)
    with pytest.raises(DomainError):
        smooth_curve(curve, flow, 0.5)
    with pytest.raises(ValueError):
        metric_derivative(curve, [0.1], flow, CostFamily("L0"), 0.1)
