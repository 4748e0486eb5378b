import numpy as np
import pytest

from dflow.geometry import FlowSpec
from dflow.pde import (
    ContractError,
    DiscreteMeasure,
    GridMismatchError,
    ScalarField,
    SpaceTimeGrid,
    adjoint_heat_propagate,
    bochner_residual_field,
    heat_propagate,
    laplacian_matrix,
    propagator_matrix,
)
from dflow.scenarios import growing_circle, static_flat_circle

WAVY = FlowSpec("circle_conformal", 1, (0.0, 1.0), {"u": "0.3*sin(theta)+0.2*t"}, T=1.5)


def test_heat_mode_decays_at_discrete_rate():
    flow = static_flat_circle()
    grid = SpaceTimeGrid(flow, 64, 0.01)
    v = ScalarField(grid, 0.0, np.sin(2 * grid.theta), "heat_slice")
    out = heat_propagate(v, flow, 0.0, 0.5)
    lam = 4 / grid.h**2 * np.sin(grid.h) ** 2  # eigenvalue of the 3-point Laplacian on mode 2
    assert np.allclose(out.values, np.exp(-lam * 0.5) * v.values, atol=1e-12)


def test_laplacian_second_order():
    errs = []
    for n in (32, 64, 128):
        grid = SpaceTimeGrid(WAVY, n)
        f = np.cos(grid.theta)
        u = 0.3 * np.sin(grid.theta) + 0.1
        uth = 0.3 * np.cos(grid.theta)
        exact = np.exp(-2 * u) * (-np.cos(grid.theta) + uth * np.sin(grid.theta))
        errs.append(np.max(np.abs(laplacian_matrix(grid, 0.5) @ f - exact)))
    assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5


def test_constants_preserved_and_mass_conserved():
    grid = SpaceTimeGrid(WAVY, 48, 0.02)
    P = propagator_matrix(grid, 0.1, 0.6)
    assert np.allclose(P @ np.ones(grid.n_x), 1.0, atol=1e-12)
    mu = DiscreteMeasure.from_density(grid, 0.6, 1 + 0.5 * np.cos(grid.theta))
    back = adjoint_heat_propagate(mu, WAVY, 0.6, 0.1)
    assert abs((P.T @ mu.p).sum() - 1) <= 1e-10
    assert back.t == pytest.approx(0.1)


def test_crank_nicolson_agrees_with_exponential():
    g1 = SpaceTimeGrid(WAVY, 48, 0.005)
    g2 = SpaceTimeGrid(WAVY, 48, 0.005, scheme="cn")
    f = np.sin(g1.theta) + 0.3 * np.cos(3 * g1.theta)
    a = heat_propagate(ScalarField(g1, 0.2, f, "heat_slice"), WAVY, 0.2, 0.4).values
    b = heat_propagate(ScalarField(g2, 0.2, f, "heat_slice"), WAVY, 0.2, 0.4).values
    assert np.max(np.abs(a - b)) < 1e-4


def test_contracts():
    grid = SpaceTimeGrid(growing_circle(), 16)
    v = ScalarField(grid, 0.2, np.ones(16), "generic")
    with pytest.raises(ContractError):
        bochner_residual_field(growing_circle(), v, 0.2, "L0", {})
    with pytest.raises(GridMismatchError):
        heat_propagate(ScalarField(grid, 0.2, np.ones(16), "heat_slice"), growing_circle(), 0.3, 0.5)
    with pytest.raises(ContractError):
        adjoint_heat_propagate(ScalarField(grid, 0.5, -np.ones(16), "generic"), grid.flow, 0.5, 0.2)
    with pytest.raises(ValueError):
        propagator_matrix(grid, 0.5, 0.2)


def test_homogeneous_grid_is_one_cell():
    flow = FlowSpec("round_sphere", 2, (0.0, 0.4), {"r2": "1-2*t"}, T=0.5)
    grid = SpaceTimeGrid(flow, 64)
    assert grid.n_x == 1
    assert grid.volume_weights(0.0)[0] == pytest.approx(4 * np.pi)
