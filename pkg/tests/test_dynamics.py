import math

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from ruot.analytic import ConstantField, LinearField
from ruot.dynamics import SigmaSchedule, TimeGrid, accumulate_action, integrate, sample_sde
from ruot.errors import ConfigError, NumericError, ShapeError, UsageError
from ruot.losses import GrowthPenalty
from ruot.nets import DTYPE, MlpSpec, mlp_init

ZERO_S = ConstantField(0.0, 1)


def test_exponential_growth_of_linear_flow():
    v = LinearField([[1.0]])
    traj = integrate(v, None, torch.ones(1, 1, dtype=DTYPE), TimeGrid(0.0, 1.0, 100))
    assert abs(float(traj.positions[-1, 0, 0]) - math.e) <= 1e-5


def test_zero_growth_keeps_uniform_weights():
    v = ConstantField([0.3, -0.1], 2)
    traj = integrate(v, None, torch.randn(5, 2, dtype=DTYPE), TimeGrid(0.0, 2.0, 7))
    assert torch.equal(traj.weights_at(-1).sum(), torch.tensor(1.0, dtype=DTYPE))


def test_constant_growth_scales_total_mass():
    c = 0.4
    g = ConstantField(c, 2)
    traj = integrate(ConstantField([0.0, 0.0], 2), g, torch.randn(8, 2, dtype=DTYPE), TimeGrid(0.0, 1.5, 30))
    assert abs(float(traj.weights_at(-1).sum()) - math.exp(c * 1.5)) < 1e-12


def test_default_and_explicit_initial_weights():
    x0 = torch.zeros(4, 1, dtype=DTYPE)
    traj = integrate(ConstantField([1.0], 1), None, x0, TimeGrid(0.0, 1.0, 2), log_w0=torch.zeros(4))
    assert torch.equal(traj.log_weights[0], torch.zeros(4, dtype=DTYPE))
    assert torch.allclose(integrate(ConstantField([1.0], 1), None, x0, TimeGrid(0.0, 1.0, 2)).weights_at(0),
                          torch.full((4,), 0.25, dtype=DTYPE))


def test_rk4_fourth_order_refinement():
    v = LinearField([[0.0, 1.0], [-1.0, 0.0]])  # rotation, exact solution known
    x0 = torch.tensor([[1.0, 0.0]], dtype=DTYPE)
    T = 3.0
    exact = torch.tensor([math.cos(T), -math.sin(T)], dtype=DTYPE)
    errs = [float((integrate(v, None, x0, TimeGrid(0.0, T, n)).positions[-1, 0] - exact).norm()) for n in (20, 40)]
    assert 8 <= errs[0] / errs[1] <= 32


def test_constant_velocity_action_closed_form():
    mu = [0.6, -0.8]
    traj = integrate(ConstantField(mu, 2), None, torch.randn(6, 2, dtype=DTYPE), TimeGrid(0.0, 2.0, 10))
    act = accumulate_action(traj, ConstantField(mu, 2), None, ZERO_S, SigmaSchedule(0.5), 1.0, GrowthPenalty())
    # 0.5 |mu|^2 T
    assert abs(float(act.detach()) - 0.5 * 1.0 * 2.0) < 1e-12
    assert traj.action.shape == (6,)


def test_constant_growth_action_closed_form():
    c, sigma, alpha = 0.3, 0.5, 2.0
    traj = integrate(ConstantField([0.0], 1), ConstantField(c, 1), torch.zeros(3, 1, dtype=DTYPE), TimeGrid(0.0, 1.0, 200))
    act = accumulate_action(
        traj, ConstantField([0.0], 1), ConstantField(c, 1), ZERO_S, SigmaSchedule(sigma), alpha, GrowthPenalty()
    )
    k = -0.5 * sigma**2 * c + alpha * c**2
    exact = k * (math.exp(c) - 1) / c
    assert abs(float(act.detach()) - exact) < 1e-5


def test_action_rejects_bad_trajectories():
    traj = integrate(ConstantField([0.0], 1), None, torch.zeros(2, 1, dtype=DTYPE), TimeGrid(0.0, 1.0, 4))
    traj.log_weights = None
    with pytest.raises(UsageError):
        accumulate_action(traj, ConstantField([0.0], 1), None, ZERO_S, SigmaSchedule(1.0), 1.0, GrowthPenalty())


def test_brownian_variance():
    sigma, T = 0.7, 2.0
    x0 = torch.zeros(20000, 1, dtype=DTYPE)
    traj = sample_sde(ConstantField([0.0], 1), ZERO_S, SigmaSchedule(sigma), x0, TimeGrid(0.0, T, 20), seed=3)
    var = float(traj.positions[-1].var())
    se = sigma**2 * T * math.sqrt(2 / 20000)
    assert abs(var - sigma**2 * T) < 4 * se


def test_sde_deterministic_per_seed():
    net = mlp_init(MlpSpec(3, (4,), 2), 0)
    s = mlp_init(MlpSpec(3, (4,), 1), 1)
    x0 = torch.randn(10, 2, dtype=DTYPE)
    grid = TimeGrid(0.0, 1.0, 5)
    a = sample_sde(net, s, SigmaSchedule(0.3), x0, grid, 5).positions
    b = sample_sde(net, s, SigmaSchedule(0.3), x0, grid, 5).positions
    c = sample_sde(net, s, SigmaSchedule(0.3), x0, grid, 6).positions
    assert torch.equal(a, b) and not torch.equal(a, c)


def test_nonfinite_state_raises_with_step():
    v = LinearField([[50.0]])
    with pytest.raises(NumericError, match="step"):
        integrate(v, None, torch.full((1, 1), 1e300, dtype=DTYPE), TimeGrid(0.0, 1.0, 10))


def test_grid_validation_and_lookup():
    with pytest.raises(ConfigError):
        TimeGrid(1.0, 1.0, 3)
    with pytest.raises(ConfigError):
        TimeGrid(0.0, 1.0, 0)
    g = TimeGrid.for_snapshots(5, 10)
    assert g.steps == 40 and g.index_of(3.0) == 30
    with pytest.raises(UsageError):
        g.index_of(0.05)
    with pytest.raises(ShapeError):
        integrate(ConstantField([0.0], 1), None, torch.zeros(3, dtype=DTYPE), g)


@given(n=st.integers(1, 30), T=st.floats(0.1, 3.0))
def test_grid_nodes_hit_endpoints(n, T):
    g = TimeGrid(0.0, T, n)
    nodes = g.nodes()
    assert len(nodes) == n + 1 and nodes[0] == 0.0 and abs(nodes[-1] - T) < 1e-12


@given(seed=st.integers(0, 1000))
def test_weights_positive_and_log_consistent(seed):
    gen = torch.Generator().manual_seed(seed)
    v = mlp_init(MlpSpec(3, (4,), 2), seed)
    g = mlp_init(MlpSpec(3, (4,), 1), seed + 1)
    traj = integrate(v, g, torch.randn(5, 2, generator=gen, dtype=DTYPE), TimeGrid(0.0, 1.0, 4))
    w = traj.weights_at(-1)
    assert (w > 0).all()
    assert np.allclose(np.log(w.detach().numpy()), traj.log_weights[-1].detach().numpy())
