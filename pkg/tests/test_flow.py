import math
import time

import numpy as np
import pytest
import torch

from HOSSNET.hossnet.core import ChannelKind, FieldFrame, FlowField, SampleSequence
from HOSSNET.hossnet.flow import (
    FlowSolverParams,
    angle_loss,
    estimate_flow,
    flow_angle_loss,
    flow_objective,
    horn_schunck,
    optical_flow_loss,
    optical_flow_regularizer,
    spatial_derivatives,
)


def _pattern(size: int = 16) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    return np.sin(2 * np.pi * xx / size) + 0.5 * np.cos(2 * np.pi * yy / size)


def _shifted_pair(size: int = 16):
    a = _pattern(size)
    b = np.roll(a, 1, axis=1)
    return torch.as_tensor(a), torch.as_tensor(b)


def _frames(a: torch.Tensor, b: torch.Tensor):
    return (
        FieldFrame(a.numpy(), ChannelKind.FRACTURE_DAMAGE, 0),
        FieldFrame(b.numpy(), ChannelKind.FRACTURE_DAMAGE, 1),
    )


def _tensors(flow: FlowField):
    return torch.tensor(np.array(flow.u)), torch.tensor(np.array(flow.v))


def _smoothness(u: torch.Tensor, v: torch.Tensor) -> float:
    zeros = torch.zeros_like(u)
    return float(flow_objective(zeros, zeros, u, v, FlowSolverParams(smoothness=1.0)))


def _brute_force_minimiser(a, b, params):
    """Exact minimiser of the quadratic objective from its Hessian."""
    n = a.numel()

    def objective(x):
        return flow_objective(a, b, x[:n].reshape(a.shape), x[n:].reshape(a.shape), params)

    x0 = torch.zeros(2 * n, dtype=torch.float64, requires_grad=True)
    gradient = torch.autograd.grad(objective(x0), x0)[0]
    hessian = torch.autograd.functional.hessian(objective, x0.detach())
    x_star = -torch.linalg.solve(hessian, gradient)
    return x_star[:n].reshape(a.shape), x_star[n:].reshape(a.shape), float(objective(x_star))


def test_solver_params_validation():
    with pytest.raises(ValueError):
        FlowSolverParams(smoothness=0.0)
    with pytest.raises(ValueError):
        FlowSolverParams(smoothness=float("inf"))
    with pytest.raises(ValueError):
        FlowSolverParams(n_iterations=0)
    with pytest.raises(ValueError):
        FlowSolverParams(derivative_scheme="sobel")
    with pytest.raises(ValueError):
        FlowSolverParams(method="sor")
    with pytest.raises(ValueError):
        FlowSolverParams(tolerance=-1.0)
    with pytest.raises(ValueError):
        FlowSolverParams(n_iterations=50, max_iterations=10)
    assert FlowSolverParams().method == "jacobi"


def test_spatial_derivatives_of_a_ramp():
    ramp = torch.arange(5, dtype=torch.float64).repeat(3, 1)
    gx, gy = spatial_derivatives(ramp, "central")
    assert torch.allclose(gx[:, 1:-1], torch.ones(3, 3, dtype=torch.float64))
    assert torch.all(gy == 0)
    gx, _ = spatial_derivatives(ramp, "forward")
    assert torch.all(gx[:, :-1] == 1)
    assert torch.all(gx[:, -1] == 0)


@pytest.mark.parametrize(
    "params", [FlowSolverParams(), FlowSolverParams(method="gauss_seidel")], ids=["jacobi", "gauss_seidel"]
)
def test_estimate_flow_matches_the_brute_force_minimiser(params):
    a, b = _shifted_pair()
    start = time.perf_counter()
    flow = estimate_flow(*_frames(a, b), params)
    elapsed = time.perf_counter() - start

    u, v = _tensors(flow)
    solved = float(flow_objective(a, b, u, v, params))
    u_star, v_star, optimum = _brute_force_minimiser(a, b, params)

    assert solved >= optimum - 1e-9
    assert solved - optimum <= 1e-3
    assert float((u - u_star).abs().mean()) <= 0.15
    assert float((v - v_star).abs().mean()) <= 0.15
    assert elapsed < 10.0


def test_rightward_shift_gives_unit_rightward_flow():
    a, b = _shifted_pair()
    flow = estimate_flow(*_frames(a, b))
    interior = (slice(4, -4), slice(4, -4))
    assert float(np.mean(np.abs(flow.u[interior] - 1.0))) <= 0.15
    assert float(np.mean(np.abs(flow.v[interior]))) <= 0.15
    assert float(flow.u.mean()) > 0.5


def test_sweep_cap_matches_a_fixed_number_of_sweeps():
    a, b = _shifted_pair(8)
    params = FlowSolverParams(n_iterations=7, max_iterations=7)
    flow = estimate_flow(*_frames(a, b), params)
    u, v = horn_schunck(a, b, params)
    np.testing.assert_array_equal(flow.u, u.numpy())
    np.testing.assert_array_equal(flow.v, v.numpy())


@pytest.mark.parametrize("method", ["jacobi", "gauss_seidel"])
def test_objective_never_increases_with_more_sweeps(method):
    rng = np.random.default_rng(0)
    a = torch.as_tensor(rng.random((8, 8)))
    b = torch.as_tensor(rng.random((8, 8)))
    values = []
    for n in range(1, 12):
        params = FlowSolverParams(smoothness=0.7, n_iterations=n, method=method)
        u, v = horn_schunck(a, b, params)
        values.append(float(flow_objective(a, b, u, v, params)))
    assert all(later <= earlier + 1e-12 for earlier, later in zip(values, values[1:]))
    zero = float(flow_objective(a, b, torch.zeros_like(a), torch.zeros_like(a), params))
    assert values[0] <= zero


def test_larger_smoothness_gives_smoother_flow():
    a, b = _shifted_pair(8)
    previous = math.inf
    for lam in (0.25, 0.5, 1.0, 2.0):
        flow = estimate_flow(*_frames(a, b), FlowSolverParams(smoothness=lam, tolerance=1e-12))
        current = _smoothness(*_tensors(flow))
        assert current <= previous * (1 + 1e-6) + 1e-9
        previous = current


def test_solver_rejects_bad_frames():
    with pytest.raises(ValueError):
        horn_schunck(torch.zeros(4, 4), torch.zeros(4, 5), FlowSolverParams())
    with pytest.raises(ValueError):
        horn_schunck(torch.zeros(1, 4), torch.zeros(1, 4), FlowSolverParams())


def test_identical_frames_have_zero_flow():
    frame = FieldFrame(_pattern(8), ChannelKind.FRACTURE_DAMAGE, 0)
    flow = estimate_flow(frame, frame)
    assert np.all(flow.u == 0)
    assert np.all(flow.v == 0)


def test_estimate_flow_needs_one_channel():
    frame = FieldFrame(np.zeros((4, 4, 3)), ChannelKind.CAUCHY_STRESS, 0)
    with pytest.raises(ValueError):
        estimate_flow(frame, frame)


def _field(rng, shape=(5, 5)):
    return rng.normal(size=shape) + 2.0, rng.normal(size=shape) + 2.0


def test_angle_loss_of_identical_flows_is_zero():
    u, v = _field(np.random.default_rng(1))
    flow = FlowField(u, v)
    assert flow_angle_loss(flow, flow) < 1e-12


def test_angle_loss_of_orthogonal_and_opposite_flows():
    ones, zeros = np.ones((3, 4)), np.zeros((3, 4))
    east = FlowField(ones, zeros)
    north = FlowField(zeros, ones)
    west = FlowField(-ones, zeros)
    assert flow_angle_loss(east, north) == pytest.approx(12 * (math.pi / 2) ** 2, rel=1e-12)
    assert flow_angle_loss(east, west) == pytest.approx(12 * math.pi**2, rel=1e-12)


def test_angle_loss_is_scale_free_and_symmetric():
    rng = np.random.default_rng(2)
    a = FlowField(*_field(rng))
    b = FlowField(*_field(rng))
    scaled = FlowField(3.7 * b.u, 3.7 * b.v)
    assert flow_angle_loss(a, scaled) == pytest.approx(flow_angle_loss(a, b), abs=1e-9)
    assert flow_angle_loss(b, a) == pytest.approx(flow_angle_loss(a, b), abs=1e-12)


def test_angle_loss_skips_vectors_below_the_floor():
    u_obs = torch.tensor([[1.0, 1e-9]], dtype=torch.float64)
    v_obs = torch.zeros_like(u_obs)
    u_pred = torch.tensor([[-1.0, -1.0]], dtype=torch.float64)
    v_pred = torch.zeros_like(u_pred)
    loss = angle_loss(u_obs, v_obs, u_pred, v_pred, magnitude_floor=1e-6)
    assert float(loss) == pytest.approx(math.pi**2)

    region = torch.tensor([[False, True]])
    assert float(angle_loss(u_obs, v_obs, u_pred, v_pred, 1e-6, region)) == 0.0
    with pytest.raises(ValueError):
        angle_loss(u_obs, v_obs, u_pred, v_pred, magnitude_floor=0.0)


def test_angle_loss_gradients():
    rng = np.random.default_rng(3)
    u_obs, v_obs = (torch.as_tensor(a) for a in _field(rng, (3, 3)))
    u_pred, v_pred = (torch.as_tensor(a).requires_grad_() for a in _field(rng, (3, 3)))
    assert torch.autograd.gradcheck(
        lambda u, v: angle_loss(u_obs, v_obs, u, v), (u_pred, v_pred)
    )


def test_optical_flow_loss_gradients():
    rng = np.random.default_rng(4)
    obs = torch.as_tensor(rng.random((3, 6, 6)))
    pred = torch.as_tensor(rng.random((3, 6, 6)), dtype=torch.float64).requires_grad_()
    params = FlowSolverParams(n_iterations=5)
    assert torch.autograd.gradcheck(
        lambda p: optical_flow_loss(p, obs, params), (pred,), atol=1e-5, rtol=1e-4
    )


def test_optical_flow_loss_reduces_leading_dims():
    rng = np.random.default_rng(5)
    pred = torch.as_tensor(rng.random((2, 4, 6, 6)))
    obs = torch.as_tensor(rng.random((2, 4, 6, 6)))
    loss = optical_flow_loss(pred, obs, FlowSolverParams(n_iterations=5))
    assert loss.shape == (2,)
    assert torch.all(loss >= 0)
    with pytest.raises(ValueError):
        optical_flow_loss(pred[:, :1], obs[:, :1], FlowSolverParams())


def test_regularizer_on_sequences():
    rng = np.random.default_rng(6)
    seq = SampleSequence.from_array("a", rng.random((4, 6, 6)), ChannelKind.FRACTURE_DAMAGE)
    params = FlowSolverParams(n_iterations=20)
    assert optical_flow_regularizer(seq, seq, params) < 1e-10

    still = SampleSequence.from_array("a", np.zeros((4, 6, 6)), ChannelKind.FRACTURE_DAMAGE)
    assert optical_flow_regularizer(still, seq, params) == 0.0

    single = SampleSequence.from_array("a", np.zeros((1, 6, 6)), ChannelKind.FRACTURE_DAMAGE)
    with pytest.raises(ValueError):
        optical_flow_regularizer(single, single, params)
