import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from manirecon.data import ReconstructionParams, check_a1_a2
from manirecon.errors import InputError, SelectionError
from manirecon.heat_frontend import (
    FULL,
    SEPARATED,
    KernelSampleSet,
    assemble_bundle_from_kernel,
    corrupt_kernel,
    distances_from_kernel,
    select_t,
)
from manirecon.heat_kernel import heat_kernel_log_matrix
from manirecon.manifolds import FlatTorus, GeometryBounds, Region, sample_net

TORUS = FlatTorus(np.eye(2))
TIMES = [1e-5, 3e-5, 1e-4, 3e-4, 1e-3]


def nets(y_spacing=0.1, z_spacing=0.05, seed=0):
    y = sample_net(TORUS, Region("ball", np.array([0.5, 0.5]), 0.3), y_spacing, seed)
    z = sample_net(TORUS, "whole", z_spacing, seed + 1)
    return y, z


def test_noise_free_kernel_recovers_distances():
    y, z = nets()
    s = corrupt_kernel(TORUS, y, z, [1e-3], 0.0)
    est = distances_from_kernel(s, 1e-3)
    d = TORUS.pairwise(y, z)
    band = (d >= 0.1) & (d <= 0.4)
    rel = np.abs(est.values[band] - d[band]) / d[band]
    assert rel.max() < 1e-12


def test_worst_case_noise_sits_at_the_bound():
    y, z = nets(0.2, 0.2)
    t, sigma = 0.01, 0.01
    s = corrupt_kernel(TORUS, y, z, [t], sigma, "worst_case_sign", seed=3)
    exact = heat_kernel_log_matrix(TORUS, y, z, t)
    diff = np.abs(s.log_values[0] - exact)
    assert diff.max() <= sigma / t
    assert diff.min() == pytest.approx(1.0, abs=1e-12)
    # both signs occur
    signs = np.sign(s.log_values[0] - exact)
    assert (signs > 0).any() and (signs < 0).any()


@settings(max_examples=25, deadline=None)
@given(st.floats(1e-6, 1e-2), st.sampled_from(["worst_case_sign", "uniform"]), st.integers(0, 100))
def test_corrupted_kernel_stays_in_the_multiplicative_band(sigma, profile, seed):
    y, z = nets(0.25, 0.25)
    t = 3e-3
    s = corrupt_kernel(TORUS, y, z, [t], sigma, profile, seed=seed)
    exact = heat_kernel_log_matrix(TORUS, y, z, t)
    assert np.all(np.abs(s.log_values[0] - exact) <= sigma / t)
    assert np.all(np.isfinite(s.log_values))


def test_times_outside_unit_interval_are_rejected():
    y, z = nets(0.25, 0.25)
    for bad in ([0.0], [1.0], [-1e-3], [2.0]):
        with pytest.raises(InputError):
            corrupt_kernel(TORUS, y, z, bad, 0.0)
    with pytest.raises(InputError):
        corrupt_kernel(TORUS, y, z, [1e-3], -1.0)


def test_tiny_times_keep_finite_logs():
    y, z = nets(0.25, 0.25)
    s = corrupt_kernel(TORUS, y, z, [1e-6], 0.0)
    assert np.all(np.isfinite(s.log_values))


def test_selection_respects_sigma():
    y, z = nets()
    s = corrupt_kernel(TORUS, y, z, TIMES, 1e-4, seed=1)
    sel = select_t(s)
    assert sel.t_star <= 1e-4
    assert len(sel.diagnostics) == len(TIMES)


def test_selection_without_noise_prefers_a_small_time():
    y, z = nets()
    s = corrupt_kernel(TORUS, y, z, TIMES, 0.0)
    sel = select_t(s)
    assert sel.t_star in TIMES
    est = distances_from_kernel(s, sel)
    d = TORUS.pairwise(y, z)
    # away from the cut locus, where other images of the source contribute
    near = d <= 0.45
    assert np.abs(est.values[near] - d[near]).max() < 1e-9


def test_selection_errors():
    y, z = nets(0.25, 0.25)
    s = corrupt_kernel(TORUS, y, z, [0.5], 1e-3)
    with pytest.raises(SelectionError):
        select_t(s)
    s = corrupt_kernel(TORUS, y, z, [1e-4, 1e-3], 1e-2)
    with pytest.raises(InputError):
        select_t(s)
    with pytest.raises(InputError):
        distances_from_kernel(s, 2e-4)


def test_coincident_points_clamp_and_flag():
    y = np.array([[0.5, 0.5], [0.2, 0.7]])
    s = corrupt_kernel(TORUS, y, y, [1e-3], 1e-4, seed=0)
    est = distances_from_kernel(s, 1e-3)
    diag = np.diag(est.values)
    assert np.all(diag >= 0)
    flagged = {(f["landmark"], f["source"]) for f in est.flags()}
    for j in range(2):
        if est.clamped[j, j]:
            assert (j, j) in flagged
            assert est.values[j, j] == 0.0
    assert est.clamped.any()


def test_save_load_round_trip(tmp_path):
    y, z = nets(0.25, 0.25)
    s = corrupt_kernel(TORUS, y, z, [1e-3, 1e-2], 1e-4, seed=2)
    path = tmp_path / "k.json"
    s.save(path)
    back = KernelSampleSet.load(path)
    np.testing.assert_array_equal(back.log_values, s.log_values)
    np.testing.assert_array_equal(back.times, s.times)
    assert back.sigma == s.sigma and back.case_tag == s.case_tag
    with pytest.raises(InputError):
        KernelSampleSet.load(tmp_path / "missing.json")


def params():
    return ReconstructionParams(GeometryBounds(4.0, 0.3, 2), 0.05, 0.05)


def test_separated_sources_need_landmark_distances():
    y, z = nets(0.25, 0.25)
    s = corrupt_kernel(TORUS, y, z, [1e-3], 0.0, case_tag=SEPARATED)
    est = distances_from_kernel(s, 1e-3)
    with pytest.raises(InputError, match="d_hat_Y"):
        assemble_bundle_from_kernel(s, est, "given", params())
    dY = TORUS.pairwise(y, y)
    b = assemble_bundle_from_kernel(s, est, "given", params(), landmark_distances=dY)
    assert b.n_vectors == len(z) + len(y)
    with pytest.raises(InputError):
        assemble_bundle_from_kernel(s, est, "given", params(), landmark_distances=dY[:-1])


@pytest.mark.slow
def test_kernel_bundle_meets_a1_a2():
    y, z = nets(0.05, 0.02)
    s = corrupt_kernel(TORUS, y, z, TIMES, 1e-4, seed=5, case_tag=FULL)
    sel = select_t(s)
    est = distances_from_kernel(s, sel)
    b = assemble_bundle_from_kernel(s, est, "kernel", params())
    assert b.params.eps1 == pytest.approx(7e-2)
    rep = check_a1_a2(b, 200, 0)
    assert rep.passed, (rep.a1_max_error, rep.a2_max_error)


def test_error_shrinks_with_sigma():
    y, z = nets(0.1, 0.05)
    errors = []
    d = TORUS.pairwise(y, z)
    for sigma in (1e-2, 1e-4, 1e-6):
        times = [sigma * f for f in (0.1, 0.3, 1.0)]
        s = corrupt_kernel(TORUS, y, z, times, sigma, seed=0)
        est = distances_from_kernel(s, select_t(s))
        errors.append(float(np.abs(est.values - d).max()))
    assert errors[0] >= errors[1] >= errors[2]
    assert errors[-1] < 0.01
