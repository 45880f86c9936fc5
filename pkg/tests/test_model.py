import math

import numpy as np
import pytest

from robust_recon import (
    BoxSupport,
    ConeSupport,
    Phantom,
    ScannerConfig,
    SystemMatrix,
    TubeSupport,
    VoxelGrid,
    langevin,
    make_phantom,
    rasterize_support,
    simulate_system_matrix,
)


def test_langevin_at_zero():
    assert langevin(0.0) == 0.0


def test_langevin_saturates():
    assert langevin(50.0) > 0.97


def test_langevin_at_one_matches_coth_oracle():
    # oracle: direct numeric evaluation of coth(1) - 1
    oracle = math.cosh(1.0) / math.sinh(1.0) - 1.0
    value = langevin(1.0)
    assert abs(value - oracle) <= 1e-15
    assert abs(value - 0.313035) < 1e-6


def test_langevin_odd_bounded_monotone():
    xs = np.linspace(-60.0, 60.0, 1000)
    vals = langevin(xs)
    assert np.all(np.abs(vals) < 1.0)
    assert np.max(np.abs(langevin(-xs) + vals)) <= 1e-15
    assert np.all(np.diff(vals) >= 0.0)


def test_langevin_series_region_is_continuous():
    # near the formula switch both branches must agree with the Taylor
    # expansion; the direct formula carries ~1e-7 cancellation noise there
    for x in (0.99e-4, 1.01e-4):
        oracle = x / 3.0 - x**3 / 45.0
        assert abs(langevin(x) - oracle) <= 5e-7 * oracle
    assert langevin(0.99e-4) < langevin(1.01e-4)


def test_langevin_vectorized_shape():
    arr = langevin(np.zeros((2, 3)))
    assert arr.shape == (2, 3)
    assert isinstance(langevin(1.0), float)


def test_voxel_grid_centers_and_flat_order():
    grid = VoxelGrid((5, 5, 1), (2.0, 2.0, 1.0))
    centers = grid.centers_mm()
    assert grid.voxel_count == 25
    assert np.array_equal(centers[0], [-4.0, -4.0, 0.0])
    # C order: the z/y axes vary fastest
    assert np.array_equal(centers[1], [-4.0, -2.0, 0.0])
    assert np.array_equal(centers[2 * 5 + 2], [0.0, 0.0, 0.0])


def test_voxel_grid_origin_default_and_explicit():
    grid = VoxelGrid((4, 2, 1), (1.0, 2.0, 3.0))
    assert grid.origin_mm == (-1.5, -1.0, 0.0)
    shifted = VoxelGrid((2, 1, 1), (1.0, 1.0, 1.0), origin_mm=(10.0, 0.0, 0.0))
    assert np.array_equal(shifted.centers_mm()[:, 0], [10.0, 11.0])


def test_voxel_grid_validation():
    with pytest.raises(ValueError):
        VoxelGrid((0, 1, 1), (1.0, 1.0, 1.0))
    with pytest.raises(ValueError):
        VoxelGrid((2, 2, 1), (1.0, 0.0, 1.0))
    with pytest.raises(ValueError):
        VoxelGrid((2, 2, 1), (1.0, 1.0, 1.0), origin_mm=(0.0, 0.0))


def test_make_phantom_delta():
    grid = VoxelGrid((5, 5, 1), (1.0, 1.0, 1.0))
    ph = make_phantom("delta", grid, 50.0)
    assert ph.values.shape == grid.shape
    assert np.count_nonzero(ph.values) == 1
    assert ph.values[2, 2, 0] == 50.0


def test_make_phantom_cone_full_voxel_exact():
    grid = VoxelGrid((5, 5, 1), (1.0, 1.0, 1.0))
    ph = make_phantom("shape-cone", grid, 50.0)
    # the default cone encloses the center voxel completely
    assert ph.values[2, 2, 0] == 50.0
    assert ph.support is not None


def test_make_phantom_cone_half_covered_voxel():
    grid = VoxelGrid((5, 5, 1), (1.0, 1.0, 1.0))
    # frustum cap plane through the center voxel's midpoint: the wide cone
    # covers exactly the half of the voxel with x below the cap
    ph = make_phantom(
        "shape-cone",
        grid,
        50.0,
        subsamples=4,
        apex_mm=(-3.0, 0.0, 0.0),
        axis=(1.0, 0.0, 0.0),
        tip_radius_mm=50.0,
        half_angle_deg=10.0,
        height_mm=3.0,
    )
    assert abs(ph.values[2, 2, 0] - 25.0) <= 50.0 / 64.0


def test_make_phantom_value_bounds():
    grid = VoxelGrid((7, 7, 1), (1.0, 1.0, 1.0))
    for kind in ("shape-cone", "resolution-tubes"):
        ph = make_phantom(kind, grid, 50.0)
        assert np.all(ph.values >= 0.0)
        assert np.all(ph.values <= 50.0)
        assert np.any(ph.values > 0.0)


def test_make_phantom_errors():
    grid = VoxelGrid((5, 5, 1), (1.0, 1.0, 1.0))
    with pytest.raises(ValueError):
        make_phantom("blob", grid, 50.0)
    with pytest.raises(ValueError):
        make_phantom("delta", grid, 0.0)
    with pytest.raises(ValueError):
        make_phantom("custom", grid, 50.0)
    with pytest.raises(ValueError):
        make_phantom("shape-cone", grid, 50.0, apex_mm=(100.0, 0.0, 0.0))
    with pytest.raises(ValueError):
        make_phantom("shape-cone", grid, 50.0, banana=1)


def test_phantom_custom_values_and_validation():
    grid = VoxelGrid((2, 2, 1), (1.0, 1.0, 1.0))
    values = np.array([[[1.0], [0.0]], [[2.0], [3.0]]])
    ph = make_phantom("custom", grid, 50.0, values=values)
    assert np.array_equal(ph.flat(), [1.0, 0.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        Phantom(grid, -values, "custom", 50.0)
    with pytest.raises(ValueError):
        Phantom(grid, np.zeros((3, 3, 1)), "custom", 50.0)


def test_rasterize_support_matches_pointwise_oracle():
    grid = VoxelGrid((4, 3, 2), (1.0, 1.5, 2.0))
    rng = np.random.default_rng(11)
    for _ in range(5):
        center = rng.uniform(-2.0, 2.0, size=3)
        size = rng.uniform(0.5, 3.0, size=3)
        support = BoxSupport(center, size)
        s = 3
        values = rasterize_support(support, grid, 50.0, subsamples=s)
        # oracle: scalar loop over voxels and stratified midpoints
        expected = np.zeros(grid.shape)
        centers = grid.centers_mm().reshape(grid.shape + (3,))
        for ix in range(grid.shape[0]):
            for iy in range(grid.shape[1]):
                for iz in range(grid.shape[2]):
                    hits = 0
                    for a in range(s):
                        for b in range(s):
                            for c in range(s):
                                off = (np.array([a, b, c]) + 0.5) / s - 0.5
                                point = centers[ix, iy, iz] + off * grid.spacing_mm
                                hits += bool(support.contains(point[None, :])[0])
                    expected[ix, iy, iz] = 50.0 * hits / s**3
        assert np.allclose(values, expected, rtol=0.0, atol=1e-12)


def test_rasterize_support_requires_membership_test():
    grid = VoxelGrid((2, 2, 1), (1.0, 1.0, 1.0))
    with pytest.raises(TypeError):
        rasterize_support(object(), grid, 50.0)
    with pytest.raises(ValueError):
        rasterize_support(BoxSupport((0, 0, 0), (1, 1, 1)), grid, 50.0, subsamples=0)


def test_support_geometry_validation():
    with pytest.raises(ValueError):
        ConeSupport((0, 0, 0), (0, 0, 0), 1.0, 10.0, 5.0)
    with pytest.raises(ValueError):
        ConeSupport((0, 0, 0), (1, 0, 0), 1.0, 95.0, 5.0)
    with pytest.raises(ValueError):
        TubeSupport([((0, 0, 0), (0, 0, 0), 1.0)])
    with pytest.raises(ValueError):
        BoxSupport((0, 0, 0), (1.0, -1.0, 1.0))


def test_scanner_config_validation():
    with pytest.raises(ValueError):
        ScannerConfig(dims=3)
    with pytest.raises(ValueError):
        ScannerConfig(dims=1, drive_frequencies_khz=(25.0, 30.0))
    with pytest.raises(ValueError):
        ScannerConfig(samples_per_period=100)
    with pytest.raises(ValueError):
        ScannerConfig(gradient_t_per_m=(0.0, 1.0))
    with pytest.raises(ValueError):
        ScannerConfig(drive_amplitudes_mt=(-1.0, 12.0))
    with pytest.raises(ValueError):
        # 15 kHz over 1.024 ms is not an integer number of cycles
        ScannerConfig(drive_frequencies_khz=(15.0, 16.6015625))


def test_scanner_derived_quantities(scanner_1d):
    assert scanner_1d.coils == 1
    assert scanner_1d.freq_count == 256 // 2 + 1
    assert scanner_1d.bin_khz == 1.0
    assert scanner_1d.fov_half_extent_mm() == (12.0,)


def test_langevin_beta_matches_first_principles(scanner_1d):
    # oracle: beta = mu0 * Ms * (pi/6) d^3 / (kB T) recomputed from constants
    mu0 = 4e-7 * math.pi
    kb = 1.380649e-23
    d = 30e-9
    t = 300.0
    ms = 0.6 / mu0
    moment = ms * math.pi / 6.0 * d**3
    beta = moment / (kb * t)  # field argument is in tesla
    assert abs(scanner_1d.langevin_beta() - beta) <= 1e-12 * beta
    # drive amplitudes of ~10 mT must reach well into the nonlinear range
    assert langevin(beta * 12e-3) > 0.9


def test_simulate_zero_drive_gives_zero_row():
    cfg = ScannerConfig(
        dims=1,
        drive_frequencies_khz=(25.0,),
        drive_amplitudes_mt=(0.0,),
        gradient_t_per_m=(1.0,),
        period_ms=1.0,
        samples_per_period=64,
    )
    grid = VoxelGrid((1, 1, 1), (1.0, 1.0, 1.0))
    system = simulate_system_matrix(cfg, grid)
    assert np.all(system.data == 0.0)


def test_simulate_determinism(scanner_2d, grid_2d):
    a = simulate_system_matrix(scanner_2d, grid_2d)
    b = simulate_system_matrix(scanner_2d, grid_2d)
    assert a.data.dtype == np.complex128
    assert np.array_equal(a.data, b.data)


def test_simulate_shape_and_frequencies(system_2d, scanner_2d, grid_2d):
    assert system_2d.data.shape == (2, 129, 64)
    assert system_2d.coils == 2
    freqs = system_2d.frequencies_khz()
    assert freqs[0] == 0.0
    assert np.allclose(freqs, np.arange(129) / scanner_2d.period_ms)


def test_concentration_doubling_is_exact(system_1d, rng):
    x = rng.uniform(0.0, 50.0, size=system_1d.voxel_count)
    assert np.array_equal(system_1d.apply(2.0 * x), 2.0 * system_1d.apply(x))


def test_forward_linearity(system_2d, rng):
    m = system_2d.voxel_count
    for _ in range(5):
        a, b = rng.uniform(-3.0, 3.0, size=2)
        x1, x2 = rng.uniform(0.0, 50.0, size=(2, m))
        lhs = system_2d.apply(a * x1 + b * x2)
        rhs = a * system_2d.apply(x1) + b * system_2d.apply(x2)
        scale = np.max(np.abs(rhs))
        assert np.max(np.abs(lhs - rhs)) <= 1e-12 * scale


def test_odd_harmonic_energy_dominates_1d(system_1d):
    # centered point sample: the drive at bin 25 generates odd harmonics
    x = np.zeros(system_1d.voxel_count)
    x[2] = 1.0
    spectrum = np.abs(system_1d.apply(x)[0]) ** 2
    base = 25
    odd = sum(spectrum[k * base] for k in (1, 3, 5) if k * base < spectrum.size)
    even = sum(spectrum[k * base] for k in (2, 4) if k * base < spectrum.size)
    assert odd > 10.0 * even


def test_simulate_rejects_grid_outside_fov(scanner_1d):
    grid = VoxelGrid((31, 1, 1), (1.0, 1.0, 1.0))  # centers reach 15 > 12 mm
    with pytest.raises(ValueError, match="field-free point"):
        simulate_system_matrix(scanner_1d, grid)


def test_simulate_rejects_thick_grid_on_undriven_axis(scanner_1d):
    grid = VoxelGrid((3, 2, 1), (1.0, 1.0, 1.0))
    with pytest.raises(ValueError):
        simulate_system_matrix(scanner_1d, grid)


def test_system_matrix_validation(grid_2d):
    with pytest.raises(ValueError):
        SystemMatrix(np.zeros((2, 5, 64)), grid_2d, 1.0)  # real data
    with pytest.raises(ValueError):
        SystemMatrix(np.zeros((2, 5, 9), dtype=complex), grid_2d, 1.0)


def test_system_matrix_apply_checks_length(system_1d):
    with pytest.raises(ValueError):
        system_1d.apply(np.zeros(3))
