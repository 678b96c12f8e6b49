import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from stgasnet.plume import (
    AdvectionDiffusionSolver,
    CityConfig,
    ConfigurationError,
    CorpusConfig,
    GenerationError,
    SimConfig,
    SourceSpec,
    WindField,
    binarize,
    build_city,
    check_stability,
    generate_corpus,
    simulate,
    stable_substep,
    wind_channels,
    wind_planes,
)

EAST_WIND = math.radians(270.0)  # blows from the west towards the east


def test_closed_pure_diffusion_conserves_mass_per_step():
    cfg = SimConfig(height=20, width=20, diffusivity=30.0, boundary="closed", frames=1)
    solver = AdvectionDiffusionSolver(cfg, WindField(0.0, 0.0), source=SourceSpec(duration=10.0))
    while solver.time < 10.0:
        solver.step()
    before = solver.mass
    assert before > 0
    for _ in range(300):
        solver.step()
        after = solver.mass
        assert abs(after - before) <= 1e-8 * before
        before = after
    assert solver.conc.max() < solver.conc.sum()  # it actually spread


def test_zero_wind_zero_diffusion_stays_at_source():
    cfg = SimConfig(height=9, width=9, diffusivity=0.0, frames=5)
    src = SourceSpec(cells=[(2, 3), (6, 6)])
    frames = simulate(cfg, WindField(1.0, 0.0), source=src)
    outside = np.ones((9, 9), dtype=bool)
    outside[2, 3] = outside[6, 6] = False
    assert np.all(frames[:, outside] == 0.0)
    assert np.all(frames[:, 2, 3] > 0) and np.all(frames[:, 2, 3] == frames[:, 6, 6])


def test_center_of_mass_advects_east():
    cfg = SimConfig(height=16, width=40, diffusivity=0.0, frames=1, dt=6.0, frame_interval=6.0)
    wind = WindField(EAST_WIND, 5.0)
    vn, ve = wind.velocity(cfg.canopy_factor)
    assert abs(vn) < 1e-12 and ve > 0
    solver = AdvectionDiffusionSolver(cfg, wind, source=SourceSpec(cells=[(8, 5)], duration=cfg.dt))
    solver.step()
    cols = np.arange(cfg.width)

    def com():
        return float((solver.conc.sum(axis=0) * cols).sum() / solver.conc.sum())

    start = com()
    for _ in range(10):
        solver.step()
    expected = 10 * ve * cfg.dt / cfg.cell_size
    assert abs((com() - start) - expected) <= 1.0
    rows = solver.conc.sum(axis=1)
    assert rows.argmax() == 8 and math.isclose(rows[8], rows.sum(), rel_tol=1e-12)


def test_cfl_violation_rejected_before_stepping():
    cfg = SimConfig(height=10, width=10, domain_length=200.0, dt=36.0, diffusivity=20.0)
    wind = WindField(EAST_WIND, 5.0)
    dx = cfg.cell_size
    limit = 0.9 * min(dx / (5.0 * cfg.canopy_factor), dx * dx / (4 * 20.0))
    assert 36.0 > limit
    with pytest.raises(ConfigurationError):
        AdvectionDiffusionSolver(cfg, wind)
    with pytest.raises(ConfigurationError):
        check_stability(cfg, wind, 36.0)
    check_stability(cfg, wind, stable_substep(cfg, wind))


def test_auto_substep_satisfies_bound():
    cfg = SimConfig(height=32, width=32, domain_length=500.0, diffusivity=50.0)
    wind = WindField(math.radians(200.0), 5.0)
    solver = AdvectionDiffusionSolver(cfg, wind)
    dx = cfg.cell_size
    assert solver.dt <= 0.9 * min(dx / (5.0 * cfg.canopy_factor), dx * dx / (4 * 50.0)) + 1e-12
    assert abs(solver.dt * solver.substeps - cfg.frame_interval) < 1e-9


def test_bad_configs():
    with pytest.raises(ConfigurationError):
        SimConfig(boundary="periodic")
    with pytest.raises(ConfigurationError):
        WindField(0.0, -1.0)
    mask = np.zeros((32, 32), dtype=bool)
    mask[16, 16] = True
    with pytest.raises(ConfigurationError):
        AdvectionDiffusionSolver(SimConfig(), WindField(0.0, 1.0), mask=mask)
    with pytest.raises(ConfigurationError):
        AdvectionDiffusionSolver(SimConfig(), WindField(0.0, 1.0), source=SourceSpec(cells=[(40, 0)]))


@settings(max_examples=15, deadline=None)
@given(st.floats(0, 2 * math.pi), st.floats(0, 5), st.floats(0, 60), st.integers(0, 1000),
       st.sampled_from(["absorbing", "closed"]))
def test_nonnegative_and_buildings_empty(direction, speed, kappa, seed, boundary):
    cfg = SimConfig(height=14, width=14, domain_length=700.0, diffusivity=kappa, frames=6, boundary=boundary)
    mask = build_city(seed, 3, (1, 3), cfg)
    frames = simulate(cfg, WindField(direction, speed), mask=mask)
    assert frames.min() >= 0.0
    assert np.all(frames[:, mask] == 0.0)


def test_buildings_block_transport():
    cfg = SimConfig(height=11, width=11, diffusivity=0.0, frames=20, domain_length=550.0)
    mask = np.zeros((11, 11), dtype=bool)
    mask[:, 7] = True  # a wall across the whole domain east of the source
    frames = simulate(cfg, WindField(EAST_WIND, 5.0), mask=mask)
    assert frames[-1, 5, 6] > 0
    assert not frames[:, :, 8:].any()


def test_binarize_rules():
    rng = np.random.default_rng(0)
    conc = rng.random((4, 5, 5))
    tau = 0.3
    peak = conc[0].max()
    expected = np.array([[[1 if conc[f, i, j] > tau * peak else 0 for j in range(5)] for i in range(5)]
                         for f in range(4)])
    assert np.array_equal(binarize(conc, tau), expected)
    high = binarize(conc, 10 * conc.max() / peak)
    assert not high[1:].any()
    tiny = binarize(conc * (conc > 0.5), 1e-12)
    assert np.array_equal(tiny, (conc > 0.5).astype(np.uint8))
    with pytest.raises(GenerationError):
        binarize(np.zeros((2, 3, 3)), 0.1)
    with pytest.raises(GenerationError):
        binarize(conc, 0.0)


def test_wind_channels_encoding():
    d, s = wind_channels(0.0, 3.0, 4, 5)
    assert d.shape == (4, 5, 2) and s.shape == (4, 5, 1)
    assert np.allclose(d[..., 0], 1.0) and np.allclose(d[..., 1], 0.0, atol=1e-7)
    assert np.all(s == 3.0)
    d, _ = wind_channels(math.pi / 2, 1.0, 2, 2)
    assert np.allclose(d[..., 0], 0.0, atol=1e-7) and np.allclose(d[..., 1], -1.0)
    for phi in np.linspace(0, 2 * math.pi, 13):
        d, _ = wind_channels(phi, 1.0, 2, 2)
        assert np.allclose(np.linalg.norm(d, axis=-1), 1.0, atol=1e-6)
    planes = wind_planes(1.0, 2.0, 3, 4)
    assert planes.shape == (3, 3, 4) and np.all(planes[2] == 2.0)


def test_build_city_examples():
    cfg = SimConfig(height=32, width=32)
    assert not build_city(0, 0, (2, 5), cfg).any()
    assert np.array_equal(build_city(7, 6, (2, 5), cfg), build_city(7, 6, (2, 5), cfg))
    for seed in range(20):
        mask = build_city(seed, 5, (2, 5), cfg)
        labels, n = ndimage.label(mask)
        assert n == 5
        for lab in range(1, n + 1):
            rows, cols = np.nonzero(labels == lab)
            box = (rows.max() - rows.min() + 1) * (cols.max() - cols.min() + 1)
            assert box == rows.size  # filled rectangle
        assert not mask[15:18, 15:18].any()  # source neighbourhood stays open


def test_build_city_downstream_building():
    cfg = SimConfig(height=32, width=32)
    for seed in range(10):
        mask = build_city(seed, 1, (2, 3), cfg, downstream=(0.0, 1.0), radius=6)
        rows, cols = np.nonzero(mask)
        assert cols.min() > 16 and cols.max() <= 16 + 8


def test_build_city_infeasible():
    with pytest.raises(GenerationError):
        build_city(0, 40, (6, 8), SimConfig(height=16, width=16), max_tries=200)
    with pytest.raises(GenerationError):
        build_city(0, 1, (20, 40), SimConfig(height=16, width=16))


def test_default_corpus_grid_has_45_pairs():
    pairs = CorpusConfig().pairs()
    assert len(pairs) == 45
    assert sorted({a for a, _ in pairs}) == [180.0 + 10 * i for i in range(9)]
    assert all(180.0 <= a <= 270.0 and 1.0 <= s <= 5.0 for a, s in pairs)


def test_corpus_determinism_and_plume_features():
    sim = SimConfig(height=24, width=24)
    corpus = CorpusConfig(count=4, seed=3)
    a = generate_corpus(sim, corpus, CityConfig())
    b = generate_corpus(sim, corpus, CityConfig())
    assert [s.seq_id for s in a] == [s.seq_id for s in b]
    assert all(x == y for x, y in zip(a, b))
    for seq in a:
        assert seq.frames.shape == (50, 24, 24)
        area = seq.frames.sum(axis=(1, 2))
        assert area[0] >= 1 and area[-1] > area[0]
        assert not seq.frames[:, seq.mask.astype(bool)].any()
