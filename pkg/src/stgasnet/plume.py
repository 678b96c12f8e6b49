"""Synthetic urban plume generator.

Explicit finite-volume solution of the 2-D advection-diffusion equation

    dC/dt + u . grad C = kappa * laplacian C + S

on a uniform grid with rectangular building obstacles.  Advection is
first-order upwind in flux form, diffusion is second-order central, time
stepping is forward Euler.  Faces touching a building carry no flux, so
building cells stay empty.  Grid axis 0 runs south -> north, axis 1
west -> east.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import PlumeSequence


class ConfigurationError(ValueError):
    """Solver settings are invalid (e.g. the stability bound is violated)."""


class GenerationError(RuntimeError):
    """Corpus generation could not satisfy its constraints."""


@dataclass
class SimConfig:
    height: int = 32
    width: int = 32
    dx: float | None = None  # metres; defaults to domain_length / width
    domain_length: float = 2000.0
    dt: float | None = None  # seconds; None picks the largest stable substep
    diffusivity: float = 20.0  # m^2/s
    frames: int = 50
    frame_interval: float = 36.0  # seconds between output frames
    threshold: float = 1e-3  # fraction of the first-frame peak
    boundary: str = "absorbing"  # or "closed" (no-flux domain edges)
    canopy_factor: float = 0.3  # near-ground transport speed / inflow speed
    cfl_safety: float = 0.9

    def __post_init__(self):
        if self.boundary not in ("absorbing", "closed"):
            raise ConfigurationError(f"boundary must be 'absorbing' or 'closed', got {self.boundary!r}")
        if self.height < 3 or self.width < 3:
            raise ConfigurationError("grid must be at least 3x3")
        if self.diffusivity < 0:
            raise ConfigurationError("diffusivity must be >= 0")
        if self.frames < 1 or self.frame_interval <= 0:
            raise ConfigurationError("need frames >= 1 and frame_interval > 0")
        if self.threshold <= 0:
            raise ConfigurationError("threshold must be > 0")

    @property
    def cell_size(self) -> float:
        return self.dx if self.dx is not None else self.domain_length / self.width

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class WindField:
    """Inflow wind. ``direction`` is the meteorological angle (radians) the wind blows from."""

    direction: float
    speed: float

    def __post_init__(self):
        if self.speed < 0:
            raise ConfigurationError("wind speed must be >= 0")

    def velocity(self, factor: float = 1.0) -> tuple[float, float]:
        """(northward, eastward) velocity components in m/s."""
        s = self.speed * factor
        return -s * math.cos(self.direction), -s * math.sin(self.direction)


@dataclass
class SourceSpec:
    cells: list[tuple[int, int]] = field(default_factory=list)  # empty -> grid centre
    rate: float = 1.0  # mass per second, split evenly over the cells
    duration: float = 300.0  # seconds

    def resolved_cells(self, height: int, width: int) -> list[tuple[int, int]]:
        return list(self.cells) or [(height // 2, width // 2)]


def stable_substep(cfg: SimConfig, wind: WindField) -> float:
    """Largest step satisfying both the CFL bound and positivity of the explicit update."""
    dx = cfg.cell_size
    vn, ve = wind.velocity(cfg.canopy_factor)
    speed = math.hypot(vn, ve)
    limits = []
    if speed > 0:
        limits.append(dx / speed)
    if cfg.diffusivity > 0:
        limits.append(dx * dx / (4.0 * cfg.diffusivity))
    rate = (abs(vn) + abs(ve)) / dx + 4.0 * cfg.diffusivity / (dx * dx)
    if rate > 0:
        limits.append(1.0 / rate)
    if not limits:
        return cfg.frame_interval
    return cfg.cfl_safety * min(limits)


def check_stability(cfg: SimConfig, wind: WindField, dt: float) -> None:
    dx = cfg.cell_size
    vn, ve = wind.velocity(cfg.canopy_factor)
    speed = math.hypot(vn, ve)
    bound = math.inf
    if speed > 0:
        bound = min(bound, dx / speed)
    if cfg.diffusivity > 0:
        bound = min(bound, dx * dx / (4.0 * cfg.diffusivity))
    if dt > cfg.cfl_safety * bound:
        raise ConfigurationError(
            f"dt={dt:g}s violates the CFL bound {cfg.cfl_safety:g} x {bound:g}s "
            f"(dx={dx:g}m, |v|={speed:g}m/s, kappa={cfg.diffusivity:g}m^2/s)")
    outflow = dt * ((abs(vn) + abs(ve)) / dx + 4.0 * cfg.diffusivity / (dx * dx))
    if outflow > 1.0:
        raise ConfigurationError(f"dt={dt:g}s makes the explicit update non-positive (outflow {outflow:.3f} > 1)")


class AdvectionDiffusionSolver:
    """Stepper holding the concentration field (mass per unit area)."""

    def __init__(self, cfg: SimConfig, wind: WindField, mask=None, source: SourceSpec | None = None):
        self.cfg = cfg
        self.wind = wind
        h, w = cfg.height, cfg.width
        self.mask = np.zeros((h, w), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        if self.mask.shape != (h, w):
            raise ConfigurationError(f"building mask shape {self.mask.shape} != grid {(h, w)}")
        self.source = source or SourceSpec()
        self.source_cells = self.source.resolved_cells(h, w)
        for r, c in self.source_cells:
            if not (0 <= r < h and 0 <= c < w):
                raise ConfigurationError(f"source cell {(r, c)} outside the domain")
            if self.mask[r, c]:
                raise ConfigurationError(f"source cell {(r, c)} lies inside a building")

        if cfg.dt is None:
            self.substeps = max(1, math.ceil(cfg.frame_interval / stable_substep(cfg, wind) - 1e-12))
            self.dt = cfg.frame_interval / self.substeps
        else:
            self.substeps = round(cfg.frame_interval / cfg.dt)
            if self.substeps < 1 or abs(self.substeps * cfg.dt - cfg.frame_interval) > 1e-9 * cfg.frame_interval:
                raise ConfigurationError("dt must divide frame_interval into a whole number of steps")
            self.dt = cfg.dt
        check_stability(cfg, wind, self.dt)

        self.vn, self.ve = wind.velocity(cfg.canopy_factor)
        self.conc = np.zeros((h, w), dtype=np.float64)
        self.time = 0.0
        self.steps_taken = 0

        free = ~self.mask
        # open faces: (h, w+1) for west/east faces, (h+1, w) for south/north faces
        self.open_e = np.zeros((h, w + 1), dtype=bool)
        self.open_e[:, 1:-1] = free[:, :-1] & free[:, 1:]
        self.open_n = np.zeros((h + 1, w), dtype=bool)
        self.open_n[1:-1, :] = free[:-1, :] & free[1:, :]
        if cfg.boundary == "absorbing":
            self.open_e[:, 0] = free[:, 0]
            self.open_e[:, -1] = free[:, -1]
            self.open_n[0, :] = free[0, :]
            self.open_n[-1, :] = free[-1, :]

    @property
    def mass(self) -> float:
        return float(self.conc.sum()) * self.cfg.cell_size ** 2

    def _face_fluxes(self, c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        h, w = c.shape
        dx, kappa = self.cfg.cell_size, self.cfg.diffusivity
        # zero ghost cells outside the domain (clean inflow, absorbing outflow)
        pad_e = np.zeros((h, w + 2))
        pad_e[:, 1:-1] = c
        left, right = pad_e[:, :-1], pad_e[:, 1:]
        upwind = left if self.ve >= 0 else right
        fe = self.ve * upwind - kappa * (right - left) / dx

        pad_n = np.zeros((h + 2, w))
        pad_n[1:-1, :] = c
        below, above = pad_n[:-1, :], pad_n[1:, :]
        upwind = below if self.vn >= 0 else above
        fn = self.vn * upwind - kappa * (above - below) / dx
        return np.where(self.open_e, fe, 0.0), np.where(self.open_n, fn, 0.0)

    def step(self) -> None:
        dt, dx = self.dt, self.cfg.cell_size
        fe, fn = self._face_fluxes(self.conc)
        div = (fe[:, 1:] - fe[:, :-1] + fn[1:, :] - fn[:-1, :]) / dx
        new = self.conc - dt * div
        if self.time < self.source.duration:
            # emission during the part of this step that lies inside the release window
            active = min(dt, self.source.duration - self.time)
            per_cell = self.source.rate * active / (dx * dx * len(self.source_cells))
            for r, c in self.source_cells:
                new[r, c] += per_cell
        low = new.min()
        if low < -1e-12 * max(1.0, float(np.abs(new).max())):
            raise GenerationError(f"negative concentration {low:.3e} at t={self.time:.1f}s")
        np.maximum(new, 0.0, out=new)
        new[self.mask] = 0.0
        self.conc = new
        self.time += dt
        self.steps_taken += 1

    def run(self) -> np.ndarray:
        """Concentration frames ``[frames, H, W]`` sampled every ``frame_interval``."""
        out = np.empty((self.cfg.frames, self.cfg.height, self.cfg.width), dtype=np.float64)
        for f in range(self.cfg.frames):
            for _ in range(self.substeps):
                self.step()
            out[f] = self.conc
        return out


def simulate(cfg: SimConfig, wind: WindField, mask=None, source: SourceSpec | None = None) -> np.ndarray:
    return AdvectionDiffusionSolver(cfg, wind, mask, source).run()


def binarize(frames: np.ndarray, threshold: float) -> np.ndarray:
    """1 where concentration exceeds ``threshold`` times the first frame's peak."""
    if threshold <= 0:
        raise GenerationError("binarization threshold must be > 0")
    peak = float(np.max(frames[0]))
    if peak <= 0:
        raise GenerationError("first frame holds no mass; cannot set a binarization level")
    return (frames > threshold * peak).astype(np.uint8)


def wind_channels(direction: float, speed: float, height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Constant direction field ``[H, W, 2]`` of (cos(2pi - phi), sin(2pi - phi)) and speed field ``[H, W, 1]``."""
    angle = 2.0 * math.pi - direction
    d = np.empty((height, width, 2), dtype=np.float32)
    d[..., 0] = math.cos(angle)
    d[..., 1] = math.sin(angle)
    s = np.full((height, width, 1), speed, dtype=np.float32)
    return d, s


def wind_planes(direction: float, speed: float, height: int, width: int) -> np.ndarray:
    """Channels-first ``[3, H, W]`` stack of the wind encoding, ready to append to a frame."""
    d, s = wind_channels(direction, speed, height, width)
    return np.concatenate([d, s], axis=-1).transpose(2, 0, 1).copy()


# -- city layout ----------------------------------------------------------------

def build_city(seed: int, count: int, size_range: tuple[int, int], cfg: SimConfig,
               source: SourceSpec | None = None, downstream: tuple[float, float] | None = None,
               radius: float = 6.0, max_tries: int = 2000) -> np.ndarray:
    """Boolean building mask of ``count`` separated axis-aligned rectangles.

    Rectangles keep a one-cell street between each other and stay clear of the
    source cells and their neighbours.  When ``downstream`` (a (north, east)
    direction) is given, the first building is centred within ``radius`` cells
    of the source along that direction so the plume meets it early.
    """
    h, w = cfg.height, cfg.width
    mask = np.zeros((h, w), dtype=bool)
    if count == 0:
        return mask
    lo, hi = size_range
    if lo < 1 or hi < lo or hi > min(h, w) - 2:
        raise GenerationError(f"building size range {size_range} does not fit a {h}x{w} grid")
    rng = np.random.default_rng(seed)
    keep_out = np.zeros((h, w), dtype=bool)
    for r, c in (source or SourceSpec()).resolved_cells(h, w):
        keep_out[max(r - 1, 0):r + 2, max(c - 1, 0):c + 2] = True
    src_r, src_c = np.mean((source or SourceSpec()).resolved_cells(h, w), axis=0)

    placed = 0
    tries = 0
    while placed < count:
        tries += 1
        if tries > max_tries:
            raise GenerationError(f"placed only {placed} of {count} buildings after {max_tries} tries")
        bh, bw = rng.integers(lo, hi + 1, size=2)
        if placed == 0 and downstream is not None:
            norm = math.hypot(*downstream) or 1.0
            dist = rng.uniform(2.0 + max(bh, bw) / 2.0, max(radius, 3.0 + max(bh, bw) / 2.0))
            cr = src_r + dist * downstream[0] / norm
            cc = src_c + dist * downstream[1] / norm
            r0, c0 = int(round(cr - bh / 2.0)), int(round(cc - bw / 2.0))
        else:
            r0 = int(rng.integers(1, h - bh))
            c0 = int(rng.integers(1, w - bw))
        if r0 < 1 or c0 < 1 or r0 + bh > h - 1 or c0 + bw > w - 1:
            continue
        # one-cell street around every building keeps rectangles disjoint and separable
        ring = mask[r0 - 1:r0 + bh + 1, c0 - 1:c0 + bw + 1]
        if ring.any() or keep_out[r0:r0 + bh, c0:c0 + bw].any():
            continue
        mask[r0:r0 + bh, c0:c0 + bw] = True
        placed += 1
    return mask


# -- corpus -------------------------------------------------------------------

@dataclass
class CityConfig:
    count: int = 6
    size_min: int = 2
    size_max: int = 5
    downstream_radius: float = 6.0


@dataclass
class CorpusConfig:
    # 10-degree samples from due south up to (not including) due west: 9 angles
    angles_deg: list[float] = field(default_factory=lambda: [float(a) for a in range(180, 270, 10)])
    speeds: list[float] = field(default_factory=lambda: [1.0, 2.0, 3.0, 4.0, 5.0])
    count: int | None = None  # None -> every (angle, speed) pair
    seed: int = 0

    def pairs(self) -> list[tuple[float, float]]:
        grid = [(a, s) for a in self.angles_deg for s in self.speeds]
        if self.count is None or self.count >= len(grid):
            return grid
        rng = np.random.default_rng(self.seed)
        pick = np.sort(rng.choice(len(grid), size=self.count, replace=False))
        return [grid[i] for i in pick]


def mean_downstream(angles_deg) -> tuple[float, float]:
    """Average (north, east) direction the plume travels for inflow angles in degrees."""
    vecs = [WindField(math.radians(a), 1.0).velocity() for a in angles_deg]
    return float(np.mean([v[0] for v in vecs])), float(np.mean([v[1] for v in vecs]))


def generate_sequence(seq_id: str, cfg: SimConfig, wind: WindField, mask: np.ndarray,
                      source: SourceSpec | None = None, seed: int = 0) -> PlumeSequence:
    conc = simulate(cfg, wind, mask, source)
    frames = binarize(conc, cfg.threshold)
    return PlumeSequence(frames=frames, direction=wind.direction, speed=wind.speed,
                         mask=mask.astype(np.uint8), seq_id=seq_id,
                         meta={"seed": seed, "sim": cfg.to_dict()})


def generate_corpus(sim: SimConfig | None = None, corpus: CorpusConfig | None = None,
                    city: CityConfig | None = None, source: SourceSpec | None = None) -> list[PlumeSequence]:
    """One shared city, one sequence per selected (angle, speed) inflow pair."""
    sim = sim or SimConfig()
    corpus = corpus or CorpusConfig()
    city = city or CityConfig()
    mask = build_city(corpus.seed, city.count, (city.size_min, city.size_max), sim, source=source,
                      downstream=mean_downstream(corpus.angles_deg), radius=city.downstream_radius)
    out = []
    for idx, (angle, speed) in enumerate(corpus.pairs()):
        sid = f"seq{idx:03d}_a{angle:g}_v{speed:g}"
        wind = WindField(math.radians(angle), speed)
        out.append(generate_sequence(sid, sim, wind, mask, source, seed=corpus.seed))
    return out
