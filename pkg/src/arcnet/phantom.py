"""Synthetic intracoronary OCT pullbacks with exact A-line artifact labels.

Frames are rendered directly in Cartesian coordinates around a catheter at the
image center: a bright catheter sheath, a lumen (optionally hazy with mixed
blood), and a vessel wall whose signal decays with depth. Attenuation
artifacts are angular sectors holding a residue body (blood clot in the lumen
or a gas bubble against the sheath) that suppresses every pixel behind it.
Red-thrombus confounders look like residue but sit on the wall and keep it
visible; they are labelled ``none``.

All lengths are fractions of ``R_max = frame_size / 2 - 1`` so the same
config renders at any resolution. A-line ``j`` is the ray at angle
``2*pi*j/n`` (the ray sampled by polar column ``j``) and owns the pixels
nearest to it in angle.
"""

import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from arcnet import geometry

NONE, MILD, SEVERE = 0, 1, 2
_CLASS_BY_NAME = {"none": NONE, "mild": MILD, "severe": SEVERE}


@dataclass
class Sector:
    """One artifact on a run of frames; columns ``[start, stop)`` may wrap past 0."""

    cls: int
    start: int
    stop: int
    frames: tuple = (0, 1)
    onset: float = None
    attenuation: float = None
    kind: str = "blood"

    def __post_init__(self):
        if isinstance(self.cls, str):
            self.cls = _CLASS_BY_NAME[self.cls]
        self.frames = tuple(self.frames)

    def columns(self, n_alines):
        return np.arange(self.start, self.stop) % n_alines


@dataclass
class PhantomConfig:
    n_frames: int = 20
    frame_size: int = 704
    n_alines: int = 224
    lumen_radius: tuple = (0.32, 0.55)
    lumen_offset: float = 0.12
    wall_depth: float = 0.16
    wall_brightness: tuple = (0.6, 0.9)
    catheter_radius: float = 0.07
    speckle: float = 0.35
    noise: float = 0.02
    blood_mixing: tuple = (0.0, 0.22)
    artifact_rate: float = 0.12
    severe_fraction: float = 0.45
    bubble_fraction: float = 0.3
    event_length: tuple = (3, 12)
    sector_width: tuple = (12, 70)
    mild_attenuation: tuple = (0.3, 0.7)
    severe_attenuation: tuple = (0.9, 0.97)
    thrombus_probability: float = 0.05
    sectors: list = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        self.sectors = [s if isinstance(s, Sector) else Sector(**s) for s in self.sectors]

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown phantom config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        return asdict(self)


@dataclass
class PullbackDataset:
    pullback_id: str
    patient_id: str
    frames: np.ndarray  # (N, H, W) float32 in [0, 1]
    labels: np.ndarray  # (N, n_alines) int64

    def __len__(self):
        return len(self.frames)

    @property
    def n_alines(self):
        return self.labels.shape[1]


def _validate_sector(s, cfg):
    n = cfg.n_alines
    if s.cls not in (MILD, SEVERE):
        raise ValueError(f"sector class must be mild or severe, got {s.cls}")
    if not (0 <= s.start < n) or s.stop <= s.start or s.stop - s.start > n:
        raise ValueError(f"invalid sector span [{s.start}, {s.stop}) for {n} A-lines")
    f0, f1 = s.frames
    if not (0 <= f0 < f1 <= cfg.n_frames):
        raise ValueError(f"sector frames {s.frames} outside pullback of {cfg.n_frames}")
    lo, hi = cfg.severe_attenuation if s.cls == SEVERE else cfg.mild_attenuation
    if s.attenuation is not None and not lo <= s.attenuation <= hi:
        raise ValueError(f"attenuation {s.attenuation} outside [{lo}, {hi}] for class {s.cls}")
    if s.kind not in ("blood", "bubble"):
        raise ValueError(f"unknown artifact kind {s.kind!r}")


def _resolve_sector(s, cfg, rng):
    """Fill an explicit sector's unspecified onset and attenuation from ``rng``."""
    lo, hi = cfg.severe_attenuation if s.cls == SEVERE else cfg.mild_attenuation
    onset = float(rng.uniform(0, 1)) if s.onset is None else s.onset
    att = float(rng.uniform(lo, hi)) if s.attenuation is None else s.attenuation
    return Sector(s.cls, s.start, s.stop, s.frames, onset, att, s.kind)


def _smooth_walk(rng, n, scale, corr=8.0):
    """Slowly varying zero-mean sequence used for frame-to-frame drift."""
    steps = rng.normal(0, 1, n + 32)
    kernel = np.exp(-0.5 * (np.arange(-24, 25) / corr) ** 2)
    walk = np.convolve(steps, kernel / kernel.sum(), mode="same")[16 : 16 + n]
    return scale * walk / max(walk.std(), 1e-9)


def _random_events(cfg, rng):
    """Artifact sectors drawn from the config's event statistics."""
    n = cfg.n_alines
    scale = n / 224.0
    events = []
    f = 0
    while f < cfg.n_frames:
        if rng.random() < cfg.artifact_rate:
            length = int(rng.integers(cfg.event_length[0], cfg.event_length[1] + 1))
            cls = SEVERE if rng.random() < cfg.severe_fraction else MILD
            kind = "bubble" if rng.random() < cfg.bubble_fraction else "blood"
            lo, hi = cfg.sector_width
            width0 = max(2, int(round(rng.uniform(lo, hi) * scale)))
            start0 = int(rng.integers(0, n))
            att_lo, att_hi = cfg.severe_attenuation if cls == SEVERE else cfg.mild_attenuation
            att = float(rng.uniform(att_lo, att_hi))
            onset = float(rng.uniform(0.0, 1.0))
            drift = rng.normal(0, 1.0 * scale)
            for t in range(f, min(f + length, cfg.n_frames)):
                # the sector wanders and breathes a little over its lifetime
                width = max(2, int(round(width0 * (1 + 0.15 * np.sin(t - f)))))
                start = int(round(start0 + drift * (t - f))) % n
                events.append(Sector(cls, start, start + width, (t, t + 1), onset, att, kind))
            f += max(1, length // 2)
        else:
            f += 1
    return events


def _labels_for(sectors, n_frames, n_alines):
    labels = np.zeros((n_frames, n_alines), dtype=np.int64)
    for s in sectors:
        cols = s.columns(n_alines)
        for t in range(*s.frames):
            labels[t, cols] = np.maximum(labels[t, cols], s.cls)
    return labels


@dataclass
class _Vessel:
    """Lumen outline and wall appearance for one frame."""

    ox: float
    oy: float
    radius: float
    ecc: float
    ecc_angle: float
    brightness: float
    mixing: float

    def boundary(self, angle):
        """Distance from the catheter to the lumen edge along ``angle``."""
        R = self.radius * (1 + self.ecc * np.cos(2 * (angle - self.ecc_angle)))
        proj = self.ox * np.cos(angle) + self.oy * np.sin(angle)
        return proj + np.sqrt(np.maximum(proj**2 - (self.ox**2 + self.oy**2) + R**2, 1e-6))


class _Canvas:
    """Per-resolution pixel geometry shared by every frame of a pullback."""

    def __init__(self, size, n_alines):
        self.size = size
        self.r_max = geometry.max_radius(size, size)
        cy, cx = geometry.grid_center(size, size)
        yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
        self.dy = yy - cy
        self.dx = xx - cx
        self.r = np.hypot(self.dy, self.dx) / self.r_max
        self.phi = np.mod(np.arctan2(self.dy, self.dx), 2 * np.pi)
        self.col = np.floor(self.phi * n_alines / (2 * np.pi) + 0.5).astype(np.int64) % n_alines
        self.px = 1.0 / self.r_max  # one pixel in radius units


def _low_freq_field(rng, size, cells=6):
    coarse = rng.random((cells, cells))
    return geometry.resize(coarse, size, size)


def _render_frame(canvas, rng, cfg, vessel, sectors, thrombi):
    n = cfg.n_alines
    r, phi, px = canvas.r, canvas.phi, canvas.px
    img = np.zeros_like(r)

    # lumen boundary: offset circle with an elliptic wobble
    depth = r - vessel.boundary(phi)

    # vessel wall: bright intimal edge then exponential decay with depth
    wall = np.where(
        depth >= 0,
        vessel.brightness * (0.55 + 0.45 * np.exp(-depth / (2 * px + 1e-9)))
        * np.exp(-depth / cfg.wall_depth),
        0.0,
    )
    tissue = wall * (1 + cfg.speckle * rng.standard_normal(r.shape))
    img += np.clip(tissue, 0, None)

    # residual blood mixed into the flush
    lumen = (depth < 0) & (r > cfg.catheter_radius + 2 * px)
    if vessel.mixing > 0:
        haze = vessel.mixing * _low_freq_field(rng, canvas.size)
        img += lumen * haze * rng.gamma(2.0, 0.5, r.shape)

    # red-thrombus confounders: wall-bound masses without a shadow
    for angle, size in thrombi:
        cx = np.cos(angle) * (vessel.boundary(angle) - 0.5 * size)
        cy = np.sin(angle) * (vessel.boundary(angle) - 0.5 * size)
        d2 = ((canvas.dx / canvas.r_max - cx) ** 2 + (canvas.dy / canvas.r_max - cy) ** 2) / size**2
        blob = np.exp(-2.0 * d2) * (d2 < 1.0)
        img = np.maximum(img, 0.5 * blob * rng.gamma(3.0, 1 / 3.0, r.shape))

    # attenuation artifacts: body in front, shadow behind
    shadow = np.ones_like(r)
    for s in sectors:
        cols = s.columns(n)
        in_sector = np.isin(canvas.col, cols)
        nearest_wall = float(vessel.boundary(2 * np.pi * cols / n).min())
        lo = cfg.catheter_radius + 3 * px
        if s.kind == "bubble":
            start = lo
            thick = 0.05
        else:
            span = max(nearest_wall - lo - 0.12, 0.0)
            start = lo + s.onset * span
            thick = 0.06 + 0.04 * s.onset
        end = min(start + thick, nearest_wall - px)
        body = in_sector & (r >= start) & (r < end)
        level = 0.75 if s.kind == "bubble" else (0.35 + 0.25 * s.attenuation)
        texture = rng.gamma(3.0, 1 / 3.0, r.shape)
        img = np.where(body, np.maximum(img, level * texture), img)
        shadow = np.where(in_sector & (r >= end), shadow * (1 - s.attenuation), shadow)
    img *= shadow

    # catheter sheath and its inner glow
    ring = np.exp(-0.5 * ((r - cfg.catheter_radius) / (1.2 * px)) ** 2)
    img = np.maximum(img, 0.9 * ring)
    img += cfg.noise * np.abs(rng.standard_normal(r.shape))
    img[r > 1.0 + px] = 0.0
    return np.clip(img, 0.0, 1.0)


def generate_phantom(config, pullback_id="p000", patient_id="patient_000", return_meta=False):
    """Render one pullback; identical config (incl. seed) gives identical output."""
    cfg = config
    for s in cfg.sectors:
        _validate_sector(s, cfg)
    rng = np.random.default_rng(cfg.seed)
    n_frames = cfg.n_frames
    sectors = [_resolve_sector(s, cfg, rng) for s in cfg.sectors]
    if cfg.artifact_rate > 0:
        sectors += _random_events(cfg, rng)
    labels = _labels_for(sectors, n_frames, cfg.n_alines)

    canvas = _Canvas(cfg.frame_size, cfg.n_alines)
    radius = rng.uniform(*cfg.lumen_radius)
    brightness = rng.uniform(*cfg.wall_brightness)
    mixing = rng.uniform(*cfg.blood_mixing)
    ox = _smooth_walk(rng, n_frames, cfg.lumen_offset / 2)
    oy = _smooth_walk(rng, n_frames, cfg.lumen_offset / 2)
    rr = radius * (1 + _smooth_walk(rng, n_frames, 0.08))
    ecc = np.abs(_smooth_walk(rng, n_frames, 0.08))
    ecc_angle = rng.uniform(0, np.pi) + _smooth_walk(rng, n_frames, 0.3)

    frames = np.empty((n_frames, cfg.frame_size, cfg.frame_size), dtype=np.float32)
    boundaries = np.empty((n_frames, cfg.n_alines))
    centers = 2 * np.pi * np.arange(cfg.n_alines) / cfg.n_alines
    thrombus_angle = None
    for t in range(n_frames):
        cx = float(np.clip(ox[t], -cfg.lumen_offset, cfg.lumen_offset))
        cy = float(np.clip(oy[t], -cfg.lumen_offset, cfg.lumen_offset))
        e = float(min(ecc[t], 0.2))
        # nearest lumen edge clears the catheter; farthest stays inside 0.8 R_max
        floor = (np.hypot(cx, cy) + cfg.catheter_radius + 0.1) / (1 - e)
        limit = (0.8 - np.hypot(cx, cy)) / (1 + e)
        radius_t = float(np.clip(rr[t], floor, max(limit, floor)))
        vessel = _Vessel(cx, cy, radius_t, e, float(ecc_angle[t]), brightness, mixing)
        if thrombus_angle is None and rng.random() < cfg.thrombus_probability:
            thrombus_angle = (rng.uniform(0, 2 * np.pi), rng.uniform(0.06, 0.12),
                              int(rng.integers(3, 10)))
        thrombi = []
        if thrombus_angle is not None:
            angle, size, left = thrombus_angle
            thrombi.append((angle, size))
            thrombus_angle = None if left <= 1 else (angle, size, left - 1)
        here = [s for s in sectors if s.frames[0] <= t < s.frames[1]]
        frames[t] = _render_frame(canvas, rng, cfg, vessel, here, thrombi)
        boundaries[t] = vessel.boundary(centers)

    ds = PullbackDataset(pullback_id, patient_id, frames, labels)
    if return_meta:
        return ds, {"boundary": boundaries, "sectors": sectors}
    return ds


def generate_cohort(base, n_patients, pullbacks_per_patient=1, seed=0, prefix=""):
    """Several pullbacks with independent seeds; patient ids group pullbacks.

    Explicit sectors in ``base`` are rendered into every pullback.
    """
    out = []
    seeds = np.random.SeedSequence(seed).spawn(n_patients * pullbacks_per_patient)
    i = 0
    for p in range(n_patients):
        for _ in range(pullbacks_per_patient):
            cfg = PhantomConfig.from_dict({**base.to_dict(), "seed": int(seeds[i].generate_state(1)[0])})
            out.append(generate_phantom(cfg, f"{prefix}pb{i:03d}", f"{prefix}patient{p:03d}"))
            i += 1
    return out
