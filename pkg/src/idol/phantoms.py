"""Synthetic multi-patient, multi-fraction ellipse phantoms.

Three task families:

``seg``
    noisy image -> binary organ mask. Organ/background contrast polarity
    and levels are patient specific.
``sr``
    degraded (blur, 2x down, 2x nearest up) image -> full-resolution image.
    Edge softness and fine organ texture are patient specific.
``sct``
    image under a patient intensity map ``clamp(c*v, 0, 1)`` -> image under
    the global map ``v**0.6``.

Every patient has a baseline anatomy (fraction 0, the prior) and eight
drifted fractions.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, asdict, replace, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .pgm import write_pgm, read_pgm, MAXVAL

TASKS = ("seg", "sr", "sct")
N_FRACTIONS = 8
NOISE_SIGMA = 0.02

# drift bounds: per-fraction center step, cumulative caps
CENTER_STEP = 0.03
CENTER_CAP = 0.06
AXES_CAP = 0.05
ANGLE_CAP = 0.1

SCT_GAMMA = 0.6


@dataclass(frozen=True)
class AnatomyParams:
    cx: float
    cy: float
    a: float
    b: float
    angle: float
    base: float  # organ interior intensity
    background: float
    texture_seed: int
    coeff: float  # sct intensity-map coefficient c
    edge_width: float = 0.0  # sr edge softness, pixels at 32x32

    def extent_ok(self) -> bool:
        r = max(self.a, self.b)
        return all(0.1 <= v <= 0.9 for v in (self.cx - r, self.cx + r, self.cy - r, self.cy + r))


@dataclass
class PatientRecord:
    patient_id: str
    task: str
    params: AnatomyParams
    fractions: list[tuple[np.ndarray, np.ndarray]]

    @property
    def prior(self) -> tuple[np.ndarray, np.ndarray]:
        return self.fractions[0]

    @property
    def resolution(self) -> int:
        return self.fractions[0][0].shape[0]

    def stacked(self, start: int = 0) -> tuple[np.ndarray, np.ndarray]:
        """Fractions ``start..F`` as ``(n, 1, H, W)`` input and target arrays."""
        xs = np.stack([f[0] for f in self.fractions[start:]])[:, None]
        ys = np.stack([f[1] for f in self.fractions[start:]])[:, None]
        return xs, ys


@dataclass
class Cohort:
    task: str
    train: list[PatientRecord]
    holdout: list[PatientRecord]
    resolution: int = 32
    seed: int = 0
    patient_seeds: dict = field(default_factory=dict)

    def __post_init__(self):
        overlap = {p.patient_id for p in self.train} & {p.patient_id for p in self.holdout}
        if overlap:
            raise ValueError(f"training and held-out patients overlap: {sorted(overlap)}")

    @property
    def train_ids(self) -> set[str]:
        return {p.patient_id for p in self.train}

    def training_samples(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.train:
            raise ValueError("cohort has no training patients")
        parts = [p.stacked(0) for p in self.train]
        return np.concatenate([x for x, _ in parts]), np.concatenate([y for _, y in parts])


def _patient_seed(master_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([master_seed, index]).generate_state(1)[0])


def sample_anatomy(task: str, seed: int) -> AnatomyParams:
    rng = np.random.default_rng([seed, 0])
    a, b = rng.uniform(0.12, 0.26, size=2)
    margin = 0.1 + (1.0 + AXES_CAP) * max(a, b) + CENTER_CAP
    cx, cy = rng.uniform(margin, 1.0 - margin, size=2)
    angle = rng.uniform(0.0, np.pi)
    coeff = rng.uniform(0.7, 1.3)
    edge = rng.uniform(0.3, 2.5)
    if task == "seg":
        background = rng.uniform(0.3, 0.7)
        base = background + rng.choice([-1.0, 1.0]) * rng.uniform(0.12, 0.25)
    elif task == "sr":
        background = rng.uniform(0.15, 0.35)
        base = rng.uniform(0.55, 0.8)
    else:
        background = rng.uniform(0.15, 0.35)
        base = rng.uniform(0.5, 0.75)
    tex = int(rng.integers(0, 2**31 - 1))
    return AnatomyParams(float(cx), float(cy), float(a), float(b), float(angle), float(base),
                         float(background), tex, float(coeff), float(edge))


def drifted(params: AnatomyParams, fraction: int) -> AnatomyParams:
    """Anatomy at ``fraction``: a capped random walk seeded per patient."""
    if fraction < 0:
        raise ValueError("fraction index must be >= 0")
    rng = np.random.default_rng([params.texture_seed, 1])
    c = np.zeros(2)
    s = 0.0
    ang = 0.0
    for _ in range(fraction):
        step = rng.uniform(-1.0, 1.0, size=2)
        step *= CENTER_STEP * rng.uniform() / max(np.hypot(*step), 1e-12)
        c = np.clip(c + step, -CENTER_CAP, CENTER_CAP)
        s = float(np.clip(s + rng.uniform(-0.02, 0.02), -AXES_CAP, AXES_CAP))
        ang = float(np.clip(ang + rng.uniform(-0.05, 0.05), -ANGLE_CAP, ANGLE_CAP))
    return replace(params, cx=params.cx + c[0], cy=params.cy + c[1],
                   a=params.a * (1 + s), b=params.b * (1 + s), angle=params.angle + ang)


def _ellipse_coords(p: AnatomyParams, res: int):
    g = (np.arange(res) + 0.5) / res
    u, w = np.meshgrid(g, g)  # u: column (x), w: row (y)
    dx, dy = u - p.cx, w - p.cy
    ca, sa = np.cos(p.angle), np.sin(p.angle)
    xr = dx * ca + dy * sa
    yr = -dx * sa + dy * ca
    return xr, yr, np.sqrt((xr / p.a) ** 2 + (yr / p.b) ** 2)


def _texture(p: AnatomyParams, xr, yr, res: int, fine: bool = False) -> np.ndarray:
    """Oriented sinusoid texture in organ coordinates, values in [-1, 1]."""
    rng = np.random.default_rng([p.texture_seed, 3])
    theta = rng.uniform(0.0, np.pi)
    period_px = rng.uniform(3.0, 4.5) if fine else rng.uniform(5.0, 9.0)
    phase = rng.uniform(0.0, 2 * np.pi)
    k = 2 * np.pi * res / period_px
    return np.cos(k * (xr * np.cos(theta) + yr * np.sin(theta)) + phase)


def render_clean(p: AnatomyParams, task: str, res: int) -> tuple[np.ndarray, np.ndarray]:
    """Noise-free image in [0, 1] and binary organ mask."""
    xr, yr, r = _ellipse_coords(p, res)
    mask = (r <= 1.0).astype(np.float64)
    if task == "sr":
        # soft edge: logistic in pixel distance, width scaled with resolution
        width = p.edge_width * res / 32.0
        dist = (r - 1.0) * min(p.a, p.b) * res
        inside = 1.0 / (1.0 + np.exp(np.clip(dist / max(width, 1e-3) * 4.0, -50, 50)))
        img = p.background + (p.base - p.background) * inside
        img = img + 0.08 * inside * _texture(p, xr, yr, res, fine=True)
    else:
        img = p.background + (p.base - p.background) * mask
        img = img + 0.03 * mask * _texture(p, xr, yr, res)
    return np.clip(img, 0.0, 1.0), mask


def degrade(image: np.ndarray) -> np.ndarray:
    """Blur, 2x box downsample, 2x nearest upsample."""
    blurred = gaussian_filter(image, 0.7, mode="nearest")
    h, w = blurred.shape
    low = blurred.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))
    return low.repeat(2, axis=0).repeat(2, axis=1)


def render_fraction(params: AnatomyParams, fraction: int, task: str, resolution: int) -> tuple[np.ndarray, np.ndarray]:
    """(input, target) for one fraction; noise is added to the input only."""
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")
    p = drifted(params, fraction)
    img, mask = render_clean(p, task, resolution)
    if task == "seg":
        x, y = img, mask
    elif task == "sr":
        x, y = degrade(img), img
    else:
        x, y = np.clip(params.coeff * img, 0.0, 1.0), img ** SCT_GAMMA
    noise = np.random.default_rng([params.texture_seed, 2, fraction]).normal(0.0, NOISE_SIGMA, x.shape)
    return np.clip(x + noise, 0.0, 1.0), y


def generate_patient(task: str, seed: int, resolution: int = 32, patient_id: str = "") -> PatientRecord:
    if resolution not in (32, 64):
        raise ValueError("resolution must be 32 or 64")
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")
    params = sample_anatomy(task, seed)
    fractions = [render_fraction(params, k, task, resolution) for k in range(N_FRACTIONS + 1)]
    return PatientRecord(patient_id or f"S{seed}", task, params, fractions)


def build_cohort(task: str, n_train: int = 20, n_holdout: int = 5, resolution: int = 32, seed: int = 0) -> Cohort:
    """``n_train`` training patients P001.. followed by ``n_holdout`` held-out ones."""
    if n_train < 2 or n_holdout < 1:
        raise ValueError("need at least 2 training and 1 held-out patient")
    seeds = {}
    patients = []
    for i in range(n_train + n_holdout):
        pid = f"P{i + 1:03d}"
        seeds[pid] = _patient_seed(seed, i)
        patients.append(generate_patient(task, seeds[pid], resolution, pid))
    return Cohort(task, patients[:n_train], patients[n_train:], resolution, seed, seeds)


# -- persistence ------------------------------------------------------------

def save_cohort(cohort: Cohort, directory) -> Path:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    meta = {
        "task": cohort.task,
        "seed": cohort.seed,
        "resolution": cohort.resolution,
        "n_train": len(cohort.train),
        "n_holdout": len(cohort.holdout),
        "n_fractions": N_FRACTIONS,
        "pgm_scale": MAXVAL,
        "train": [p.patient_id for p in cohort.train],
        "holdout": [p.patient_id for p in cohort.holdout],
        "patients": {p.patient_id: {"seed": cohort.patient_seeds.get(p.patient_id), "anatomy": asdict(p.params)}
                     for p in cohort.train + cohort.holdout},
    }
    (root / "cohort.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    for p in cohort.train + cohort.holdout:
        d = root / p.patient_id
        d.mkdir(exist_ok=True)
        for k, (x, y) in enumerate(p.fractions):
            write_pgm(d / f"frac{k:02d}_input.pgm", x)
            write_pgm(d / f"frac{k:02d}_target.pgm", y)
    return root


def load_cohort(directory) -> Cohort:
    """Read a cohort tree back; images come back quantized to 1/65535."""
    root = Path(directory)
    meta = json.loads((root / "cohort.json").read_text())
    scale = meta.get("pgm_scale", MAXVAL)

    def load(pid):
        d = root / pid
        fr = [(read_pgm(d / f"frac{k:02d}_input.pgm", scale), read_pgm(d / f"frac{k:02d}_target.pgm", scale))
              for k in range(meta["n_fractions"] + 1)]
        return PatientRecord(pid, meta["task"], AnatomyParams(**meta["patients"][pid]["anatomy"]), fr)

    seeds = {pid: v["seed"] for pid, v in meta["patients"].items()}
    return Cohort(meta["task"], [load(p) for p in meta["train"]], [load(p) for p in meta["holdout"]],
                  meta["resolution"], meta["seed"], seeds)
