"""Procedural lesion-like images with demographic metadata.

Each class has a visual signature (pigment color, size, dark rim, border
irregularity, texture, edge sharpness, pale center) and the six-level tone
sets the surrounding skin color. ``bias`` degrades dark-tone samples so
group error-rate gaps can be induced deliberately. In ``attenuate`` mode a
dark-tone lesion of any class has its signature erased with probability
``bias`` and is replaced by a fixed featureless image for its tone, so it
carries no class information at all; in ``label_noise`` mode
its recorded label is replaced at random with probability ``bias``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .images import encode_ppm, to_uint8
from .schema import LESION_CLASSES, DatasetError, SampleRecord, write_metadata

# light -> dark skin backgrounds for tone 1..6
SKIN_RGB = np.array([
    [0.96, 0.87, 0.80],
    [0.90, 0.76, 0.66],
    [0.80, 0.63, 0.50],
    [0.63, 0.45, 0.33],
    [0.47, 0.31, 0.22],
    [0.32, 0.20, 0.14],
])

# color, radius (fraction of the short side), rim darkness, irregularity,
# texture amplitude, edge softness, pale-center strength
CLASS_STYLE = {
    "nv":    dict(color=(0.42, 0.26, 0.17), radius=0.28, rim=0.55, irregular=0.04, texture=0.03, soft=0.04, center=0.0),
    "mel":   dict(color=(0.14, 0.08, 0.07), radius=0.38, rim=0.10, irregular=0.30, texture=0.10, soft=0.03, center=0.0),
    "bkl":   dict(color=(0.66, 0.47, 0.30), radius=0.30, rim=0.00, irregular=0.06, texture=0.05, soft=0.015, center=0.0),
    "bcc":   dict(color=(0.86, 0.58, 0.60), radius=0.27, rim=0.00, irregular=0.28, texture=0.04, soft=0.04, center=0.0),
    "akiec": dict(color=(0.72, 0.28, 0.22), radius=0.31, rim=0.00, irregular=0.10, texture=0.14, soft=0.05, center=0.55),
    "df":    dict(color=(0.54, 0.38, 0.30), radius=0.18, rim=0.00, irregular=0.08, texture=0.18, soft=0.18, center=0.0),
    "vasc":  dict(color=(0.58, 0.10, 0.32), radius=0.22, rim=0.00, irregular=0.04, texture=0.01, soft=0.03, center=0.0),
}

# the look every class collapses to when its signature is erased
FADED_STYLE = dict(color=(0.50, 0.36, 0.28), radius=0.26, rim=0.0, irregular=0.05, texture=0.02, soft=0.08, center=0.0)

BIAS_MODES = ("attenuate", "label_noise")


@dataclass
class SynthConfig:
    n_per_class: int | dict = 100
    height: int = 48
    width: int = 64
    group_mix: dict = field(default_factory=lambda: {"tone_dark": 0.19, "sex_female": 0.5})
    difficulty: float = 0.3
    bias: float = 0.0
    bias_mode: str = "attenuate"
    seed: int = 0

    def class_counts(self) -> dict[str, int]:
        if isinstance(self.n_per_class, dict):
            unknown = set(self.n_per_class) - set(LESION_CLASSES)
            if unknown:
                raise DatasetError(f"unknown classes in n_per_class: {sorted(unknown)}")
            counts = {c: int(self.n_per_class.get(c, 0)) for c in LESION_CLASSES}
        else:
            counts = {c: int(self.n_per_class) for c in LESION_CLASSES}
        if any(v < 0 for v in counts.values()) or sum(counts.values()) == 0 or \
                (not isinstance(self.n_per_class, dict) and self.n_per_class < 1):
            raise DatasetError("n_per_class must be >= 1")
        return counts

    def validate(self) -> None:
        self.class_counts()
        unknown = set(self.group_mix) - {"tone_dark", "sex_female"}
        if unknown:
            raise DatasetError(f"unknown group_mix keys {sorted(unknown)}")
        for key, frac in self.group_mix.items():
            if not 0.0 <= float(frac) <= 1.0:
                raise DatasetError(f"group_mix[{key!r}] = {frac} is not a fraction in [0, 1]")
        if not 0.0 <= self.difficulty <= 1.0:
            raise DatasetError(f"difficulty must be in [0, 1], got {self.difficulty}")
        if not 0.0 <= self.bias <= 1.0:
            raise DatasetError(f"bias must be in [0, 1], got {self.bias}")
        if self.bias_mode not in BIAS_MODES:
            raise DatasetError(f"bias_mode must be one of {BIAS_MODES}")
        if self.height < 8 or self.width < 8:
            raise DatasetError("images must be at least 8×8")


@dataclass
class SynthDataset:
    config: SynthConfig
    records: list[SampleRecord]
    images: dict[str, np.ndarray]  # sample_id -> H×W×3 uint8

    def image(self, sample_id: str) -> np.ndarray:
        return self.images[sample_id].astype(np.float32) / np.float32(255.0)

    def write(self, root) -> Path:
        """Write ``metadata.csv`` and ``images/<id>.ppm`` under ``root``."""
        root = Path(root)
        (root / "images").mkdir(parents=True, exist_ok=True)
        for r in self.records:
            (root / r.image).write_bytes(encode_ppm(self.images[r.sample_id]))
        write_metadata(self.records, root / "metadata.csv")
        return root


def _allocate(total_frac: float, counts: list[int]) -> list[int]:
    """Split round(frac * N) across groups proportionally (largest remainder)."""
    n = sum(counts)
    target = int(np.floor(total_frac * n + 0.5))
    ideal = [total_frac * c for c in counts]
    alloc = [min(int(np.floor(v)), c) for v, c in zip(ideal, counts)]
    order = sorted(range(len(counts)), key=lambda i: (-(ideal[i] - alloc[i]), i))
    k = 0
    while sum(alloc) < target:
        i = order[k % len(order)]
        if alloc[i] < counts[i]:
            alloc[i] += 1
        k += 1
    return alloc


def blend_style(lesion_class: str, attenuation: float) -> dict:
    """Class style pulled toward the featureless look by ``attenuation`` in [0, 1]."""
    own, plain = CLASS_STYLE[lesion_class], FADED_STYLE
    out = {}
    for key, v in own.items():
        a, b = np.asarray(v, dtype=np.float64), np.asarray(plain[key], dtype=np.float64)
        out[key] = (1 - attenuation) * a + attenuation * b
    return out


def render_lesion(rng: np.random.Generator, lesion_class: str, tone6: int, height: int, width: int,
                  difficulty: float = 0.3, attenuation: float = 0.0) -> np.ndarray:
    """Draw one H×W×3 float image in [0, 1].

    ``attenuation`` erases the class signature (0 keeps it, 1 draws the featureless style).
    """
    style = blend_style(lesion_class, attenuation)
    jitter = 0.02 + 0.12 * difficulty
    short = min(height, width)

    skin = SKIN_RGB[tone6 - 1] * (1.0 + rng.normal(0, 0.03, 3))
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    cy = height / 2 + rng.normal(0, 0.06 * height)
    cx = width / 2 + rng.normal(0, 0.06 * width)
    shade = 1.0 - 0.08 * (((yy - height / 2) / height) ** 2 + ((xx - width / 2) / width) ** 2)
    img = skin[None, None, :] * shade[..., None]

    radius = short * style["radius"] * np.exp(rng.normal(0, 0.5 * jitter + 0.05))
    aspect = np.exp(rng.normal(0, 0.08))
    theta = np.arctan2(yy - cy, (xx - cx) / aspect)
    dist = np.hypot(yy - cy, (xx - cx) / aspect)
    irregular = max(style["irregular"] * (1 + rng.normal(0, jitter)), 0.0)
    bumps = np.zeros_like(theta)
    for k in (2, 3, 5, 7):
        bumps += rng.normal(0, 1) * np.cos(k * theta + rng.uniform(0, 2 * np.pi)) / np.sqrt(k)
    edge = radius * (1 + irregular * bumps / 2.0)
    soft = max(style["soft"] * short * (1 + rng.normal(0, jitter)), 0.5)
    mask = 1.0 / (1.0 + np.exp(-(edge - dist) / soft))

    color = np.clip(np.array(style["color"]) + rng.normal(0, jitter * 0.5, 3), 0, 1)
    rel = np.clip(dist / np.maximum(edge, 1e-6), 0, 1.5)
    pigment = np.broadcast_to(color, img.shape).copy()
    if style["rim"] > 0:
        rim = style["rim"] * np.exp(-((rel - 0.85) / 0.12) ** 2)
        pigment *= (1 - rim)[..., None]
    if style["center"] > 0:
        pale = style["center"] * np.exp(-(rel / 0.45) ** 2)
        pigment = pigment * (1 - pale)[..., None] + skin * pale[..., None]
    tex = style["texture"] * (1 + jitter)
    if tex > 0:
        noise = rng.normal(0, 1, (height, width))
        pigment *= (1 + tex * noise)[..., None]

    alpha = mask[..., None]
    img = img * (1 - alpha) + pigment * alpha
    img += rng.normal(0, 0.01 + 0.03 * difficulty, img.shape)
    return np.clip(img, 0.0, 1.0)


def synth_generate(config: SynthConfig) -> SynthDataset:
    """Deterministically generate a labeled dataset for ``config.seed``."""
    config.validate()
    counts = config.class_counts()
    classes = [c for c in LESION_CLASSES if counts[c] > 0]
    sizes = [counts[c] for c in classes]
    root = np.random.SeedSequence(config.seed)
    alloc_rng = np.random.default_rng(root.spawn(1)[0])

    dark_alloc = _allocate(float(config.group_mix.get("tone_dark", 0.19)), sizes)
    female_alloc = _allocate(float(config.group_mix.get("sex_female", 0.5)), sizes)

    plan = []
    for cls, n, n_dark, n_female in zip(classes, sizes, dark_alloc, female_alloc):
        dark = np.zeros(n, bool)
        dark[alloc_rng.permutation(n)[:n_dark]] = True
        female = np.zeros(n, bool)
        female[alloc_rng.permutation(n)[:n_female]] = True
        for i in range(n):
            plan.append((cls, bool(dark[i]), bool(female[i])))

    sample_seeds = root.spawn(len(plan) + 1)[1:]
    records, images = [], {}
    for idx, ((cls, dark, female), ss) in enumerate(zip(plan, sample_seeds)):
        rng = np.random.default_rng(ss)
        tone6 = int(rng.integers(4, 7)) if dark else int(rng.integers(1, 4))
        attenuation, recorded = 0.0, cls
        if dark and config.bias > 0:
            if config.bias_mode == "attenuate":
                attenuation = float(rng.uniform() < config.bias)
            elif rng.uniform() < config.bias:
                recorded = LESION_CLASSES[(LESION_CLASSES.index(cls) + int(rng.integers(1, 7))) % 7]
        draw_rng = np.random.default_rng(tone6) if attenuation else rng
        pixels = to_uint8(render_lesion(draw_rng, cls, tone6, config.height, config.width,
                                        config.difficulty, attenuation))
        sid = f"S{idx:05d}"
        records.append(SampleRecord(sample_id=sid, image=f"images/{sid}.ppm", lesion_class=recorded,
                                    sex="female" if female else "male", tone6=tone6,
                                    age=float(int(rng.integers(20, 86)))))
        images[sid] = pixels
    return SynthDataset(config, records, images)


def config_dict(config: SynthConfig) -> dict:
    return asdict(config)
