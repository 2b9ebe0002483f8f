"""Synthetic phenotype images and the view augmentation policy.

Every sample is rendered from an *individual*: a Normal embryo-like
template (an elliptical body with a yolk, at a random pose) that a
phenotype deforms with a strength equal to the concentration.  At
concentration zero every phenotype renders the individual's template.
"""

import csv
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, FormatError
from .rng import SplitMix64, as_stream

DEFAULT_CLASSES = ("Normal", "Dead", "Elongated", "Curved", "Spotted", "Graded")

# body-coordinate deformation strengths per unit concentration
_ELONGATION = 0.4
_CURVATURE = 0.8
_SPOT_DEPTH = 0.8
_SPOT_RADIUS = 0.45
_GRADIENT_DEPTH = 0.6
_DEATH_RATE = 1.5
_N_SPOTS = 5


@dataclass
class SyntheticConfig:
    class_names: list = field(default_factory=lambda: list(DEFAULT_CLASSES))
    n_per_class: int = 200
    image_size: int = 32
    concentration_levels: list = field(default_factory=lambda: [0.5, 1.0, 1.5, 2.0])
    template_jitter: float = 1.0

    def __post_init__(self):
        self.class_names = list(self.class_names)
        self.concentration_levels = [float(c) for c in self.concentration_levels]
        names = self.class_names
        if len(names) < 2:
            raise ConfigError("class_names: need at least 2 classes", "class_names")
        if len(set(names)) != len(names):
            raise ConfigError("class_names: duplicate class name", "class_names")
        for required in ("Normal", "Dead"):
            if required not in names:
                raise ConfigError(f"class_names: '{required}' must be present", "class_names")
        unknown = [n for n in names if n not in DEFAULT_CLASSES]
        if unknown:
            raise ConfigError(
                f"class_names: unknown phenotype(s) {unknown}; known: {list(DEFAULT_CLASSES)}",
                "class_names",
            )
        if int(self.n_per_class) != self.n_per_class or self.n_per_class < 1:
            raise ConfigError("n_per_class: must be a positive integer", "n_per_class")
        self.n_per_class = int(self.n_per_class)
        if int(self.image_size) != self.image_size or self.image_size < 8:
            raise ConfigError("image_size: must be an integer >= 8", "image_size")
        self.image_size = int(self.image_size)
        levels = self.concentration_levels
        if not levels:
            raise ConfigError("concentration_levels: must not be empty", "concentration_levels")
        if any(not (c > 0) or not math.isfinite(c) for c in levels):
            raise ConfigError("concentration_levels: values must be positive", "concentration_levels")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ConfigError(
                "concentration_levels: must be strictly increasing", "concentration_levels"
            )
        if not (self.template_jitter >= 0) or not math.isfinite(self.template_jitter):
            raise ConfigError("template_jitter: must be non-negative", "template_jitter")

    def to_dict(self):
        return asdict(self)


@dataclass
class SyntheticSample:
    id: str
    image: np.ndarray
    label: str
    concentration: float


@dataclass
class Individual:
    """Pose and shape parameters of one Normal template."""

    cx: float
    cy: float
    angle: float
    major: float
    minor: float
    intensity: float
    yolk_offset: float
    spots: np.ndarray  # (n_spots, 2) body coordinates in units of the axes
    texture: np.ndarray  # S x S fixed texture field
    dead_noise: np.ndarray  # S x S noise field used by the Dead phenotype


def draw_individual(rng, size, jitter=1.0):
    rng = as_stream(rng)
    j = float(jitter)
    u = rng.random(8)
    c = (size - 1) / 2.0
    return Individual(
        cx=c + j * size * 0.06 * (2 * u[0] - 1),
        cy=c + j * size * 0.06 * (2 * u[1] - 1),
        angle=2 * math.pi * u[2],
        major=size * 0.30 * (1 + j * 0.10 * (2 * u[3] - 1)),
        minor=size * 0.15 * (1 + j * 0.10 * (2 * u[4] - 1)),
        intensity=0.75 + j * 0.08 * (2 * u[5] - 1),
        yolk_offset=0.35 + j * 0.08 * (2 * u[6] - 1),
        spots=np.column_stack(
            [rng.uniform(-0.6, 0.6, _N_SPOTS), rng.uniform(-0.5, 0.5, _N_SPOTS)]
        ),
        texture=j * 0.03 * rng.normal(size * size).reshape(size, size),
        dead_noise=rng.normal(size * size).reshape(size, size),
    )


def _body_coords(ind, size):
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    dx = xs - ind.cx
    dy = ys - ind.cy
    ca, sa = math.cos(ind.angle), math.sin(ind.angle)
    return ca * dx + sa * dy, -sa * dx + ca * dy


def _soft(x, width=0.8):
    return 0.5 * (1.0 + np.tanh(x / width))


def render(ind, label, concentration, size):
    """Render an individual under a phenotype at a given strength."""
    m = float(concentration)
    u, v = _body_coords(ind, size)
    a, b = ind.major, ind.minor
    if label == "Elongated" and m > 0:
        stretch = 1.0 + _ELONGATION * m
        a, b = a * stretch, b / math.sqrt(stretch)
    if label == "Curved" and m > 0:
        v = v - _CURVATURE * m * (u * u) / a
    r = np.sqrt((u / a) ** 2 + (v / b) ** 2)
    body = _soft((1.0 - r) * b)
    yolk_r = np.sqrt(((u - ind.yolk_offset * a) / (0.45 * b)) ** 2 + (v / (0.45 * b)) ** 2)
    yolk = _soft((1.0 - yolk_r) * 0.45 * b)
    img = 0.06 + body * (ind.intensity - 0.25 * yolk) + ind.texture * body
    if label == "Spotted" and m > 0:
        # lesions darken and widen with dose; multiplicative so they never saturate
        depth = 1.0 - math.exp(-_SPOT_DEPTH * m)
        radius = _SPOT_RADIUS * (1.0 + 0.25 * m)
        spots = np.zeros_like(img)
        for su, sv in ind.spots:
            d2 = ((u - su * a) ** 2 + (v - sv * b) ** 2) / (radius * b) ** 2
            spots += np.exp(-d2)
        img = img * (1.0 - depth * np.minimum(spots, 1.0) * body)
    if label == "Graded" and m > 0:
        ramp = np.clip((u / a + 1.0) / 2.0, 0.0, 1.0)
        img = img * np.clip(1.0 - _GRADIENT_DEPTH * m * ramp * body, 0.0, 1.0)
    if label == "Dead" and m > 0:
        rd = np.sqrt((u ** 2 + v ** 2)) / (0.9 * ind.minor)
        blob = 0.06 + _soft((1.0 - rd) * ind.minor) * (0.45 + 0.18 * ind.dead_noise)
        w = 1.0 - math.exp(-_DEATH_RATE * m)
        img = (1.0 - w) * img + w * blob
    return np.clip(img, 0.0, 1.0)


def generate_dataset(cfg, seed):
    """Render ``len(class_names) * n_per_class`` samples, ordered by (class, index).

    Non-Normal samples cycle through ``concentration_levels``; each sample
    owns an individual drawn from a stream keyed by its (class, index).
    """
    if isinstance(cfg, dict):
        cfg = SyntheticConfig(**cfg)
    root = SplitMix64(seed)
    samples = []
    for name in cfg.class_names:
        for i in range(cfg.n_per_class):
            ind = draw_individual(root.child(f"{name}/{i}"), cfg.image_size, cfg.template_jitter)
            if name == "Normal":
                conc = 0.0
            else:
                conc = cfg.concentration_levels[i % len(cfg.concentration_levels)]
            samples.append(
                SyntheticSample(
                    id=f"{name.lower()}_{i:05d}",
                    image=render(ind, name, conc, cfg.image_size),
                    label=name,
                    concentration=conc,
                )
            )
    return samples


@dataclass
class AugmentPolicy:
    crop_scale_range: tuple = (0.6, 1.0)
    hflip_prob: float = 0.5
    rotation_max_degrees: float = 180.0
    brightness_range: tuple = (0.8, 1.2)
    contrast_range: tuple = (0.8, 1.2)
    gauss_noise_sigma: float = 0.02
    salt_pepper_prob: float = 0.005

    def __post_init__(self):
        self.crop_scale_range = tuple(float(x) for x in self.crop_scale_range)
        self.brightness_range = tuple(float(x) for x in self.brightness_range)
        self.contrast_range = tuple(float(x) for x in self.contrast_range)
        lo, hi = self.crop_scale_range
        if not (0 < lo <= hi <= 1):
            raise ConfigError("crop_scale_range: need 0 < lo <= hi <= 1", "crop_scale_range")
        for name in ("brightness_range", "contrast_range"):
            lo, hi = getattr(self, name)
            if not (0 <= lo <= hi):
                raise ConfigError(f"{name}: need 0 <= lo <= hi", name)
        if not (0 <= self.hflip_prob <= 1):
            raise ConfigError("hflip_prob: must lie in [0, 1]", "hflip_prob")
        if not (0 <= self.rotation_max_degrees <= 360):
            raise ConfigError("rotation_max_degrees: must lie in [0, 360]", "rotation_max_degrees")
        if not (self.gauss_noise_sigma >= 0):
            raise ConfigError("gauss_noise_sigma: must be non-negative", "gauss_noise_sigma")
        if not (0 <= self.salt_pepper_prob <= 1):
            raise ConfigError("salt_pepper_prob: must lie in [0, 1]", "salt_pepper_prob")

    @classmethod
    def identity(cls):
        return cls((1.0, 1.0), 0.0, 0.0, (1.0, 1.0), (1.0, 1.0), 0.0, 0.0)

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def hflip(img):
    return img[:, ::-1].copy()


def rotate(img, degrees, fill=None):
    """Rotate counter-clockwise about the image center, nearest-neighbor."""
    s = img.shape[0]
    if fill is None:
        fill = float(np.mean(np.concatenate([img[0], img[-1], img[1:-1, 0], img[1:-1, -1]])))
    t = math.radians(degrees)
    ct, st = math.cos(t), math.sin(t)
    c = (s - 1) / 2.0
    ys, xs = np.mgrid[0:s, 0:s].astype(np.float64)
    dx, dy = xs - c, ys - c
    # inverse map: output pixel -> source pixel (rows grow downward)
    src_x = np.rint(ct * dx - st * dy + c).astype(np.int64)
    src_y = np.rint(st * dx + ct * dy + c).astype(np.int64)
    inside = (src_x >= 0) & (src_x < s) & (src_y >= 0) & (src_y < s)
    out = np.full_like(img, fill)
    out[inside] = img[src_y[inside], src_x[inside]]
    return out


def crop_resize(img, top, left, side):
    s = img.shape[0]
    idx = ((np.arange(s) + 0.5) * side / s).astype(np.int64)
    return img[top + idx][:, left + idx]


def augment(img, policy, rng):
    """One random draw of the augmentation policy; output stays S x S in [0, 1]."""
    rng = as_stream(rng)
    out = np.asarray(img, dtype=np.float64)
    s = out.shape[0]
    lo, hi = policy.crop_scale_range
    if lo < 1.0:
        scale = rng.uniform(lo, hi)
        side = min(s, max(1, int(round(s * math.sqrt(scale)))))
        if side < s:
            top = rng.integers(s - side + 1)
            left = rng.integers(s - side + 1)
            out = crop_resize(out, top, left, side)
    if policy.hflip_prob > 0 and rng.random() < policy.hflip_prob:
        out = hflip(out)
    if policy.rotation_max_degrees > 0:
        m = policy.rotation_max_degrees
        out = rotate(out, rng.uniform(-m, m))
    lo, hi = policy.brightness_range
    if (lo, hi) != (1.0, 1.0):
        out = out * rng.uniform(lo, hi)
    lo, hi = policy.contrast_range
    if (lo, hi) != (1.0, 1.0):
        mean = out.mean()
        out = (out - mean) * rng.uniform(lo, hi) + mean
    if policy.gauss_noise_sigma > 0:
        out = out + policy.gauss_noise_sigma * rng.normal(s * s).reshape(s, s)
    if policy.salt_pepper_prob > 0:
        u = rng.random(2 * s * s)
        hit = (u[: s * s] < policy.salt_pepper_prob).reshape(s, s)
        salt = (u[s * s :] < 0.5).reshape(s, s)
        out = np.where(hit, salt.astype(np.float64), out)
    if out is img:
        return out.copy()
    return np.clip(out, 0.0, 1.0)


def make_views(img, policy, rng):
    rng = as_stream(rng)
    return augment(img, policy, rng), augment(img, policy, rng)


def quantize(img):
    """8-bit round trip, matching what a PGM file stores."""
    return np.rint(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def write_pgm(path, img):
    data = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos])
    pos += 1
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError(f"{path}: malformed PGM header") from None
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit PGM supported (maxval {maxval})")
    body = raw[pos : pos + w * h]
    if len(body) != w * h:
        raise FormatError(f"{path}: truncated PGM pixel data")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).astype(np.float64) / 255.0


def write_dataset(samples, out_dir):
    """Write ``samples.csv`` plus one ``<id>.pgm`` per sample."""
    os.makedirs(out_dir, exist_ok=True)
    for s in samples:
        write_pgm(os.path.join(out_dir, f"{s.id}.pgm"), s.image)
    tmp = os.path.join(out_dir, "samples.csv.tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label", "concentration"])
        for s in samples:
            w.writerow([s.id, s.label, repr(float(s.concentration))])
    os.replace(tmp, os.path.join(out_dir, "samples.csv"))


def read_dataset(data_dir):
    path = os.path.join(data_dir, "samples.csv")
    if not os.path.exists(path):
        raise FormatError(f"{path}: missing dataset metadata table")
    samples = []
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["id", "label", "concentration"]:
        raise FormatError(f"{path}: header must be id,label,concentration", line=1)
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 3:
            raise FormatError(f"{path}: expected 3 columns, got {len(row)}", line=lineno)
        sid, label, conc = row
        try:
            conc = float(conc) if conc else 0.0
        except ValueError:
            raise FormatError(f"{path}: non-numeric concentration {conc!r}", line=lineno) from None
        img = read_pgm(os.path.join(data_dir, f"{sid}.pgm"))
        samples.append(SyntheticSample(sid, img, label, conc))
    return samples


def images_to_matrix(images):
    """Stack S x S images into an N x S^2 row-major float32 matrix."""
    return np.stack([np.asarray(im, dtype=np.float64).reshape(-1) for im in images]).astype(
        np.float32
    )
