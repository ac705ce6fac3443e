"""Synthetic glyph-word image generation with a controlled domain gap.

Two 5x7 dot-matrix font styles manufacture the gap: the labeled "synthetic"
domain uses clean upright glyphs, the unlabeled/"real" domain uses a slanted
style with per-pixel ink jitter and dropout, plus geometric distortions at
generation time. The character set deliberately contains confusable clusters
(o/0 and 1/l/i differ by one or two pixels) so that word-level semantics have
something visual consistency alone cannot resolve.

The whole pipeline is a pure function of (config, master seed): every sample
derives its own generator from (seed, split, index), so generation order and
parallelism cannot change the data.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .recognizer import DEFAULT_CHARS

GLYPH_ROWS, GLYPH_COLS = 7, 5
GLYPH_ADVANCE = GLYPH_COLS + 1  # 1px spacing
MAX_WORD_LEN = 10

DATASET_MAGIC = b"SQCD"
DATASET_VERSION = 1

DOMAINS = ("synthetic", "real")
CONDITIONS = ("clean", "distorted", "occluded")

SPLIT_FILES = {
    "labeled_train": "labeled_train.bin",
    "unlabeled_train": "unlabeled_train.bin",
    "test_clean": "test_clean.bin",
    "test_distorted": "test_distorted.bin",
    "test_occluded": "test_occluded.bin",
}

# 5x7 bitmaps; '#' is ink. The o/0 pair differs by one pixel, 1/l/i are
# near-identical vertical bars: the confusable clusters the semantics loss
# is supposed to sort out.
_GLYPHS = {
    "a": ".###. #...# #...# ##### #...# #...# #...#",
    "b": "####. #...# #...# ####. #...# #...# ####.",
    "c": ".###. #...# #.... #.... #.... #...# .###.",
    "d": "###.. #..#. #...# #...# #...# #..#. ###..",
    "e": "##### #.... #.... ####. #.... #.... #####",
    "f": "##### #.... #.... ####. #.... #.... #....",
    "g": ".###. #...# #.... #.### #...# #...# .###.",
    "h": "#...# #...# #...# ##### #...# #...# #...#",
    "i": "..#.. ..... ..#.. ..#.. ..#.. ..#.. ..#..",
    "j": "....# ....# ....# ....# ....# #...# .###.",
    "k": "#...# #..#. #.#.. ##... #.#.. #..#. #...#",
    "l": "..#.. ..#.. ..#.. ..#.. ..#.. ..#.. ..#..",
    "m": "#...# ##.## #.#.# #.#.# #...# #...# #...#",
    "n": "#...# ##..# ##..# #.#.# #..## #..## #...#",
    "o": ".###. #...# #...# #...# #...# #...# .###.",
    "p": "####. #...# #...# ####. #.... #.... #....",
    "q": ".###. #...# #...# #...# #.#.# #..#. .##.#",
    "r": "####. #...# #...# ####. #.#.. #..#. #...#",
    "s": ".#### #.... #.... .###. ....# ....# ####.",
    "t": "##### ..#.. ..#.. ..#.. ..#.. ..#.. ..#..",
    "u": "#...# #...# #...# #...# #...# #...# .###.",
    "v": "#...# #...# #...# #...# .#.#. .#.#. ..#..",
    "w": "#...# #...# #...# #.#.# #.#.# ##.## #...#",
    "x": "#...# .#.#. ..#.. ..#.. ..#.. .#.#. #...#",
    "y": "#...# .#.#. ..#.. ..#.. ..#.. ..#.. ..#..",
    "z": "##### ....# ...#. ..#.. .#... #.... #####",
    "0": ".###. #...# #..## #...# #...# #...# .###.",
    "1": ".##.. ..#.. ..#.. ..#.. ..#.. ..#.. ..#..",
    "2": ".###. #...# ....# ..##. .#... #.... #####",
    "3": "####. ....# ....# .###. ....# ....# ####.",
    "4": "#...# #...# #...# ##### ....# ....# ....#",
    "5": "##### #.... #.... ####. ....# ....# ####.",
    "6": ".###. #.... #.... ####. #...# #...# .###.",
    "7": "##### ....# ...#. ..#.. ..#.. ..#.. ..#..",
    "8": ".###. #...# #...# .###. #...# #...# .###.",
    "9": ".###. #...# #...# .#### ....# ....# .###.",
}

CONFUSABLE_CHARS = "o01li"


def _parse_glyph(spec):
    rows = spec.split()
    assert len(rows) == GLYPH_ROWS and all(len(r) == GLYPH_COLS for r in rows)
    return np.array([[c == "#" for c in row] for row in rows])


@dataclass(frozen=True)
class GlyphFont:
    """Per-character binary bitmaps plus a rendering style."""

    style: str  # "clean" or "slanted_noisy"
    bitmaps: dict

    def __post_init__(self):
        missing = [c for c in DEFAULT_CHARS if c not in self.bitmaps]
        if missing:
            raise ValueError(f"font is missing glyphs for {missing}")


_BITMAPS = {c: _parse_glyph(s) for c, s in _GLYPHS.items()}


def clean_font():
    return GlyphFont(style="clean", bitmaps=_BITMAPS)


def real_font():
    return GlyphFont(style="slanted_noisy", bitmaps=_BITMAPS)


# slant: top rows shifted right, like a cheap italic; applied to a random
# subset of "real" words so that domain has a learnable foothold
_SLANT = [(GLYPH_ROWS - 1 - r) // 4 for r in range(GLYPH_ROWS)]
_SLANT_PROB = 0.65
_NOISY_INK_JITTER = 0.25
_NOISY_DROPOUT = 0.03


class Sample:
    """One rendered word image with its provenance tags.

    The ground-truth string of sealed (unlabeled) samples is reachable only
    through evaluation_label(); their .label reads as None.
    """

    __slots__ = ("image", "domain", "condition", "seed", "sealed", "_truth")

    def __init__(self, image, truth, domain, condition, seed, sealed=False):
        self.image = image
        self._truth = truth
        self.domain = domain
        self.condition = condition
        self.seed = seed
        self.sealed = sealed

    @property
    def label(self):
        return None if self.sealed else self._truth


def evaluation_label(sample):
    """Evaluation-only access to a sample's ground truth, sealed or not."""
    return sample._truth


@dataclass
class Dataset:
    samples: list
    height: int = 16
    width: int = 64

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, i):
        return self.samples[i]


@dataclass(frozen=True)
class AugmentSpec:
    """Magnitude ranges for the weak (photometric) and strong pipelines."""

    brightness: float = 0.1
    contrast: float = 0.2
    rotation_deg: float = 10.0
    translate_px: float = 2.0
    shear: float = 0.2
    blur_prob: float = 0.5
    noise_sigma: float = 0.1
    occlusion_prob: float = 0.3
    occlusion_area: float = 0.3

    @classmethod
    def identity(cls):
        return cls(brightness=0.0, contrast=0.0, rotation_deg=0.0, translate_px=0.0,
                   shear=0.0, blur_prob=0.0, noise_sigma=0.0, occlusion_prob=0.0)


WEAK_DEFAULT = AugmentSpec()
STRONG_DEFAULT = AugmentSpec()

# baked into every "real"-domain image at generation time; the knob that
# controls how far the unlabeled/test domain sits from the labeled one
REAL_DISTORTION = AugmentSpec(rotation_deg=4.0, translate_px=1.0, shear=0.1,
                              blur_prob=0.25, noise_sigma=0.04, occlusion_prob=0.0)


def render_word(word, font, rng, height=16, width=64):
    """Rasterize a word left-to-right, glyphs 1px apart, centered vertically."""
    if not 1 <= len(word) <= MAX_WORD_LEN:
        raise ValueError(f"render_word: word length {len(word)} outside 1..{MAX_WORD_LEN}")
    noisy = font.style == "slanted_noisy"
    needed = 1 + len(word) * GLYPH_ADVANCE - 1 + (max(_SLANT) if noisy else 0)
    if needed > width:
        raise ValueError(f"render_word: {word!r} needs {needed} columns, canvas has {width}")
    slanted = noisy and rng.random() < _SLANT_PROB
    img = np.zeros((height, width))
    top = (height - GLYPH_ROWS) // 2
    x = 1
    for ch in word:
        try:
            bitmap = font.bitmaps[ch]
        except KeyError:
            raise ValueError(f"render_word: no glyph for {ch!r}") from None
        for r in range(GLYPH_ROWS):
            shift = _SLANT[r] if slanted else 0
            for c in range(GLYPH_COLS):
                if not bitmap[r, c]:
                    continue
                if noisy:
                    if rng.random() < _NOISY_DROPOUT:
                        continue
                    ink = 1.0 - _NOISY_INK_JITTER * rng.random()
                else:
                    ink = 1.0
                img[top + r, x + c + shift] = ink
        x += GLYPH_ADVANCE
    return img


def weak_augment(image, rng, spec=WEAK_DEFAULT):
    """Photometric-only view: contrast scale and brightness shift, clamped."""
    a = rng.uniform(1.0 - spec.contrast, 1.0 + spec.contrast)
    b = rng.uniform(-spec.brightness, spec.brightness)
    return np.clip(a * image + b, 0.0, 1.0)


def _warp_affine(image, angle_deg, shear, tx, ty):
    """Inverse-mapped bilinear warp; exact identity at zero magnitudes."""
    if angle_deg == 0.0 and shear == 0.0 and tx == 0.0 and ty == 0.0:
        return image.copy()
    h, w = image.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    th = np.deg2rad(angle_deg)
    rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    shr = np.array([[1.0, shear], [0.0, 1.0]])
    inv = np.linalg.inv(rot @ shr)
    ys, xs = np.mgrid[0:h, 0:w]
    xr = xs - cx - tx
    yr = ys - cy - ty
    sx = inv[0, 0] * xr + inv[0, 1] * yr + cx
    sy = inv[1, 0] * xr + inv[1, 1] * yr + cy
    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    fx = sx - x0
    fy = sy - y0
    out = np.zeros_like(image)
    for dy in (0, 1):
        for dx in (0, 1):
            yy = y0 + dy
            xx = x0 + dx
            weight = (fx if dx else 1 - fx) * (fy if dy else 1 - fy)
            valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            out[valid] += weight[valid] * image[yy[valid], xx[valid]]
    return out


_BLUR_KERNEL = np.array([1.0, 2.0, 1.0]) / 4.0


def _blur3(image):
    padded = np.pad(image, 1, mode="edge")
    horiz = (padded[1:-1, :-2] * _BLUR_KERNEL[0] + padded[1:-1, 1:-1] * _BLUR_KERNEL[1]
             + padded[1:-1, 2:] * _BLUR_KERNEL[2])
    padded = np.pad(horiz, ((1, 1), (0, 0)), mode="edge")
    return padded[:-2] * _BLUR_KERNEL[0] + padded[1:-1] * _BLUR_KERNEL[1] + padded[2:] * _BLUR_KERNEL[2]


def ink_bbox(image, threshold=0.3):
    """(r0, r1, c0, c1) half-open bounding box of pixels above threshold."""
    mask = image > threshold
    if not mask.any():
        return None
    rows = np.where(mask.any(axis=1))[0]
    cols = np.where(mask.any(axis=0))[0]
    return rows[0], rows[-1] + 1, cols[0], cols[-1] + 1


def occlude(image, rng, max_area_frac=0.3):
    """Overwrite a contiguous rectangle inside the ink bounding box."""
    box = ink_bbox(image)
    if box is None:
        return image
    r0, r1, c0, c1 = box
    bh, bw = r1 - r0, c1 - c0
    area = bh * bw
    target = rng.uniform(0.4, 1.0) * max_area_frac * area
    w = int(rng.integers(1, bw + 1))
    hmax = max(1, min(bh, int(target / w)))
    h = int(rng.integers(1, hmax + 1))
    if w * h > max(1, int(max_area_frac * area)):
        w = max(1, int(max_area_frac * area / h))
    rr = int(rng.integers(r0, max(r0 + 1, r1 - h + 1)))
    cc = int(rng.integers(c0, max(c0 + 1, c1 - w + 1)))
    fill = float(rng.integers(0, 2))
    out = image.copy()
    out[rr:rr + h, cc:cc + w] = fill
    return out


def strong_augment(image, rng, spec=STRONG_DEFAULT):
    """Geometric + photometric view: rotate/translate/shear, blur, noise,
    and with some probability an occluding rectangle."""
    angle = rng.uniform(-spec.rotation_deg, spec.rotation_deg)
    shear = rng.uniform(-spec.shear, spec.shear)
    tx, ty = rng.uniform(-spec.translate_px, spec.translate_px, size=2)
    out = _warp_affine(image, angle, shear, tx, ty)
    if rng.random() < spec.blur_prob:
        out = _blur3(out)
    sigma = rng.uniform(0.0, spec.noise_sigma)
    out = out + rng.normal(0.0, 1.0, size=out.shape) * sigma
    out = np.clip(out, 0.0, 1.0)
    if rng.random() < spec.occlusion_prob:
        out = occlude(out, rng, spec.occlusion_area)
    return out


# ---------------------------------------------------------------------------
# lexicon and dataset assembly
# ---------------------------------------------------------------------------

_CONSONANTS = "bcdfghjklmnpqrstvwxz"
_VOWELS = "aeiou"


def _syllabic_word(rng):
    n = int(rng.integers(2, 5))
    parts = []
    for _ in range(n):
        parts.append(_CONSONANTS[rng.integers(len(_CONSONANTS))])
        parts.append(_VOWELS[rng.integers(len(_VOWELS))])
    if rng.random() < 0.3:
        parts.append(_CONSONANTS[rng.integers(len(_CONSONANTS))])
    return "".join(parts)[:MAX_WORD_LEN]


def _random_word(rng):
    n = int(rng.integers(1, MAX_WORD_LEN + 1))
    return "".join(DEFAULT_CHARS[i] for i in rng.integers(len(DEFAULT_CHARS), size=n))


def _confusable_word(rng):
    n = int(rng.integers(3, 9))
    chars = []
    for _ in range(n):
        if rng.random() < 0.6:
            chars.append(CONFUSABLE_CHARS[rng.integers(len(CONFUSABLE_CHARS))])
        else:
            chars.append(DEFAULT_CHARS[rng.integers(len(DEFAULT_CHARS))])
    forced = int(rng.integers(n))
    chars[forced] = CONFUSABLE_CHARS[rng.integers(len(CONFUSABLE_CHARS))]
    return "".join(chars)


def build_lexicon(size, rng):
    """Distinct words mixing pronounceable, random, and confusable-rich strings."""
    makers = (_syllabic_word, _syllabic_word, _random_word, _random_word, _confusable_word, _confusable_word)
    words = []
    seen = set()
    attempts = 0
    while len(words) < size:
        attempts += 1
        if attempts > 100 * size:
            raise ValueError(f"could not generate {size} distinct words after {attempts} attempts")
        w = makers[attempts % len(makers)](rng)
        if w and w not in seen:
            seen.add(w)
            words.append(w)
    return words


@dataclass(frozen=True)
class DataConfig:
    n_labeled: int = 2000
    n_unlabeled: int = 10000
    n_test: int = 1000
    lexicon_size: int = 1000
    holdout_fraction: float = 0.2
    seed: int = 0
    image_height: int = 16
    image_width: int = 64


def _sample_rng(master_seed, split_index, sample_index):
    return np.random.default_rng(np.random.SeedSequence((master_seed, split_index, sample_index)))


def _generate_split(config, split_index, count, words, font, domain, condition,
                    distort, always_occlude, sealed):
    samples = []
    word_arr = list(words)
    for i in range(count):
        rng = _sample_rng(config.seed, split_index, i)
        word = word_arr[int(rng.integers(len(word_arr)))]
        img = render_word(word, font, rng, config.image_height, config.image_width)
        if distort:
            img = strong_augment(img, rng, REAL_DISTORTION)
        if always_occlude:
            img = occlude(img, rng, STRONG_DEFAULT.occlusion_area)
        samples.append(Sample(img, word, domain, condition, seed=i, sealed=sealed))
    return Dataset(samples, config.image_height, config.image_width)


def make_datasets(config=None):
    """All five splits: labeled/unlabeled training plus the three test axes."""
    config = config or DataConfig()
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, 999)))
    lexicon = build_lexicon(config.lexicon_size, rng)
    order = rng.permutation(len(lexicon))
    n_hold = int(round(config.holdout_fraction * len(lexicon)))
    test_words = [lexicon[i] for i in order[:n_hold]]
    train_words = [lexicon[i] for i in order[n_hold:]]

    return {
        "labeled_train": _generate_split(config, 0, config.n_labeled, train_words, clean_font(),
                                         "synthetic", "clean", False, False, False),
        "unlabeled_train": _generate_split(config, 1, config.n_unlabeled, train_words, real_font(),
                                           "real", "distorted", True, False, True),
        "test_clean": _generate_split(config, 2, config.n_test, test_words, real_font(),
                                      "real", "clean", False, False, False),
        "test_distorted": _generate_split(config, 3, config.n_test, test_words, real_font(),
                                          "real", "distorted", True, False, False),
        "test_occluded": _generate_split(config, 4, config.n_test, test_words, real_font(),
                                         "real", "occluded", True, True, False),
    }


# ---------------------------------------------------------------------------
# serialization: magic, version, count, dims, then per-sample records
# ---------------------------------------------------------------------------

def save_dataset(dataset, path):
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<I", DATASET_VERSION))
        fh.write(struct.pack("<I", len(dataset)))
        fh.write(struct.pack("<HH", dataset.height, dataset.width))
        for s in dataset.samples:
            label = s._truth.encode()
            if len(label) > 255:
                raise ValueError(f"label too long to serialize: {s._truth!r}")
            fh.write(struct.pack("<BBB", DOMAINS.index(s.domain), CONDITIONS.index(s.condition), len(label)))
            fh.write(label)
            fh.write(np.round(s.image * 255.0).astype(np.uint8).tobytes())


def load_dataset(path, sealed=False):
    with open(path, "rb") as fh:
        blob = fh.read()

    def fail(offset, why):
        raise ValueError(f"dataset {path}: {why} at byte {offset}")

    if blob[:4] != DATASET_MAGIC:
        fail(0, "bad magic")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != DATASET_VERSION:
        fail(4, f"unsupported version {version}")
    (count,) = struct.unpack_from("<I", blob, 8)
    height, width = struct.unpack_from("<HH", blob, 12)
    pos = 16
    pixels = height * width
    samples = []
    for i in range(count):
        if pos + 3 > len(blob):
            fail(pos, f"truncated header for sample {i}")
        domain_id, condition_id, label_len = struct.unpack_from("<BBB", blob, pos)
        pos += 3
        if domain_id >= len(DOMAINS) or condition_id >= len(CONDITIONS):
            fail(pos - 3, f"bad domain/condition tag for sample {i}")
        if pos + label_len + pixels > len(blob):
            fail(pos, f"truncated payload for sample {i}")
        label = blob[pos:pos + label_len].decode()
        pos += label_len
        img = np.frombuffer(blob[pos:pos + pixels], dtype=np.uint8).reshape(height, width) / 255.0
        pos += pixels
        samples.append(Sample(img, label, DOMAINS[domain_id], CONDITIONS[condition_id], seed=i, sealed=sealed))
    if pos != len(blob):
        fail(pos, f"{len(blob) - pos} trailing bytes")
    return Dataset(samples, height, width)


def save_all(datasets, out_dir):
    out_dir.mkdir(parents=True, exist_ok=True)
    for split, fname in SPLIT_FILES.items():
        save_dataset(datasets[split], out_dir / fname)


def load_all(data_dir):
    out = {}
    for split, fname in SPLIT_FILES.items():
        out[split] = load_dataset(data_dir / fname, sealed=(split == "unlabeled_train"))
    return out
