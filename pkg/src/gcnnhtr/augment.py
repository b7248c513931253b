#!/usr/bin/env python3

"""
    augment.py
    ~~~~~~~~~~

    Training-set augmentation, lined-paper backgrounds and a procedural
    line-image synthesizer.

    The six transforms are applied one at a time, each with a fixed
    magnitude, so the augmented set is exactly 7 times the original:

      1. contrast         pixel <- pixel ** gamma
      2. sign flip        pixel <- 1 - pixel
      3. long scale       width <- width * scale_long
      4. short scale      width <- width * scale_short
      5. width dilation   ink grows along x (1 x k element)
      6. height dilation  ink grows along y (k x 1 element)

    (c) BSD 3-clause.
"""


from .exc import AugmentError, ConfigError, PreprocessError, VocabularyError
from .preprocess import LineImage, HEIGHT, resize_width, read_pgm, write_pgm
from .ctc import Vocabulary

import os
import codecs
import typing
import functools
import dataclasses

import numpy as np
from PIL import Image, ImageDraw
from scipy.ndimage import minimum_filter

__all__ = [
    "LabeledSample",
    "AugmentConfig",
    "GridConfig",
    "TRANSFORMS",
    "augment_sample",
    "expand_training_set",
    "add_grid_background",
    "grid_phase",
    "GlyphBook",
    "synth_line",
    "ManifestEntry",
    "read_manifest",
    "write_manifest",
    "load_samples",
    "save_samples",
]

TRANSFORMS: typing.Dict[int, str] = {
    1: "contrast",
    2: "sign_flip",
    3: "long_scale",
    4: "short_scale",
    5: "width_dilation",
    6: "height_dilation",
}


@dataclasses.dataclass
class LabeledSample:
    image: LineImage
    text: str


@dataclasses.dataclass
class AugmentConfig:
    contrast_gamma: float = 2.0
    scale_long: float = 1.25
    scale_short: float = 0.8
    dilation_width: float = 3.0
    dilation_height: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if not 0.5 <= self.contrast_gamma <= 2.0:
            raise ConfigError("contrast_gamma must lie in [0.5, 2.0], got {}".format(self.contrast_gamma))
        if self.scale_long <= 0 or self.scale_short <= 0:
            raise ConfigError("Scale factors must be positive")
        if self.dilation_width < 1 or self.dilation_height < 1:
            raise ConfigError("Dilation sizes must be >= 1")


@dataclasses.dataclass
class GridConfig:
    line_spacing_px: int = 16
    line_intensity: float = 0.6
    orientation: str = "horizontal"
    phase: int = 0

    def __post_init__(self):
        if self.line_spacing_px < 4:
            raise ConfigError("Grid spacing must be >= 4, got {}".format(self.line_spacing_px))
        if not 0.0 <= self.line_intensity <= 1.0:
            raise ConfigError("Grid intensity must lie in [0, 1], got {}".format(self.line_intensity))
        if self.orientation not in ("horizontal", "both"):
            raise ConfigError("Grid orientation must be 'horizontal' or 'both'")


def _dilate(pixels: np.ndarray, size: typing.Tuple[int, int]) -> np.ndarray:
    # ink is dark, so growing it is a minimum filter over the background
    return minimum_filter(pixels, size=size, mode="constant", cval=1.0)


def _scaled(img: LineImage, factor: float) -> LineImage:
    width = int(np.floor(img.width * factor + 0.5))
    if width < 1:
        raise AugmentError("Scaling width {} by {} leaves no pixels".format(img.width, factor))
    return resize_width(img, width)


def augment_sample(sample: LabeledSample, which: int, cfg: AugmentConfig) -> LabeledSample:
    """Apply transform `which` (1..6) to `sample`; the label is kept"""
    pixels = sample.image.pixels
    if which == 1:
        image = LineImage(pixels ** cfg.contrast_gamma)
    elif which == 2:
        image = LineImage(1.0 - pixels)
    elif which == 3:
        image = _scaled(sample.image, cfg.scale_long)
    elif which == 4:
        image = _scaled(sample.image, cfg.scale_short)
    elif which == 5:
        image = LineImage(_dilate(pixels, (1, max(1, int(round(cfg.dilation_width))))))
    elif which == 6:
        image = LineImage(_dilate(pixels, (max(1, int(round(cfg.dilation_height))), 1)))
    else:
        raise AugmentError("Unknown transform {}, expected 1..6".format(which))
    return LabeledSample(image, sample.text)


def expand_training_set(samples: typing.Sequence[LabeledSample], cfg: AugmentConfig) -> typing.List[LabeledSample]:
    """Originals followed by one copy per transform: 7 times the input"""
    out = list(samples)
    for which in sorted(TRANSFORMS):
        out.extend(augment_sample(s, which, cfg) for s in samples)
    return out


def add_grid_background(img: LineImage, grid: GridConfig) -> LineImage:
    """Composite printed ruling lines under the ink, darkest wins"""
    pattern = np.ones_like(img.pixels)
    rows = (np.arange(img.height) - grid.phase) % grid.line_spacing_px == 0
    pattern[rows, :] = grid.line_intensity
    if grid.orientation == "both":
        cols = (np.arange(img.width) - grid.phase) % grid.line_spacing_px == 0
        pattern[:, cols] = grid.line_intensity
    return LineImage(np.minimum(img.pixels, pattern))


def grid_phase(run_seed: int, index: int, spacing: int) -> int:
    """Per-sample grid offset derived from (run_seed, index)"""
    rng = np.random.default_rng(np.random.SeedSequence([run_seed, index]))
    return int(rng.integers(0, spacing))


# synthetic lines

GLYPH_WIDTH = 12
ADVANCE = 14
MARGIN = 4
INK_TOP, INK_BOTTOM = 6, 25


class GlyphBook:
    """One random polyline prototype per vocabulary symbol.

    Prototypes are drawn from `glyph_seed` and redrawn until all of them
    rasterize to pairwise different bitmaps.
    """

    def __init__(self, vocab: Vocabulary, glyph_seed: int=0, max_attempts: int=100):
        self.vocab = vocab
        rng = np.random.default_rng(glyph_seed)
        self.strokes: typing.Dict[str, typing.List[typing.Tuple[int, int]]] = {}
        seen: typing.Dict[bytes, str] = {}
        for symbol in vocab.symbols:
            for _ in range(max_attempts):
                stroke = self._random_stroke(rng)
                key = self.rasterize(stroke).tobytes()
                if key not in seen:
                    break
            else:
                raise AugmentError("Cannot generate a distinct glyph for {!r}".format(symbol))
            seen[key] = symbol
            self.strokes[symbol] = stroke

    @staticmethod
    def _random_stroke(rng: np.random.Generator) -> typing.List[typing.Tuple[int, int]]:
        points = int(rng.integers(3, 7))
        xs = rng.integers(1, GLYPH_WIDTH - 1, size=points)
        ys = rng.integers(INK_TOP, INK_BOTTOM + 1, size=points)
        return [(int(x), int(y)) for x, y in zip(xs, ys)]

    @staticmethod
    def rasterize(stroke, thickness: int=2) -> np.ndarray:
        canvas = Image.new("L", (GLYPH_WIDTH, HEIGHT), 255)
        ImageDraw.Draw(canvas).line(stroke, fill=0, width=thickness)
        return np.asarray(canvas, dtype=np.float64) / 255.0

    def prototype(self, symbol: str) -> np.ndarray:
        return self.rasterize(self.strokes[symbol])


@functools.lru_cache(maxsize=8)
def _glyph_book(symbols: typing.Tuple[str, ...], glyph_seed: int) -> GlyphBook:
    return GlyphBook(Vocabulary(symbols), glyph_seed)


def synth_line(text: str, vocab: Vocabulary, seed: int, glyph_seed: int=0) -> LabeledSample:
    """Render `text` with the vocabulary's glyphs, jittered by `seed`"""
    unknown = [ch for ch in text if ch not in vocab]
    if unknown:
        raise VocabularyError("Unknown codepoint {!r}".format(unknown[0]))
    book = _glyph_book(vocab.symbols, glyph_seed)
    rng = np.random.default_rng(seed)
    thickness = int(rng.integers(2, 4))
    width = max(HEIGHT, 2 * MARGIN + ADVANCE * len(text))
    canvas = Image.new("L", (width, HEIGHT), 255)
    draw = ImageDraw.Draw(canvas)
    for i, ch in enumerate(text):
        x0 = MARGIN + i * ADVANCE + int(rng.integers(-1, 2))
        draw.line([(x + x0, y) for x, y in book.strokes[ch]], fill=0, width=thickness)
    return LabeledSample(LineImage(np.asarray(canvas, dtype=np.float64) / 255.0), text)


# dataset manifests


@dataclasses.dataclass
class ManifestEntry:
    path: str
    text: str


def read_manifest(filepath: str) -> typing.List[ManifestEntry]:
    """Parse `relative/path.pgm<TAB>transcription` lines; paths are
    resolved relative to the manifest's directory.
    """
    base = os.path.dirname(os.path.abspath(filepath))
    entries = []
    lineno = 0
    try:
        with codecs.open(filepath, encoding="utf-8") as fp:
            for lineno, line in enumerate(fp, 1):
                line = line.rstrip("\r\n")
                if not line:
                    continue
                if "\t" not in line:
                    raise ConfigError("{}:{}: missing TAB separator".format(filepath, lineno))
                path, text = line.split("\t", 1)
                if "\t" in text:
                    raise ConfigError("{}:{}: TAB inside transcription".format(filepath, lineno))
                entries.append(ManifestEntry(os.path.join(base, path), text))
    except UnicodeDecodeError as e:
        raise ConfigError("{}:{}: not valid UTF-8 ({})".format(filepath, lineno + 1, e.reason))
    except OSError as e:
        raise ConfigError("Cannot read manifest {}: {}".format(filepath, e.strerror or e))
    return entries


def write_manifest(filepath: str, entries: typing.Iterable[ManifestEntry]) -> None:
    base = os.path.dirname(os.path.abspath(filepath))
    with codecs.open(filepath, "w", encoding="utf-8") as fp:
        for entry in entries:
            if "\t" in entry.text or "\n" in entry.text:
                raise ConfigError("Transcription {!r} contains TAB or newline".format(entry.text))
            path = os.path.relpath(os.path.abspath(entry.path), base) if os.path.isabs(entry.path) else entry.path
            fp.write("{}\t{}\n".format(path, entry.text))


def load_samples(filepath: str) -> typing.List[LabeledSample]:
    samples = []
    for entry in read_manifest(filepath):
        try:
            samples.append(LabeledSample(read_pgm(entry.path), entry.text))
        except PreprocessError as e:
            raise PreprocessError("{} (listed in {})".format(e, filepath))
    return samples


def save_samples(directory: str, samples: typing.Sequence[LabeledSample], manifest: str="manifest.tsv",
                 prefix: str="line") -> str:
    """Write samples as PGM files plus a manifest; return the manifest path"""
    os.makedirs(directory, exist_ok=True)
    entries = []
    for i, sample in enumerate(samples):
        name = "{}_{:05d}.pgm".format(prefix, i)
        write_pgm(os.path.join(directory, name), sample.image)
        entries.append(ManifestEntry(name, sample.text))
    path = os.path.join(directory, manifest)
    write_manifest(path, entries)
    return path
