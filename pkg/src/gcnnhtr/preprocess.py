#!/usr/bin/env python3

"""
    preprocess.py
    ~~~~~~~~~~~~~

    Line-image normalization and the sliding-window front end.

    Images are grayscale, 0 = black ink, 1 = white background. A line is
    resized to 32px height (aspect ratio preserved, bilinear), right-padded
    with background to a multiple of 32 and cut into 32x32 windows with a
    stride of 4px. The window index is the time axis of every recognizer.

    (c) BSD 3-clause.
"""


from .exc import PreprocessError

import typing
import dataclasses

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from PIL import Image

__all__ = [
    "HEIGHT",
    "WINDOW",
    "STRIDE",
    "LineImage",
    "FrameSequence",
    "normalize_height",
    "sliding_windows",
    "frame_count",
    "prepare",
    "reconstruct",
    "read_pgm",
    "write_pgm",
    "resize_width",
]

HEIGHT = 32
WINDOW = 32
STRIDE = 4

# intensities live on a 2**-24 grid, where 1 - p is exact
LEVELS = float(2 ** 24)


@dataclasses.dataclass
class LineImage:
    """Grayscale image with intensities in [0, 1]"""
    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.rint(np.asarray(self.pixels, dtype=np.float64) * LEVELS) / LEVELS
        if self.pixels.ndim != 2 or self.pixels.size == 0:
            raise PreprocessError("Degenerate image of shape {}".format(self.pixels.shape))
        if not (np.all(self.pixels >= 0.0) and np.all(self.pixels <= 1.0)):
            raise PreprocessError("Pixels must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def copy(self) -> 'LineImage':
        return LineImage(self.pixels.copy())


@dataclasses.dataclass
class FrameSequence:
    frames: np.ndarray
    source_width: int

    @property
    def steps(self) -> int:
        return self.frames.shape[0]


def _resample(pixels: np.ndarray, height: int, width: int) -> np.ndarray:
    img = Image.fromarray(pixels.astype(np.float32))
    out = np.asarray(img.resize((width, height), Image.Resampling.BILINEAR), dtype=np.float64)
    return np.clip(out, 0.0, 1.0)


def normalize_height(img: LineImage) -> LineImage:
    """Scale to 32px height, then pad the width with background up to the
    next multiple of 32 (at least 32).
    """
    h, w = img.height, img.width
    if h == HEIGHT and w % WINDOW == 0:
        return img.copy()
    if h == HEIGHT:
        pixels = img.pixels
    else:
        width = max(1, int(np.floor(w * HEIGHT / h + 0.5)))
        pixels = _resample(img.pixels, HEIGHT, width)
    padded_width = max(WINDOW, -(-pixels.shape[1] // WINDOW) * WINDOW)
    out = np.ones((HEIGHT, padded_width))
    out[:, :pixels.shape[1]] = pixels
    return LineImage(out)


def frame_count(width: int) -> int:
    """Number of windows of a normalized image of the given width"""
    return (width - WINDOW) // STRIDE + 1


def sliding_windows(img: LineImage) -> FrameSequence:
    """Cut a normalized image into overlapping 32x32 frames, stride 4"""
    if img.height != HEIGHT or img.width % WINDOW or img.width < WINDOW:
        raise PreprocessError("Image of {}x{} is not normalized".format(img.height, img.width))
    frames = sliding_window_view(img.pixels, (HEIGHT, WINDOW))[0, ::STRIDE]
    return FrameSequence(frames[:, None, :, :].copy(), img.width)


def prepare(img: LineImage) -> FrameSequence:
    return sliding_windows(normalize_height(img))


def reconstruct(seq: FrameSequence) -> np.ndarray:
    """Average the frames back into image coordinates"""
    total = np.zeros((HEIGHT, seq.source_width))
    hits = np.zeros((HEIGHT, seq.source_width))
    for t in range(seq.steps):
        total[:, t * STRIDE:t * STRIDE + WINDOW] += seq.frames[t, 0]
        hits[:, t * STRIDE:t * STRIDE + WINDOW] += 1
    return total / hits


def resize_width(img: LineImage, width: int) -> LineImage:
    """Bilinear horizontal stretch keeping the height"""
    if width < 1:
        raise PreprocessError("Resulting width {} < 1".format(width))
    if width == img.width:
        return img.copy()
    return LineImage(_resample(img.pixels, img.height, width))


def read_pgm(filepath: str) -> LineImage:
    """Read an 8-bit grayscale PGM (P5) file, mapping v to v/255"""
    try:
        with Image.open(filepath) as im:
            if im.mode != "L":
                raise PreprocessError("{} is not an 8-bit grayscale image ({})".format(filepath, im.mode))
            pixels = np.asarray(im, dtype=np.float64) / 255.0
    except OSError as e:
        raise PreprocessError("Cannot read {}: {}".format(filepath, e))
    return LineImage(pixels)


def write_pgm(filepath: str, img: LineImage) -> None:
    """Write `img` as binary PGM, quantized to round(255 * v)"""
    data = np.clip(np.rint(img.pixels * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data).save(filepath, format="PPM")
