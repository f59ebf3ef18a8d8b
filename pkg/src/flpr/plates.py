"""German-format plate strings, the token vocabulary, and clean plate rendering."""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from . import font

LETTERS = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
UMLAUTS = "ÄÖÜ"
DIGITS = "0123456789"
SEPARATOR = "-"

# legal glyph sets per plate part
DISTRICT_GLYPHS = LETTERS + UMLAUTS
MIDDLE_GLYPHS = LETTERS
LEADING_DIGITS = DIGITS[1:]

MAX_GLYPHS = 9
MAX_LABEL_LEN = MAX_GLYPHS + 2  # SOS + glyphs + EOS

PLATE_WIDTH = 180
PLATE_HEIGHT = 40
BACKGROUND = 0.9
INK = 0.1


class UnknownGlyph(ValueError):
    pass


class TextTooWide(ValueError):
    pass


class InvalidPlate(ValueError):
    pass


@dataclass(frozen=True)
class Alphabet:
    """Dense glyph ids followed by the SOS, EOS and PAD specials."""

    glyphs: str

    def __post_init__(self):
        if len(set(self.glyphs)) != len(self.glyphs):
            raise ValueError("alphabet glyphs must be unique")

    @classmethod
    def german(cls, size: int = 40) -> Alphabet:
        """40 glyphs (A-Z, umlauts, digits, '-') or 41 with an extra blank."""
        base = LETTERS + UMLAUTS + DIGITS + SEPARATOR
        if size == 40:
            return cls(base)
        if size == 41:
            return cls(base + " ")
        raise ValueError(f"German alphabet has 40 or 41 glyphs, not {size}")

    @cached_property
    def _index(self) -> dict[str, int]:
        return {c: i for i, c in enumerate(self.glyphs)}

    @property
    def sos(self) -> int:
        return len(self.glyphs)

    @property
    def eos(self) -> int:
        return len(self.glyphs) + 1

    @property
    def pad(self) -> int:
        return len(self.glyphs) + 2

    @property
    def vocab_size(self) -> int:
        return len(self.glyphs) + 3

    def id_of(self, char: str) -> int:
        try:
            return self._index[char]
        except KeyError:
            raise UnknownGlyph(f"glyph {char!r} is not in the alphabet") from None

    def glyph_of(self, token: int) -> str:
        if not 0 <= token < len(self.glyphs):
            raise UnknownGlyph(f"token {token} is not a glyph id")
        return self.glyphs[token]


GERMAN = Alphabet.german()

_PLATE_RE = re.compile(r"^([A-ZÄÖÜ]{1,3})-([A-Z]{1,2})-([1-9][0-9]{0,3})$")


@dataclass(frozen=True)
class PlateString:
    district: str
    middle: str
    number: str

    def __post_init__(self):
        if not _PLATE_RE.match(self.text):
            raise InvalidPlate(f"not a German-format plate: {self.text!r}")
        if len(self.text) > MAX_GLYPHS:
            raise InvalidPlate(f"plate text longer than {MAX_GLYPHS}: {self.text!r}")

    @property
    def text(self) -> str:
        return SEPARATOR.join((self.district, self.middle, self.number))

    @property
    def n_chars(self) -> int:
        """Letters and digits, separators excluded."""
        return len(self.district) + len(self.middle) + len(self.number)

    @classmethod
    def parse(cls, text: str) -> PlateString:
        m = _PLATE_RE.match(text)
        if not m:
            raise InvalidPlate(f"not a German-format plate: {text!r}")
        return cls(*m.groups())

    def __str__(self) -> str:
        return self.text


def _rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(int(seed) & 0xFFFF_FFFF_FFFF_FFFF)


def sample_plate_string(seed: int, min_chars: int = 3, max_chars: int = 7) -> PlateString:
    """Random plate, deterministic in ``seed``.

    District (1-3 letters incl. umlauts), middle (1-2 letters) and number
    (1-4 digits, no leading zero) lengths are uniform over the ranges that keep
    the letter+digit count within [min_chars, max_chars]; characters are
    uniform over each position's legal set.
    """
    if not 3 <= min_chars <= max_chars <= MAX_GLYPHS - 2:
        raise ValueError(f"character count range [{min_chars}, {max_chars}] not within [3, 7]")
    rng = _rng(seed)
    while True:
        n_d = int(rng.integers(1, 4))
        n_m = int(rng.integers(1, 3))
        lo = max(1, min_chars - n_d - n_m)
        hi = min(4, max_chars - n_d - n_m)
        if lo <= hi:
            break
    n_n = int(rng.integers(lo, hi + 1))

    def pick(pool: str, n: int) -> str:
        return "".join(pool[i] for i in rng.integers(0, len(pool), size=n))

    number = pick(LEADING_DIGITS, 1) + pick(DIGITS, n_n - 1)
    return PlateString(pick(DISTRICT_GLYPHS, n_d), pick(MIDDLE_GLYPHS, n_m), number)


def auto_scale(width: int, height: int) -> int:
    """Largest integer glyph scale at which a 9-glyph plate fits the canvas."""
    s_w = (width - 2) // (MAX_GLYPHS * font.CELL_W + MAX_GLYPHS - 1)
    s_h = (height - 2) // font.CELL_H
    return max(1, min(s_w, s_h))


def render_text(text: str, width: int = PLATE_WIDTH, height: int = PLATE_HEIGHT, scale: int | None = None) -> np.ndarray:
    """Render glyphs left to right from a fixed left margin, vertically centred.

    Returns an (height, width) array in [0, 1].
    """
    s = auto_scale(width, height) if scale is None else scale
    cw, ch = font.CELL_W * s, font.CELL_H * s
    total = len(text) * cw + max(len(text) - 1, 0) * s
    if total > width - 2 or ch > height - 2:
        raise TextTooWide(f"{len(text)} glyphs at scale {s} need {total}x{ch} px, canvas is {width}x{height}")
    img = np.full((height, width), BACKGROUND)
    margin = (width - auto_scale(width, height) * (MAX_GLYPHS * (font.CELL_W + 1) - 1)) // 2
    x0 = max(1, min(margin, width - 1 - total))
    y0 = (height - ch) // 2
    for i, char in enumerate(text):
        cell = np.kron(font.glyph(char), np.ones((s, s), dtype=bool))
        x = x0 + i * (cw + s)
        img[y0:y0 + ch, x:x + cw][cell] = INK
    return img


def render_plate(p: PlateString, width: int = PLATE_WIDTH, height: int = PLATE_HEIGHT, scale: int | None = None) -> np.ndarray:
    return render_text(p.text, width, height, scale)


def check_gray_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or min(img.shape) < 1:
        raise ValueError(f"gray image must be a non-empty 2-d array, got shape {img.shape}")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("gray image values must lie in [0, 1]")
    return img


def encode_label(p: PlateString | str, alphabet: Alphabet = GERMAN, max_len: int = MAX_LABEL_LEN) -> np.ndarray:
    """[SOS, glyph ids..., EOS] right-padded with PAD to ``max_len``."""
    text = p.text if isinstance(p, PlateString) else p
    if len(text) + 2 > max_len:
        raise TextTooWide(f"label {text!r} does not fit {max_len} tokens")
    ids = [alphabet.sos] + [alphabet.id_of(c) for c in text] + [alphabet.eos]
    ids += [alphabet.pad] * (max_len - len(ids))
    return np.array(ids, dtype=np.int64)


def decode_label(ids, alphabet: Alphabet = GERMAN) -> str:
    """Glyphs up to the first EOS; SOS and PAD are skipped."""
    out = []
    for t in np.asarray(ids).tolist():
        if t == alphabet.eos:
            break
        if t in (alphabet.sos, alphabet.pad):
            continue
        out.append(alphabet.glyph_of(t))
    return "".join(out)


def write_pgm(path: str | Path, img: np.ndarray) -> None:
    """Binary P5 PGM, maxval 255, row-major."""
    img = check_gray_image(img)
    h, w = img.shape
    data = np.floor(img * 255 + 0.5).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = (int(f) for f in fields[1:])
    if maxval > 255:
        raise ValueError(f"{path}: 16-bit PGM not supported")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos + 1)
    return pixels.reshape(h, w) / maxval
