"""Procedural glyph data: radical stamps, layout-driven composition, splits.

Radicals are deterministic line-stroke bitmaps so composed glyphs carry
learnable local structure.  Composition recurses over the formation tree,
assigning each child the sub-rectangle of its azimuth inside its parent's
rectangle; surround operators draw the outer component as a frame around
the inner rectangle, and overlaid components share the full rectangle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ids
from .data import CharEntry, GlyphDataset, write_dataset
from .ids import FormationTree, FORMATION_BY_ALIAS, Operator, Radical

STAMP_PX = 16
CANVAS_PX = 32
MIN_STAMP_INK = 8


class SynthError(Exception):
    pass


class MissingStamp(SynthError):
    pass


class InsufficientVocabulary(SynthError):
    pass


# --- radical stamps -----------------------------------------------------


def _draw_line(canvas: np.ndarray, x0: float, y0: float, x1: float, y1: float) -> None:
    steps = int(max(abs(x1 - x0), abs(y1 - y0)) * 2) + 2
    xs = np.clip(np.round(np.linspace(x0, x1, steps)).astype(int), 0, canvas.shape[1] - 1)
    ys = np.clip(np.round(np.linspace(y0, y1, steps)).astype(int), 0, canvas.shape[0] - 1)
    canvas[ys, xs] = True


def render_radical(rid: int, seed: int, salt: int = 0) -> np.ndarray:
    """Deterministic (STAMP_PX, STAMP_PX) boolean stroke bitmap."""
    if rid < 0:
        raise SynthError(f"negative radical id {rid}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, rid, salt]))
    canvas = np.zeros((STAMP_PX, STAMP_PX), dtype=bool)
    strokes = int(rng.integers(3, 7))
    while True:
        for _ in range(strokes):
            x0, y0, x1, y1 = rng.uniform(1, STAMP_PX - 2, size=4)
            _draw_line(canvas, x0, y0, x1, y1)
        if canvas.sum() >= MIN_STAMP_INK:
            return canvas
        strokes = 1  # top up until enough ink


def make_stamps(num: int, seed: int) -> dict[int, np.ndarray]:
    """Pairwise-distinct stamps for ids 0..num-1; resalts on collision."""
    stamps: dict[int, np.ndarray] = {}
    seen: set[bytes] = set()
    for rid in range(num):
        salt = 0
        while True:
            bitmap = render_radical(rid, seed, salt)
            key = bitmap.tobytes()
            if key not in seen:
                break
            salt += 1
        seen.add(key)
        stamps[rid] = bitmap
    return stamps


# --- layout -------------------------------------------------------------

Rect = tuple[int, int, int, int]  # x, y, w, h

# inner-component rectangle of each surround type, as fractions of the
# parent rect (full surround on a 32px canvas puts the inner at (8,8,16,16))
_SURROUND_INNER = {
    "fs": (0.25, 0.25, 0.5, 0.5),
    "sa": (0.25, 0.375, 0.5, 0.625),
    "sb": (0.25, 0.0, 0.5, 0.625),
    "sl": (0.375, 0.25, 0.625, 0.5),
    "sul": (0.375, 0.375, 0.625, 0.625),
    "sur": (0.0, 0.375, 0.625, 0.625),
    "sll": (0.375, 0.0, 0.625, 0.625),
}


def _split2(offset: int, extent: int) -> list[tuple[int, int]]:
    a = extent // 2
    return [(offset, a), (offset + a, extent - a)]


def _split3(offset: int, extent: int) -> list[tuple[int, int]]:
    # 11/10/11 on a 32px extent
    a = round(extent * 11 / 32)
    m = round(extent * 10 / 32)
    return [(offset, a), (offset + a, m), (offset + a + m, extent - a - m)]


def _inner_rect(alias: str, rect: Rect) -> Rect:
    x, y, w, h = rect
    fx, fy, fw, fh = _SURROUND_INNER[alias]
    return (x + round(fx * w), y + round(fy * h), round(fw * w), round(fh * h))


def child_rects(ftype: ids.FormationType, rect: Rect) -> list[Rect]:
    """Target rectangles of each child of `ftype` inside `rect`."""
    x, y, w, h = rect
    alias = ftype.alias
    if alias == "lr":
        return [(cx, y, cw, h) for cx, cw in _split2(x, w)]
    if alias == "tb":
        return [(x, cy, w, ch) for cy, ch in _split2(y, h)]
    if alias == "lmr":
        return [(cx, y, cw, h) for cx, cw in _split3(x, w)]
    if alias == "tmb":
        return [(x, cy, w, ch) for cy, ch in _split3(y, h)]
    if alias == "ov":
        return [rect, rect]
    if alias in _SURROUND_INNER:
        return [rect, _inner_rect(alias, rect)]
    raise SynthError(f"no layout for formation {alias}")


def _scale_to(bitmap: np.ndarray, w: int, h: int) -> np.ndarray:
    """Nearest-neighbor resample of a boolean bitmap to (h, w)."""
    sh, sw = bitmap.shape
    ys = (np.arange(h) * sh // h).clip(0, sh - 1)
    xs = (np.arange(w) * sw // w).clip(0, sw - 1)
    return bitmap[np.ix_(ys, xs)]


def compose_glyph(
    tree: FormationTree,
    stamps: dict[int, np.ndarray],
    canvas_px: int = CANVAS_PX,
) -> np.ndarray:
    """Render a formation tree to a (canvas_px, canvas_px) uint8 glyph."""
    canvas = np.zeros((canvas_px, canvas_px), dtype=bool)

    def draw(node: int, rect: Rect, buf: np.ndarray) -> None:
        x, y, w, h = rect
        lab = tree.labels[node]
        if isinstance(lab, Radical):
            if lab.rid not in stamps:
                raise MissingStamp(f"no stamp for radical r{lab.rid}")
            buf[y : y + h, x : x + w] |= _scale_to(stamps[lab.rid], w, h)
            return
        kids = tree.children(node)
        rects = child_rects(lab.ftype, rect)
        if lab.ftype.alias in _SURROUND_INNER:
            outer, inner = kids
            frame = np.zeros_like(buf)
            draw(outer, rect, frame)
            ix, iy, iw, ih = rects[1]
            frame[iy : iy + ih, ix : ix + iw] = False  # frame = rect minus inner
            buf |= frame
            draw(inner, rects[1], buf)
        else:
            for kid, r in zip(kids, rects):
                draw(kid, r, buf)

    draw(0, (0, 0, canvas_px, canvas_px), canvas)
    return canvas.astype(np.uint8) * 255


# --- character generation and splits -------------------------------------


@dataclass
class SynthParams:
    radicals: int = 40
    chars: int = 400
    renders: int = 20
    seed: int = 7
    max_depth: int = 3
    jitter: int = 1
    flip_prob: float = 0.02


@dataclass
class Protocol:
    kind: str   # "char_zeroshot" | "radical_zeroshot"
    value: int  # train-set size m, or the rarity threshold n

    @classmethod
    def parse(cls, text: str) -> "Protocol":
        try:
            name, value = text.split(":")
            kind = {"char-zeroshot": "char_zeroshot", "radical-zeroshot": "radical_zeroshot"}[name]
            return cls(kind, int(value))
        except (ValueError, KeyError) as e:
            raise SynthError(
                f"bad protocol {text!r}; expected char-zeroshot:m or radical-zeroshot:n"
            ) from e


def _random_tree(
    rng: np.random.Generator,
    radical_pool: np.ndarray,
    radical_weights: np.ndarray,
    max_depth: int,
) -> list[ids.IdsToken]:
    """Random preorder token list; leaves sampled with the given weights."""

    def node(depth: int) -> list[ids.IdsToken]:
        if depth >= max_depth or (depth > 0 and rng.random() < 0.55):
            rid = int(rng.choice(radical_pool, p=radical_weights))
            return [Radical(rid)]
        ftype = ids.FORMATION_TYPES[int(rng.integers(ids.NUM_FORMATION_TYPES))]
        out: list[ids.IdsToken] = [Operator(ftype)]
        for _ in range(ftype.arity):
            out.extend(node(depth + 1))
        return out

    toks = node(0)
    if len(toks) == 1:  # single radicals collide too easily; force structure
        ftype = ids.FORMATION_TYPES[int(rng.integers(ids.NUM_FORMATION_TYPES))]
        out: list[ids.IdsToken] = [Operator(ftype)]
        for _ in range(ftype.arity):
            out.extend(node(max_depth - 1))
        toks = out
    return toks


def generate_characters(
    params: SynthParams, rng: np.random.Generator, pool: np.ndarray | None = None
) -> list[list[ids.IdsToken]]:
    """Unique random characters; radical usage is skewed so some radicals
    are rare (gives the radical-zeroshot protocol something to hold out)."""
    if params.radicals < 2:
        raise InsufficientVocabulary("need at least 2 radicals")
    if pool is None:
        pool = np.arange(params.radicals)
    weights = 1.0 / (1.0 + np.arange(len(pool)))
    weights /= weights.sum()
    seen: set[str] = set()
    chars: list[list[ids.IdsToken]] = []
    attempts = 0
    while len(chars) < params.chars:
        attempts += 1
        if attempts > params.chars * 200:
            raise InsufficientVocabulary(
                f"cannot generate {params.chars} unique characters from "
                f"{len(pool)} radicals"
            )
        toks = _random_tree(rng, pool, weights, params.max_depth)
        key = ids.format_tokens(toks)
        if key in seen:
            continue
        seen.add(key)
        chars.append(toks)
    return chars


def assign_splits(
    char_tokens: list[list[ids.IdsToken]],
    protocol: Protocol,
    params: SynthParams,
    rng: np.random.Generator,
) -> tuple[list[list[ids.IdsToken]], list[str]]:
    """Split tags per character; may regenerate test characters so that
    char-zeroshot test compositions only use training-side radicals."""
    n_chars = len(char_tokens)
    if protocol.kind == "char_zeroshot":
        m = protocol.value
        if not 0 < m < n_chars:
            raise InsufficientVocabulary(
                f"char-zeroshot needs 0 < m < {n_chars}, got {m}"
            )
        tags = ["train"] * m + ["test"] * (n_chars - m)
        train_radicals = set()
        for toks in char_tokens[:m]:
            train_radicals |= {t.rid for t in toks if isinstance(t, Radical)}
        pool = np.array(sorted(train_radicals))
        seen = {ids.format_tokens(t) for t in char_tokens}
        out = list(char_tokens)
        weights = 1.0 / (1.0 + np.arange(len(pool)))
        weights /= weights.sum()
        for i in range(m, n_chars):
            rads = {t.rid for t in out[i] if isinstance(t, Radical)}
            attempts = 0
            while not rads <= train_radicals:
                attempts += 1
                if attempts > 10000:
                    raise InsufficientVocabulary(
                        "cannot cover the test split with training radicals"
                    )
                toks = _random_tree(rng, pool, weights, params.max_depth)
                key = ids.format_tokens(toks)
                if key in seen:
                    continue
                seen.add(key)
                out[i] = toks
                rads = {t.rid for t in toks if isinstance(t, Radical)}
        return out, tags

    if protocol.kind == "radical_zeroshot":
        counts: dict[int, int] = {}
        for toks in char_tokens:
            for t in toks:
                if isinstance(t, Radical):
                    counts[t.rid] = counts.get(t.rid, 0) + 1
        tags = []
        for toks in char_tokens:
            rare = any(
                counts[t.rid] < protocol.value for t in toks if isinstance(t, Radical)
            )
            tags.append("test" if rare else "train")
        if "train" not in tags or "test" not in tags:
            raise InsufficientVocabulary(
                f"radical-zeroshot:{protocol.value} yields an empty split"
            )
        return list(char_tokens), tags

    raise SynthError(f"unknown protocol kind {protocol.kind}")


def render_variant(
    base: np.ndarray, rng: np.random.Generator, jitter: int, flip_prob: float
) -> np.ndarray:
    """Jittered, noise-flipped copy of a base glyph."""
    dy, dx = rng.integers(-jitter, jitter + 1, size=2)
    out = np.roll(np.roll(base, dy, axis=0), dx, axis=1)
    flips = rng.random(out.shape) < flip_prob
    out = np.where(flips, 255 - out, out)
    return out.astype(np.uint8)


def build_dataset(out_dir: str, params: SynthParams, protocol: Protocol) -> GlyphDataset:
    """Generate and write a full dataset; byte-deterministic in (params, protocol)."""
    rng = np.random.default_rng(params.seed)
    stamps = make_stamps(params.radicals, params.seed)
    char_tokens = generate_characters(params, rng)
    char_tokens, tags = assign_splits(char_tokens, protocol, params, rng)

    vocab = {rid: f"r{rid}" for rid in range(params.radicals)}
    chars: list[CharEntry] = []
    images: dict[str, np.ndarray] = {}
    for cid, (toks, tag) in enumerate(zip(char_tokens, tags)):
        tree = ids.parse(toks, set(vocab))
        base = compose_glyph(tree, stamps)
        entry = CharEntry(cid, ids.format_tokens(toks), tag)
        for r in range(params.renders):
            rel = f"images/c{cid:05d}_{r:02d}.pgm"
            images[rel] = render_variant(base, rng, params.jitter, params.flip_prob)
            entry.images.append(rel)
        chars.append(entry)
    return write_dataset(out_dir, chars, vocab, params.seed, images)
