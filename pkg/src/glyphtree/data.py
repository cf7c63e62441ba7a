"""Dataset containers and on-disk formats: PGM images, JSONL manifest, vocab."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DataError(Exception):
    pass


@dataclass
class GlyphImage:
    pixels: np.ndarray  # (H, W) uint8 grayscale

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def write_pgm(path: str | Path, pixels: np.ndarray) -> None:
    pixels = np.asarray(pixels, dtype=np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(pixels.tobytes())


_PGM_HEADER = re.compile(rb"^P5\s+(\d+)\s+(\d+)\s+(\d+)\s")


def read_pgm(path: str | Path) -> GlyphImage:
    with open(path, "rb") as fh:
        blob = fh.read()
    m = _PGM_HEADER.match(blob)
    if not m:
        raise DataError(f"{path}: not a binary (P5) PGM file")
    w, h, maxval = (int(m.group(i)) for i in (1, 2, 3))
    if maxval != 255:
        raise DataError(f"{path}: only 8-bit PGM supported")
    data = blob[m.end() :]
    if len(data) < w * h:
        raise DataError(f"{path}: truncated pixel data")
    return GlyphImage(np.frombuffer(data[: w * h], dtype=np.uint8).reshape(h, w).copy())


@dataclass
class CharEntry:
    char_id: int
    ids_string: str          # ascii IDS text form
    split: str               # "train" | "test"
    images: list[str] = field(default_factory=list)  # paths relative to root


@dataclass
class GlyphDataset:
    root: Path
    chars: list[CharEntry]
    vocab: dict[int, str]    # radical id -> name
    seed: int

    def split_chars(self, split: str) -> list[CharEntry]:
        return [c for c in self.chars if c.split == split]

    def load_image(self, rel_path: str) -> GlyphImage:
        return read_pgm(self.root / rel_path)

    def radical_ids(self) -> set[int]:
        return set(self.vocab)


MANIFEST_NAME = "manifest.jsonl"
VOCAB_NAME = "vocab.json"
META_NAME = "dataset.json"


def write_dataset(
    root: str | Path,
    chars: list[CharEntry],
    vocab: dict[int, str],
    seed: int,
    images: dict[str, np.ndarray],
) -> GlyphDataset:
    """Write manifest + vocab + PGM files; `images` maps rel path -> pixels."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    (root / "images").mkdir(exist_ok=True)
    for rel, pixels in sorted(images.items()):
        write_pgm(root / rel, pixels)
    with open(root / MANIFEST_NAME, "w") as fh:
        for c in chars:
            for rel in c.images:
                fh.write(
                    json.dumps(
                        {
                            "char_id": c.char_id,
                            "ids": c.ids_string,
                            "split": c.split,
                            "image": rel,
                        }
                    )
                    + "\n"
                )
    with open(root / VOCAB_NAME, "w") as fh:
        json.dump({str(k): v for k, v in sorted(vocab.items())}, fh, indent=0)
    with open(root / META_NAME, "w") as fh:
        json.dump({"seed": seed}, fh)
    return GlyphDataset(root, chars, vocab, seed)


def load_dataset(root: str | Path) -> GlyphDataset:
    root = Path(root)
    manifest = root / MANIFEST_NAME
    if not manifest.exists():
        raise DataError(f"no {MANIFEST_NAME} under {root}")
    try:
        with open(root / VOCAB_NAME) as fh:
            vocab = {int(k): v for k, v in json.load(fh).items()}
    except (OSError, ValueError) as e:
        raise DataError(f"bad vocabulary file: {e}") from e
    seed = 0
    meta = root / META_NAME
    if meta.exists():
        with open(meta) as fh:
            seed = json.load(fh).get("seed", 0)

    by_id: dict[int, CharEntry] = {}
    order: list[int] = []
    with open(manifest) as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                cid, ids_s, split, img = row["char_id"], row["ids"], row["split"], row["image"]
            except (ValueError, KeyError) as e:
                raise DataError(f"{manifest}:{line_no}: bad manifest row: {e}") from e
            if cid not in by_id:
                by_id[cid] = CharEntry(cid, ids_s, split)
                order.append(cid)
            elif by_id[cid].ids_string != ids_s or by_id[cid].split != split:
                raise DataError(f"{manifest}:{line_no}: char {cid} has inconsistent rows")
            by_id[cid].images.append(img)
    return GlyphDataset(root, [by_id[i] for i in order], vocab, seed)
