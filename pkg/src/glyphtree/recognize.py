"""Inference: gallery of tree embeddings, nearest-tree matching, evaluation."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import ids
from .data import GlyphDataset, GlyphImage
from .image_encoder import encode_image_batch
from .model import ArchFlags, ModelConfig, ModelParams
from .tree_encoder import AllMasked, build_tree_batch, encode_tree_batch


class RecognizeError(Exception):
    pass


class EmptyGallery(RecognizeError):
    pass


class ParseFailure(RecognizeError):
    pass


class LabelNotInGallery(RecognizeError):
    pass


@dataclass
class Gallery:
    char_ids: list[int]
    embeddings: np.ndarray          # (C, d_embed), unit-norm rows
    known_radicals: set[int]

    def __len__(self) -> int:
        return len(self.char_ids)


@dataclass
class EvalReport:
    accuracy: float
    correct: int
    total: int
    per_char: dict[int, dict[str, int]]   # char_id -> {"correct", "total"}
    mean_inference_ms: float

    def matches(self, other: "EvalReport") -> bool:
        """Equality on recognition results; wall-clock is measurement noise."""
        return (
            self.accuracy == other.accuracy
            and self.correct == other.correct
            and self.total == other.total
            and self.per_char == other.per_char
        )

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "correct": self.correct,
            "total": self.total,
            "mean_inference_ms": self.mean_inference_ms,
            "per_char": {str(k): v for k, v in sorted(self.per_char.items())},
        }


def build_gallery(
    candidates: list[tuple[int, str]],
    params: ModelParams,
    cfg: ModelConfig,
    known_radicals: set[int],
    flags: ArchFlags | None = None,
    chunk: int = 256,
) -> Gallery:
    """Precompute tree embeddings for (char_id, ids string) candidates.

    Unknown radicals are masked out of each tree before encoding when the
    tree-mask flag is on.
    """
    flags = flags or ArchFlags()
    if not candidates:
        raise EmptyGallery("no candidates")
    trees = []
    for cid, ids_string in candidates:
        try:
            tree = ids.parse_text(ids_string)
        except ids.IdsError as e:
            raise ParseFailure(f"char {cid}: {e}") from e
        if flags.tree_mask:
            tree = ids.mask_unknown(tree, known_radicals)
        if all(tree.masked):
            raise AllMasked(f"char {cid}: every node masked")
        trees.append(tree)
    rows = []
    for i in range(0, len(trees), chunk):
        batch = build_tree_batch(trees[i : i + chunk], params, flags)
        rows.append(encode_tree_batch(batch, params, cfg, flags).value)
    return Gallery(
        [cid for cid, _ in candidates], np.concatenate(rows, axis=0), set(known_radicals)
    )


def recognize(
    img: GlyphImage,
    gallery: Gallery,
    params: ModelParams,
    cfg: ModelConfig,
) -> tuple[int, float]:
    """Best-matching gallery character by cosine; ties go to the lowest index."""
    if len(gallery) == 0:
        raise EmptyGallery("gallery is empty")
    emb = encode_image_batch([img], params, cfg, mask_ratio=0.0).value[0]
    scores = gallery.embeddings @ emb
    best = int(np.argmax(scores))  # argmax returns the first maximal index
    return gallery.char_ids[best], float(scores[best])


def evaluate(
    samples: list[tuple[int, GlyphImage]],
    gallery: Gallery,
    params: ModelParams,
    cfg: ModelConfig,
    chunk: int = 256,
) -> EvalReport:
    """Top-1 character accuracy of (true char_id, image) samples."""
    in_gallery = set(gallery.char_ids)
    for cid, _ in samples:
        if cid not in in_gallery:
            raise LabelNotInGallery(f"char {cid} missing from gallery")
    if not samples:
        return EvalReport(0.0, 0, 0, {}, 0.0)
    correct = 0
    per_char: dict[int, dict[str, int]] = {}
    gallery_ids = np.array(gallery.char_ids)
    t0 = time.perf_counter()
    for i in range(0, len(samples), chunk):
        part = samples[i : i + chunk]
        emb = encode_image_batch([im for _, im in part], params, cfg, mask_ratio=0.0).value
        scores = emb @ gallery.embeddings.T
        preds = gallery_ids[np.argmax(scores, axis=1)]
        for (cid, _), pred in zip(part, preds):
            stats = per_char.setdefault(cid, {"correct": 0, "total": 0})
            stats["total"] += 1
            if pred == cid:
                stats["correct"] += 1
                correct += 1
    elapsed_ms = (time.perf_counter() - t0) * 1000.0
    total = len(samples)
    return EvalReport(correct / total, correct, total, per_char, elapsed_ms / total)


def evaluate_split(
    dataset: GlyphDataset,
    split: str,
    params: ModelParams,
    cfg: ModelConfig,
    flags: ArchFlags | None = None,
) -> EvalReport:
    """Evaluate all renders of a split against a gallery of that split's
    characters; the known-radical set is always the training split's."""
    chars = dataset.split_chars(split)
    if not chars:
        raise RecognizeError(f"dataset has no {split!r} split")
    known = set()
    for c in dataset.split_chars("train"):
        known |= ids.parse_text(c.ids_string).radicals()
    gallery = build_gallery(
        [(c.char_id, c.ids_string) for c in chars], params, cfg, known, flags
    )
    samples = [
        (c.char_id, dataset.load_image(rel)) for c in chars for rel in c.images
    ]
    return evaluate(samples, gallery, params, cfg)
