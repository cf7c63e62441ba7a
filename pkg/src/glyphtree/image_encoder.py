"""Patch-transformer image encoder with random patch masking.

Images are cut into square patches, kept patches are linearly projected
and tagged with positional embeddings indexed by their pre-mask position,
a class token is prepended, and the class token's final state is projected
onto the shared unit sphere.  Masking happens only during training; drop
it (ratio 0) at inference.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import GlyphImage
from .model import ModelConfig, ModelParams
from .transformer import encoder_stack, project_and_normalize


class ImageEncodeError(Exception):
    pass


class IndivisibleImage(ImageEncodeError):
    pass


def patchify(img: GlyphImage | np.ndarray, patch_px: int) -> np.ndarray:
    """(P, patch_px^2) float32 patch rows in row-major patch order, in [0, 1]."""
    pixels = img.pixels if isinstance(img, GlyphImage) else np.asarray(img)
    h, w = pixels.shape
    if h % patch_px or w % patch_px:
        raise IndivisibleImage(f"{w}x{h} image not divisible by patch size {patch_px}")
    gh, gw = h // patch_px, w // patch_px
    patches = (
        pixels.reshape(gh, patch_px, gw, patch_px)
        .transpose(0, 2, 1, 3)
        .reshape(gh * gw, patch_px * patch_px)
    )
    return patches.astype(np.float32) / 255.0


def sample_mask(num_patches: int, ratio: float, rng: np.random.Generator) -> np.ndarray:
    """Sorted indices of kept patches; keeps P - floor(ratio * P) of them."""
    if not 0.0 <= ratio < 1.0:
        raise ImageEncodeError(f"mask ratio must be in [0, 1), got {ratio}")
    keep = num_patches - int(ratio * num_patches)
    kept = rng.choice(num_patches, size=keep, replace=False)
    return np.sort(kept)


def encode_image_tokens(
    tokens: np.ndarray,     # (N, k, patch_px^2) kept patch rows
    kept_idx: np.ndarray,   # (N, k) original patch positions
    params: ModelParams,
    cfg: ModelConfig,
) -> Tensor:
    """Unit-norm (N, d_embed) embeddings from pre-gathered patch tokens."""
    dtype = params["img.patch_proj.w"].value.dtype
    x = ad.matmul(Tensor(tokens.astype(dtype)), params["img.patch_proj.w"])
    x = ad.add(x, params["img.patch_proj.b"])
    # positional embeddings bind to pre-mask positions, so any ordering of
    # the same kept set is equivalent
    x = ad.add(x, ad.embedding_lookup(params["img.pos_emb"], kept_idx))
    x = ad.prepend_token(x, params["img.cls"])
    h = encoder_stack(x, params, "img", cfg.layers, cfg.heads)
    pooled = ad.select_token(h, 0)
    return project_and_normalize(pooled, params, "img")


def encode_image_batch(
    images: list[GlyphImage] | np.ndarray,
    params: ModelParams,
    cfg: ModelConfig,
    mask_ratio: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Tensor:
    if mask_ratio > 0.0 and rng is None:
        raise ImageEncodeError("masking requires an rng")
    patch_rows = np.stack([patchify(img, cfg.patch_px) for img in images])
    n, p, _ = patch_rows.shape
    if mask_ratio > 0.0:
        kept = np.stack([sample_mask(p, mask_ratio, rng) for _ in range(n)])
    else:
        kept = np.broadcast_to(np.arange(p), (n, p)).copy()
    tokens = np.take_along_axis(patch_rows, kept[:, :, None], axis=1)
    return encode_image_tokens(tokens, kept, params, cfg)


def encode_image(
    img: GlyphImage,
    params: ModelParams,
    cfg: ModelConfig,
    mask_ratio: float = 0.0,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    return encode_image_batch([img], params, cfg, mask_ratio, rng).value[0]
