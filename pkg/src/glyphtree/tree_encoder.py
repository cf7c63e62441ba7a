"""Formation-tree transformer encoder.

Attention is restricted to each node and its direct children (plus self),
biased by a learnable per-head scalar indexed by the key node's azimuth,
and the final root-node state is projected onto the shared unit sphere.
Trees are batched by padding to the longest tree; padded slots never feed
into real nodes because their key columns are masked everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import ids
from .autodiff import MASK_SENTINEL, Tensor
from .ids import FormationTree
from .model import ArchFlags, ModelConfig, ModelParams

SELF_BIAS_INDEX = 0


class TreeEncodeError(Exception):
    pass


class EmptyTree(TreeEncodeError):
    pass


class AllMasked(TreeEncodeError):
    pass


class UnknownLabel(TreeEncodeError):
    pass


@dataclass
class TreeBatch:
    """Padded arrays for a batch of trees, ready for the encoder."""

    labels: np.ndarray      # (N, M) rows into the node embedding table
    azimuth: np.ndarray     # (N, M) azimuth ids, 0 for root/pad
    positions: np.ndarray   # (N, M) storage positions (sequential mode)
    mask_add: np.ndarray    # (N, M, M) additive attention mask, f32
    bias_idx: np.ndarray    # (N, M, M) index into the azimuth bias table
    pool: int = 0           # token index pooled as the character feature


def label_row(label: ids.NodeLabel, vocab_size: int) -> int:
    """Embedding-table row of a node label: formation types first, then radicals."""
    if isinstance(label, ids.Operator):
        return label.ftype.code
    if label.rid >= vocab_size:
        raise UnknownLabel(f"radical r{label.rid} outside vocab of {vocab_size}")
    return ids.NUM_FORMATION_TYPES + label.rid


def build_tree_batch(
    trees: list[FormationTree],
    params: ModelParams,
    flags: ArchFlags | None = None,
) -> TreeBatch:
    flags = flags or ArchFlags()
    if not trees:
        raise EmptyTree("empty tree batch")
    for t in trees:
        if t.n == 0:
            raise EmptyTree("tree with no nodes")
        if t.masked[0] and not (flags.sequential or flags.special_node):
            raise AllMasked("root node is masked")
    extra = 1 if (flags.sequential or flags.special_node) else 0
    n = len(trees)
    m = max(t.n for t in trees) + extra

    labels = np.zeros((n, m), dtype=np.int64)
    azimuth = np.zeros((n, m), dtype=np.int64)
    positions = np.zeros((n, m), dtype=np.int64)
    mask_add = np.full((n, m, m), MASK_SENTINEL, dtype=np.float32)
    bias_idx = np.full((n, m, m), SELF_BIAS_INDEX, dtype=np.int64)

    for b, t in enumerate(trees):
        off = extra
        if extra:
            labels[b, 0] = params.special_row
        for i, lab in enumerate(t.labels):
            labels[b, off + i] = label_row(lab, params.vocab_size)
            azimuth[b, off + i] = t.azimuth[i]
            positions[b, off + i] = min(off + i, len(params["tree.pos_emb"].value) - 1)
        live = [off + i for i in range(t.n) if not t.masked[i]]
        if not live:
            raise AllMasked("every node of a tree is masked")
        if flags.sequential or flags.special_node:
            # pooled token attends everywhere; in sequential mode all live
            # tokens attend to each other, in tree mode only the extra node
            # gains full connectivity on top of the subtree pattern
            for i in live + [0]:
                mask_add[b, 0, i] = 0.0
                mask_add[b, i, 0] = 0.0
        if flags.sequential:
            for qi in live:
                for ki in live:
                    mask_add[b, qi, ki] = 0.0
        else:
            adj = ids.attention_adjacency(t)
            qk = np.argwhere(adj)
            mask_add[b, qk[:, 0] + off, qk[:, 1] + off] = 0.0
            for qi, ki in qk:
                if qi != ki:
                    bias_idx[b, qi + off, ki + off] = t.azimuth[ki]
    return TreeBatch(labels, azimuth, positions, mask_add, bias_idx)


def encode_tree_batch(
    batch: TreeBatch,
    params: ModelParams,
    cfg: ModelConfig,
    flags: ArchFlags | None = None,
) -> Tensor:
    """Unit-norm (N, d_embed) embeddings for a batch of trees."""
    flags = flags or ArchFlags()
    x = ad.embedding_lookup(params["tree.node_emb"], batch.labels)
    if flags.azimuth_pe:
        x = ad.add(x, ad.embedding_lookup(params["tree.az_emb"], batch.azimuth))
    if flags.sequential:
        x = ad.add(x, ad.embedding_lookup(params["tree.pos_emb"], batch.positions))
        bias_table, bias_idx = None, None
    else:
        bias_table, bias_idx = params["tree.bias"], batch.bias_idx
    from .transformer import encoder_stack, project_and_normalize

    h = encoder_stack(
        x,
        params,
        "tree",
        cfg.layers,
        cfg.heads,
        mask_add=batch.mask_add,
        bias_table=bias_table,
        bias_idx=bias_idx,
    )
    pooled = ad.select_token(h, batch.pool)
    return project_and_normalize(pooled, params, "tree")


def encode_tree(
    tree: FormationTree,
    params: ModelParams,
    cfg: ModelConfig,
    flags: ArchFlags | None = None,
) -> np.ndarray:
    """Unit-norm embedding of a single tree (deterministic, no sampling)."""
    batch = build_tree_batch([tree], params, flags)
    return encode_tree_batch(batch, params, cfg, flags).value[0]


def embed_nodes(tree: FormationTree, params: ModelParams) -> np.ndarray:
    """Input rows of the encoder: node embedding + azimuth embedding."""
    rows = np.array([label_row(lab, params.vocab_size) for lab in tree.labels])
    node = params["tree.node_emb"].value[rows]
    az = params["tree.az_emb"].value[np.asarray(tree.azimuth)]
    return node + az
