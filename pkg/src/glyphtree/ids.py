"""IDS grammar core: formation types, azimuths, trees, parsing and masking.

An IDS (Ideographic Description Sequence) is the preorder serialization of
a character's decomposition tree: layout operators are internal nodes,
radicals are leaves.  The formation tree is the same tree with every edge
directed child-to-parent and typed by the child's azimuth (its positional
slot under the parent's formation type).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

IDC_BASE = 0x2FF0

# (ascii alias, arity) in codepoint order U+2FF0..U+2FFB
_FORMATION_SPECS = [
    ("lr", 2),    # ⿰ left-right
    ("tb", 2),    # ⿱ top-bottom
    ("lmr", 3),   # ⿲ left-middle-right
    ("tmb", 3),   # ⿳ top-middle-bottom
    ("fs", 2),    # ⿴ full surround
    ("sa", 2),    # ⿵ surround from above
    ("sb", 2),    # ⿶ surround from below
    ("sl", 2),    # ⿷ surround from left
    ("sul", 2),   # ⿸ surround from upper left
    ("sur", 2),   # ⿹ surround from upper right
    ("sll", 2),   # ⿺ surround from lower left
    ("ov", 2),    # ⿻ overlaid
]


class IdsError(Exception):
    """Base class for all IDS grammar errors."""


class UnexpectedEnd(IdsError):
    """An operator is missing one or more operands."""


class TrailingTokens(IdsError):
    """Input continues after a complete tree has been read."""


class UnknownRadical(IdsError):
    """A radical id is outside the supplied vocabulary."""


class InvalidToken(IdsError):
    """A text token is neither an operator nor an `r<id>` radical."""


class IndexOutOfArity(IdsError):
    """Child index is outside the formation type's arity."""


@dataclass(frozen=True)
class FormationType:
    code: int    # offset from U+2FF0, 0..11
    alias: str   # lowercase ascii alias
    arity: int

    @property
    def char(self) -> str:
        return chr(IDC_BASE + self.code)

    @property
    def abbrev(self) -> str:
        return self.alias.upper()


FORMATION_TYPES: tuple[FormationType, ...] = tuple(
    FormationType(code, alias, arity)
    for code, (alias, arity) in enumerate(_FORMATION_SPECS)
)
FORMATION_BY_ALIAS = {f.alias: f for f in FORMATION_TYPES}
FORMATION_BY_CHAR = {f.char: f for f in FORMATION_TYPES}

NUM_FORMATION_TYPES = len(FORMATION_TYPES)
NUM_AZIMUTHS = sum(f.arity for f in FORMATION_TYPES)  # 26
ROOT_AZIMUTH_ID = 0


@dataclass(frozen=True)
class Azimuth:
    id: int     # 0 = ROOT, 1..26 global enumeration
    name: str


ROOT_AZIMUTH = Azimuth(ROOT_AZIMUTH_ID, "ROOT")

# Global azimuth numbering: formation types in codepoint order, then child
# index; id 0 is reserved for the root.
_AZ_START: dict[int, int] = {}
_az_next = 1
for _f in FORMATION_TYPES:
    _AZ_START[_f.code] = _az_next
    _az_next += _f.arity

AZIMUTHS: tuple[Azimuth, ...] = (ROOT_AZIMUTH,) + tuple(
    Azimuth(_AZ_START[f.code] + i, f"{f.abbrev}-{i + 1}")
    for f in FORMATION_TYPES
    for i in range(f.arity)
)


def azimuth_of(ftype: FormationType, child_index: int) -> Azimuth:
    """Azimuth of the `child_index`-th child under `ftype`."""
    if not 0 <= child_index < ftype.arity:
        raise IndexOutOfArity(
            f"child index {child_index} out of range for {ftype.abbrev} "
            f"(arity {ftype.arity})"
        )
    return AZIMUTHS[_AZ_START[ftype.code] + child_index]


@dataclass(frozen=True)
class Operator:
    ftype: FormationType


@dataclass(frozen=True)
class Radical:
    rid: int


# A token of an IDS sequence and a node label of a formation tree are the
# same payloads; parse/serialize reuse them directly.
IdsToken = Operator | Radical
NodeLabel = Operator | Radical


@dataclass
class FormationTree:
    """Preorder-stored tree: node 0 is the root, parent[i] < i for i > 0."""

    labels: list[NodeLabel]
    parent: list[int]
    azimuth: list[int]          # azimuth ids, ROOT_AZIMUTH_ID for the root
    masked: list[bool] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.masked:
            self.masked = [False] * len(self.labels)

    @property
    def n(self) -> int:
        return len(self.labels)

    def is_leaf(self, i: int) -> bool:
        return isinstance(self.labels[i], Radical)

    def children(self, i: int) -> list[int]:
        return [j for j, p in enumerate(self.parent) if p == i]

    def radicals(self) -> set[int]:
        return {lab.rid for lab in self.labels if isinstance(lab, Radical)}

    def validate(self) -> None:
        n = self.n
        assert n > 0 and self.parent[0] == -1
        for i in range(1, n):
            assert 0 <= self.parent[i] < i, "not a preorder parent array"
        for i, lab in enumerate(self.labels):
            kids = self.children(i)
            if isinstance(lab, Operator):
                assert len(kids) == lab.ftype.arity
            else:
                assert not kids, "radical nodes must be leaves"
        for i in range(1, n):
            p = self.parent[i]
            lab = self.labels[p]
            assert isinstance(lab, Operator)
            sib = self.children(p).index(i)
            assert self.azimuth[i] == azimuth_of(lab.ftype, sib).id
        assert self.azimuth[0] == ROOT_AZIMUTH_ID


def parse(tokens: list[IdsToken], vocab: set[int] | None = None) -> FormationTree:
    """Parse a preorder token sequence into a formation tree.

    `vocab`, when given, is the set of valid radical ids; radicals outside
    it raise UnknownRadical.
    """
    if not tokens:
        raise UnexpectedEnd("empty token sequence")
    labels: list[NodeLabel] = []
    parent: list[int] = []
    azimuth: list[int] = []
    pos = 0

    def descend(par: int, az: int) -> None:
        nonlocal pos
        if pos >= len(tokens):
            raise UnexpectedEnd("operator lacks operands")
        tok = tokens[pos]
        pos += 1
        i = len(labels)
        labels.append(tok)
        parent.append(par)
        azimuth.append(az)
        if isinstance(tok, Radical):
            if tok.rid < 0:
                raise UnknownRadical(f"negative radical id {tok.rid}")
            if vocab is not None and tok.rid not in vocab:
                raise UnknownRadical(f"radical r{tok.rid} not in vocabulary")
        else:
            for c in range(tok.ftype.arity):
                descend(i, azimuth_of(tok.ftype, c).id)

    descend(-1, ROOT_AZIMUTH_ID)
    if pos != len(tokens):
        raise TrailingTokens(f"{len(tokens) - pos} tokens left after a complete tree")
    return FormationTree(labels, parent, azimuth)


def serialize(tree: FormationTree) -> list[IdsToken]:
    """Preorder token sequence of the tree; inverse of parse."""
    return list(tree.labels)


def mask_unknown(tree: FormationTree, known: set[int]) -> FormationTree:
    """Mark exactly the leaves whose radical is not in `known` as masked.

    Formation nodes are never masked; structure is unchanged.
    """
    masked = [
        isinstance(lab, Radical) and lab.rid not in known for lab in tree.labels
    ]
    return FormationTree(list(tree.labels), list(tree.parent), list(tree.azimuth), masked)


def attention_adjacency(tree: FormationTree) -> np.ndarray:
    """n x n boolean matrix of allowed (query, key) attention pairs.

    Every unmasked node attends to itself; a parent additionally attends to
    each of its unmasked children.  Masked nodes get all-false rows and
    columns.
    """
    n = tree.n
    adj = np.zeros((n, n), dtype=bool)
    for i in range(n):
        if not tree.masked[i]:
            adj[i, i] = True
    for k in range(1, n):
        q = tree.parent[k]
        if not tree.masked[q] and not tree.masked[k]:
            adj[q, k] = True
    return adj


# --- text form ---------------------------------------------------------

_RADICAL_RE = re.compile(r"^r(\d+)$")


def tokenize(text: str) -> list[IdsToken]:
    """Tokenize whitespace-separated IDS text.

    Operators are the 12 IDC characters or their ascii aliases; radicals
    are `r<id>` tokens.
    """
    tokens: list[IdsToken] = []
    for word in text.split():
        if word in FORMATION_BY_CHAR:
            tokens.append(Operator(FORMATION_BY_CHAR[word]))
            continue
        low = word.lower()
        if low in FORMATION_BY_ALIAS:
            tokens.append(Operator(FORMATION_BY_ALIAS[low]))
            continue
        m = _RADICAL_RE.match(word)
        if m:
            tokens.append(Radical(int(m.group(1))))
            continue
        raise InvalidToken(f"unrecognized token {word!r}")
    return tokens


def parse_text(text: str, vocab: set[int] | None = None) -> FormationTree:
    return parse(tokenize(text), vocab)


def format_tokens(tokens: list[IdsToken], ascii_mode: bool = True) -> str:
    words = []
    for tok in tokens:
        if isinstance(tok, Operator):
            words.append(tok.ftype.alias if ascii_mode else tok.ftype.char)
        else:
            words.append(f"r{tok.rid}")
    return " ".join(words)


def tree_to_json(tree: FormationTree) -> dict:
    nodes = []
    for i, lab in enumerate(tree.labels):
        if isinstance(lab, Operator):
            node = {"kind": "formation", "value": lab.ftype.alias}
        else:
            node = {"kind": "radical", "value": lab.rid}
        node.update(
            index=i,
            parent=tree.parent[i],
            azimuth=AZIMUTHS[tree.azimuth[i]].name,
            masked=tree.masked[i],
        )
        nodes.append(node)
    return {"nodes": nodes}


def tree_to_dot(tree: FormationTree) -> str:
    """GraphViz rendering with child->parent edges labeled by azimuth."""
    lines = ["digraph formation_tree {", "  rankdir=BT;"]
    for i, lab in enumerate(tree.labels):
        if isinstance(lab, Operator):
            text = lab.ftype.abbrev
            shape = "box"
        else:
            text = f"r{lab.rid}"
            shape = "ellipse"
        style = ' style=dashed' if tree.masked[i] else ""
        lines.append(f'  n{i} [label="{text}" shape={shape}{style}];')
    for i in range(1, tree.n):
        az = AZIMUTHS[tree.azimuth[i]].name
        lines.append(f'  n{i} -> n{tree.parent[i]} [label="{az}"];')
    lines.append("}")
    return "\n".join(lines)
