import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glyphtree import ids
from glyphtree.ids import (
    FORMATION_BY_ALIAS,
    FORMATION_TYPES,
    Operator,
    Radical,
    attention_adjacency,
    azimuth_of,
    mask_unknown,
    parse,
    parse_text,
    serialize,
    tokenize,
)

LR = Operator(FORMATION_BY_ALIAS["lr"])
TB = Operator(FORMATION_BY_ALIAS["tb"])
LMR = Operator(FORMATION_BY_ALIAS["lmr"])


def test_formation_type_inventory():
    assert len(FORMATION_TYPES) == 12
    arity3 = {f.alias for f in FORMATION_TYPES if f.arity == 3}
    assert arity3 == {"lmr", "tmb"}
    assert sum(f.arity for f in FORMATION_TYPES) == 26
    assert [f.char for f in FORMATION_TYPES] == [chr(0x2FF0 + i) for i in range(12)]


def test_azimuth_numbering():
    assert azimuth_of(FORMATION_BY_ALIAS["lr"], 0).name == "LR-1"
    assert azimuth_of(FORMATION_BY_ALIAS["tmb"], 2).name == "TMB-3"
    all_ids = {
        azimuth_of(f, i).id for f in FORMATION_TYPES for i in range(f.arity)
    }
    assert len(all_ids) == 26
    assert all_ids == set(range(1, 27))
    with pytest.raises(ids.IndexOutOfArity):
        azimuth_of(FORMATION_BY_ALIAS["lr"], 2)


def test_parse_arity2_base_case():
    t = parse([LR, Radical(0), Radical(1)])
    assert t.n == 3
    assert t.parent == [-1, 0, 0]
    t.validate()


def test_parse_single_leaf():
    t = parse([Radical(5)])
    assert t.n == 1
    assert isinstance(t.labels[0], Radical)


def test_parse_nested():
    t = parse([TB, LR, Radical(0), Radical(1), Radical(2)])
    assert t.n == 5
    assert t.parent == [-1, 0, 1, 1, 0]
    assert [ids.AZIMUTHS[a].name for a in t.azimuth] == [
        "ROOT",
        "TB-1",
        "LR-1",
        "LR-2",
        "TB-2",
    ]
    t.validate()


def test_parse_errors():
    with pytest.raises(ids.UnexpectedEnd):
        parse([LMR, Radical(0), Radical(1)])
    with pytest.raises(ids.TrailingTokens):
        parse([LR, Radical(0), Radical(1), Radical(2)])
    with pytest.raises(ids.UnexpectedEnd):
        parse([])
    with pytest.raises(ids.UnknownRadical):
        parse([Radical(9)], vocab={0, 1})


def test_serialize_roundtrip():
    assert serialize(parse([Radical(3)])) == [Radical(3)]
    toks = [TB, LR, Radical(0), Radical(1), Radical(2)]
    assert serialize(parse(toks)) == toks


def test_mask_unknown():
    t = parse([LR, Radical(0), Radical(1)])
    m = mask_unknown(t, {0})
    assert m.masked == [False, False, True]
    assert mask_unknown(t, {0, 1}).masked == [False, False, False]
    t2 = parse([TB, LR, Radical(0), Radical(1), Radical(2)])
    m2 = mask_unknown(t2, {2})
    # formation nodes are never masked
    assert m2.masked == [False, False, True, True, False]


def oracle_adjacency(tree):
    """Brute force: self pairs plus parent-child pairs among unmasked nodes."""
    n = tree.n
    adj = np.zeros((n, n), dtype=bool)
    for q in range(n):
        for k in range(n):
            if tree.masked[q] or tree.masked[k]:
                continue
            if q == k or tree.parent[k] == q:
                adj[q, k] = True
    return adj


def test_adjacency_examples():
    t = parse([LR, Radical(0), Radical(1)])
    adj = attention_adjacency(t)
    truth = {(0, 0), (0, 1), (0, 2), (1, 1), (2, 2)}
    assert {tuple(x) for x in np.argwhere(adj)} == truth

    leaf = parse([Radical(0)])
    assert attention_adjacency(leaf).tolist() == [[True]]

    masked = mask_unknown(t, {0})
    adj = attention_adjacency(masked)
    assert {tuple(x) for x in np.argwhere(adj)} == {(0, 0), (0, 1), (1, 1)}


def random_tokens(rng, max_depth=4, n_radicals=30):
    def node(depth):
        if depth >= max_depth or rng.random() < 0.5:
            return [Radical(int(rng.integers(n_radicals)))]
        f = FORMATION_TYPES[int(rng.integers(12))]
        out = [Operator(f)]
        for _ in range(f.arity):
            out.extend(node(depth + 1))
        return out

    return node(0)


def test_adjacency_matches_oracle_random():
    rng = np.random.default_rng(11)
    for _ in range(100):
        t = parse(random_tokens(rng))
        known = {int(r) for r in rng.integers(0, 30, size=10)}
        for tree in (t, mask_unknown(t, known)):
            assert np.array_equal(attention_adjacency(tree), oracle_adjacency(tree))


def test_leaf_count_law():
    rng = np.random.default_rng(5)
    for _ in range(50):
        toks = random_tokens(rng)
        t = parse(toks)
        leaves = sum(isinstance(x, Radical) for x in toks)
        ops = [x for x in toks if isinstance(x, Operator)]
        assert leaves == 1 + sum(o.ftype.arity - 1 for o in ops)
        t.validate()  # azimuth consistency and arity checks


@st.composite
def token_sequences(draw):
    depth_budget = draw(st.integers(1, 4))

    def node(depth):
        if depth >= depth_budget or draw(st.booleans()):
            return [Radical(draw(st.integers(0, 50)))]
        f = FORMATION_TYPES[draw(st.integers(0, 11))]
        out = [Operator(f)]
        for _ in range(f.arity):
            out.extend(node(depth + 1))
        return out

    return node(0)


@given(token_sequences())
@settings(max_examples=200, deadline=None)
def test_roundtrip_property(toks):
    assert serialize(parse(toks)) == toks


@given(token_sequences(), st.randoms())
@settings(max_examples=200, deadline=None)
def test_invalid_mutations_raise(toks, rnd):
    mutation = rnd.choice(["drop", "append", "swap"])
    mutated = list(toks)
    if mutation == "drop":
        mutated.pop(rnd.randrange(len(mutated)))
        if not mutated:
            return
    elif mutation == "append":
        mutated.append(Radical(rnd.randrange(50)))
    else:
        i = rnd.randrange(len(mutated))
        j = rnd.randrange(len(mutated))
        mutated[i], mutated[j] = mutated[j], mutated[i]
        if mutated == toks:
            return
    try:
        tree = parse(mutated)
    except (ids.UnexpectedEnd, ids.TrailingTokens):
        return
    # a swap can produce a different valid tree; it must still be well formed
    tree.validate()
    assert serialize(tree) == mutated


def test_masking_equivalence_to_deletion():
    rng = np.random.default_rng(3)
    for _ in range(50):
        t = parse(random_tokens(rng))
        known = {int(r) for r in rng.integers(0, 30, size=8)}
        masked = mask_unknown(t, known)
        adj = attention_adjacency(masked)
        survivors = [i for i in range(t.n) if not masked.masked[i]]
        sub = adj[np.ix_(survivors, survivors)]
        # oracle: physically delete masked leaves, keep surviving indices
        deleted = oracle_adjacency(masked)[np.ix_(survivors, survivors)]
        assert np.array_equal(sub, deleted)
        # masked rows/columns are all false
        dead = [i for i in range(t.n) if masked.masked[i]]
        assert not adj[dead, :].any() and not adj[:, dead].any()


def test_tokenize_text_forms():
    assert tokenize("⿰ r0 r1") == [LR, Radical(0), Radical(1)]
    assert tokenize("lr r0 r1") == [LR, Radical(0), Radical(1)]
    with pytest.raises(ids.InvalidToken):
        tokenize("lr r0 bogus")
    t = parse_text("tb lr r0 r1 r2")
    assert ids.format_tokens(serialize(t)) == "tb lr r0 r1 r2"
    assert ids.format_tokens(serialize(t), ascii_mode=False) == "⿱ ⿰ r0 r1 r2"


def test_dot_emission():
    dot = ids.tree_to_dot(parse_text("lr r0 r1"))
    assert dot.startswith("digraph")
    assert 'label="LR-1"' in dot and "n1 -> n0" in dot
