import pytest

from chardep.transition_system import (
    Arc,
    Configuration,
    IllegalTransition,
    Kind,
    Transition,
    UnreachableTree,
    apply,
    derive,
    initial_config,
    is_projective,
    is_terminal,
    legal,
    oracle_next,
)
from conftest import make_sentence
from oracles import all_trees, gap_degree, reachable


def cfg(stack, buffer=(), arcs=()):
    return Configuration(tuple(stack), tuple(buffer), frozenset(Arc(*a) for a in arcs))


def test_initial_config():
    c = initial_config(make_sentence([2, 0, 2]))
    assert c.stack == (0,) and c.buffer == (1, 2, 3) and not c.arcs
    assert initial_config(make_sentence([0])).buffer == (1,)
    with pytest.raises(ValueError):
        initial_config(0)


def test_legal_examples():
    assert legal(cfg([0], [1])) == {Kind.SHIFT}
    assert legal(cfg([0], [])) == set()
    # Right-2 would make 0 head of 2 while 1 is still unattached
    assert legal(cfg([0, 1, 2])) == {Kind.LEFT, Kind.RIGHT}
    assert legal(cfg([0, 1, 2]), single_root=False) == {Kind.LEFT, Kind.RIGHT, Kind.RIGHT2}
    assert legal(cfg([0, 1], [2])) == {Kind.SHIFT}
    assert legal(cfg([0, 1], [], [(1, 2, "x")])) == {Kind.RIGHT}


def test_apply_examples():
    after = apply(cfg([0, 1, 2]), Transition(Kind.RIGHT, "l"))
    assert after.stack == (0, 1) and after.arcs == {Arc(1, 2, "l")}
    after = apply(cfg([0, 1, 2, 3]), Transition(Kind.LEFT2, "l"))
    assert after.stack == (0, 2, 3) and after.arcs == {Arc(3, 1, "l")}
    after = apply(cfg([0, 1, 2, 3]), Transition(Kind.RIGHT2, "l"))
    assert after.stack == (0, 1, 2) and after.arcs == {Arc(1, 3, "l")}
    after = apply(cfg([0, 1, 2]), Transition(Kind.LEFT, "l"))
    assert after.stack == (0, 2) and after.arcs == {Arc(2, 1, "l")}
    after = apply(cfg([0], [1, 2]), Transition(Kind.SHIFT))
    assert after.stack == (0, 1) and after.buffer == (2,)


def test_apply_illegal():
    with pytest.raises(IllegalTransition, match="buffer"):
        apply(cfg([0, 1], []), Transition(Kind.SHIFT))
    with pytest.raises(IllegalTransition, match="root"):
        apply(cfg([0, 1]), Transition(Kind.LEFT, "l"))
    with pytest.raises(IllegalTransition, match="stack"):
        apply(cfg([0, 1]), Transition(Kind.LEFT2, "l"))


def test_is_terminal():
    assert not is_terminal(initial_config(make_sentence([0])))
    assert is_terminal(cfg([0], [], [(0, 1, "root"), (1, 2, "x")]))
    assert not is_terminal(cfg([0, 3]))


def test_oracle_projective_chain():
    gold = make_sentence([0, 1], labels=["root", "obj"])
    assert oracle_next(cfg([0, 1, 2], [], []), gold) == Transition(Kind.RIGHT, "obj")


def test_oracle_crossing_arcs_uses_left2():
    # 3 -> 1 and 2 -> 4 cross; 2 is the root child, 3 depends on 2
    gold = make_sentence([3, 0, 2, 2], labels=["a", "root", "b", "c"])
    assert not is_projective(gold.heads)
    c = initial_config(gold)
    for _ in range(3):
        c = apply(c, Transition(Kind.SHIFT))
    assert c.stack == (0, 1, 2, 3)
    assert oracle_next(c, gold) == Transition(Kind.LEFT2, "a")
    kinds = [t.kind for _, t in derive(gold)]
    assert Kind.LEFT2 in kinds


def test_derive_single_token():
    steps = derive(make_sentence([0], labels=["root"]))
    assert [t for _, t in steps] == [Transition(Kind.SHIFT), Transition(Kind.RIGHT, "root")]


def test_projective_trees_avoid_degree2_transitions():
    for n in range(1, 6):
        for heads in all_trees(n):
            if is_projective(heads):
                kinds = {t.kind for _, t in derive(make_sentence(list(heads)))}
                assert kinds <= {Kind.SHIFT, Kind.LEFT, Kind.RIGHT}


def test_derive_invariants():
    for heads in all_trees(4):
        gold = make_sentence(list(heads))
        try:
            steps = derive(gold)
        except UnreachableTree:
            continue
        assert len(steps) == 2 * len(gold)
        for config, t in steps:
            assert t.kind in legal(config)
            after = apply(config, t)
            deps = [a.dependent for a in after.arcs]
            assert 0 not in deps
            assert len(deps) == len(set(deps))
            parts = sorted(list(after.stack) + list(after.buffer) + deps)
            assert parts == list(range(len(gold) + 1))
            size = len(config.stack) + len(config.buffer)
            new_size = len(after.stack) + len(after.buffer)
            assert new_size == size - (t.kind is not Kind.SHIFT)


def test_oracle_agrees_with_exhaustive_reachability():
    # the static oracle is complete: it derives exactly the reachable trees
    for n in range(1, 6):
        for heads in all_trees(n):
            ok = True
            try:
                derive(make_sentence(list(heads)))
            except UnreachableTree:
                ok = False
            assert ok == reachable(heads), heads


def test_unreachable_tree_is_reported():
    # token 1 governs 3 and 5 across 2 and 4: its yield {1, 3, 5} has two gaps
    heads = (2, 4, 1, 0, 1)
    assert gap_degree(heads) == 2
    assert not reachable(heads)
    with pytest.raises(UnreachableTree):
        derive(make_sentence(list(heads)))
