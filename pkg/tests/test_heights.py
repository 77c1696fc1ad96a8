from graphlib import TopologicalSorter

from hypothesis import given, strategies as st

from pdtora.heights import (
    Height, LinkDirection, Ordering, compare_heights, destination_height, format_height,
    link_direction, new_reference_level,
)

heights = st.builds(
    Height,
    tau=st.floats(min_value=0, max_value=1e6, allow_nan=False),
    oid=st.integers(0, 60),
    r=st.integers(0, 1),
    delta=st.integers(-50, 50),
    id=st.integers(0, 60),
)
maybe_heights = st.one_of(st.none(), heights)


def test_destination_height_is_all_zero_but_id():
    assert destination_height(7) == Height(0, 0, 0, 0, 7)
    assert str(destination_height(7)) == "(0,0,0,0,7)"


def test_lexicographic_examples():
    assert compare_heights(Height(0, 0, 0, 1, 5), Height(0, 0, 0, 1, 5)) is Ordering.EQUAL
    assert compare_heights(Height(0, 0, 0, 1, 3), Height(0, 0, 0, 2, 9)) is Ordering.LESS
    assert compare_heights(Height(0, 0, 0, 1, 3), Height(0, 0, 0, 2, 1)) is Ordering.LESS
    # tie on everything but id
    assert compare_heights(Height(0, 0, 0, 1, 3), Height(0, 0, 0, 1, 2)) is Ordering.GREATER
    # a newer reference level outranks any delta
    assert compare_heights(Height(5.0, 1, 0, -9, 1), Height(0, 0, 0, 99, 2)) is Ordering.GREATER
    # reflected level sits above its unreflected twin
    assert compare_heights(Height(5.0, 1, 1, 0, 1), Height(5.0, 1, 0, 3, 2)) is Ordering.GREATER


def test_null_is_above_everything():
    h = Height(1e9, 99, 1, 99, 99)
    assert compare_heights(None, h) is Ordering.GREATER
    assert compare_heights(h, None) is Ordering.LESS
    assert compare_heights(None, None) is Ordering.EQUAL


def test_link_direction_examples():
    assert link_direction(Height(0, 0, 0, 2, 1), Height(0, 0, 0, 1, 7)) is LinkDirection.DOWNSTREAM
    assert link_direction(Height(0, 0, 0, 1, 7), Height(0, 0, 0, 2, 1)) is LinkDirection.UPSTREAM
    assert link_direction(Height(0, 0, 0, 2, 1), None) is LinkDirection.UNDIRECTED


def test_link_direction():
    lo, hi = Height(0, 0, 0, 1, 1), Height(0, 0, 0, 2, 2)
    assert link_direction(hi, lo) is LinkDirection.DOWNSTREAM
    assert link_direction(lo, hi) is LinkDirection.UPSTREAM
    assert link_direction(None, lo) is LinkDirection.UNDIRECTED
    assert link_direction(lo, None) is LinkDirection.UNDIRECTED


def test_reference_level_after_losing_route():
    h = new_reference_level(40, 6)
    assert h == Height(40, 6, 0, 0, 6)
    assert compare_heights(h, Height(0, 0, 0, 3, 2)) is Ordering.GREATER
    assert compare_heights(new_reference_level(41, 6), h) is Ordering.GREATER


def test_new_reference_level_and_format():
    h = new_reference_level(1234.5, 4)
    assert h == Height(1234.5, 4, 0, 0, 4)
    assert h.ref_level == (1234.5, 4, 0)
    assert format_height(None) == "null"


@given(heights, heights)
def test_order_is_antisymmetric(a, b):
    assert compare_heights(a, b).value == -compare_heights(b, a).value


@given(heights, heights)
def test_distinct_ids_never_tie(a, b):
    if a.id != b.id:
        assert compare_heights(a, b) is not Ordering.EQUAL


@given(heights, heights, heights)
def test_order_is_transitive(a, b, c):
    if compare_heights(a, b) is Ordering.LESS and compare_heights(b, c) is Ordering.LESS:
        assert compare_heights(a, c) is Ordering.LESS


@st.composite
def height_graphs(draw):
    n = draw(st.integers(2, 50))
    hs = [draw(heights)._replace(id=i) for i in range(n)]
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    edges = draw(st.lists(st.sampled_from(pairs), max_size=4 * n, unique=True))
    return hs, edges


@given(height_graphs())
def test_downstream_edges_never_form_a_cycle(graph):
    hs, edges = graph
    ts = TopologicalSorter()
    for i, j in edges:
        d = link_direction(hs[i], hs[j])
        if d is LinkDirection.DOWNSTREAM:
            ts.add(j, i)
        elif d is LinkDirection.UPSTREAM:
            ts.add(i, j)
    list(ts.static_order())  # raises CycleError on a loop


@given(st.floats(min_value=0, max_value=1e6, allow_nan=False), st.integers(0, 60), heights)
def test_fresh_level_beats_older_levels(now, me, older):
    if older.tau < now:
        assert compare_heights(new_reference_level(now, me), older) is Ordering.GREATER
