import pytest

from posegnn import posegraph as pg
from posegnn.errors import GraphError
from posegnn.synthgen import lsp_skeleton

SK = lsp_skeleton()
ix = SK.index


def _has_cycle_through(graph, nodes):
    """Brute force: the listed nodes form a closed walk of existing edges."""
    es = graph.edge_set
    ring = list(nodes) + [nodes[0]]
    return all(tuple(sorted((a, b))) in es for a, b in zip(ring, ring[1:]))


def test_tree_preset_properties():
    g = pg.tree_preset(SK)
    assert len(g.edges) == 13
    assert g.num_components() == 1
    assert pg.validate(g) == []


def test_elbow_neighbours():
    g = pg.tree_preset(SK)
    assert g.neighbors(ix("l_elbow")) == sorted([ix("l_shoulder"), ix("l_wrist")])
    assert ix("l_ankle") in g.neighbors(ix("l_knee"))


def test_removing_any_tree_edge_disconnects():
    g = pg.tree_preset(SK)
    for e in g.edges:
        h = pg.PoseGraph.from_edges(g.num_nodes, [x for x in g.edges if x != e], "custom")
        assert h.num_components() == 2


def test_loopy_preset():
    g = pg.loopy_preset(SK)
    t = pg.tree_preset(SK)
    assert len(g.edges) == 19
    assert t.edge_set <= g.edge_set
    assert tuple(sorted((ix("l_shoulder"), ix("l_wrist")))) in g.edge_set
    assert _has_cycle_through(g, [ix("l_shoulder"), ix("l_elbow"), ix("l_wrist")])
    assert not _has_cycle_through(t, [ix("l_shoulder"), ix("l_elbow"), ix("l_wrist")])
    assert pg.validate(g, SK) == []


def test_validate_errors():
    bad = pg.PoseGraph.from_edges(5, [(3, 3), (0, 1)], "custom")
    probs = pg.validate(bad)
    assert any("(3,3)" in p for p in probs)
    dup = pg.PoseGraph.from_edges(3, [(0, 1), (1, 0)], "custom")
    assert any("duplicate" in p for p in pg.validate(dup))
    oob = pg.PoseGraph.from_edges(3, [(0, 5)], "custom")
    assert any("(0,5)" in p for p in pg.validate(oob))
    disc = pg.PoseGraph.from_edges(4, [(0, 1), (2, 3)], "tree")
    assert any("disconnected" in p or "acyclicity" in p for p in pg.validate(disc))
    with pytest.raises(GraphError, match=r"\(3,3\)"):
        pg.check(bad)


def test_directed_view_is_symmetric():
    for g in (pg.tree_preset(SK), pg.loopy_preset(SK)):
        d = g.directed_edges()
        assert len(d) == 2 * len(g.edges)
        assert set(d) == {(v, u) for u, v in d}


def test_text_round_trip():
    g = pg.loopy_preset(SK)
    text = g.to_text()
    assert text.splitlines()[0] == "K 14 kind loopy"
    assert pg.PoseGraph.from_text(text) == g
    with pytest.raises(GraphError):
        pg.PoseGraph.from_text("nonsense\n0 1\n")


def test_graph_distance():
    g = pg.tree_preset(SK)
    d = g.distances_from(ix("l_wrist"))
    assert d[ix("l_elbow")] == 1 and d[ix("l_shoulder")] == 2 and d[ix("neck")] == 3
