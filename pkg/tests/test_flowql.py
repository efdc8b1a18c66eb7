import itertools

import pytest
from hypothesis import given, settings, strategies as st

from flowsight.flowql.parser import (
    AndNode,
    Atom,
    OrNode,
    QLSyntaxError,
    SemanticError,
    parse,
    render,
    to_dnf,
)

DAY = "(time 2018-05-09 00:00 to 2018-05-09 23:59)"


def test_parse_top_query():
    q = f"SELECT top(10,any,byte) FROM {DAY} WHERE site_id=ANY and src_port=ANY"
    plan = parse(q)
    assert plan.select.kind == "top"
    assert plan.select.k == 10
    assert plan.select.counter == "bytes"
    assert plan.select.proto_scope == "any"
    assert len(plan.ranges) == 1
    a, b = plan.ranges[0]
    assert b - a == 86400  # inclusive 23:59 covers the whole day
    assert plan.dnf == ((Atom("site_id", "any"), Atom("src_port", "any")),) or list(
        plan.dnf
    ) == [(Atom("site_id", "any"), Atom("src_port", "any"))]


def test_parse_pop_drilldown_with_iterator():
    q = (
        "SELECT pop(any,byte,bin15) FROM (time 2019-04-01 01:00 to 2019-04-01 01:59) "
        "WHERE site_id=ITR and dst_port=123|16"
    )
    plan = parse(q)
    assert plan.select.kind == "pop"
    assert plan.select.bin_minutes == 15
    assert plan.select.counter == "bytes"
    atoms = plan.dnf[0]
    assert Atom("site_id", "iter") in atoms
    assert Atom("dst_port", "prefix", value=123, mask=16) in atoms
    a, b = plan.ranges[0]
    assert b - a == 3600


def test_parse_empty_range_rejected():
    q = "SELECT pop FROM (time 2020-01-01 00:00 to 2020-01-01 00:00) WHERE site_id=ANY"
    with pytest.raises(SemanticError):
        parse(q)


def test_parse_hc_needs_two_ranges():
    with pytest.raises(SemanticError):
        parse(f"SELECT hc(5) FROM {DAY} WHERE src_port=ANY")
    q = (
        "SELECT hc(5,any,byte) FROM (time 2019-04-01 00:00 to 2019-04-01 00:59)"
        "(time 2019-04-01 01:00 to 2019-04-01 01:59) WHERE dst_port=ANY or src_port=ANY"
    )
    plan = parse(q)
    assert len(plan.ranges) == 2
    assert len(plan.dnf) == 2


def test_parse_bin_must_divide_range():
    with pytest.raises(SemanticError):
        parse(
            "SELECT pop(bin25) FROM (time 2020-01-01 00:00 to 2020-01-01 00:59) "
            "WHERE src_port=80|16"
        )


def test_parse_unknown_feature_with_position():
    q = f"SELECT pop FROM {DAY} WHERE blah=1"
    with pytest.raises(QLSyntaxError) as err:
        parse(q)
    assert err.value.col > 0
    assert "feature" in err.value.message


def test_parse_case_insensitive_keywords():
    q = f"select POP from {DAY} where SITE_ID=any AND src_PORT=80|16"
    plan = parse(q)
    assert plan.select.kind == "pop"
    assert Atom("src_port", "prefix", value=80, mask=16) in plan.dnf[0]


def test_parse_star_and_above():
    plan = parse(f"SELECT * FROM {DAY} WHERE src_ip=10.0.0.0|8")
    assert plan.select.kind == "star"
    plan = parse(f"SELECT above(500,udp,byte) FROM {DAY} WHERE src_ip=ANY and dst_ip=ANY")
    assert plan.select.kind == "above"
    assert plan.select.threshold == 500
    assert plan.select.proto_scope == "udp"


def test_parse_hhh_percent_bounds():
    plan = parse(f"SELECT hhh(1) FROM {DAY} WHERE src_ip=ANY")
    assert plan.select.percent == 1
    with pytest.raises(SemanticError):
        parse(f"SELECT hhh(100) FROM {DAY} WHERE src_ip=ANY")
    with pytest.raises(SemanticError):
        parse(f"SELECT hhh FROM {DAY} WHERE src_ip=ANY")


def test_parse_iterator_interval():
    plan = parse(f"SELECT pop FROM {DAY} WHERE site_id=ITR-8|2")
    atom = plan.dnf[0][0]
    assert atom.kind == "iter" and atom.iter_lo == 8 and atom.iter_bits == 2


def test_parse_value_validation():
    with pytest.raises(SemanticError):
        parse(f"SELECT pop FROM {DAY} WHERE src_port=70000")
    with pytest.raises(SemanticError):
        parse(f"SELECT pop FROM {DAY} WHERE src_ip=80|16")
    with pytest.raises(SemanticError):
        parse(f"SELECT pop FROM {DAY} WHERE dst_port=80|29")
    with pytest.raises(SemanticError):
        parse(f"SELECT pop FROM {DAY} WHERE proto=6")  # not a tree dimension
    parse(f"SELECT pop FROM {DAY} WHERE proto=ANY and src_ip=ANY")  # scope no-op


def test_dnf_distribution():
    q = f"SELECT pop FROM {DAY} WHERE site_id=1 and (src_port=80|16 or src_port=443|16)"
    plan = parse(q)
    assert len(plan.dnf) == 2
    for conj in plan.dnf:
        assert Atom("site_id", "prefix", value=1, mask=32) in conj


def test_dnf_single_atom():
    plan = parse(f"SELECT pop FROM {DAY} WHERE src_port=80|16")
    assert plan.dnf == [(Atom("src_port", "prefix", value=80, mask=16),)]


def test_dnf_dedup_and_subsumption():
    q = f"SELECT pop FROM {DAY} WHERE src_port=ANY or (src_port=ANY and dst_port=53|16)"
    plan = parse(q)
    # the conjunction is implied by the weaker single atom
    assert plan.dnf == [(Atom("src_port", "any"),)]


def _eval(node, assignment):
    if isinstance(node, Atom):
        return assignment[node]
    if isinstance(node, AndNode):
        return all(_eval(c, assignment) for c in node.children)
    if isinstance(node, OrNode):
        return any(_eval(c, assignment) for c in node.children)
    raise TypeError


_ATOMS = [
    Atom("src_port", "prefix", value=80, mask=16),
    Atom("dst_port", "prefix", value=53, mask=16),
    Atom("src_ip", "prefix", value=0x0A000000, mask=8),
    Atom("dst_ip", "any"),
]


@st.composite
def bool_trees(draw, depth=0):
    if depth >= 3 or draw(st.booleans()):
        return _ATOMS[draw(st.integers(min_value=0, max_value=3))]
    kids = draw(
        st.lists(bool_trees(depth=depth + 1), min_size=2, max_size=3)
    )
    return AndNode(tuple(kids)) if draw(st.booleans()) else OrNode(tuple(kids))


@settings(max_examples=200, deadline=None)
@given(tree=bool_trees())
def test_dnf_truth_table_equivalence(tree):
    dnf = to_dnf(tree)
    for bits in itertools.product([False, True], repeat=len(_ATOMS)):
        assignment = dict(zip(_ATOMS, bits))
        original = _eval(tree, assignment)
        flattened = any(all(assignment[a] for a in conj) for conj in dnf)
        assert original == flattened


def test_render_roundtrip():
    queries = [
        f"SELECT top(10,any,byte) FROM {DAY} WHERE site_id=ANY and src_port=ANY",
        "SELECT pop(any,byte,bin60) FROM (time 2018-05-09 00:00 to 2018-05-09 23:59) "
        "WHERE site_id=ANY and src_port=80|16",
        f"SELECT above(100,udp,byte) FROM {DAY} WHERE site_id=ANY and src_ip=ANY and dst_ip=ANY",
        "SELECT hc(100,any,byte) FROM (time 2019-04-01 00:00 to 2019-04-01 00:59)"
        "(time 2019-04-01 01:00 to 2019-04-01 01:59) WHERE site_id=ITR and "
        "(dst_port=ANY or src_port=ANY)",
        "SELECT pop(any,byte,bin15) FROM (time 2019-04-01 01:00 to 2019-04-01 01:59) "
        "WHERE site_id=ITR and dst_port=123|16",
        f"SELECT hhh(5) FROM {DAY} WHERE src_ip=10.0.0.0|8",
        f"SELECT * FROM {DAY} WHERE src_ip=1.2.3.4|32 and dst_ip=ANY",
    ]
    for q in queries:
        plan = parse(q)
        again = parse(render(plan))
        assert again.select == plan.select
        assert again.ranges == plan.ranges
        assert list(again.dnf) == list(plan.dnf)
