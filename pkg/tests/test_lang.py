import pytest
from hypothesis import given, settings

from aprx import lang
from aprx.lang import Halt, If, While
from conftest import CONC_DIR, SEQ_DIR
from strategies import concurrent_sources, sequential_sources

COUNTER = "proc main(n){ i := 0; while (i < n) { i := i + 1; } halt; }"


def test_parse_minimal_sequential():
    p = lang.parse(COUNTER)
    assert p.kind == "sequential"
    assert len(p.procs) == 1
    assert p.input_params == ("n",)


def test_parse_minimal_concurrent():
    p = lang.parse("shared m = 0; proc a(){ lock(m); unlock(m); } proc b(){ lock(m); unlock(m); }")
    assert p.kind == "concurrent"
    assert [q.name for q in p.procs] == ["a", "b"]


def test_undeclared_variable():
    with pytest.raises(lang.SemanticError, match="undeclared variable y"):
        lang.parse("proc main(){ x := y; }")


def test_lock_in_sequential_program():
    with pytest.raises(lang.SemanticError):
        lang.parse("proc main(){ lock(m); }")


def test_undeclared_mutex():
    with pytest.raises(lang.SemanticError, match="undeclared mutex"):
        lang.parse("shared s = 0; proc a(){ lock(q); unlock(q); } proc b(){ skip; }")


def test_syntax_error_has_position_and_expected():
    with pytest.raises(lang.ParseError) as info:
        lang.parse("proc main(){\n  x := ;\n}")
    err = info.value
    assert err.line == 2
    assert err.col > 0
    assert "identifier" in err.expected


def test_comments_and_booleans():
    p = lang.parse("// header\nproc main(){ while (false) { skip; } // trailing\n halt; }")
    assert isinstance(p.procs[0].body[0], While)


def test_ids_in_preorder():
    p = lang.parse(COUNTER)
    assert [s.sid for s in lang.walk(p.procs[0].body)] == [1, 2, 3, 4]
    assert p.procs[0].end_id == 5


def test_halting_set_end_only():
    p = lang.parse("proc main(){ x := 1; }")
    assert lang.halting_set(p) == {"main": frozenset({p.procs[0].end_id})}


def test_halting_set_halt_in_branch():
    p = lang.parse("proc main(n){ if (n > 0) { halt; } x := 1; }")
    halt = next(s for s in lang.walk(p.procs[0].body) if isinstance(s, Halt))
    assert lang.halting_set(p)["main"] == {halt.sid, p.procs[0].end_id}


def test_halting_set_two_procs():
    p = lang.parse("shared s = 0; proc a(){ s := 1; } proc b(){ s := 2; halt; }")
    hs = lang.halting_set(p)
    assert set(hs) == {"a", "b"}
    assert all(hs.values())


def test_cfg_straight_line():
    cfg = lang.build_cfg(lang.parse("proc main(){ a := 1; b := 2; c := 3; }")).procs["main"]
    assert len(cfg.nodes) == 4
    assert len(cfg.edges) == 3
    assert not cfg.loop_headers


def test_cfg_single_loop_back_edge():
    cfg = lang.build_cfg(lang.parse(COUNTER)).procs["main"]
    assert cfg.loop_headers == {2}
    assert cfg.back_edges == {(3, 2)}


def test_cfg_nested_loops():
    src = "proc main(n){ i := 0; while (i < n) { j := 0; while (j < i) { j := j + 1; } i := i + 1; } }"
    cfg = lang.build_cfg(lang.parse(src)).procs["main"]
    assert len(cfg.loop_headers) == 2
    assert len(cfg.back_edges) == 2


def test_else_less_if_printed_without_else():
    text = lang.pretty_print(lang.parse("proc main(n){ if (n > 0) { x := 1; } }"))
    assert "else" not in text


def test_operator_precedence_round_trip():
    p = lang.parse("proc main(a, b){ x := a - (b - 1); y := (a + b) * 2; z := a - b - 1; w := -(a * b); }")
    assert lang.parse(lang.pretty_print(p)) == p


@pytest.mark.parametrize("path", sorted(SEQ_DIR.glob("*.mimp")) + sorted(CONC_DIR.glob("*.mimp")),
                         ids=lambda p: p.name)
def test_corpus_round_trip(path):
    p = lang.parse(path.read_text())
    assert lang.parse(lang.pretty_print(p)) == p


@settings(max_examples=150, deadline=None)
@given(sequential_sources())
def test_round_trip_sequential(src):
    p = lang.parse(src)
    again = lang.parse(lang.pretty_print(p))
    assert again == p
    # ids map to the same statements
    assert {k: type(v) for k, v in again.stmt_map.items()} == {k: type(v) for k, v in p.stmt_map.items()}


@settings(max_examples=80, deadline=None)
@given(concurrent_sources())
def test_round_trip_concurrent(src):
    p = lang.parse(src)
    assert lang.parse(lang.pretty_print(p)) == p


@settings(max_examples=80, deadline=None)
@given(sequential_sources())
def test_halting_set_nonempty_and_cfg_deterministic(src):
    p = lang.parse(src)
    for proc in p.procs:
        assert proc.end_id in lang.halting_set(p)[proc.name]
    assert lang.build_cfg(p) == lang.build_cfg(lang.parse(src))
    loops = {s.sid for s in lang.walk(p.procs[0].body) if isinstance(s, While)}
    assert lang.build_cfg(p).procs["main"].loop_headers == loops


def test_enclosing_loops():
    src = "proc main(n){ while (n > 0) { if (n > 2) { n := n - 2; } else { n := n - 1; } } }"
    p = lang.parse(src)
    inner = [s for s in lang.walk(p.procs[0].body) if not isinstance(s, (While, If))]
    loops = lang.enclosing_loops(p)
    assert all(loops[s.sid] == [1] or tuple(loops[s.sid]) == (1,) for s in inner)
