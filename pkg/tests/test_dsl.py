import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evofilter import kalman
from evofilter.dsl import (
    ArityError,
    DslSyntaxError,
    EvalError,
    GuardConfig,
    Program,
    ScopeError,
    Signature,
    Statement,
    UnknownFunctionError,
    execute,
    interpret,
    parse,
    to_generic,
    to_text,
    validate,
)
from evofilter.dsl.ast import BinOp, Call, Num, Ref
from evofilter.dsl.parser import tokenize

IDENTITY = "fn f(i_1) -> (o_1) { o_1 = i_1 }"


# ------------------------------------------------------------------ parser


def test_parse_identity():
    p = parse(IDENTITY)
    assert len(p.statements) == 1
    assert p.signature == Signature(("i_1",), ("o_1",), anti_leak=True)
    assert to_text(p) == "fn f(i_1) -> (o_1) {\n  o_1 = i_1\n}\n"


def test_semicolons_and_comments():
    text = "# header\nfn g(a) -> (b) {\n  c = a;  # note\n  b = c\n}\n"
    p = parse(text)
    assert p.name == "g"
    assert [s.target for s in p.statements] == ["c", "b"]


def test_kalman_fixture_parses():
    p = kalman.kalman_program()
    assert len(p.statements) == 7
    assert p.signature.inputs == kalman.FULL_INPUTS
    assert p.signature.outputs == kalman.FULL_OUTPUTS
    assert to_text(p).splitlines()[1] == "  x_predict = F @ x"


@pytest.mark.parametrize(
    "text, error, where",
    [
        ("fn f(i_1) -> (o_1) { o_1 = undefined_var }", ScopeError, "1:28"),
        ("fn f(a) -> (b) { b = foo(a) }", UnknownFunctionError, "1:22"),
        ("fn f(a) -> (b) { b = inv(a, a) }", ArityError, "1:22"),
        ("fn f(a) -> (b) {\n  b = a +\n}", DslSyntaxError, "3:1"),
        ("fn f(a) -> (b) { b = a $ a }", DslSyntaxError, "1:24"),
        ("fn f(a, a) -> (b) { b = a }", DslSyntaxError, None),
        ("fn f(a) -> () { }", DslSyntaxError, None),
        ("fn f(a) -> (b) { b = eye(0) }", ArityError, None),
        ("fn f(a) -> (b) { b = eye(1000) }", ArityError, None),
    ],
)
def test_parse_errors(text, error, where):
    with pytest.raises(error) as info:
        parse(text)
    if where:
        assert str(info.value).startswith(where)


def test_signature_override():
    sig = Signature(("i_1",), ("o_1",), anti_leak=True)
    assert parse(IDENTITY, signature=sig).signature == sig


def test_tokenize_rejects_garbage():
    with pytest.raises(DslSyntaxError):
        tokenize("a = \x00")


def test_deep_nesting_is_a_syntax_error():
    text = "fn f(a) -> (b) { b = " + "(" * 5000 + "a" + ")" * 5000 + " }"
    with pytest.raises(DslSyntaxError):
        parse(text)


# ----------------------------------------------------------------- printer

NAMES = ["a", "b", "F", "x"]
FUNCS1 = ["inv", "tr", "tanh", "sin", "cos", "log", "exp", "abs", "square", "rowmin", "mean", "norm"]
numbers = st.floats(-1e6, 1e6, allow_nan=False).map(lambda v: Num(float(v)))


def _extend(children):
    return st.one_of(
        st.builds(BinOp, st.sampled_from("+-@"), children, children),
        st.builds(lambda n, e: BinOp("*", n, e), numbers, children),
        st.builds(lambda f, e: Call(f, (e,)), st.sampled_from(FUNCS1), children),
        st.builds(lambda e, n: Call("maxs", (e, n)), children, numbers),
    )


leaves = st.one_of(
    st.sampled_from(NAMES).map(Ref),
    numbers,
    st.integers(1, 16).map(lambda n: Call("eye", (Num(float(n)),))),
)
expressions = st.recursive(leaves, _extend, max_leaves=12)


@st.composite
def programs(draw):
    sig = Signature(tuple(NAMES), ("o_1",))
    exprs = draw(st.lists(expressions, min_size=1, max_size=4))
    stmts = [Statement(f"t_{k}", e) for k, e in enumerate(exprs[:-1])]
    stmts.append(Statement("o_1", exprs[-1]))
    return Program(sig, tuple(stmts), "f")


@settings(max_examples=500, deadline=None)
@given(programs())
def test_print_parse_round_trip(p):
    text = to_text(p)
    q = parse(text)
    assert q == p
    assert to_text(q) == text


def test_structurally_equal_programs_print_identically():
    a = parse("fn f(a, b) -> (c) {\n c = (a + b) @ a\n}")
    b = parse("fn f(a,b)->(c){c=((a)+(b))@(a)}")
    assert a == b and to_text(a) == to_text(b)


def test_fixtures_round_trip():
    for name in kalman.FIXTURES:
        p = kalman.load_fixture(name)
        assert parse(to_text(p), name=name) == p


def test_associativity_is_preserved():
    p = parse("fn f(a, b) -> (c) { c = a - (b - a) }")
    assert p.statements[0].expr == BinOp("-", Ref("a"), BinOp("-", Ref("b"), Ref("a")))
    assert parse(to_text(p)) == p


# ---------------------------------------------------------------- validate


def test_validate_kalman_fixture():
    assert validate(kalman.kalman_program(), kalman.make_task("full").signature) == []


def test_validate_unassigned_output():
    p = parse("fn f(i_1) -> (o_1, o_2) { o_1 = i_1 }")
    kinds = [v.kind for v in validate(p)]
    assert kinds == ["unassigned output"]


def test_validate_size_budget():
    body = "\n".join(f"  t_{k} = i_1" for k in range(64)) + "\n  o_1 = i_1"
    p = parse("fn f(i_1) -> (o_1) {\n" + body + "\n}")
    assert len(p.statements) == 65
    assert [v.kind for v in validate(p)] == ["size budget"]
    assert validate(p, max_statements=65) == []


def test_validate_signature_and_constants():
    p = parse(IDENTITY)
    other = Signature(("i_1", "i_2"), ("o_1",), anti_leak=True)
    assert [v.kind for v in validate(p, other)] == ["signature"]
    bad = Program(p.signature, (Statement("o_1", BinOp("*", Num(float("inf")), Ref("i_1"))),))
    assert [v.kind for v in validate(bad)] == ["constant"]


def test_to_generic():
    g = to_generic(kalman.kalman_program())
    assert g.signature.anti_leak
    assert g.signature.inputs == ("i_1", "i_2", "i_3", "i_4", "i_5", "i_6")
    text = to_text(g)
    assert "x_predict" not in text and "o_1 = i_2 @ i_1" in text
    assert validate(g) == []


# ------------------------------------------------------------- interpreter


def test_interpret_identity():
    out = interpret(parse(IDENTITY), {"i_1": np.array([[7.0]])})
    np.testing.assert_array_equal(out["o_1"], [[7.0]])


def test_interpret_kalman_by_hand():
    env = {
        "x": np.array([[1.0], [2.0]]),
        "F": np.array([[1.0, 1.0], [0.0, 1.0]]),
        "P": np.eye(2),
        "Q": np.eye(2),
        "z": np.array([[2.0], [4.0]]),
        "R": np.eye(2),
    }
    out = interpret(kalman.kalman_program(), env)
    np.testing.assert_array_equal(out["x_predict"], [[3.0], [2.0]])
    S = np.array([[4.0, 1.0], [1.0, 3.0]])
    np.testing.assert_array_equal(out["S"], S)
    p_pred = np.array([[3.0, 1.0], [1.0, 2.0]])
    np.testing.assert_allclose(out["K"] @ S, p_pred, atol=1e-10)


def test_interpret_singular_reports_statement():
    p = parse("fn f(a) -> (b) {\n  c = a @ tr(a)\n  b = inv(c)\n}")
    with pytest.raises(EvalError) as info:
        interpret(p, {"a": np.array([[1.0], [1.0]])})
    assert info.value.kind == "singular" and info.value.statement == 1


def test_interpret_shape_and_nonfinite():
    p = parse("fn f(a, b) -> (c) { c = a @ b }")
    with pytest.raises(EvalError) as info:
        interpret(p, {"a": np.eye(2), "b": np.ones((3, 1))})
    assert info.value.kind == "shape-mismatch"
    p = parse("fn f(a) -> (c) { c = exp(1000 * a) }")
    with pytest.raises(EvalError) as info:
        interpret(p, {"a": np.eye(2)})
    assert info.value.kind == "non-finite"


def test_interpret_step_limit():
    body = "\n".join(["  t = a"] + ["  t = t @ t @ t @ t" for _ in range(60)] + ["  b = t"])
    p = parse("fn f(a) -> (b) {\n" + body + "\n}")
    with pytest.raises(EvalError) as info:
        interpret(p, {"a": 0.5 * np.eye(2)}, GuardConfig(max_ops=50))
    assert info.value.kind == "step-limit"


def test_interpret_scalar_semantics():
    p = parse(
        "fn f(a) -> (b, c, d) {\n"
        "  b = 2 - a + 0.5 * a\n"
        "  c = mean(a) @ a - rowmin(a)\n"
        "  d = maxs(log(a - 10), -1) + eye(2)\n"
        "}"
    )
    a = np.array([[1.0, 2.0], [3.0, 5.0]])
    out = interpret(p, {"a": a})
    np.testing.assert_allclose(out["b"], 2 - a + 0.5 * a)
    np.testing.assert_allclose(out["c"], a.mean() * a - a.min(axis=1, keepdims=True))
    np.testing.assert_allclose(out["d"], np.maximum(np.log(np.maximum(a - 10, 1e-8)), -1) + np.eye(2))


def test_interpret_is_deterministic_and_pure():
    p = kalman.kalman_program()
    rng = np.random.default_rng(4)
    from conftest import filter_inputs

    env = filter_inputs(rng)
    snapshot = {k: v.copy() for k, v in env.items()}
    a, b = interpret(p, env), interpret(p, env)
    for k in a:
        np.testing.assert_array_equal(a[k], b[k])
    for k in env:
        np.testing.assert_array_equal(env[k], snapshot[k])


# ---------------------------------------------------------------- compiler


def test_compiled_matches_interpreter_bitwise():
    from conftest import filter_inputs

    rng = np.random.default_rng(5)
    for name in kalman.FIXTURES:
        p = kalman.load_fixture(name)
        for _ in range(20):
            env = filter_inputs(rng)
            a, b = interpret(p, env), execute(p, env)
            for k in a:
                np.testing.assert_array_equal(a[k], b[k])


@settings(max_examples=300, deadline=None)
@given(programs(), st.integers(0, 2**32 - 1))
def test_compiled_and_interpreted_agree(p, seed):
    rng = np.random.default_rng(seed)
    env = {
        "a": rng.normal(size=(2, 2)),
        "b": rng.normal(size=(2, 2)),
        "F": rng.normal(size=(2, 2)),
        "x": rng.normal(size=(2, 2)),
    }
    try:
        want = interpret(p, env)
    except EvalError as err:
        with pytest.raises(EvalError) as info:
            execute(p, env)
        # shapes are checked when the tape is built, before anything runs
        assert info.value.kind in (err.kind, "shape-mismatch")
        return
    got = execute(p, env)
    for k in want:
        np.testing.assert_array_equal(got[k], want[k])
