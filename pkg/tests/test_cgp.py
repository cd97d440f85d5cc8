import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evofilter import cgp, kalman
from evofilter.dsl import EvalError, generic_signature, interpret, parse, to_text, validate

from conftest import filter_inputs

EXT = cgp.CgpConfig()
FULL = kalman.make_task("full")
PREDICT = kalman.make_task("predict")


def G(n_in, nodes, outputs):
    g = cgp.Genotype(n_in, nodes, outputs)
    g.check()
    return g


def _valid(g, cfg=EXT):
    g.check(cfg.node_set)
    return True


# ------------------------------------------------------------------ genotype


def test_pass_through_decode():
    cfg = cgp.CgpConfig(node_set=("assign",), max_nodes=1)
    g = cgp.random_genotype(cfg, (1, 1), np.random.default_rng(0))
    p = cgp.decode(g, generic_signature(1, 1))
    out = interpret(p, {"i_1": np.array([[3.0]])})
    np.testing.assert_array_equal(out["o_1"], [[3.0]])


def test_random_genotypes_are_valid():
    rng = np.random.default_rng(1)
    for _ in range(10_000):
        g = cgp.random_genotype(EXT, (6, 6), rng, max_nodes=int(rng.integers(1, 16)))
        assert _valid(g)
        assert len(g.outputs) == 6


def test_random_genotype_is_deterministic():
    a = cgp.random_genotype(EXT, (4, 2), np.random.default_rng(7), 6)
    b = cgp.random_genotype(EXT, (4, 2), np.random.default_rng(7), 6)
    assert a == b


def test_json_round_trip():
    g = cgp.random_genotype(EXT, (6, 6), np.random.default_rng(2), 15)
    assert cgp.Genotype.from_json(g.to_json()) == g
    with pytest.raises(ValueError):
        cgp.Genotype.from_dict({"num_inputs": 1, "nodes": [["add", 0, 1]], "outputs": [0]})


def test_config_validation():
    with pytest.raises(ValueError):
        cgp.CgpConfig(node_set=())
    with pytest.raises(ValueError):
        cgp.CgpConfig(node_set=("add", "exp"))
    with pytest.raises(ValueError):
        cgp.CgpConfig(mutation_rate=1.5)
    assert cgp.CgpConfig().node_set == cgp.EXTENDED_NODE_SET
    assert cgp.STRICT_NODE_SET == ("add", "assign", "matmul", "invert")


def test_default_size_is_reference_plus_two():
    assert cgp.reference_node_count(PREDICT) == 5
    assert cgp.reference_node_count(FULL) == 13
    assert EXT.nodes_for(PREDICT) == 7
    assert EXT.nodes_for(FULL) == 15
    assert cgp.CgpConfig(max_nodes=4).nodes_for(PREDICT) == 4


# ------------------------------------------------------------------ activity


def test_active_nodes_examples():
    # output reads an input directly
    assert cgp.active_nodes(G(1, [("add", 0, 0)], [0])) == frozenset()
    # chain input -> n0 -> n1 -> output
    chain = G(1, [("transpose", 0, 0), ("invert", 1, 0)], [2])
    assert cgp.active_nodes(chain) == {0, 1}
    # node 1 hangs off the path
    side = G(1, [("transpose", 0, 0), ("add", 0, 0), ("invert", 1, 0)], [3])
    assert cgp.active_nodes(side) == {0, 2}


def test_unary_ops_ignore_second_connection():
    g = G(2, [("add", 0, 1), ("transpose", 1, 2)], [3])
    assert cgp.active_nodes(g) == {1}


# ------------------------------------------------------------------ mutation


def test_mutation_rate_zero_changes_one_active_gene():
    rng = np.random.default_rng(3)
    cfg = cgp.CgpConfig(mutation_rate=0.0)
    for _ in range(500):
        g = cgp.random_genotype(cfg, (4, 2), rng, 7)
        child = cgp.mutate(g, cfg, rng)
        changed = [
            x for x in cgp.active_genes(g) if cgp._gene_value(g, x) != cgp._gene_value(child, x)
        ]
        all_changed = sum(a != b for a, b in zip(g.nodes, child.nodes)) + sum(
            a != b for a, b in zip(g.outputs, child.outputs)
        )
        assert len(changed) == 1 and all_changed == 1


def test_mutation_rate_one_redraws_everything():
    rng = np.random.default_rng(4)
    cfg = cgp.CgpConfig(mutation_rate=1.0)
    g = cgp.random_genotype(cfg, (6, 6), rng, 15)
    child = cgp.mutate(g, cfg, rng)
    assert _valid(child)
    for j, (a, b) in enumerate(zip(g.nodes, child.nodes)):
        assert a[0] != b[0]
        if 6 + j > 1:
            assert a[1] != b[1] and a[2] != b[2]
    assert all(a != b for a, b in zip(g.outputs, child.outputs))


def test_mutation_closure_fuzz():
    rng = np.random.default_rng(5)
    for cfg in (EXT, cgp.CgpConfig(cgp.STRICT_NODE_SET, mutation_rate=0.3)):
        g = cgp.random_genotype(cfg, (6, 6), rng, 15)
        for _ in range(50_000):
            g = cgp.mutate(g, cfg, rng)
            assert _valid(g, cfg)
            assert g.max_nodes == 15 and len(g.outputs) == 6


def test_inactive_mutation_is_neutral():
    rng = np.random.default_rng(6)
    sig = generic_signature(4, 2)
    for _ in range(300):
        g = cgp.random_genotype(EXT, (4, 2), rng, 7)
        inactive = [j for j in range(7) if j not in g.active]
        if not inactive:
            continue
        nodes = list(g.nodes)
        j = inactive[rng.integers(len(inactive))]
        nodes[j] = cgp._draw_node(EXT.node_set, 4, j, rng)
        h = cgp.Genotype(4, tuple(nodes), g.outputs)
        assert to_text(cgp.decode(h, sig)) == to_text(cgp.decode(g, sig))
        assert cgp.phenotype_key(h) == cgp.phenotype_key(g)


# -------------------------------------------------------------------- decode


def test_single_add_decode():
    g = G(2, [("add", 0, 1)], [2])
    p = cgp.decode(g, generic_signature(2, 1))
    assert to_text(p) == "fn f(i_1, i_2) -> (o_1) {\n  o_1 = i_1 + i_2\n}\n"


def test_inactive_nodes_produce_no_statements():
    g = G(2, [("add", 0, 1), ("matmul", 0, 0), ("sub", 2, 1)], [2])
    p = cgp.decode(g, generic_signature(2, 1))
    assert len(p.statements) == 1


def test_output_aliases():
    g = G(2, [("add", 0, 1)], [2, 0, 2])
    p = cgp.decode(g, generic_signature(2, 3))
    assert [s.target for s in p.statements] == ["o_1", "o_2", "o_3"]
    assert validate(p) == []


def test_decode_keeps_input_meaning_when_output_shadows_it():
    # P is both an input and an output of the filter signatures
    g = cgp.encode(PREDICT.reference_program())
    p = cgp.decode(g, PREDICT.signature)
    assert validate(p, PREDICT.signature) == []
    env = filter_inputs(np.random.default_rng(0))
    env = {k: env[k] for k in PREDICT.signature.inputs}
    want = interpret(PREDICT.reference_program(), env)
    got = interpret(p, env)
    for k in want:
        np.testing.assert_allclose(got[k], want[k], rtol=0, atol=1e-15)


def _dual_path(g, sig, env):
    try:
        want = cgp.evaluate_graph(g, [env[n] for n in sig.inputs])
    except Exception:  # noqa: BLE001 - matrix errors mean both paths must fail
        with pytest.raises(EvalError):
            interpret(cgp.decode(g, sig), env)
        return None
    out = interpret(cgp.decode(g, sig), env)
    diff = max(float(np.max(np.abs(out[o] - w))) for o, w in zip(sig.outputs, want))
    return diff


def test_decode_interpret_matches_graph_evaluation():
    rng = np.random.default_rng(8)
    sig = FULL.signature
    worst = 0.0
    compared = 0
    for _ in range(100):
        g = cgp.random_genotype(EXT, (6, 6), rng, 15)
        env = filter_inputs(rng)
        d = _dual_path(g, sig, env)
        if d is not None:
            worst = max(worst, d)
            compared += 1
    assert compared > 20
    assert worst < 1e-12


def test_encode_kalman_round_trip():
    g = cgp.encode(kalman.kalman_program())
    assert g.max_nodes == 13 and len(g.active) == 13
    p = cgp.decode(g, FULL.signature)
    env = filter_inputs(np.random.default_rng(9))
    want = interpret(kalman.kalman_program(), env)
    got = interpret(p, env)
    for k in want:
        np.testing.assert_array_equal(got[k], want[k])
    with pytest.raises(ValueError):
        cgp.encode(parse("fn f(a) -> (b) { b = exp(a) }"))


def test_encode_pads_with_inactive_nodes():
    g = cgp.encode(PREDICT.reference_program(), max_nodes=7)
    assert g.max_nodes == 7 and len(g.active) == 5
    with pytest.raises(ValueError):
        cgp.encode(PREDICT.reference_program(), max_nodes=4)


def test_lowering_matches_decoded_program(small_data):
    rng = np.random.default_rng(10)
    seen = 0
    for _ in range(200):
        g = cgp.random_genotype(EXT, (6, 6), rng, 15)
        a = kalman.evaluate_candidate(cgp.decode(g, FULL.generic_signature), FULL, small_data, "train")
        try:
            h = kalman.CompiledHarness(FULL, small_data.system, cgp.lowering(g))
            b = kalman.evaluate_candidate(None, FULL, small_data, "train", harness=h)
        except EvalError:
            assert not a.ok
            continue
        assert a.mean == b.mean
        seen += a.ok
    assert seen > 0


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 15))
def test_decode_round_trips_and_validates(seed, n):
    g = cgp.random_genotype(EXT, (6, 6), np.random.default_rng(seed), n)
    for sig in (FULL.signature, FULL.generic_signature):
        p = cgp.decode(g, sig)
        assert parse(to_text(p), signature=sig) == p
        assert validate(p, sig) == []


def test_eleven_node_filter_matches_reference(small_data):
    # with R = I the posterior covariance (I - K) P equals K R = K
    text = """fn f(x, F, P, Q, z, R) -> (x_predict, P, y, S, K, x_update) {
  x_predict = F @ x
  Pp = F @ tr(F @ P) + Q
  S = Pp + R
  K = Pp @ inv(S)
  y = z - x_predict
  x_update = x_predict + K @ y
  P = K
}"""
    g = cgp.encode(parse(text))
    assert len(g.active) == 11
    a = kalman.evaluate_candidate(cgp.decode(g, FULL.signature), FULL, small_data, "validation")
    b = kalman.evaluate_candidate(kalman.kalman_program(), FULL, small_data, "validation")
    assert abs(a.mean - b.mean) < 1e-12
