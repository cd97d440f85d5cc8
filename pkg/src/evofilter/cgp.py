"""Cartesian genetic programming over matrix operations.

Genotypes use a single-row layout: node j may read any input or any node
before it. Only nodes reachable from the output genes (the active nodes)
affect the decoded program.
"""

import json
from dataclasses import dataclass
from functools import cached_property


from . import matrix as M
from .dsl.ast import BinOp, Call, Program, Ref, Statement, walk
from .dsl.compiler import OP_ADD, OP_SUB

BINARY = {"add": "+", "sub": "-", "matmul": "@"}
UNARY = {"invert": "inv", "transpose": "tr", "assign": None}
OPS = ("add", "sub", "assign", "matmul", "invert", "transpose")
STRICT_NODE_SET = ("add", "assign", "matmul", "invert")
EXTENDED_NODE_SET = OPS


def is_binary(op):
    return op in BINARY


@dataclass(frozen=True)
class Genotype:
    num_inputs: int
    nodes: tuple  # (op, conn1, conn2) per node
    outputs: tuple

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(tuple(n) for n in self.nodes))
        object.__setattr__(self, "outputs", tuple(self.outputs))

    @property
    def max_nodes(self):
        return len(self.nodes)

    @cached_property
    def active(self):
        """Sorted tuple of active node indices."""
        return tuple(sorted(_reachable(self)))

    def check(self, node_set=OPS):
        """Raise ValueError unless every gene is in range."""
        for j, (op, a, b) in enumerate(self.nodes):
            if op not in node_set:
                raise ValueError(f"node {j}: op {op!r} not in node set")
            limit = self.num_inputs + j
            for c in (a, b):
                if not 0 <= c < limit:
                    raise ValueError(f"node {j}: connection {c} outside [0, {limit})")
        limit = self.num_inputs + len(self.nodes)
        for o in self.outputs:
            if not 0 <= o < limit:
                raise ValueError(f"output gene {o} outside [0, {limit})")

    def to_dict(self):
        return {
            "num_inputs": self.num_inputs,
            "nodes": [list(n) for n in self.nodes],
            "outputs": list(self.outputs),
        }

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d):
        g = cls(
            int(d["num_inputs"]),
            tuple((str(op), int(a), int(b)) for op, a, b in d["nodes"]),
            tuple(int(o) for o in d["outputs"]),
        )
        g.check()
        return g

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class CgpConfig:
    node_set: tuple = EXTENDED_NODE_SET
    max_nodes: int = None  # None: reference node count of the task + 2
    mutation_rate: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "node_set", tuple(self.node_set))
        if not self.node_set:
            raise ValueError("node set must not be empty")
        unknown = set(self.node_set) - set(OPS)
        if unknown:
            raise ValueError(f"unknown node ops {sorted(unknown)}; expected a subset of {OPS}")
        if not 0.0 <= self.mutation_rate <= 1.0:
            raise ValueError("mutation rate must lie in [0, 1]")

    def nodes_for(self, task):
        return self.max_nodes if self.max_nodes is not None else reference_node_count(task) + 2


def reference_node_count(task):
    """Operation count of the task's reference statements.

    This is the smallest graph that computes them literally, one node per
    operator or function application.
    """
    return sum(
        isinstance(n, BinOp) or isinstance(n, Call)
        for st in task.discovered
        for n in walk(st.expr)
    )


# ---------------------------------------------------------------- variation


def _draw_node(node_set, num_inputs, j, rng):
    limit = num_inputs + j
    return (
        node_set[rng.integers(len(node_set))],
        int(rng.integers(limit)),
        int(rng.integers(limit)),
    )


def random_genotype(cfg, arity, rng, max_nodes=None):
    """Uniformly random genotype with ``arity = (n_in, n_out)``.

    Every node reads inputs or earlier nodes and no node is a constant,
    so each output depends on at least one input by construction.
    """
    n_in, n_out = arity
    n = max_nodes if max_nodes is not None else cfg.max_nodes
    if n is None:
        raise ValueError("max_nodes must be given")
    nodes = tuple(_draw_node(cfg.node_set, n_in, j, rng) for j in range(n))
    outputs = tuple(int(rng.integers(n_in + n)) for _ in range(n_out))
    return Genotype(n_in, nodes, outputs)


def active_nodes(g):
    """Indices (0-based, into ``g.nodes``) reachable from the outputs."""
    return frozenset(g.active)


def _reachable(g):
    active = set()
    stack = [o - g.num_inputs for o in g.outputs if o >= g.num_inputs]
    while stack:
        j = stack.pop()
        if j in active:
            continue
        active.add(j)
        op, a, b = g.nodes[j]
        conns = (a, b) if is_binary(op) else (a,)
        stack.extend(c - g.num_inputs for c in conns if c >= g.num_inputs)
    return active


def _redraw(current, n_options, rng, choices=None):
    """A uniformly drawn value different from ``current`` when possible."""
    if n_options <= 1:
        return current
    if choices is not None:
        idx = choices.index(current) if current in choices else -1
        k = int(rng.integers(n_options - (idx >= 0)))
        if idx >= 0 and k >= idx:
            k += 1
        return choices[k]
    k = int(rng.integers(n_options - 1))
    return k + 1 if k >= current else k


def active_genes(g):
    """Gene addresses that influence the phenotype.

    Addresses are ``("node", j, field)`` with field 0 (op), 1 or 2
    (connections) and ``("out", k)``.
    """
    genes = []
    for j in g.active:
        op = g.nodes[j][0]
        genes += [("node", j, 0), ("node", j, 1)]
        if is_binary(op):
            genes.append(("node", j, 2))
    genes += [("out", k) for k in range(len(g.outputs))]
    return genes


def _gene_options(g, gene, node_set):
    if gene[0] == "out":
        return g.num_inputs + len(g.nodes)
    _, j, f = gene
    return len(node_set) if f == 0 else g.num_inputs + j


def _set_gene(nodes, outputs, gene, g, node_set, rng):
    if gene[0] == "out":
        k = gene[1]
        outputs[k] = _redraw(outputs[k], _gene_options(g, gene, node_set), rng)
        return
    _, j, f = gene
    node = list(nodes[j])
    if f == 0:
        node[0] = _redraw(node[0], len(node_set), rng, list(node_set))
    else:
        node[f] = _redraw(node[f], g.num_inputs + j, rng)
    nodes[j] = tuple(node)


def mutate(g, cfg, rng):
    """Point mutation with a guaranteed change to an active gene.

    Each gene is redrawn with probability ``cfg.mutation_rate``. If no
    active gene changed, one uniformly chosen active gene (among those with
    an alternative value) is redrawn.
    """
    nodes = list(g.nodes)
    outputs = list(g.outputs)
    rate = cfg.mutation_rate
    all_genes = [("node", j, f) for j in range(len(nodes)) for f in range(3)]
    all_genes += [("out", k) for k in range(len(outputs))]
    if rate > 0:
        hits = rng.random(len(all_genes)) < rate
        for gene, hit in zip(all_genes, hits):
            if hit:
                _set_gene(nodes, outputs, gene, g, cfg.node_set, rng)
    child = Genotype(g.num_inputs, tuple(nodes), tuple(outputs))
    if _active_changed(g, child):
        return child
    candidates = [
        gene for gene in active_genes(g) if _gene_options(g, gene, cfg.node_set) > 1
    ]
    if not candidates:
        return child
    gene = candidates[rng.integers(len(candidates))]
    nodes = list(child.nodes)
    outputs = list(child.outputs)
    _set_gene(nodes, outputs, gene, g, cfg.node_set, rng)
    return Genotype(g.num_inputs, tuple(nodes), tuple(outputs))


def _gene_value(g, gene):
    return g.outputs[gene[1]] if gene[0] == "out" else g.nodes[gene[1]][gene[2]]


def _active_changed(parent, child):
    return any(_gene_value(parent, x) != _gene_value(child, x) for x in active_genes(parent))


# ------------------------------------------------------------------- decode


def phenotype_key(g):
    """Hashable summary of the active graph.

    Genotypes with equal keys decode to identical programs.
    """
    order = g.active
    pos = {g.num_inputs + j: g.num_inputs + k for k, j in enumerate(order)}

    def ref(c):
        return pos.get(c, c)

    body = []
    for j in order:
        op, a, b = g.nodes[j]
        body.append((op, ref(a), ref(b)) if is_binary(op) else (op, ref(a)))
    return (g.num_inputs, tuple(body), tuple(ref(o) for o in g.outputs))


def decode(g, sig):
    """Program with one statement per active node, in node order.

    A node is named after the first output that reads it, otherwise
    ``t_k``. Outputs that read an input or an already named node get an
    alias statement at the end. When an output name is also an input name
    (``P`` in the filter signatures), the input keeps its meaning until
    nothing reads it any more.
    """
    n_in = g.num_inputs
    if len(sig.inputs) != n_in or len(sig.outputs) != len(g.outputs):
        raise ValueError(
            f"signature arity ({len(sig.inputs)}, {len(sig.outputs)}) does not match "
            f"genotype ({n_in}, {len(g.outputs)})"
        )
    order = g.active
    input_index = {name: i for i, name in enumerate(sig.inputs)}
    # last position (in node order) that reads each input; outputs read at the end
    last_read = {}
    for j in order:
        op, a, b = g.nodes[j]
        for c in (a, b) if is_binary(op) else (a,):
            if c < n_in:
                last_read[c] = j
    for o in g.outputs:
        if o < n_in:
            last_read[o] = len(g.nodes)

    def can_own(name, j):
        i = input_index.get(name)
        return i is None or last_read.get(i, -1) <= j

    owner = {}
    for k, o in enumerate(g.outputs):
        if o >= n_in and o not in owner and can_own(sig.outputs[k], o - n_in):
            owner[o] = sig.outputs[k]
    names = dict(enumerate(sig.inputs))
    stmts = []
    temp = 0

    def fresh():
        nonlocal temp
        temp += 1
        return f"t_{temp}"

    for j in order:
        idx = n_in + j
        op, a, b = g.nodes[j]
        target = owner.get(idx) or fresh()
        if is_binary(op):
            expr = BinOp(BINARY[op], Ref(names[a]), Ref(names[b]))
        elif op == "assign":
            expr = Ref(names[a])
        else:
            expr = Call(UNARY[op], (Ref(names[a]),))
        names[idx] = target
        stmts.append(Statement(target, expr))
    aliases = [
        (sig.outputs[k], o)
        for k, o in enumerate(g.outputs)
        if o < n_in or names[o] != sig.outputs[k]
    ]
    # snapshot inputs that an alias is about to overwrite before reading them
    targets = {t for t, _ in aliases}
    for t, o in aliases:
        if o < n_in and names[o] in targets and names[o] != t:
            snap = fresh()
            stmts.append(Statement(snap, Ref(names[o])))
            names[o] = snap
    stmts += [Statement(t, Ref(names[o])) for t, o in aliases]
    return Program(sig, tuple(stmts))


def evaluate_graph(g, inputs):
    """Evaluate the genotype directly by recursion over the graph.

    This is an oracle for :func:`decode` followed by interpretation.
    """
    values = [M.as_matrix(v) for v in inputs]
    cache = {}

    def value(c):
        if c < g.num_inputs:
            return values[c]
        if c not in cache:
            op, a, b = g.nodes[c - g.num_inputs]
            if op == "add":
                cache[c] = M.add(value(a), value(b))
            elif op == "sub":
                cache[c] = M.sub(value(a), value(b))
            elif op == "matmul":
                x, y = value(a), value(b)
                if x.shape == (1, 1):
                    cache[c] = M.scale(y, x[0, 0])
                elif y.shape == (1, 1):
                    cache[c] = M.scale(x, y[0, 0])
                else:
                    cache[c] = M.matmul(x, y)
            elif op == "invert":
                cache[c] = M.invert(value(a))
            elif op == "transpose":
                cache[c] = M.transpose(value(a))
            else:
                cache[c] = value(a)
        return cache[c]

    return [value(o) for o in g.outputs]


def lowering(g):
    """Tape lowering callback for :class:`evofilter.kalman.CompiledHarness`.

    Emits the same instructions as compiling ``decode(g, sig)`` without
    building the program text.
    """

    def lower(b, ins):
        regs = dict(enumerate(ins))
        for k, j in enumerate(g.active):
            b._stmt = k
            op, a, c = g.nodes[j]
            b.ops += 1
            if op == "add":
                r = b.addsub(OP_ADD, regs[a], regs[c], "add")
            elif op == "sub":
                r = b.addsub(OP_SUB, regs[a], regs[c], "sub")
            elif op == "matmul":
                r = b.binop("@", regs[a], regs[c])
            elif op == "invert":
                r = b.inv(regs[a])
            elif op == "transpose":
                r = b.tr(regs[a])
            else:
                r = regs[a]
            regs[g.num_inputs + j] = r
        b._stmt = -1
        return [regs[o] for o in g.outputs]

    return lower


def encode(program, max_nodes=None):
    """Genotype computing ``program`` one operation per node.

    Only references, ``+``, ``-``, ``@``, ``inv`` and ``tr`` are
    representable. Unused trailing nodes are inactive copies of input 0.
    """
    sig = program.signature
    env = {name: i for i, name in enumerate(sig.inputs)}
    n_in = len(sig.inputs)
    nodes = []

    def emit(e):
        if isinstance(e, Ref):
            return env[e.name]
        if isinstance(e, BinOp) and e.op in "+-@":
            a, b = emit(e.left), emit(e.right)
            op = {"+": "add", "-": "sub", "@": "matmul"}[e.op]
        elif isinstance(e, Call) and e.func in ("inv", "tr"):
            a = b = emit(e.args[0])
            op = "invert" if e.func == "inv" else "transpose"
        else:
            raise ValueError(f"cannot encode {e!r} as a graph node")
        nodes.append((op, a, b))
        return n_in + len(nodes) - 1

    for st in program.statements:
        env[st.target] = emit(st.expr)
    outputs = tuple(env[name] for name in sig.outputs)
    n = len(nodes) if max_nodes is None else max_nodes
    if len(nodes) > n:
        raise ValueError(f"program needs {len(nodes)} nodes, more than {n}")
    nodes += [("assign", 0, 0)] * (n - len(nodes))
    return Genotype(n_in, tuple(nodes), outputs)
