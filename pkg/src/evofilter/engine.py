"""Island-model evolutionary search over filter programs.

Each island keeps a bounded database of its best candidates. An iteration
samples parents by Boltzmann (softmin) selection, creates children by CGP
mutation, random generation or language-model rewriting, evaluates them
on the training split and inserts them. Every few iterations the weakest
islands restart from the global best.
"""

import bisect
import dataclasses
import hashlib
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import cgp, dynsys, kalman, llmsearch
from .dsl import to_generic, to_text
from .dsl.ast import Program
from .dsl.errors import EvalError
from .dsl.interpreter import GuardConfig

log = logging.getLogger(__name__)

METHODS = ("cgp", "llm", "random")
MMSE_TOL = 1e-9
MODES = ("rediscovery", "beyond")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EngineConfig:
    method: str = "cgp"
    task: str = "predict"
    scenario: str = "gaussian"
    mode: str = "rediscovery"
    seed: int = 0
    iterations: int = 10
    eval_budget: int = None  # total over all islands; None: iterations only
    islands: int = 4
    migration_period: int = 10
    migration_count: int = None  # None: half the islands, rounded down
    db_capacity: int = 200
    temperature: float = 0.2
    init_size: int = 200
    parents_per_iteration: int = 30
    mutations_per_parent: int = 1000
    random_batch: int = 1000
    node_set: tuple = cgp.EXTENDED_NODE_SET
    max_nodes: int = None
    mutation_rate: float = 0.1
    prompt_mode: str = None  # None: anti-leak for rediscovery, descriptive otherwise
    max_tokens: int = 3000
    problem_description: str = None
    dt: float = 1.0
    sigma_a: float = 1.0
    sigma_z: float = 1.0
    delay_range: tuple = (0.0, 1.0)
    train_size: tuple = (1, 200)
    validation_size: tuple = (50, 500)
    test_size: tuple = (50, 500)
    rescore_top: int = 10
    rescore_all: bool = False
    workers: int = 1
    pivot_tol: float = 1e-12
    log_floor: float = 1e-8

    def __post_init__(self):
        for name in ("node_set", "delay_range", "train_size", "validation_size", "test_size"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        try:
            self.check()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def check(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.scenario not in dynsys.SCENARIOS:
            raise ValueError(f"scenario must be one of {dynsys.SCENARIOS}")
        kalman.make_task(self.task)
        if self.prompt_mode not in (None,) + llmsearch.MODES:
            raise ValueError(f"prompt_mode must be one of {llmsearch.MODES}")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        positive = (
            "islands",
            "migration_period",
            "db_capacity",
            "parents_per_iteration",
            "mutations_per_parent",
            "random_batch",
            "rescore_top",
            "workers",
            "max_tokens",
        )
        for name in positive:
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.iterations < 0 or self.init_size < 0:
            raise ValueError("iterations and init_size must be non-negative")
        if self.eval_budget is not None and self.eval_budget < 1:
            raise ValueError("eval_budget must be positive")
        if self.migration_count is not None and not 0 <= self.migration_count < self.islands:
            raise ValueError("migration_count must be below the island count")
        for name in ("train_size", "validation_size", "test_size"):
            n, T = getattr(self, name)
            if n < 1 or T < 1:
                raise ValueError(f"{name} must be (trajectories >= 1, steps >= 1)")
        dynsys.make_system(self.dt, self.sigma_a, self.sigma_z)
        dynsys.Scenario(self.scenario, self.delay_range)
        cgp.CgpConfig(self.node_set, self.max_nodes, self.mutation_rate)

    @property
    def resolved_prompt_mode(self):
        if self.prompt_mode:
            return self.prompt_mode
        return "anti-leak" if self.mode == "rediscovery" else "descriptive"

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------- database


@dataclass(eq=False)
class Candidate:
    """A program or genotype with its training fitness.

    ``text`` is the canonical program text (genotypes decode with generic
    names) and ``id`` its hash; both are computed on first use.
    """

    payload: object  # Genotype or Program
    fitness: float
    origin: str
    task: object = field(default=None, repr=False)
    _text: str = field(default=None, repr=False)

    @property
    def text(self):
        if self._text is None:
            self._text = candidate_text(self.payload, self.task)
        return self._text

    @property
    def id(self):
        return hashlib.sha256(self.text.encode()).hexdigest()


class Database:
    """Best-first store of at most ``capacity`` candidates with unique ids."""

    def __init__(self, capacity=200):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.entries = []
        self._keys = []
        self._ids = set()

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def best(self):
        return self.entries[0] if self.entries else None

    @property
    def worst(self):
        return self.entries[-1] if self.entries else None

    def insert(self, c):
        """Insert ``c``; returns False when it is a duplicate or not good enough."""
        if len(self.entries) >= self.capacity and c.fitness >= self._keys[-1]:
            return False
        cid = c.id
        if cid in self._ids:
            return False
        pos = bisect.bisect_right(self._keys, c.fitness)
        self._keys.insert(pos, c.fitness)
        self.entries.insert(pos, c)
        self._ids.add(cid)
        if len(self.entries) > self.capacity:
            self._keys.pop()
            self._ids.discard(self.entries.pop().id)
        return True

    def clear(self):
        self.entries.clear()
        self._keys.clear()
        self._ids.clear()

    def probabilities(self, temperature):
        """Softmin weights exp(-f/T), normalised after shifting by the best f."""
        f = np.asarray(self._keys, dtype=float)
        w = np.exp(-(f - f[0]) / temperature)
        return w / w.sum()

    def sample(self, k, temperature, rng):
        if not self.entries:
            raise ValueError("cannot sample from an empty database")
        idx = rng.choice(len(self.entries), size=k, p=self.probabilities(temperature))
        return [self.entries[i] for i in idx]

    def top(self, n):
        return self.entries[:n]


# --------------------------------------------------------------- evaluation


class Evaluator:
    """Training-split fitness, memoised in a caller-owned cache."""

    def __init__(self, task, data, guards):
        self.task = task
        self.data = data
        self.guards = guards

    def genotype(self, g, cache):
        key = cgp.phenotype_key(g)
        f = cache.get(key)
        if f is None:
            try:
                h = kalman.CompiledHarness(self.task, self.data.system, cgp.lowering(g), self.guards)
                f = kalman.evaluate_candidate(None, self.task, self.data, "train", harness=h).mean
            except EvalError:
                f = kalman.WORST_FITNESS
            cache[key] = f
        return f

    def program(self, p, cache):
        key = to_text(_renamed(p))
        f = cache.get(key)
        if f is None:
            f = kalman.evaluate_candidate(p, self.task, self.data, "train", self.guards).mean
            cache[key] = f
        return f


def _renamed(p):
    return Program(p.signature, p.statements, "f")


def candidate_text(payload, task):
    if isinstance(payload, cgp.Genotype):
        return to_text(cgp.decode(payload, task.generic_signature))
    return to_text(_renamed(payload))


def make_candidate(payload, fitness, origin, task):
    return Candidate(payload, fitness, origin, task)


# ------------------------------------------------------------------ islands


@dataclass
class Island:
    index: int
    db: Database
    rng: np.random.Generator
    evals: int = 0
    budget: int = None
    rejected: int = 0
    backend_failures: int = 0
    history: list = field(default_factory=list)
    cache: dict = field(default_factory=dict, repr=False)
    mmse_checked: int = 0
    mmse_violations: list = field(default_factory=list)

    @property
    def exhausted(self):
        return self.budget is not None and self.evals >= self.budget

    def room(self, n):
        return n if self.budget is None else max(0, min(n, self.budget - self.evals))


class Context:
    """Everything an island iteration needs besides the island itself."""

    def __init__(self, cfg, backend=None):
        self.cfg = cfg
        self.task = kalman.make_task(cfg.task)
        self.system = dynsys.make_system(cfg.dt, cfg.sigma_a, cfg.sigma_z)
        self.scenario = dynsys.Scenario(cfg.scenario, cfg.delay_range)
        sizes = {
            "train": cfg.train_size,
            "validation": cfg.validation_size,
            "test": cfg.test_size,
        }
        self.data = kalman.make_datasets(self.system, self.scenario, cfg.seed, sizes)
        self.guards = GuardConfig(cfg.pivot_tol, cfg.log_floor)
        self.cgp = cgp.CgpConfig(cfg.node_set, cfg.max_nodes, cfg.mutation_rate)
        self.max_nodes = self.cgp.nodes_for(self.task)
        self.evaluator = Evaluator(self.task, self.data, self.guards)
        self.backend = backend
        if cfg.method == "llm":
            mode = cfg.resolved_prompt_mode
            self.signature = (
                self.task.generic_signature if mode == "anti-leak" else self.task.signature
            )
        else:
            self.signature = self.task.generic_signature
        ref = kalman.evaluate_candidate(self.task.reference_program(), self.task, self.data, "train")
        self.reference_train = ref.mean

    def __getstate__(self):
        state = dict(self.__dict__)
        state["backend"] = None
        return state

    @property
    def arity(self):
        return len(self.task.signature.inputs), len(self.task.signature.outputs)

    def evaluate(self, island, payload, origin):
        island.evals += 1
        if isinstance(payload, cgp.Genotype):
            f = self.evaluator.genotype(payload, island.cache)
        else:
            f = self.evaluator.program(payload, island.cache)
        c = make_candidate(payload, f, origin, self.task)
        if self.cfg.scenario == "gaussian":
            # the reference filter minimises expected squared error, so any
            # candidate beating it on training data is sampling luck or a bug
            island.mmse_checked += 1
            if f < self.reference_train - MMSE_TOL:
                island.mmse_violations.append(c.id)
        island.db.insert(c)
        return c

    def random_payload(self, rng):
        g = cgp.random_genotype(self.cgp, self.arity, rng, self.max_nodes)
        if self.cfg.method == "llm":
            return cgp.decode(g, self.signature)
        return g

    def reference_payload(self):
        prog = kalman.kalman_program() if self.task.tag == "full" else self.task.reference_program()
        if self.cfg.method == "llm":
            return to_generic(prog) if self.signature.anti_leak else prog
        return cgp.encode(prog, max(self.max_nodes, cgp.reference_node_count(self.task)))


def init_island(ctx, island):
    if ctx.cfg.mode == "beyond":
        ctx.evaluate(island, ctx.reference_payload(), "seed-init")
    for _ in range(island.room(ctx.cfg.init_size)):
        ctx.evaluate(island, ctx.random_payload(island.rng), "random")


def run_iteration(ctx, island):
    """One sample/mutate/evaluate/insert round on ``island``."""
    cfg = ctx.cfg
    if island.exhausted:
        return
    if cfg.method == "random":
        for _ in range(island.room(cfg.random_batch)):
            ctx.evaluate(island, ctx.random_payload(island.rng), "random")
    elif cfg.method == "cgp":
        parents = island.db.sample(cfg.parents_per_iteration, cfg.temperature, island.rng)
        for parent in parents:
            for _ in range(island.room(cfg.mutations_per_parent)):
                child = cgp.mutate(parent.payload, ctx.cgp, island.rng)
                ctx.evaluate(island, child, "cgp")
    else:
        parents = island.db.sample(2 * cfg.parents_per_iteration, cfg.temperature, island.rng)
        for a, b in zip(parents[0::2], parents[1::2]):
            if island.exhausted:
                break
            for prog in llm_children(ctx, island, a.payload, b.payload):
                if island.exhausted:
                    break
                ctx.evaluate(island, prog, "llm")
    _record(island)


def llm_children(ctx, island, a, b):
    cfg = ctx.cfg
    description = cfg.problem_description or default_description(cfg)
    try:
        spec = llmsearch.PromptSpec(
            cfg.resolved_prompt_mode,
            (a, b),
            ctx.signature,
            cfg.max_tokens,
            description if cfg.resolved_prompt_mode == "descriptive" else "",
        )
        prompt = llmsearch.build_prompt(spec)
        reply = llmsearch.query_backend(ctx.backend, prompt, cfg.max_tokens)
    except (llmsearch.BackendError, llmsearch.LeakError, ValueError) as exc:
        log.warning("island %d: prompt produced no candidates: %s", island.index, exc)
        island.backend_failures += 1
        return []
    progs = llmsearch.parse_completions(reply, ctx.signature)
    island.rejected += len(progs.rejections)
    return list(progs)


def default_description(cfg):
    scen = {
        "gaussian": "Measurement noise is zero-mean Gaussian.",
        "half-gaussian": "Measurement noise is the absolute value of a zero-mean "
        "Gaussian, so it is always non-negative and biased.",
        "delayed": "Each measurement is taken at a random instant between the "
        "previous and the current step.",
        "nonlinear": "The true state evolves as x' = F g(x) + w with a fixed "
        "unknown nonlinear map g.",
    }[cfg.scenario]
    return (
        "Track a point moving in one dimension with state [position, velocity] "
        f"and time step {cfg.dt:g}. x is the previous state estimate, F the "
        "transition matrix, P the estimate covariance, Q the process noise "
        "covariance, z the current noisy measurement of the full state and R "
        "the measurement noise covariance. The function must return the "
        "predicted state, the covariance to carry to the next step, the "
        "innovation, its covariance, the gain and the corrected state estimate. "
        + scen
    )


def _record(island):
    f = [c.fitness for c in island.db]
    island.history.append(
        {
            "iteration": len(island.history),
            "island": island.index,
            "best": f[0] if f else kalman.WORST_FITNESS,
            "median": float(np.median(f)) if f else kalman.WORST_FITNESS,
            "evals": island.evals,
        }
    )


def migrate(islands, count=None):
    """Reset the weakest islands to a copy of the global best.

    Islands are ranked by best fitness with ties going to the lower index;
    the bottom ``count`` (default half, rounded down) are cleared.
    """
    n = len(islands)
    if n < 2:
        return []
    count = n // 2 if count is None else count
    ranked = sorted(
        range(n),
        key=lambda i: (islands[i].db.best.fitness if islands[i].db.best else math.inf, i),
    )
    best = islands[ranked[0]].db.best
    reset = sorted(ranked[n - count :])
    if best is None:
        return []
    for i in reset:
        islands[i].db.clear()
        islands[i].db.insert(dataclasses.replace(best))
    return reset


def _advance(ctx, island, n_iters):
    for _ in range(n_iters):
        run_iteration(ctx, island)
    return island


# ---------------------------------------------------------------- discovery


@dataclass
class RunResult:
    best_program: Program
    best_payload: object
    validation: kalman.FitnessReport
    test: kalman.FitnessReport
    fitness_history: list
    eval_counts: dict
    manifest: dict
    top: list


def manifest_hash(manifest):
    body = {k: v for k, v in manifest.items() if k not in ("hash", "wall_clock_s")}
    # the worker count changes scheduling only, never results
    body["config"] = {k: v for k, v in body.get("config", {}).items() if k != "workers"}
    text = json.dumps(body, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()


def _program_of(payload, task):
    if isinstance(payload, cgp.Genotype):
        return cgp.decode(payload, task.signature)
    return payload


def run_discovery(cfg, backend=None):
    """Run the island search and select the winner on the validation split."""
    t0 = time.perf_counter()
    if cfg.method == "llm" and backend is None:
        raise ConfigError("the llm method needs a backend")
    ctx = Context(cfg, backend)
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.islands)
    per_island = None if cfg.eval_budget is None else cfg.eval_budget // cfg.islands
    islands = [
        Island(i, Database(cfg.db_capacity), np.random.default_rng(s), budget=per_island)
        for i, s in enumerate(seeds)
    ]
    for isl in islands:
        init_island(ctx, isl)
    migrations = []
    done = 0
    pool = ProcessPoolExecutor(cfg.workers) if cfg.workers > 1 and cfg.method != "llm" else None
    try:
        while done < cfg.iterations and not all(i.exhausted for i in islands):
            step = min(cfg.migration_period - done % cfg.migration_period, cfg.iterations - done)
            if pool is None:
                for isl in islands:
                    _advance(ctx, isl, step)
            else:
                futures = [pool.submit(_advance, ctx, isl, step) for isl in islands]
                islands = [f.result() for f in futures]
            done += step
            if done % cfg.migration_period == 0:
                migrations.append({"iteration": done, "reset": migrate(islands, cfg.migration_count)})
    finally:
        if pool is not None:
            pool.shutdown()

    task, data = ctx.task, ctx.data
    pool_cands = {}
    for isl in islands:
        for c in list(isl.db) if cfg.rescore_all else isl.db.top(cfg.rescore_top):
            pool_cands.setdefault(c.id, c)
    scored = []
    for c in pool_cands.values():
        prog = _program_of(c.payload, task)
        scored.append((kalman.evaluate_candidate(prog, task, data, "validation", ctx.guards), c, prog))
    scored.sort(key=lambda s: s[0].mean)
    val, best, best_prog = scored[0]
    test = kalman.evaluate_candidate(best_prog, task, data, "test", ctx.guards)

    ref = task.reference_program()
    baseline = {
        split: kalman.evaluate_candidate(ref, task, data, split).mean for split in kalman.SPLITS
    }
    history = [row for isl in islands for row in isl.history]
    history.sort(key=lambda r: (r["iteration"], r["island"]))
    evals = {
        "total": sum(i.evals for i in islands),
        "per_island": [i.evals for i in islands],
        "rejected": sum(i.rejected for i in islands),
        "backend_failures": sum(i.backend_failures for i in islands),
    }
    mmse = None
    if cfg.scenario == "gaussian":
        mmse = {
            "checked": sum(i.mmse_checked for i in islands),
            "train_violations": sum(len(i.mmse_violations) for i in islands),
            "validation_violations": [
                s[1].id for s in scored if s[0].mean < baseline["validation"] - MMSE_TOL
            ],
        }
    manifest = {
        "config": cfg.to_dict(),
        "task": task.tag,
        "iterations_run": done,
        "migrations": migrations,
        "history": history,
        "eval_counts": evals,
        "reference_fitness": baseline,
        "observation_mse": {
            split: dynsys.observation_mse(data.split(split).trajectories)
            for split in kalman.SPLITS
        },
        "mmse_monitor": mmse,
        "best": {
            "id": best.id,
            "origin": best.origin,
            "train": best.fitness,
            "validation": val.mean,
            "test": {"mean": test.mean, "stderr": test.stderr, "failure": test.failure},
            "program": to_text(best_prog),
        },
    }
    manifest["hash"] = manifest_hash(manifest)
    manifest["wall_clock_s"] = time.perf_counter() - t0
    top = [(s[1], s[2], s[0]) for s in scored]
    return RunResult(best_prog, best.payload, val, test, history, evals, manifest, top)
