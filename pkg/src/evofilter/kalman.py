"""Reference filter, tasks, datasets and the candidate evaluation harness.

A task fixes how much of the predict/update cycle a candidate has to
supply. The harness composes the candidate with the reference statements
for the rest of the cycle and runs the result over whole trajectories.
"""

import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import dynsys
from .dsl import compiler, parse
from .dsl.ast import Program, Signature, generic_signature
from .dsl.errors import EvalError
from .dsl.interpreter import DEFAULT_GUARDS, interpret
from .dsl.validate import validate

WORST_FITNESS = 1e18

PREDICT_SOURCE = """
x_predict = F @ x
P = F @ P @ tr(F) + Q
"""
UPDATE_SOURCE = """
y = z - x_predict
S = P + R
K = P @ inv(S)
x_update = x_predict + K @ y
P = P - K @ P
"""

FULL_INPUTS = ("x", "F", "P", "Q", "z", "R")
PREDICT_INPUTS = ("x", "F", "P", "Q")
FULL_OUTPUTS = ("x_predict", "P", "y", "S", "K", "x_update")

UPDATE_FRACTIONS = (0.125, 0.25, 0.5, 0.75, 1.0)


def _statements(source, inputs):
    defined = set(inputs) | {"x_predict", "P", "y", "S", "K"}
    sig = Signature(tuple(sorted(defined)), ("P",))
    return parse(source, signature=sig).statements


PREDICT_STATEMENTS = _statements(PREDICT_SOURCE, FULL_INPUTS)
UPDATE_STATEMENTS = _statements(UPDATE_SOURCE, FULL_INPUTS)


# ---------------------------------------------------------------- reference


@dataclass(frozen=True, eq=False)
class FilterState:
    x_hat: np.ndarray
    P: np.ndarray


def initial_state(n=2):
    return FilterState(np.zeros((n, 1)), np.eye(n))


def predict(s, sys, u=None):
    x = sys.F @ s.x_hat
    if u is not None:
        x = x + sys.B @ np.asarray(u, dtype=float).reshape(-1, 1)
    return FilterState(x, sys.F @ s.P @ sys.F.T + sys.Q)


def update(s, z, sys, symmetrize=True):
    """Measurement update; returns ``(state, y, S, K)``."""
    H = sys.H
    z = np.asarray(z, dtype=float).reshape(-1, 1)
    y = z - H @ s.x_hat
    S = H @ s.P @ H.T + sys.R
    K = s.P @ H.T @ np.linalg.inv(S)
    P = s.P - K @ H @ s.P
    if symmetrize:
        P = (P + P.T) / 2.0
    return FilterState(s.x_hat + K @ y, P), y, S, K


def kalman_step(state, z, sys):
    return update(predict(state, sys), z, sys)[0]


def g_aware_step(g):
    """Stepper that propagates the mean through ``x -> F g(x)``."""

    def step(state, z, sys):
        x = sys.F @ np.asarray(g(state.x_hat[:, 0])).reshape(-1, 1)
        prior = FilterState(x, sys.F @ state.P @ sys.F.T + sys.Q)
        return update(prior, z, sys)[0]

    return step


def run_filter(sys, traj, stepper=kalman_step, observations=None, on_step=None):
    """Posterior estimates (T, n), one per step, from x0 = 0, P0 = I.

    ``stepper(state, z, sys)`` returns the next state. ``on_step`` if given
    is called with every posterior state.
    """
    obs = traj.observations if observations is None else observations
    state = initial_state(sys.n)
    est = np.empty((obs.shape[0], sys.n))
    for k, z in enumerate(obs):
        state = stepper(state, z, sys)
        if on_step is not None:
            on_step(state)
        est[k] = state.x_hat[:, 0]
    return est


def fitness(estimates, truth):
    """Mean over steps of the squared Euclidean estimation error."""
    estimates = np.asarray(estimates, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimates.shape != truth.shape or estimates.shape[0] < 1:
        raise ValueError(f"shape mismatch: {estimates.shape} vs {truth.shape}")
    with np.errstate(over="ignore"):
        return float(np.mean(np.sum((estimates - truth) ** 2, axis=-1)))


def half_gaussian_bias(sys):
    return sys.sigma_z * dynsys.HALF_NORMAL_MEAN


def debiased_kalman_baseline(sys, traj):
    """Standard filter on observations with the half-normal mean removed.

    Trajectories from other scenarios get no correction.
    """
    bias = half_gaussian_bias(sys) if traj.scenario == "half-gaussian" else 0.0
    return run_filter(sys, traj, observations=traj.observations - bias)


# -------------------------------------------------------------------- tasks


@dataclass(frozen=True)
class TaskSpec:
    """What a candidate must compute.

    ``discovered`` are the reference statements the candidate replaces and
    ``fixed_remainder`` the ones the harness runs after it.
    """

    tag: str
    signature: Signature
    discovered: tuple
    fixed_remainder: tuple

    @property
    def generic_signature(self):
        return generic_signature(len(self.signature.inputs), len(self.signature.outputs))

    @property
    def target_size(self):
        return len(self.discovered)

    def reference_program(self, name="reference"):
        return Program(self.signature, self.discovered, name)

    def signature_for(self, program):
        return self.generic_signature if program.signature.anti_leak else self.signature


TASK_TAGS = ("predict",) + tuple(f"predict+{f:g}" for f in UPDATE_FRACTIONS[:-1]) + ("full",)


def _fraction_from_tag(tag):
    tag = tag.strip().lower()
    if tag in ("predict", "predict-only"):
        return 0.0
    if tag == "full":
        return 1.0
    if tag.startswith("predict+"):
        v = tag[len("predict+") :]
        f = float(v[:-1]) / 100.0 if v.endswith("%") else float(v)
        if f in UPDATE_FRACTIONS:
            return f
    raise ValueError(f"unknown task {tag!r}; expected one of {TASK_TAGS}")


def make_task(tag="full"):
    """Build a task from a tag such as ``predict``, ``predict+0.25`` or ``full``.

    A fraction f of the update step means the first ceil(5 f) of its five
    statements are discovered by the candidate.
    """
    f = _fraction_from_tag(tag)
    if f == 0.0:
        return TaskSpec(
            "predict",
            Signature(PREDICT_INPUTS, ("x_predict", "P")),
            PREDICT_STATEMENTS,
            UPDATE_STATEMENTS,
        )
    n = math.ceil(f * len(UPDATE_STATEMENTS) - 1e-9)
    outputs = ("x_predict", "P") + tuple(s.target for s in UPDATE_STATEMENTS[: min(n, 4)])
    canonical = "full" if f == 1.0 else f"predict+{f:g}"
    return TaskSpec(
        canonical,
        Signature(FULL_INPUTS, outputs),
        PREDICT_STATEMENTS + UPDATE_STATEMENTS[:n],
        UPDATE_STATEMENTS[n:],
    )


# ----------------------------------------------------------------- datasets


SPLITS = ("train", "validation", "test")
DEFAULT_SIZES = {"train": (1, 200), "validation": (50, 500), "test": (50, 500)}


@dataclass(frozen=True, eq=False)
class Split:
    trajectories: tuple
    seeds: tuple

    @property
    def states(self):
        return np.stack([t.states for t in self.trajectories])

    @property
    def observations(self):
        return np.stack([t.observations for t in self.trajectories])


@dataclass(frozen=True, eq=False)
class EvalDatasets:
    system: dynsys.SystemModel
    scenario: dynsys.Scenario
    train: Split
    validation: Split
    test: Split
    seed: int = 0
    _stacked: dict = field(default_factory=dict, repr=False)

    def split(self, name):
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}; expected one of {SPLITS}")
        return getattr(self, name)

    def arrays(self, name):
        """Cached ``(states, observations)`` stacks of shape (N, T, 2)."""
        if name not in self._stacked:
            s = self.split(name)
            self._stacked[name] = (s.states, s.observations)
        return self._stacked[name]


def make_datasets(system=None, scenario=None, seed=0, sizes=None):
    """Simulate train/validation/test splits with disjoint seeds.

    Trajectory i of split j uses the seed entropy (seed, j, i).
    """
    system = system or dynsys.make_system()
    scenario = scenario or dynsys.Scenario()
    sizes = {**DEFAULT_SIZES, **(sizes or {})}
    splits = {}
    for j, name in enumerate(SPLITS):
        n, T = sizes[name]
        seeds = tuple((seed, j, i) for i in range(n))
        trajs = tuple(dynsys.simulate(system, scenario, T, list(s)) for s in seeds)
        splits[name] = Split(trajs, seeds)
    return EvalDatasets(system, scenario, seed=seed, **splits)


# ------------------------------------------------------------------ harness


@dataclass(frozen=True)
class FitnessReport:
    mean: float
    per_trajectory: np.ndarray
    stderr: float
    failure: str = None
    per_step: np.ndarray = None

    @property
    def ok(self):
        return self.failure is None

    def __str__(self):
        if self.failure:
            return f"failed ({self.failure})"
        return f"{self.mean:.6f} ± {self.stderr:.6f}"


def failed_report(n, reason):
    return FitnessReport(WORST_FITNESS, np.full(n, WORST_FITNESS), 0.0, reason)


def report_from_estimates(estimates, truth):
    per_traj = np.array([fitness(e, t) for e, t in zip(estimates, truth)])
    mean = float(np.mean(per_traj))
    if not math.isfinite(mean) or mean >= WORST_FITNESS:
        return failed_report(len(per_traj), "non-finite: fitness overflowed")
    n = len(per_traj)
    stderr = float(np.std(per_traj, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    with np.errstate(over="ignore"):
        per_step = np.mean(np.sum((estimates - truth) ** 2, axis=-1), axis=0)
    return FitnessReport(mean, per_traj, stderr, None, per_step)


def _describe(err, program):
    where = "harness" if err.statement < 0 else f"statement {err.statement}"
    if program is not None and 0 <= err.statement < len(program.statements):
        where += f" ({program.statements[err.statement].target})"
    return f"{err.kind} at {where}: {err.message}"


class CompiledHarness:
    """A candidate fused with the task remainder, lowered to one tape.

    ``lower(builder, input_regs)`` emits the candidate and returns its
    output registers in signature order.
    """

    def __init__(self, task, system, lower, guards=DEFAULT_GUARDS):
        self.guards = guards
        b = compiler.TapeBuilder(guards)
        n = system.n
        regs = {
            "x": b.register((n, 1), np.zeros((n, 1))),
            "F": b.register((n, n), system.F),
            "P": b.register((n, n), np.eye(n)),
            "Q": b.register((n, n), system.Q),
            "z": b.register((n, 1)),
            "R": b.register((n, n), system.R),
        }
        outs = lower(b, [regs[role] for role in task.signature.inputs])
        state = dict(regs)
        state.update(zip(task.signature.outputs, outs))
        b.statements(task.fixed_remainder, state, tag_statements=False)
        srcs = [state["x_update"], state["P"]]
        dsts = [regs["x"], regs["P"]]
        if any(s in dsts and s != d for s, d in zip(srcs, dsts)):
            srcs = [b.emit(compiler.OP_COPY, b.shape(s), s) for s in srcs]
        for s, d in zip(srcs, dsts):
            b.copy_into(d, s)
        self.tape = b.build()
        self.z_reg = regs["z"]
        # the copied-back x register holds the posterior after each step
        self.est_reg = regs["x"]

    @classmethod
    def from_program(cls, program, task, system, guards=DEFAULT_GUARDS):
        def lower(b, ins):
            env = dict(zip(program.signature.inputs, ins))
            b.statements(program.statements, env)
            return [env[name] for name in program.signature.outputs]

        return cls(task, system, lower, guards)

    def estimates(self, observations):
        return compiler.run_batch(self.tape, observations, self.z_reg, self.est_reg, self.guards)


def compile_candidate(program, task, system, guards=DEFAULT_GUARDS):
    return CompiledHarness.from_program(program, task, system, guards)


def evaluate_candidate(program, task, data, split="train", guards=DEFAULT_GUARDS, harness=None):
    """Fitness of ``program`` on one split as a :class:`FitnessReport`.

    Invalid programs and any runtime failure yield the worst-fitness
    sentinel with the reason in ``failure``. A prebuilt ``harness`` skips
    validation and compilation.
    """
    truth, obs = data.arrays(split)
    n = truth.shape[0]
    if harness is None:
        problems = validate(program, task.signature_for(program))
        if problems:
            return failed_report(n, "invalid: " + "; ".join(map(str, problems)))
        try:
            harness = compile_candidate(program, task, data.system, guards)
        except EvalError as err:
            return failed_report(n, _describe(err, program))
    try:
        est = harness.estimates(obs)
    except EvalError as err:
        return failed_report(n, _describe(err, program))
    return report_from_estimates(est, truth)


def interpreted_stepper(program, task, guards=DEFAULT_GUARDS):
    """Step function running candidate + remainder with the tree interpreter.

    This is the slow reference path for the compiled harness.
    """
    tail_sig = Signature(
        FULL_INPUTS + tuple(o for o in task.signature.outputs if o not in FULL_INPUTS),
        ("x_update", "P"),
    )
    tail = Program(tail_sig, task.fixed_remainder)

    def step(state, z, sys):
        roles = {
            "x": state.x_hat,
            "F": sys.F,
            "P": state.P,
            "Q": sys.Q,
            "z": np.asarray(z, dtype=float).reshape(-1, 1),
            "R": sys.R,
        }
        env = {n: roles[r] for n, r in zip(program.signature.inputs, task.signature.inputs)}
        out = interpret(program, env, guards)
        for name, role in zip(program.signature.outputs, task.signature.outputs):
            roles[role] = out[name]
        res = interpret(tail, roles, guards)
        x, P = res["x_update"], res["P"]
        if x.shape != state.x_hat.shape or P.shape != state.P.shape:
            raise EvalError("shape-mismatch", -1, "feedback shape changed between steps")
        return FilterState(x, P)

    return step


def kalman_report(data, split="train", stepper=kalman_step):
    """Report for a native stepper (default: the reference filter)."""
    s = data.split(split)
    est = np.stack([run_filter(data.system, t, stepper) for t in s.trajectories])
    return report_from_estimates(est, data.arrays(split)[0])


# ----------------------------------------------------------------- fixtures

FIXTURES = ("kalman", "half_gaussian", "delayed", "nonlinear")
FIXTURE_SCENARIO = {
    "kalman": "gaussian",
    "half_gaussian": "half-gaussian",
    "delayed": "delayed",
    "nonlinear": "nonlinear",
}


def fixture_text(name):
    if name not in FIXTURES:
        raise ValueError(f"unknown fixture {name!r}; expected one of {FIXTURES}")
    return resources.files("evofilter.fixtures").joinpath(f"{name}.mdsl").read_text()


def load_fixture(name):
    return parse(fixture_text(name), name=name)


def kalman_program():
    return load_fixture("kalman")


class MMSEMonitor:
    """Records candidates that beat the reference filter on a gaussian run.

    The reference filter has the least expected squared error among all
    estimators, so on a finite sample a violation is evidence of either
    sampling luck or a harness bug. Violations are logged, not raised.
    """

    def __init__(self, reference_fitness, tol=1e-9):
        self.reference = reference_fitness
        self.tol = tol
        self.checked = 0
        self.violations = []

    def observe(self, key, value):
        self.checked += 1
        if value < self.reference - self.tol:
            self.violations.append((key, value))
            return False
        return True
