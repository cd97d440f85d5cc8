"""Language-model mutation: prompts, a chat-completion client and parsing.

The model only ever sees and writes the matrix language, so nothing it
returns is executed outside the sandboxed evaluator.
"""

import json
import logging
import os
import re
import time
from dataclasses import dataclass

import requests

from .dsl import parse, to_generic, to_text, validate
from .dsl.errors import DslError

log = logging.getLogger(__name__)

BLOCKLIST = (
    "kalman",
    "filter",
    "covariance",
    "innovation",
    "gain",
    "measurement",
    "observation",
    "predict",
    "update",
    "estimat",
    "riccati",
    "noise",
)

MODES = ("anti-leak", "descriptive")

GRAMMAR = """\
Language summary (every value is a real matrix):
  fn NAME(in_1, ..., in_n) -> (out_1, ..., out_m) { statements }
  statement:  name = expression        (one per line)
  expression: a + b, a - b, a @ b (matrix product), 0.5 * a (literal times term),
              parentheses, numeric literals, and the functions
              inv(a), tr(a) (transpose), tanh, sin, cos, log, exp, abs, square
              (entrywise), maxs(a, 0.1) (entrywise max with a literal),
              rowmin(a) (column of row minima), mean(a), norm(a) (1x1 results),
              eye(n) (n x n identity).
  A name must be assigned before it is read. Every output must be assigned.
  A 1x1 value multiplies like a scalar."""


class LeakError(ValueError):
    """An anti-leak prompt would reveal a blocklisted word."""


class BackendError(RuntimeError):
    """The completion service failed or answered in an unexpected shape."""


@dataclass(frozen=True)
class PromptSpec:
    mode: str
    parents: tuple
    signature: object
    max_tokens: int = 3000
    problem_description: str = ""

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown prompt mode {self.mode!r}; expected one of {MODES}")
        object.__setattr__(self, "parents", tuple(self.parents))
        if len(self.parents) != 2:
            raise ValueError("a prompt needs exactly two parent programs")
        if self.mode == "anti-leak" and not self.signature.anti_leak:
            raise ValueError("anti-leak prompts need a generic signature")


def find_leaks(text, blocklist=BLOCKLIST):
    low = text.lower()
    return [w for w in blocklist if w in low]


def _render_parent(p, spec):
    if spec.mode == "anti-leak":
        p = to_generic(p, name="f")
    return to_text(p).rstrip()


def build_prompt(spec, blocklist=BLOCKLIST):
    """Render the prompt text for one mutation request.

    Raises LeakError when an anti-leak prompt contains a blocklisted word.
    """
    header = spec.signature.header("f")
    if spec.mode == "anti-leak":
        intro = (
            "Below are two programs written in a small matrix language. Lower "
            "scores are better. Write new programs that you expect to score "
            "lower than both."
        )
    else:
        intro = (
            "Below are two programs written in a small matrix language, together "
            "with a description of the problem they solve. Lower mean squared "
            "error is better. Write new programs that you expect to do better "
            "than both.\n\nProblem description:\n" + spec.problem_description.strip()
        )
    parts = [
        intro,
        "Every program must have exactly this signature:\n" + header,
        "Program A:\n```\n" + _render_parent(spec.parents[0], spec) + "\n```",
        "Program B:\n```\n" + _render_parent(spec.parents[1], spec) + "\n```",
        GRAMMAR,
        "Reply with several different improved programs. Put each program in "
        "its own ``` fenced block and keep the reply under "
        f"{spec.max_tokens} tokens.",
    ]
    text = "\n\n".join(parts) + "\n"
    if spec.mode == "anti-leak":
        leaks = find_leaks(text, blocklist)
        if leaks:
            raise LeakError(f"anti-leak prompt contains {leaks}")
    return text


# ------------------------------------------------------------------ backend


@dataclass(frozen=True)
class BackendConfig:
    endpoint: str = None
    token_env: str = "EVOFILTER_API_TOKEN"
    model: str = "default"
    timeout: float = 120.0
    retries: int = 3
    backoff: float = 1.0
    mock_script: str = None

    def __post_init__(self):
        if (self.endpoint is None) == (self.mock_script is None):
            raise ValueError("configure exactly one of a live endpoint or a mock script")

    @classmethod
    def from_spec(cls, spec, **kw):
        """Parse ``mock:<path>`` or ``http:<url>`` (also ``https://...``)."""
        kind, _, rest = spec.partition(":")
        if kind == "mock" and rest:
            return cls(mock_script=rest, **kw)
        if kind == "http" and rest and not rest.startswith("//"):
            return cls(endpoint=rest, **kw)
        if kind in ("http", "https") and rest.startswith("//"):
            return cls(endpoint=spec, **kw)
        raise ValueError(f"backend must be mock:<path> or http:<url>, got {spec!r}")


MOCK_SEPARATOR = re.compile(r"^=====+\s*$", re.MULTILINE)


def load_mock_script(path):
    """Canned completions: a JSON list of strings, or text blocks split by
    lines of five or more ``=``."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        data = [part.strip("\n") for part in MOCK_SEPARATOR.split(text)]
        data = [d for d in data if d.strip()]
    if not isinstance(data, list) or not all(isinstance(d, str) for d in data) or not data:
        raise ValueError(f"{path}: mock script must be a non-empty list of strings")
    return data


class MockBackend:
    """Replays canned completions in order, cycling when exhausted."""

    def __init__(self, completions):
        self.completions = list(completions)
        self.calls = 0

    def __call__(self, prompt, max_tokens=3000):
        reply = self.completions[self.calls % len(self.completions)]
        self.calls += 1
        return reply


class HttpBackend:
    """Chat-completion client with retries and exponential backoff."""

    def __init__(self, cfg, session=None, sleep=time.sleep):
        self.cfg = cfg
        self.session = session or requests.Session()
        self.sleep = sleep

    def __call__(self, prompt, max_tokens=3000):
        cfg = self.cfg
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(cfg.token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        body = {
            "model": cfg.model,
            "messages": [{"role": "user", "content": prompt}],
            "max_tokens": max_tokens,
        }
        last = None
        for attempt in range(cfg.retries + 1):
            if attempt:
                self.sleep(cfg.backoff * 2 ** (attempt - 1))
            try:
                r = self.session.post(cfg.endpoint, json=body, headers=headers, timeout=cfg.timeout)
            except requests.RequestException as exc:
                last = BackendError(f"transport error: {exc}")
                continue
            if r.status_code == 429 or r.status_code >= 500:
                last = BackendError(f"HTTP {r.status_code}")
                continue
            if r.status_code != 200:
                raise BackendError(f"HTTP {r.status_code}: {r.text[:200]}")
            try:
                content = r.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise BackendError(f"malformed response: {exc}") from None
            if not isinstance(content, str):
                raise BackendError("malformed response: content is not text")
            return content
        raise last


def make_backend(cfg):
    if cfg.mock_script is not None:
        return MockBackend(load_mock_script(cfg.mock_script))
    return HttpBackend(cfg)


def query_backend(backend, prompt, max_tokens=3000):
    """Send one prompt. Transport problems raise BackendError."""
    try:
        return backend(prompt, max_tokens)
    except BackendError:
        raise
    except Exception as exc:  # noqa: BLE001 - any client failure is a backend failure
        raise BackendError(str(exc)) from exc


# ------------------------------------------------------------------ parsing

FENCE = re.compile(r"```[^\n`]*\n(.*?)```", re.DOTALL)


class Completions(list):
    """Valid programs from one reply; ``rejections`` lists (block, reason)."""

    def __init__(self, programs=(), rejections=()):
        super().__init__(programs)
        self.rejections = list(rejections)


def parse_completions(text, signature):
    """Extract every fenced block and keep those that parse and validate.

    Never raises: undecodable bytes, malformed blocks and pathological
    nesting all end up in ``rejections``.
    """
    if isinstance(text, (bytes, bytearray)):
        text = bytes(text).decode("utf-8", errors="replace")
    out = Completions()
    try:
        blocks = FENCE.findall(str(text))
    except Exception as exc:  # noqa: BLE001
        out.rejections.append((-1, f"unreadable: {exc}"))
        return out
    for i, block in enumerate(blocks):
        try:
            prog = parse(block, signature=signature)
        except DslError as exc:
            out.rejections.append((i, exc.reason))
            continue
        except (RecursionError, ValueError, OverflowError) as exc:
            out.rejections.append((i, f"syntax: {type(exc).__name__}"))
            continue
        problems = validate(prog, signature)
        if problems:
            out.rejections.append((i, problems[0].kind))
            continue
        out.append(prog)
    return out
