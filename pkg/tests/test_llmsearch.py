import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer
from pathlib import Path

import numpy as np
import pytest

from evofilter import cgp, kalman, llmsearch
from evofilter.dsl import parse, to_generic

DATA = Path(__file__).parent / "data"
FULL = kalman.make_task("full")
PREDICT = kalman.make_task("predict")


def _parents():
    a = to_generic(kalman.load_fixture("kalman"))
    b = to_generic(kalman.load_fixture("half_gaussian"))
    return a, b


# -------------------------------------------------------------------- prompt


def test_anti_leak_prompt():
    spec = llmsearch.PromptSpec("anti-leak", _parents(), FULL.generic_signature)
    text = llmsearch.build_prompt(spec)
    assert "fn f(i_1, i_2, i_3, i_4, i_5, i_6) -> (o_1, o_2, o_3, o_4, o_5, o_6)" in text
    assert "o_1 = i_2 @ i_1" in text
    assert "0.85" in text  # from the second parent
    assert text.count("```\n") == 4  # two fenced parents
    assert llmsearch.find_leaks(text) == []
    assert text == llmsearch.build_prompt(spec)


def test_anti_leak_renders_descriptive_parents_generically():
    parents = (kalman.load_fixture("kalman"), kalman.load_fixture("delayed"))
    spec = llmsearch.PromptSpec("anti-leak", parents, FULL.generic_signature)
    text = llmsearch.build_prompt(spec)
    assert "x_predict" not in text and llmsearch.find_leaks(text) == []


def test_descriptive_prompt_includes_description():
    desc = "Noise is one-sided: |N(0, 1)| per component."
    parents = (kalman.load_fixture("kalman"), kalman.load_fixture("half_gaussian"))
    spec = llmsearch.PromptSpec("descriptive", parents, FULL.signature, problem_description=desc)
    text = llmsearch.build_prompt(spec)
    assert desc in text
    assert "x_predict = F @ x" in text


def test_leak_detection():
    spec = llmsearch.PromptSpec("anti-leak", _parents(), FULL.generic_signature)
    with pytest.raises(llmsearch.LeakError):
        llmsearch.build_prompt(spec, blocklist=("i_1",))
    assert llmsearch.find_leaks("A Kalman FILTER") == ["kalman", "filter"]


def test_prompt_spec_validation():
    with pytest.raises(ValueError):
        llmsearch.PromptSpec("verbose", _parents(), FULL.generic_signature)
    with pytest.raises(ValueError):
        llmsearch.PromptSpec("anti-leak", _parents()[:1], FULL.generic_signature)
    with pytest.raises(ValueError):
        llmsearch.PromptSpec("anti-leak", _parents(), FULL.signature)


def test_anti_leak_fuzz_over_random_parents():
    rng = np.random.default_rng(0)
    cfg = cgp.CgpConfig()
    for task in (PREDICT, FULL):
        sig = task.signature
        arity = (len(sig.inputs), len(sig.outputs))
        for _ in range(100):
            pa, pb = (cgp.decode(cgp.random_genotype(cfg, arity, rng, 15), sig) for _ in range(2))
            spec = llmsearch.PromptSpec("anti-leak", (pa, pb), task.generic_signature)
            assert llmsearch.find_leaks(llmsearch.build_prompt(spec)) == []


# ------------------------------------------------------------------- parsing

TWO_VALID = """Some prose first.

```
fn f(i_1, i_2, i_3, i_4) -> (o_1, o_2) {
  o_1 = i_2 @ i_1
  o_2 = i_3 + i_4
}
```

More prose.

```dsl
fn f(i_1, i_2, i_3, i_4) -> (o_1, o_2) {
  o_1 = i_1
  o_2 = i_3
}
```
"""


def test_parse_two_valid_blocks():
    progs = llmsearch.parse_completions(TWO_VALID, PREDICT.generic_signature)
    assert len(progs) == 2 and progs.rejections == []


def test_scope_error_block_is_rejected():
    text = "```\nfn f(i_1, i_2, i_3, i_4) -> (o_1, o_2) {\n  o_1 = t\n  o_2 = i_1\n}\n```"
    progs = llmsearch.parse_completions(text, PREDICT.generic_signature)
    assert list(progs) == [] and progs.rejections == [(0, "use-before-assign")]


def test_signature_mismatch_is_rejected():
    text = "```\nfn f(i_1) -> (o_1) { o_1 = i_1 }\n```"
    progs = llmsearch.parse_completions(text, PREDICT.generic_signature)
    assert list(progs) == [] and progs.rejections[0][1] == "signature"


def test_no_blocks():
    assert list(llmsearch.parse_completions("nothing here", PREDICT.generic_signature)) == []
    assert list(llmsearch.parse_completions(b"\xff\xfe", PREDICT.generic_signature)) == []


def test_parse_never_raises_on_random_bytes():
    rng = np.random.default_rng(1)
    sig = PREDICT.generic_signature
    pieces = [b"```", b"\n", b"fn f(i_1, i_2, i_3, i_4) -> (o_1, o_2) {", b"}", b"o_1 = ", b"(("]
    for _ in range(5000):
        raw = bytes(rng.integers(0, 256, rng.integers(0, 200), dtype=np.uint8))
        if rng.random() < 0.5:
            parts = [pieces[i] for i in rng.integers(len(pieces), size=rng.integers(1, 12))]
            raw = b"".join(parts) + raw
        llmsearch.parse_completions(raw, sig)


# ------------------------------------------------------------------- backends


def test_mock_script_formats(tmp_path):
    p = tmp_path / "m.json"
    p.write_text(json.dumps(["one", "two"]))
    b = llmsearch.make_backend(llmsearch.BackendConfig(mock_script=str(p)))
    assert [b("x"), b("y"), b("z")] == ["one", "two", "one"]
    q = tmp_path / "m.txt"
    q.write_text("first\nreply\n=====\nsecond\n")
    assert llmsearch.load_mock_script(q) == ["first\nreply", "second"]
    (tmp_path / "bad.json").write_text("[]")
    with pytest.raises(ValueError):
        llmsearch.load_mock_script(tmp_path / "bad.json")


def test_single_reply_mock_is_verbatim(tmp_path):
    p = tmp_path / "one.json"
    p.write_text(json.dumps([TWO_VALID]))
    b = llmsearch.make_backend(llmsearch.BackendConfig(mock_script=str(p)))
    assert llmsearch.query_backend(b, "prompt") == TWO_VALID


def test_shipped_mock_script():
    replies = llmsearch.load_mock_script(DATA / "mock_predict.txt")
    assert len(replies) == 3
    progs = llmsearch.parse_completions(replies[0], PREDICT.generic_signature)
    assert len(progs) == 2


def test_backend_config():
    with pytest.raises(ValueError):
        llmsearch.BackendConfig()
    with pytest.raises(ValueError):
        llmsearch.BackendConfig(endpoint="http://x", mock_script="y")
    assert llmsearch.BackendConfig.from_spec("mock:a.txt").mock_script == "a.txt"
    assert llmsearch.BackendConfig.from_spec("http://h:1/v1").endpoint == "http://h:1/v1"
    assert llmsearch.BackendConfig.from_spec("http:h:1/v1").endpoint == "h:1/v1"
    with pytest.raises(ValueError):
        llmsearch.BackendConfig.from_spec("ftp:x")


class _Handler(BaseHTTPRequestHandler):
    script = []
    seen = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        type(self).seen.append((body, self.headers.get("Authorization")))
        status, payload = type(self).script.pop(0)
        data = payload.encode() if isinstance(payload, str) else json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def server():
    _Handler.script = []
    _Handler.seen = []
    srv = HTTPServer(("127.0.0.1", 0), _Handler)
    t = threading.Thread(target=srv.serve_forever, daemon=True)
    t.start()
    yield srv, f"http://127.0.0.1:{srv.server_port}/v1/chat/completions"
    srv.shutdown()
    srv.server_close()


def _ok(text):
    return 200, {"choices": [{"message": {"role": "assistant", "content": text}}]}


def test_http_backend_retries_then_succeeds(server, monkeypatch):
    _, url = server
    monkeypatch.setenv("EVOFILTER_API_TOKEN", "sekret")
    _Handler.script = [(503, "busy"), (429, "slow down"), _ok("hello")]
    sleeps = []
    cfg = llmsearch.BackendConfig(endpoint=url, model="m1", retries=3, backoff=0.5)
    b = llmsearch.HttpBackend(cfg, sleep=sleeps.append)
    assert b("prompt text", max_tokens=123) == "hello"
    assert sleeps == [0.5, 1.0]
    body, auth = _Handler.seen[-1]
    assert auth == "Bearer sekret"
    assert body == {
        "model": "m1",
        "messages": [{"role": "user", "content": "prompt text"}],
        "max_tokens": 123,
    }


def test_http_backend_gives_up(server):
    _, url = server
    _Handler.script = [(500, "no")] * 3
    cfg = llmsearch.BackendConfig(endpoint=url, retries=2, backoff=0.0)
    with pytest.raises(llmsearch.BackendError, match="HTTP 500"):
        llmsearch.HttpBackend(cfg, sleep=lambda s: None)("p")
    assert len(_Handler.seen) == 3


@pytest.mark.parametrize(
    "reply",
    [(404, "missing"), (200, "not json"), (200, {"choices": []}), (200, {"choices": [{"message": {"content": 3}}]})],
)
def test_http_backend_malformed(server, reply):
    _, url = server
    _Handler.script = [reply]
    cfg = llmsearch.BackendConfig(endpoint=url, retries=0)
    with pytest.raises(llmsearch.BackendError):
        llmsearch.HttpBackend(cfg, sleep=lambda s: None)("p")


def test_unreachable_endpoint():
    cfg = llmsearch.BackendConfig(endpoint="http://127.0.0.1:9/none", retries=1, timeout=2)
    with pytest.raises(llmsearch.BackendError, match="transport"):
        llmsearch.query_backend(llmsearch.HttpBackend(cfg, sleep=lambda s: None), "p")


def test_query_backend_wraps_unexpected_errors():
    def broken(prompt, max_tokens):
        raise KeyError("boom")

    with pytest.raises(llmsearch.BackendError):
        llmsearch.query_backend(broken, "p")


def test_parsed_programs_validate():
    for prog in llmsearch.parse_completions(TWO_VALID, PREDICT.generic_signature):
        assert prog.signature == PREDICT.generic_signature
        assert parse(TWO_VALID.split("```")[1]) is not None
