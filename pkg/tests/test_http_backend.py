import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from vistaopt.backends.base import GenerationRequest, RoleRouter
from vistaopt.backends.http import HttpBackend
from vistaopt.backends.synthetic import SyntheticBackend, SyntheticWorldConfig, make_synthetic_dataset
from vistaopt.domain import RunConfig, default_taxonomy, load_seed_prompt
from vistaopt.errors import TransportFailureError
from vistaopt.optimizer import run


def completion(content):
    return {"choices": [{"message": {"content": content}}]}


class StubServer:
    """Recorded-response chat-completions stub.  The script is a list of
    (status, payload) pairs consumed one per POST; the last entry repeats.
    """

    def __init__(self, script):
        self.script = list(script)
        self.requests = []
        self._lock = threading.Lock()
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length)) if length else {}
                with stub._lock:
                    index = len(stub.requests)
                    stub.requests.append({
                        "path": self.path,
                        "body": body,
                        "auth": self.headers.get("Authorization"),
                    })
                status, payload = stub.script[min(index, len(stub.script) - 1)]
                data = json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.server = HTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()

    @property
    def base_url(self):
        host, port = self.server.server_address
        return f"http://{host}:{port}/v1"


def agent_request(text="hello"):
    return GenerationRequest(role="hypothesis_agent", messages=(("user", text),))


def test_recorded_response_returned():
    with StubServer([(200, completion("recorded body"))]) as stub:
        backend = HttpBackend(base_url=stub.base_url, api_key="k", backoff_base=0.0)
        assert backend.generate(agent_request()) == "recorded body"
        assert stub.requests[0]["path"] == "/v1/chat/completions"
        assert stub.requests[0]["auth"] == "Bearer k"
        assert stub.requests[0]["body"]["messages"] == [{"role": "user", "content": "hello"}]


def test_retry_then_success():
    with StubServer([(500, {}), (200, completion("ok after retry"))]) as stub:
        backend = HttpBackend(base_url=stub.base_url, backoff_base=0.0)
        assert backend.generate(agent_request()) == "ok after retry"
        assert backend.requests_sent == 2
        assert backend.retries == 1


def test_gives_up_after_bounded_retries():
    with StubServer([(503, {})]) as stub:
        backend = HttpBackend(base_url=stub.base_url, max_retries=2, backoff_base=0.0)
        with pytest.raises(TransportFailureError):
            backend.generate(agent_request())
        assert backend.requests_sent == 3  # initial + 2 retries


def test_client_error_not_retried():
    with StubServer([(404, {"error": "nope"})]) as stub:
        backend = HttpBackend(base_url=stub.base_url, backoff_base=0.0)
        with pytest.raises(TransportFailureError):
            backend.generate(agent_request())
        assert backend.requests_sent == 1


def test_qwen_base_sampling_defaults():
    with StubServer([(200, completion("x"))]) as stub:
        backend = HttpBackend(base_url=stub.base_url, model="qwen3-4b", backoff_base=0.0)
        backend.generate(GenerationRequest(
            role="base", messages=(("system", "s"), ("user", "u"))))
        body = stub.requests[0]["body"]
        assert body["temperature"] == 0.6 and body["top_p"] == 0.95
        assert body["top_k"] == 20 and body["presence_penalty"] == 1.5
        backend.generate(agent_request())
        assert "temperature" not in stub.requests[1]["body"]


def test_sampling_overrides_and_wire_extras():
    with StubServer([(200, completion("x"))]) as stub:
        backend = HttpBackend(base_url=stub.base_url, model="qwen3", backoff_base=0.0)
        backend.generate(GenerationRequest(
            role="base",
            messages=(("user", "u"),),
            sampling={"temperature": 0.1},
            extras={"wire": {"reasoning_effort": "none"}, "slot_origins": ("free",)},
        ))
        body = stub.requests[0]["body"]
        assert body["temperature"] == 0.1
        assert body["reasoning_effort"] == "none"
        assert "slot_origins" not in body


def test_role_models_routing():
    with StubServer([(200, completion("x"))]) as stub:
        backend = HttpBackend(base_url=stub.base_url, model="base-model",
                              role_models={"reflection_agent": "big-model"},
                              backoff_base=0.0)
        backend.generate(GenerationRequest(role="reflection_agent",
                                           messages=(("user", "u"),)))
        assert stub.requests[0]["body"]["model"] == "big-model"


HYPOTHESIS_RESPONSE = """[HYPOTHESIS 1]
TAG: cot_field_ordering
DESCRIPTION: The answer field comes before the reasoning field.
FIX: Reorder the output schema.

[HYPOTHESIS 2]
TAG: task_instruction_clarity
DESCRIPTION: Ambiguous framing.
FIX: Clarify it.

[HYPOTHESIS 3]
TAG: reasoning_strategy
DESCRIPTION: Too shallow.
FIX: Demand steps.
"""


def test_one_round_through_stubbed_agents():
    """One full optimization round with HTTP-backed agents: exactly K
    reflection rewrites plus one hypothesis call, with a bounded retry on
    an injected transport failure."""
    dataset = make_synthetic_dataset(50, 50)
    taxonomy = default_taxonomy()
    world = SyntheticWorldConfig()
    defective = load_seed_prompt("defective")
    repaired = load_seed_prompt("repaired")
    script = [
        (500, {}),                                  # injected transport failure
        (200, completion(HYPOTHESIS_RESPONSE)),     # hypothesis agent call
        (200, completion(repaired)),                # reflection for slot 0
        (200, completion(defective + "\n\nnote a")),  # slot 1: no structural change
        (200, completion(defective + "\n\nnote b")),  # slot 2: no structural change
    ]
    with StubServer(script) as stub:
        http = HttpBackend(base_url=stub.base_url, backoff_base=0.0)
        backend = RoleRouter(
            default=SyntheticBackend(world, dataset, taxonomy, run_seed=0),
            hypothesis_agent=http,
            reflection_agent=http,
        )
        config = RunConfig(rng_seed=0, p=0.0, budget=1, max_parallel=1)
        result = run(config, dataset, taxonomy, backend, defective)

    assert len(result.outcomes) == 1
    outcome = result.outcomes[0]
    assert outcome.branch == "hypotheses"
    # K rewrites + 1 hypothesis call; the injected failure adds one POST
    assert len(stub.requests) == config.K + 2
    assert http.retries == 1
    assert outcome.winner is not None and outcome.winner_label == "cot_field_ordering"
    assert outcome.charge == config.b * config.K + len(dataset.val)
    assert result.best.val_accuracy > result.candidates[0].val_accuracy
