import json
import httpx
import pytest
from modules.backends.base_backend import ChatRequest, estimate_tokens
from modules.backends.http_backend import HttpChatBackend
from modules.backends.mock_backend import DEFAULT_PLAN_TEXT, OracleBackend, ScriptedBackend
from modules.errors import BackendRefusal, ConfigError, MissingGold, Transport
from modules.schema import BackendConfig
from pydantic import ValidationError


def _request(tag="align", entity="s:1", text="Which candidate?"):
    return ChatRequest(system_text="sys", user_text=text, tag=tag, entity=entity, max_tokens=16)


def _completion(text, usage=True):
    body = {"choices": [{"message": {"role": "assistant", "content": text}}]}
    if usage:
        body["usage"] = {"prompt_tokens": 11, "completion_tokens": 3, "total_tokens": 14}
    return httpx.Response(200, json=body)


@pytest.fixture
def backend_config(monkeypatch):
    monkeypatch.setenv("EA_AGENT_API_KEY", "secret")
    return BackendConfig(kind="http", endpoint="http://llm.test/v1", max_attempts=3, backoff_seconds=0.5)


# Test cases for ChatRequest and token estimates
def test_chat_request_rejects_blank_text():
    with pytest.raises(ValidationError):
        ChatRequest(user_text="   ", tag="plan")

def test_estimate_tokens():
    assert estimate_tokens("Reply with [IRI].") == 6
    assert estimate_tokens("") == 0

# Test cases for HttpChatBackend
def test_http_backend_posts_openai_payload(backend_config):
    """Test the request shape, headers and usage parsing."""
    seen = []

    def handler(request: httpx.Request):
        seen.append(request)
        return _completion("[t:1]")

    backend = HttpChatBackend(backend_config, transport=httpx.MockTransport(handler), sleep=lambda s: None)
    response = backend.chat(_request())
    assert response.text == "[t:1]"
    assert (response.prompt_tokens, response.completion_tokens, response.estimated) == (11, 3, False)
    assert str(seen[0].url) == "http://llm.test/v1/chat/completions"
    assert seen[0].headers["Authorization"] == "Bearer secret"
    payload = json.loads(seen[0].content)
    assert payload["model"] == backend_config.model
    assert payload["max_tokens"] == 16
    assert [m["role"] for m in payload["messages"]] == ["system", "user"]
    backend.close()

def test_http_backend_retries_server_errors(backend_config):
    """Test that 5xx answers are retried with exponential backoff."""
    statuses = iter([503, 500, 200])
    sleeps = []

    def handler(request):
        status = next(statuses)
        return _completion("[t:2]") if status == 200 else httpx.Response(status, text="busy")

    backend = HttpChatBackend(backend_config, transport=httpx.MockTransport(handler), sleep=sleeps.append)
    assert backend.chat(_request()).text == "[t:2]"
    assert sleeps == [0.5, 1.0]

def test_http_backend_gives_up_after_max_attempts(backend_config):
    calls = []

    def handler(request):
        calls.append(request)
        raise httpx.ConnectError("refused", request=request)

    backend = HttpChatBackend(backend_config, transport=httpx.MockTransport(handler), sleep=lambda s: None)
    with pytest.raises(Transport) as exc:
        backend.chat(_request())
    assert exc.value.attempts == 3
    assert len(calls) == 3

def test_http_backend_refuses_client_errors_immediately(backend_config):
    calls = []

    def handler(request):
        calls.append(request)
        return httpx.Response(401, text="bad key")

    backend = HttpChatBackend(backend_config, transport=httpx.MockTransport(handler), sleep=lambda s: None)
    with pytest.raises(BackendRefusal) as exc:
        backend.chat(_request())
    assert exc.value.status_code == 401
    assert len(calls) == 1

def test_http_backend_retries_malformed_body(backend_config):
    bodies = iter([httpx.Response(200, json={"choices": []}), _completion("[t:3]")])
    backend = HttpChatBackend(backend_config, transport=httpx.MockTransport(lambda r: next(bodies)),
                              sleep=lambda s: None)
    assert backend.chat(_request()).text == "[t:3]"

def test_http_backend_estimates_missing_usage(backend_config):
    backend = HttpChatBackend(backend_config, transport=httpx.MockTransport(lambda r: _completion("[t:1]", usage=False)),
                              sleep=lambda s: None)
    response = backend.chat(_request())
    assert response.estimated
    assert response.completion_tokens == estimate_tokens("[t:1]")

def test_http_backend_without_api_key(monkeypatch):
    monkeypatch.delenv("EA_AGENT_API_KEY", raising=False)
    seen = []
    backend = HttpChatBackend(BackendConfig(kind="http"),
                              transport=httpx.MockTransport(lambda r: seen.append(r) or _completion("ok")))
    backend.chat(_request())
    assert "Authorization" not in seen[0].headers

# Test cases for the mock backends
def test_oracle_backend_answers_gold():
    """Test that the oracle answers alignment with the gold target and plans three steps."""
    oracle = OracleBackend({"s:1": "t:1"})
    assert oracle.chat(_request("align")).text == "[t:1]"
    assert oracle.chat(_request("reflect")).text == "[t:1]"
    assert oracle.chat(_request("plan")).text == DEFAULT_PLAN_TEXT
    assert oracle.chat(_request("align")).estimated
    with pytest.raises(MissingGold):
        oracle.chat(_request("align", entity="s:2"))

def test_scripted_backend_consumes_lists_per_entity():
    """Test list replies advance per (entity, tag) and repeat their last element."""
    backend = ScriptedBackend({"align": ["first", "second"], "plan": "p"}, per_entity={"s:2": {"align": "[t:9]"}})
    assert [backend.chat(_request("align")).text for _ in range(3)] == ["first", "second", "second"]
    assert backend.chat(_request("align", entity="s:3")).text == "first"
    assert backend.chat(_request("align", entity="s:2")).text == "[t:9]"
    assert backend.chat(_request("plan", entity="s:2")).text == "p"
    with pytest.raises(BackendRefusal):
        backend.chat(_request("rewrite"))

def test_scripted_backend_from_yaml(tmp_path):
    path = tmp_path / "script.yml"
    path.write_text("script:\n  plan: |\n    1. RelationTripleSelector\n    2. EntityAlignmentTool\n"
                    "per_entity:\n  s:1:\n    align: '[t:1]'\n", encoding="utf-8")
    backend = ScriptedBackend.from_yaml(str(path))
    assert backend.chat(_request("align")).text == "[t:1]"
    assert backend.chat(_request("plan")).text.startswith("1. RelationTripleSelector")

@pytest.mark.parametrize("content", [
    "- just\n- a list\n",
    "script: [\n",
    "script:\n  align: []\n",
    "per_entity:\n  s:1:\n    reflect: []\n",
])
def test_scripted_backend_from_yaml_invalid(tmp_path, content):
    path = tmp_path / "script.yml"
    path.write_text(content, encoding="utf-8")
    with pytest.raises(ConfigError):
        ScriptedBackend.from_yaml(str(path))

def test_scripted_backend_from_yaml_missing(tmp_path):
    with pytest.raises(ConfigError):
        ScriptedBackend.from_yaml(str(tmp_path / "nope.yml"))
