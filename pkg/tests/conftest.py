import json
import threading
from pathlib import Path

import pytest

from chrono_eval.gateway import Gateway, ModelEndpoint

FIXTURES = Path(__file__).parent / "fixtures"


class FakeTransport:
    """Stands in for the HTTP layer. ``respond(endpoint, prompt) -> text``."""

    def __init__(self, respond, logprobs=None):
        self.respond = respond
        self.logprobs = logprobs
        self.calls = []
        self._lock = threading.Lock()
        self.active = 0
        self.peak = 0

    def __call__(self, endpoint, path, body, api_key):
        with self._lock:
            self.calls.append((endpoint.model_id, path, body))
            self.active += 1
            self.peak = max(self.peak, self.active)
        try:
            prompt = body["messages"][0]["content"] if "messages" in body else body["prompt"]
            text = self.respond(endpoint, prompt)
            if isinstance(text, Exception):
                raise text
            if path.endswith("chat/completions"):
                choice = {"message": {"role": "assistant", "content": text}}
                if self.logprobs is not None:
                    choice["logprobs"] = {"content": [{"token": t, "logprob": v} for t, v in self.logprobs]}
            else:
                choice = {"text": text}
                if self.logprobs is not None:
                    choice["logprobs"] = {"tokens": [t for t, _ in self.logprobs],
                                          "token_logprobs": [v for _, v in self.logprobs]}
            return {"choices": [choice]}
        finally:
            with self._lock:
                self.active -= 1


def endpoint(model_id="test-model", interface="chat", **kw):
    return ModelEndpoint(base_url="http://llm.test", model_id=model_id, api_key_env="CHRONO_TEST_KEY",
                         interface=interface, **kw)


@pytest.fixture(autouse=True)
def api_key(monkeypatch):
    monkeypatch.setenv("CHRONO_TEST_KEY", "sk-test")


@pytest.fixture
def make_gateway(tmp_path):
    def make(respond=None, offline=False, cache_dir=None, transport=None, **kw):
        if transport is None:
            transport = respond if isinstance(respond, FakeTransport) else FakeTransport(respond)
        gw = Gateway(cache_dir or tmp_path / "cache", transport=transport, offline=offline,
                     sleep=lambda s: None, **kw)
        return gw, transport
    return make


def load_table(name):
    with open(FIXTURES / name, encoding="utf-8") as fh:
        return json.load(fh)


def vintage_endpoint(year):
    return endpoint(f"vintage-{year}", interface="completion")


def replay_transport(table, suite):
    """Serve the transcribed continuation for each (vintage, probe prompt)."""
    by_prompt = {spec.prompt: i for i, spec in enumerate(suite)}

    def respond(ep, prompt):
        year = ep.model_id.rsplit("-", 1)[1]
        return table["rows"][year][by_prompt[prompt]]

    return FakeTransport(respond)


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
