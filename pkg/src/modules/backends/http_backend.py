import os
import time
from typing import Callable
from typing_extensions import override
import httpx
from loguru import logger

from modules.backends.base_backend import ChatBackend, ChatRequest, ChatResponse, estimate_tokens
from modules.errors import BackendRefusal, Transport
from modules.schema import BackendConfig


class HttpChatBackend(ChatBackend):
    """
    Client for an OpenAI-compatible ``/chat/completions`` endpoint.

    4xx responses are refused immediately. 5xx responses and transport errors
    are retried with exponential backoff until ``max_attempts`` requests have
    been made.
    """
    name = "http"

    def __init__(self, config: BackendConfig, transport: httpx.BaseTransport | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        """
        :param config: Backend settings.
        :type config: BackendConfig
        :param transport: Optional httpx transport, e.g. ``httpx.MockTransport`` in tests.
        :type transport: httpx.BaseTransport | None
        :param sleep: Function used to wait between attempts.
        :type sleep: Callable[[float], None]
        """
        self.config = config
        self._sleep = sleep
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(config.api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        else:
            logger.warning(f"{config.api_key_env} is not set; sending requests without authorization")
        self._client = httpx.Client(base_url=config.endpoint.rstrip("/"), headers=headers,
                                    timeout=config.timeout_seconds, transport=transport)

    def _payload(self, request: ChatRequest) -> dict:
        messages = []
        if request.system_text:
            messages.append({"role": "system", "content": request.system_text})
        messages.append({"role": "user", "content": request.user_text})
        return {
            "model": self.config.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }

    @staticmethod
    def _parse(request: ChatRequest, data: dict) -> ChatResponse:
        text = data["choices"][0]["message"]["content"] or ""
        usage = data.get("usage") or {}
        if "prompt_tokens" in usage and "completion_tokens" in usage:
            return ChatResponse(text=text, prompt_tokens=usage["prompt_tokens"],
                                completion_tokens=usage["completion_tokens"])
        return ChatResponse(text=text,
                            prompt_tokens=estimate_tokens(request.system_text + "\n" + request.user_text),
                            completion_tokens=estimate_tokens(text), estimated=True)

    @override
    def chat(self, request: ChatRequest) -> ChatResponse:
        payload = self._payload(request)
        last_error = ""
        for attempt in range(self.config.max_attempts):
            try:
                response = self._client.post("/chat/completions", json=payload)
            except httpx.TransportError as e:
                last_error = f"{type(e).__name__}: {e}"
            else:
                if 400 <= response.status_code < 500:
                    raise BackendRefusal(response.status_code, response.text)
                if response.status_code >= 500:
                    last_error = f"HTTP {response.status_code}"
                else:
                    try:
                        return self._parse(request, response.json())
                    except (ValueError, KeyError, IndexError, TypeError) as e:
                        last_error = f"malformed response body ({e})"
            if attempt + 1 < self.config.max_attempts:
                delay = self.config.backoff_seconds * 2 ** attempt
                logger.warning(f"{request.tag} request for {request.entity or '-'} failed ({last_error}); "
                               f"retrying in {delay:.2f}s")
                self._sleep(delay)
        raise Transport(last_error, attempts=self.config.max_attempts)

    @override
    def close(self):
        self._client.close()
