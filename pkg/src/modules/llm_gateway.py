"""
Uniform chat completion access with a concurrency cap, a token budget and
per-entity token accounting.
"""

import threading
from collections import defaultdict
from typing import Mapping, NamedTuple
from loguru import logger
from pydantic import BaseModel

from modules.backends.base_backend import ChatBackend, ChatRequest, ChatResponse, ChatTag, estimate_tokens
from modules.backends.http_backend import HttpChatBackend
from modules.backends.mock_backend import OracleBackend, ScriptedBackend
from modules.errors import BudgetExceeded, ConfigError
from modules.schema import BackendConfig

SYSTEM_TEXT = "You are an expert in entity alignment across knowledge graphs."


class CallRecord(NamedTuple):
    entity: str
    tag: str
    prompt_tokens: int
    completion_tokens: int
    estimated: bool


class TokenLedger:
    """
    Thread-safe record of token usage per source entity and prompt tag.
    Every recorded call is kept, so totals can always be recomputed from the log.
    """
    def __init__(self):
        self._lock = threading.Lock()
        self._calls: list[CallRecord] = []
        self._spent = 0
        self._reserved = 0
        self._per_entity: dict[str, dict[str, list[int]]] = defaultdict(lambda: defaultdict(lambda: [0, 0]))

    def reserve(self, tokens: int, budget: int):
        """
        Admits a call against ``budget``, holding ``tokens`` for it until it is
        recorded or released. Calls still in flight count as spent.

        :raises BudgetExceeded: If spent and held tokens already reach the budget.
        """
        with self._lock:
            used = self._spent + self._reserved
            if used >= budget:
                raise BudgetExceeded(used, budget)
            self._reserved += tokens

    def release(self, tokens: int):
        with self._lock:
            self._reserved -= tokens

    def record(self, entity: str, tag: str, response: ChatResponse, reserved: int = 0):
        with self._lock:
            self._reserved -= reserved
            self._spent += response.prompt_tokens + response.completion_tokens
            self._calls.append(CallRecord(entity, tag, response.prompt_tokens,
                                          response.completion_tokens, response.estimated))
            usage = self._per_entity[entity][tag]
            usage[0] += response.prompt_tokens
            usage[1] += response.completion_tokens

    @property
    def calls(self) -> list[CallRecord]:
        with self._lock:
            return list(self._calls)

    def usage(self, entity: str) -> tuple[int, int]:
        """
        ``(prompt_tokens, completion_tokens)`` spent on one entity.
        """
        with self._lock:
            tags = self._per_entity.get(entity, {})
            return sum(u[0] for u in tags.values()), sum(u[1] for u in tags.values())

    def per_entity(self) -> dict[str, dict[str, tuple[int, int]]]:
        with self._lock:
            return {e: {t: (u[0], u[1]) for t, u in tags.items()} for e, tags in self._per_entity.items()}

    def total(self) -> int:
        with self._lock:
            return self._spent

    def __len__(self) -> int:
        with self._lock:
            return len(self._calls)


class LedgerSummary(BaseModel):
    entities: int
    calls: int
    prompt_tokens: int
    completion_tokens: int
    total_tokens: int
    avg_tokens_per_entity: float
    per_entity: dict[str, int]
    per_tag: dict[str, int]
    estimated_calls: int


def ledger_summary(ledger: TokenLedger, entities: set[str] | None = None) -> LedgerSummary:
    """
    Aggregates a ledger. The average is total tokens over the entities touched.

    :param ledger: The ledger to summarize.
    :type ledger: TokenLedger
    :param entities: Restricts the summary to these entities when given.
    :type entities: set[str] | None
    :return: Totals and averages.
    :rtype: LedgerSummary
    """
    per_entity: dict[str, int] = defaultdict(int)
    per_tag: dict[str, int] = defaultdict(int)
    prompt = completion = estimated = calls = 0
    for call in ledger.calls:
        if entities is not None and call.entity not in entities:
            continue
        calls += 1
        prompt += call.prompt_tokens
        completion += call.completion_tokens
        estimated += call.estimated
        per_entity[call.entity] += call.prompt_tokens + call.completion_tokens
        per_tag[call.tag] += call.prompt_tokens + call.completion_tokens
    total = prompt + completion
    return LedgerSummary(
        entities=len(per_entity),
        calls=calls,
        prompt_tokens=prompt,
        completion_tokens=completion,
        total_tokens=total,
        avg_tokens_per_entity=total / len(per_entity) if per_entity else 0.0,
        per_entity=dict(sorted(per_entity.items())),
        per_tag=dict(sorted(per_tag.items())),
        estimated_calls=estimated,
    )


class LLMGateway:
    """
    Sends requests to a backend, at most ``max_concurrency`` at a time, and
    books their usage in a :class:`TokenLedger`.
    """
    def __init__(self, backend: ChatBackend, ledger: TokenLedger | None = None, *,
                 temperature: float = 0.1, max_tokens: Mapping[str, int] | None = None,
                 token_budget: int | None = None, max_concurrency: int = 4):
        self.backend = backend
        self.ledger = ledger if ledger is not None else TokenLedger()
        self.temperature = temperature
        self.max_tokens = dict(max_tokens or {"plan": 64, "align": 128, "reflect": 128, "rewrite": 64})
        self.token_budget = token_budget
        self._slots = threading.BoundedSemaphore(max_concurrency)
        self._warned_estimate = False

    @classmethod
    def from_config(cls, config: BackendConfig, backend: ChatBackend, ledger: TokenLedger | None = None) -> "LLMGateway":
        return cls(backend, ledger,
                   temperature=config.effective_temperature,
                   max_tokens=config.max_tokens,
                   token_budget=config.token_budget,
                   max_concurrency=config.max_concurrency)

    def request(self, tag: ChatTag, user_text: str, entity: str) -> ChatRequest:
        return ChatRequest(system_text=SYSTEM_TEXT, user_text=user_text, temperature=self.temperature,
                           max_tokens=self.max_tokens.get(tag, 128), tag=tag, entity=entity)

    def complete(self, request: ChatRequest) -> ChatResponse:
        """
        Runs one request through the backend and records its usage under the
        request's entity and tag.

        :param request: The request.
        :type request: ChatRequest
        :return: The backend's reply.
        :rtype: ChatResponse
        :raises BudgetExceeded: If the token budget is already used up, counting calls in flight.
        :raises BackendError: If the backend fails.
        """
        reserved = 0
        if self.token_budget is not None:
            reserved = estimate_tokens(request.system_text + "\n" + request.user_text)
            self.ledger.reserve(reserved, self.token_budget)
        try:
            with self._slots:
                response = self.backend.chat(request)
        except BaseException:
            self.ledger.release(reserved)
            raise
        self.ledger.record(request.entity, request.tag, response, reserved=reserved)
        if response.estimated and not self._warned_estimate:
            self._warned_estimate = True
            logger.warning(f"Backend '{self.backend.name}' reports no token usage; counts are estimated")
        logger.trace(f"{request.tag} {request.entity}: {response.prompt_tokens}+{response.completion_tokens} tokens")
        return response

    def ask(self, tag: ChatTag, user_text: str, entity: str) -> ChatResponse:
        return self.complete(self.request(tag, user_text, entity))


def create_backend(config: BackendConfig, gold_map: Mapping[str, str] | None = None) -> ChatBackend:
    """
    Builds the backend named by ``config.kind``.

    :raises ConfigError: If the oracle has no gold map or the scripted backend no script file.
    """
    match config.kind:
        case "http":
            return HttpChatBackend(config)
        case "oracle":
            if gold_map is None:
                raise ConfigError("The oracle backend needs gold links")
            return OracleBackend(gold_map)
        case "scripted":
            if not config.script_file:
                raise ConfigError("The scripted backend needs backend.script_file")
            return ScriptedBackend.from_yaml(config.script_file)
    raise ConfigError(f"Unknown backend kind: {config.kind}")
