"""
Deterministic backends for tests and offline runs.
"""

import threading
from collections import defaultdict
from typing import Mapping
from typing_extensions import override
import yaml
from loguru import logger

from modules.backends.base_backend import ChatBackend, ChatRequest, ChatResponse, estimate_tokens
from modules.errors import BackendRefusal, ConfigError, MissingGold

DEFAULT_PLAN_TEXT = "1. AttributeTripleSelector\n2. RelationTripleSelector\n3. EntityAlignmentTool"

Reply = str | list[str]


def _usage(request: ChatRequest, text: str) -> ChatResponse:
    return ChatResponse(text=text,
                        prompt_tokens=estimate_tokens(request.system_text + "\n" + request.user_text),
                        completion_tokens=estimate_tokens(text),
                        estimated=True)


class ScriptedBackend(ChatBackend):
    """
    Replies from a script keyed by request tag, optionally overridden per entity.
    A list reply is consumed one element per call for each (entity, tag) pair;
    its last element repeats once the list is used up.
    """
    name = "scripted"

    def __init__(self, script: Mapping[str, Reply] | None = None,
                 per_entity: Mapping[str, Mapping[str, Reply]] | None = None):
        self.script = dict(script or {})
        self.per_entity = {e: dict(s) for e, s in (per_entity or {}).items()}
        for where, replies in [("script", self.script), *self.per_entity.items()]:
            empty = sorted(tag for tag, reply in replies.items() if reply == [])
            if empty:
                raise ConfigError(f"Empty reply list for {empty} in {where}")
        self._positions: dict[tuple[str, str], int] = defaultdict(int)
        self._lock = threading.Lock()

    @classmethod
    def from_yaml(cls, path: str) -> "ScriptedBackend":
        """
        Loads ``{"script": {tag: reply}, "per_entity": {iri: {tag: reply}}}`` from YAML.

        :raises ConfigError: If the file is missing, is not a mapping or holds an empty reply list.
        """
        try:
            with open(path, "r", encoding="utf-8") as f:
                doc = yaml.safe_load(f) or {}
        except FileNotFoundError:
            raise ConfigError(f"Script file not found: {path}") from None
        except yaml.YAMLError as e:
            raise ConfigError(f"Error parsing script file {path}: {e}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"Script file {path} must contain a mapping")
        logger.info(f"Loaded chat script from {path}")
        return cls(doc.get("script"), doc.get("per_entity"))

    def _reply_for(self, request: ChatRequest) -> str:
        reply = self.per_entity.get(request.entity, {}).get(request.tag, self.script.get(request.tag))
        if reply is None:
            raise BackendRefusal(404, f"no scripted reply for tag {request.tag!r}")
        if isinstance(reply, str):
            return reply
        with self._lock:
            position = self._positions[(request.entity, request.tag)]
            self._positions[(request.entity, request.tag)] += 1
        return reply[min(position, len(reply) - 1)]

    @override
    def chat(self, request: ChatRequest) -> ChatResponse:
        return _usage(request, self._reply_for(request))


class OracleBackend(ChatBackend):
    """
    Always answers with the gold target; plans and rewrites get a fixed
    three-step path.
    """
    name = "oracle"

    def __init__(self, gold_map: Mapping[str, str], plan_text: str = DEFAULT_PLAN_TEXT):
        self.gold_map = dict(gold_map)
        self.plan_text = plan_text

    @override
    def chat(self, request: ChatRequest) -> ChatResponse:
        if request.entity not in self.gold_map:
            raise MissingGold(request.entity)
        if request.tag in ("align", "reflect"):
            return _usage(request, f"[{self.gold_map[request.entity]}]")
        return _usage(request, self.plan_text)
