import re
from abc import ABC, abstractmethod
from typing import Literal
from pydantic import BaseModel, Field, field_validator

ChatTag = Literal["plan", "align", "reflect", "rewrite"]

_TOKEN_PATTERN = re.compile(r"\w+|[^\w\s]")


def estimate_tokens(text: str) -> int:
    """
    Rough token count: every run of word characters and every punctuation
    character counts as one token. Used when a backend reports no usage.
    """
    return len(_TOKEN_PATTERN.findall(text))


class ChatRequest(BaseModel):
    """
    One chat completion request, tagged with the prompt kind and the source
    entity it is spent on.
    """
    system_text: str = ""
    user_text: str
    temperature: float = Field(default=0.1, ge=0.0)
    max_tokens: int = Field(default=128, ge=1)
    tag: ChatTag
    entity: str = ""

    @field_validator("user_text")
    @classmethod
    def _check_user_text(cls, value: str) -> str:
        if not value.strip():
            raise ValueError("user_text must not be empty")
        return value


class ChatResponse(BaseModel):
    text: str
    prompt_tokens: int = Field(ge=0)
    completion_tokens: int = Field(ge=0)
    estimated: bool = False

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens


class ChatBackend(ABC):
    """
    Abstract base class of all chat completion backends.
    Implementations must be safe to call from several threads at once.
    """
    name: str = "backend"

    @abstractmethod
    def chat(self, request: ChatRequest) -> ChatResponse:
        """
        Sends one request and returns the reply.

        :param request: The request.
        :type request: ChatRequest
        :return: Reply text and token usage.
        :rtype: ChatResponse
        :raises BackendError: On transport failure or refusal.
        """
        ...

    def close(self):
        """
        Releases any held resources.
        """
        ...
