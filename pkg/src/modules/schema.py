from typing import Literal
from pydantic import BaseModel, Field, field_validator


class DataConfig(BaseModel):
    """
    Configuration schema for the input dataset files and the train/test split.
    """
    attr1: str | None = None
    rel1: str | None = None
    attr2: str | None = None
    rel2: str | None = None
    links: str | None = None
    bundle_dir: str | None = None
    train_ratio: float = Field(default=0.3, gt=0.0, lt=1.0)


class RetrievalConfig(BaseModel):
    """
    Configuration schema for candidate retrieval.
    A configured candidates file always wins over the name-similarity fallback.
    """
    mode: Literal["name-sim", "file"] = "name-sim"
    candidates_file: str | None = None
    k: int = Field(default=10, ge=1)


class SelectionConfig(BaseModel):
    """
    Configuration schema for the attribute and relation triple selectors.
    """
    max_triples: int = Field(default=5, ge=1)
    important_attributes: list[str] = ["name", "label", "prefLabel"]
    log_base: Literal["e", "2"] = "e"
    entropy_scope: Literal["whole_graph", "candidate_set"] = "whole_graph"
    prefer_low_entropy: bool = True


class BackendConfig(BaseModel):
    """
    Configuration schema for the chat completion backend.
    """
    kind: Literal["http", "oracle", "scripted"] = "oracle"
    endpoint: str = "http://localhost:8000/v1"
    model: str = "Qwen3-32B"
    temperature: float = Field(default=0.1, ge=0.0)
    deterministic: bool = False
    max_concurrency: int = Field(default=4, ge=1)
    max_attempts: int = Field(default=3, ge=1)
    backoff_seconds: float = Field(default=0.5, ge=0.0)
    timeout_seconds: float = Field(default=60.0, gt=0.0)
    token_budget: int | None = Field(default=None, ge=1)
    max_tokens: dict[str, int] = {"plan": 64, "align": 128, "reflect": 128, "rewrite": 64}
    api_key_env: str = "EA_AGENT_API_KEY"
    script_file: str | None = None

    @property
    def effective_temperature(self) -> float:
        return 0.0 if self.deterministic else self.temperature


class PlannerConfig(BaseModel):
    """
    Configuration schema for the path planner.
    """
    policy: Literal["llm", "rule", "replay", "full"] = "rule"
    reflector_threshold: float = Field(default=0.3, ge=0.0)


class ExecutorConfig(BaseModel):
    """
    Configuration schema for path execution.
    `triples` switches between selected triples, every raw triple, and none at all.
    """
    raw_cap: int = Field(default=10, ge=1)
    triples: Literal["selected", "raw", "none"] = "selected"


class RewardConfig(BaseModel):
    """
    Configuration schema for the trajectory reward.
    """
    alpha: float = 0.5
    beta: float = 0.2
    c: float = 1.0

    @field_validator("alpha")
    @classmethod
    def _check_alpha(cls, value: float) -> float:
        if not 0.0 < value <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        return value

    @field_validator("beta")
    @classmethod
    def _check_beta(cls, value: float) -> float:
        if value <= 0.0:
            raise ValueError("beta must be positive")
        return value


class ExportConfig(BaseModel):
    """
    Configuration schema for the SFT export.
    """
    sft_format: Literal["prompt_completion", "alpaca", "messages"] = "prompt_completion"


class ApplicationConfig(BaseModel):
    """
    The main application configuration schema, combining all sub-configurations.
    """
    app_name: str = "AlignPilot"
    version: str = "1.0.0"
    seed: int = 42
    rounds: int = Field(default=3, ge=1)
    output_dir: str = "runs/latest"
    log_level: Literal["TRACE", "DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"
    data: DataConfig = DataConfig()
    retrieval: RetrievalConfig = RetrievalConfig()
    selection: SelectionConfig = SelectionConfig()
    backend: BackendConfig = BackendConfig()
    planner: PlannerConfig = PlannerConfig()
    executor: ExecutorConfig = ExecutorConfig()
    reward: RewardConfig = RewardConfig()
    export: ExportConfig = ExportConfig()
