import threading
from pathlib import Path
from typing import Iterable, Iterator
from loguru import logger
from pydantic import BaseModel, Field, ValidationError

from modules.errors import DatasetOrderError, MalformedRecord
from modules.planner import PlanningObservation, ToolPath
from modules.reward import RewardBreakdown
from utils.helpers import canonical_json, iter_jsonl, sha256_text, write_jsonl


class PolicyUpdateTriple(BaseModel):
    """
    One record of the offline trajectory dataset: what the planner saw, the
    path it ran, the reward it earned and the path rewritten from that reward.
    """
    entity: str
    round: int = Field(ge=0)
    observation: PlanningObservation
    path: ToolPath
    reward: RewardBreakdown
    rewritten_path: ToolPath

    def to_record(self) -> dict:
        return self.model_dump(mode="json", by_alias=True)


class TrajectoryDataset:
    """
    Append-only dataset of policy update triples with round numbers that never
    decrease in file order.

    Records of a running round are staged from any thread, then committed as one
    block sorted by entity, so the committed order does not depend on scheduling.
    """
    def __init__(self, records: Iterable[PolicyUpdateTriple] = ()):
        """
        Initializes the dataset, validating the order of the given records.
        """
        self._records: list[PolicyUpdateTriple] = []
        self._staged: list[PolicyUpdateTriple] = []
        self._lock = threading.Lock()
        self.extend(records)

    @property
    def records(self) -> tuple[PolicyUpdateTriple, ...]:
        return tuple(self._records)

    @property
    def last_round(self) -> int | None:
        return self._records[-1].round if self._records else None

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[PolicyUpdateTriple]:
        return iter(tuple(self._records))

    def extend(self, records: Iterable[PolicyUpdateTriple]):
        """
        Appends records at the end.

        :raises DatasetOrderError: If a record's round precedes the last stored round.
        """
        for record in records:
            last = self.last_round
            if last is not None and record.round < last:
                raise DatasetOrderError(last, record.round)
            self._records.append(record)

    def stage(self, record: PolicyUpdateTriple):
        """
        Buffers a record of the running round. Safe to call from worker threads.
        """
        with self._lock:
            self._staged.append(record)

    def commit(self) -> list[PolicyUpdateTriple]:
        """
        Appends the staged records, sorted by entity, and clears the buffer.

        :return: The committed records.
        :rtype: list[PolicyUpdateTriple]
        """
        with self._lock:
            block = sorted(self._staged, key=lambda r: (r.round, r.entity))
            self._staged.clear()
        self.extend(block)
        return block

    def rounds(self) -> list[int]:
        return sorted({r.round for r in self._records})

    def for_round(self, round_no: int) -> list[PolicyUpdateTriple]:
        return [r for r in self._records if r.round == round_no]

    def prefix_digest(self, n: int | None = None) -> str:
        """
        SHA-256 over the canonical serialization of the first ``n`` records
        (all records by default).
        """
        records = self._records if n is None else self._records[:n]
        return sha256_text("\n".join(canonical_json(r.to_record()) for r in records))

    def save(self, path: str | Path, round_no: int | None = None) -> int:
        """
        Writes the dataset, or only one round of it, as JSONL.

        :return: The number of records written.
        :rtype: int
        """
        records = self._records if round_no is None else self.for_round(round_no)
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            write_jsonl(f, (record.to_record() for record in records))
        logger.info(f"Wrote {len(records)} trajectories to {path}")
        return len(records)

    @classmethod
    def load(cls, paths: str | Path | Iterable[str | Path]) -> "TrajectoryDataset":
        """
        Reads one or more trajectory JSONL files, in the given order.

        :raises MalformedRecord: On unreadable or invalid lines.
        :raises DatasetOrderError: If rounds decrease across the files.
        """
        if isinstance(paths, (str, Path)):
            paths = [paths]
        dataset = cls()
        for path in paths:
            with open(path, "r", encoding="utf-8") as f:
                for line_no, document in iter_jsonl(f):
                    try:
                        record = PolicyUpdateTriple.model_validate(document)
                    except ValidationError as e:
                        raise MalformedRecord(line_no, f"invalid trajectory ({e.error_count()} errors)") from None
                    dataset.extend([record])
        logger.info(f"Loaded {len(dataset)} trajectories")
        return dataset
