import hashlib
import json
from pathlib import Path
from typing import Any, Iterable, Iterator, TextIO

from modules.errors import MalformedRecord


def canonical_json(payload: Any) -> str:
    """
    Serializes a JSON-compatible payload with sorted keys and no extra whitespace,
    so equal payloads always produce equal bytes.
    """
    return json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def write_jsonl(stream: TextIO, records: Iterable[Any]) -> int:
    """
    Writes one canonical JSON document per line.

    :return: The number of lines written.
    :rtype: int
    """
    count = 0
    for record in records:
        stream.write(canonical_json(record) + "\n")
        count += 1
    return count


def iter_jsonl(stream: Iterable[str]) -> Iterator[tuple[int, Any]]:
    """
    Yields ``(line_no, document)`` for every non-blank line of a JSONL stream.

    :raises MalformedRecord: On a line that is not valid JSON.
    """
    for line_no, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            document = json.loads(line)
        except json.JSONDecodeError as e:
            raise MalformedRecord(line_no, f"invalid JSON ({e.msg})") from None
        yield line_no, document


def sha256_file(path: str | Path) -> str:
    """
    Hex SHA-256 digest of a file's bytes.
    """
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
