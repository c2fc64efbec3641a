"""
Exception hierarchy for AlignPilot.

Every error belongs to one of three families, which the CLI maps to exit codes:
configuration problems (1), bad input data (2) and chat backend failures (3).
"""


class AlignPilotError(Exception):
    """
    Base class of every error raised by AlignPilot.
    """
    exit_code: int = 2


# --- families ---

class ConfigError(AlignPilotError):
    """
    The run configuration is invalid or references missing files.
    """
    exit_code = 1


class DataError(AlignPilotError, ValueError):
    """
    Input data or an intermediate artifact violates its contract.
    """
    exit_code = 2


class BackendError(AlignPilotError):
    """
    The chat backend failed or refused to answer.
    """
    exit_code = 3


# --- graph ---

class InvalidIri(DataError):
    def __init__(self, value: str):
        super().__init__(f"Invalid IRI {value!r}: must be non-empty and free of tabs/newlines")
        self.value = value


class UnknownEntity(DataError):
    def __init__(self, entity: str):
        super().__init__(f"Unknown entity: {entity}")
        self.entity = entity


class UnknownAttribute(DataError):
    def __init__(self, attribute: str):
        super().__init__(f"Attribute {attribute} does not occur in the selected scope")
        self.attribute = attribute


class EmptyGraph(DataError):
    def __init__(self):
        super().__init__("Graph has no relation triples")


# --- ingest ---

class MalformedLine(DataError):
    def __init__(self, line_no: int, reason: str = "wrong field count"):
        super().__init__(f"Malformed line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class InvalidEncoding(DataError):
    def __init__(self, line_no: int):
        super().__init__(f"Line {line_no} is not valid UTF-8")
        self.line_no = line_no


class DuplicateSource(DataError):
    def __init__(self, source: str, line_no: int):
        super().__init__(f"Source {source} linked twice (line {line_no})")
        self.source = source
        self.line_no = line_no


class EmptyLinks(DataError):
    def __init__(self):
        super().__init__("Cannot split an empty link list")


class InvalidRatio(DataError):
    def __init__(self, ratio: float):
        super().__init__(f"Train ratio must lie strictly between 0 and 1, got {ratio}")
        self.ratio = ratio


class BundleError(DataError):
    pass


# --- retrieval ---

class MalformedRecord(DataError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"Malformed candidate record on line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class ScoreOutOfRange(DataError):
    def __init__(self, line_no: int, target: str, score: float):
        super().__init__(f"Score {score} of {target} on line {line_no} is outside [0, 1]")
        self.line_no = line_no
        self.target = target
        self.score = score


# --- prompts, plans and answers ---

class MissingPlaceholder(DataError):
    def __init__(self, name: str):
        super().__init__(f"No value for prompt placeholder {{{name}}}")
        self.name = name


class NoToolLines(DataError):
    def __init__(self):
        super().__init__("Plan text contains no numbered tool lines")


class UnknownTool(DataError):
    def __init__(self, name: str):
        super().__init__(f"Unknown tool: {name}")
        self.name = name


class InvalidPath(DataError):
    def __init__(self, reason: str, steps: tuple = ()):
        super().__init__(f"Invalid tool path {list(steps)}: {reason}")
        self.reason = reason
        self.steps = steps


class EmptyCandidates(DataError):
    def __init__(self, source: str = ""):
        super().__init__(f"No candidates for {source or 'source entity'}")
        self.source = source


class NoAnswer(DataError):
    def __init__(self, text: str):
        super().__init__(f"No IRI found in answer {text[:80]!r}")
        self.text = text


class NotACandidate(DataError):
    def __init__(self, iri: str):
        super().__init__(f"Answer {iri} is not among the candidates")
        self.iri = iri


# --- optimisation and evaluation ---

class EmptyDataset(DataError):
    def __init__(self):
        super().__init__("Trajectory dataset is empty")


class DatasetOrderError(DataError):
    def __init__(self, last_round: int, new_round: int):
        super().__init__(f"Cannot append round {new_round} after round {last_round}")
        self.last_round = last_round
        self.new_round = new_round


class MissingGold(DataError):
    def __init__(self, entity: str):
        super().__init__(f"No gold link for {entity}")
        self.entity = entity


# --- backend ---

class Transport(BackendError):
    def __init__(self, message: str, attempts: int = 0):
        super().__init__(f"Transport failure after {attempts} attempt(s): {message}")
        self.attempts = attempts


class BackendRefusal(BackendError):
    def __init__(self, status_code: int, body: str):
        super().__init__(f"Backend refused request with HTTP {status_code}: {body[:200]}")
        self.status_code = status_code
        self.body = body


class BudgetExceeded(BackendError):
    def __init__(self, used: int, budget: int):
        super().__init__(f"Token budget exhausted ({used} >= {budget})")
        self.used = used
        self.budget = budget


# --- pipeline ---

class StageError(AlignPilotError):
    """
    Wraps the failure of one pipeline stage, keeping the cause's exit code.
    """
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 2)
