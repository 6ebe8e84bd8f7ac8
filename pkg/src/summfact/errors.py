from __future__ import annotations


class SummFactError(Exception):
    pass


class UnknownLabel(SummFactError):
    def __init__(self, dataset_id: str, label: str, example_id: str | None = None):
        self.dataset_id = dataset_id
        self.label = label
        self.example_id = example_id
        where = f" (example {example_id})" if example_id else ""
        super().__init__(f"no conversion rule for label {label!r} in dataset {dataset_id!r}{where}")


class MissingOverride(SummFactError):
    def __init__(self, dataset_id: str, label: str, example_id: str | None = None):
        self.dataset_id = dataset_id
        self.label = label
        self.example_id = example_id
        super().__init__(
            f"label {label!r} in dataset {dataset_id!r} needs a manual override "
            f"for example {example_id!r}"
        )


class ParseError(SummFactError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class MissingDataset(SummFactError):
    pass


class TemplateError(SummFactError):
    pass


class UnparseableResponse(SummFactError):
    pass


class UnknownErrorToken(SummFactError):
    def __init__(self, token: str):
        self.token = token
        super().__init__(f"label token outside the taxonomy: {token!r}")


class BackendError(SummFactError):
    pass


class BackendExhausted(BackendError):
    pass


class AuthError(BackendError):
    pass


class ContentRefusal(BackendError):
    pass


class ReplayMiss(BackendError):
    def __init__(self, request_hash: str):
        self.request_hash = request_hash
        super().__init__(f"no recorded response for request {request_hash}")


class IncompleteRun(SummFactError):
    pass


class DegenerateGold(SummFactError):
    pass


class ZeroVariance(SummFactError):
    pass


class MissingCount(SummFactError):
    pass


class EmptyGold(SummFactError):
    pass


class ScoreLabeled(SummFactError):
    pass


class NoTypeLabels(SummFactError):
    pass


class EmptyStratum(SummFactError):
    pass


class CorpusIOError(SummFactError, OSError):
    pass
