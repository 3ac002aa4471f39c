"""Exception hierarchy.

Everything raised on purpose by this package derives from ``TabserError``.
``DataError`` covers bad inputs (files, metadata, templates, degenerate
label sets); ``BackendError`` covers failures talking to a language model.
The CLI maps the two families to distinct exit codes.
"""


class TabserError(Exception):
    pass


class DataError(TabserError, ValueError):
    pass


class MissingColumn(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, row=None, column=None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.row = row
        self.column = column


class EmptyDataset(DataError):
    pass


class ArityMismatch(DataError):
    pass


class TemplateError(DataError):
    pass


class MissingPlaceholder(TemplateError):
    pass


class EmptyChoices(TemplateError):
    pass


class DuplicateChoices(TemplateError):
    pass


class UnknownSex(DataError):
    pass


class MissingClassInTrain(DataError):
    pass


class SingleClass(DataError):
    pass


class NoEligibleClass(DataError):
    pass


class NonConvergence(TabserError):
    pass


class BackendError(TabserError):
    """A language-model call failed.

    ``index`` identifies the unit of work (column, pair group, row) that
    failed when the error was raised from a batched operation.
    """

    def __init__(self, message, index=None):
        if index is not None:
            message = f"{message} [unit {index}]"
        super().__init__(message)
        self.index = index


class BackendTimeout(BackendError):
    pass


class HttpStatus(BackendError):
    def __init__(self, code, message=""):
        super().__init__(f"HTTP {code}{': ' + message if message else ''}")
        self.code = code


class RateLimited(HttpStatus):
    def __init__(self, message="rate limited"):
        super().__init__(429, message)


class MissingLogprobs(BackendError):
    pass


class NonFiniteScore(BackendError):
    pass
