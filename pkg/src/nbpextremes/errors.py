"""Exception hierarchy. Each family maps onto one CLI exit code."""


class NbpError(Exception):
    exit_code = 1

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = None if path is None else str(path)

    def to_json(self):
        out = {"error": type(self).__name__, "message": str(self)}
        if self.path is not None:
            out["path"] = self.path
        return out


class ConfigError(NbpError):
    exit_code = 2


class DataError(NbpError):
    exit_code = 3


class FormatError(DataError):
    """Malformed GridStack container, CSV or region table."""


class UnitsError(DataError):
    pass


class NumericalError(NbpError):
    exit_code = 4


class DegenerateInputError(NumericalError):
    """Zero variance where a correlation or regression needs spread."""
