"""Exception hierarchy shared by all modules."""


class MBGFError(Exception):
    """Base class; ``exit_code`` is used by the command-line front end."""

    exit_code = 1


class InputError(MBGFError, ValueError):
    exit_code = 2


class FCIDumpError(InputError):
    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


class UnsupportedModelError(InputError):
    pass


class CapExceededError(MBGFError):
    exit_code = 3


class SingularFrequencyError(MBGFError, ArithmeticError):
    exit_code = 4


class IllConditionedStencilError(MBGFError):
    exit_code = 5
