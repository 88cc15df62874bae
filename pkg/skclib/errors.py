# Exceptions raised by the skclib library code. The driver maps SkcError subclasses to exit code 3
# and ConfigError to exit code 2.


class SkcError(Exception):
    pass


class SizeError(SkcError, ValueError):
    pass


class SingularMatrixError(SkcError, ArithmeticError):
    pass


class EmptyInputError(SkcError, ValueError):
    pass


class DegenerateGradientError(SkcError, ArithmeticError):
    pass


class InsufficientExcitationError(SkcError, ArithmeticError):
    pass


class DivergenceError(SkcError, ArithmeticError):
    def __init__(self, message, lr=None):
        super().__init__(message)
        self.lr = lr


class NonConvergenceError(SkcError, ArithmeticError):
    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


class SimulationBlowupError(SkcError, ArithmeticError):
    pass


class BenchmarkMismatchError(SkcError, AssertionError):
    def __init__(self, message, diff_report=None):
        super().__init__(message)
        self.diff_report = diff_report or {}


class ConfigError(SkcError, ValueError):
    def __init__(self, field_path, message):
        super().__init__(field_path + ": " + message)
        self.field_path = field_path
