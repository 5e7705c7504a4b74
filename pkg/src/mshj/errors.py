"""Exception hierarchy.

Errors fall in two groups that the command line maps to distinct exit codes:
input problems (bad expressions, bad configuration, unknown models) and
numerical failures (domain violations, Newton failures, blow-up).
"""

from __future__ import annotations


class MshjError(Exception):
    """Base class for every error raised by this package."""


# input problems -----------------------------------------------------------


class InputError(MshjError):
    """Malformed user input."""


class ExprSyntaxError(InputError):
    """Expression text does not follow the grammar.

    ``offset`` is the byte offset (UTF-8) of the offending token and
    ``expected`` the set of token kinds that would have been accepted there.
    """

    def __init__(self, message: str, text: str, offset: int, expected: frozenset[str]):
        self.text = text
        self.offset = offset
        self.expected = frozenset(expected)
        want = ", ".join(sorted(self.expected)) or "nothing"
        super().__init__(f"{message} at byte {offset} (expected one of: {want})")


class UnknownFunction(InputError):
    def __init__(self, name: str, offset: int):
        self.name = name
        self.offset = offset
        super().__init__(f"unknown function {name!r} at byte {offset}")


class UnboundVariable(InputError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"variable {name!r} is not bound")


class InvalidParams(InputError):
    pass


class UnknownModel(InputError):
    pass


class ConfigError(InputError):
    pass


class CapExceeded(InputError):
    def __init__(self, count: int, cap: int):
        self.count = count
        self.cap = cap
        super().__init__(f"grid has {count} points, cap is {cap}")


# numerical failures -------------------------------------------------------


class NumericalError(MshjError):
    """Evaluation or iteration failed at some point."""


class DomainError(NumericalError):
    """An argument left the domain of a function (log, sqrt, division, ...).

    ``subexpr`` is the printed offending subexpression and ``index`` the
    position of the first bad point inside the evaluated batch.
    """

    def __init__(self, subexpr: str, reason: str, index: int = 0):
        self.subexpr = subexpr
        self.reason = reason
        self.index = index
        self.location: dict[str, float] | None = None
        super().__init__(f"{reason} in {subexpr} (point {index})")

    def __str__(self) -> str:
        msg = f"{self.reason} in {self.subexpr}"
        if self.location is not None:
            where = ", ".join(f"{k}={v:.6g}" for k, v in self.location.items())
            msg += f" at {where}"
        else:
            msg += f" (point {self.index})"
        return msg


class NonConvergence(NumericalError):
    pass


class SingularJacobian(NumericalError):
    pass


class OutOfDomain(NumericalError):
    pass


class BlowUp(NumericalError):
    pass


class SliceFailure(NumericalError):
    def __init__(self, lam, detail: str = ""):
        self.lam = tuple(float(v) for v in lam)
        super().__init__(f"slice at lambda={self.lam} failed its suite {detail}".rstrip())


class DegenerateJacobian(NumericalError):
    def __init__(self, lam, x, u, det: float):
        self.lam = tuple(float(v) for v in lam)
        self.x = tuple(float(v) for v in x)
        self.u = tuple(float(v) for v in u)
        self.det = det
        super().__init__(
            f"parameter Jacobian |det|={abs(det):.3g} at lambda={self.lam}, x={self.x}, u={self.u}"
        )


class CoverageMiss(NumericalError):
    def __init__(self, point, detail: str = ""):
        self.point = point
        super().__init__(f"no parameter reaches target {point} {detail}".rstrip())
