"""Exception hierarchy shared by the solvers and the command-line layer."""


class TCMVError(Exception):
    """Base class; ``exit_code`` is what the CLI returns when it escapes."""

    exit_code = 3


class ConfigError(TCMVError, ValueError):
    exit_code = 1


class SCViolation(TCMVError):
    """Raised when a node has zero conditional variance but non-zero drift."""

    exit_code = 1

    def __init__(self, nodes, message=None):
        self.nodes = list(nodes)
        shown = ", ".join(str(n) for n in self.nodes[:20])
        more = "" if len(self.nodes) <= 20 else f" (+{len(self.nodes) - 20} more)"
        super().__init__(message or f"structure condition violated at nodes: {shown}{more}")


class DegenerateMarket(TCMVError):
    exit_code = 1


class UnsupportedSpec(TCMVError):
    exit_code = 1


class NonConvergence(TCMVError):
    exit_code = 2


class InvariantBreach(TCMVError):
    exit_code = 3
