class MembenchError(Exception):
    """Base class for domain failures; the CLI maps these to exit code 1."""


class TopologyError(MembenchError):
    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class RoutingError(MembenchError):
    pass


class ClockError(MembenchError):
    pass


class AllocationError(MembenchError):
    pass


class PinningError(MembenchError):
    pass


class SyncStartError(MembenchError):
    pass


class PingPongTimeout(MembenchError):
    pass


class AnalysisError(MembenchError):
    pass


class ReportError(MembenchError):
    pass
