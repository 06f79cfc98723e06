"""Exception hierarchy shared by the simulator modules."""


class GridSentinelError(Exception):
    pass


class ConfigurationError(GridSentinelError, ValueError):
    """Bad model, scenario or file contents."""


class RiccatiDivergenceError(GridSentinelError, ArithmeticError):
    pass


class CalibrationError(GridSentinelError):
    pass


class DegenerateStatisticsError(GridSentinelError, ArithmeticError):
    pass


class InvalidStatisticsError(GridSentinelError, ValueError):
    pass


class OracleRangeError(GridSentinelError, ValueError):
    pass


class IncompleteRoundError(GridSentinelError):
    def __init__(self, missing):
        self.missing = tuple(missing)
        super().__init__(f"incomplete round: regions {list(self.missing)} have not reported")


class ConnectivityError(GridSentinelError):
    pass
