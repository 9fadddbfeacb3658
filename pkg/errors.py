"""
波動映射求解器的錯誤類別

每個錯誤類別都有獨立的 exit code，命令列前端 (main.py) 直接把它回傳給 shell。
"""


class WaveMapError(Exception):
    """所有求解器錯誤的根類別"""

    exit_code = 1

    def __init__(self, message, details=None):
        super().__init__(message)
        self.message = message
        self.details = dict(details or {})

    def to_dict(self):
        """
        轉成寫入 diagnostics JSON 的格式

        Returns:
            dict: {'type', 'message', 'details'}
        """
        return {
            'type': type(self).__name__,
            'message': self.message,
            'details': self.details,
        }


class ConfigError(WaveMapError):
    exit_code = 2


class CompatibilityError(WaveMapError):
    exit_code = 3


class DistanceExceeded(WaveMapError):
    exit_code = 4


class OutsideDomain(WaveMapError):
    exit_code = 5


class CausalityViolated(WaveMapError):
    exit_code = 6


class DeltaTooLarge(WaveMapError):
    exit_code = 7


class RegionMismatch(WaveMapError):
    exit_code = 8


class OffLattice(WaveMapError):
    exit_code = 9


class DataCoverage(WaveMapError):
    exit_code = 10


class TestFunctionSupport(WaveMapError):
    exit_code = 11
    __test__ = False  # pytest 不要把它當成測試類別


class LatticeMismatch(WaveMapError):
    exit_code = 12


class MissingProvenance(WaveMapError):
    exit_code = 13


class BudgetInfeasible(WaveMapError):
    exit_code = 14


class SmallnessViolated(WaveMapError):
    exit_code = 15


class NoConvergence(WaveMapError):
    exit_code = 16


class DegenerateHeight(WaveMapError):
    exit_code = 17


class OverlapMismatch(WaveMapError):
    exit_code = 18


class StallDetected(WaveMapError):
    exit_code = 19


class TailNotSmall(WaveMapError):
    exit_code = 20


class TailMass(WaveMapError):
    exit_code = 21
