# engine/errors.py
"""
[TPPI 공통 예외]
라이브러리 코드는 예외를 던지고, 종료 코드 변환은 main.py 에서만 합니다.
"""


class TppiError(Exception):
    """모든 TPPI 예외의 베이스"""


class ShapeError(TppiError):
    def __init__(self, message, axis=None):
        super().__init__(message)
        self.axis = axis


class KernelTooLargeError(ShapeError):
    pass


class ReceptiveFieldError(ShapeError):
    def __init__(self, message, layer_id=None):
        super().__init__(message)
        self.layer_id = layer_id


class ParamTypeError(TppiError):
    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class NetworkFormatError(TppiError):
    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class TransformError(TppiError):
    pass


class TppiViolationError(TppiError):
    def __init__(self, violations):
        lines = ", ".join(f"{v.layer_id}(rule {v.rule})" for v in violations)
        super().__init__(f"network is not TPPI-valid: {lines}")
        self.violations = list(violations)


class TrainingDiverged(TppiError):
    def __init__(self, message, checkpoint=None, log=None):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.log = log


class DataFormatError(TppiError):
    pass


class ConfigError(TppiError):
    pass
