"""
Exception classes for the dcmr retrieval engine
"""

from typing import List, Optional


class DcmrException(Exception):
    """Base exception for all dcmr errors"""
    pass


class DimensionError(DcmrException):
    """Tensor shapes do not fit the operation"""
    pass


class EmptyVideoError(DimensionError):
    """Video has no frames to attend over"""
    pass


class ContractError(DcmrException):
    """Caller violated an operation precondition"""
    pass


class NumericError(DcmrException):
    """A value became NaN or infinite"""
    pass


class NormalizationError(NumericError):
    """Cannot L2-normalize a zero vector"""
    pass


class ConfigError(DcmrException):
    """Invalid or inconsistent configuration"""
    pass


class RoutingError(DcmrException):
    """Caption language does not match the requested branch"""
    pass


class FormatError(DcmrException):
    """Malformed archive or checkpoint file"""

    def __init__(self, message: str, offset: int = 0, path: Optional[str] = None):
        self.offset = offset
        self.path = path
        location = f"{path}: " if path else ""
        super().__init__(f"{location}{message} (at byte offset {offset})")


class DatasetError(DcmrException):
    """Dataset manifest or split is unusable"""

    def __init__(self, message: str, offenders: Optional[List[str]] = None):
        self.offenders = list(offenders or [])
        if self.offenders:
            shown = ", ".join(self.offenders[:10])
            more = f" (+{len(self.offenders) - 10} more)" if len(self.offenders) > 10 else ""
            message = f"{message}: {shown}{more}"
        super().__init__(message)


class StorageError(DcmrException):
    """Reading or writing a file failed"""

    def __init__(self, message: str, path: Optional[str] = None):
        self.path = path
        super().__init__(f"{message}: {path}" if path else message)


class BackendError(DcmrException):
    """Translation backend failed after retries"""
    pass


class ProtocolError(DcmrException):
    """Translation backend returned a malformed response"""
    pass


class UsageError(DcmrException):
    """Command line could not be parsed"""
    pass
