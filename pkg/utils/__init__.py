from .helpers import (
    LoggingUtils,
    ReportWriter,
    DataValidator
)

__all__ = [
    'LoggingUtils',
    'ReportWriter',
    'DataValidator'
]
