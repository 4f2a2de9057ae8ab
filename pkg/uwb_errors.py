"""
UWB ranging error codes and exception handling.
Every failure raised by the toolkit maps to a code, a name and a CLI exit code.
"""
from typing import Optional, Dict, Any
import logging


class UwbError(Exception):
    """Base exception for ranging toolkit errors."""

    def __init__(self, code: int, message: str, details: Optional[Dict[str, Any]] = None):
        self.code = code
        self.message = message
        self.details = details or {}
        super().__init__(f"[{code}] {message}")


class ConfigError(UwbError):
    """Scene, curve, experiment or .config content is invalid."""
    pass


class DomainError(UwbError):
    """A value lies outside the domain of a model or calibration curve."""
    pass


class MalformedRecordError(UwbError):
    """An exchange record is missing timestamps or violates interval preconditions."""
    pass


class StatisticsError(UwbError):
    """Not enough samples for a requested statistic."""
    pass


class SingularGeometryError(UwbError):
    """Candidate position coincides with a station used by a residual."""
    pass


class DegenerateGeometryError(UwbError):
    """Measurement geometry cannot determine a 2D position."""
    pass


# Error code mappings
ERROR_CODES = {
    # Configuration
    -2001: {
        'name': 'CONFIG_INVALID',
        'description': 'Configuration content violates its schema',
        'exit_code': 2,
        'exception': ConfigError
    },
    -2002: {
        'name': 'CONFIG_NOT_FOUND',
        'description': 'A referenced configuration file does not exist',
        'exit_code': 2,
        'exception': ConfigError
    },
    -2003: {
        'name': 'SCENE_INVARIANT',
        'description': 'Scene violates a physical or structural invariant',
        'exit_code': 2,
        'exception': ConfigError
    },
    # Data
    -3001: {
        'name': 'POWER_OUT_OF_DOMAIN',
        'description': 'Signal power outside the calibration curve domain',
        'exit_code': 3,
        'exception': DomainError
    },
    -3002: {
        'name': 'DISTANCE_OUT_OF_DOMAIN',
        'description': 'Path loss requested for a non-positive distance',
        'exit_code': 3,
        'exception': DomainError
    },
    -3003: {
        'name': 'MALFORMED_RECORD',
        'description': 'Exchange record is incomplete or inconsistent',
        'exit_code': 3,
        'exception': MalformedRecordError
    },
    -3004: {
        'name': 'INVALID_INTERVAL',
        'description': 'Timestamp interval is non-positive or out of order',
        'exit_code': 3,
        'exception': MalformedRecordError
    },
    -3005: {
        'name': 'NOT_ENOUGH_SAMPLES',
        'description': 'Statistic requires more samples',
        'exit_code': 3,
        'exception': StatisticsError
    },
    -3006: {
        'name': 'DATA_FILE_INVALID',
        'description': 'CSV input is missing required columns',
        'exit_code': 3,
        'exception': MalformedRecordError
    },
    # Geometry
    -4001: {
        'name': 'SINGULAR_GEOMETRY',
        'description': 'Candidate coincides with a station',
        'exit_code': 4,
        'exception': SingularGeometryError
    },
    -4002: {
        'name': 'DEGENERATE_GEOMETRY',
        'description': 'Normal matrix is rank deficient or measurements are too few',
        'exit_code': 4,
        'exception': DegenerateGeometryError
    },
}

CONFIG_INVALID = -2001
CONFIG_NOT_FOUND = -2002
SCENE_INVARIANT = -2003
POWER_OUT_OF_DOMAIN = -3001
DISTANCE_OUT_OF_DOMAIN = -3002
MALFORMED_RECORD = -3003
INVALID_INTERVAL = -3004
NOT_ENOUGH_SAMPLES = -3005
DATA_FILE_INVALID = -3006
SINGULAR_GEOMETRY = -4001
DEGENERATE_GEOMETRY = -4002


def get_error_info(code: int) -> Dict[str, Any]:
    """
    Get error information by error code.

    Args:
        code: Toolkit error code

    Returns:
        Dictionary with error details
    """
    if code in ERROR_CODES:
        return ERROR_CODES[code]

    return {
        'name': 'UNKNOWN_ERROR',
        'description': f'Unknown error code: {code}',
        'exit_code': 1,
        'exception': UwbError
    }


def raise_error(code: int, message: str, details: Optional[Dict[str, Any]] = None,
                logger: Optional[logging.Logger] = None) -> None:
    """
    Raise the exception class registered for an error code.

    Args:
        code: Toolkit error code
        message: Human readable message
        details: Extra context (station id, offending value, stage)
        logger: Optional logger instance

    Raises:
        Appropriate UwbError subclass based on error code
    """
    error_info = get_error_info(code)
    exception_class = error_info.get('exception', UwbError)

    if logger:
        logger.error("UWB Error - Code: %d, Name: %s, Message: %s",
                     code, error_info['name'], message)

    raise exception_class(code, message, details)


def exit_code_for(error: BaseException) -> int:
    """
    Map an exception to the CLI exit code.

    Args:
        error: Raised exception

    Returns:
        0-4 process exit code (1 for anything outside the table)
    """
    if isinstance(error, UwbError):
        return get_error_info(error.code)['exit_code']
    return 1


class ErrorFormatter:
    """Format error messages for logging and user display."""

    @staticmethod
    def format_error(error: UwbError) -> str:
        """
        Format error for logging.

        Args:
            error: UwbError instance

        Returns:
            Formatted error string
        """
        error_info = get_error_info(error.code)
        lines = [
            "UWB Toolkit Error",
            f"  Code: {error.code}",
            f"  Type: {error_info['name']}",
            f"  Exit: {error_info['exit_code']}",
            f"  Message: {error.message}",
            f"  Description: {error_info['description']}",
        ]
        for key in sorted(error.details):
            lines.append(f"  {key}: {error.details[key]}")
        return "\n".join(lines)

    @staticmethod
    def format_user_message(error: UwbError) -> str:
        """
        Format user-friendly error message.

        Args:
            error: UwbError instance

        Returns:
            User-friendly error message
        """
        stage = error.details.get('stage')
        prefix = f"[{stage}] " if stage else ""
        if isinstance(error, ConfigError):
            return f"{prefix}Configuration error: {error.message}"
        elif isinstance(error, DomainError):
            return f"{prefix}Value out of range: {error.message}"
        elif isinstance(error, MalformedRecordError):
            return f"{prefix}Malformed data: {error.message}"
        elif isinstance(error, (SingularGeometryError, DegenerateGeometryError)):
            return f"{prefix}Geometry cannot be solved: {error.message}"
        else:
            return f"{prefix}An error occurred: {error.message}"
