"""
FadeLead Simulator - Logging System
===================================
Structured logging for pipeline stages, message exchange and experiment runs.

Features:
- Colored console output
- JSON structured file logs (extra_data payloads)
- Rotating file logs, attached on demand by initialize_logging()
- Budget admission logging
- Performance metrics and timed operation contexts
"""

import json
import logging
import logging.handlers
import time
import traceback
from datetime import datetime
from functools import wraps
from pathlib import Path
from typing import Any, Callable, Dict, Optional


# ============================================================================
# LOGGER CONFIGURATION
# ============================================================================

class LoggerConfig:
    """Central configuration for all logging"""

    CONSOLE_LEVEL = logging.WARNING
    FILE_LEVEL = logging.DEBUG

    LOG_DIR = Path("logs")

    MAIN_LOG = "fadelead.log"
    BUDGET_LOG = "budget.log"
    ERROR_LOG = "errors.log"
    PERFORMANCE_LOG = "performance.log"

    MAX_BYTES = 10 * 1024 * 1024
    BACKUP_COUNT = 5

    DETAILED_FORMAT = (
        "%(asctime)s | %(name)s | %(levelname)-8s | "
        "%(filename)s:%(lineno)d | %(funcName)s | %(message)s"
    )
    SIMPLE_FORMAT = "%(asctime)s | %(levelname)-8s | %(message)s"


# ============================================================================
# CUSTOM FORMATTERS
# ============================================================================

class ColoredFormatter(logging.Formatter):
    """Colored console output for better readability"""

    COLORS = {
        'DEBUG': '\033[36m',
        'INFO': '\033[32m',
        'WARNING': '\033[33m',
        'ERROR': '\033[31m',
        'CRITICAL': '\033[35m',
        'RESET': '\033[0m'
    }

    def format(self, record):
        # format a copy so file handlers on the same record keep the plain level name
        record = logging.makeLogRecord(record.__dict__)
        levelname = record.levelname
        if levelname in self.COLORS:
            record.levelname = f"{self.COLORS[levelname]}{levelname}{self.COLORS['RESET']}"
        return super().format(record)


class JSONFormatter(logging.Formatter):
    """JSON formatter for structured logging"""

    def format(self, record):
        log_data = {
            'timestamp': datetime.fromtimestamp(record.created).isoformat(),
            'level': record.levelname,
            'logger': record.name,
            'module': record.module,
            'function': record.funcName,
            'line': record.lineno,
            'message': record.getMessage(),
        }

        if record.exc_info:
            log_data['exception'] = {
                'type': record.exc_info[0].__name__,
                'message': str(record.exc_info[1]),
                'traceback': traceback.format_exception(*record.exc_info)
            }

        if hasattr(record, 'extra_data'):
            log_data['extra'] = record.extra_data

        return json.dumps(log_data, default=str)


# ============================================================================
# LOGGER SETUP
# ============================================================================

_file_handlers: Dict[Path, logging.Handler] = {}


def _rotating_handler(log_file: Path, use_json: bool) -> logging.Handler:
    """One handler per file; loggers writing the same file share it"""
    key = Path(log_file).resolve()
    handler = _file_handlers.get(key)
    if handler is None:
        handler = logging.handlers.RotatingFileHandler(
            log_file,
            maxBytes=LoggerConfig.MAX_BYTES,
            backupCount=LoggerConfig.BACKUP_COUNT,
            encoding='utf-8'
        )
        handler.setLevel(LoggerConfig.FILE_LEVEL)
        handler.setFormatter(
            JSONFormatter() if use_json else logging.Formatter(LoggerConfig.DETAILED_FORMAT)
        )
        _file_handlers[key] = handler
    return handler


def close_file_handlers():
    """Close every rotating file handler and forget it"""
    for handler in _file_handlers.values():
        handler.close()
    _file_handlers.clear()


def setup_logger(
    name: str,
    log_file: Optional[Path] = None,
    level: int = logging.DEBUG,
    use_json: bool = False
) -> logging.Logger:
    """
    Create and configure a logger

    Args:
        name: Logger name
        log_file: Path to log file (None for console only)
        level: Logging level
        use_json: Use JSON formatting for the file handler

    Returns:
        Configured logger instance
    """
    logger = logging.getLogger(name)
    logger.setLevel(level)
    logger.propagate = False

    shared = set(_file_handlers.values())
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        if handler not in shared:
            handler.close()

    console_handler = logging.StreamHandler()
    console_handler.setLevel(LoggerConfig.CONSOLE_LEVEL)
    console_handler.setFormatter(ColoredFormatter(LoggerConfig.SIMPLE_FORMAT))
    logger.addHandler(console_handler)

    if log_file:
        logger.addHandler(_rotating_handler(log_file, use_json))

    return logger


# ============================================================================
# SPECIALIZED LOGGERS
# ============================================================================

# Main application logger; pipeline modules log under "fadelead.*" children
app_logger = setup_logger('fadelead')

# Wire codec logger
codec_logger = setup_logger('fadelead.codec')

# Budget admission logger (JSON formatted when written to file)
budget_logger = setup_logger('fadelead.budget')

# Error logger
error_logger = setup_logger('fadelead.errors')

# Performance logger
perf_logger = setup_logger('fadelead.performance')

_FILE_TARGETS = {
    'fadelead': (LoggerConfig.MAIN_LOG, False),
    'fadelead.codec': (LoggerConfig.MAIN_LOG, False),
    'fadelead.budget': (LoggerConfig.BUDGET_LOG, True),
    'fadelead.errors': (LoggerConfig.ERROR_LOG, True),
    'fadelead.performance': (LoggerConfig.PERFORMANCE_LOG, True),
}


# ============================================================================
# LOGGING HELPERS
# ============================================================================

class LogContext:
    """Context manager for structured logging with automatic timing"""

    def __init__(self, logger: logging.Logger, operation: str, **kwargs):
        self.logger = logger
        self.operation = operation
        self.context = kwargs
        self.start_time = None

    def __enter__(self):
        self.start_time = time.perf_counter()
        self.logger.info(
            f"Starting: {self.operation}",
            extra={'extra_data': {'context': self.context}}
        )
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        duration = time.perf_counter() - self.start_time

        if exc_type:
            self.logger.error(
                f"Failed: {self.operation} (duration: {duration:.2f}s)",
                extra={'extra_data': {
                    'context': self.context,
                    'duration_seconds': duration,
                    'error': str(exc_val)
                }},
                exc_info=(exc_type, exc_val, exc_tb)
            )
        else:
            self.logger.info(
                f"Completed: {self.operation} (duration: {duration:.2f}s)",
                extra={'extra_data': {
                    'context': self.context,
                    'duration_seconds': duration
                }}
            )


def log_admission(sender: int, receiver: int, bits: int, inbound_total: int, budget_bits: int, accepted: bool):
    """
    Log one budget admission decision

    Args:
        sender: Sending agent id
        receiver: Receiving agent id
        bits: Message size in bits
        inbound_total: Receiver's inbound bits after the decision
        budget_bits: Per-receiver budget B
        accepted: Whether the message was admitted
    """
    level = logging.DEBUG if accepted else logging.INFO
    budget_logger.log(
        level,
        f"Message {sender}->{receiver}: {'ACCEPTED' if accepted else 'REJECTED'} ({bits} bits)",
        extra={'extra_data': {
            'sender': sender,
            'receiver': receiver,
            'bits': bits,
            'inbound_total': inbound_total,
            'budget_bits': budget_bits,
            'accepted': accepted
        }}
    )


def log_performance(operation: str, duration: float, metadata: Optional[Dict] = None):
    """
    Log performance metrics

    Args:
        operation: Operation name
        duration: Duration in seconds
        metadata: Additional performance data
    """
    perf_data = {
        'operation': operation,
        'duration_seconds': duration,
        'duration_ms': duration * 1000
    }

    if metadata:
        perf_data.update(metadata)

    perf_logger.info(
        f"Performance: {operation} ({duration:.3f}s)",
        extra={'extra_data': perf_data}
    )


def log_error(error: Exception, context: str, additional_info: Optional[Dict] = None):
    """
    Log errors with full context

    Args:
        error: Exception object
        context: Description of what was happening
        additional_info: Additional debugging info
    """
    error_data = {
        'context': context,
        'error_type': type(error).__name__,
        'error_message': str(error),
    }

    if additional_info:
        error_data['additional_info'] = additional_info

    error_logger.error(
        f"Error in {context}: {str(error)}",
        extra={'extra_data': error_data},
        exc_info=(type(error), error, error.__traceback__)
    )


# ============================================================================
# DECORATORS FOR AUTOMATIC LOGGING
# ============================================================================

def log_function_call(logger: logging.Logger = app_logger):
    """
    Decorator to log function entry/exit and timing at DEBUG level

    Usage:
        @log_function_call()
        def run_sweep(config):
            ...
    """
    def decorator(func: Callable) -> Callable:
        @wraps(func)
        def wrapper(*args, **kwargs):
            func_name = func.__name__
            logger.debug(f"→ Entering: {func_name}")
            start_time = time.perf_counter()

            try:
                result = func(*args, **kwargs)
            except Exception as e:
                duration = time.perf_counter() - start_time
                logger.error(
                    f"✗ Failed: {func_name} (duration: {duration:.3f}s)",
                    extra={'extra_data': {
                        'function': func_name,
                        'duration_seconds': duration,
                        'error': str(e),
                    }}
                )
                raise

            duration = time.perf_counter() - start_time
            logger.debug(
                f"← Exiting: {func_name} (duration: {duration:.3f}s)",
                extra={'extra_data': {'function': func_name, 'duration_seconds': duration}}
            )
            return result

        return wrapper
    return decorator


# ============================================================================
# INITIALIZATION
# ============================================================================

def initialize_logging(verbose: bool = False, log_dir: Optional[Path] = None, console_level: Optional[str] = None):
    """
    Initialize logging system

    Args:
        verbose: If True, set console to DEBUG level
        log_dir: When given, attach rotating file handlers under this directory
        console_level: Console level name overriding the default
    """
    if console_level:
        LoggerConfig.CONSOLE_LEVEL = logging.getLevelName(console_level.upper())
    if verbose:
        LoggerConfig.CONSOLE_LEVEL = logging.DEBUG

    if log_dir is not None:
        LoggerConfig.LOG_DIR = Path(log_dir)
        LoggerConfig.LOG_DIR.mkdir(parents=True, exist_ok=True)

    close_file_handlers()
    for name, (file_name, use_json) in _FILE_TARGETS.items():
        log_file = LoggerConfig.LOG_DIR / file_name if log_dir is not None else None
        setup_logger(name, log_file, use_json=use_json)

    app_logger.info(
        "Logging initialized",
        extra={'extra_data': {
            'log_dir': str(LoggerConfig.LOG_DIR.absolute()) if log_dir is not None else None,
            'console_level': logging.getLevelName(LoggerConfig.CONSOLE_LEVEL),
        }}
    )
