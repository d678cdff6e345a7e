"""
Logger implementation for chainlab.
Implements singleton pattern for centralized logging with ISO 8601 timestamps.
"""

import logging
import os
import sys
import time
from contextlib import contextmanager
from logging.handlers import TimedRotatingFileHandler
from typing import Iterator, Optional

OUTPUT_DIR_ENV = "CHAINLAB_OUTPUT_DIR"
LOG_LEVEL_ENV = "CHAINLAB_LOG_LEVEL"


def resolve_output_dir(default: str = "results") -> str:
    """Output root, overridable through CHAINLAB_OUTPUT_DIR."""
    return os.environ.get(OUTPUT_DIR_ENV) or default


class Logger:
    _instance: Optional['Logger'] = None
    _logger: Optional[logging.Logger] = None

    def __new__(cls) -> 'Logger':
        if cls._instance is None:
            cls._instance = super(Logger, cls).__new__(cls)
            cls._instance._initialize_logger()
        return cls._instance

    def _initialize_logger(self) -> None:
        """Initialize the logger with proper format and handlers."""
        if self._logger is not None:
            return

        try:
            self._logger = logging.getLogger('chainlab')
            self._logger.setLevel(logging.DEBUG)
            self._logger.propagate = False

            formatter = logging.Formatter(
                '[%(asctime)s] [%(levelname)s] %(message)s',
                datefmt='%Y-%m-%dT%H:%M:%S'
            )

            log_dir = os.path.join(resolve_output_dir(), 'logs')
            try:
                os.makedirs(log_dir, exist_ok=True)
                file_handler = TimedRotatingFileHandler(
                    os.path.join(log_dir, 'error.log'),
                    when='midnight',
                    interval=1,
                    backupCount=30,
                    encoding='utf-8',
                    delay=True,
                )
                file_handler.setFormatter(formatter)
                file_handler.setLevel(logging.ERROR)
                self._logger.addHandler(file_handler)
            except OSError as e:
                # read-only working trees still get console logging
                print(f"Error setting up file handler: {str(e)}", file=sys.stderr)

            console_handler = logging.StreamHandler(sys.stdout)
            console_handler.setFormatter(formatter)
            level_name = os.environ.get(LOG_LEVEL_ENV, 'INFO').upper()
            console_handler.setLevel(getattr(logging, level_name, logging.INFO))
            self._logger.addHandler(console_handler)

            self._logger.debug("Logger initialized")

        except Exception as e:
            print(f"Error initializing logger: {str(e)}", file=sys.stderr)
            raise

    def _log(self, level: int, message: str, exc_info: bool = False) -> None:
        try:
            if self._logger is None:
                self._initialize_logger()
            if self._logger is None:
                raise RuntimeError("Logger initialization failed")
            self._logger.log(level, message, exc_info=exc_info)
        except Exception as e:
            # last resort
            print(f"Logging failed: {str(e)}", file=sys.stderr)

    def error(self, message: str, exc_info: bool = True) -> None:
        """Log an error message with stack trace."""
        self._log(logging.ERROR, message, exc_info)

    def warning(self, message: str) -> None:
        self._log(logging.WARNING, message)

    def info(self, message: str) -> None:
        self._log(logging.INFO, message)

    def debug(self, message: str) -> None:
        self._log(logging.DEBUG, message)

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        """Log start, outcome and elapsed wall time of a named computation."""
        started = time.perf_counter_ns()
        self.info(f"stage={name} status=start")
        try:
            yield
        except Exception:
            elapsed = (time.perf_counter_ns() - started) / 1e6
            self._log(logging.ERROR, f"stage={name} status=failed elapsed_ms={elapsed:.1f}")
            raise
        elapsed = (time.perf_counter_ns() - started) / 1e6
        self.info(f"stage={name} status=ok elapsed_ms={elapsed:.1f}")


# Global logger instance
try:
    logger = Logger()
except Exception as e:
    print(f"Failed to create global logger instance: {str(e)}", file=sys.stderr)
    raise


def get_logger() -> Logger:
    """Get the global logger instance."""
    return logger
