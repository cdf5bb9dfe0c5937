# app/core/logging_config.py

import json
import logging
import sys
from datetime import datetime, timezone
from logging.handlers import RotatingFileHandler, TimedRotatingFileHandler
from pathlib import Path
from typing import Any, Dict, Optional

# 日志记录上可能携带的领域上下文字段（通过 extra= 传入）
CONTEXT_FIELDS = ("step", "query_id", "strategy", "command", "duration_ms")

DATE_FORMAT = "%Y-%m-%d %H:%M:%S"
CONSOLE_FORMAT = "%(asctime)s | %(levelname)-8s | %(name)s | %(message)s%(context)s"
FILE_FORMAT = "%(asctime)s | %(levelname)-8s | %(name)s | %(module)s:%(funcName)s:%(lineno)d | %(message)s%(context)s"

APP_LOG_MAX_BYTES = 10 * 1024 * 1024
APP_LOG_BACKUPS = 5
ERROR_LOG_DAYS = 30


def record_context(record: logging.LogRecord) -> Dict[str, Any]:
    """取出记录上携带的领域上下文"""
    return {field: getattr(record, field) for field in CONTEXT_FIELDS if hasattr(record, field)}


class ContextFilter(logging.Filter):
    """把领域上下文拼成 " [step=12 strategy=clip]" 放进 %(context)s"""

    def filter(self, record: logging.LogRecord) -> bool:
        context = record_context(record)
        if "duration_ms" in context:
            context["duration_ms"] = f"{context['duration_ms']:.1f}"
        record.context = " [" + " ".join(f"{k}={v}" for k, v in context.items()) + "]" if context else ""
        return True


class JSONFormatter(logging.Formatter):
    """每条日志一行 JSON，便于按 step / query_id 检索"""

    def format(self, record: logging.LogRecord) -> str:
        payload: Dict[str, Any] = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
            "location": f"{record.module}:{record.funcName}:{record.lineno}",
        }
        payload.update(record_context(record))
        if record.exc_info:
            payload["exception"] = self.formatException(record.exc_info)
        return json.dumps(payload, ensure_ascii=False)


class ColoredFormatter(logging.Formatter):
    """控制台格式化器，终端下按级别着色"""

    COLORS = {
        "DEBUG": "\033[36m",
        "INFO": "\033[32m",
        "WARNING": "\033[33m",
        "ERROR": "\033[31m",
        "CRITICAL": "\033[35m",
    }
    RESET = "\033[0m"

    def __init__(self, use_color: bool = True):
        super().__init__(fmt=CONSOLE_FORMAT, datefmt=DATE_FORMAT)
        self.use_color = use_color

    def format(self, record: logging.LogRecord) -> str:
        color = self.COLORS.get(record.levelname) if self.use_color else None
        if color is None:
            return super().format(record)
        # 在副本上改级别名，文件处理器看到的仍是原始记录
        colored = logging.makeLogRecord(record.__dict__)
        colored.levelname = f"{color}{record.levelname}{self.RESET}"
        return super().format(colored)


def _console_handler(level: int) -> logging.Handler:
    handler = logging.StreamHandler(sys.stderr)
    handler.setLevel(level)
    handler.setFormatter(ColoredFormatter(use_color=sys.stderr.isatty()))
    return handler


def _app_file_handler(log_path: Path, level: int, json_logs: bool) -> logging.Handler:
    filename = "matchseg.json.log" if json_logs else "matchseg.log"
    handler = RotatingFileHandler(
        log_path / filename, maxBytes=APP_LOG_MAX_BYTES, backupCount=APP_LOG_BACKUPS, encoding="utf-8"
    )
    handler.setLevel(level)
    handler.setFormatter(JSONFormatter() if json_logs else logging.Formatter(FILE_FORMAT, DATE_FORMAT))
    return handler


def _error_file_handler(log_path: Path) -> logging.Handler:
    # 按天轮转，只记 WARNING 及以上
    handler = TimedRotatingFileHandler(
        log_path / "error.log", when="midnight", backupCount=ERROR_LOG_DAYS, encoding="utf-8"
    )
    handler.setLevel(logging.WARNING)
    handler.setFormatter(logging.Formatter(FILE_FORMAT + "\n%(pathname)s\n", DATE_FORMAT))
    return handler


def setup_logging(
    log_level: str = "INFO",
    log_dir: Optional[str] = None,
    json_logs: bool = False,
    enable_file_logging: bool = False,
    enable_console_logging: bool = True,
) -> None:
    """
    配置命令行进程的日志系统，可重复调用（每次先清掉根记录器上的处理器）

    控制台日志写到 stderr，stdout 只留给报告、损失日志等机器可读输出。

    Args:
        log_level: 日志级别 (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        log_dir: 日志文件目录，默认 ./logs
        json_logs: 文件日志是否用 JSON 格式
        enable_file_logging: 是否写日志文件
        enable_console_logging: 是否输出到控制台
    """
    level = getattr(logging, log_level.upper(), logging.INFO)
    root_logger = logging.getLogger()
    root_logger.setLevel(level)
    root_logger.handlers.clear()

    handlers = []
    if enable_console_logging:
        handlers.append(_console_handler(level))

    log_path = Path(log_dir or "logs")
    if enable_file_logging:
        log_path.mkdir(parents=True, exist_ok=True)
        handlers.append(_app_file_handler(log_path, level, json_logs))
        handlers.append(_error_file_handler(log_path))

    context_filter = ContextFilter()
    for handler in handlers:
        handler.addFilter(context_filter)
        root_logger.addHandler(handler)

    logging.getLogger(__name__).debug(
        f"日志系统初始化完成: level={log_level}, console={enable_console_logging}, "
        f"file={enable_file_logging}, json_format={json_logs}, log_dir={log_path.absolute()}"
    )


def get_logger(name: str) -> logging.Logger:
    """获取指定名称的日志记录器"""
    return logging.getLogger(name)
