# app/cli/runner.py

import sys
import time
from typing import List, Optional

from pydantic import ValidationError

from app.cli.router import build_parser
from app.core.config import settings
from app.core.exceptions import MatchSegError
from app.core.logging_config import get_logger, setup_logging

logger = get_logger(__name__)


def _diagnostic(message: str) -> None:
    """一行诊断信息写到标准错误"""
    sys.stderr.write(f"matchseg: error: {' '.join(message.split())}\n")
    sys.stderr.flush()


def run(argv: Optional[List[str]] = None) -> int:
    """解析命令行并执行子命令，返回进程退出码"""
    # 初始化日志系统
    setup_logging(
        log_level=settings.LOG_LEVEL,
        log_dir=settings.LOG_DIR,
        json_logs=settings.LOG_JSON_FORMAT,
        enable_file_logging=settings.LOG_FILE_ENABLED,
        enable_console_logging=settings.LOG_CONSOLE_ENABLED,
    )

    started = time.perf_counter()
    command = None
    try:
        args = build_parser().parse_args(argv)
        command = args.command
        logger.debug(f"执行命令: {command}", extra={"command": command})
        code = args.func(args)
    except MatchSegError as e:
        logger.debug(f"命令失败: {command}", exc_info=True, extra={"command": command})
        _diagnostic(e.detail)
        return e.exit_code
    except ValidationError as e:
        first = e.errors()[0]
        _diagnostic(f"参数非法: {first['msg']}")
        return 2
    except OSError as e:
        logger.debug(f"命令失败: {command}", exc_info=True, extra={"command": command})
        _diagnostic(f"{e.strerror or e}: {e.filename}" if e.filename else str(e))
        return 1
    except Exception as e:
        # 全局异常处理
        logger.error(f"未处理的异常: {command} - {str(e)}", exc_info=True, extra={"command": command})
        _diagnostic(f"内部错误: {type(e).__name__}: {e}")
        return 1

    duration_ms = (time.perf_counter() - started) * 1000.0
    logger.info(f"命令完成: {command} ({duration_ms / 1000.0:.1f}s)", extra={"command": command, "duration_ms": duration_ms})
    return code or 0
