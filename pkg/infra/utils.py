# infra/utils.py
import logging
import sys
import time
import datetime
import functools
from concurrent.futures import ThreadPoolExecutor
from logging.handlers import RotatingFileHandler

import pytz

from config import Config

ROOT_LOGGER_NAME = "tppi"

# 루트 핸들러는 한 번만 설정 (Singleton)
_root_configured = False


def _configure_root():
    global _root_configured
    if _root_configured:
        return

    root = logging.getLogger(ROOT_LOGGER_NAME)
    root.setLevel(getattr(logging, str(Config.LOG_LEVEL).upper(), logging.INFO))

    formatter = logging.Formatter(
        '[%(asctime)s] %(levelname)s [%(filename)s:%(lineno)d] %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )

    if not root.handlers:
        stream_handler = logging.StreamHandler(sys.stdout)
        stream_handler.setFormatter(formatter)
        root.addHandler(stream_handler)

        if Config.LOG_FILE:
            file_handler = RotatingFileHandler(
                Config.LOG_FILE,
                maxBytes=Config.LOG_MAX_BYTES,
                backupCount=Config.LOG_BACKUP_COUNT,
                encoding='utf-8'
            )
            file_handler.setFormatter(formatter)
            root.addHandler(file_handler)

    _root_configured = True


def get_logger(name=None):
    """tppi 루트 아래의 named logger 반환 (핸들러는 루트에만)"""
    _configure_root()
    if not name:
        return logging.getLogger(ROOT_LOGGER_NAME)
    return logging.getLogger(f"{ROOT_LOGGER_NAME}.{name}")


# [연산 로깅 데코레이터]
def log_op_call(op_name):
    """
    연산 시작/소요시간은 DEBUG, 실패는 ERROR 로 남기고 예외는 그대로 다시 던집니다.
    (구조화된 에러 계약이 있으므로 None 으로 삼키지 않음)
    """
    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            logger = get_logger("ops")
            started = time.perf_counter()
            try:
                result = func(*args, **kwargs)
            except Exception as e:
                logger.error(f"❌ Op Fail [{op_name}]: {e}")
                raise
            logger.debug(f"[{op_name}] {time.perf_counter() - started:.4f}s")
            return result
        return wrapper
    return decorator


def resolve_threads(threads=None):
    """--threads > TPPI_THREADS > 1"""
    if threads is None:
        threads = Config.THREADS
    return max(1, int(threads))


def run_ordered(func, items, threads=None):
    """
    items 각각에 func 적용 후 입력 순서 그대로 결과 리스트 반환.
    병렬 여부와 관계없이 결과 순서는 고정입니다.
    """
    items = list(items)
    workers = resolve_threads(threads)
    if workers == 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(func, items))


def utc_now_iso():
    return datetime.datetime.now(pytz.utc).isoformat(timespec="seconds")
