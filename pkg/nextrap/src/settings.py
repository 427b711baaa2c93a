"""
Configuratie uit .env / environment

Variabelen:
- NEXT_THREADS: max interne parallelliteit (0 = auto)
- NEXT_SVD_MAX_ELEMENTS: grootte-limiet voor full_svd (rows*cols)
- NEXT_LOG_LEVEL: log niveau voor de CLI
- LANGFUSE_HOST / LANGFUSE_PUBLIC_KEY / LANGFUSE_SECRET_KEY: optionele tracing
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, List, Optional, TypeVar

from dotenv import load_dotenv

load_dotenv()

T = TypeVar("T")
R = TypeVar("R")

DEFAULT_SVD_MAX_ELEMENTS = 4096 * 4096


@dataclass(frozen=True)
class Settings:
    threads: int
    svd_max_elements: int
    log_level: str
    langfuse_host: Optional[str]
    langfuse_public_key: Optional[str]
    langfuse_secret_key: Optional[str]

    @property
    def tracing_enabled(self) -> bool:
        return bool(self.langfuse_public_key and self.langfuse_secret_key)


def _int_env(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"{name} moet een integer zijn, kreeg {raw!r}")


def get_settings() -> Settings:
    """Lees settings uit de environment (elke call opnieuw, zodat tests env kunnen patchen)"""
    return Settings(
        threads=max(0, _int_env("NEXT_THREADS", 0)),
        svd_max_elements=_int_env("NEXT_SVD_MAX_ELEMENTS", DEFAULT_SVD_MAX_ELEMENTS),
        log_level=os.getenv("NEXT_LOG_LEVEL", "WARNING").upper(),
        langfuse_host=os.getenv("LANGFUSE_HOST"),
        langfuse_public_key=os.getenv("LANGFUSE_PUBLIC_KEY"),
        langfuse_secret_key=os.getenv("LANGFUSE_SECRET_KEY"),
    )


def resolve_threads(threads: Optional[int] = None) -> int:
    """Expliciete waarde > NEXT_THREADS > cpu_count (0 = auto)"""
    if threads is None:
        threads = get_settings().threads
    if threads <= 0:
        threads = os.cpu_count() or 1
    return threads


def map_ordered(fn: Callable[[T], R], items: Iterable[T], threads: Optional[int] = None) -> List[R]:
    """Parallelle map; resultaten altijd in invoervolgorde"""
    items = list(items)
    workers = min(resolve_threads(threads), max(1, len(items)))
    if workers == 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
