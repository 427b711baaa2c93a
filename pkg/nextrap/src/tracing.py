"""
LangFuse tracing integratie voor nextrap runs

Decorator pattern voor observability met:
- Trace per CLI subcommand (flags als input, summary als output)
- Trace tags voor run vergelijking (subcommand, seed)
- No-op zonder keys; tracing verandert nooit output bestanden
"""

import functools
import logging
import time
from pathlib import Path
from typing import Any, Dict, List, Optional

from .settings import get_settings

logger = logging.getLogger(__name__)

# LangFuse SDK
try:
    from langfuse import Langfuse
    LANGFUSE_AVAILABLE = True
except ImportError:
    LANGFUSE_AVAILABLE = False


def _jsonable(value: Any) -> Any:
    """Maak flags/summary waarden trace-veilig (paden, tuples, numpy scalars)"""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, Path):
        return str(value)
    if hasattr(value, "item") and callable(value.item):
        return value.item()
    return value


class TracingManager:
    """Manager voor LangFuse tracing; verbindt alleen als beide keys gezet zijn"""

    def __init__(self):
        self.langfuse = None
        settings = get_settings()

        if not settings.tracing_enabled:
            return
        if not LANGFUSE_AVAILABLE:
            logger.warning("LANGFUSE keys gezet maar langfuse niet geïnstalleerd, tracing uit")
            return
        try:
            self.langfuse = Langfuse(
                host=settings.langfuse_host,
                public_key=settings.langfuse_public_key,
                secret_key=settings.langfuse_secret_key,
            )
            logger.info("LangFuse connected")
        except Exception as e:
            logger.warning("LangFuse connection failed: %s", e)
            self.langfuse = None

    @property
    def enabled(self) -> bool:
        return self.langfuse is not None

    def create_trace(self, name: str, input_data: Dict[str, Any], tags: Optional[List[str]] = None):
        """Create root span that represents a trace"""
        if not self.langfuse:
            return None, "no-trace"

        payload = _jsonable(input_data)
        span = self.langfuse.start_span(name=name, input=payload)
        trace_id = getattr(span, "trace_id", None) or self.langfuse.create_trace_id()
        span.update_trace(name=name, input=payload, metadata={"project": "nextrap"}, tags=tags or [])
        return span, trace_id

    def finish(self, span, output: Dict[str, Any], tags: List[str]):
        if not span:
            return
        payload = _jsonable(output)
        span.update(output=payload)
        span.update_trace(output=payload, tags=tags)
        span.end()
        self.langfuse.flush()


_manager: Optional[TracingManager] = None


def get_tracing_manager() -> TracingManager:
    """Lazy global manager, zodat tests de env kunnen leegmaken voor de eerste call"""
    global _manager
    if _manager is None:
        _manager = TracingManager()
    return _manager


def trace_run(name: str):
    """Decorator voor een CLI run functie: fn(args) -> summary dict"""

    def decorator(func):
        @functools.wraps(func)
        def wrapper(args, *rest, **kwargs):
            manager = get_tracing_manager()
            flags = dict(vars(args)) if hasattr(args, "__dict__") else {"args": args}
            flags.pop("handler", None)
            span, _ = manager.create_trace(
                name=f"nextrap_{name}",
                input_data=flags,
                tags=["nextrap", name, f"seed_{flags.get('seed', 'na')}"],
            )
            start_time = time.time()
            try:
                summary = func(args, *rest, **kwargs)
            except Exception as e:
                manager.finish(span, {"error": f"{type(e).__name__}: {e}"}, ["error", "failed"])
                raise
            output = dict(summary or {})
            output["duration_ms"] = int((time.time() - start_time) * 1000)
            manager.finish(span, output, ["completed"])
            return summary

        return wrapper

    return decorator
