"""
Shared Utilities for the YOdar Fusion Pipeline
==============================================
Author: Perception Fusion Team

Common helpers used by every stage of the pipeline.

Key Utilities:
- Logging setup in the project-wide format
- Counter-based random streams (Philox) keyed by seed and purpose labels
- Canonical JSON and configuration digests for artifact headers
- Order-preserving parallel map over fixed work chunks

Random streams never depend on how many streams were drawn before or on the
number of worker threads: each stream key is a hash of the seed and a label path
such as ``(seed, "train", "scene", 17, "camera")``. See docs/RNG.md.

Dependencies: numpy
"""

# Standard library imports
import hashlib                               # Stream keys and config digests
import json                                  # Canonical serialization
import logging                               # Application logging functionality
from concurrent.futures import ThreadPoolExecutor  # Parallel scene processing
from datetime import datetime, timezone      # Manifest timestamps
from typing import Any, Callable, Iterable, List, Optional, Sequence, Tuple, TypeVar, Union

# Third-party imports
import numpy as np

# Local configuration import
from .config import settings

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

T = TypeVar("T")
R = TypeVar("R")
Label = Union[str, int]


# ========== LOGGING ==========

def configure_logging(level: Optional[str] = None, log_file: Optional[str] = None) -> None:
    """
    Configure root logging for command-line runs.

    Args:
        level (Optional[str]): Level name; defaults to ``settings.log_level``
        log_file (Optional[str]): Extra file handler; defaults to ``settings.log_file``
    """
    level_name = (level or settings.log_level).upper()
    handlers: List[logging.Handler] = [logging.StreamHandler()]
    target = log_file or settings.log_file
    if target:
        handlers.append(logging.FileHandler(target))
    logging.basicConfig(
        level=getattr(logging, level_name, logging.INFO),
        format=LOG_FORMAT,
        handlers=handlers,
        force=True,
    )


# ========== RANDOM STREAMS ==========

def stream_key(seed: int, *labels: Label) -> Tuple[int, int]:
    """
    Philox key for the stream named by ``seed`` and ``labels``.

    The key is the first 16 bytes of SHA-256 over ``"<seed>/<label1>/<label2>..."``
    read as two little-endian 64-bit words.
    """
    path = "/".join(str(part) for part in (seed, *labels))
    digest = hashlib.sha256(path.encode("utf-8")).digest()
    return (
        int.from_bytes(digest[0:8], "little"),
        int.from_bytes(digest[8:16], "little"),
    )


def seed_stream(seed: int, *labels: Label) -> np.random.Generator:
    """
    Independent random generator for one purpose.

    Example:
        >>> rng = seed_stream(1, "train", "scene", 0, "camera")
        >>> rng.random() == seed_stream(1, "train", "scene", 0, "camera").random()
        True
    """
    key = np.array(stream_key(seed, *labels), dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def derive_seed(seed: int, *labels: Label) -> int:
    """Child seed for a named component, a non-negative 63-bit integer."""
    return stream_key(seed, *labels)[0] >> 1


# ========== SERIALIZATION HELPERS ==========

def canonical_json(payload: Any) -> str:
    """Key-sorted, whitespace-free JSON used for hashing."""
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), allow_nan=False)


def sha256_hex(text: Union[str, bytes]) -> str:
    data = text.encode("utf-8") if isinstance(text, str) else text
    return hashlib.sha256(data).hexdigest()


def config_digest(config: Any) -> str:
    """SHA-256 of the canonical JSON of a pydantic config (or plain dict)."""
    payload = config.model_dump(mode="json") if hasattr(config, "model_dump") else config
    return sha256_hex(canonical_json(payload))


def utc_timestamp() -> str:
    """ISO-8601 UTC timestamp; only the run manifest records wall-clock time."""
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


# ========== PARALLEL EXECUTION ==========

def chunked(items: Sequence[T], size: int) -> List[Sequence[T]]:
    """Split ``items`` into consecutive chunks of ``size`` (the last may be shorter)."""
    if size <= 0:
        raise ValueError("chunk size must be positive")
    return [items[i:i + size] for i in range(0, len(items), size)]


def parallel_map(
    func: Callable[[T], R],
    items: Iterable[T],
    threads: Optional[int] = None,
) -> List[R]:
    """
    Apply ``func`` to every item, results in input order.

    Work is only ever split along item boundaries, so results are identical for
    every thread count as long as ``func`` itself is deterministic per item.
    """
    work = list(items)
    workers = min(threads or settings.thread_count, max(len(work), 1))
    if workers <= 1:
        return [func(item) for item in work]
    logger.debug(f"Running {len(work)} work items on {workers} threads")
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(func, work))
