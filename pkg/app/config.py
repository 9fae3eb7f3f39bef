"""
Environment configuration for the conservation-law engine.

Every knob is read from the environment (optionally through a `.env` file)
with a sensible default, so the CLI, the HTTP server and the tests agree on
budgets and tolerances without passing them around explicitly.
"""

import logging
import os
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Optional

from dotenv import load_dotenv

load_dotenv()

logging.getLogger("app").addHandler(logging.NullHandler())


@dataclass(frozen=True)
class Settings:
    rewrite_depth: int = 32
    size_budget: int = 200000
    seed: int = 0
    tolerance: float = 1e-9
    drift_tolerance: float = 1e-5
    log_level: str = "WARNING"
    host: str = "0.0.0.0"
    port: int = 8000

    def override(self, **changes) -> "Settings":
        """Return a copy with the non-None values of `changes` applied"""
        return replace(self, **{k: v for k, v in changes.items() if v is not None})


_active: Optional[Settings] = None


def use_settings(settings: Optional[Settings]) -> None:
    """Install per-invocation settings (CLI flags); None goes back to the environment"""
    global _active
    _active = settings


def get_settings() -> Settings:
    return _active if _active is not None else settings_from_env()


@lru_cache(maxsize=1)
def settings_from_env() -> Settings:
    """Build settings from the environment (cached for the process)"""
    return Settings(
        rewrite_depth=int(os.getenv("DCE_BUDGET", 32)),
        size_budget=int(os.getenv("DCE_SIZE_BUDGET", 200000)),
        seed=int(os.getenv("DCE_SEED", 0)),
        tolerance=float(os.getenv("DCE_TOLERANCE", 1e-9)),
        drift_tolerance=float(os.getenv("DCE_DRIFT_TOL", 1e-5)),
        log_level=os.getenv("DCE_LOG_LEVEL", "WARNING"),
        host=os.getenv("APP_HOST", "0.0.0.0"),
        port=int(os.getenv("APP_PORT", 8000)),
    )
