"""Centralized Weave initialization for traced estimator and tracker runs."""

from __future__ import annotations

import os
import sys

import weave
from dotenv import load_dotenv

# Load env on import
load_dotenv()

_weave_initialized = False


def status(tag: str, message: str) -> None:
    """Print a tagged status line to stderr unless BINSENSE_QUIET is set."""
    if not os.getenv("BINSENSE_QUIET"):
        print(f"[{tag}] {message}", file=sys.stderr)


def ensure_weave_init(project: str | None = None, entity: str | None = None) -> bool:
    """Initialize Weave once, if a project is configured. Safe to call multiple times.

    Tracing is opt-in: without ``project`` or ``BINSENSE_WEAVE_PROJECT`` the
    ``weave.op`` wrappers just call through. Returns whether traces are logged.
    """
    global _weave_initialized

    if _weave_initialized:
        return True

    project_name = project or os.getenv("BINSENSE_WEAVE_PROJECT")
    if not project_name:
        return False
    entity_name = entity or os.getenv("WANDB_ENTITY")

    # Format: "entity/project" or just "project"
    if entity_name:
        full_project_name = f"{entity_name}/{project_name}"
    else:
        full_project_name = project_name

    try:
        weave.init(full_project_name)
        _weave_initialized = True
        status("WEAVE", f"Initialized: {full_project_name}")
    except Exception as e:
        status("WARN", f"Weave initialization failed: {e}; continuing untraced")
    return _weave_initialized
