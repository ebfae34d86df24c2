"""Selects the LSTM recurrence implementation at import time.

The compiled extension is preferred. Setting ``VQA_FORGE_PURE=1`` forces the
numpy fallback, which is also used whenever the extension failed to build.
"""
import os
from contextlib import contextmanager

from . import _lstm_py

python_kernels = _lstm_py

if os.environ.get("VQA_FORGE_PURE", "") not in ("", "0"):
    compiled_kernels = None
else:
    try:
        from . import _lstm_ext as compiled_kernels
    except ImportError:
        compiled_kernels = None

active = compiled_kernels if compiled_kernels is not None else python_kernels
BACKEND = "cython" if compiled_kernels is not None else "python"

lstm_recurrence_forward = active.lstm_recurrence_forward
lstm_recurrence_backward = active.lstm_recurrence_backward


@contextmanager
def use_backend(name):
    """Temporarily route the LSTM layers through ``"python"`` or ``"cython"``."""
    global active, BACKEND, lstm_recurrence_forward, lstm_recurrence_backward
    if name == "cython" and compiled_kernels is None:
        raise RuntimeError("the compiled LSTM extension is not available")
    if name not in ("python", "cython"):
        raise ValueError(f"unknown backend {name!r}")
    saved = active, BACKEND
    active = compiled_kernels if name == "cython" else python_kernels
    BACKEND = name
    lstm_recurrence_forward = active.lstm_recurrence_forward
    lstm_recurrence_backward = active.lstm_recurrence_backward
    try:
        yield active
    finally:
        active, BACKEND = saved
        lstm_recurrence_forward = active.lstm_recurrence_forward
        lstm_recurrence_backward = active.lstm_recurrence_backward
