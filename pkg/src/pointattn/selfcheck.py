"""Run every invariant once and report pass/fail per property."""

from __future__ import annotations

import contextlib
import sys
import time

from . import autodiff as ad
from .checks import all_checks

FAULTS = ("softmax",)


@contextlib.contextmanager
def injected_fault(name):
    """Test hook: temporarily break a primitive so the suite must notice."""
    if name is None:
        yield
        return
    if name not in FAULTS:
        raise ValueError(f"unknown fault {name!r}; choose from {FAULTS}")
    original = ad.softmax_values

    def corrupted(z):
        return original(z) * 1.001

    ad.softmax_values = corrupted
    try:
        yield
    finally:
        ad.softmax_values = original


def run(quick=True, fault=None, stream=None) -> int:
    """Print one line per property; return the number of failures."""
    stream = stream or sys.stdout
    failures = 0
    t0 = time.perf_counter()
    with injected_fault(fault):
        for check in all_checks(quick):
            try:
                res = check()
                ok, name, detail = res.ok, res.name, res.detail
            except Exception as exc:  # a crash is a failed property, not a crashed suite
                ok, name, detail = False, getattr(check, "__name__", "check"), f"raised {exc!r}"
            failures += not ok
            print(f"{'PASS' if ok else 'FAIL'}  {name}  ({detail})", file=stream, flush=True)
    print(f"{failures} failed, {time.perf_counter() - t0:.1f}s", file=stream)
    return failures
