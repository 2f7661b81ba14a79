"""Collects one verdict line per acceptance criterion for the terminal summary."""

import contextlib
import time

RESULTS: dict[int, str] = {}


@contextlib.contextmanager
def criterion(number: int, title: str):
    detail = {}
    start = time.perf_counter()
    try:
        yield detail
    except BaseException as exc:
        info = "; ".join(f"{k}={v}" for k, v in detail.items())
        RESULTS[number] = f"criterion {number:>2} FAIL  {title} ({info}) [{type(exc).__name__}: {str(exc)[:160]}]"
        print(RESULTS[number])
        raise
    detail["seconds"] = f"{time.perf_counter() - start:.1f}"
    info = "; ".join(f"{k}={v}" for k, v in detail.items())
    RESULTS[number] = f"criterion {number:>2} PASS  {title} ({info})"
    print(RESULTS[number])
