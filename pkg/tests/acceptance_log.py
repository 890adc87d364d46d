"""Shared store for acceptance outcomes, printed at the end of the session."""
RESULTS: dict[int, tuple[bool, str]] = {}


def record(n: int, ok: bool, detail: str) -> bool:
    RESULTS[n] = (bool(ok), detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    return bool(ok)
