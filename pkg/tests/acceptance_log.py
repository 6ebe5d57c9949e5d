"""Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""

RESULTS: dict = {}


def verdict(number: int, ok: bool, detail: str) -> bool:
    line = f"CRITERION {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    RESULTS[number] = line
    print(line)
    return ok
