"""Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""

LINES = []


def record(number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} ({detail})"
    LINES.append(line)
    print(line)
    return ok
