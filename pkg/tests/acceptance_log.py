"""Collects one verdict line per acceptance criterion for the terminal summary."""
LINES = {}


def record(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    LINES[number] = line
    print(line)
    return ok
