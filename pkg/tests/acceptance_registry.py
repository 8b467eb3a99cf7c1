"""One result line per acceptance criterion, filled in as the tests run."""

RESULTS = {}


def record(number: int, name: str, passed: bool, detail: str) -> str:
    line = f"criterion {number} {'PASS' if passed else 'FAIL'}  {name}: {detail}"
    RESULTS[number] = line
    print(line)
    return line
