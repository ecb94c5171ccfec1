"""Pass/fail registry for the acceptance criteria, printed at the end of the pytest run."""

from contextlib import contextmanager

RESULTS: dict[int, tuple[str, str]] = {}


@contextmanager
def criterion(n: int, title: str):
    """Record PASS if the block completes, FAIL (and re-raise) otherwise. Yields a list for detail notes."""
    notes: list[str] = []
    try:
        yield notes
    except BaseException:
        RESULTS[n] = ("FAIL", "; ".join([title, *notes]))
        print(f"criterion {n}: FAIL  {title}")
        raise
    RESULTS[n] = ("PASS", "; ".join([title, *notes]))
    print(f"criterion {n}: PASS  {title}  {'; '.join(notes)}")
