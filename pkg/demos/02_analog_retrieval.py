"""Analog retrieval: find the historical windows that moved like today's.

Builds a sliding-window database over a series' history, scores every
window against the query context by Pearson correlation, and prints the
top matches together with what actually happened next.

Run: python3 demos/02_analog_retrieval.py
"""

from flairr.retrieval import build_hist_db, format_analogs, pearson, retrieve
from flairr.testing import seasonal_series

CONTEXT = 24
HORIZON = 8


def main() -> None:
    values = seasonal_series(600, period=24, trend=0.002, amplitude=1.0, noise=0.1, seed=4)
    history, query = values[:-CONTEXT], values[-CONTEXT:]

    db = build_hist_db(history, CONTEXT, HORIZON)
    print(f"database: {len(db)} candidate windows of length {CONTEXT} (+{HORIZON} outcome steps)")

    analogs = retrieve(db, query, count=3)
    for rank, segment in enumerate(analogs, start=1):
        print(f"#{rank}: start={segment.start}  r={segment.score:+.4f}")

    # The correlation is plain Pearson on the context windows; the top analog
    # should score the same when checked directly.
    top = analogs[0]
    direct = pearson(history[top.start : top.start + CONTEXT], query)
    print(f"direct pearson check on #1: {direct:+.4f}")

    # The prompt-ready rendering pairs each match with its observed outcome.
    print("\nprompt block for the top analog:\n")
    print(format_analogs(analogs[:1], precision=2))


if __name__ == "__main__":
    main()
