"""Per-user request queues: chunk arrivals, service, and delay accounting."""

from __future__ import annotations

from collections import deque

import numpy as np


def sample_arrivals(n_users: int, max_arrivals: int, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. integer-uniform chunk arrivals on {0, ..., max_arrivals}."""
    if max_arrivals < 0:
        raise ValueError("max_arrivals must be non-negative")
    return rng.integers(0, max_arrivals + 1, size=n_users)


def departures(rates, backlog, slot_seconds: float, chunk_bits: float) -> np.ndarray:
    """Chunks served this slot: min(floor(slot_seconds * rate / chunk_bits), backlog).

    Partial chunks are useless, hence the floor; a queue never serves more
    than it holds.
    """
    rates = np.asarray(rates, dtype=float)
    backlog = np.asarray(backlog, dtype=np.int64)
    deliverable = np.floor(slot_seconds * rates / chunk_bits).astype(np.int64)
    return np.minimum(deliverable, backlog)


class QueueState:
    """Chunk backlogs with FIFO arrival stamps and per-threshold failure counters.

    A chunk counts as failed for threshold D once it has waited more than D
    slots, whether it was eventually served late or is still queued when
    measured.
    """

    def __init__(self, n_users: int, delay_thresholds=()):
        self.n_users = int(n_users)
        self.delay_thresholds = tuple(int(d) for d in delay_thresholds)
        self._pending = [deque() for _ in range(self.n_users)]
        self._backlog = np.zeros(self.n_users, dtype=np.int64)
        self.arrived = np.zeros(self.n_users, dtype=np.int64)
        self.served = np.zeros(self.n_users, dtype=np.int64)
        # chunks already served after waiting longer than each threshold
        self.served_late = np.zeros(len(self.delay_thresholds), dtype=np.int64)

    @property
    def backlog(self) -> np.ndarray:
        return self._backlog.copy()

    def advance(self, arrivals, served, slot: int) -> None:
        """Serve the oldest chunks, then append this slot's arrivals."""
        arrivals = np.asarray(arrivals, dtype=np.int64)
        served = np.asarray(served, dtype=np.int64)
        assert np.all(served <= self._backlog), "served more chunks than queued"
        assert np.all(served >= 0) and np.all(arrivals >= 0)
        for n in range(self.n_users):
            pending = self._pending[n]
            for _ in range(int(served[n])):
                wait = slot - pending.popleft()
                for i, threshold in enumerate(self.delay_thresholds):
                    if wait > threshold:
                        self.served_late[i] += 1
            pending.extend([slot] * int(arrivals[n]))
            assert len(pending) == self._backlog[n] - served[n] + arrivals[n]
        self._backlog += arrivals - served
        self.arrived += arrivals
        self.served += served

    def waiting_over_age(self, now: int) -> np.ndarray:
        """Per threshold, queued chunks that have already waited longer than it."""
        counts = np.zeros(len(self.delay_thresholds), dtype=np.int64)
        for pending in self._pending:
            for stamp in pending:
                age = now - stamp
                for i, threshold in enumerate(self.delay_thresholds):
                    if age > threshold:
                        counts[i] += 1
        return counts

    def failure_counts(self, now: int) -> np.ndarray:
        return self.served_late + self.waiting_over_age(now)

    def failure_rates(self, now: int) -> np.ndarray:
        total = max(1, int(self.arrived.sum()))
        return self.failure_counts(now) / total
