"""Stand-alone event simulation of the speculated stat loop.

Shares no code with the package. Model: ``n`` independent stats of
``service`` µs each on ``channels`` FIFO channels. At intercept ``k`` the
application submits every not-yet-issued stat among ``k+1 .. k+depth`` and,
if stat ``k`` itself was never issued, queues it behind that batch. It then
waits for stat ``k`` to finish before the next intercept.

Run as a script to print the golden makespans frozen in the tests.
"""

from __future__ import annotations

import heapq


def stat_loop_makespan(n: int, depth: int, channels: int = 16, service: float = 100.0) -> float:
    free = [0.0] * channels  # time each channel becomes free
    heapq.heapify(free)
    done: dict[int, float] = {}

    def issue(i: int, at: float) -> None:
        start = max(at, heapq.heappop(free))
        done[i] = start + service
        heapq.heappush(free, done[i])

    now = 0.0
    for k in range(n):
        for j in range(k + 1, min(k + depth, n - 1) + 1):
            if j not in done:
                issue(j, now)
        if k not in done:
            issue(k, now)
        now = max(now, done[k])
    return now


if __name__ == "__main__":
    for depth in (0, 1, 2, 4, 8, 16):
        print(depth, stat_loop_makespan(1000, depth))
