"""Training metrics CSV writer.

Header is fixed. The wall_ms column is written as 0 by default so a run's
outputs are a pure function of (config, seed); real timings go to the run
summary instead. Set ``record_wall_time`` to log measured milliseconds at
the cost of byte-reproducibility.
"""

from __future__ import annotations

from .errors import ArgumentError

HEADER = "step,loss_img,loss_rv,loss_inv,loss_ref,loss_col,return,success,wall_ms"


class MetricsWriter:
    def __init__(self, path, record_wall_time: bool = False):
        self.path = path
        self.record_wall_time = record_wall_time
        self._last_step = -1
        self._fh = open(path, "w")
        self._fh.write(HEADER + "\n")

    def write(
        self,
        step: int,
        loss_img: float = 0.0,
        loss_rv: float = 0.0,
        loss_inv: float = 0.0,
        loss_ref: float = 0.0,
        loss_col: float = 0.0,
        episode_return: float = 0.0,
        success: bool = False,
        wall_ms: float = 0.0,
    ):
        if step <= self._last_step:
            raise ArgumentError(
                f"metrics step must be strictly increasing ({step} after {self._last_step})"
            )
        self._last_step = step
        wall = int(wall_ms) if self.record_wall_time else 0
        row = (
            f"{step},{loss_img:.9g},{loss_rv:.9g},{loss_inv:.9g},{loss_ref:.9g},"
            f"{loss_col:.9g},{episode_return:.9g},{int(success)},{wall}"
        )
        self._fh.write(row + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path) -> dict[str, list[float]]:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        cols = {h: [] for h in header}
        for line in fh:
            parts = line.strip().split(",")
            for h, v in zip(header, parts):
                cols[h].append(float(v))
    return cols
