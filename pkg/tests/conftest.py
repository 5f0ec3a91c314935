from datetime import date, datetime, timedelta

import numpy as np
import pytest

from gaitprint.ingest import VmSecond


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_second(values, pid="p0", idx=0, day=date(2024, 3, 4)):
    return VmSecond(pid, idx, day, np.asarray(values, dtype=np.float64))


def recording_csv(pid, vm_rows, start=datetime(2024, 3, 4, 8, 0, 0), sample_rate=80):
    """Build an input CSV whose vector magnitude is vm per second.

    Each row gets x = vm, y = z = 0 so the magnitude survives exactly.
    `vm_rows` is an iterable of per-second values; each fills one second.
    """
    lines = ["participant_id,timestamp,x,y,z"]
    step = timedelta(microseconds=1_000_000 // sample_rate)
    t = start
    for vm in vm_rows:
        for _ in range(sample_rate):
            lines.append(f"{pid},{t.isoformat()},{vm:.6f},0.000000,0.000000")
            t += step
    return "\n".join(lines) + "\n"
