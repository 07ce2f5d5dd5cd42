"""Runtime statistics ingestion and persistent-overload classification.

An instance is flagged overloaded only when at least two of its metrics
(CPU, memory, input packet rate) stayed above their thresholds for a full
run of consecutive samples; this filters single-metric and transient
spikes. Recovery is symmetric: all metrics must stay at or below their
thresholds for the same persistence length before the instance returns to
normal, which keeps the state from flapping.
"""

from collections import deque
from dataclasses import dataclass

NORMAL = "normal"
OVERLOAD = "overload"


@dataclass(frozen=True)
class StatsSample:
    cpu: float  # percent
    mem: float  # percent
    pkt_rate: float  # input pkt/s
    t_s: int


class HealthTracker:
    """Per-instance metric window and overload state."""

    def __init__(self, window=16):
        self.samples = deque(maxlen=window)
        self.state = NORMAL
        self.dropped = 0
        self._last_t = None

    def record(self, sample):
        """Append a sample; out-of-order timestamps are dropped and counted."""
        if self._last_t is not None and sample.t_s <= self._last_t:
            self.dropped += 1
            return False
        self._last_t = sample.t_s
        self.samples.append(sample)
        return True

    def classify(self, vnf, persistence=5):
        """Update and return the instance state from the last samples."""
        if len(self.samples) >= persistence:
            recent = list(self.samples)[-persistence:]
            exceed = {
                "cpu": all(s.cpu > vnf.cpu_threshold for s in recent),
                "mem": all(s.mem > vnf.mem_threshold for s in recent),
                "pkt": all(s.pkt_rate > vnf.pkt_threshold for s in recent),
            }
            if sum(exceed.values()) >= 2:
                self.state = OVERLOAD
            elif self.state == OVERLOAD:
                calm = all(
                    s.cpu <= vnf.cpu_threshold
                    and s.mem <= vnf.mem_threshold
                    and s.pkt_rate <= vnf.pkt_threshold
                    for s in recent)
                if calm:
                    self.state = NORMAL
        return self.state


def reactive_decision(states, suspended=False):
    """Scale-out count (0 or 1) for one VNF type in one datacenter.

    Fires only when strictly more than half of the working instances are
    overloaded, and never while a proactive round holds the local controller
    suspended. Reactive scaling never removes instances.
    """
    if suspended or not states:
        return 0
    overloaded = sum(1 for s in states if s == OVERLOAD)
    return 1 if overloaded * 2 > len(states) else 0
