"""Run metrics: per-flow, per-transaction and per-interval records plus the
summary document. All output is derived purely from simulation state so two
runs of the same (config, seed) serialize byte-identically."""

import json
from pathlib import Path


def percentile(values, q):
    """Nearest-rank percentile; deterministic, no interpolation."""
    if not values:
        return 0.0
    ordered = sorted(values)
    rank = max(1, -(-len(ordered) * q // 100))  # ceil without floats
    return ordered[int(rank) - 1]


class MetricsReport:
    def __init__(self, scenario, strategy, tagging, seed):
        self.scenario = scenario
        self.strategy = strategy
        self.tagging = tagging
        self.seed = seed
        self.flows = []  # dicts, admission order
        self.transactions = []
        self.intervals = []
        self.created_events = 0  # scale-out creations observed by the sim
        self.created_by_dc = {}
        self.created_by_vnf = {}
        self.created_timeline = []  # (t_ms, dc, vnf)
        self.initial_instances = 0
        self.dropped_flows = 0
        self.stale_reports = 0
        self.stats_dropped = 0
        self.max_interval_skew = 0
        self.rounds_completed = 0
        self.suspension_ms = {}

    # -- collection hooks ---------------------------------------------------

    def record_creation(self, t_ms, dc, vnf_name, initial=False):
        if initial:
            self.initial_instances += 1
            return
        self.created_events += 1
        self.created_by_dc[dc] = self.created_by_dc.get(dc, 0) + 1
        self.created_by_vnf[vnf_name] = self.created_by_vnf.get(vnf_name, 0) + 1
        self.created_timeline.append((t_ms, dc, vnf_name))

    def record_flow(self, flow):
        self.flows.append(flow)
        if flow.get("dropped_at") is not None:
            self.dropped_flows += 1

    def observe_skew(self, skew):
        if skew > self.max_interval_skew:
            self.max_interval_skew = skew

    # -- derived views -------------------------------------------------------

    def measured_flows(self):
        """Flows with a defined loss figure (dropped, or with offered traffic)."""
        return [f for f in self.flows
                if f.get("dropped_at") is not None or f.get("offered", 0) > 0]

    def loss_rates(self):
        out = []
        for f in self.measured_flows():
            if f.get("dropped_at") is not None:
                out.append(100.0)
            else:
                out.append(100.0 * (1.0 - f["delivered"] / f["offered"]))
        return out

    def flows_with_total_loss(self):
        return sum(1 for rate in self.loss_rates() if rate >= 100.0 - 1e-9)

    def mean_loss_pct(self):
        rates = self.loss_rates()
        return sum(rates) / len(rates) if rates else 0.0

    def mean_rtt_ms(self):
        vals = [f["rtt_mean_ms"] for f in self.flows if f.get("rtt_mean_ms") is not None]
        return sum(vals) / len(vals) if vals else 0.0

    def cp_completion_ms(self):
        return [t["completion_ms"] for t in self.transactions]

    def summary(self):
        rates = self.loss_rates()
        cp = self.cp_completion_ms()
        return {
            "scenario": self.scenario,
            "strategy": self.strategy,
            "tagging": self.tagging,
            "seed": self.seed,
            "flows_total": len(self.flows),
            "flows_measured": len(self.measured_flows()),
            "flows_dropped_by_routing": self.dropped_flows,
            "flows_100pct_loss": self.flows_with_total_loss(),
            "dp_loss_pct_mean": round(self.mean_loss_pct(), 6),
            "dp_loss_pct_p99": round(percentile(rates, 99), 6),
            "rtt_ms_mean": round(self.mean_rtt_ms(), 6),
            "cp_transactions": len(self.transactions),
            "cp_completion_ms_mean": round(sum(cp) / len(cp), 6) if cp else 0.0,
            "cp_completion_ms_p95": round(percentile(cp, 95), 6),
            "instances_initial": self.initial_instances,
            "instances_created": self.created_events,
            "instances_created_by_dc": {str(k): v for k, v in sorted(self.created_by_dc.items())},
            "instances_created_by_vnf": dict(sorted(self.created_by_vnf.items())),
            "max_interval_skew": self.max_interval_skew,
            "rounds_completed": self.rounds_completed,
            "stale_reports_dropped": self.stale_reports,
            "reactive_suspension_ms": {str(k): v for k, v in sorted(self.suspension_ms.items())},
        }

    # -- serialization -------------------------------------------------------

    def to_bytes(self):
        """Canonical serialization of the full report."""
        doc = {
            "summary": self.summary(),
            "flows": self.flows,
            "transactions": self.transactions,
            "intervals": self.intervals,
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()

    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.json").write_text(
            json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
        with (out / "flows.jsonl").open("w") as fh:
            for flow in self.flows:
                fh.write(json.dumps(flow, sort_keys=True) + "\n")
        with (out / "transactions.jsonl").open("w") as fh:
            for tr in self.transactions:
                fh.write(json.dumps(tr, sort_keys=True) + "\n")
        with (out / "intervals.jsonl").open("w") as fh:
            for row in self.intervals:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        return out / "summary.json"
