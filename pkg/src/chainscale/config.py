"""Scenario configuration: schema, YAML loading and validation.

A scenario file fully determines a simulation run: topology and delays,
the VNF catalog and chain, scaling parameters, traffic sources, and the
simulator knobs. Validation returns a list of problems with field paths;
``load_scenario`` raises ``ConfigError`` when any are found.
"""

import importlib.resources
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError
from .provisioning import CP, DP, VnfType

STRATEGIES = ("proactive", "reactive", "hybrid")
PAIRINGS = ("fifo", "cross")
MAX_DP_STAGES = 3  # the hop code has one byte lane per stage plus the exit lane


@dataclass
class TrafficSource:
    dc: int
    start_s: float
    segments: list  # (duration_s, users_per_s)


@dataclass
class DelayChange:
    at_s: float
    pairs: list  # (i, j) datacenter index pairs, applied symmetrically
    delay_ms: float


@dataclass
class ScenarioConfig:
    name: str
    dc_names: list
    delay_ms: list
    locations: dict  # location key -> dc index
    scscf_dc: int
    global_dc: int
    catalog: dict  # name -> VnfType
    chain: list  # DP VnfTypes in stage order
    interval_s: int
    tau_intervals: int
    delay_threshold_ms: float
    forecast_window: int
    boot_delay_s: float
    strategy: str
    tagging: bool
    provisioning_mode: str  # managed | static
    call_duration_s: float
    flow_rate_pkt_s: float
    pairing: str
    sources: list
    initial_instances: dict  # dc index -> {vnf name: count}
    horizon_s: float
    seed: int
    controller_loss_rate: float
    step5_skew_ms: list
    cp_batch_s: int
    persistence_s: int
    processing_delay_ms: float
    overload_penalty_ms: float
    queue_penalty_ms: float
    delay_changes: list = field(default_factory=list)
    path_schedule: list | None = None  # list of {pair: path} tables, cycled per interval

    @property
    def n(self):
        return len(self.dc_names)

    def validate(self):
        """All cross-field invariants; returns problems with field paths."""
        errs = []
        n = self.n
        if n < 1:
            errs.append("topology.datacenters: at least one datacenter required")
        if len(self.delay_ms) != n or any(len(r) != n for r in self.delay_ms):
            errs.append(f"topology.delay_ms: must be {n}x{n}")
        else:
            for i in range(n):
                for j in range(n):
                    if self.delay_ms[i][j] < 0:
                        errs.append(f"topology.delay_ms[{i}][{j}]: negative delay")
        for key, dc in self.locations.items():
            if not 0 <= dc < n:
                errs.append(f"topology.locations[{key}]: unknown datacenter {dc}")
        if not 0 <= self.scscf_dc < n:
            errs.append(f"topology.scscf_dc: index {self.scscf_dc} out of range")
        if not 0 <= self.global_dc < n:
            errs.append(f"topology.global_dc: index {self.global_dc} out of range")

        if len(self.chain) > MAX_DP_STAGES:
            errs.append(
                f"chain: {len(self.chain)} stages exceed the hop-code cap of {MAX_DP_STAGES}")
        for pos, vnf in enumerate(self.chain, start=1):
            if vnf.stage != pos:
                errs.append(f"chain[{pos - 1}]: {vnf.name} declares stage {vnf.stage}")
            if vnf.kind != DP:
                errs.append(f"chain[{pos - 1}]: {vnf.name} is not a data-plane VNF")
        for role in ("pcscf", "scscf"):
            if role not in self.catalog:
                errs.append(f"catalog.{role}: missing control-plane VNF")
            elif self.catalog[role].kind != CP:
                errs.append(f"catalog.{role}: must have kind 'cp'")

        if self.interval_s < 1:
            errs.append("scaling.interval_s: must be at least 1")
        if self.cp_batch_s < 1 or self.interval_s % self.cp_batch_s:
            errs.append(
                f"sim.cp_batch_s: {self.cp_batch_s} must divide interval_s={self.interval_s}")
        if self.tau_intervals < 1:
            errs.append("scaling.tau_intervals: must be at least 1")
        if self.boot_delay_s <= 0:
            errs.append("scaling.boot_delay_s: must be positive")
        if self.strategy not in STRATEGIES:
            errs.append(f"scaling.strategy: {self.strategy!r} not in {STRATEGIES}")
        if self.provisioning_mode not in ("managed", "static"):
            errs.append(f"scaling.provisioning_mode: {self.provisioning_mode!r}")
        if self.pairing not in PAIRINGS:
            errs.append(f"traffic.pairing: {self.pairing!r} not in {PAIRINGS}")
        for s, src in enumerate(self.sources):
            if not 0 <= src.dc < n:
                errs.append(f"traffic.sources[{s}].dc: index out of range")
            for d, (dur, rate) in enumerate(src.segments):
                if dur <= 0:
                    errs.append(f"traffic.sources[{s}].segments[{d}]: non-positive duration")
                if rate < 0:
                    errs.append(f"traffic.sources[{s}].segments[{d}]: negative rate")
        for dc, counts in self.initial_instances.items():
            if not 0 <= dc < n:
                errs.append(f"initial_instances[{dc}]: unknown datacenter")
            for vnf in counts:
                if vnf not in self.catalog:
                    errs.append(f"initial_instances[{dc}].{vnf}: not in catalog")
        if len(self.step5_skew_ms) not in (0, n):
            errs.append("sim.step5_skew_ms: must list one value per datacenter")
        if not 0 <= self.controller_loss_rate < 1:
            errs.append("sim.controller_loss_rate: must be in [0, 1)")
        if self.horizon_s <= 0:
            errs.append("sim.horizon_s: must be positive")
        for c, change in enumerate(self.delay_changes):
            for i, j in change.pairs:
                if not (0 <= i < n and 0 <= j < n):
                    errs.append(f"events.delay_changes[{c}]: pair ({i}, {j}) out of range")
        if self.path_schedule is not None:
            m = len(self.chain)
            for t, table in enumerate(self.path_schedule):
                for pair, path in table.items():
                    if len(path) != m + 2:
                        errs.append(
                            f"path_schedule[{t}][{pair}]: length {len(path)}, need {m + 2}")
                    if any(not 0 <= dc < n for dc in path):
                        errs.append(f"path_schedule[{t}][{pair}]: datacenter out of range")
        return errs


def _ramp_segments(ramp):
    """Expand a ramp spec into (duration, rate) segments."""
    low, high, end = ramp["low"], ramp["high"], ramp.get("end", ramp["low"])
    step = ramp.get("step", 1)
    change = ramp["change_interval_s"]
    hold = ramp.get("peak_hold", 1)
    rates = []
    r = low
    while r < high:
        rates.append(r)
        r += step
    rates.extend([high] * hold)
    r = high - step
    while r >= end:
        rates.append(r)
        r -= step
    out = [(change, float(rate)) for rate in rates]
    lead = float(ramp.get("lead_s", 0))
    if lead > 0:
        out.insert(0, (lead, float(low)))
    sustain = float(ramp.get("sustain_s", 0))
    if sustain > 0:
        out.append((sustain, float(end)))
    return out


def _dc_index(name_or_idx, dc_names, where):
    if isinstance(name_or_idx, int):
        return name_or_idx
    try:
        return dc_names.index(name_or_idx)
    except ValueError:
        raise ConfigError([f"{where}: unknown datacenter {name_or_idx!r}"]) from None


def _parse_catalog(raw):
    catalog = {}
    for name, spec in raw.items():
        catalog[name] = VnfType(
            name=name,
            kind=spec["kind"],
            capacity=float(spec["capacity"]),
            cpu_threshold=float(spec.get("cpu_threshold", 90)),
            mem_threshold=float(spec.get("mem_threshold", 50)),
            pkt_threshold=float(spec.get("pkt_threshold", spec["capacity"])),
            stage=int(spec.get("stage", 0)),
            packets_per_unit=float(spec.get("packets_per_unit", 1)),
        )
    return catalog


def _parse_pair_key(key):
    e, x = key.split("->")
    return int(e), int(x)


def parse_scenario(doc):
    """Build a ScenarioConfig from a parsed YAML document."""
    topo = doc["topology"]
    dc_names = list(topo["datacenters"])
    locations = {}
    for key, dc in topo.get("locations", {name: name for name in dc_names}).items():
        locations[key] = _dc_index(dc, dc_names, f"topology.locations[{key}]")

    catalog = _parse_catalog(doc["catalog"])
    chain = [catalog[name] for name in doc["chain"]]

    scaling = doc.get("scaling", {})
    traffic = doc.get("traffic", {})
    sim = doc.get("sim", {})
    events = doc.get("events", {})

    sources = []
    for s, src in enumerate(traffic.get("sources", [])):
        dc = _dc_index(src["dc"], dc_names, f"traffic.sources[{s}].dc")
        if "ramp" in src:
            segments = _ramp_segments(src["ramp"])
        else:
            segments = [(float(d), float(r)) for d, r in src["rates"]]
        sources.append(TrafficSource(dc, float(src.get("start_s", 0)), segments))

    init_raw = doc.get("initial_instances", {})
    initial = {dc: {} for dc in range(len(dc_names))}
    if "per_dc" in init_raw:
        for dc_key, counts in init_raw["per_dc"].items():
            dc = _dc_index(dc_key if not str(dc_key).isdigit() else int(dc_key),
                           dc_names, f"initial_instances.per_dc[{dc_key}]")
            initial[dc] = {k: int(v) for k, v in counts.items()}
    else:
        per_stage = int(init_raw.get("dp_per_stage_per_dc", 1))
        pcscf = int(init_raw.get("pcscf_per_dc", 1))
        scscf = int(init_raw.get("scscf", 1))
        scscf_dc = _dc_index(topo.get("scscf_dc", 0), dc_names, "topology.scscf_dc")
        for dc in range(len(dc_names)):
            initial[dc] = {vnf.name: per_stage for vnf in chain}
            initial[dc]["pcscf"] = pcscf
            if dc == scscf_dc:
                initial[dc]["scscf"] = scscf

    schedule = None
    if "path_schedule" in doc:
        schedule = []
        for table in doc["path_schedule"]["tables"]:
            schedule.append({_parse_pair_key(k): tuple(v) for k, v in table.items()})

    changes = []
    for change in events.get("delay_changes", []):
        changes.append(DelayChange(
            at_s=float(change["at_s"]),
            pairs=[tuple(p) for p in change["pairs"]],
            delay_ms=float(change["delay_ms"]),
        ))

    scscf_dc = _dc_index(topo.get("scscf_dc", 0), dc_names, "topology.scscf_dc")
    return ScenarioConfig(
        name=doc.get("name", "scenario"),
        dc_names=dc_names,
        delay_ms=[[float(v) for v in row] for row in topo["delay_ms"]],
        locations=locations,
        scscf_dc=scscf_dc,
        global_dc=_dc_index(topo.get("global_dc", topo.get("scscf_dc", 0)),
                            dc_names, "topology.global_dc"),
        catalog=catalog,
        chain=chain,
        interval_s=int(scaling.get("interval_s", 50)),
        tau_intervals=int(scaling.get("tau_intervals", 10)),
        delay_threshold_ms=float(scaling.get("delay_threshold_ms", 250)),
        forecast_window=int(scaling.get("forecast_window", 10)),
        boot_delay_s=float(scaling.get("boot_delay_s", 20)),
        strategy=scaling.get("strategy", "hybrid"),
        tagging=bool(scaling.get("tagging", True)),
        provisioning_mode=scaling.get("provisioning_mode", "managed"),
        call_duration_s=float(traffic.get("call_duration_s", 60)),
        flow_rate_pkt_s=float(traffic.get("flow_rate_pkt_s", 50)),
        pairing=traffic.get("pairing", "fifo"),
        sources=sources,
        initial_instances=initial,
        horizon_s=float(sim.get("horizon_s", 300)),
        seed=int(sim.get("seed", 1)),
        controller_loss_rate=float(sim.get("controller_loss_rate", 0)),
        step5_skew_ms=[float(v) for v in sim.get("step5_skew_ms", [])],
        cp_batch_s=int(sim.get("cp_batch_s", 5)),
        persistence_s=int(sim.get("persistence_s", 5)),
        processing_delay_ms=float(sim.get("processing_delay_ms", 1)),
        overload_penalty_ms=float(sim.get("overload_penalty_ms", 10)),
        queue_penalty_ms=float(sim.get("queue_penalty_ms", 100)),
        delay_changes=changes,
        path_schedule=schedule,
    )


def bundled_scenarios():
    root = importlib.resources.files("chainscale") / "scenarios"
    return sorted(p.name[:-len(".yaml")] for p in root.iterdir()
                  if p.name.endswith(".yaml"))


def load_scenario(path_or_name, overrides=None):
    """Load and validate a scenario from a file path or bundled name."""
    p = Path(path_or_name)
    if p.suffix in (".yaml", ".yml") or p.exists():
        if not p.exists():
            raise ConfigError([f"config file not found: {path_or_name}"])
        text = p.read_text()
    else:
        res = importlib.resources.files("chainscale") / "scenarios" / f"{path_or_name}.yaml"
        if not res.is_file():
            raise ConfigError(
                [f"no such file or bundled scenario: {path_or_name} "
                 f"(bundled: {', '.join(bundled_scenarios())})"])
        text = res.read_text()
    doc = yaml.safe_load(text)
    if overrides:
        for dotted, value in overrides.items():
            apply_override(doc, dotted, value)
    cfg = parse_scenario(doc)
    problems = cfg.validate()
    if problems:
        raise ConfigError(problems)
    return cfg


def apply_override(doc, dotted, value):
    """Set a dotted path like ``scaling.interval_s`` in a raw document."""
    keys = dotted.split(".")
    node = doc
    for key in keys[:-1]:
        if isinstance(node, list):
            node = node[int(key)]
        else:
            node = node.setdefault(key, {})
    last = keys[-1]
    if isinstance(node, list):
        node[int(last)] = value
    else:
        node[last] = value
