"""Deterministic discrete-event simulator.

One seeded RNG, one event heap ordered by (time, insertion sequence);
identical (config, seed) runs produce identical reports byte for byte.

Traffic model: Poisson user arrivals per datacenter on a piecewise-constant
rate schedule. A global coordinator pairs users first-come-first-match;
each pair runs a call: REGISTER transactions for both parties, an INVITE,
then a bidirectional fluid media flow (fixed pkt/s for the call duration),
closed by a BYE. Control-plane transactions load P-CSCF/S-CSCF instances;
media flows load the data-plane chain instances along their service chain
paths.

Fluid model: once per simulated second every active flow offers its rate
to its chain instances stage by stage; an oversubscribed instance drops the
excess proportionally across flows and the remainder continues downstream.
Flow RTT is twice the one-way path delay plus per-hop processing, plus a
penalty per saturated hop.
"""

import heapq
import itertools
import random

from . import routing
from .errors import SkewError
from .metrics import MetricsReport
from .orchestration import GlobalController, LocalController, make_report
from .planner import all_at
from .provisioning import CP, DESTROYED, Inventory
from .reactive import HealthTracker, StatsSample, reactive_decision
from .routing import PathTriple, SessionTable
from .topology import DelayMatrix, entry_datacenter, path_delay

MS = 1000


class SimBus:
    """Controller transport over the event heap: delay-matrix latency,
    Bernoulli loss, and configurable extra skew on step-5 deliveries."""

    def __init__(self, sim):
        self.sim = sim
        self.endpoints = {}

    def register(self, endpoint, dc):
        self.endpoints[endpoint.name] = (endpoint, dc)

    def send(self, src, dst, msg):
        sim = self.sim
        if sim.loss_rate and sim.rng.random() < sim.loss_rate:
            return
        src_dc = self.endpoints[src][1]
        endpoint, dst_dc = self.endpoints[dst]
        delay = sim.delays.get(src_dc, dst_dc)
        if msg.kind == "enter-new-interval" and sim.step5_skew_ms:
            delay += sim.step5_skew_ms[dst_dc]
        sim.at(delay, lambda: endpoint.deliver(msg))
        if sim.protocol_trace is not None:
            sim.protocol_trace.append(
                {"t_ms": sim.now, "src": src, "dst": dst, "msg": msg.to_dict()})

    def schedule(self, delay_ms, fn):
        self.sim.at(delay_ms, fn)

    def now_ms(self):
        return self.sim.now


class User:
    __slots__ = ("uid", "dc", "location", "ip", "send_port", "recv_port")

    def __init__(self, uid, dc, location):
        self.uid = uid
        self.dc = dc
        self.location = location
        self.ip = f"ip:u{uid}"
        self.send_port = 10000 + 2 * uid
        self.recv_port = 10001 + 2 * uid


class Flow:
    __slots__ = ("fid", "src", "dst", "pair", "rate", "admitted_ms", "tag",
                 "hop_code", "pinned", "dcs", "active", "resolved_ms",
                 "dropped_at", "drop_reason", "offered", "delivered",
                 "rtt_sum", "rtt_ticks", "tick_rate", "end_ms", "finished")

    def __init__(self, fid, src, dst, pair, rate, admitted_ms, tag):
        self.fid = fid
        self.src = src
        self.dst = dst
        self.pair = pair
        self.rate = rate
        self.admitted_ms = admitted_ms
        self.tag = tag
        self.hop_code = 0
        self.pinned = []  # (stage, instance) in chain order
        self.dcs = [pair[0]]  # realized datacenter sequence
        self.active = False
        self.resolved_ms = None
        self.dropped_at = None
        self.drop_reason = None
        self.offered = 0.0
        self.delivered = 0.0
        self.rtt_sum = 0.0
        self.rtt_ticks = 0
        self.tick_rate = 0.0
        self.end_ms = None
        self.finished = False


class Simulator:
    def __init__(self, config, seed=None, trace_protocol=False):
        self.cfg = config
        self.seed = config.seed if seed is None else seed
        self.rng = random.Random(self.seed)
        self.now = 0
        self._heap = []
        self._seq = itertools.count()
        self.delays = DelayMatrix(config.delay_ms)
        self.loss_rate = config.controller_loss_rate
        self.step5_skew_ms = config.step5_skew_ms
        self.protocol_trace = [] if trace_protocol else None
        self.report = MetricsReport(config.name, config.strategy, config.tagging,
                                    self.seed)
        self._build()

    # -- event plumbing ------------------------------------------------------

    def at(self, delay_ms, fn):
        heapq.heappush(self._heap, (self.now + int(round(delay_ms)), next(self._seq), fn))

    def run(self):
        horizon = int(self.cfg.horizon_s * MS)
        while self._heap and self._heap[0][0] <= horizon:
            self.now, _, fn = heapq.heappop(self._heap)
            fn()
        self.now = horizon
        self._finalize()
        return self.report

    # -- construction ----------------------------------------------------------

    def _build(self):
        cfg = self.cfg
        n = cfg.n
        boot_ms = int(cfg.boot_delay_s * MS)
        self.bus = SimBus(self)
        self.chain = cfg.chain
        self.m = len(cfg.chain)
        init_paths = {(e, x): all_at(e, self.m, x) for e in range(n) for x in range(n)}

        self.inventories = []
        self.locals = []
        self._bootstrapping = True
        for dc in range(n):
            inv = Inventory(dc, n, cfg.catalog, boot_delay_ms=boot_ms,
                            on_create=self._on_instance_created)
            self.inventories.append(inv)
            lc = LocalController(dc, self.bus, inv, PathTriple(init_paths),
                                 tau=cfg.tau_intervals, catalog=cfg.catalog,
                                 on_enter_interval=self._on_enter_interval)
            self.bus.register(lc, dc)
            self.locals.append(lc)

        schedule = None
        if cfg.path_schedule is not None:
            tables = cfg.path_schedule

            def schedule(interval):
                return tables[interval % len(tables)]

        self.global_ctrl = GlobalController(
            self.bus, n, cfg.chain, cfg.catalog, cfg.scscf_dc,
            cfg.delay_threshold_ms, window=cfg.forecast_window,
            path_schedule=schedule,
            static_provisioning=cfg.provisioning_mode == "static",
            on_round_complete=self._on_round_complete)
        self.global_ctrl.seed_paths(init_paths)
        self.bus.register(self.global_ctrl, cfg.global_dc)

        for dc, counts in sorted(cfg.initial_instances.items()):
            for vnf_name, count in sorted(counts.items()):
                if count > 0:
                    insts = self.inventories[dc].scale_out(vnf_name, count, now_ms=0)
                    for inst in insts:
                        inst.boot_done_ms = 0  # pre-provisioned, already up
        self._bootstrapping = False
        self._created_baseline = [len(inv.created_log) for inv in self.inventories]

        self.sessions = [SessionTable() for _ in range(n)]
        self.health = {}
        self.users = {}
        self._uid = itertools.count()
        self._fid = itertools.count()
        self._wait_fifo = []
        self._wait_by_dc = [[] for _ in range(n)]
        self.active_flows = {}
        self.dp_nominal = {}  # (entry, exit) -> pkt/s currently admitted
        self.cp_counts = {}  # (entry, exit) -> transactions this batch
        self._cp_second = {}  # instance -> transactions this second
        self._cp_prev = {}  # same, previous second (drives queue penalties)
        self._dp_offered = {}  # instance -> offered pkt/s this tick
        self._report_seq = itertools.count(1)
        self._scscf_view = []

        for src in cfg.sources:
            self._schedule_source(src)
        for change in cfg.delay_changes:
            self.at(change.at_s * MS - self.now, self._make_delay_change(change))
        self.at(MS, self._tick)
        self.at(30 * MS, self._refresh_scscf_view)
        if cfg.strategy in ("hybrid", "proactive"):
            self.at(cfg.interval_s * MS, self._interval_boundary)

    def _make_delay_change(self, change):
        def apply():
            for i, j in change.pairs:
                self.delays.set(i, j, change.delay_ms)
                self.delays.set(j, i, change.delay_ms)
        return apply

    def _on_instance_created(self, dc, vnf_name, t_ms):
        self.report.record_creation(t_ms, dc, vnf_name, initial=self._bootstrapping)

    # -- controller hooks ------------------------------------------------------

    def _on_enter_interval(self, dc, interval):
        vals = [lc.interval for lc in self.locals] + [self.global_ctrl.interval]
        self.report.observe_skew(max(vals) - min(vals))
        for inv in self.inventories:
            inv.reap_drained()

    def _on_round_complete(self, interval):
        self.report.rounds_completed += 1
        self.report.intervals.append({
            "interval": interval,
            "t_ms": self.now,
            "paths": {f"{e}->{x}": list(p)
                      for (e, x), p in sorted(self.global_ctrl.current_paths.items())},
        })

    def _interval_boundary(self):
        if not self.global_ctrl.start_round():
            self.at(MS, self._interval_boundary)  # previous round still active
            return
        self.at(self.cfg.interval_s * MS, self._interval_boundary)

    # -- traffic ---------------------------------------------------------------

    def _schedule_source(self, src):
        start_ms = src.start_s * MS
        t = 0.0
        for duration_s, rate in src.segments:
            if rate > 0:
                self._schedule_arrivals(src.dc, start_ms + t * MS,
                                        start_ms + (t + duration_s) * MS, rate)
            t += duration_s

    def _schedule_arrivals(self, dc, from_ms, to_ms, rate):
        # Draw the whole segment's Poisson process up front; events beyond
        # the horizon fall off the heap bound naturally.
        t = from_ms
        while True:
            t += self.rng.expovariate(rate) * MS
            if t >= to_ms:
                break
            at_ms = t
            self.at(at_ms - self.now, lambda dc=dc: self._user_arrival(dc))

    def _user_arrival(self, dc):
        location = self.cfg.dc_names[dc]
        user = User(next(self._uid), dc, location)
        self.users[user.ip] = user
        mate = self._match(user)
        if mate is not None:
            self._start_call(mate, user)

    def _match(self, user):
        if self.cfg.pairing == "fifo":
            if self._wait_fifo:
                return self._wait_fifo.pop(0)
            self._wait_fifo.append(user)
            return None
        # cross: earliest waiting user from any other datacenter
        best = None
        for dc, queue in enumerate(self._wait_by_dc):
            if dc != user.dc and queue and (best is None or queue[0].uid < best.uid):
                best = queue[0]
        if best is not None:
            self._wait_by_dc[best.dc].pop(0)
            return best
        self._wait_by_dc[user.dc].append(user)
        return None

    def _locate(self, ip):
        return entry_datacenter(self.users[ip].location, self.cfg.locations)

    # -- control plane -----------------------------------------------------------

    def _cp_select(self, vnf_name, dc):
        if vnf_name == "scscf" and self._scscf_view:
            candidates = [i for i in self._scscf_view if i.state == "working"]
            if candidates:
                return routing.select_instance(candidates, self._health_state)
        inv = self.inventories[dc]
        ready = inv.ready_instances(vnf_name, self.now)
        pool = ready or inv.working(vnf_name)
        if not pool:
            return None
        return routing.select_instance(pool, self._health_state)

    def _refresh_scscf_view(self):
        inv = self.inventories[self.cfg.scscf_dc]
        self._scscf_view = inv.ready_instances("scscf", self.now)
        self.at(30 * MS, self._refresh_scscf_view)

    def _transaction(self, kind, from_dc, to_dc, pair):
        """Run one SIP transaction through the CP chain; returns completion ms."""
        home = self.cfg.scscf_dc
        legs = [("pcscf", from_dc), ("scscf", home)]
        if kind in ("invite", "bye"):
            legs.append(("pcscf", to_dc))
        completion = 0.0
        for vnf_name, dc in legs:
            inst = self._cp_select(vnf_name, dc)
            if inst is None:
                continue
            count = self._cp_second.get(inst, 0) + 1
            self._cp_second[inst] = count
            inst.nominal_load = float(count)  # this second's transactions
            # Queueing penalty grows linearly once the instance ran hot in
            # the previous second (known, hence order-independent).
            rho = self._cp_prev.get(inst, 0) / inst.vnf.capacity
            completion += self.cfg.queue_penalty_ms * max(0.0, rho - 1.0)
            completion += self.cfg.processing_delay_ms
        completion += 2 * (self.delays.get(from_dc, home)
                           + (self.delays.get(home, to_dc) if kind in ("invite", "bye") else 0))
        self.cp_counts[pair] = self.cp_counts.get(pair, 0) + 1
        self.report.transactions.append({
            "kind": kind, "pair": f"{pair[0]}->{pair[1]}", "t_ms": self.now,
            "completion_ms": round(completion, 3),
        })
        return completion

    def _start_call(self, caller, callee):
        t_reg = max(
            self._transaction("register", caller.dc, caller.dc, (caller.dc, caller.dc)),
            self._transaction("register", callee.dc, callee.dc, (callee.dc, callee.dc)))
        self.at(t_reg + 10, lambda: self._invite(caller, callee))

    def _invite(self, caller, callee):
        t_inv = self._transaction("invite", caller.dc, callee.dc, (caller.dc, callee.dc))
        self.at(t_inv + 10, lambda: self._call_established(caller, callee))

    def _call_established(self, caller, callee):
        session = routing.CallSession(
            caller_id=f"u{caller.uid}", caller_ip=caller.ip,
            caller_send_port=caller.send_port, caller_recv_port=caller.recv_port,
            caller_entry=caller.dc,
            callee_id=f"u{callee.uid}", callee_ip=callee.ip,
            callee_send_port=callee.send_port, callee_recv_port=callee.recv_port,
            callee_entry=callee.dc)
        routing.register_call(session, self.sessions[caller.dc], self.sessions[callee.dc],
                              f"dcip:{caller.dc}", f"dcip:{callee.dc}")
        self._admit_flow(caller, callee)
        self._admit_flow(callee, caller)
        duration = self.cfg.call_duration_s * MS
        self.at(duration + 20, lambda: self._bye(caller, callee))

    def _bye(self, caller, callee):
        self._transaction("bye", caller.dc, callee.dc, (caller.dc, callee.dc))

    # -- data plane ---------------------------------------------------------------

    def _health_state(self, inst):
        tracker = self.health.get(inst)
        return tracker.state if tracker is not None else "normal"

    def _admit_flow(self, src_user, dst_user):
        entry = src_user.dc
        local = self.locals[entry]
        dst_ip = self.sessions[entry].forward.get((src_user.ip, src_user.send_port))
        if dst_ip is None:
            return
        exit_dc = self._locate(dst_ip)
        pair = (entry, exit_dc)
        tag = routing.encode_tag(entry, exit_dc, local.interval) if self.cfg.tagging else None
        flow = Flow(next(self._fid), src_user, dst_user, pair,
                    self.cfg.flow_rate_pkt_s, self.now, tag)
        # Workload is measured at the entry switch: the sender keeps
        # transmitting for the call duration whether or not the chain
        # delivers, so the offered rate counts from admission.
        self.dp_nominal[pair] = self.dp_nominal.get(pair, 0.0) + flow.rate
        self.at(self.cfg.call_duration_s * MS, lambda: self._decay_offered(pair, flow.rate))
        path = local.paths.current[pair]
        self._visit(flow, entry, path)

    def _decay_offered(self, pair, rate):
        self.dp_nominal[pair] -= rate

    def _visit(self, flow, dc, path):
        decision = routing.route_flow(dc, path, self.inventories[dc], self.chain,
                                      self.now, flow.hop_code, self._health_state)
        if decision.dropped:
            flow.dropped_at = dc
            flow.drop_reason = decision.reason
            self._finish_flow(flow)
            return
        flow.hop_code = decision.hop_code
        for stage, inst in decision.stages:
            flow.pinned.append((stage, inst))
            inst.nominal_load += flow.rate
        if decision.next_dc is None:
            self._flow_resolved(flow, dc)
        else:
            flow.dcs.append(decision.next_dc)
            hop_delay = self.delays.get(dc, decision.next_dc)
            self.at(hop_delay, lambda: self._arrive(flow, decision.next_dc))

    def _arrive(self, flow, dc):
        local = self.locals[dc]
        if self.cfg.tagging:
            entry, exit_dc, mod4 = routing.decode_tag(flow.tag)
            try:
                table = routing.select_path_set(local.paths, local.interval, mod4)
            except SkewError:
                flow.dropped_at = dc
                flow.drop_reason = "interval skew beyond protocol bound"
                self._finish_flow(flow)
                return
            path = table[(entry, exit_dc)]
        else:
            path = local.paths.current[flow.pair]
        self._visit(flow, dc, path)

    def _flow_resolved(self, flow, exit_dc):
        exit_map = self.sessions[exit_dc].exit.get((flow.src.ip, flow.src.send_port))
        flow.resolved_ms = self.now
        flow.active = True
        self.active_flows[flow.fid] = flow
        end_delay = self.cfg.call_duration_s * MS
        self.at(end_delay, lambda: self._end_flow(flow))
        flow.end_ms = self.now + end_delay
        if exit_map is None:
            flow.drop_reason = "exit translation missing"

    def _end_flow(self, flow):
        if flow.finished:
            return
        flow.active = False
        self.active_flows.pop(flow.fid, None)
        self._finish_flow(flow)

    def _finish_flow(self, flow):
        if flow.finished:
            return
        flow.finished = True
        for _, inst in flow.pinned:
            inst.nominal_load = max(0.0, inst.nominal_load - flow.rate)
        rtt = None
        if flow.rtt_ticks:
            rtt = round(flow.rtt_sum / flow.rtt_ticks, 3)
        self.report.record_flow({
            "flow": flow.fid,
            "pair": f"{flow.pair[0]}->{flow.pair[1]}",
            "admitted_ms": flow.admitted_ms,
            "dcs": flow.dcs,
            "dropped_at": flow.dropped_at,
            "reason": flow.drop_reason,
            "offered": round(flow.offered, 3),
            "delivered": round(flow.delivered, 3),
            "rtt_mean_ms": rtt,
        })

    # -- the per-second tick ---------------------------------------------------

    def _tick(self):
        self._media_tick()
        self._stats_tick()
        self._report_tick()
        self.at(MS, self._tick)

    def _media_tick(self):
        flows = list(self.active_flows.values())
        for flow in flows:
            flow.tick_rate = flow.rate
        self._dp_offered = {}
        offered = self._dp_offered
        # Stage by stage: accumulate, derive the per-instance pass factor,
        # thin each flow before it reaches the next stage.
        per_stage = [[] for _ in range(self.m + 1)]
        for flow in flows:
            for stage, inst in flow.pinned:
                per_stage[stage].append((flow, inst))
        factors = {}
        for stage in range(1, self.m + 1):
            acc = {}
            for flow, inst in per_stage[stage]:
                acc[inst] = acc.get(inst, 0.0) + flow.tick_rate
            for inst, load in acc.items():
                offered[inst] = load
                # Buffered/draining instances are running VMs: they keep
                # serving flows pinned to them, they just take no new ones.
                # Only instances still booting contribute nothing.
                serving = inst.state != DESTROYED and self.now >= inst.boot_done_ms
                cap = inst.vnf.capacity if serving else 0.0
                factors[inst] = 1.0 if load <= cap else (cap / load if load else 1.0)
            for flow, inst in per_stage[stage]:
                flow.tick_rate *= factors[inst]

        for flow in flows:
            flow.offered += flow.rate
            flow.delivered += flow.tick_rate
            base = 2 * path_delay(tuple(flow.dcs), self.delays)
            base += 2 * len(flow.pinned) * self.cfg.processing_delay_ms
            penalty = sum(self.cfg.overload_penalty_ms
                          for _, inst in flow.pinned if factors.get(inst, 1.0) < 1.0)
            flow.rtt_sum += base + penalty
            flow.rtt_ticks += 1

    def _stats_tick(self):
        t_s = self.now // MS
        persistence = self.cfg.persistence_s
        for dc, inv in enumerate(self.inventories):
            suspended = self.locals[dc].reactive_suspended
            for vnf_name in sorted(inv.catalog):
                vnf = inv.catalog[vnf_name]
                states = []
                any_booting = False
                for inst in inv.working(vnf_name):
                    if not inst.ready(self.now):
                        any_booting = True
                        continue
                    if vnf.kind == CP:
                        load = float(self._cp_second.get(inst, 0))
                        inst.nominal_load = 0.0  # per-second counter resets
                    else:
                        load = self._dp_offered.get(inst, 0.0)
                    util = load / vnf.capacity
                    sample = StatsSample(
                        cpu=min(100.0, 100.0 * util),
                        mem=min(100.0, 25.0 + 15.0 * min(1.0, util)),
                        pkt_rate=load * vnf.packets_per_unit,
                        t_s=t_s)
                    tracker = self.health.get(inst)
                    if tracker is None:
                        tracker = self.health[inst] = HealthTracker(
                            window=max(16, persistence + 1))
                    tracker.record(sample)
                    states.append(tracker.classify(vnf, persistence))
                if self.cfg.strategy in ("hybrid", "reactive") and not any_booting:
                    if reactive_decision(states, suspended):
                        inv.scale_out(vnf_name, 1, self.now)
        self._cp_prev = self._cp_second
        self._cp_second = {}

    def _report_tick(self):
        n = self.cfg.n
        t_s = self.now // MS
        for dc in range(n):
            lc = self.locals[dc]
            dp_cells = [[(dc, x), self.dp_nominal.get((dc, x), 0.0)] for x in range(n)]
            self._send_report(lc, "dp", dp_cells)
            delay_cells = [[(dc, j), self.delays.get(dc, j)] for j in range(n) if j != dc]
            self._send_report(lc, "delay", delay_cells)
        if t_s % self.cfg.cp_batch_s == 0:
            home = self.locals[self.cfg.scscf_dc]
            cells = [[(e, x), count / self.cfg.cp_batch_s]
                     for (e, x), count in sorted(self.cp_counts.items())]
            if cells:
                self._send_report(home, "cp", cells)
            self.cp_counts = {}

    def _send_report(self, lc, metric, cells):
        msg = make_report(lc.name, lc.interval, metric, cells, next(self._report_seq))
        self.bus.send(lc.name, "global", msg)

    # -- wrap-up -----------------------------------------------------------------

    def _finalize(self):
        for flow in list(self.active_flows.values()):
            self._end_flow(flow)
        created = sum(len(inv.created_log) - base
                      for inv, base in zip(self.inventories, self._created_baseline))
        assert created == self.report.created_events, \
            f"creation ledger mismatch: {created} vs {self.report.created_events}"
        self.report.stale_reports = self.global_ctrl.stale_reports_dropped
        for lc in self.locals:
            self.report.suspension_ms[lc.dc] = lc.suspension_total_ms


def run_scenario(config, seed=None, trace_protocol=False):
    """Run one scenario to its horizon and return the metrics report."""
    sim = Simulator(config, seed=seed, trace_protocol=trace_protocol)
    return sim.run()
