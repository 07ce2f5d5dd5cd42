"""Global/local controller state machines and the proactive round protocol.

One round per scaling interval, in five steps:

1. close the per-pair report accumulators and predict next-interval
   workloads and delays;
2. broadcast a provision request; each local controller suspends reactive
   scaling and answers with its working-instance counts;
3. size the control-plane pools and run the data-plane planning pass;
4. broadcast the decisions; locals apply provisioning immediately but only
   stash the new path tables for the next interval, then acknowledge;
5. broadcast "enter new scaling interval"; locals promote their path
   triples, bump their interval, evict expired buffered instances, resume
   reactive scaling and send a final acknowledgement. The global interval
   advances once every acknowledgement is in.

Transport is unreliable: every request is retransmitted until its response
arrives (500 ms timer), and receivers de-duplicate by message id, replaying
the cached response without re-applying side effects.

Message payloads are plain key-value dictionaries (versioned, see
``ControllerMsg.to_dict``) so protocol traces can be dumped and replayed.
"""

from dataclasses import dataclass, field

from .forecast import MatrixForecaster
from .planner import all_at, plan_dp, size_cp
from .topology import DelayMatrix

RETRANSMIT_MS = 500

# Message kinds
WORKLOAD_REPORT = "workload-report"
PROVISION_REQUEST = "provision-request"
PROVISION_RESPONSE = "provision-response"
DECISION_BROADCAST = "decision-broadcast"
DECISION_COMPLETE = "decision-complete"
ENTER_INTERVAL = "enter-new-interval"
INTERVAL_ACK = "interval-ack"

RESPONSE_KIND = {
    PROVISION_REQUEST: PROVISION_RESPONSE,
    DECISION_BROADCAST: DECISION_COMPLETE,
    ENTER_INTERVAL: INTERVAL_ACK,
}

WIRE_VERSION = 1


@dataclass
class ControllerMsg:
    kind: str
    sender: str
    msg_id: int
    interval: int
    payload: dict = field(default_factory=dict)
    reply_to: int | None = None

    def to_dict(self):
        return {
            "v": WIRE_VERSION,
            "kind": self.kind,
            "sender": self.sender,
            "msg_id": self.msg_id,
            "interval": self.interval,
            "payload": self.payload,
            "reply_to": self.reply_to,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("v") != WIRE_VERSION:
            raise ValueError(f"unsupported message version {d.get('v')!r}")
        return cls(d["kind"], d["sender"], d["msg_id"], d["interval"],
                   d.get("payload", {}), d.get("reply_to"))


class Bus:
    """Transport interface the controllers run on.

    The simulator provides delaying/lossy delivery; tests may substitute an
    immediate in-memory bus. ``schedule`` must deliver the callback on the
    single event thread.
    """

    def send(self, src, dst, msg):
        raise NotImplementedError

    def schedule(self, delay_ms, fn):
        raise NotImplementedError

    def now_ms(self):
        raise NotImplementedError


class _Endpoint:
    def __init__(self, name, bus):
        self.name = name
        self.bus = bus
        self._next_msg_id = 0
        self._seen = {}  # msg id of requests -> cached response
        self._pending = {}  # msg id of our requests -> (dst, msg, on_response)

    def _new_id(self):
        self._next_msg_id += 1
        return self._next_msg_id

    def request(self, dst, kind, interval, payload, on_response):
        """Send with at-least-once delivery; retransmit until answered."""
        msg = ControllerMsg(kind, self.name, self._new_id(), interval, payload)
        self._pending[msg.msg_id] = (dst, msg, on_response)
        self.bus.send(self.name, dst, msg)
        self._arm_timer(msg.msg_id)

    def _arm_timer(self, msg_id):
        def check():
            if msg_id in self._pending:
                dst, msg, _ = self._pending[msg_id]
                self.bus.send(self.name, dst, msg)
                self._arm_timer(msg_id)
        self.bus.schedule(RETRANSMIT_MS, check)

    def _respond(self, request, payload):
        resp = ControllerMsg(RESPONSE_KIND[request.kind], self.name, self._new_id(),
                             request.interval, payload, reply_to=request.msg_id)
        self._seen[(request.sender, request.msg_id)] = resp
        self.bus.send(self.name, request.sender, resp)

    def deliver(self, msg):
        """Entry point for all inbound messages."""
        if msg.reply_to is not None:
            entry = self._pending.pop(msg.reply_to, None)
            if entry is not None:
                entry[2](msg)
            return
        if msg.kind in RESPONSE_KIND:
            cached = self._seen.get((msg.sender, msg.msg_id))
            if cached is not None:
                self.bus.send(self.name, msg.sender, cached)
                return
        self.handle_request(msg)

    def handle_request(self, msg):
        raise NotImplementedError


class LocalController(_Endpoint):
    """One per datacenter: owns the inventory, path triple and routing state."""

    def __init__(self, dc, bus, inventory, path_triple, tau, catalog,
                 on_enter_interval=None):
        super().__init__(f"local-{dc}", bus)
        self.dc = dc
        self.inventory = inventory
        self.paths = path_triple
        self.tau = tau
        self.catalog = catalog
        self.interval = 0
        self.reactive_suspended = False
        self.suspended_since_ms = None
        self.suspension_total_ms = 0
        self.on_enter_interval = on_enter_interval
        self.stale_reports_dropped = 0

    def handle_request(self, msg):
        if msg.kind == PROVISION_REQUEST:
            if not self.reactive_suspended:
                self.reactive_suspended = True
                self.suspended_since_ms = self.bus.now_ms()
            self._respond(msg, {"dc": self.dc,
                                "working": self.inventory.working_counts(),
                                "buffered": self.inventory.buffered_counts()})
        elif msg.kind == DECISION_BROADCAST:
            self._apply_provisioning(msg.payload["targets"])
            self.paths.stash_next(_decode_paths(msg.payload["paths"]))
            self._respond(msg, {"dc": self.dc})
        elif msg.kind == ENTER_INTERVAL:
            self.interval = msg.interval
            self.paths.promote()
            self.inventory.evict_expired(self.interval, self.tau)
            if self.reactive_suspended:
                self.suspension_total_ms += self.bus.now_ms() - self.suspended_since_ms
                self.reactive_suspended = False
                self.suspended_since_ms = None
            if self.on_enter_interval is not None:
                self.on_enter_interval(self.dc, self.interval)
            self._respond(msg, {"dc": self.dc})
        else:
            raise ValueError(f"unexpected request kind {msg.kind}")

    def _apply_provisioning(self, targets):
        now = self.bus.now_ms()
        for vnf_name, target in sorted(targets.items()):
            have = len(self.inventory.working(vnf_name))
            if target > have:
                self.inventory.scale_out(vnf_name, target - have, now)
            elif target < have:
                self.inventory.scale_in_count(vnf_name, have - target, self.interval)

    def state_digest(self):
        """Stable digest of the externally visible controller state."""
        import hashlib
        import json
        counts = self.inventory.counts()
        snapshot = {
            "interval": self.interval,
            "counts": counts,
            "instances": sorted(
                (i.vnf.name, i.id, i.state, round(i.nominal_load, 6))
                for i in self.inventory.all_instances()),
            "paths": {
                label: sorted((f"{e}->{x}", list(p)) for (e, x), p in table.items())
                for label, table in (("prev", self.paths.previous),
                                     ("cur", self.paths.current),
                                     ("next", self.paths.next))
            },
            "suspended": self.reactive_suspended,
        }
        return hashlib.sha256(
            json.dumps(snapshot, sort_keys=True).encode()).hexdigest()


class GlobalController(_Endpoint):
    """Coordinates proactive rounds across all local controllers."""

    def __init__(self, bus, n_dcs, chain, catalog, scscf_dc, threshold_ms,
                 window=10, path_schedule=None, static_provisioning=False,
                 on_round_complete=None):
        super().__init__("global", bus)
        self.n = n_dcs
        self.chain = chain
        self.catalog = catalog
        self.scscf_dc = scscf_dc
        self.threshold_ms = threshold_ms
        self.interval = 0
        self.cp_forecast = MatrixForecaster(n_dcs, window)
        self.dp_forecast = MatrixForecaster(n_dcs, window)
        self.delay_forecast = MatrixForecaster(n_dcs, window)
        self.current_paths = {}
        self.path_schedule = path_schedule
        self.static_provisioning = static_provisioning
        self.on_round_complete = on_round_complete
        self.round_active = False
        self.rounds_completed = 0
        self.stale_reports_dropped = 0
        self.last_plan = None
        self._round_state = None

    def seed_paths(self, table):
        self.current_paths = dict(table)

    # -- report ingestion -------------------------------------------------

    def ingest_report(self, msg):
        """Fold one workload/delay report into the open accumulators."""
        if msg.interval < self.interval - 1:
            self.stale_reports_dropped += 1
            return
        payload = msg.payload
        kind = payload["metric"]
        forecaster = {"cp": self.cp_forecast, "dp": self.dp_forecast,
                      "delay": self.delay_forecast}[kind]
        for (i, j), value in payload["cells"]:
            forecaster.add_report(i, j, value)

    # -- the proactive round ----------------------------------------------

    def start_round(self, inventories_hint=None):
        """Run steps 1-5 for the interval that just ended.

        Returns False when a previous round is still in flight.
        """
        if self.round_active:
            return False
        self.round_active = True
        target = self.interval + 1

        pred_cp = self.cp_forecast.roll_and_predict()
        pred_dp = self.dp_forecast.roll_and_predict()
        pred_delay = self.delay_forecast.roll_and_predict()
        for i in range(self.n):
            pred_delay[i][i] = 0.0

        self._round_state = {
            "target": target,
            "pred_cp": pred_cp,
            "pred_dp": pred_dp,
            "pred_delay": pred_delay,
            "inventories": {},
            "acks": set(),
        }
        for dc in range(self.n):
            self.request(f"local-{dc}", PROVISION_REQUEST, self.interval, {},
                         self._on_provision_response)
        return True

    def _on_provision_response(self, msg):
        st = self._round_state
        st["inventories"][msg.payload["dc"]] = (
            msg.payload["working"], msg.payload.get("buffered", {}))
        if len(st["inventories"]) == self.n:
            self._compute_and_broadcast()

    def _compute_and_broadcast(self):
        st = self._round_state
        target = st["target"]
        working = [st["inventories"][dc][0] for dc in range(self.n)]
        buffered = [st["inventories"][dc][1] for dc in range(self.n)]

        if self.static_provisioning:
            paths = dict(self.current_paths)
            targets = {dc: dict(working[dc]) for dc in range(self.n)}
            self.last_plan = None
        else:
            cp_plan = size_cp(st["pred_cp"], self.catalog["pcscf"],
                              self.catalog["scscf"], self.scscf_dc)
            dp_result = plan_dp(st["pred_dp"], DelayMatrix(st["pred_delay"]),
                                working, self.current_paths,
                                self.threshold_ms, self.chain,
                                buffered_counts=buffered)
            self.last_plan = dp_result
            paths = dict(dp_result.paths)
            targets = {dc: {} for dc in range(self.n)}
            for dc in range(self.n):
                targets[dc]["pcscf"] = cp_plan.target(dc, "pcscf", 0)
                targets[dc]["scscf"] = cp_plan.target(dc, "scscf", 0)
                for vnf in self.chain:
                    targets[dc][vnf.name] = dp_result.plan.target(dc, vnf.name, 0)

        if self.path_schedule is not None:
            for pair, path in self.path_schedule(target).items():
                paths[pair] = tuple(path)
            for e in range(self.n):
                paths.setdefault((e, e), all_at(e, len(self.chain)))

        st["paths"] = paths
        st["targets"] = targets
        st["decided"] = set()
        for dc in range(self.n):
            self.request(f"local-{dc}", DECISION_BROADCAST, target,
                         {"targets": targets[dc], "paths": _encode_paths(paths)},
                         self._on_decision_complete)

    def _on_decision_complete(self, msg):
        st = self._round_state
        st["decided"].add(msg.payload["dc"])
        if len(st["decided"]) == self.n:
            for dc in range(self.n):
                self.request(f"local-{dc}", ENTER_INTERVAL, st["target"], {},
                             self._on_interval_ack)

    def _on_interval_ack(self, msg):
        st = self._round_state
        st["acks"].add(msg.payload["dc"])
        if len(st["acks"]) == self.n:
            self.current_paths = st["paths"]
            self.interval = st["target"]
            self.round_active = False
            self.rounds_completed += 1
            self._round_state = None
            if self.on_round_complete is not None:
                self.on_round_complete(self.interval)

    def handle_request(self, msg):
        if msg.kind == WORKLOAD_REPORT:
            self.ingest_report(msg)
        else:
            raise ValueError(f"unexpected request kind {msg.kind}")


def _encode_paths(paths):
    return [[list(pair), list(path)] for pair, path in sorted(paths.items())]


def _decode_paths(encoded):
    return {tuple(pair): tuple(path) for pair, path in encoded}


def make_report(sender, interval, metric, cells, msg_id):
    """One-way workload/delay report (no retransmission, receivers tolerate loss)."""
    return ControllerMsg(WORKLOAD_REPORT, sender, msg_id, interval,
                         {"metric": metric, "cells": cells})
