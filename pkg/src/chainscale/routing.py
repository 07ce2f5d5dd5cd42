"""Distributed data-plane routing state.

Local controllers route flows without consulting the global controller:
the first packet of a flow carries a 14-bit tag (entry datacenter, exit
datacenter, scaling interval mod 4) in a 16-bit header field, and a 32-bit
hop code whose four byte lanes carry, per stage, either the chosen
instance id or the next datacenter index. Stage 4 is a virtual exit stage.

Each controller retains the path tables of the previous, current and next
scaling intervals, so a tag minted one interval away still resolves; skew
beyond one interval violates the update protocol and is rejected.
"""

from dataclasses import dataclass

from .errors import EncodingRangeError, NoWorkingInstanceError, SkewError
from .reactive import OVERLOAD

TAG_INDEX_BITS = 6
TAG_MAX_INDEX = 1 << TAG_INDEX_BITS  # 64 datacenters
HOP_STAGES = 4  # three chain stages plus the virtual exit stage


def encode_tag(entry, exit, interval):
    if not (0 <= entry < TAG_MAX_INDEX and 0 <= exit < TAG_MAX_INDEX):
        raise EncodingRangeError(f"datacenter index out of tag range: ({entry}, {exit})")
    return (entry << 8) | (exit << 2) | (interval % 4)


def decode_tag(packed):
    if not 0 <= packed < (1 << 14):
        raise EncodingRangeError(f"tag out of range: {packed}")
    return (packed >> 8) & 0x3F, (packed >> 2) & 0x3F, packed & 0x3


def hop_mask(stage):
    if not 1 <= stage <= HOP_STAGES:
        raise EncodingRangeError(f"hop stage out of range: {stage}")
    return 255 << (8 * (HOP_STAGES - stage))


def encode_hop(code, stage, index):
    if not 0 <= index < 256:
        raise EncodingRangeError(f"hop index out of range: {index}")
    shift = 8 * (HOP_STAGES - stage)
    return (code & ~hop_mask(stage)) | (index << shift)


def extract_hop(code, stage):
    return (code & hop_mask(stage)) >> (8 * (HOP_STAGES - stage))


@dataclass(frozen=True)
class CallSession:
    caller_id: str
    caller_ip: str
    caller_send_port: int
    caller_recv_port: int
    caller_entry: int
    callee_id: str
    callee_ip: str
    callee_send_port: int
    callee_recv_port: int
    callee_entry: int


class SessionTable:
    """The per-controller halves of a call's address mappings.

    The caller's entry controller keeps the forward mapping (caller source
    -> callee address) and the reverse-exit mapping used to translate the
    callee's flow when it leaves the chain; the callee's entry controller
    keeps the symmetric pair.
    """

    def __init__(self):
        self.forward = {}  # (src ip, src port) -> dst ip
        self.exit = {}  # (src ip, src port) -> (entry ip, dst ip, dst recv port)

    def install_caller_side(self, s: CallSession, entry_ip):
        self.forward[(s.caller_ip, s.caller_send_port)] = s.callee_ip
        self.exit[(s.callee_ip, s.callee_send_port)] = (entry_ip, s.caller_ip, s.caller_recv_port)

    def install_callee_side(self, s: CallSession, entry_ip):
        self.forward[(s.callee_ip, s.callee_send_port)] = s.caller_ip
        self.exit[(s.caller_ip, s.caller_send_port)] = (entry_ip, s.callee_ip, s.callee_recv_port)


def register_call(session, caller_table, callee_table, caller_entry_ip, callee_entry_ip):
    """Install the four mappings on the two entry controllers (idempotent)."""
    caller_table.install_caller_side(session, caller_entry_ip)
    callee_table.install_callee_side(session, callee_entry_ip)


class PathTriple:
    """Path tables for the previous, current and next scaling intervals."""

    def __init__(self, initial_table):
        self.previous = dict(initial_table)
        self.current = dict(initial_table)
        self.next = dict(initial_table)

    def stash_next(self, table):
        self.next = dict(table)

    def promote(self):
        self.previous = self.current
        self.current = self.next


def select_path_set(triple, local_interval, tag_interval_mod4):
    """Pick the path table matching a tag's interval-mod-4 value."""
    mod = tag_interval_mod4 % 4
    if mod == local_interval % 4:
        return triple.current
    if mod == (local_interval - 1) % 4:
        return triple.previous
    if mod == (local_interval + 1) % 4:
        return triple.next
    raise SkewError(
        f"tag interval {tag_interval_mod4} vs local {local_interval}: skew > 1")


def select_instance(candidates, health_state=None):
    """Smallest-workload-first choice among working instances.

    Overloaded instances are skipped while any normal one exists; ties go
    to the lowest instance id.
    """
    if not candidates:
        raise NoWorkingInstanceError("no working instance")
    if health_state is not None:
        normal = [i for i in candidates if health_state(i) != OVERLOAD]
        if normal:
            candidates = normal
    return min(candidates, key=lambda i: (i.nominal_load, i.id))


def local_stage_run(path, dc):
    """The contiguous stage indices a datacenter hosts on a path.

    ``path`` is the (m+2)-tuple; returns 1-based stage indices. Looplessness
    makes any datacenter's stages contiguous.
    """
    return [s for s in range(1, len(path) - 1) if path[s] == dc]


def on_path(path, dc):
    return dc in path


@dataclass
class ForwardingDecision:
    """What one local controller decided for one flow's first packet."""

    dc: int
    stages: list  # (stage index, instance) pairs handled locally
    next_dc: int | None  # None when the flow exits here
    hop_code: int
    delivered_to: tuple | None = None  # exit translation result
    dropped: bool = False
    reason: str = ""


def route_flow(dc, path, inventory, chain, now_ms, hop_code=0, health_state=None):
    """Instance selection and hop-code filling for one datacenter visit.

    The caller has already resolved ``path`` from the tag (or its current
    table when tagging is off). Drops the flow when this datacenter is not
    on the path at all.
    """
    if not on_path(path, dc):
        return ForwardingDecision(dc, [], None, hop_code, dropped=True,
                                  reason="datacenter not on service chain path")
    stages = local_stage_run(path, dc)
    chosen = []
    for s in stages:
        vnf = chain[s - 1]
        ready = inventory.ready_instances(vnf.name, now_ms)
        if not ready:
            # Capacity was planned but has not booted yet; pin to a booting
            # instance and let it serve once up.
            booting = inventory.working(vnf.name)
            if not booting:
                return ForwardingDecision(dc, [], None, hop_code, dropped=True,
                                          reason=f"no instance of {vnf.name}")
            inst = select_instance(booting, health_state)
        else:
            inst = select_instance(ready, health_state)
        chosen.append((s, inst))
        hop_code = encode_hop(hop_code, s, inst.id)

    if dc == path[-1]:
        # Looplessness puts the exit datacenter's stages (if any) at the
        # chain tail, so arrival here means processing is complete.
        return ForwardingDecision(dc, chosen, None, hop_code)
    next_stage = (stages[-1] if stages else 0) + 1
    next_dc = path[next_stage]
    hop_code = encode_hop(hop_code, next_stage, next_dc)
    return ForwardingDecision(dc, chosen, next_dc, hop_code)
