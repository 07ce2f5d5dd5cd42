import pytest
from hypothesis import given, settings, strategies as st

from chainscale.errors import EncodingRangeError, NoWorkingInstanceError, SkewError
from chainscale.provisioning import DEFAULT_CATALOG, Inventory
from chainscale.reactive import NORMAL, OVERLOAD
from chainscale.routing import (
    CallSession, PathTriple, SessionTable, decode_tag, encode_hop, encode_tag,
    extract_hop, local_stage_run, register_call, route_flow, select_instance,
    select_path_set,
)

CHAIN = [DEFAULT_CATALOG["firewall"], DEFAULT_CATALOG["ids"], DEFAULT_CATALOG["transcoder"]]


class TestTagCodec:
    def test_documented_layout(self):
        packed = encode_tag(3, 1, 6)
        assert packed == 774
        assert decode_tag(774) == (3, 1, 2)

    def test_zero(self):
        assert encode_tag(0, 0, 0) == 0
        assert decode_tag(0) == (0, 0, 0)

    def test_range_check(self):
        with pytest.raises(EncodingRangeError):
            encode_tag(64, 0, 0)
        with pytest.raises(EncodingRangeError):
            encode_tag(0, 64, 0)

    def test_exhaustive_round_trip(self):
        for entry in range(64):
            for exit in range(64):
                for interval in range(4):
                    assert decode_tag(encode_tag(entry, exit, interval)) == \
                        (entry, exit, interval)


class TestHopCodec:
    def test_lane_placement(self):
        assert encode_hop(0, 2, 7) == 0x00070000

    def test_virtual_exit_stage_low_byte(self):
        assert encode_hop(0, 4, 2) == 0x02

    def test_other_lanes_untouched(self):
        code = encode_hop(0, 1, 0xAA)
        code = encode_hop(code, 3, 0xBB)
        assert code == 0xAA00BB00
        code = encode_hop(code, 3, 0x01)
        assert code == 0xAA000100

    @settings(max_examples=500, derandomize=True)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(0, 255))
    def test_round_trip(self, code, stage, value):
        assert extract_hop(encode_hop(code, stage, value), stage) == value

    def test_index_range(self):
        with pytest.raises(EncodingRangeError):
            encode_hop(0, 1, 256)
        with pytest.raises(EncodingRangeError):
            encode_hop(0, 5, 1)


def session():
    return CallSession(
        caller_id="a", caller_ip="ip_a", caller_send_port=1000, caller_recv_port=1001,
        caller_entry=0,
        callee_id="b", callee_ip="ip_b", callee_send_port=2000, callee_recv_port=2001,
        callee_entry=1)


class TestSessions:
    def test_caller_side_mappings(self):
        caller_tbl, callee_tbl = SessionTable(), SessionTable()
        register_call(session(), caller_tbl, callee_tbl, "dcip:0", "dcip:1")
        assert caller_tbl.forward[("ip_a", 1000)] == "ip_b"
        assert caller_tbl.exit[("ip_b", 2000)] == ("dcip:0", "ip_a", 1001)

    def test_callee_side_mappings(self):
        caller_tbl, callee_tbl = SessionTable(), SessionTable()
        register_call(session(), caller_tbl, callee_tbl, "dcip:0", "dcip:1")
        assert callee_tbl.forward[("ip_b", 2000)] == "ip_a"
        assert callee_tbl.exit[("ip_a", 1000)] == ("dcip:1", "ip_b", 2001)

    def test_reregistration_idempotent(self):
        caller_tbl, callee_tbl = SessionTable(), SessionTable()
        register_call(session(), caller_tbl, callee_tbl, "dcip:0", "dcip:1")
        before = (dict(caller_tbl.forward), dict(caller_tbl.exit),
                  dict(callee_tbl.forward), dict(callee_tbl.exit))
        register_call(session(), caller_tbl, callee_tbl, "dcip:0", "dcip:1")
        assert before == (caller_tbl.forward, caller_tbl.exit,
                          callee_tbl.forward, callee_tbl.exit)


class TestSelectPathSet:
    def triple(self):
        t = PathTriple({(0, 1): (0, 0, 1)})
        t.stash_next({(0, 1): (0, 1, 1)})
        t.previous = {(0, 1): (0, 0, 0)}
        return t

    def test_equal_interval_is_current(self):
        t = self.triple()
        assert select_path_set(t, 7, 3) is t.current

    def test_one_ahead_is_next(self):
        t = self.triple()
        assert select_path_set(t, 7, 0) is t.next

    def test_one_behind_is_previous(self):
        t = self.triple()
        assert select_path_set(t, 7, 2) is t.previous

    def test_skew_beyond_one_rejected(self):
        with pytest.raises(SkewError, match="skew > 1"):
            select_path_set(self.triple(), 7, 1)


class FakeInstance:
    def __init__(self, id, load):
        self.id = id
        self.nominal_load = load


class TestSelectInstance:
    def test_smallest_workload(self):
        a, b, c = FakeInstance(3, 100), FakeInstance(4, 50), FakeInstance(5, 200)
        assert select_instance([a, b, c]) is b

    def test_overloaded_avoided_when_normal_exists(self):
        hot, cold = FakeInstance(3, 10), FakeInstance(4, 500)
        states = {3: OVERLOAD, 4: NORMAL}
        assert select_instance([hot, cold], health_state=lambda i: states[i.id]) is cold

    def test_all_overloaded_still_selects(self):
        hot1, hot2 = FakeInstance(3, 10), FakeInstance(4, 5)
        states = {3: OVERLOAD, 4: OVERLOAD}
        assert select_instance([hot1, hot2], health_state=lambda i: states[i.id]) is hot2

    def test_tie_breaks_on_lowest_id(self):
        a, b = FakeInstance(9, 50), FakeInstance(3, 50)
        assert select_instance([a, b]) is b

    def test_empty_candidates(self):
        with pytest.raises(NoWorkingInstanceError):
            select_instance([])


class TestRouteFlow:
    def make_inventory(self, dc, counts):
        inv = Inventory(dc, 3, DEFAULT_CATALOG, boot_delay_ms=0)
        for name, c in counts.items():
            if c:
                inv.scale_out(name, c, now_ms=0)
        return inv

    def test_transit_stages_and_virtual_exit_lane(self):
        path = (0, 0, 1, 1, 2)
        inv = self.make_inventory(1, {"ids": 1, "transcoder": 1})
        d = route_flow(1, path, inv, CHAIN, now_ms=10)
        assert [s for s, _ in d.stages] == [2, 3]
        assert d.next_dc == 2
        assert extract_hop(d.hop_code, 4) == 2  # virtual exit stage lane
        assert not d.dropped

    def test_entry_hosting_leading_run(self):
        path = (0, 0, 1, 1, 2)
        inv = self.make_inventory(0, {"firewall": 2})
        d = route_flow(0, path, inv, CHAIN, now_ms=10)
        assert [s for s, _ in d.stages] == [1]
        assert d.next_dc == 1
        assert extract_hop(d.hop_code, 2) == 1  # next stage lane carries the dc

    def test_pure_exit_delivers(self):
        path = (0, 0, 1, 1, 2)
        inv = self.make_inventory(2, {})
        d = route_flow(2, path, inv, CHAIN, now_ms=10)
        assert d.stages == [] and d.next_dc is None and not d.dropped

    def test_off_path_dropped(self):
        path = (0, 0, 0, 1, 1)
        inv = self.make_inventory(2, {"ids": 1})
        d = route_flow(2, path, inv, CHAIN, now_ms=10)
        assert d.dropped
        assert "not on service chain path" in d.reason

    def test_local_stage_run_contiguity(self):
        assert local_stage_run((0, 0, 1, 1, 2), 1) == [2, 3]
        assert local_stage_run((0, 0, 1, 1, 2), 0) == [1]
        assert local_stage_run((0, 0, 1, 1, 2), 2) == []
