import pytest

from chainscale.errors import InstanceStateError
from chainscale.provisioning import (
    BUFFERED, DEFAULT_CATALOG, DESTROYED, DRAINING, WORKING, Inventory, VnfType,
)


@pytest.fixture
def inv():
    return Inventory(dc=0, n_dcs=3, catalog=DEFAULT_CATALOG, boot_delay_ms=20000)


def test_default_catalog_capacities():
    assert DEFAULT_CATALOG["pcscf"].capacity == 500
    assert DEFAULT_CATALOG["scscf"].capacity == 200
    assert DEFAULT_CATALOG["firewall"].capacity == 35000
    assert DEFAULT_CATALOG["ids"].capacity == 20000
    assert DEFAULT_CATALOG["transcoder"].capacity == 15000
    assert DEFAULT_CATALOG["firewall"].cpu_threshold == 90
    assert DEFAULT_CATALOG["pcscf"].pkt_threshold == 1000


def test_vnf_type_validation():
    with pytest.raises(ValueError):
        VnfType("x", "dp", 0)
    with pytest.raises(ValueError):
        VnfType("x", "dp", 10, cpu_threshold=101)


def test_ids_reserved_for_datacenters(inv):
    insts = inv.scale_out("firewall", 2)
    assert all(i.id >= 3 for i in insts)
    assert insts[0].id != insts[1].id


def test_scale_out_prefers_buffered_tail(inv):
    first = inv.scale_out("firewall", 5, now_ms=0)
    inv.scale_in(first, current_interval=1)
    got = inv.scale_out("firewall", 2, now_ms=30000)
    # Tail of the queue = most recently buffered.
    assert [i.id for i in got] == [first[4].id, first[3].id]
    assert all(i.state == WORKING for i in got)
    assert all(i.ready(30000) for i in got)  # reused VMs add no boot delay
    assert [i.id for i in inv.buffer("firewall")] == [first[0].id, first[1].id, first[2].id]


def test_scale_out_mixes_reuse_and_creation(inv):
    two = inv.scale_out("ids", 2, now_ms=0)
    inv.scale_in(two, current_interval=0)
    got = inv.scale_out("ids", 3, now_ms=25000)
    reused = [i for i in got if i.ready(25000)]
    created = [i for i in got if not i.ready(25000)]
    assert len(reused) == 2 and len(created) == 1
    assert created[0].boot_done_ms == 45000
    assert len(inv.buffer("ids")) == 0


def test_scale_out_empty_queue_creates(inv):
    got = inv.scale_out("transcoder", 1, now_ms=0)
    assert len(got) == 1
    assert not got[0].ready(0)
    assert got[0].ready(20000)


def test_scale_in_stamps_interval(inv):
    inst, = inv.scale_out("firewall", 1)
    inv.scale_in([inst], current_interval=7)
    assert inst.state == BUFFERED
    assert inst.buffered_interval == 7


def test_scale_in_then_out_same_interval_reuses(inv):
    inst, = inv.scale_out("firewall", 1, now_ms=0)
    inv.scale_in([inst], current_interval=3)
    back, = inv.scale_out("firewall", 1, now_ms=20100)
    assert back is inst
    assert back.ready(20100)
    assert back.boot_done_ms == 20000  # original boot, no new delay added


def test_scale_in_rejects_non_working(inv):
    inst, = inv.scale_out("firewall", 1)
    inv.scale_in([inst], current_interval=0)
    with pytest.raises(InstanceStateError):
        inv.scale_in([inst], current_interval=0)


class TestEviction:
    def test_age_boundary(self, inv):
        inst, = inv.scale_out("firewall", 1)
        inv.scale_in([inst], current_interval=5)
        assert inv.evict_expired(new_interval=14, tau=10) == []
        assert inv.evict_expired(new_interval=15, tau=10) == [inst]
        assert inst.state == DESTROYED  # no traffic, destroyed immediately

    def test_head_scan_stops_at_young_entry(self, inv):
        insts = inv.scale_out("firewall", 3)
        for inst, stamp in zip(insts, (3, 5, 9)):
            inv.scale_in([inst], current_interval=stamp)
        evicted = inv.evict_expired(new_interval=15, tau=10)
        assert [i.buffered_interval for i in evicted] == [3, 5]
        assert [i.buffered_interval for i in inv.buffer("firewall")] == [9]

    def test_draining_destroyed_only_when_idle(self, inv):
        inst, = inv.scale_out("firewall", 1)
        inst.nominal_load = 50.0
        inv.scale_in([inst], current_interval=0)
        inv.evict_expired(new_interval=10, tau=10)
        assert inst.state == DRAINING
        inst.nominal_load = 0.0
        inv.reap_drained()
        assert inst.state == DESTROYED


class TestAvailableCapacity:
    def test_sum_of_headroom(self, inv):
        a, b = inv.scale_out("firewall", 2)
        a.nominal_load = 10000
        assert inv.available_capacity("firewall") == 60000

    def test_no_instances(self, inv):
        assert inv.available_capacity("firewall") == 0

    def test_buffered_excluded(self, inv):
        inst, = inv.scale_out("firewall", 1)
        inv.scale_in([inst], current_interval=0)
        assert inv.available_capacity("firewall") == 0


def test_conservation_and_no_dual_membership(inv):
    created = []
    created += inv.scale_out("firewall", 4, now_ms=0)
    inv.scale_in(created[:2], current_interval=0)
    created += inv.scale_out("firewall", 3, now_ms=1000)  # reuses 2, creates 1
    inv.scale_in_count("firewall", 2, current_interval=1)
    inv.evict_expired(new_interval=11, tau=10)

    assert len(inv.created_log) == 5
    states = {}
    for inst in inv.all_instances():
        assert inst.id not in states
        states[inst.id] = inst.state
    live = len(states)
    destroyed = len(inv.destroyed_log)
    assert live + destroyed == len(inv.created_log)
    working_ids = {i.id for i in inv.working("firewall")}
    buffered_ids = {i.id for i in inv.buffer("firewall")}
    assert not working_ids & buffered_ids


def test_id_reuse_after_destruction(inv):
    inst, = inv.scale_out("firewall", 1)
    old_id = inst.id
    inv.scale_in([inst], current_interval=0)
    inv.evict_expired(new_interval=10, tau=10)
    assert inst.state == DESTROYED
    again, = inv.scale_out("firewall", 1)
    assert again.id == old_id
