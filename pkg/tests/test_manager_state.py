import pytest
from hypothesis import given, strategies as st

from scavstore.chunking import content_address
from scavstore.errors import (
    NotFoundError,
    PurgedError,
    RejectedError,
    ReRegisterError,
    UnavailableError,
)
from scavstore.manager import DatasetName, ManagerState

T0 = 1000.0


def mk_state(**kw):
    kw.setdefault("liveness_timeout", 15.0)
    kw.setdefault("reservation_ttl", 600.0)
    return ManagerState(**kw)


def add_benefactors(state, n, free=1 << 30, now=T0):
    return [state.register(f"10.0.0.{i}:70{i:02d}", free, free, now) for i in range(n)]


def cid_of(i):
    return content_address(f"chunk-{i}".encode())


def store_version(state, name, chunk_ids, bid, now=T0, target=None, length=100):
    rid, _ = state.reserve("t", 10, 1, now)
    state.record_upload(rid, [(cid, length, bid) for cid in chunk_ids], now)
    name = DatasetName.parse(name) if isinstance(name, str) else name
    return state.commit_map(name, [(cid, length) for cid in chunk_ids], rid, now, target)


class TestRegistry:
    def test_fresh_address_is_online(self):
        state = mk_state()
        bid = state.register("10.0.0.1:7001", 500, 500, T0)
        assert [b.benefactor_id for b in state.online_benefactors(T0)] == [bid]

    def test_reregister_same_address_same_id(self):
        state = mk_state()
        bid1 = state.register("10.0.0.1:7001", 500, 500, T0)
        bid2 = state.register("10.0.0.1:7001", 900, 900, T0 + 1)
        assert bid1 == bid2
        assert state.benefactors[bid1].free_space == 900

    def test_twenty_registrations(self):
        state = mk_state()
        add_benefactors(state, 20)
        assert len(state.online_benefactors(T0)) == 20

    def test_heartbeat_keeps_online(self):
        state = mk_state()
        bid = state.register("a:1", 1, 1, T0)
        state.heartbeat(bid, 2, 2, T0 + 10)
        assert state.online_benefactors(T0 + 20)

    def test_missed_heartbeats_offline_then_back(self):
        state = mk_state()
        bid = state.register("a:1", 1, 1, T0)
        assert not state.online_benefactors(T0 + 16)
        state.heartbeat(bid, 1, 1, T0 + 30)
        assert state.online_benefactors(T0 + 31)

    def test_unknown_heartbeat_demands_reregistration(self):
        state = mk_state()
        with pytest.raises(ReRegisterError):
            state.heartbeat("deadbeef", 1, 1, T0)


class TestReserve:
    def test_four_of_eight(self):
        state = mk_state()
        add_benefactors(state, 8)
        _, members = state.reserve("c", 4000, 4, T0)
        assert len(members) == 4
        assert len({bid for bid, _, _ in members}) == 4

    def test_degraded_stripe(self):
        state = mk_state()
        add_benefactors(state, 3)
        _, members = state.reserve("c", 4000, 8, T0)
        assert len(members) == 3

    def test_widths_one_to_eight(self):
        state = mk_state()
        add_benefactors(state, 8)
        for width in range(1, 9):
            _, members = state.reserve("c", 0, width, T0)
            assert len(members) == width

    def test_no_online_benefactors(self):
        state = mk_state()
        with pytest.raises(UnavailableError):
            state.reserve("c", 1, 1, T0)
        add_benefactors(state, 2)
        with pytest.raises(UnavailableError):
            state.reserve("c", 1, 1, T0 + 100)  # both timed out by now

    def test_most_free_first_with_id_tiebreak(self):
        state = mk_state()
        a = state.register("hostA:1", 100, 100, T0)
        b = state.register("hostB:1", 300, 300, T0)
        c = state.register("hostC:1", 300, 300, T0)
        _, members = state.reserve("c", 0, 2, T0)
        picked = [bid for bid, _, _ in members]
        assert set(picked) == {b, c}
        assert picked == sorted(picked)
        _, members = state.reserve("c", 0, 3, T0)
        assert [bid for bid, _, _ in members][-1] == a

    def test_reservation_reduces_allocatable(self):
        state = mk_state()
        a = state.register("hostA:1", 1000, 1000, T0)
        b = state.register("hostB:1", 900, 900, T0)
        state.reserve("c", 500, 1, T0)  # lands on a: allocatable 500 < 900
        _, members = state.reserve("c", 0, 1, T0)
        assert members[0][0] == b

    def test_expired_reservation_frees_space(self):
        state = mk_state(reservation_ttl=60.0)
        a = state.register("hostA:1", 1000, 1000, T0)
        state.register("hostB:1", 900, 900, T0)
        state.reserve("c", 500, 1, T0)
        state.heartbeat(a, 1000, 1000, T0 + 100)
        state.heartbeat(state.register("hostB:1", 900, 900, T0 + 100), 900, 900, T0 + 100)
        _, members = state.reserve("c", 0, 1, T0 + 100)
        assert members[0][0] == a  # expired reservation no longer counted

    def test_exclude(self):
        state = mk_state()
        bids = add_benefactors(state, 3)
        _, members = state.reserve("c", 0, 3, T0, exclude=(bids[0],))
        assert bids[0] not in [bid for bid, _, _ in members]


class TestLookupAndCommit:
    def test_lookup_mixed(self):
        state = mk_state()
        bid = add_benefactors(state, 1)[0]
        known = [cid_of(i) for i in range(3)]
        store_version(state, "app.n1.1", known, bid)
        unknown = [cid_of(100), cid_of(101)]
        found = state.lookup_chunks(known + unknown)
        assert set(found) == set(known)

    def test_commit_280_chunks(self):
        state = mk_state()
        bid = add_benefactors(state, 1)[0]
        ids = [cid_of(i) for i in range(280)]
        version = store_version(state, "blast.n1.1", ids, bid, length=1 << 20)
        assert version == 1
        rec = state.resolve_version("blast", version=1)
        assert rec.total_bytes == 280 << 20

    def test_second_commit_bumps_version(self):
        state = mk_state()
        bid = add_benefactors(state, 1)[0]
        store_version(state, "app.n1.1", [cid_of(1)], bid)
        v2 = store_version(state, "app.n1.2", [cid_of(2)], bid)
        assert v2 == 2
        assert state.resolve_version("app").version == 2

    def test_commit_unknown_chunk_rejected(self):
        state = mk_state()
        bid = add_benefactors(state, 1)[0]
        store_version(state, "app.n1.1", [cid_of(1)], bid)
        with pytest.raises(RejectedError):
            state.commit_map(
                DatasetName.parse("app.n1.2"), [(cid_of(99), 100)], None, T0
            )
        assert state.resolve_version("app").version == 1

    def test_duplicate_commit_idempotent(self):
        state = mk_state()
        bid = add_benefactors(state, 1)[0]
        v1 = store_version(state, "app.n1.1", [cid_of(1)], bid)
        rid, _ = state.reserve("t", 10, 1, T0)
        again = state.commit_map(DatasetName.parse("app.n1.1"), [(cid_of(1), 100)], rid, T0)
        assert again == v1
        assert len(state.folders["app"].versions) == 1

    def test_cow_commit_without_reservation(self):
        state = mk_state()
        bid = add_benefactors(state, 1)[0]
        store_version(state, "app.n1.1", [cid_of(1)], bid)
        v = state.commit_map(DatasetName.parse("app.n2.1"), [(cid_of(1), 100)], None, T0)
        assert v == 2

    def test_versions_dense_within_folder(self):
        state = mk_state()
        bid = add_benefactors(state, 1)[0]
        versions = [
            store_version(state, f"app.n1.{t}", [cid_of(t)], bid) for t in range(5)
        ]
        assert versions == [1, 2, 3, 4, 5]
        other = store_version(state, "other.n1.1", [cid_of(50)], bid)
        assert other == 1  # independent folder counter

    def test_get_map_semantics(self):
        state = mk_state()
        bid = add_benefactors(state, 1)[0]
        store_version(state, "app.n1.1", [cid_of(1)], bid)
        rec = state.resolve_version("app", node="n1", timestep=1)
        assert rec.name.render() == "app.n1.1"
        with pytest.raises(NotFoundError):
            state.resolve_version("app", node="n1", timestep=9)
        with pytest.raises(NotFoundError):
            state.resolve_version("ghost")

    def test_uncommitted_session_invisible(self):
        state = mk_state()
        bid = add_benefactors(state, 1)[0]
        rid, _ = state.reserve("c", 10, 1, T0)
        state.record_upload(rid, [(cid_of(7), 100, bid)], T0)
        with pytest.raises(NotFoundError):
            state.resolve_version("app")
        assert cid_of(7) in state.lookup_chunks([cid_of(7)])  # in-flight visible to dedup


class TestReplication:
    def test_plan_assigns_distinct_targets(self):
        state = mk_state()
        bids = add_benefactors(state, 4)
        store_version(state, "app.n1.1", [cid_of(i) for i in range(5)], bids[0], target=2)
        plan = state.plan_replication("app", 1, T0)
        assert len(plan) == 5
        for cid, src, tgt in plan:
            assert src == bids[0]
            assert tgt != src

    def test_plan_empty_when_satisfied(self):
        state = mk_state()
        bids = add_benefactors(state, 2)
        store_version(state, "app.n1.1", [cid_of(1)], bids[0], target=2)
        for cid, src, tgt in state.plan_replication("app", 1, T0):
            state.commit_replica("app", 1, cid, tgt, T0)
        rec = state.resolve_version("app", version=1)
        assert state.replication_state(rec) == "satisfied"
        assert state.plan_replication("app", 1, T0) == []

    def test_plan_capped_by_membership(self):
        state = mk_state()
        bids = add_benefactors(state, 2)
        store_version(state, "app.n1.1", [cid_of(1)], bids[0], target=3)
        plan = state.plan_replication("app", 1, T0)
        assert len(plan) == 1  # only one other node exists
        state.commit_replica("app", 1, cid_of(1), plan[0][2], T0)
        rec = state.resolve_version("app", version=1)
        assert state.replication_state(rec) == "pending"

    def test_plan_defers_while_reservations_queued(self):
        state = mk_state()
        bids = add_benefactors(state, 3)
        store_version(state, "app.n1.1", [cid_of(1)], bids[0], target=2)
        state.reserve_queue_depth = 1
        assert state.plan_replication("app", 1, T0) == []
        state.reserve_queue_depth = 0
        assert len(state.plan_replication("app", 1, T0)) == 1

    def test_commit_replica_idempotent_and_for_offline_target(self):
        state = mk_state()
        bids = add_benefactors(state, 3)
        store_version(state, "app.n1.1", [cid_of(1)], bids[0], target=2)
        plan = state.plan_replication("app", 1, T0)
        tgt = plan[0][2]
        late = T0 + 1000  # target no longer heartbeating; copy already happened
        state.commit_replica("app", 1, cid_of(1), tgt, late)
        state.commit_replica("app", 1, cid_of(1), tgt, late)
        entry = state.chunks[cid_of(1)]
        assert entry.replicas.count(tgt) == 1

    def test_commit_replica_unknown_tuple_rejected(self):
        state = mk_state()
        bids = add_benefactors(state, 2)
        store_version(state, "app.n1.1", [cid_of(1)], bids[0])
        with pytest.raises(RejectedError):
            state.commit_replica("app", 1, cid_of(9), bids[1], T0)

    def test_replica_loss_makes_replication_pending_again(self):
        state = mk_state()
        bids = add_benefactors(state, 3)
        store_version(state, "app.n1.1", [cid_of(1)], bids[0], target=2)
        for cid, src, tgt in state.plan_replication("app", 1, T0):
            state.commit_replica("app", 1, cid, tgt, T0)
        rec = state.resolve_version("app", version=1)
        assert state.replication_state(rec) == "satisfied"
        holder = state.chunks[cid_of(1)].replicas[1]
        state.gc_exchange(holder, [], T0)  # inventory lost the chunk
        assert state.replication_state(rec) == "pending"


class TestGcExchange:
    def test_exact_inventory_nothing_deleted(self):
        state = mk_state()
        bid = add_benefactors(state, 1)[0]
        ids = [cid_of(i) for i in range(4)]
        store_version(state, "app.n1.1", ids, bid)
        assert state.gc_exchange(bid, ids, T0) == []

    def test_purged_version_chunks_deletable(self):
        state = mk_state()
        bid = add_benefactors(state, 1)[0]
        store_version(state, "app.n1.1", [cid_of(1)], bid)
        store_version(state, "app.n1.2", [cid_of(2)], bid)
        state.set_policy("app", "replace", 0.0, T0)
        doomed = state.gc_exchange(bid, [cid_of(1), cid_of(2)], T0)
        assert doomed == [cid_of(1)]

    def test_inflight_chunks_shielded(self):
        state = mk_state()
        bid = add_benefactors(state, 1)[0]
        rid, _ = state.reserve("c", 10, 1, T0)
        state.record_upload(rid, [(cid_of(5), 100, bid)], T0)
        assert state.gc_exchange(bid, [cid_of(5)], T0) == []
        # after expiry the shield is gone
        assert state.gc_exchange(bid, [cid_of(5)], T0 + 10_000) == [cid_of(5)]

    def test_cow_shared_chunk_survives_purge(self):
        state = mk_state()
        bid = add_benefactors(state, 1)[0]
        shared = cid_of(1)
        store_version(state, "app.n1.1", [shared, cid_of(2)], bid)
        store_version(state, "app.n1.2", [shared, cid_of(3)], bid)
        state.set_policy("app", "replace", 0.0, T0)
        doomed = state.gc_exchange(bid, [shared, cid_of(2), cid_of(3)], T0)
        assert doomed == [cid_of(2)]  # shared chunk protected by v2


class TestLifecycleAndDelete:
    def test_replace_purges_older_timesteps(self):
        state = mk_state()
        bid = add_benefactors(state, 1)[0]
        state.set_policy("app", "replace", 0.0, T0)
        store_version(state, "app.n1.2", [cid_of(2)], bid)
        store_version(state, "app.n1.3", [cid_of(3)], bid)
        live = [r.name.render() for r in state.folders["app"].versions.values()]
        assert live == ["app.n1.3"]
        with pytest.raises(PurgedError):
            state.resolve_version("app", node="n1", timestep=2)

    def test_replace_out_of_order_commit_purged_immediately(self):
        state = mk_state()
        bid = add_benefactors(state, 1)[0]
        state.set_policy("app", "replace", 0.0, T0)
        store_version(state, "app.n1.3", [cid_of(3)], bid)
        store_version(state, "app.n1.2", [cid_of(2)], bid)  # arrives late
        live = [r.name.render() for r in state.folders["app"].versions.values()]
        assert live == ["app.n1.3"]

    def test_replace_keeps_latest_per_node(self):
        state = mk_state()
        bid = add_benefactors(state, 1)[0]
        state.set_policy("app", "replace", 0.0, T0)
        store_version(state, "app.n1.1", [cid_of(1)], bid)
        store_version(state, "app.n2.5", [cid_of(2)], bid)
        store_version(state, "app.n1.2", [cid_of(3)], bid)
        live = sorted(r.name.render() for r in state.folders["app"].versions.values())
        assert live == ["app.n1.2", "app.n2.5"]

    def test_purge_mode_by_age(self):
        state = mk_state()
        bid = add_benefactors(state, 1)[0]
        state.set_policy("app", "purge", 3600.0, T0)
        store_version(state, "app.n1.1", [cid_of(1)], bid, now=T0)
        assert state.apply_lifecycle(T0 + 1800) == []
        purged = state.apply_lifecycle(T0 + 7200)
        assert purged == [("app.n1.1", 1)]
        with pytest.raises(PurgedError):
            state.resolve_version("app", version=1)

    def test_delete_dataset_leaves_siblings(self):
        state = mk_state()
        bid = add_benefactors(state, 1)[0]
        store_version(state, "app.n1.1", [cid_of(1)], bid)
        store_version(state, "app.n1.2", [cid_of(2)], bid)
        assert state.delete("app.n1.1") == 1
        assert state.resolve_version("app").name.render() == "app.n1.2"
        with pytest.raises(NotFoundError):
            state.resolve_version("app", node="n1", timestep=1)

    def test_delete_folder_then_gc_reclaims(self):
        state = mk_state()
        bid = add_benefactors(state, 1)[0]
        store_version(state, "app.n1.1", [cid_of(1)], bid)
        state.delete("app")
        assert state.gc_exchange(bid, [cid_of(1)], T0) == [cid_of(1)]
        with pytest.raises(NotFoundError):
            state.delete("app")

    def test_listing(self):
        state = mk_state()
        bid = add_benefactors(state, 1)[0]
        assert state.list_namespace() == []
        store_version(state, "app.n1.1", [cid_of(1)], bid)
        store_version(state, "app.n1.2", [cid_of(2)], bid)
        store_version(state, "zap.n1.1", [cid_of(3)], bid)
        listing = state.list_namespace()
        assert [f["application"] for f in listing] == ["app", "zap"]
        assert len(listing[0]["versions"]) == 2
        only_app = state.list_namespace("app.")
        assert len(only_app) == 1 and len(only_app[0]["versions"]) == 2


@given(
    app=st.text(
        alphabet=st.characters(blacklist_characters=".", min_codepoint=33, max_codepoint=126),
        min_size=1,
        max_size=12,
    ),
    node=st.text(
        alphabet=st.characters(blacklist_characters=".", min_codepoint=33, max_codepoint=126),
        min_size=1,
        max_size=12,
    ),
    timestep=st.integers(0, 10**9),
)
def test_name_parse_render_identity(app, node, timestep):
    name = DatasetName(app, node, timestep)
    assert DatasetName.parse(name.render()) == name
