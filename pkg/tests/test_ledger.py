from __future__ import annotations

import hashlib
import random

import pytest
from hypothesis import given, strategies as st

from auditchain.codec import AuditTransaction
from auditchain.ledger import (
    Block,
    BlockHeader,
    Ledger,
    LedgerError,
    LedgerFileError,
    VerifyCause,
    ZERO_HASH,
    append_block,
    build_block,
    diff_against_peer,
    genesis,
    load_ledger,
    merkle_root,
    query_history,
    restore_state,
    save_ledger,
    verify_chain,
    verify_ledger_file,
)

from helpers import build_chain, make_txn


def _tamper_txn_url(block: Block, txn_index: int = 0) -> Block:
    """Same header, one character of one txn's Url flipped."""
    txn = block.txns[txn_index]
    flipped = AuditTransaction(
        txn.class_name, txn.created_date, txn.entity_id, txn.event_type,
        txn.txn_id, txn.session_id, txn.url[:-1] + chr(ord(txn.url[-1]) ^ 1),
        txn.user_id, txn.details)
    txns = list(block.txns)
    txns[txn_index] = flipped
    return Block(header=block.header, txns=tuple(txns))


class TestGenesis:
    def test_fixed_fields(self):
        g = genesis()
        assert g.header.height == 0
        assert g.header.prev_hash == ZERO_HASH
        assert g.txns == ()

    def test_digest_stable(self):
        assert genesis().digest == genesis().digest
        assert Block(header=genesis().header, txns=()).digest == genesis().digest

    def test_single_block_chain_verifies(self):
        assert verify_chain(Ledger()).ok


class TestMerkleRoot:
    def test_empty_is_zero(self):
        assert merkle_root(()) == ZERO_HASH

    def test_single_leaf_is_itself(self):
        leaf = hashlib.sha256(b"x").digest()
        assert merkle_root([leaf]) == leaf

    @staticmethod
    def _naive(leaves):
        """Independent recursive construction with the same padding rule."""
        if not leaves:
            return ZERO_HASH
        if len(leaves) == 1:
            return leaves[0]
        if len(leaves) % 2:
            leaves = list(leaves) + [leaves[-1]]
        half = []
        for i in range(0, len(leaves), 2):
            half.append(hashlib.sha256(leaves[i] + leaves[i + 1]).digest())
        return TestMerkleRoot._naive(half)

    @given(st.lists(st.binary(min_size=32, max_size=32), min_size=0, max_size=33))
    def test_matches_naive_recursion(self, leaves):
        assert merkle_root(leaves) == self._naive(leaves)

    def test_block_root_matches_recomputation(self):
        rng = random.Random(3)
        txns = [make_txn(rng, entity_id=i) for i in range(5)]
        block = build_block(txns, genesis(), proposer=1, now=10)
        assert block.header.txn_root == self._naive([t.digest for t in txns])


class TestBuildAppend:
    def test_links_to_previous(self):
        rng = random.Random(1)
        block = build_block([make_txn(rng)], genesis(), proposer=2, now=1234)
        assert block.header.height == 1
        assert block.header.prev_hash == genesis().digest
        assert block.header.proposer == 2
        assert block.header.timestamp_ms == 1234

    def test_empty_pending_rejected(self):
        with pytest.raises(LedgerError):
            build_block([], genesis(), proposer=0, now=1)

    def test_duplicate_txn_id_rejected(self):
        rng = random.Random(2)
        txn = make_txn(rng)
        with pytest.raises(LedgerError):
            build_block([txn, txn], genesis(), proposer=0, now=1)

    def test_append_extends(self):
        rng = random.Random(4)
        ledger = Ledger()
        block = build_block([make_txn(rng)], ledger.head, proposer=0, now=1)
        append_block(ledger, block)
        assert len(ledger) == 2
        assert ledger.head is block

    def test_append_stale_prev_rejected(self):
        rng = random.Random(5)
        ledger = build_chain(rng, 3)
        stale = build_block([make_txn(rng)], ledger.blocks[1], proposer=0, now=9)
        with pytest.raises(LedgerError):
            append_block(ledger, stale)

    def test_append_wrong_height_rejected(self):
        rng = random.Random(6)
        ledger = Ledger()
        block = build_block([make_txn(rng)], genesis(), proposer=0, now=1)
        skipped = Block(
            header=BlockHeader(height=5, prev_hash=block.header.prev_hash,
                               txn_root=block.header.txn_root,
                               timestamp_ms=1, proposer=0),
            txns=block.txns)
        with pytest.raises(LedgerError):
            append_block(ledger, skipped)

    def test_append_only_prefix_bytes_unchanged(self):
        rng = random.Random(7)
        ledger = build_chain(rng, 4)
        before = [b.canonical_bytes for b in ledger.blocks]
        block = build_block([make_txn(rng)], ledger.head, proposer=0, now=99_000)
        append_block(ledger, block)
        assert [b.canonical_bytes for b in ledger.blocks[:5]] == before

    @given(st.integers(0, 2**32 - 1), st.integers(1, 12))
    def test_generated_chains_verify(self, seed, length):
        ledger = build_chain(random.Random(seed), length)
        report = verify_chain(ledger)
        assert report.ok and report.first_bad_height is None


class TestVerifyChain:
    def test_txn_byte_flip_detected_as_root_mismatch(self):
        ledger = build_chain(random.Random(8), 10)
        ledger.blocks[4] = _tamper_txn_url(ledger.blocks[4])
        report = verify_chain(ledger)
        assert not report.ok
        assert report.first_bad_height == 4
        assert report.cause is VerifyCause.ROOT_MISMATCH

    def test_full_rewrite_detected_at_successor(self):
        rng = random.Random(9)
        ledger = build_chain(rng, 10)
        # Internally consistent replacement for height 4, but block 5 still
        # points at the original.
        replacement = build_block([make_txn(rng, entity_id=999)],
                                  ledger.blocks[3], proposer=3, now=123_456)
        ledger.blocks[4] = replacement
        report = verify_chain(ledger)
        assert not report.ok
        assert report.first_bad_height == 5
        assert report.cause is VerifyCause.HASH_MISMATCH

    def test_tampered_genesis_detected(self):
        ledger = build_chain(random.Random(10), 3)
        ledger.blocks[0] = Block(
            header=BlockHeader(0, ZERO_HASH, ZERO_HASH, 1, 0), txns=())
        report = verify_chain(ledger)
        assert not report.ok
        assert report.first_bad_height == 0

    def test_height_gap_detected(self):
        rng = random.Random(11)
        ledger = build_chain(rng, 3)
        block = ledger.blocks[2]
        ledger.blocks[2] = Block(
            header=BlockHeader(7, block.header.prev_hash, block.header.txn_root,
                               block.header.timestamp_ms, block.header.proposer),
            txns=block.txns)
        report = verify_chain(ledger)
        assert not report.ok
        assert report.first_bad_height == 2
        assert report.cause is VerifyCause.HEIGHT_GAP


class TestDiffAgainstPeer:
    def test_identical_chains(self):
        a = build_chain(random.Random(12), 5)
        b = build_chain(random.Random(12), 5)
        assert diff_against_peer(a, b) is None

    def test_prefix_is_not_a_fork(self):
        rng = random.Random(13)
        longer = build_chain(rng, 6)
        shorter = Ledger(longer.blocks[:4])
        assert diff_against_peer(shorter, longer) is None
        assert diff_against_peer(longer, shorter) is None

    def test_tamper_reveals_fork_point(self):
        a = build_chain(random.Random(14), 6)
        b = build_chain(random.Random(14), 6)
        b.blocks[3] = _tamper_txn_url(b.blocks[3])
        assert diff_against_peer(a, b) == 3

    def test_differing_genesis_is_an_error(self):
        a = Ledger()
        fake = Block(header=BlockHeader(0, ZERO_HASH, ZERO_HASH, 5, 0), txns=())
        b = Ledger([fake])
        with pytest.raises(LedgerError):
            diff_against_peer(a, b)


class TestQueryHistory:
    def test_untouched_entity_empty(self):
        ledger = build_chain(random.Random(15), 3)
        assert query_history(ledger, "No.Such", 1) == []

    def test_returns_chain_order(self):
        rng = random.Random(16)
        ledger = Ledger()
        txns = []
        for h in range(1, 4):
            txn = make_txn(rng, entity_name="Permits.Application", entity_id=5,
                           properties={"Status": (str(h - 1), str(h))})
            txns.append(txn)
            append_block(ledger, build_block([txn], ledger.head, 0, h * 100))
        assert query_history(ledger, "Permits.Application", 5) == txns

    def test_conformance_txn_found_by_key(self, conformance_doc):
        from auditchain.codec import decode_transaction

        txn = decode_transaction(conformance_doc)
        ledger = Ledger()
        append_block(ledger, build_block([txn], ledger.head, 0, 50))
        found = query_history(ledger, "SAGE.BL.InspSystem.PermitInspection", 161031)
        assert found == [txn]

    @given(st.integers(0, 2**32 - 1))
    def test_matches_linear_scan(self, seed):
        rng = random.Random(seed)
        ledger = build_chain(rng, 5, txns_per_block=3)
        expected = []
        for block in ledger.blocks:
            for txn in block.txns:
                if txn.class_name == "Sales.Order" and txn.entity_id == 7:
                    expected.append(txn)
        assert query_history(ledger, "Sales.Order", 7) == expected


class TestRestoreState:
    def test_insert_then_update(self):
        rng = random.Random(17)
        ledger = Ledger()
        insert = make_txn(rng, entity_id=1, event_type=0,
                          properties={"x": (None, "1")})
        update = make_txn(rng, entity_id=1, event_type=1,
                          properties={"x": ("1", "2")})
        append_block(ledger, build_block([insert], ledger.head, 0, 1))
        append_block(ledger, build_block([update], ledger.head, 0, 2))
        state = restore_state(ledger, "Sales.Order", 1)
        assert state.values == {"x": "2"}
        assert not state.deleted
        assert state.consistent

    def test_conformance_update_overwrites(self, conformance_doc):
        from auditchain.codec import decode_transaction

        rng = random.Random(18)
        txn = decode_transaction(conformance_doc)
        ledger = Ledger()
        insert = make_txn(
            rng, entity_name=txn.class_name, entity_id=txn.entity_id, event_type=0,
            properties={"DBVersion": (None, "9"),
                        "RequestComments": (None, "only be available after 2:00 pm"),
                        "LastUpdateDate": (None, "7/23/2018 1:18:07 PM")})
        append_block(ledger, build_block([insert], ledger.head, 0, 1))
        append_block(ledger, build_block([txn], ledger.head, 0, 2))
        state = restore_state(ledger, txn.class_name, txn.entity_id)
        assert state.values["DBVersion"] == "10"
        assert state.values["RequestComments"] == "only be available after 1:00 pm"
        assert state.consistent

    def test_delete_marks_and_keeps_values(self):
        rng = random.Random(19)
        ledger = Ledger()
        insert = make_txn(rng, entity_id=2, event_type=0,
                          properties={"x": (None, "1")})
        delete = make_txn(rng, entity_id=2, event_type=2,
                          properties={"x": ("1", None)})
        append_block(ledger, build_block([insert], ledger.head, 0, 1))
        append_block(ledger, build_block([delete], ledger.head, 0, 2))
        state = restore_state(ledger, "Sales.Order", 2)
        assert state.deleted
        assert state.values == {"x": "1"}
        assert state.consistent

    def test_history_starting_with_update_flagged(self):
        rng = random.Random(20)
        ledger = Ledger()
        update = make_txn(rng, entity_id=3, event_type=1,
                          properties={"x": ("1", "2")})
        append_block(ledger, build_block([update], ledger.head, 0, 1))
        state = restore_state(ledger, "Sales.Order", 3)
        assert state.values == {"x": "2"}
        assert not state.consistent

    @given(st.integers(0, 2**32 - 1))
    def test_matches_fold_oracle(self, seed):
        rng = random.Random(seed)
        ledger = Ledger()
        kinds = [0] + [rng.choice([0, 1, 2]) for _ in range(rng.randrange(1, 6))]
        value = 0
        for h, kind in enumerate(kinds, start=1):
            props = {}
            for name in ("a", "b"):
                if kind == 0:
                    props[name] = (None, str(value))
                elif kind == 1:
                    props[name] = (str(value - 1), str(value))
                else:
                    props[name] = (str(value - 1), None)
            txn = make_txn(rng, entity_id=9, event_type=kind, properties=props)
            append_block(ledger, build_block([txn], ledger.head, 0, h))
            value += 1
        # independent fold over the same transaction stream
        expected: dict[str, str | None] = {}
        deleted = False
        for block in ledger.blocks:
            for txn in block.txns:
                if txn.event_type == 0:
                    expected = {d.property_name: d.new_value for d in txn.details}
                    deleted = False
                elif txn.event_type == 1:
                    for d in txn.details:
                        expected[d.property_name] = d.new_value
                else:
                    for d in txn.details:
                        expected[d.property_name] = d.old_value
                    deleted = True
        state = restore_state(ledger, "Sales.Order", 9)
        assert state.values == expected
        assert state.deleted == deleted


class TestPersistence:
    def test_roundtrip(self, tmp_path):
        ledger = build_chain(random.Random(21), 6)
        path = str(tmp_path / "node.ledger")
        save_ledger(ledger, path)
        loaded = load_ledger(path)
        assert [b.digest for b in loaded.blocks] == [b.digest for b in ledger.blocks]
        assert verify_ledger_file(path).ok

    def test_truncated_file(self, tmp_path):
        ledger = build_chain(random.Random(22), 3)
        path = str(tmp_path / "node.ledger")
        save_ledger(ledger, path)
        data = open(path, "rb").read()
        open(path, "wb").write(data[:-10])
        with pytest.raises(LedgerFileError) as err:
            load_ledger(path)
        assert err.value.height == 3

    def test_corrupt_length_prefix(self, tmp_path):
        path = str(tmp_path / "node.ledger")
        open(path, "wb").write(b"xx\n{}\n")
        report = verify_ledger_file(path)
        assert not report.ok
        assert report.first_bad_height == 0
        assert report.cause is VerifyCause.TXN_INVALID

    def test_tampered_file_detected(self, tmp_path):
        ledger = build_chain(random.Random(23), 5)
        path = str(tmp_path / "node.ledger")
        save_ledger(ledger, path)
        data = bytearray(open(path, "rb").read())
        # Flip one byte inside the third record's payload region.
        offset = len(data) // 2
        data[offset] ^= 0x01
        open(path, "wb").write(bytes(data))
        report = verify_ledger_file(path)
        assert not report.ok
