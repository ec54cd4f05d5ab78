"""Replicated, tamper-evident audit log.

Entity-change events from a business application become audit entries
(:mod:`auditchain.capture`), serialize to a fixed JSON wire format
(:mod:`auditchain.codec`), and replicate across simulated peers
(:mod:`auditchain.sim`) through three-phase BFT consensus
(:mod:`auditchain.consensus`) into per-node hash-chained ledgers
(:mod:`auditchain.ledger`). An HTTP gateway (:mod:`auditchain.gateway`) is the
application edge; :mod:`auditchain.bench` reproduces the latency experiments and
attack/recovery drills.
"""

from .capture import (
    AuditDetail,
    AuditLogEntry,
    AuditPolicy,
    EntityChangeEvent,
    EventKind,
    PropertyDelta,
    is_auditable,
    on_post_delete,
    on_post_insert,
    on_post_update,
)
from .codec import (
    AuditTransaction,
    CodecError,
    DateMode,
    TxnDetail,
    WireDate,
    decode_transaction,
    encode_transaction,
    transaction_from_entry,
    txn_digest,
)
from .consensus import ConsensusConfig, Replica, max_faults, quorum_size
from .gateway import Gateway, SubmitReceipt, build_app
from .ledger import (
    Block,
    BlockHeader,
    Ledger,
    LedgerError,
    VerificationReport,
    append_block,
    build_block,
    diff_against_peer,
    genesis,
    load_ledger,
    query_history,
    restore_state,
    save_ledger,
    verify_chain,
)
from .sim import SimConfig, SimNetwork, spawn_network

__version__ = "0.1.0"
