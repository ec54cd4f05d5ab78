"""Application-facing gateway bound to a single node.

Accepts wire-format transaction documents, feeds them into the node's mempool
(broadcast and consensus then replicate them), and exposes the node's committed
history and chain verification. The gateway has no write path to the ledger other
than consensus commit.

:func:`build_app` wraps a gateway in the HTTP routes; in simulation mode the same
methods are called in-process.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse

from .codec import AuditTransaction, CodecError, decode_transaction, encode_transaction
from .ledger import VerificationReport, query_history, verify_chain
from .sim import SimNetwork

__all__ = ["Gateway", "SubmitReceipt", "build_app"]


@dataclass(frozen=True)
class SubmitReceipt:
    txn_id: str | None
    digest: str | None
    status: str  # Accepted | Duplicate | Rejected
    reason: str | None = None

    def wire_obj(self) -> dict[str, Any]:
        return {"txn_id": self.txn_id, "digest": self.digest,
                "status": self.status, "reason": self.reason}


class Gateway:
    def __init__(self, network: SimNetwork, node_id: int) -> None:
        if not 0 <= node_id < len(network.nodes):
            raise ValueError(f"gateway cannot bind to unknown node {node_id}")
        self.network = network
        self.node_id = node_id
        self._accepted: set[str] = set()

    @property
    def _node(self):
        return self.network.nodes[self.node_id]

    def create_audit(self, body: bytes) -> SubmitReceipt:
        """Decode, deduplicate, and submit one transaction to the bound node."""
        try:
            txn = decode_transaction(body)
        except CodecError as exc:
            return SubmitReceipt(None, None, "Rejected", str(exc))
        if txn.txn_id in self._accepted or self._node.has_seen(txn.txn_id):
            return SubmitReceipt(txn.txn_id, txn.digest.hex(), "Duplicate")
        self._accepted.add(txn.txn_id)
        self.network.submit_transaction(self.node_id, txn, self.network.clock)
        return SubmitReceipt(txn.txn_id, txn.digest.hex(), "Accepted")

    def get_history(self, entity_name: str, entity_id: int) -> list[AuditTransaction]:
        """Committed transactions for the entity, in chain order; pending excluded."""
        return query_history(self._node.ledger, entity_name, entity_id)

    def get_verification(self) -> VerificationReport:
        return verify_chain(self._node.ledger)


def build_app(gateway: Gateway, drive_to_quiescence: bool = True) -> FastAPI:
    """HTTP routes over a gateway.

    With ``drive_to_quiescence`` the simulated network is drained after each
    submission, so a committed transaction is visible to queries as soon as the
    request returns.
    """
    app = FastAPI(title="auditchain gateway")

    @app.post("/createAudit")
    async def create_audit(request: Request) -> JSONResponse:
        body = await request.body()
        receipt = gateway.create_audit(body)
        if receipt.status == "Rejected":
            return JSONResponse(receipt.wire_obj(), status_code=400)
        if receipt.status == "Duplicate":
            return JSONResponse(receipt.wire_obj(), status_code=409)
        if drive_to_quiescence:
            gateway.network.run_until_quiescent()
        return JSONResponse(receipt.wire_obj())

    @app.get("/audit/{class_name}/{entity_id}")
    def get_history(class_name: str, entity_id: int) -> Response:
        # Byte-exact wire documents, not a re-serialization of them.
        txns = gateway.get_history(class_name, entity_id)
        body = b"[" + b",".join(encode_transaction(t) for t in txns) + b"]"
        return Response(content=body, media_type="application/json")

    @app.get("/chain/verify")
    def get_verification() -> JSONResponse:
        return JSONResponse(gateway.get_verification().wire_obj())

    return app
