"""REST backend: accounts and meters, scan-then-refine, confirm-to-ledger,
and the admin audit view.

Uploaded images land in content-addressed blob storage; scan runs the
configured OCR backend and refines against the meter's last confirmed (or
initial) reading; confirm drives the endorse-order-commit pipeline and only
then writes the mutable ReadingRecord, so the chain stays the source of
truth for readings.
"""

from __future__ import annotations

import hashlib
import threading
import time
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import httpx
from fastapi import Depends, FastAPI, Header, HTTPException, Query, Request
from fastapi.responses import JSONResponse, Response
from pydantic import BaseModel

from .config import ServiceConfig, TokenInfo
from .imaging import PNG_MAGIC, CorruptImage, UnsupportedFormat, decode_image
from .ledger import GeoPoint, LedgerCluster, Rejection, load_chain, write_chain
from .ocr import OcrError, build_backend, image_digest
from .refinement import MeterContext, refine
from .store import (
    CustomerAccount,
    DirBlobStore,
    FileStore,
    MemoryBlobStore,
    MemoryStore,
    MeterRecord,
    ReadingRecord,
)

ADMIN = frozenset({"admin"})
CUSTOMER = frozenset({"customer"})
ANY_ROLE = frozenset({"admin", "customer"})

# route -> allowed roles; the auth matrix test walks this table
ROUTE_POLICIES: list[tuple[str, str, frozenset]] = [
    ("POST", "/api/customers", ADMIN),
    ("GET", "/api/customers", ADMIN),
    ("GET", "/api/customers/{customer_id}", ADMIN),
    ("POST", "/api/meters", ADMIN),
    ("GET", "/api/meters", ANY_ROLE),
    ("GET", "/api/meters/{meter_id}/readings", ANY_ROLE),
    ("POST", "/api/scan", CUSTOMER),
    ("POST", "/api/confirm", CUSTOMER),
    ("GET", "/api/admin/readings", ADMIN),
    ("GET", "/api/ledger/status", ANY_ROLE),
    ("GET", "/api/images/{digest}", ANY_ROLE),
]


@dataclass(frozen=True)
class Principal:
    role: str
    customer_id: str | None


class GeoBody(BaseModel):
    lat: float
    lon: float


class CustomerCreate(BaseModel):
    customer_id: str
    name: str
    address: str = ""
    contact: str = ""
    token: str | None = None


class MeterCreate(BaseModel):
    meter_id: str
    customer_id: str
    register_length: int
    initial_reading: str
    geo: GeoBody
    max_delta: int = 10000


class ConfirmBody(BaseModel):
    meter_id: str
    reading: str
    image_digest: str
    geo: GeoBody


class MeterService:
    """Everything behind the routes; one instance per app."""

    def __init__(self, config: ServiceConfig):
        self.config = config
        if config.data_dir:
            data_dir = Path(config.data_dir)
            data_dir.mkdir(parents=True, exist_ok=True)
            self.store = FileStore(data_dir / "store.jsonl")
            self.blobs = DirBlobStore(data_dir / "blobs")
            self.chain_path: Path | None = data_dir / "chain.bin"
        else:
            self.store = MemoryStore()
            self.blobs = MemoryBlobStore()
            self.chain_path = None
        self.tokens: dict[str, TokenInfo] = dict(config.tokens)
        self.backend = build_backend(config.backends[config.scan_backend])
        self.cluster = LedgerCluster(batch_size=config.batch_size, seed=config.ledger_seed)
        self.ledger_lock = threading.RLock()
        self.scan_candidates: dict[tuple[str, str], str] = {}
        self._persisted_height = -1
        self._stop = threading.Event()
        self._restore()
        if config.time_mode == "real":
            threading.Thread(target=self._flush_loop, daemon=True).start()

    # -- startup / persistence -------------------------------------------

    def _restore(self) -> None:
        for meter in self.store.list_meters():
            self.cluster.register_meter(meter.meter_id, meter.initial_reading)
        if self.chain_path and self.chain_path.exists():
            blocks = load_chain(self.chain_path)
            for block in blocks[1:]:
                for node in self.cluster.nodes:
                    node.append_block(block)
            self._persisted_height = self.cluster.customer.state.height

    def persist_chain(self) -> None:
        if not self.chain_path:
            return
        chain = self.cluster.customer.state.chain
        if self._persisted_height < 0:
            write_chain(self.chain_path, chain)
        else:
            import struct

            with open(self.chain_path, "ab") as f:
                for block in chain[self._persisted_height + 1 :]:
                    record = block.to_bytes()
                    f.write(struct.pack(">I", len(record)) + record)
        self._persisted_height = chain[-1].height

    def _flush_loop(self) -> None:
        while not self._stop.wait(self.config.flush_timeout):
            with self.ledger_lock:
                if self.cluster.orderer.pending:
                    self.cluster.flush()

    def shutdown(self) -> None:
        self._stop.set()

    # -- auth --------------------------------------------------------------

    def authenticate(self, authorization: str | None) -> Principal:
        if not authorization or not authorization.startswith("Bearer "):
            raise HTTPException(401, "missing bearer token")
        info = self.tokens.get(authorization[len("Bearer ") :])
        if info is None:
            raise HTTPException(401, "unknown token")
        return Principal(info.role, info.customer_id)

    # -- domain helpers ------------------------------------------------------

    def owned_meter(self, meter_id: str, principal: Principal) -> MeterRecord:
        meter = self.store.get_meter(meter_id)
        if meter is None:
            raise HTTPException(404, "unknown meter")
        if principal.role == "customer" and meter.customer_id != principal.customer_id:
            raise HTTPException(404, "unknown meter")
        return meter

    def last_reading_for(self, meter: MeterRecord) -> str:
        with self.ledger_lock:
            last = self.cluster.customer.effective_last(meter.meter_id)
        return last if last is not None else meter.initial_reading

    def confirm_reading(self, meter: MeterRecord, reading: str, digest: str, geo: GeoPoint) -> tuple[int, str]:
        """Drive propose -> endorse -> submit -> commit; returns (height, tx_id)."""
        timestamp = int(time.time() * 1000)
        with self.ledger_lock:
            tx = self.cluster.customer.create_tx(meter.meter_id, reading, timestamp, digest, geo)
            self.cluster.customer.propose(tx)
            self.cluster.bus.run_until_idle()
            if self.config.time_mode == "logical":
                self.cluster.flush()
            status = self.cluster.status(tx.tx_id)
        if status[0] == "rejected":
            raise HTTPException(409, {"error": "LedgerRejected", "reason": status[1]})
        deadline = time.monotonic() + self.config.commit_timeout
        while status[0] != "committed" and time.monotonic() < deadline:
            time.sleep(0.02)
            with self.ledger_lock:
                status = self.cluster.status(tx.tx_id)
        if status[0] == "rejected":
            raise HTTPException(409, {"error": "LedgerRejected", "reason": status[1]})
        if status[0] != "committed":
            raise HTTPException(504, "ledger commit timed out")
        with self.ledger_lock:
            self.persist_chain()
        return status[1], tx.tx_id


def reconcile(service: MeterService) -> list[str]:
    """Cross-check committed reading records against chain transactions.

    Returns human-readable mismatch lines; an empty list means every record
    pairs 1:1 with a chain tx on (meter_id, reading, image_digest).
    """
    with service.ledger_lock:
        chain = list(service.cluster.customer.state.chain)
    chain_counts = Counter(
        (tx.meter_id, tx.reading, tx.image_digest) for block in chain for tx, _ in block.txs
    )
    record_counts = Counter(
        (r.meter_id, r.reading, r.image_digest) for r in service.store.readings
    )
    mismatches = []
    for key in sorted(set(chain_counts) | set(record_counts)):
        have, want = record_counts[key], chain_counts[key]
        if have != want:
            mismatches.append(f"{key}: {have} store record(s) vs {want} chain tx(es)")
    return mismatches


def create_app(config: ServiceConfig | None = None) -> FastAPI:
    service = MeterService(config or ServiceConfig())
    app = FastAPI(title="meterpipe")
    app.state.service = service

    def guard(roles: frozenset):
        def dependency(authorization: str | None = Header(default=None)) -> Principal:
            principal = service.authenticate(authorization)
            if principal.role not in roles:
                raise HTTPException(403, "role not allowed on this route")
            return principal

        return Depends(dependency)

    # -- customers ---------------------------------------------------------

    @app.post("/api/customers", status_code=201)
    def create_customer(body: CustomerCreate, principal: Principal = guard(ADMIN)):
        if service.store.get_customer(body.customer_id):
            raise HTTPException(409, "customer already exists")
        token_hash = None
        if body.token:
            token_hash = hashlib.sha256(body.token.encode()).hexdigest()
            service.tokens[body.token] = TokenInfo("customer", body.customer_id)
        account = CustomerAccount(
            customer_id=body.customer_id,
            name=body.name,
            address=body.address,
            contact=body.contact,
            auth_token_hash=token_hash,
        )
        service.store.add_customer(account)
        return account.public_dict()

    @app.get("/api/customers")
    def list_customers(principal: Principal = guard(ADMIN)):
        return {"customers": [c.public_dict() for c in service.store.list_customers()]}

    @app.get("/api/customers/{customer_id}")
    def get_customer(customer_id: str, principal: Principal = guard(ADMIN)):
        account = service.store.get_customer(customer_id)
        if account is None:
            raise HTTPException(404, "unknown customer")
        return account.public_dict()

    # -- meters --------------------------------------------------------------

    @app.post("/api/meters", status_code=201)
    def create_meter(body: MeterCreate, principal: Principal = guard(ADMIN)):
        if service.store.get_customer(body.customer_id) is None:
            raise HTTPException(404, "unknown customer")
        if service.store.get_meter(body.meter_id):
            raise HTTPException(409, "meter already exists")
        if not 1 <= body.register_length <= 12:
            raise HTTPException(422, "register_length must lie in [1, 12]")
        if not body.initial_reading.isdigit() or len(body.initial_reading) != body.register_length:
            raise HTTPException(422, "initial_reading must be register_length digits")
        if body.max_delta < 0:
            raise HTTPException(422, "max_delta must be non-negative")
        meter = MeterRecord(
            meter_id=body.meter_id,
            customer_id=body.customer_id,
            register_length=body.register_length,
            max_delta=body.max_delta,
            initial_reading=body.initial_reading,
            geo=GeoPoint(body.geo.lat, body.geo.lon),
        )
        service.store.add_meter(meter)
        with service.ledger_lock:
            service.cluster.register_meter(meter.meter_id, meter.initial_reading)
        return meter.public_dict()

    @app.get("/api/meters")
    def list_meters(principal: Principal = guard(ANY_ROLE)):
        scope = None if principal.role == "admin" else principal.customer_id
        return {"meters": [m.public_dict() for m in service.store.list_meters(scope)]}

    @app.get("/api/meters/{meter_id}/readings")
    def meter_readings(meter_id: str, principal: Principal = guard(ANY_ROLE)):
        meter = service.owned_meter(meter_id, principal)
        rows = service.store.list_readings(meter_id=meter.meter_id)
        return {"records": [r.public_dict() for r in rows]}

    # -- scan / confirm -------------------------------------------------------

    @app.post("/api/scan")
    async def scan(
        request: Request,
        meter_id: str = "",
        lat: float = 0.0,
        lon: float = 0.0,
        principal: Principal = guard(CUSTOMER),
    ):
        content_type = request.headers.get("content-type", "")
        if content_type.startswith("application/json"):
            if not service.config.allow_url_ingest:
                raise HTTPException(400, "fetch-by-URL ingest is disabled")
            payload = await request.json()
            meter_id = payload.get("meter_id", meter_id)
            url = payload.get("image_url")
            if not url:
                raise HTTPException(422, "image_url required")
            try:
                fetched = httpx.get(url, timeout=10.0)
                fetched.raise_for_status()
                body = fetched.content
            except httpx.HTTPError as exc:
                raise HTTPException(502, f"could not fetch image: {exc}")
        else:
            body = await request.body()
        meter = service.owned_meter(meter_id, principal)
        if not body:
            raise HTTPException(415, "empty image body")
        try:
            img = decode_image(body)
        except (UnsupportedFormat, CorruptImage) as exc:
            raise HTTPException(415, f"undecodable image: {exc}")
        digest = image_digest(body)
        service.blobs.put(digest, body)
        last = service.last_reading_for(meter)

        base = {
            "image_digest": digest,
            "register_length": meter.register_length,
            "meter_id": meter.meter_id,
        }
        try:
            detections = service.backend.detect(img, source_digest=digest)
        except OcrError as exc:
            # backend outage still yields a usable fallback candidate
            return JSONResponse(
                status_code=502,
                content={
                    **base,
                    "candidate_reading": last,
                    "fallback": True,
                    "detections": [],
                    "candidates": [],
                    "error": f"backend unavailable: {exc}",
                },
            )
        result = refine(detections, MeterContext(last, meter.max_delta))
        service.scan_candidates[(meter.meter_id, digest)] = result.reading
        return {
            **base,
            "candidate_reading": result.reading,
            "fallback": result.fallback,
            "detections": [
                {
                    "text": d.text,
                    "confidence": d.confidence,
                    "bbox": {"x": d.bbox.x, "y": d.bbox.y, "w": d.bbox.w, "h": d.bbox.h},
                }
                for d in detections
            ],
            "candidates": [
                {"token": c.token, "delta": c.delta, "confidence": c.confidence}
                for c in result.candidates
            ],
        }

    @app.post("/api/confirm")
    def confirm(body: ConfirmBody, principal: Principal = guard(CUSTOMER)):
        meter = service.owned_meter(body.meter_id, principal)
        if not body.reading.isdigit() or len(body.reading) != meter.register_length:
            raise HTTPException(422, "reading must be register_length digits")
        if not service.blobs.has(body.image_digest):
            raise HTTPException(404, "image digest not stored; scan first")
        geo = GeoPoint(body.geo.lat, body.geo.lon)
        height, tx_id = service.confirm_reading(meter, body.reading, body.image_digest, geo)
        candidate = service.scan_candidates.get((meter.meter_id, body.image_digest))
        record = service.store.add_reading(
            ReadingRecord(
                meter_id=meter.meter_id,
                reading=body.reading,
                timestamp=int(time.time() * 1000),
                image_digest=body.image_digest,
                geo=geo,
                source="scanned" if candidate == body.reading else "manual_override",
                ledger_height=height,
            )
        )
        return {"ledger_height": height, "tx_id": tx_id, "source": record.source}

    # -- admin audit / ledger -----------------------------------------------

    @app.get("/api/admin/readings")
    def admin_readings(
        customer_id: str | None = None,
        page: int = Query(default=1, ge=1),
        page_size: int = Query(default=20, ge=1, le=200),
        principal: Principal = guard(ADMIN),
    ):
        rows = service.store.list_readings(customer_id=customer_id)
        start = (page - 1) * page_size
        items = []
        for r in rows[start : start + page_size]:
            meter = service.store.get_meter(r.meter_id)
            items.append(
                {
                    **r.public_dict(),
                    "customer_id": meter.customer_id if meter else None,
                    "image_url": f"/api/images/{r.image_digest}",
                }
            )
        return {"records": items, "total": len(rows), "page": page, "page_size": page_size}

    @app.get("/api/ledger/status")
    def ledger_status(principal: Principal = guard(ANY_ROLE)):
        with service.ledger_lock:
            state = service.cluster.customer.state
            return {"height": state.height, "tx_count": state.tx_count()}

    @app.get("/api/images/{digest}")
    def get_image(digest: str, principal: Principal = guard(ANY_ROLE)):
        data = service.blobs.get(digest)
        if data is None:
            raise HTTPException(404, "unknown image digest")
        media = "image/png" if data[:8] == PNG_MAGIC else "application/octet-stream"
        return Response(content=data, media_type=media)

    if service.config.static_dir and Path(service.config.static_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(service.config.static_dir), html=True), name="ui")

    return app
