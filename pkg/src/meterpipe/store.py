"""Accounts, meters, and reading records: in-memory or file-backed.

The file store is an append-only JSONL event log replayed at startup and
compacted on demand, plus a content-addressed blob directory for uploaded
images. Record semantics are identical across both implementations; tests
use the in-memory pair.
"""

from __future__ import annotations

import json
import threading
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .ledger import GeoPoint


@dataclass(frozen=True)
class CustomerAccount:
    customer_id: str
    name: str
    address: str = ""
    contact: str = ""
    auth_token_hash: str | None = None
    meters: tuple[str, ...] = ()

    def public_dict(self) -> dict:
        d = asdict(self)
        d.pop("auth_token_hash")  # hashes never leave the service
        d["meters"] = list(self.meters)
        return d


@dataclass(frozen=True)
class MeterRecord:
    meter_id: str
    customer_id: str
    register_length: int
    max_delta: int
    initial_reading: str
    geo: GeoPoint

    def public_dict(self) -> dict:
        d = asdict(self)
        d["geo"] = {"lat": self.geo.lat, "lon": self.geo.lon}
        return d


@dataclass(frozen=True)
class ReadingRecord:
    meter_id: str
    reading: str
    timestamp: int
    image_digest: str
    geo: GeoPoint
    source: str  # "scanned" | "manual_override"
    ledger_height: int
    seq: int = 0

    def public_dict(self) -> dict:
        d = asdict(self)
        d["geo"] = {"lat": self.geo.lat, "lon": self.geo.lon}
        return d


def _geo_from(d: dict) -> GeoPoint:
    return GeoPoint(float(d["lat"]), float(d["lon"]))


class MemoryStore:
    """Dict-backed store; writes are serialized by one lock."""

    def __init__(self):
        self._lock = threading.Lock()
        self.customers: dict[str, CustomerAccount] = {}
        self.meters: dict[str, MeterRecord] = {}
        self.readings: list[ReadingRecord] = []
        self._seq = 0

    # customers
    def add_customer(self, account: CustomerAccount) -> None:
        with self._lock:
            existing = self.customers.get(account.customer_id)
            if existing and existing.meters and not account.meters:
                account = replace(account, meters=existing.meters)
            self.customers[account.customer_id] = account
            self._persist("customer", asdict(account))

    def get_customer(self, customer_id: str) -> CustomerAccount | None:
        return self.customers.get(customer_id)

    def list_customers(self) -> list[CustomerAccount]:
        return sorted(self.customers.values(), key=lambda c: c.customer_id)

    # meters
    def add_meter(self, meter: MeterRecord) -> None:
        with self._lock:
            self.meters[meter.meter_id] = meter
            self._attach_to_customer(meter)
            self._persist("meter", asdict(meter))

    def _attach_to_customer(self, meter: MeterRecord) -> None:
        account = self.customers[meter.customer_id]
        if meter.meter_id not in account.meters:
            self.customers[meter.customer_id] = replace(
                account, meters=account.meters + (meter.meter_id,)
            )

    def get_meter(self, meter_id: str) -> MeterRecord | None:
        return self.meters.get(meter_id)

    def list_meters(self, customer_id: str | None = None) -> list[MeterRecord]:
        meters = sorted(self.meters.values(), key=lambda m: m.meter_id)
        if customer_id is None:
            return meters
        return [m for m in meters if m.customer_id == customer_id]

    # readings
    def add_reading(self, record: ReadingRecord) -> ReadingRecord:
        with self._lock:
            self._seq += 1
            stamped = replace(record, seq=self._seq)
            self.readings.append(stamped)
            self._persist("reading", asdict(stamped))
            return stamped

    def list_readings(
        self, customer_id: str | None = None, meter_id: str | None = None
    ) -> list[ReadingRecord]:
        """Newest first, with a stable order for equal timestamps."""
        rows = self.readings
        if meter_id is not None:
            rows = [r for r in rows if r.meter_id == meter_id]
        if customer_id is not None:
            owned = {m.meter_id for m in self.list_meters(customer_id)}
            rows = [r for r in rows if r.meter_id in owned]
        return sorted(rows, key=lambda r: (-r.timestamp, -r.seq))

    def _persist(self, kind: str, payload: dict) -> None:
        pass


class FileStore(MemoryStore):
    """Append-log store surviving restarts; call compact() to rewrite the log."""

    def __init__(self, path: str | Path):
        super().__init__()
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if self.path.exists():
            self._replay()

    def _replay(self) -> None:
        for line in self.path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            event = json.loads(line)
            kind, data = event["kind"], event["data"]
            if kind == "customer":
                data["meters"] = tuple(data.get("meters", ()))
                self.customers[data["customer_id"]] = CustomerAccount(**data)
            elif kind == "meter":
                data["geo"] = _geo_from(data["geo"])
                meter = MeterRecord(**data)
                self.meters[meter.meter_id] = meter
                self._attach_to_customer(meter)
            elif kind == "reading":
                data["geo"] = _geo_from(data["geo"])
                record = ReadingRecord(**data)
                self.readings.append(record)
                self._seq = max(self._seq, record.seq)

    def _persist(self, kind: str, payload: dict) -> None:
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(json.dumps({"kind": kind, "data": payload}) + "\n")
            f.flush()

    def compact(self) -> None:
        """Rewrite the log so it holds exactly the live state."""
        with self._lock:
            tmp = self.path.with_suffix(".tmp")
            with open(tmp, "w", encoding="utf-8") as f:
                for account in self.list_customers():
                    f.write(json.dumps({"kind": "customer", "data": asdict(account)}) + "\n")
                for meter in self.list_meters():
                    f.write(json.dumps({"kind": "meter", "data": asdict(meter)}) + "\n")
                for record in self.readings:
                    f.write(json.dumps({"kind": "reading", "data": asdict(record)}) + "\n")
            tmp.replace(self.path)


class MemoryBlobStore:
    """Content-addressed image bytes, keyed by their digest."""

    def __init__(self):
        self._blobs: dict[str, bytes] = {}

    def put(self, digest: str, data: bytes) -> None:
        self._blobs[digest] = data

    def get(self, digest: str) -> bytes | None:
        return self._blobs.get(digest)

    def has(self, digest: str) -> bool:
        return digest in self._blobs


class DirBlobStore(MemoryBlobStore):
    """Blob-per-file directory layout; filenames are the digests."""

    def __init__(self, directory: str | Path):
        super().__init__()
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def put(self, digest: str, data: bytes) -> None:
        (self.directory / digest).write_bytes(data)

    def get(self, digest: str) -> bytes | None:
        path = self.directory / digest
        return path.read_bytes() if path.is_file() else None

    def has(self, digest: str) -> bool:
        return (self.directory / digest).is_file()
