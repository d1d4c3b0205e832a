"""Endorse, order, and commit meter readings on a three-node hash chain.

Customer, endorser, and orderer nodes are single-threaded state machines
exchanging messages over a simulated bus driven by a logical-time scheduler.
Every transaction and block has one canonical byte encoding (fixed field
order, length-prefixed strings, big-endian fixed-width integers), so chains
are comparable byte for byte across nodes and runs.

Signatures are keyed MACs with per-node secrets held in a shared keyring;
the signing surface is small enough that an asymmetric scheme can drop in.
"""

from __future__ import annotations

import hashlib
import hmac
import random
import struct
from dataclasses import dataclass
from heapq import heappop, heappush
from pathlib import Path

GENESIS_PREV = "0" * 64

NODE_CUSTOMER = "customer"
NODE_ENDORSER = "endorser"
NODE_ORDERER = "orderer"

# rejection reasons
BAD_SIG = "BadSig"
UNKNOWN_METER = "UnknownMeter"
NON_MONOTONIC = "NonMonotonic"
DUPLICATE = "Duplicate"
BAD_ENDORSEMENT = "BadEndorsement"
CHAIN_MISMATCH = "ChainMismatch"
BAD_DIGEST = "BadDigest"


class InvalidSignature(Exception):
    """Transaction signature missing or wrong at propose time."""


class Rejection(Exception):
    """A node refused a transaction or block; carries the reason code."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class CorruptChain(Exception):
    """Serialized chain record failed to parse; carries the bad height."""

    def __init__(self, height: int, detail: str = ""):
        super().__init__(f"block {height} unparseable: {detail}")
        self.height = height


# ---------------------------------------------------------------------------
# canonical codec


def _enc_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack(">I", len(raw)) + raw


def _enc_bytes(b: bytes) -> bytes:
    return struct.pack(">I", len(b)) + b


def _enc_u64(v: int) -> bytes:
    return struct.pack(">Q", v)


def _enc_f64(v: float) -> bytes:
    return struct.pack(">d", v)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ValueError("record truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self.take(8))[0]

    def f64(self) -> float:
        return struct.unpack(">d", self.take(8))[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")

    def blob(self) -> bytes:
        return self.take(self.u32())

    def done(self) -> bool:
        return self.pos == len(self.data)


# ---------------------------------------------------------------------------
# keys and signatures


class Keyring:
    """Per-node MAC secrets; every node holds the ring to verify its peers."""

    def __init__(self, keys: dict[str, bytes]):
        self._keys = dict(keys)

    @classmethod
    def generate(cls, node_ids: tuple[str, ...], seed: int = 0) -> "Keyring":
        return cls(
            {nid: hashlib.sha256(f"meterpipe-key:{nid}:{seed}".encode()).digest() for nid in node_ids}
        )

    def sign(self, node_id: str, data: bytes) -> bytes:
        return hmac.new(self._keys[node_id], data, hashlib.sha256).digest()

    def verify(self, node_id: str, data: bytes, signature: bytes) -> bool:
        if node_id not in self._keys:
            return False
        return hmac.compare_digest(self.sign(node_id, data), signature)


def default_keyring(seed: int = 0) -> Keyring:
    return Keyring.generate((NODE_CUSTOMER, NODE_ENDORSER, NODE_ORDERER), seed)


# ---------------------------------------------------------------------------
# wire types


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float


@dataclass(frozen=True)
class ReadingTx:
    tx_id: str
    meter_id: str
    reading: str
    timestamp: int  # UTC milliseconds
    image_digest: str
    geo: GeoPoint
    submitter_sig: bytes = b""

    def payload_bytes(self) -> bytes:
        return (
            _enc_str(self.tx_id)
            + _enc_str(self.meter_id)
            + _enc_str(self.reading)
            + _enc_u64(self.timestamp)
            + _enc_str(self.image_digest)
            + _enc_f64(self.geo.lat)
            + _enc_f64(self.geo.lon)
        )

    def canonical_bytes(self) -> bytes:
        return self.payload_bytes() + _enc_bytes(self.submitter_sig)

    @classmethod
    def read_from(cls, r: _Reader) -> "ReadingTx":
        return cls(
            tx_id=r.string(),
            meter_id=r.string(),
            reading=r.string(),
            timestamp=r.u64(),
            image_digest=r.string(),
            geo=GeoPoint(r.f64(), r.f64()),
            submitter_sig=r.blob(),
        )


@dataclass(frozen=True)
class Endorsement:
    tx_id: str
    endorser_id: str
    endorser_sig: bytes

    def canonical_bytes(self) -> bytes:
        return _enc_str(self.tx_id) + _enc_str(self.endorser_id) + _enc_bytes(self.endorser_sig)

    @classmethod
    def read_from(cls, r: _Reader) -> "Endorsement":
        return cls(tx_id=r.string(), endorser_id=r.string(), endorser_sig=r.blob())


@dataclass(frozen=True)
class Block:
    height: int
    prev_digest: str
    txs: tuple[tuple[ReadingTx, Endorsement], ...]
    orderer_sig: bytes
    digest: str

    def content_bytes(self) -> bytes:
        parts = [_enc_u64(self.height), bytes.fromhex(self.prev_digest), struct.pack(">I", len(self.txs))]
        for tx, endorsement in self.txs:
            parts.append(tx.canonical_bytes())
            parts.append(endorsement.canonical_bytes())
        return b"".join(parts)

    def to_bytes(self) -> bytes:
        return self.content_bytes() + _enc_bytes(self.orderer_sig)

    @staticmethod
    def compute_digest(content: bytes, orderer_sig: bytes) -> str:
        return hashlib.sha256(content + _enc_bytes(orderer_sig)).hexdigest()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Block":
        r = _Reader(data)
        height = r.u64()
        prev_digest = r.take(32).hex()
        count = r.u32()
        txs = []
        for _ in range(count):
            tx = ReadingTx.read_from(r)
            endorsement = Endorsement.read_from(r)
            txs.append((tx, endorsement))
        orderer_sig = r.blob()
        if not r.done():
            raise ValueError("trailing bytes after block")
        block = cls(height, prev_digest, tuple(txs), orderer_sig, "")
        digest = cls.compute_digest(block.content_bytes(), orderer_sig)
        return cls(height, prev_digest, tuple(txs), orderer_sig, digest)


def make_block(
    height: int,
    prev_digest: str,
    txs: tuple[tuple[ReadingTx, Endorsement], ...],
    keyring: Keyring,
    orderer_id: str = NODE_ORDERER,
) -> Block:
    unsigned = Block(height, prev_digest, txs, b"", "")
    content = unsigned.content_bytes()
    sig = keyring.sign(orderer_id, content)
    return Block(height, prev_digest, txs, sig, Block.compute_digest(content, sig))


def make_genesis(keyring: Keyring) -> Block:
    return make_block(0, GENESIS_PREV, (), keyring)


# ---------------------------------------------------------------------------
# ledger state and verification


class LedgerState:
    """One node's copy: the chain plus the derived per-meter last readings."""

    def __init__(self, genesis: Block):
        self.chain: list[Block] = [genesis]
        self.last_reading: dict[str, str] = {}

    @property
    def tip(self) -> Block:
        return self.chain[-1]

    @property
    def height(self) -> int:
        return self.tip.height

    def tx_count(self) -> int:
        return sum(len(b.txs) for b in self.chain)

    def rebuild_last_readings(self) -> dict[str, str]:
        rebuilt: dict[str, str] = {}
        for block in self.chain:
            for tx, _ in block.txs:
                rebuilt[tx.meter_id] = tx.reading
        return rebuilt


def _verify_block_contents(block: Block, keyring: Keyring) -> str | None:
    if block.digest != Block.compute_digest(block.content_bytes(), block.orderer_sig):
        return BAD_DIGEST
    if not keyring.verify(NODE_ORDERER, block.content_bytes(), block.orderer_sig):
        return BAD_SIG
    for tx, endorsement in block.txs:
        if not keyring.verify(NODE_CUSTOMER, tx.payload_bytes(), tx.submitter_sig):
            return BAD_SIG
        if endorsement.tx_id != tx.tx_id:
            return BAD_ENDORSEMENT
        if not keyring.verify(endorsement.endorser_id, tx.canonical_bytes(), endorsement.endorser_sig):
            return BAD_SIG
    return None


def verify_chain(chain: list[Block], keyring: Keyring) -> int | None:
    """Re-verify linkage, digests, signatures, and per-meter monotonicity.

    Returns None for a pristine chain, else the first bad height.
    """
    last_seen: dict[str, int] = {}
    for i, block in enumerate(chain):
        if block.height != i:
            return i
        expected_prev = GENESIS_PREV if i == 0 else chain[i - 1].digest
        if block.prev_digest != expected_prev:
            return i
        if _verify_block_contents(block, keyring) is not None:
            return i
        for tx, _ in block.txs:
            if not tx.reading.isdigit():
                return i
            value = int(tx.reading)
            if value < last_seen.get(tx.meter_id, 0):
                return i
            last_seen[tx.meter_id] = value
    return None


def verify_chain_records(records: list[bytes], keyring: Keyring) -> int | None:
    """Verify serialized block records; an unparseable record is bad at its index."""
    blocks = []
    for i, record in enumerate(records):
        try:
            blocks.append(Block.from_bytes(record))
        except (ValueError, struct.error):
            return i
    return verify_chain(blocks, keyring)


# ---------------------------------------------------------------------------
# chain persistence (append-only file of length-prefixed canonical blocks)


def write_chain(path: str | Path, chain: list[Block]) -> None:
    with open(path, "wb") as f:
        for block in chain:
            record = block.to_bytes()
            f.write(struct.pack(">I", len(record)) + record)


def read_chain_records(path: str | Path) -> list[bytes]:
    data = Path(path).read_bytes()
    records = []
    pos = 0
    while pos < len(data):
        if pos + 4 > len(data):
            raise CorruptChain(len(records), "truncated length prefix")
        (length,) = struct.unpack(">I", data[pos : pos + 4])
        pos += 4
        if pos + length > len(data):
            raise CorruptChain(len(records), "truncated record")
        records.append(data[pos : pos + length])
        pos += length
    return records


def load_chain(path: str | Path) -> list[Block]:
    blocks = []
    for i, record in enumerate(read_chain_records(path)):
        try:
            blocks.append(Block.from_bytes(record))
        except (ValueError, struct.error) as exc:
            raise CorruptChain(i, str(exc)) from exc
    return blocks


# ---------------------------------------------------------------------------
# simulated bus


class SimBus:
    """Logical-time bus with seeded per-link drops and stop-and-wait resends.

    Deliveries are dispatched in (time, sequence) order, so a fixed seed
    yields one deterministic interleaving. Dropped messages are retransmitted
    until acknowledged (bounded retries), and receivers de-duplicate, giving
    exactly-once handler invocation per message id.
    """

    def __init__(
        self,
        seed: int = 0,
        drop_rate: float = 0.0,
        delay: int = 1,
        retry_timeout: int = 20,
        max_retries: int = 60,
    ):
        self._rng = random.Random(seed)
        self.drop_rate = drop_rate
        self.delay = delay
        self.retry_timeout = retry_timeout
        self.max_retries = max_retries
        self.now = 0
        self._seq = 0
        self._events: list[tuple[int, int, tuple]] = []
        self._handlers: dict[str, object] = {}
        self._acked: set[int] = set()
        self._seen: dict[str, set[int]] = {}
        self._next_msg_id = 0

    def register(self, node_id: str, handler) -> None:
        self._handlers[node_id] = handler
        self._seen[node_id] = set()

    def node_ids(self) -> list[str]:
        return list(self._handlers)

    def _push(self, at: int, event: tuple) -> None:
        self._seq += 1
        heappush(self._events, (at, self._seq, event))

    def send(self, src: str, dst: str, message: tuple) -> int:
        msg_id = self._next_msg_id
        self._next_msg_id += 1
        self._attempt(src, dst, msg_id, message, tries=0)
        return msg_id

    def _attempt(self, src: str, dst: str, msg_id: int, message: tuple, tries: int) -> None:
        if self._rng.random() >= self.drop_rate:
            self._push(self.now + self.delay, ("deliver", src, dst, msg_id, message))
        if tries < self.max_retries:
            self._push(self.now + self.retry_timeout, ("retry", src, dst, msg_id, message, tries + 1))

    def run_until_idle(self) -> None:
        while self._events:
            at, _, event = heappop(self._events)
            self.now = max(self.now, at)
            kind = event[0]
            if kind == "deliver":
                _, src, dst, msg_id, message = event
                if self._rng.random() >= self.drop_rate:
                    self._push(self.now + self.delay, ("ack", msg_id))
                if msg_id in self._seen[dst]:
                    continue
                self._seen[dst].add(msg_id)
                self._handlers[dst](src, message)
            elif kind == "ack":
                self._acked.add(event[1])
            elif kind == "retry":
                _, src, dst, msg_id, message, tries = event
                if msg_id not in self._acked:
                    self._attempt(src, dst, msg_id, message, tries)


# ---------------------------------------------------------------------------
# nodes


class Node:
    """Shared chain handling: every node holds its own ledger copy."""

    def __init__(self, node_id: str, bus: SimBus, keyring: Keyring, genesis: Block):
        self.node_id = node_id
        self.bus = bus
        self.keyring = keyring
        self.state = LedgerState(genesis)
        self.meters: dict[str, str] = {}
        self._pending_blocks: dict[int, Block] = {}
        bus.register(node_id, self.handle)

    def register_meter(self, meter_id: str, initial_reading: str) -> None:
        self.meters[meter_id] = initial_reading

    def effective_last(self, meter_id: str) -> str | None:
        return self.state.last_reading.get(meter_id, self.meters.get(meter_id))

    def append_block(self, block: Block) -> None:
        tip = self.state.tip
        if block.prev_digest != tip.digest or block.height != tip.height + 1:
            raise Rejection(CHAIN_MISMATCH)
        reason = _verify_block_contents(block, self.keyring)
        if reason is not None:
            raise Rejection(reason)
        self.state.chain.append(block)
        for tx, _ in block.txs:
            self.state.last_reading[tx.meter_id] = tx.reading
        self.on_commit(block)

    def on_commit(self, block: Block) -> None:
        pass

    def _receive_block(self, block: Block) -> None:
        # stash blocks arriving ahead of the tip (possible under drops/retries)
        self._pending_blocks[block.height] = block
        while self.state.height + 1 in self._pending_blocks:
            candidate = self._pending_blocks.pop(self.state.height + 1)
            try:
                self.append_block(candidate)
            except Rejection:
                break

    def handle(self, src: str, message: tuple) -> None:
        if message[0] == "block":
            self._receive_block(message[1])


class CustomerNode(Node):
    """Signs customer readings, proposes them, and tracks their fate."""

    def __init__(self, bus: SimBus, keyring: Keyring, genesis: Block):
        super().__init__(NODE_CUSTOMER, bus, keyring, genesis)
        self._seq = 0
        self.tx_status: dict[str, tuple] = {}

    def create_tx(
        self,
        meter_id: str,
        reading: str,
        timestamp: int,
        image_digest: str,
        geo: GeoPoint,
    ) -> ReadingTx:
        self._seq += 1
        tx_id = hashlib.sha256(
            f"{meter_id}|{reading}|{timestamp}|{image_digest}|{self._seq}".encode()
        ).hexdigest()[:32]
        unsigned = ReadingTx(tx_id, meter_id, reading, timestamp, image_digest, geo)
        sig = self.keyring.sign(self.node_id, unsigned.payload_bytes())
        return ReadingTx(tx_id, meter_id, reading, timestamp, image_digest, geo, sig)

    def propose(self, tx: ReadingTx) -> None:
        if not self.keyring.verify(self.node_id, tx.payload_bytes(), tx.submitter_sig):
            raise InvalidSignature(tx.tx_id)
        self.tx_status[tx.tx_id] = ("pending",)
        self.bus.send(self.node_id, NODE_ENDORSER, ("propose", tx))

    def handle(self, src: str, message: tuple) -> None:
        kind = message[0]
        if kind == "endorsed":
            _, tx, endorsement = message
            self.tx_status[tx.tx_id] = ("endorsed",)
            self.bus.send(self.node_id, NODE_ORDERER, ("submit", tx, endorsement))
        elif kind == "rejected":
            _, tx_id, reason = message
            self.tx_status[tx_id] = ("rejected", reason)
        else:
            super().handle(src, message)

    def on_commit(self, block: Block) -> None:
        for tx, _ in block.txs:
            self.tx_status[tx.tx_id] = ("committed", block.height)


class EndorserNode(Node):
    """Validates proposals against its own ledger copy and signs them."""

    def __init__(self, bus: SimBus, keyring: Keyring, genesis: Block):
        super().__init__(NODE_ENDORSER, bus, keyring, genesis)

    def endorse(self, tx: ReadingTx) -> Endorsement:
        if not self.keyring.verify(NODE_CUSTOMER, tx.payload_bytes(), tx.submitter_sig):
            raise Rejection(BAD_SIG)
        if tx.meter_id not in self.meters:
            raise Rejection(UNKNOWN_METER)
        last = self.effective_last(tx.meter_id)
        if not tx.reading.isdigit() or int(tx.reading) < int(last):
            raise Rejection(NON_MONOTONIC)
        return Endorsement(
            tx.tx_id, self.node_id, self.keyring.sign(self.node_id, tx.canonical_bytes())
        )

    def handle(self, src: str, message: tuple) -> None:
        if message[0] == "propose":
            tx = message[1]
            try:
                endorsement = self.endorse(tx)
            except Rejection as rej:
                self.bus.send(self.node_id, src, ("rejected", tx.tx_id, rej.reason))
                return
            self.bus.send(self.node_id, src, ("endorsed", tx, endorsement))
        else:
            super().handle(src, message)


class OrdererNode(Node):
    """Queues endorsed transactions and cuts them into signed blocks."""

    def __init__(self, bus: SimBus, keyring: Keyring, genesis: Block, batch_size: int = 10):
        super().__init__(NODE_ORDERER, bus, keyring, genesis)
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.batch_size = batch_size
        self.pending: list[tuple[ReadingTx, Endorsement]] = []
        self._known_tx_ids: set[str] = set()

    def submit_endorsed(self, tx: ReadingTx, endorsement: Endorsement) -> None:
        if endorsement.tx_id != tx.tx_id or not self.keyring.verify(
            endorsement.endorser_id, tx.canonical_bytes(), endorsement.endorser_sig
        ):
            raise Rejection(BAD_ENDORSEMENT)
        if tx.tx_id in self._known_tx_ids:
            raise Rejection(DUPLICATE)
        self._known_tx_ids.add(tx.tx_id)
        self.pending.append((tx, endorsement))

    def cut_block(self) -> Block | None:
        """Form one block from up to batch_size pending txs and broadcast it."""
        if not self.pending:
            return None
        batch = tuple(self.pending[: self.batch_size])
        self.pending = self.pending[self.batch_size :]
        tip = self.state.tip
        block = make_block(tip.height + 1, tip.digest, batch, self.keyring, self.node_id)
        self.append_block(block)
        for node_id in self.bus.node_ids():
            if node_id != self.node_id:
                self.bus.send(self.node_id, node_id, ("block", block))
        return block

    def flush(self) -> list[Block]:
        blocks = []
        while self.pending:
            blocks.append(self.cut_block())
        return blocks

    def handle(self, src: str, message: tuple) -> None:
        if message[0] == "submit":
            _, tx, endorsement = message
            try:
                self.submit_endorsed(tx, endorsement)
            except Rejection as rej:
                self.bus.send(self.node_id, src, ("rejected", tx.tx_id, rej.reason))
                return
            while len(self.pending) >= self.batch_size:
                self.cut_block()
        else:
            super().handle(src, message)


# ---------------------------------------------------------------------------
# cluster facade


class LedgerCluster:
    """The three nodes wired to one bus, driven in logical time."""

    def __init__(
        self,
        batch_size: int = 10,
        seed: int = 0,
        drop_rate: float = 0.0,
        keyring: Keyring | None = None,
    ):
        self.keyring = keyring or default_keyring(seed)
        self.bus = SimBus(seed=seed, drop_rate=drop_rate)
        genesis = make_genesis(self.keyring)
        self.customer = CustomerNode(self.bus, self.keyring, genesis)
        self.endorser = EndorserNode(self.bus, self.keyring, genesis)
        self.orderer = OrdererNode(self.bus, self.keyring, genesis, batch_size)

    @property
    def nodes(self) -> tuple[Node, Node, Node]:
        return (self.customer, self.endorser, self.orderer)

    def register_meter(self, meter_id: str, initial_reading: str) -> None:
        for node in self.nodes:
            node.register_meter(meter_id, initial_reading)

    def submit_reading(
        self,
        meter_id: str,
        reading: str,
        timestamp: int,
        image_digest: str,
        geo: GeoPoint,
    ) -> ReadingTx:
        tx = self.customer.create_tx(meter_id, reading, timestamp, image_digest, geo)
        self.customer.propose(tx)
        self.bus.run_until_idle()
        return tx

    def flush(self) -> None:
        self.orderer.flush()
        self.bus.run_until_idle()

    def status(self, tx_id: str) -> tuple:
        return self.customer.tx_status.get(tx_id, ("unknown",))

    def chain_bytes(self, node: Node) -> bytes:
        return b"".join(b.to_bytes() for b in node.state.chain)

    def converged(self) -> bool:
        reference = self.chain_bytes(self.customer)
        return all(self.chain_bytes(n) == reference for n in self.nodes)


def run_demo_workload(cluster: LedgerCluster, n_txs: int, seed: int = 0) -> list[ReadingTx]:
    """Seeded monotone workload over a handful of meters; flushes at the end."""
    rng = random.Random(seed)
    meter_ids = [f"meter-{i}" for i in range(1 + min(4, n_txs // 3))]
    readings = {}
    for m in meter_ids:
        initial = rng.randint(0, 400)
        readings[m] = initial
        cluster.register_meter(m, str(initial).zfill(5))
    txs = []
    for i in range(n_txs):
        meter_id = rng.choice(meter_ids)
        readings[meter_id] += rng.randint(0, 50)
        tx = cluster.submit_reading(
            meter_id,
            str(readings[meter_id]).zfill(5),
            timestamp=1_700_000_000_000 + i * 1000,
            image_digest=hashlib.sha256(f"demo-img-{seed}-{i}".encode()).hexdigest(),
            geo=GeoPoint(round(rng.uniform(-37.9, -37.7), 6), round(rng.uniform(144.9, 145.1), 6)),
        )
        txs.append(tx)
    cluster.flush()
    return txs
