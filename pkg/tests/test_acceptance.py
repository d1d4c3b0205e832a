"""Acceptance suite: one test per release criterion, each printing a
pass/fail line with its elapsed time against the stated budget.

Run with `pytest tests/test_acceptance.py -s` to see the per-criterion lines.
"""

import json
import math
import random
import time
from contextlib import contextmanager
from fractions import Fraction

import numpy as np
from fastapi.testclient import TestClient

from meterpipe import imaging
from meterpipe.bench import EvalResult, evaluate, load_manifest, synth_dataset
from meterpipe.config import ServiceConfig, TokenInfo
from meterpipe.imaging import DegradationSpec, RasterImage
from meterpipe.ledger import (
    GeoPoint,
    LedgerCluster,
    read_chain_records,
    run_demo_workload,
    verify_chain_records,
    write_chain,
)
from meterpipe.ocr import BackendConfig, BBox, TextDetection, image_digest
from meterpipe.refinement import MeterContext, refine
from meterpipe.service import ROUTE_POLICIES, create_app, reconcile
from meterpipe.sevenseg import render_reading


@contextmanager
def criterion(name: str, budget_s: float):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"[acceptance] {name}: FAIL ({time.perf_counter() - start:.2f}s)")
        raise
    elapsed = time.perf_counter() - start
    ok = elapsed < budget_s
    print(f"[acceptance] {name}: {'PASS' if ok else 'FAIL'} ({elapsed:.2f}s, budget {budget_s:g}s)")
    assert ok, f"{name} exceeded its time budget: {elapsed:.2f}s >= {budget_s}s"


def ten_image_corpus():
    rng = np.random.default_rng(42)
    images = [RasterImage(rng.integers(0, 256, (48, 64, 3)).astype(np.uint8)) for _ in range(5)]
    images += [render_reading("".join(str(d) for d in rng.integers(0, 10, 5))) for _ in range(5)]
    return images


def test_identity_suite():
    with criterion("identity levels return bit-identical images", 1.0):
        for img in ten_image_corpus():
            assert imaging.gamma_correct(img, 1.0) == img
            assert imaging.box_blur(img, 1) == img
            assert imaging.salt_pepper(img, 0.0, seed=9) == img
            assert imaging.scale(img, 1.0) == img


def test_formula_oracles():
    with criterion("gamma LUT and box blur match direct-formula oracles", 5.0):
        rng = np.random.default_rng(7)
        # gamma: 1000 random (intensity, gamma) pairs against the plain formula
        for _ in range(1000):
            i = int(rng.integers(0, 256))
            g = float(rng.uniform(0.05, 6.0))
            img = RasterImage(np.full((1, 1, 1), i, dtype=np.uint8))
            got = int(imaging.gamma_correct(img, g).pixels[0, 0, 0])
            expected = min(255, math.floor(255.0 * (i / 255.0) ** g + 0.5))
            assert got == expected, (i, g, got, expected)
        # box blur: 20 random small images against a naive double loop
        for _ in range(20):
            h, w = int(rng.integers(1, 9)), int(rng.integers(1, 9))
            c = int(rng.choice([1, 3]))
            k = int(rng.integers(1, 6))
            arr = rng.integers(0, 256, (h, w, c)).astype(np.uint8)
            got = imaging.box_blur(RasterImage(arr), k).pixels
            a = k // 2
            for y in range(h):
                for x in range(w):
                    for ch in range(c):
                        total = sum(
                            int(arr[min(max(y - a + dy, 0), h - 1), min(max(x - a + dx, 0), w - 1), ch])
                            for dy in range(k)
                            for dx in range(k)
                        )
                        assert got[y, x, ch] == math.floor(total / (k * k) + 0.5)


def test_noise_statistics():
    with criterion("salt-pepper corruption stays within 3-sigma binomial bounds", 5.0):
        base = RasterImage(np.full((256, 256, 1), 128, dtype=np.uint8))
        n = 256 * 256
        for density in (0.01, 0.05, 0.09):
            sigma = math.sqrt(density * (1 - density) / n)
            hits = 0
            for seed in range(20):
                out = imaging.salt_pepper(base, density, seed=seed)
                fraction = float(np.mean(out.pixels != base.pixels))
                if abs(fraction - density) <= 3 * sigma:
                    hits += 1
            assert hits >= 19, f"density {density}: only {hits}/20 runs inside 3 sigma"


def test_eq1_oracle(tmp_path):
    with criterion("exact-match accuracy equals an independent recount", 2.0):
        rng = random.Random(123)
        # the aggregation arithmetic, 1000 randomized fixtures
        for _ in range(1000):
            total = rng.randint(1, 120)
            outcomes = [rng.random() < rng.random() for _ in range(total)]
            result = EvalResult("b", None, sum(outcomes), total)
            recount = Fraction(100) * Fraction(sum(1 for o in outcomes if o), total)
            assert result.accuracy == recount
        # and the full evaluate path over replayed detections, 20 random fixtures
        readings = [str(i).zfill(5) for i in range(10, 16)]
        entries = []
        digests = {}
        for i, text in enumerate(readings):
            name = f"e_{i}.pgm"
            imaging.save_image(render_reading(text), tmp_path / name)
            digests[i] = image_digest((tmp_path / name).read_bytes())
            entries.append({"id": f"e_{i}", "image_path": name, "ground_truth": text})
        manifest_path = tmp_path / "manifest.json"
        manifest_path.write_text(json.dumps({"entries": entries}))
        manifest = load_manifest(manifest_path)
        for trial in range(20):
            right = [rng.random() < 0.5 for _ in readings]
            fixtures = {
                digests[i]: [{"text": readings[i] if right[i] else "99999",
                              "confidence": 1.0, "bbox": [0, 0, 4, 4]}]
                for i in range(len(readings))
            }
            fixture_path = tmp_path / f"fx_{trial}.json"
            fixture_path.write_text(json.dumps(fixtures))
            result = evaluate(
                BackendConfig("replay", fixture_path=str(fixture_path)), manifest, None, "raw"
            )
            assert result.accuracy == Fraction(100 * sum(right), len(readings))


def _trend_violations(values, direction, tolerance=3.4):
    """Count adjacent moves against the trend; return (count, worst_move)."""
    bad, worst = 0, 0.0
    for a, b in zip(values, values[1:]):
        move = (b - a) if direction == "noninc" else (a - b)
        if move > 1e-9:
            bad += 1
            worst = max(worst, move)
    return bad, worst


def test_sweep_trend_shape(tmp_path):
    with criterion("sweep trends: perfect originals, blur degrades, scale recovers", 60.0):
        manifest = synth_dataset(30, 5, seed=7, out_dir=tmp_path / "corpus")
        backend = BackendConfig("sevenseg")

        original = evaluate(backend, manifest, None, "raw")
        assert original.accuracy == Fraction(100), f"original accuracy {original.accuracy}"

        blur_acc = [
            float(evaluate(backend, manifest, DegradationSpec("blur", k), "raw").accuracy)
            for k in range(1, 92, 10)
        ]
        bad, worst = _trend_violations(blur_acc, "noninc")
        assert bad <= 1 and worst <= 3.4, f"blur trend broken: {blur_acc}"

        scale_acc = [
            float(evaluate(backend, manifest, DegradationSpec("scale", f / 10), "raw").accuracy)
            for f in range(1, 10)
        ]
        bad, worst = _trend_violations(scale_acc, "nondec")
        assert bad <= 1 and worst <= 3.4, f"scale trend broken: {scale_acc}"


def oracle_refine(detections, ctx):
    last = int(ctx.last_reading)
    best = None
    for d in detections:
        text = d.text
        for sep in (".", ","):
            idx = text.find(sep)
            if idx != -1:
                text = text[:idx]
        digits = "".join(ch for ch in text if ch.isdigit())
        if len(digits) != ctx.register_length:
            continue
        value = int(digits)
        if not (last <= value <= last + ctx.max_delta):
            continue
        key = (value - last, -d.confidence, d.bbox.y, d.bbox.x)
        if best is None or key < best[0]:
            best = (key, digits)
    return (ctx.last_reading, True) if best is None else (best[1], False)


def test_refinement_oracle():
    with criterion("refine equals brute-force enumeration and ignores order", 5.0):
        rng = random.Random(9090)
        texts = ["kWh", "SN-12345", "m3", "--", "total 1 2 3"]
        for _ in range(500):
            length = rng.randint(1, 6)
            last_val = rng.randint(0, 10**length - 1)
            ctx = MeterContext(
                str(last_val).zfill(length),
                max_delta=rng.choice([0, 10, 100, 1000, 10**length]),
            )
            dets = []
            for _ in range(rng.randint(0, 8)):
                roll = rng.random()
                if roll < 0.55:
                    value = max(0, min(10**length - 1, last_val + rng.randint(-80, 900)))
                    text = str(value).zfill(length)
                elif roll < 0.75:
                    text = str(rng.randint(0, 10 ** rng.randint(1, 8)))
                elif roll < 0.9:
                    text = rng.choice(texts)
                else:
                    text = f"{rng.randint(0, 9999)}.{rng.randint(0, 99)}"
                dets.append(TextDetection(text, round(rng.random(), 3),
                                          BBox(rng.randint(0, 300), rng.randint(0, 300), 8, 8)))
            expected = oracle_refine(dets, ctx)
            got = refine(dets, ctx)
            assert (got.reading, got.fallback) == expected
            for _ in range(10):
                shuffled = dets[:]
                rng.shuffle(shuffled)
                assert refine(shuffled, ctx).reading == got.reading


def test_ledger_convergence_and_tampering(tmp_path):
    with criterion("ledger converges, batches exactly, and is tamper-evident", 10.0):
        # convergence: 100-tx workloads over 10 seeds, byte-identical chains
        for seed in range(10):
            cluster = LedgerCluster(batch_size=(seed % 4) + 1, seed=seed)
            run_demo_workload(cluster, 100, seed=seed)
            assert cluster.converged(), f"seed {seed} diverged"
            assert cluster.customer.state.tx_count() == 100

        # batch pattern: B=2, 5 txs then flush -> blocks of 2, 2, 1
        cluster = LedgerCluster(batch_size=2, seed=0)
        cluster.register_meter("m", "00000")
        for i in range(5):
            cluster.submit_reading("m", str(i + 1).zfill(5), i, "ab" * 32, GeoPoint(0.0, 0.0))
        cluster.flush()
        assert [len(b.txs) for b in cluster.orderer.state.chain] == [0, 2, 2, 1]
        assert [b.height for b in cluster.orderer.state.chain] == [0, 1, 2, 3]

        # tamper evidence: 100 random single-byte flips, each caught at its height
        cluster = LedgerCluster(batch_size=3, seed=5)
        run_demo_workload(cluster, 30, seed=5)
        path = tmp_path / "chain.bin"
        write_chain(path, cluster.customer.state.chain)
        records = read_chain_records(path)
        rng = random.Random(5)
        for _ in range(100):
            idx = rng.randrange(len(records))
            record = bytearray(records[idx])
            record[rng.randrange(len(record))] ^= 1 << rng.randrange(8)
            tampered = records[:idx] + [bytes(record)] + records[idx + 1 :]
            assert verify_chain_records(tampered, cluster.keyring) == idx


ADMIN_TOKEN = "admin-tok"
ALICE_TOKEN = "alice-tok"


def _service_client(**overrides):
    tokens = {
        ADMIN_TOKEN: TokenInfo("admin"),
        ALICE_TOKEN: TokenInfo("customer", "alice"),
    }
    client = TestClient(create_app(ServiceConfig(tokens=tokens, **overrides)))
    admin = {"Authorization": f"Bearer {ADMIN_TOKEN}"}
    assert client.post("/api/customers", json={"customer_id": "alice", "name": "Alice"},
                       headers=admin).status_code == 201
    assert client.post("/api/meters", json={
        "meter_id": "m-1", "customer_id": "alice", "register_length": 5,
        "initial_reading": "00100", "geo": {"lat": -37.81, "lon": 144.96}},
        headers=admin).status_code == 201
    return client


def _scan(client, reading_png, token=ALICE_TOKEN):
    return client.post(
        "/api/scan?meter_id=m-1&lat=-37.8&lon=144.9",
        content=reading_png,
        headers={"Authorization": f"Bearer {token}", "Content-Type": "application/octet-stream"},
    )


def test_service_contract_suite(tmp_path):
    with criterion("service enforces auth, fallback, 409, and reconciliation", 30.0):
        client = _service_client()
        alice = {"Authorization": f"Bearer {ALICE_TOKEN}"}
        admin = {"Authorization": f"Bearer {ADMIN_TOKEN}"}

        # full route x role matrix
        bodies = {
            ("POST", "/api/customers"): {"customer_id": "zz", "name": "Z"},
            ("POST", "/api/meters"): {"meter_id": "zz", "customer_id": "zz", "register_length": 5,
                                      "initial_reading": "00000", "geo": {"lat": 0.0, "lon": 0.0}},
            ("POST", "/api/confirm"): {"meter_id": "none", "reading": "00001",
                                       "image_digest": "0" * 64, "geo": {"lat": 0.0, "lon": 0.0}},
        }
        for method, template, allowed in ROUTE_POLICIES:
            path = (template.replace("{customer_id}", "alice")
                    .replace("{meter_id}", "m-1").replace("{digest}", "0" * 64))
            for label, headers in (("none", {}), ("bad", {"Authorization": "Bearer junk"}),
                                   ("customer", alice), ("admin", admin)):
                if method == "POST" and template == "/api/scan":
                    resp = client.post(path + "?meter_id=m-1", content=b"x",
                                       headers={**headers, "Content-Type": "application/octet-stream"})
                elif method == "POST":
                    resp = client.post(path, json=bodies[(method, template)], headers=headers)
                else:
                    resp = client.get(path, headers=headers)
                where = f"{method} {template} as {label}"
                if label in ("none", "bad"):
                    assert resp.status_code == 401, where
                elif label in allowed:
                    assert resp.status_code not in (401, 403), where
                else:
                    assert resp.status_code == 403, where

        # backend outage: scan still answers with the last reading, fallback=true
        fixtures = tmp_path / "empty.json"
        fixtures.write_text("{}")
        outage = _service_client(
            backends={"replay": BackendConfig("replay", fixture_path=str(fixtures))},
            scan_backend="replay",
        )
        resp = _scan(outage, imaging.encode_png(render_reading("00123")))
        assert resp.status_code == 502
        assert resp.json()["fallback"] is True
        assert resp.json()["candidate_reading"] == "00100"

        # non-monotonic confirm surfaces the endorsement rejection as 409
        scan1 = _scan(client, imaging.encode_png(render_reading("00200"))).json()
        assert client.post("/api/confirm", json={
            "meter_id": "m-1", "reading": scan1["candidate_reading"],
            "image_digest": scan1["image_digest"], "geo": {"lat": 0.0, "lon": 0.0}},
            headers=alice).status_code == 200
        scan2 = _scan(client, imaging.encode_png(render_reading("00150"))).json()
        resp = client.post("/api/confirm", json={
            "meter_id": "m-1", "reading": "00150",
            "image_digest": scan2["image_digest"], "geo": {"lat": 0.0, "lon": 0.0}},
            headers=alice)
        assert resp.status_code == 409
        assert resp.json()["detail"]["reason"] == "NonMonotonic"

        # 50-confirm workload reconciles store against chain with zero mismatches
        workload = _service_client()
        alice_h = {"Authorization": f"Bearer {ALICE_TOKEN}"}
        reading = 100
        for i in range(50):
            reading += (i % 3)
            text = str(reading).zfill(5)
            scanned = _scan(workload, imaging.encode_png(render_reading(text))).json()
            assert scanned["candidate_reading"] == text
            confirmed = workload.post("/api/confirm", json={
                "meter_id": "m-1", "reading": text,
                "image_digest": scanned["image_digest"], "geo": {"lat": 1.0, "lon": 2.0}},
                headers=alice_h)
            assert confirmed.status_code == 200, confirmed.text
        service = workload.app.state.service
        assert reconcile(service) == []
        assert service.cluster.customer.state.tx_count() == 50
        status = workload.get("/api/ledger/status", headers=alice_h).json()
        assert status["tx_count"] == 50
