"""Datasets, backend-versus-degradation sweeps, and comparison reports.

Accuracy is the exact-match score: the percentage of images whose recognized
reading equals ground truth character for character, kept as an exact
rational and rendered to one decimal.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .imaging import DegradationSpec, apply_spec, decode_image, save_image
from .ocr import BackendConfig, OcrError, build_backend, image_digest
from .refinement import DEFAULT_MAX_DELTA, MeterContext, normalize_tokens, refine
from .sevenseg import DEFAULT_LAYOUT, SevenSegLayout, render_reading

log = logging.getLogger(__name__)


class ParseError(Exception):
    """Manifest is structurally invalid."""


class MissingImage(Exception):
    """Manifest references an image that does not resolve."""


class DuplicateId(Exception):
    """Two manifest entries share an id."""


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    image_path: Path
    ground_truth: str
    last_reading: str | None = None


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class EvalResult:
    """Score for one (backend, degradation) cell."""

    backend: str
    variant: DegradationSpec | None
    correct_results: int
    total: int
    failures: int = 0

    def __post_init__(self):
        if self.total < 1:
            raise ValueError("total must be >= 1")
        if not 0 <= self.correct_results <= self.total:
            raise ValueError("correct_results must lie in [0, total]")

    @property
    def accuracy(self) -> Fraction:
        return Fraction(100 * self.correct_results, self.total)

    @property
    def variant_label(self) -> str:
        return self.variant.label() if self.variant else "original"


def format_accuracy(accuracy: Fraction) -> str:
    """Render an exact percentage to one decimal, half away from zero."""
    scaled = accuracy * 10
    q, r = divmod(scaled.numerator, scaled.denominator)
    if 2 * r >= scaled.denominator:
        q += 1
    return f"{q // 10}.{q % 10}"


# ---------------------------------------------------------------------------
# datasets


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(str(path))
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"manifest is not valid JSON: {exc}") from exc
    entries_raw = raw.get("entries") if isinstance(raw, dict) else None
    if not isinstance(entries_raw, list) or not entries_raw:
        raise ParseError("manifest must carry a non-empty 'entries' list")

    entries: list[ManifestEntry] = []
    seen: set[str] = set()
    for item in entries_raw:
        try:
            entry_id = str(item["id"])
            image_path = Path(item["image_path"])
            ground_truth = str(item["ground_truth"])
        except (KeyError, TypeError) as exc:
            raise ParseError(f"manifest entry missing field: {exc}") from exc
        if not ground_truth.isdigit():
            raise ParseError(f"ground_truth for {entry_id!r} must be all digits")
        last = item.get("last_reading")
        if last is not None:
            last = str(last)
            if not last.isdigit():
                raise ParseError(f"last_reading for {entry_id!r} must be all digits")
        if entry_id in seen:
            raise DuplicateId(entry_id)
        seen.add(entry_id)
        if not image_path.is_absolute():
            image_path = path.parent / image_path
        if not image_path.is_file():
            raise MissingImage(str(image_path))
        entries.append(ManifestEntry(entry_id, image_path, ground_truth, last))
    return DatasetManifest(tuple(entries))


def synth_dataset(
    n: int,
    digits: int,
    seed: int,
    out_dir: str | Path,
    layout: SevenSegLayout = DEFAULT_LAYOUT,
) -> DatasetManifest:
    """Render n random seven-segment readings plus a manifest to ``out_dir``.

    Ground truths are uniform random digit strings; each entry's last_reading
    lags ground truth by a uniform 0..50 units, floored at zero. Everything is
    a pure function of the seed, so re-runs reproduce byte-identical output.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 1 <= digits <= 12:
        raise ValueError("digits must lie in [1, 12]")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    records = []
    for i in range(n):
        ground_truth = "".join(str(d) for d in rng.integers(0, 10, digits))
        lag = int(rng.integers(0, 51))
        last = str(max(0, int(ground_truth) - lag)).zfill(digits)
        name = f"img_{i:04d}.png"
        save_image(render_reading(ground_truth, layout), out_dir / name)
        records.append(
            {
                "id": f"img_{i:04d}",
                "image_path": name,
                "ground_truth": ground_truth,
                "last_reading": last,
            }
        )
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(
        json.dumps({"entries": records}, indent=2) + "\n", encoding="utf-8"
    )
    return load_manifest(manifest_path)


# ---------------------------------------------------------------------------
# evaluation


def _best_raw_token(tokens: list) -> str:
    """Raw-mode prediction: longest digit token, ties broken by confidence."""
    if not tokens:
        return ""
    best = max(tokens, key=lambda t: (len(t[0]), t[1]))
    return best[0]


def evaluate(
    config: BackendConfig,
    manifest: DatasetManifest,
    spec: DegradationSpec | None = None,
    mode: str = "raw",
    label: str | None = None,
    max_delta: int = DEFAULT_MAX_DELTA,
    emit_dir: str | Path | None = None,
) -> EvalResult:
    """Score one backend against one degradation variant of the dataset.

    Backend errors are logged and counted as incorrect for that entry rather
    than aborting, so a long sweep always finishes. In refined mode every
    entry must carry a last_reading.
    """
    if mode not in ("raw", "refined"):
        raise ValueError(f"unknown mode {mode!r}")
    if not manifest.entries:
        raise ValueError("manifest must be non-empty")
    if mode == "refined":
        missing = [e.id for e in manifest.entries if e.last_reading is None]
        if missing:
            raise ValueError(f"refined mode needs last_reading for: {missing[:3]}")

    backend = build_backend(config)
    emit_path = Path(emit_dir) if emit_dir else None
    if emit_path:
        emit_path.mkdir(parents=True, exist_ok=True)

    correct = 0
    failures = 0
    for entry in manifest.entries:
        try:
            data = entry.image_path.read_bytes()
            digest = image_digest(data)
            img = decode_image(data)
            if spec is not None:
                img = apply_spec(img, spec)
                if emit_path:
                    save_image(img, emit_path / f"{entry.id}_{spec.label().replace(':', '_')}.png")
            detections = backend.detect(img, source_digest=digest)
            tokens = normalize_tokens(detections)
            if mode == "raw":
                predicted = _best_raw_token(tokens)
            else:
                ctx = MeterContext(entry.last_reading, max_delta)
                predicted = refine(detections, ctx).reading
        except (OcrError, OSError, ValueError) as exc:
            log.warning("entry %s failed: %s", entry.id, exc)
            failures += 1
            predicted = None
        if predicted == entry.ground_truth:
            correct += 1
    return EvalResult(
        backend=label or config.kind,
        variant=spec,
        correct_results=correct,
        total=len(manifest.entries),
        failures=failures,
    )


# ---------------------------------------------------------------------------
# comparison reports


@dataclass(frozen=True)
class Sweep:
    name: str
    specs: tuple[DegradationSpec, ...]


def paper_suites(seed: int = 0) -> list[Sweep]:
    """The built-in full sweep set, selectable as 'paper' on the CLI.

    Nine scale factors, nine blur kernels, three gammas, and nine noise
    levels; salt-pepper levels 10..90 map to densities 0.01..0.09 so digits
    stay legible across the sweep.
    """
    return [
        Sweep("scale", tuple(DegradationSpec("scale", i / 10) for i in range(1, 10))),
        Sweep("blur", tuple(DegradationSpec("blur", k) for k in range(10, 91, 10))),
        Sweep("gamma", tuple(DegradationSpec("gamma", g) for g in (0.25, 1.5, 3.0))),
        Sweep("sp", tuple(DegradationSpec("sp", lvl / 1000, seed) for lvl in range(10, 91, 10))),
    ]


SUITE_NAMES = ("scale", "blur", "gamma", "sp")


def suites_by_name(names: list[str], seed: int = 0) -> list[Sweep]:
    all_suites = {s.name: s for s in paper_suites(seed)}
    picked = []
    for name in names:
        if name == "paper":
            return paper_suites(seed)
        if name not in all_suites:
            raise ValueError(f"unknown suite {name!r}")
        picked.append(all_suites[name])
    return picked


@dataclass(frozen=True)
class ReportRow:
    backend: str
    suite: str
    result: EvalResult


@dataclass(frozen=True)
class ReportMatrix:
    rows: tuple[ReportRow, ...]

    def to_csv(self) -> str:
        lines = ["backend,kind,level,correct,total,accuracy"]
        for row in self.rows:
            spec = row.result.variant
            kind = spec.kind if spec else "original"
            level = f"{spec.level:g}" if spec else ""
            lines.append(
                f"{row.backend},{kind},{level},{row.result.correct_results},"
                f"{row.result.total},{format_accuracy(row.result.accuracy)}"
            )
        return "\n".join(lines) + "\n"

    def chart_data(self) -> list[dict]:
        return [
            {
                "backend": row.backend,
                "suite": row.suite,
                "level": row.result.variant.level if row.result.variant else None,
                "accuracy": float(row.result.accuracy),
            }
            for row in self.rows
        ]

    def mean_accuracy(self, backend: str) -> Fraction:
        cells = [r.result.accuracy for r in self.rows if r.backend == backend]
        return sum(cells, Fraction(0)) / len(cells)

    def summary_lines(self) -> list[str]:
        backends = list(dict.fromkeys(r.backend for r in self.rows))
        lines = []
        for b in backends:
            mean = self.mean_accuracy(b)
            failures = sum(r.result.failures for r in self.rows if r.backend == b)
            extra = f", {failures} backend failures" if failures else ""
            lines.append(f"{b}: mean accuracy {format_accuracy(mean)} over "
                         f"{sum(1 for r in self.rows if r.backend == b)} cells{extra}")
        if len(backends) == 2:
            a, b = backends
            diff = self.mean_accuracy(a) - self.mean_accuracy(b)
            if diff == 0:
                lines.append(f"{a} and {b} tie on average")
            else:
                hi, lo = (a, b) if diff > 0 else (b, a)
                lines.append(
                    f"{hi} performs {format_accuracy(abs(diff))} points better than {lo} on average"
                )
        return lines


def compare(
    backends: list[tuple[str, BackendConfig]],
    manifest: DatasetManifest,
    suites: list[Sweep],
    mode: str = "raw",
    max_delta: int = DEFAULT_MAX_DELTA,
    emit_dir: str | Path | None = None,
) -> ReportMatrix:
    """Full cross-product of backends x (Original + every sweep level)."""
    if not backends or not suites:
        raise ValueError("need at least one backend and one suite")
    rows: list[ReportRow] = []
    for label, config in backends:
        rows.append(
            ReportRow(label, "original", evaluate(config, manifest, None, mode, label, max_delta))
        )
        for sweep in suites:
            for spec in sweep.specs:
                rows.append(
                    ReportRow(
                        label,
                        sweep.name,
                        evaluate(config, manifest, spec, mode, label, max_delta, emit_dir),
                    )
                )
    return ReportMatrix(tuple(rows))
