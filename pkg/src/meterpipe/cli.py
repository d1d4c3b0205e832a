"""Operator entry point: degradations, dataset synthesis, sweeps, reports,
ledger inspection, and serving the REST backend.

Exit codes: 0 on success, 1 on domain errors (missing files, backend
failures), 2 on usage errors. Flags are validated before any side effect.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import bench, imaging
from .bench import format_accuracy
from .config import ServiceConfig, load_config
from .imaging import DegradationSpec
from .ledger import (
    CorruptChain,
    LedgerCluster,
    default_keyring,
    load_chain,
    read_chain_records,
    run_demo_workload,
    verify_chain_records,
    write_chain,
)
from .ocr import BackendConfig


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


def _spec_from_flags(kind: str, level: float | None, density: float | None, seed: int) -> DegradationSpec:
    """Cross-field validation happens here, before any file I/O."""
    if kind == "sp":
        if density is None and level is None:
            raise click.UsageError("sp needs --level (sweep units, 10..90) or --density")
        value = density if density is not None else level / 1000.0
    else:
        if level is None:
            raise click.UsageError(f"--level is required for kind {kind!r}")
        if density is not None:
            raise click.UsageError("--density applies to --kind sp only")
        value = level
    try:
        return DegradationSpec(kind, value, seed)
    except ValueError as exc:
        raise click.UsageError(str(exc))


def _resolve_backend(name: str, fixtures: str | None, config: ServiceConfig | None) -> BackendConfig:
    if name == "sevenseg":
        return BackendConfig("sevenseg")
    if name == "replay":
        if not fixtures:
            raise click.UsageError("the replay backend needs --fixtures PATH")
        return BackendConfig("replay", fixture_path=fixtures)
    if config and name in config.backends:
        return config.backends[name]
    raise click.UsageError(
        f"unknown backend {name!r}; built-ins are 'sevenseg' and 'replay', others come from --config"
    )


def _load_optional_config(config_path: str | None) -> ServiceConfig | None:
    if not config_path:
        return None
    try:
        return load_config(config_path)
    except FileNotFoundError:
        _fail(f"config file not found: {config_path}")
    except (ValueError, KeyError) as exc:
        _fail(f"bad config: {exc}")


@click.group()
@click.version_option(package_name="meterpipe")
def main():
    """Meter-image degradation workbench, OCR sweeps, and reading ledger."""


# ---------------------------------------------------------------------------
# degrade


@main.command()
@click.option("--in", "in_path", required=True, help="input image (PNG/PGM/PPM)")
@click.option("--kind", required=True, type=click.Choice(["scale", "blur", "gamma", "sp"]))
@click.option("--level", type=float, default=None,
              help="scale factor, blur kernel, gamma, or sp sweep value (10..90 maps to density/1000)")
@click.option("--density", "--level-density", "density", type=float, default=None,
              help="direct salt-pepper density in [0, 1]")
@click.option("--seed", type=int, default=0, show_default=True, help="noise seed (sp only)")
@click.option("--out", "out_path", required=True, help="output image path")
def degrade(in_path, kind, level, density, seed, out_path):
    """Apply one degradation effect to one image."""
    spec = _spec_from_flags(kind, level, density, seed)
    try:
        img = imaging.load_image(in_path)
        imaging.save_image(imaging.apply_spec(img, spec), out_path)
    except (FileNotFoundError, OSError, imaging.UnsupportedFormat, imaging.CorruptImage) as exc:
        _fail(str(exc))
    click.echo(f"wrote {out_path} ({spec.label()})")


# ---------------------------------------------------------------------------
# dataset


@main.group()
def dataset():
    """Dataset construction."""


@dataset.command("synth")
@click.option("--n", type=int, required=True, help="number of images")
@click.option("--digits", type=int, default=5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", required=True, help="output directory")
def dataset_synth(n, digits, seed, out_dir):
    """Render a synthetic seven-segment corpus plus manifest.json."""
    if n < 1 or not 1 <= digits <= 12:
        raise click.UsageError("need --n >= 1 and --digits in [1, 12]")
    try:
        manifest = bench.synth_dataset(n, digits, seed, out_dir)
    except OSError as exc:
        _fail(str(exc))
    click.echo(f"wrote {len(manifest)} images and manifest.json to {out_dir}")


# ---------------------------------------------------------------------------
# eval / compare


@main.command("eval")
@click.option("--backend", "backend_name", required=True,
              help="'sevenseg', 'replay' (with --fixtures), or a name from --config")
@click.option("--manifest", "manifest_path", required=True)
@click.option("--kind", type=click.Choice(["scale", "blur", "gamma", "sp"]), default=None)
@click.option("--level", type=float, default=None)
@click.option("--density", "--level-density", "density", type=float, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--mode", type=click.Choice(["raw", "refined"]), default="raw", show_default=True)
@click.option("--fixtures", default=None, help="replay fixture file")
@click.option("--config", "config_path", envvar="METERPIPE_CONFIG", default=None)
@click.option("--out", "out_csv", default=None, help="also write a one-row CSV")
def eval_cmd(backend_name, manifest_path, kind, level, density, seed, mode, fixtures, config_path, out_csv):
    """Score one backend against one (optional) degradation variant."""
    config = _load_optional_config(config_path)
    backend = _resolve_backend(backend_name, fixtures, config)
    spec = _spec_from_flags(kind, level, density, seed) if kind else None
    try:
        manifest = bench.load_manifest(manifest_path)
    except (FileNotFoundError, bench.ParseError, bench.MissingImage, bench.DuplicateId) as exc:
        _fail(str(exc))
    if mode == "refined" and any(e.last_reading is None for e in manifest.entries):
        raise click.UsageError("--mode refined needs last_reading on every manifest entry")
    result = bench.evaluate(backend, manifest, spec, mode, label=backend_name)
    click.echo(f"accuracy {format_accuracy(result.accuracy)}")
    if result.failures:
        click.echo(f"{result.failures}/{result.total} entries failed in the backend", err=True)
    if out_csv:
        row = bench.ReportMatrix((bench.ReportRow(backend_name, spec.kind if spec else "original", result),))
        Path(out_csv).write_text(row.to_csv(), encoding="utf-8")


@main.command("compare")
@click.option("--backends", "backend_names", required=True, help="comma-separated backend names")
@click.option("--manifest", "manifest_path", required=True)
@click.option("--suites", default="paper", show_default=True,
              help="'paper' or comma-separated subset of scale,blur,gamma,sp")
@click.option("--mode", type=click.Choice(["raw", "refined"]), default="raw", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--fixtures", default=None, help="replay fixture file (applies to 'replay')")
@click.option("--config", "config_path", envvar="METERPIPE_CONFIG", default=None)
@click.option("--emit-variants", is_flag=True, help="materialize degraded images for inspection")
@click.option("--out", "out_dir", required=True)
def compare_cmd(backend_names, manifest_path, suites, mode, seed, fixtures, config_path, emit_variants, out_dir):
    """Run the backend x degradation matrix and write CSV + chart data."""
    config = _load_optional_config(config_path)
    names = [n.strip() for n in backend_names.split(",") if n.strip()]
    if not names:
        raise click.UsageError("--backends must name at least one backend")
    backends = [(name, _resolve_backend(name, fixtures, config)) for name in names]
    try:
        suite_list = bench.suites_by_name([s.strip() for s in suites.split(",")], seed)
    except ValueError as exc:
        raise click.UsageError(str(exc))
    try:
        manifest = bench.load_manifest(manifest_path)
    except (FileNotFoundError, bench.ParseError, bench.MissingImage, bench.DuplicateId) as exc:
        _fail(str(exc))
    if mode == "refined" and any(e.last_reading is None for e in manifest.entries):
        raise click.UsageError("--mode refined needs last_reading on every manifest entry")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    matrix = bench.compare(
        backends, manifest, suite_list, mode,
        emit_dir=out / "variants" if emit_variants else None,
    )
    (out / "results.csv").write_text(matrix.to_csv(), encoding="utf-8")
    (out / "chart_data.json").write_text(
        json.dumps(matrix.chart_data(), indent=2) + "\n", encoding="utf-8"
    )
    summary = matrix.summary_lines()
    (out / "summary.txt").write_text("\n".join(summary) + "\n", encoding="utf-8")
    for line in summary:
        click.echo(line)
    if all(r.result.failures == r.result.total for r in matrix.rows):
        _fail("every backend failed on every entry; nothing was evaluated")


# ---------------------------------------------------------------------------
# serve


@main.command()
@click.option("--config", "config_path", envvar="METERPIPE_CONFIG", default=None)
def serve(config_path):
    """Run the REST service until interrupted."""
    import uvicorn

    from .service import create_app

    config = _load_optional_config(config_path) or ServiceConfig()
    uvicorn.run(create_app(config), host=config.host, port=config.port)


# ---------------------------------------------------------------------------
# ledger tools


@main.group()
def ledger():
    """Chain inspection and the seeded demo workload."""


@ledger.command("demo")
@click.option("--txs", type=int, default=10, show_default=True)
@click.option("--batch", type=int, default=2, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "chain_path", required=True, help="chain file to write")
def ledger_demo(txs, batch, seed, chain_path):
    """Run a seeded propose-to-commit workload and persist the chain."""
    if txs < 1 or batch < 1:
        raise click.UsageError("need --txs >= 1 and --batch >= 1")
    cluster = LedgerCluster(batch_size=batch, seed=seed)
    run_demo_workload(cluster, txs, seed)
    if not cluster.converged():
        _fail("nodes failed to converge")
    chain = cluster.customer.state.chain
    try:
        write_chain(chain_path, chain)
    except OSError as exc:
        _fail(str(exc))
    click.echo(f"committed {txs} txs in {len(chain) - 1} blocks (heights 1..{chain[-1].height})")
    click.echo(f"wrote {chain_path}")


@ledger.command("verify")
@click.option("--chain", "chain_path", required=True)
@click.option("--seed", type=int, default=0, show_default=True, help="keyring seed the chain was built with")
def ledger_verify(chain_path, seed):
    """Walk the chain from genesis; exit 1 at the first bad height."""
    try:
        records = read_chain_records(chain_path)
    except FileNotFoundError:
        _fail(f"chain file not found: {chain_path}")
    except CorruptChain as exc:
        click.echo(f"first bad height: {exc.height}")
        sys.exit(1)
    bad = verify_chain_records(records, default_keyring(seed))
    if bad is not None:
        click.echo(f"first bad height: {bad}")
        sys.exit(1)
    blocks = load_chain(chain_path)
    click.echo(f"ok: {len(blocks)} blocks, {sum(len(b.txs) for b in blocks)} txs")


@ledger.command("dump")
@click.option("--chain", "chain_path", required=True)
def ledger_dump(chain_path):
    """Print the chain as line-oriented text."""
    try:
        blocks = load_chain(chain_path)
    except FileNotFoundError:
        _fail(f"chain file not found: {chain_path}")
    except CorruptChain as exc:
        _fail(str(exc))
    for block in blocks:
        click.echo(
            f"block {block.height} txs={len(block.txs)} digest={block.digest[:16]}.. "
            f"prev={block.prev_digest[:16]}.."
        )
        for tx, endorsement in block.txs:
            click.echo(
                f"  tx {tx.tx_id[:12]}.. meter={tx.meter_id} reading={tx.reading} "
                f"ts={tx.timestamp} endorser={endorsement.endorser_id}"
            )


if __name__ == "__main__":
    main()
