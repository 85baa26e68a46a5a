"""bench: the experiment CLI.

  bench flood   --endpoint URL --rps 500 --duration 60 --method registry_check --out f.csv
  bench stress  --txs 1000 --repeats 20 --out f.csv
  bench sweep   --limits 1000000,5000000,20000000,60000000 --out f.csv
  bench compare --consensus both --txs 250,500,750,1000 --out f.csv
  bench cpu     --pid P --interval 1 --duration 60 --out f.csv
  bench cpu-compare --duration 60 --out f.csv

stress/sweep/compare run on the deterministic in-memory network by
default; pass --endpoint to drive a live node over JSON-RPC instead.
"""

from __future__ import annotations

import sys
import tempfile

import click

from . import cpu as cpu_mod
from .flood import flood as run_flood
from .reports import CpuSample, LatencyReport, StressReport, emit_csv
from .stress import (
    HttpTarget,
    SimCluster,
    StressAborted,
    build_transfer_workload,
    consensus_compare,
    gas_sweep,
    stress_write,
)


def _parse_int_list(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part]


@click.group()
def main() -> None:
    """Benchmark harness for the credential chain."""


@main.command("flood")
@click.option("--endpoint", required=True, help="JSON-RPC URL, e.g. http://127.0.0.1:8545/rpc")
@click.option("--rps", "target_rps", type=int, required=True)
@click.option("--duration", "duration_s", type=int, default=60, show_default=True)
@click.option("--method", default="registry_check", show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--raw-out", "raw_out", type=click.Path(), default=None,
              help="also write per-request samples (with warm-up flags)")
def flood_cmd(endpoint, target_rps, duration_s, method, out_path, raw_out) -> None:
    """Open-loop read flood at a fixed request rate."""
    report = run_flood(
        endpoint, method=method, target_rps=target_rps, duration_s=duration_s,
        raw_out=raw_out,
    )
    emit_csv([report], out_path)
    click.echo(report.csv_row())


@main.command("stress")
@click.option("--txs", "n_tx", type=int, required=True)
@click.option("--repeats", type=int, default=20, show_default=True)
@click.option("--consensus", type=click.Choice(["poa", "pow"]), default="poa", show_default=True)
@click.option("--gas-limit", type=int, default=1_000_000, show_default=True)
@click.option("--nodes", type=int, default=16, show_default=True)
@click.option("--validators", type=int, default=4, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--endpoint", default=None, help="drive a live node instead of the simulator")
@click.option("--out", "out_path", required=True, type=click.Path())
def stress_cmd(n_tx, repeats, consensus, gas_limit, nodes, validators, seed, endpoint, out_path) -> None:
    """Write-throughput run; tps = n_t / t_t."""
    try:
        if endpoint:
            target = HttpTarget(endpoint)
            t_ts = []
            for _ in range(repeats):
                txs = build_transfer_workload(n_tx, chain_id=1)
                t_ts.append(target.run(txs).t_t)
            report = StressReport.from_runs(consensus, gas_limit, n_tx, t_ts)
        else:
            factory = lambda s: SimCluster(consensus, gas_limit, nodes, validators, s)
            report, _ = stress_write(factory, n_tx, repeats=repeats, base_seed=seed)
    except StressAborted as exc:
        click.echo(f"stress run aborted: {exc}", err=True)
        sys.exit(1)
    emit_csv([report], out_path)
    click.echo(report.csv_row())


@main.command("sweep")
@click.option("--limits", default="1000000,5000000,20000000,60000000", show_default=True)
@click.option("--txs", "n_tx", type=int, default=1000, show_default=True)
@click.option("--repeats", type=int, default=5, show_default=True)
@click.option("--consensus", type=click.Choice(["poa", "pow"]), default="poa", show_default=True)
@click.option("--nodes", type=int, default=16, show_default=True)
@click.option("--validators", type=int, default=4, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def sweep_cmd(limits, n_tx, repeats, consensus, nodes, validators, out_path) -> None:
    """Throughput across block gas limits, same workload each time."""
    reports, _ = gas_sweep(
        _parse_int_list(limits), n_tx=n_tx, repeats=repeats,
        consensus=consensus, n_nodes=nodes, n_validators=validators,
    )
    emit_csv(reports, out_path)
    for report in reports:
        click.echo(report.csv_row())


@main.command("compare")
@click.option("--consensus", type=click.Choice(["both"]), default="both", show_default=True)
@click.option("--txs", default="250,500,750,1000", show_default=True)
@click.option("--gas-limit", type=int, default=1_000_000, show_default=True)
@click.option("--repeats", type=int, default=20, show_default=True)
@click.option("--nodes", type=int, default=16, show_default=True)
@click.option("--validators", type=int, default=4, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def compare_cmd(consensus, txs, gas_limit, repeats, nodes, validators, out_path) -> None:
    """Paired PoA/PoW throughput over the same workloads."""
    result = consensus_compare(
        _parse_int_list(txs), gas_limit=gas_limit, repeats=repeats,
        n_nodes=nodes, n_validators=validators,
    )
    reports = result.poa + result.pow
    emit_csv(reports, out_path)
    for report in reports:
        click.echo(report.csv_row())
    for n_tx, ratio in result.ratios().items():
        click.echo(f"# poa/pow tps ratio at {n_tx} txs: {ratio:.2f}")


@main.command("cpu")
@click.option("--pid", type=int, required=True)
@click.option("--interval", "interval_s", type=float, default=1.0, show_default=True)
@click.option("--duration", "duration_s", type=float, default=60.0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def cpu_cmd(pid, interval_s, duration_s, out_path) -> None:
    """Sample one process's CPU usage (100 = one full core)."""
    try:
        samples = cpu_mod.cpu_monitor(pid, interval_s, duration_s)
    except cpu_mod.ProcessGone as exc:
        click.echo(f"process gone: {exc}", err=True)
        sys.exit(1)
    emit_csv(samples, out_path, report_type=CpuSample)
    click.echo(f"{len(samples)} samples, mean {cpu_mod.mean_cpu(samples):.1f}%")


@main.command("cpu-compare")
@click.option("--duration", "duration_s", type=float, default=60.0, show_default=True)
@click.option("--stress/--idle", default=False, show_default=True,
              help="feed 1000 txs during the window instead of idling")
@click.option("--out", "out_path", required=True, type=click.Path())
def cpu_compare_cmd(duration_s, stress, out_path) -> None:
    """Run a miner node and a sealer node in turn; sample both."""
    rows: list[CpuSample] = []
    means = {}
    for consensus in ("pow", "poa"):
        with tempfile.TemporaryDirectory() as tmpdir:
            samples = cpu_mod.run_consensus_cpu_scenario(
                consensus, stress=stress, duration_s=duration_s, tmpdir=tmpdir
            )
        means[consensus] = cpu_mod.mean_cpu(samples)
        rows.extend(samples)
        click.echo(f"{consensus}: mean {means[consensus]:.1f}% over {len(samples)} samples")
    emit_csv(rows, out_path, report_type=CpuSample)
    click.echo(f"# pow/poa mean ratio: {means['pow'] / max(means['poa'], 0.01):.1f}")


if __name__ == "__main__":
    main()
