import subprocess
import sys
import time

import pytest
from click.testing import CliRunner
from hypothesis import given, settings
from hypothesis import strategies as st

from credchain.bench.cli import main as bench_main
from credchain.bench.cpu import ProcessGone, cpu_monitor, mean_cpu
from credchain.bench.reports import (
    CpuSample,
    LatencyReport,
    StressReport,
    emit_csv,
    nearest_rank,
)
from credchain.bench.stress import (
    SimCluster,
    StressAborted,
    build_transfer_workload,
    consensus_compare,
    gas_sweep,
    stress_write,
)


class TestNearestRank:
    def test_one_to_hundred(self):
        values = list(range(1, 101))
        assert nearest_rank(values, 50) == 50
        assert nearest_rank(values, 90) == 90
        assert nearest_rank(values, 99) == 99

    def test_single_sample(self):
        assert nearest_rank([7.0], 50) == 7.0
        assert nearest_rank([7.0], 90) == 7.0
        assert nearest_rank([7.0], 99) == 7.0

    def test_unsorted_input(self):
        assert nearest_rank([3.0, 1.0, 2.0], 50) == 2.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            nearest_rank([], 50)

    @given(st.lists(st.floats(min_value=0, max_value=1e6), min_size=1, max_size=200))
    @settings(max_examples=200, deadline=None)
    def test_percentile_monotone(self, values):
        p50 = nearest_rank(values, 50)
        p90 = nearest_rank(values, 90)
        p99 = nearest_rank(values, 99)
        assert p50 <= p90 <= p99


class TestReports:
    def test_latency_report_invariants(self):
        with pytest.raises(ValueError):
            LatencyReport(100, 10, 50.0, 9.0, 8.0, 10.0, 0)
        with pytest.raises(ValueError):
            LatencyReport(100, 10, 150.0, 1.0, 2.0, 3.0, 0)

    def test_latency_from_samples(self):
        report = LatencyReport.from_samples(10, 10, [float(i) for i in range(1, 101)], 3)
        assert (report.p50_ms, report.p90_ms, report.p99_ms) == (50.0, 90.0, 99.0)
        assert report.achieved_rps == 10.0
        assert report.errors == 3

    def test_stress_eq1_arithmetic(self):
        report = StressReport.from_runs("poa", 1_000_000, 1000, [40.0])
        assert report.tps == pytest.approx(25.0)
        assert report.tps_stddev == 0.0

    def test_stress_stddev(self):
        report = StressReport.from_runs("poa", 1_000_000, 100, [10.0, 20.0])
        assert report.tps == pytest.approx((10 + 5) / 2)
        assert report.repeats == 2

    def test_cpu_sample_non_negative(self):
        with pytest.raises(ValueError):
            CpuSample(1.0, -3.0)


class TestEmitCsv:
    def test_latency_schema(self, tmp_path):
        path = tmp_path / "latency.csv"
        emit_csv([LatencyReport(100, 60, 99.5, 1.0, 2.0, 3.0, 0)], path)
        lines = path.read_text().splitlines()
        assert lines[0] == "target_rps,duration_s,achieved_rps,p50_ms,p90_ms,p99_ms,errors"
        assert len(lines) == 2
        assert len(lines[1].split(",")) == 7

    def test_stress_schema(self, tmp_path):
        path = tmp_path / "stress.csv"
        emit_csv([StressReport("pow", 1_000_000, 250, 10.0, 25.0, 20, 0.5)], path)
        lines = path.read_text().splitlines()
        assert lines[0] == "consensus,gas_limit,n_tx,t_t_s,tps,repeats,tps_stddev"

    def test_cpu_schema(self, tmp_path):
        path = tmp_path / "cpu.csv"
        emit_csv([CpuSample(1.0, 99.5)], path)
        assert path.read_text().splitlines()[0] == "t_s,percent_one_core"

    def test_empty_header_only(self, tmp_path):
        path = tmp_path / "empty.csv"
        emit_csv([], path, report_type=LatencyReport)
        assert path.read_text() == LatencyReport.CSV_HEADER + "\n"

    def test_reemit_identical(self, tmp_path):
        reports = [
            LatencyReport(100, 60, 99.123456, 1.5, 2.25, 3.125, 0),
            LatencyReport(500, 60, 480.0, 1.0, 2.0, 9.0, 7),
        ]
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        emit_csv(reports, a)
        emit_csv(reports, b)
        assert a.read_bytes() == b.read_bytes()

    def test_mixed_types_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            emit_csv(
                [CpuSample(1.0, 2.0), LatencyReport(1, 1, 1.0, 1.0, 1.0, 1.0, 0)],
                tmp_path / "x.csv",
            )

    def test_empty_without_type_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            emit_csv([], tmp_path / "x.csv")


class TestCpuMonitor:
    def test_sleeping_process_near_zero(self):
        proc = subprocess.Popen([sys.executable, "-c", "import time; time.sleep(30)"])
        try:
            samples = cpu_monitor(proc.pid, interval_s=0.5, duration_s=2.0)
            assert samples
            assert mean_cpu(samples) < 15.0
        finally:
            proc.kill()

    def test_spin_loop_near_one_core(self):
        proc = subprocess.Popen(
            [sys.executable, "-c", "while True:\n    pass"]
        )
        try:
            time.sleep(0.3)
            samples = cpu_monitor(proc.pid, interval_s=0.5, duration_s=3.0)
            assert abs(mean_cpu(samples) - 100.0) <= 10.0
        finally:
            proc.kill()

    def test_process_gone(self):
        proc = subprocess.Popen([sys.executable, "-c", "pass"])
        proc.wait()
        with pytest.raises(ProcessGone):
            cpu_monitor(proc.pid, 0.1, 0.5)


class TestSimStress:
    def test_250_txs_needs_six_blocks(self):
        # ceil(250/47) = 6 blocks at a 4 s period: inclusion takes at least
        # five more periods after the first block
        cluster = SimCluster("poa", 1_000_000, n_nodes=3, n_validators=2, seed=0)
        txs = build_transfer_workload(250, 1)
        result = cluster.run(txs)
        numbers = {n for n, count, _ in result.blocks if count}
        assert len(numbers) >= 6
        assert result.t_t >= 5 * 4

    def test_zero_txs_rejected(self):
        factory = lambda seed: SimCluster("poa", 1_000_000, 3, 2, seed)
        with pytest.raises(ValueError):
            stress_write(factory, 0, repeats=1)

    def test_eq1_recomputable_from_timestamps(self):
        cluster = SimCluster("poa", 1_000_000, 3, 2, seed=1)
        txs = build_transfer_workload(100, 1)
        result = cluster.run(txs)
        report = StressReport.from_runs("poa", 1_000_000, 100, [result.t_t])
        recomputed = 100 / (result.last_inclusion_t - result.first_submit_t)
        assert abs(report.tps - recomputed) < 1e-3

    def test_sweep_trend_and_workload_identity(self):
        reports, details = gas_sweep(
            [1_000_000, 5_000_000], n_tx=300, repeats=1, n_nodes=3, n_validators=2
        )
        assert reports[1].tps >= reports[0].tps
        assert details[0][0].tx_hashes == details[1][0].tx_hashes

    def test_self_comparison_ratio_near_one(self):
        factory = lambda seed: SimCluster("poa", 1_000_000, 3, 2, seed)
        a, _ = stress_write(factory, 200, repeats=3, base_seed=0)
        b, _ = stress_write(factory, 200, repeats=3, base_seed=100)
        ratio = a.tps / b.tps
        assert 0.9 <= ratio <= 1.1

    def test_compare_smoke(self):
        result = consensus_compare(
            [120], gas_limit=1_000_000, repeats=2, n_nodes=3, n_validators=2
        )
        assert result.poa[0].tps >= result.pow[0].tps
        assert result.ratios()[120] > 1


class TestCli:
    def test_stress_cli(self, tmp_path):
        out = tmp_path / "stress.csv"
        runner = CliRunner()
        result = runner.invoke(
            bench_main,
            [
                "stress", "--txs", "60", "--repeats", "1", "--nodes", "3",
                "--validators", "2", "--out", str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        lines = out.read_text().splitlines()
        assert lines[0].startswith("consensus,")
        assert lines[1].startswith("poa,1000000,60,")

    def test_sweep_cli(self, tmp_path):
        out = tmp_path / "sweep.csv"
        runner = CliRunner()
        result = runner.invoke(
            bench_main,
            [
                "sweep", "--limits", "1000000,5000000", "--txs", "100",
                "--repeats", "1", "--nodes", "3", "--validators", "2",
                "--out", str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        assert len(out.read_text().splitlines()) == 3

    def test_cpu_cli(self, tmp_path):
        proc = subprocess.Popen([sys.executable, "-c", "import time; time.sleep(20)"])
        try:
            out = tmp_path / "cpu.csv"
            runner = CliRunner()
            result = runner.invoke(
                bench_main,
                ["cpu", "--pid", str(proc.pid), "--interval", "0.2",
                 "--duration", "1", "--out", str(out)],
            )
            assert result.exit_code == 0, result.output
            assert out.read_text().splitlines()[0] == "t_s,percent_one_core"
        finally:
            proc.kill()
