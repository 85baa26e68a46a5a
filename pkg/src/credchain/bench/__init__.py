"""Benchmark harness: read-latency flooding, write throughput, gas-limit
sweeps, consensus comparisons and CPU sampling, all emitting CSV."""
