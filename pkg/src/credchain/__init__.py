"""credchain: a permissioned chain for anchoring and verifying academic
records, with swappable PoW/PoA sealing and a benchmark harness."""

__version__ = "0.1.0"
