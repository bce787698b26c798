#!/usr/bin/env python3
"""Smoke test for the aov_sim_py extension module.

Builds nothing itself: it locates the compiled cdylib under target/,
copies it next to a temp dir as an importable module, and exercises the
main bindings. Build the extension first with

    cargo build -p aov-sim-py --features extension-module

(or --release; both locations are searched).
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def locate_cdylib() -> Path:
    candidates = [
        REPO / "target" / profile / name
        for profile in ("release", "debug")
        for name in ("libaov_sim_py.so", "aov_sim_py.so", "libaov_sim_py.dylib")
    ]
    for path in candidates:
        if path.exists():
            return path
    sys.exit(
        "extension not built; run `cargo build -p aov-sim-py --features extension-module`"
    )


def approx(a: float, b: float, rel: float = 1e-9) -> bool:
    return abs(a - b) <= rel * max(abs(a), abs(b), 1e-300)


def main() -> None:
    cdylib = locate_cdylib()
    staging = Path(tempfile.mkdtemp(prefix="aov_sim_py_"))
    shutil.copy2(cdylib, staging / "aov_sim_py.so")
    sys.path.insert(0, str(staging))
    import aov_sim_py as m

    # Link model identities.
    assert approx(m.snr(1e-12, 2.0, 1.0, 3.0, 1e-3, 500.0), 16.0)
    sigma = 10 ** 0.3
    assert approx(m.snr_wall(3.0), (sigma * sigma - 1.0) / sigma)
    assert m.snr_wall(0.0) == 0.0
    assert approx(m.shannon_rate(1e6, 1.0), 1e6)
    assert approx(m.shannon_rate(1e6, 16.0), 1e6 * math.log2(17.0))
    assert m.transmission_time(8_000_000, 4e6) == 2.0
    assert m.transmission_time(1, 0.0) is None

    # Single-class M/G/1 wait reduces to Pollaczek-Khinchine.
    (wait,) = m.waiting_times([(0.5, 0.5, 1.0, 2.0)])
    assert approx(wait, 1.0, rel=1e-12)
    high, low = m.waiting_times([(0.2, 0.9, 1.0, 2.0), (0.3, 0.1, 1.0, 2.0)])
    assert approx(high, 0.25, rel=1e-12)
    assert approx(low, 1.5, rel=1e-12)

    # Greedy allocation respects the cap and rank order.
    shares = m.allocate_bandwidth([(0, 3_000_000, 100.0), (1, 2_000_000, 100.0), (2, 1_000_000, 100.0)], 3e6, 1.0)
    assert sum(shares.values()) <= 3e6
    assert shares[0] > shares[1] > shares[2]

    # AoV extremes.
    assert m.aov(0.0, 1.0, 0.0) == 0.0
    assert m.aov(1.0, 0.0, 1.0) == 1.0

    # A small scripted episode is deterministic and sane.
    config = m.SimulationConfig.default()
    config.set_vehicles(3)
    config.set_horizon_slots(25)
    # Three vehicles sense 9 (vehicle, category) cells; ask for ~2 of them
    # per view instead of the default application scale.
    config.set_view_target_mean_size_bits(2 * 4_000_400.0)
    first = m.run_scripted_episode(config, seed=7, policy="random")
    second = m.run_scripted_episode(config, seed=7, policy="random")
    assert first == second, "same seed must reproduce identical metrics"
    other_seed = m.run_scripted_episode(config, seed=8, policy="random")
    assert first != other_seed, "different seeds should differ"
    assert 0.0 <= first["sr"] <= 1.0
    assert first["cr"] > 0.0
    assert "aov_sim" in config.to_toml() or "schema_version" in config.to_toml()

    print("smoke test: all checks passed")


if __name__ == "__main__":
    main()
