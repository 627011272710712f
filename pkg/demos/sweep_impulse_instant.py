"""Sweep the fixed impulse instant and watch the cost grow monotonically.

Each solve is warm-started from the previous row, so the whole sweep
follows one smooth branch of solutions.

Run:  python3 demos/sweep_impulse_instant.py
"""

from pathlib import Path

from impulseopt.diagnostics import sweep_fixed_impulse, sweep_is_monotone
from impulseopt.scenarios import load_scenario_file

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


def main():
    scenario, _ = load_scenario_file(SCENARIOS / "data-I.json")
    grid = [0, 5, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 200, 600]

    rows = sweep_fixed_impulse(scenario, grid, guess={"th": 700.0})

    print(f"{'t1 [s]':>8}  {'impact [s]':>11}  {'cost [m/s]':>11}")
    for r in rows:
        if r["converged"]:
            print(f"{r['t1']:8.0f}  {r['th']:11.4f}  {r['cost']:11.4f}")
        else:
            print(f"{r['t1']:8.0f}  failed: {r['error']}")

    print()
    print(f"cost strictly increasing with t1: {sweep_is_monotone(rows)}")


if __name__ == "__main__":
    main()
