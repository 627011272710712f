"""Solve the free-instant one-impulse interception and inspect the result.

Shows the minimal library workflow: load a bundled scenario, solve one
variant, and read the physical summary off the verification report.

Run:  python3 demos/one_impulse_basics.py
"""

from pathlib import Path

from impulseopt import Variant, solve_variant, verify
from impulseopt.scenarios import load_scenario_file

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


def main():
    scenario, guesses = load_scenario_file(SCENARIOS / "data-I.json")
    guesses.setdefault("th", 700.0)

    sol, pmap = solve_variant(Variant.ONE_IMPULSE_FREE, scenario, guesses,
                              tol=1e-9)
    report = verify(sol, pmap, scenario)

    print(report.to_text())
    print()
    print("The optimal impulse instant sits at its lower bound t1 = 0, with")
    print(f"window multiplier lambda = {report.multipliers['lam'][0]:.4f}:")
    print("firing later only costs more (see demos/sweep_impulse_instant.py).")


if __name__ == "__main__":
    main()
