"""The full multi-constraint problem: windows, impulse boxes, and a
terminal-position box handled with dynamic slackness variables.

After interception at t_h the (now joint) vehicle coasts to the terminal
instant t_f, where its position must lie inside a box around a reference
point.  The box constraint is enforced through slackness states with
their own dynamics and costates; at the optimum the terminal deviation
sits exactly on the box faces (500 m on each axis).

This is the most expensive bundled scenario (about half a minute).

Run:  python3 demos/multi_constraint_interception.py
"""

from pathlib import Path

from impulseopt import Variant, solve_variant, verify
from impulseopt.bcs import dof_balance
from impulseopt.scenarios import load_scenario_file

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


def main():
    scenario, guesses = load_scenario_file(
        SCENARIOS / "multi-constraint-data-II.json")

    unknowns, conditions = dof_balance(Variant.MULTI_CONSTRAINT, scenario)
    print(f"boundary system: {unknowns} unknowns, {conditions} conditions")

    sol, pmap = solve_variant(Variant.MULTI_CONSTRAINT, scenario, guesses,
                              tol=1e-9)
    report = verify(sol, pmap, scenario)
    print(report.to_text())
    print()
    print("All three components of the first impulse are pinned at box")
    print("faces, and the terminal deviation sits on the 500 m box corner.")


if __name__ == "__main__":
    main()
