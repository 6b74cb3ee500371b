"""Smoke test for the teamopt_py extension module."""

from fractions import Fraction

import teamopt_py as t


def main():
    spec = t.TeamSpec.benchmark("witsenhausen")
    flags = spec.validate()
    assert flags["sequential_no_sharing"], flags
    assert t.TeamSpec.from_toml(spec.to_toml()).name == spec.name

    red = spec.reduce()
    assert red.decision_makers() == [(1, 1), (2, 2)]

    zero = red.grid_profile(21)
    assert abs(red.expected_cost(zero, order=32) - 1.0) < 1e-4

    lin = red.linear_profile([1.0, 0.5])
    j, j_rst, gap = red.verify_equivalence(lin, order=32)
    assert gap < 1e-6, (j, j_rst)
    est, se = red.expected_cost_mc(lin, seed=3, n=100_000)
    assert abs(est - j) < 5 * se + 1e-3, (est, se, j)

    res = red.pbp_optimize(red.grid_profile(21, gains=[1.0, 1.0]), max_iters=2, order=16)
    costs = [row[3] for row in res.trace]
    assert all(b <= a + 1e-9 for a, b in zip(costs, costs[1:])), costs
    assert res.profile.is_deterministic()

    c1 = t.check_condition_c1("gaussian")
    assert c1["pass"], c1
    assert not t.check_condition_c1("step")["pass"]

    ic = t.check_ic_squared_difference(m=4.0, k_half=1.0)
    assert ic["pass"], ic

    rungs = red.sequential_tightness(k=1.0, eps=0.05, profile=lin, samples=20_000, seed=1)
    assert len(rungs) == 2
    assert all(r["tail_mass"] < r["tail_limit"] + 3 * r["tail_stderr"] for r in rungs)

    assert t.h_n_eval(3, 1.0) == 1
    assert Fraction(t.sequence_cost(6)) == 0
    cost, _, _ = t.limit_cost_and_marginals()
    assert Fraction(cost) == Fraction(1, 8), cost
    csv = t.weak_limit_report(4)
    assert csv.splitlines()[0].startswith("n,sequence_cost"), csv

    try:
        t.TeamSpec.benchmark("nope")
    except t.TeamoptError:
        pass
    else:
        raise AssertionError("unknown benchmark accepted")

    print("smoke test ok")


if __name__ == "__main__":
    main()
