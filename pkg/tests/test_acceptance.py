"""Exit criteria for the package, one test per criterion.

Each test appends a PASS/FAIL line that is printed in the terminal summary.
Tolerances are fixed here and never tuned after the fact.
"""

import json
import math

import numpy as np
import pytest

from aauv import cli
from aauv import estimators as E
from aauv import symmetry as S
from aauv import verify as V
from aauv.estimators import Estimator

CONDITION_TOL = 1e-10
SYMMETRY_TOL = 1e-10
ENUM_TOL = 1e-10
Z = 4.0
MC_N = 10
MC_REPS = 10**6
MC_SEED = 1


def _report(report, number, title, ok, detail):
    report(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} ({detail})")


def _order2_family(n, n_random, seed0=0):
    cs = [E.coeffs_m_block(n, m) for m in range(1, n)]
    cs += [E.coeffs_random_feasible(n, seed0 + s) for s in range(n_random)]
    if n % 2 == 0:
        cs.append(E.coeffs_half_sample(n))
    return cs


def test_criterion_1_condition_manifold(acceptance_report):
    worst_res = worst_bound = worst_pair = 0.0
    checked = 0
    for n in range(2, 101):
        lo, hi = E.coeff_bound(n)
        for c in _order2_family(n, 20, seed0=1000 * n):
            worst_res = max(worst_res, *map(abs, E.check_order2_conditions(c)))
            worst_bound = max(worst_bound, max(lo - min(c.c), max(c.c) - hi, 0.0))
            worst_pair = max(worst_pair, abs(E.pairwise_product_sum(c) - (n - 2) / n))
            checked += 1
    # bound containment is exact up to rounding of the bound itself
    ok = worst_res <= CONDITION_TOL and worst_bound <= 1e-15 and worst_pair <= CONDITION_TOL
    _report(
        acceptance_report, 1, "condition manifold N=2..100", ok,
        f"{checked} vectors; max residual {worst_res:.2e}, max bound excess {worst_bound:.2e}, "
        f"max pairwise error {worst_pair:.2e}",
    )
    assert ok


def _permutation_sweep(lams):
    rng = np.random.default_rng(20241017)
    worst = 0.0
    cases = 0
    for n in range(2, 8):
        for _ in range(50):
            x = rng.normal(rng.uniform(-5, 5), rng.uniform(0.1, 10), size=n)
            s2 = E.unbiased_variance(x).estimate
            for c in _order2_family(n, 5, seed0=int(rng.integers(2**31))):
                for lam in lams:
                    if lam is None:
                        q = S.permutation_average_exact(x, c).q
                    else:
                        q = S.permutation_average_lambda_exact(x, c, lam).q
                    worst = max(worst, abs(q - s2) / max(1.0, s2))
                    cases += 1
    return worst, cases


def test_criterion_2_aauv_permutation_average(acceptance_report):
    worst, cases = _permutation_sweep([None])
    ok = worst <= SYMMETRY_TOL
    _report(acceptance_report, 2, "permutation average of AAUV equals s^2", ok,
            f"{cases} cases; max |Q - s2|/max(1,s2) = {worst:.2e}")
    assert ok


def test_criterion_3_interpolated_permutation_average(acceptance_report):
    worst, cases = _permutation_sweep([-1.0, 0.0, 0.5, 1.0, 2.0])
    ok = worst <= SYMMETRY_TOL
    _report(acceptance_report, 3, "permutation average of s_lambda^2 equals s^2", ok,
            f"{cases} cases; max |Q(lambda) - s2|/max(1,s2) = {worst:.2e}")
    assert ok


LAWS = {
    "bernoulli(1/2)": V.DistributionSpec.discrete([0, 1], [0.5, 0.5]),
    "P(0)=2/3,P(3)=1/3": V.DistributionSpec.discrete([0, 3], [2 / 3, 1 / 3]),
}


def test_criterion_4_exact_unbiasedness(acceptance_report):
    worst = worst_naive = 0.0
    cases = 0
    for dist in LAWS.values():
        for n in (2, 3, 4):
            for c in _order2_family(n, 3, seed0=77):
                ests = [Estimator("aauv", c)] + [
                    Estimator("interpolated", c, lam=lam) for lam in (0.0, 0.7, 1.0)
                ]
                for est in ests:
                    got = V.exact_expectation(dist, n, est)
                    worst = max(worst, abs(got - dist.sigma2) / dist.sigma2)
                    cases += 1
            naive = V.exact_expectation(dist, n, Estimator("naive"))
            expected = (n - 1) * dist.sigma2 / n
            worst_naive = max(worst_naive, abs(naive - expected) / expected)
    ok = worst <= ENUM_TOL and worst_naive <= ENUM_TOL
    _report(acceptance_report, 4, "exact unbiasedness by enumeration", ok,
            f"{cases} cases; max rel error {worst:.2e}; naive control rel error {worst_naive:.2e}")
    assert ok


def test_criterion_5_third_moment(acceptance_report):
    dist = LAWS["P(0)=2/3,P(3)=1/3"]
    worst_res = worst_exp = 0.0
    for m, k in [(1, 1), (1, 2), (2, 1)]:
        c = E.coeffs_third_family(m, k)
        worst_res = max(worst_res, *map(abs, E.check_order3_conditions(c)))
        got = V.exact_expectation(dist, c.n, Estimator("third_moment", c))
        worst_exp = max(worst_exp, abs(got - 2.0) / 2.0)
    ok = worst_res <= CONDITION_TOL and worst_exp <= ENUM_TOL
    _report(acceptance_report, 5, "third-moment family and exact mu3 = 2", ok,
            f"max k3 residual {worst_res:.2e}; max rel error vs mu3 {worst_exp:.2e}")
    assert ok


@pytest.fixture(scope="module")
def normal_run():
    half = E.coeffs_half_sample(MC_N)
    ests = [
        Estimator("unbiased"),
        Estimator("aauv", half),
        Estimator("aauv", E.coeffs_m_block(MC_N, 3)),
        Estimator("interpolated", half, lam=0.5),
        Estimator("naive"),
    ]
    return V.run_variance_comparison(V.DistributionSpec.normal(0, 1), MC_N, MC_REPS, MC_SEED, ests)


def test_criterion_6_statistical_bias(acceptance_report, normal_run):
    *unbiased, naive = normal_run
    zs = {r.estimator: r.empirical_bias / r.bias_stderr for r in unbiased}
    z_naive = (naive.empirical_bias + 0.1) / naive.bias_stderr
    ok = all(abs(z) <= Z for z in zs.values()) and abs(z_naive) <= Z
    detail = ", ".join(f"{k} z={v:+.2f}" for k, v in zs.items())
    _report(acceptance_report, 6, "Monte Carlo bias, normal n=10, 1e6 reps", ok,
            f"{detail}; naive vs -0.1 z={z_naive:+.2f}")
    assert ok


def test_criterion_7_variance_dominance(acceptance_report, normal_run):
    s2, half = normal_run[0], normal_run[1]
    cmp = V.paired_variance_difference(half, s2)
    ok = cmp.difference > 0 and cmp.difference > Z * cmp.stderr
    _report(acceptance_report, 7, "Var(aauv half) > Var(s^2), paired", ok,
            f"diff {cmp.difference:.5f} = {cmp.z:.1f} paired stderr")
    assert ok


def _cli_stdout(capsys, argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr().out
    return code, out


def test_criterion_8_determinism(acceptance_report, capsys, tmp_path):
    data = tmp_path / "x.txt"
    data.write_text("\n".join(repr(v) for v in np.random.default_rng(5).normal(size=11).tolist()) + "\n")
    mc = ["mc", "--dist", "exponential:rate=1", "--n", 10, "--reps", 200000, "--seed", 42,
          "--estimator", "unbiased", "--estimator", "aauv:half", "--estimator", "interp:mblock=3:0.5",
          "--json"]
    sym = ["symmetrize", "--data", data, "--coeffs", "random=9", "--lambda", 0.5,
           "--samples", 100000, "--seed", 7, "--json"]
    outputs = {}
    for name, argv in (("mc", mc), ("symmetrize", sym)):
        runs = [_cli_stdout(capsys, argv + extra) for extra in ([], [], ["--workers", 4])]
        outputs[name] = runs
    ok = all(
        len({out for _, out in runs}) == 1 and runs[0][1].strip() and all(code == 0 for code, _ in runs)
        for runs in outputs.values()
    )
    for runs in outputs.values():
        for line in runs[0][1].splitlines():
            json.loads(line)
    _report(acceptance_report, 8, "bit-identical JSON on rerun and across worker counts", ok,
            "mc and sampled symmetrize, workers 1/1/4")
    assert ok
