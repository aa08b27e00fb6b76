"""Built-in invariant suites behind ``hfl selftest``.

Each suite returns a dict with a name, pass flag and a few measured numbers.
``quick`` shrinks sample counts so the whole run stays well under a minute.
"""

from __future__ import annotations

import numpy as np

from .dyadic import DyadicInterval, IntervalFamily, carleson_brute_force, carleson_constant, enumerate_dn
from .factorization import factor_identity
from .haar import (StepFunction, haar_coefficients, lp_norm,
                   square_function, synthesize_vector)
from .netthin import net_thinning, random_subspace, verify_net_thinning
from .operators import form, generate, identity, opnorm
from .oracles import admissible, sparse_level_scan
from .restricted import perturbed_identity, restricted_invertibility
from .selection import (ThinningParams, build_block_basis, random_admissible_pair,
                        select_sparse_level, verify_block_basis)


def _haar(rng, samples):
    worst_parseval = worst_roundtrip = 0.0
    for _ in range(samples):
        N = int(rng.integers(1, 11))
        values = rng.standard_normal(1 << (N + 1))
        values -= values.mean()
        f = StepFunction(N + 1, values)
        c = haar_coefficients(f, N)
        worst_roundtrip = max(worst_roundtrip, float(np.max(np.abs(synthesize_vector(c, N) - values))))
        worst_parseval = max(worst_parseval, abs(lp_norm(square_function(f, N), 2) - lp_norm(f, 2)))
    return {"passed": worst_parseval <= 1e-12 and worst_roundtrip <= 1e-12,
            "parseval_error": worst_parseval, "roundtrip_error": worst_roundtrip}


def _carleson(rng, samples):
    mismatches = 0
    for _ in range(samples):
        depth = int(rng.integers(1, 7))
        pool = list(enumerate_dn(depth))
        size = int(rng.integers(1, min(len(pool), 60) + 1))
        members = [pool[i] for i in rng.choice(len(pool), size, replace=False)]
        fam = IntervalFamily(members)
        mismatches += carleson_constant(fam) != carleson_brute_force(fam)
    layers = all(carleson_constant(enumerate_dn(n)) == n + 1 for n in range(9))
    return {"passed": mismatches == 0 and layers, "mismatches": mismatches,
            "dn_equals_n_plus_1": layers}


def _sparse_level(rng, samples):
    failures = 0
    for _ in range(samples):
        p = float(rng.choice([1.5, 2.0, 3.0]))
        k, ell = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        I = DyadicInterval(0, 1)
        x, y = random_admissible_pair(I, 8, p, int(rng.integers(1 << 31)))
        if not admissible(x, y, I, p):
            failures += 1
            continue
        params = ThinningParams(k, ell, p)
        got = select_sparse_level(x, y, I, params, depth=8)
        want, _ = sparse_level_scan(x, y, I, k, ell, 8)
        failures += got.level != want
    return {"passed": failures == 0, "failures": failures}


def _block_basis(quick):
    out = {}
    B = build_block_basis(identity(10), 2)
    out["identity_ok"] = verify_block_basis(B, identity(10))["all_ok"]
    T = generate("random:seed=3", 12 if quick else 14)
    try:
        B = build_block_basis(T, 2)
        out["random_ok"] = verify_block_basis(B, T)["all_ok"]
    except Exception as exc:                       # reported, not hidden
        out["random_ok"] = False
        out["random_error"] = str(exc)
    out["passed"] = bool(out["identity_ok"] and out["random_ok"])
    return out


def _factor(rng, samples):
    worst = 0.0
    err = 0.0
    cert = factor_identity(identity(10), 1)
    worst = max(worst, cert.residual)
    for s in range(samples):
        T = generate(f"multiplier:bernoulli(0.5):seed={s}", 10)
        cert = factor_identity(T, 1, m=4)
        worst = max(worst, cert.residual)
        err = max(err, cert.error_term)
    return {"passed": worst <= 1e-10 and err <= 1e-12, "max_residual": worst,
            "max_error_term": err}


def _operators(rng, samples):
    worst = 0.0
    T = generate("random:seed=5", 8)
    Ts = T.adjoint()
    for _ in range(samples):
        c, d = rng.standard_normal((2, T.dim))
        worst = max(worst, abs(form(T, c, d) - form(Ts, d, c)))
    est = opnorm(T, 2.0)
    return {"passed": worst <= 1e-10 and est.upper_bound <= 1 + 1e-9,
            "adjoint_error": worst, "norm_upper": est.upper_bound}


def _restricted(samples):
    ok = True
    sizes = []
    for s in range(samples):
        res = restricted_invertibility(perturbed_identity(64, s))
        sub = res.S[np.ix_(res.sigma, res.sigma)]
        smin = float(np.linalg.svd(sub, compute_uv=False)[-1])
        ok &= len(res.sigma) >= 4 and abs(smin - res.min_singular_value) <= 1e-8
        ok &= res.chain_error <= 1e-9
        sizes.append(len(res.sigma))
    return {"passed": bool(ok), "sigma_sizes": sizes}


def _net_thinning(quick):
    N = 12 if quick else 14
    basis = random_subspace(N, 2, 0)
    res = net_thinning(basis, N, 0.5)
    check = verify_net_thinning(res, basis, samples=20 if quick else 100)
    return {"passed": check["eps_bound_holds"] and check["orthogonal_projection"]
            and check["q_norm_at_most_4"], "max_ratio": check["max_ratio"],
            "q_norm_lower_bound": check["q_norm_lower_bound"]}


def _square_equivalence(rng, samples):
    from .haar import check_square_equivalence
    outside = 0
    for _ in range(samples):
        p = float(rng.choice([1.5, 3.0]))
        N = int(rng.integers(1, 9))
        f = StepFunction(N + 1, rng.standard_normal(1 << (N + 1)))
        outside += not check_square_equivalence(f, p).within
    return {"passed": outside == 0, "outside": outside}


def run_selftest(quick: bool = True, seed: int = 0) -> list[dict]:
    rng = np.random.default_rng(seed)
    n = 20 if quick else 200
    suites = [
        ("haar", lambda: _haar(rng, n)),
        ("square-equivalence", lambda: _square_equivalence(rng, n)),
        ("carleson", lambda: _carleson(rng, n)),
        ("sparse-level", lambda: _sparse_level(rng, n)),
        ("operators", lambda: _operators(rng, n)),
        ("block-basis", lambda: _block_basis(quick)),
        ("factorization", lambda: _factor(rng, 5 if quick else 20)),
        ("restricted-invertibility", lambda: _restricted(3 if quick else 20)),
        ("net-thinning", lambda: _net_thinning(quick)),
    ]
    results = []
    for name, fn in suites:
        try:
            res = fn()
        except Exception as exc:
            res = {"passed": False, "error": f"{type(exc).__name__}: {exc}"}
        res = {"suite": name, **res}
        res["passed"] = bool(res["passed"])
        results.append(res)
    return results
