"""One test per acceptance criterion; each prints a single PASS/FAIL line with its pinned tolerances."""

import json
import math
import shutil
import subprocess
import sys
import time

import numpy as np
import pytest

from chaincert import alignment as al
from chaincert import block_energy as be
from chaincert.capacity import activation_moments, coherent_iteration, scale_bounds, simulate_energy_recursion
from chaincert.certificate import bridge_check
from chaincert.finetune import frame_rotation_cost, rotation_double_sum, scale_disruption
from chaincert.icm import icm_extract, icm_stability, row_energy_shift
from chaincert.matrix_core import gauged_svd
from chaincert.spectral import (cartan_tv_bound, fit_layer, interface_budget, model_rank_bounds,
                                spectrum_effective_rank, tail_lipschitz_constant, tail_profile)
from chaincert.synth import (SynthChainSpec, SynthStructureSpec, direct_coarse_energies, direct_pair_margin,
                             exhaustive_effective_rank, gen_power_law_chain, gen_structured_transport,
                             power_law_values, random_orthogonal, random_signed_permutation)
from chaincert.transport import truncation_error


@pytest.fixture
def verdict(capsys):
    """Print one PASS/FAIL line outside pytest's capture, then assert."""

    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} | {detail}")
        assert ok, detail

    return emit


def test_criterion_01_exponent_rigidity(verdict):
    t0 = time.perf_counter()
    worst_ratio, worst_fit, violations = 0.0, 0.0, 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        alphas = tuple(rng.uniform(0.8, 1.6, 8))
        layers = gen_power_law_chain(SynthChainSpec(d=64, L=8, alphas=alphas, seed=seed, frames="aligned"))
        fits = [fit_layer(gauged_svd(W)) for W in layers]
        budgets = [interface_budget(layers[k], layers[k + 1]) for k in range(7)]
        tv = cartan_tv_bound(fits, budgets, interval=(0.8, 1.6))
        violations += not (tv.applicable and tv.robust_holds)
        worst_ratio = max(worst_ratio, tv.measured / tv.robust_bound)
        worst_fit = max(worst_fit, max(abs(f.alpha - a) for f, a in zip(fits, alphas)))
    elapsed = time.perf_counter() - t0
    ok = violations == 0 and worst_fit <= 1e-8 and elapsed < 10
    verdict(1, "total variation <= robust bound on 100 chains (d=64, L=8)", ok,
            f"violations={violations}/100 max TV/bound={worst_ratio:.4f} max|fit-alpha|={worst_fit:.2e} "
            f"(tol 1e-8) time={elapsed:.2f}s (limit 10s)")


def test_criterion_02_effective_rank(verdict):
    t0 = time.perf_counter()
    dims = range(1, 257)
    alphas = np.round(np.linspace(0.1, 3.0, 30), 4)
    mismatches = sandwich_fail = cases = 0
    for d in dims:
        for a in alphas:
            sigma = power_law_values(d, a)
            for eps in (0.5, 0.25, 0.1):
                cases += 1
                R = spectrum_effective_rank(sigma, eps)
                mismatches += R != exhaustive_effective_rank(sigma, eps)
                if a > 0.5:
                    lo, hi = model_rank_bounds(d, a, eps)
                    sandwich_fail += not lo <= R <= hi
    rng = np.random.default_rng(2)
    lip_fail = 0
    for _ in range(10_000):
        d = int(rng.integers(2, 257))
        a, b = rng.uniform(0.05, 3.0, 2)
        r = int(rng.integers(0, d + 1))
        gap = abs(tail_profile(d, a)[r] - tail_profile(d, b)[r])
        lip_fail += gap > tail_lipschitz_constant(d) * abs(a - b) + 1e-13
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and sandwich_fail == 0 and lip_fail == 0 and elapsed < 5
    verdict(2, "effective rank = exhaustive oracle, model sandwich, Lipschitz", ok,
            f"oracle mismatches={mismatches}/{cases} sandwich failures={sandwich_fail} "
            f"Lipschitz violations={lip_fail}/10000 time={elapsed:.2f}s (limit 5s)")


def test_criterion_03_truncation_bound(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    fails, worst = 0, 0.0
    for trial in range(1000):
        n = int(rng.integers(2, 12))
        decay = rng.uniform(0.0, 2.0, 2)
        A = random_orthogonal(n, rng) @ np.diag(np.arange(1, n + 1) ** -decay[0]) @ random_orthogonal(n, rng)
        B = random_orthogonal(n, rng) @ np.diag(np.arange(1, n + 1) ** -decay[1]) @ random_orthogonal(n, rng)
        a, b = gauged_svd(A * rng.uniform(0.2, 5)), gauged_svd(B * rng.uniform(0.2, 5))
        R_s, R_t = int(rng.integers(1, n + 1)), int(rng.integers(1, n + 1))
        err = truncation_error(a, b, R_s, R_t, mode="physical" if trial % 2 else "source-mode")
        fails += not err.holds
        if err.bound > 0:
            worst = max(worst, err.measured / err.bound)
    tight = truncation_error(gauged_svd(np.diag([1.0, 0.1])), gauged_svd(np.eye(2)), 1, 2)
    tight_gap = abs(tight.measured - tight.bound)
    elapsed = time.perf_counter() - t0
    ok = fails == 0 and tight_gap <= 1e-9 and elapsed < 20
    verdict(3, "truncation error <= bound on 1000 interfaces, tight instance", ok,
            f"violations={fails}/1000 max measured/bound={worst:.4f} tight |measured-bound|={tight_gap:.1e} "
            f"(tol 1e-9) time={elapsed:.2f}s (limit 20s)")


def _random_structure(rng, seed):
    K = int(rng.integers(2, 5))
    rows = tuple(int(x) for x in rng.integers(1, 4, K))
    ded = tuple(int(rng.integers(1, r + 1)) for r in rows)
    pairs = [(i, j) for i in range(K) for j in range(i + 1, K)]
    picks = rng.choice(len(pairs), size=int(rng.integers(0, len(pairs) + 1)), replace=False)
    return SynthStructureSpec(rows, ded, shared=tuple(pairs[p] for p in sorted(picks)),
                              margin=float(rng.uniform(0.5, 2.0)), overlap=float(rng.uniform(0.0, 0.15)),
                              noise=float(rng.uniform(0.0, 0.05)), residual_rows=int(rng.integers(0, 3)),
                              inactive_cols=int(rng.integers(0, 3)), seed=seed, shuffle=True)


def test_criterion_04_decomposition(verdict):
    rng = np.random.default_rng(4)
    recon = pyth = proj = 0.0
    for seed in range(1000):
        p = gen_structured_transport(_random_structure(rng, seed))
        st = al.active_columns(p.matrix, p.row_groups, sizes=p.support_sizes)
        con = al.decompose(p.matrix, st)
        scale = max(con.total_norm, 1e-300)
        recon = max(recon, np.linalg.norm(con.core + con.overlap + con.noise - p.matrix) / scale)
        parts = con.core_norm ** 2 + con.overlap_norm ** 2 + con.noise_norm ** 2
        pyth = max(pyth, abs(con.total_norm ** 2 - parts) / scale ** 2)
        proj = max(proj, abs(con.projection_distance - con.noise_norm) / scale)
    ok = max(recon, pyth, proj) <= 1e-9
    verdict(4, "core+overlap+noise exact, Pythagoras, projection distance", ok,
            f"1000 structures: reconstruction={recon:.1e} Pythagoras={pyth:.1e} "
            f"projection-vs-noise={proj:.1e} (relative tol 1e-9)")


def test_criterion_05_calibration_and_screen(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    m = rng.uniform(1e-6, 10.0, 100_000)
    o = m * rng.uniform(0.0, 0.7, 100_000)
    o[:1000] = m[:1000] / 3.0
    equiv_fail = int(np.count_nonzero(al.one_third(m, o) != al.half_gap(m, o)))
    screen_fail = certified = 0
    for seed in range(10_000):
        p = gen_structured_transport(SynthStructureSpec(
            (2, 2), (2, 2), shared=((0, 1),), margin=1.0, overlap=float(rng.uniform(0.0, 0.6)),
            noise=float(rng.uniform(0.0, 0.2)), seed=seed))
        st = al.active_columns(p.matrix, p.row_groups, sizes=p.support_sizes)
        mm, oo = direct_pair_margin(p.matrix, st.row_groups, st.active_sets, 1, 2)
        if mm <= 0:
            continue
        bem = be.from_structure(p.matrix, st)
        if be.margin_screen(bem.E, bem.row_energies, {(0, 1): mm}).H_max < 1:
            certified += 1
            screen_fail += not 3 * oo < mm
    elapsed = time.perf_counter() - t0
    ok = equiv_fail == 0 and screen_fail == 0 and certified > 0
    verdict(5, "one-third <=> half-gap, heatmap screen soundness", ok,
            f"equivalence counterexamples={equiv_fail}/100000 screen counterexamples={screen_fail} "
            f"among {certified} screened of 10000 instances time={elapsed:.2f}s")


def test_criterion_06_single_radius_stability(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    identical = trials = 0
    seed = 0
    while trials < 500:
        seed += 1
        p = gen_structured_transport(_random_structure(rng, seed))
        st = al.active_columns(p.matrix, p.row_groups, sizes=p.support_sizes)
        r = al.certificate_radius(p.matrix, st).r_cert
        if not 0 < r < math.inf:
            continue
        trials += 1
        E = rng.standard_normal(p.matrix.shape)
        E *= 0.99 * r / np.linalg.norm(E)
        v = al.stability_check(p.matrix, st, 0.99 * r, E=E)
        new = al.re_extract(p.matrix + E, st)
        same_hubs = al.incidence(new, p.matrix + E).hubs == al.incidence(st, p.matrix).hubs
        same_masks = all(np.array_equal(x, y) for x, y in zip(al.masks(new), al.masks(st)))
        same_pairs = (al.pairwise_margins(p.matrix + E, new).pair_graph()
                      == al.pairwise_margins(p.matrix, st).pair_graph())
        identical += bool(v.certified and v.re_extraction_identical and same_hubs and same_masks and same_pairs)
    elapsed = time.perf_counter() - t0
    ok = identical == 500 and elapsed < 60
    verdict(6, "incidence identical under ||E||_F = 0.99 r_cert", ok,
            f"identical={identical}/500 (structures drawn={seed}) time={elapsed:.2f}s (limit 60s)")


def _gapped_interface(rng):
    d = int(rng.integers(5, 10))
    R = int(rng.integers(2, d - 1))
    head = np.sort(rng.uniform(1.0, 3.0, R))[::-1]
    P0, P1, P2 = (random_signed_permutation(d, rng) for _ in range(3))

    def pair(t):
        s = np.concatenate([head, np.full(d - R, t)])
        return gauged_svd((P1 * s) @ P0.T), gauged_svd((P2 * s) @ P1.T)

    a, b = pair(0.0 + 1e-300)
    rows = [int(np.argmax(np.abs(b.U[:, j]))) for j in range(R)]
    groups = (tuple(sorted(set(range(d)) - set(rows))),) + tuple((r,) for r in rows)
    return pair, groups, R, d


def test_criterion_07_bridge_and_icm(verdict):
    rng = np.random.default_rng(7)
    bridge_ok = bridge_trials = 0
    while bridge_trials < 200:
        pair, groups, R, d = _gapped_interface(rng)
        a, b = pair(1e-300)
        from_T = bridge_check(a, b, fit_layer(a), fit_layer(b), groups, 1, R, 0.05)
        t = rng.uniform(0.05, 0.95) * from_T.r_cert / (2 * a.sigma[0] * math.sqrt(d - R))
        a, b = pair(t)
        v = bridge_check(a, b, fit_layer(a), fit_layer(b), groups, 1, R, 0.05)
        if not v.radius_condition:
            continue
        bridge_trials += 1
        bridge_ok += bool(v.incidence_identical and v.bridge_holds)

    icm_ok = icm_checked = 0
    for seed in range(400):
        p = gen_structured_transport(SynthStructureSpec((3, 3), (2, 2), shared=((0, 1),), margin=1.0,
                                                        overlap=0.1, noise=0.02, seed=seed))
        M = p.matrix * np.repeat(rng.uniform(0.5, 1.5, M_rows := p.matrix.shape[0]), 1)[:, None]
        st = al.active_columns(M, p.row_groups, sizes=p.support_sizes)
        base = al.decompose(M, st)
        anat = icm_extract(base, st, 1, 0.3, 0.9)
        E = rng.standard_normal(M.shape)
        E *= rng.uniform(1e-5, 1e-2) / np.linalg.norm(E)
        con = al.decompose(M + E, st)
        new = icm_extract(con, st, 1, 0.3, 0.9)
        shift = row_energy_shift(base, con, st)
        dcorr = [max((abs(new.groups[k].correlations.get(r, 0.0) - c)
                      for r, c in anat.groups[k].correlations.items()), default=0.0) for k in range(st.K)]
        stab = icm_stability(anat, shift, dcorr)
        if stab.all_stable:
            icm_checked += 1
            icm_ok += new.signature() == anat.signature()
    ok = bridge_ok == bridge_trials and icm_ok == icm_checked and icm_checked > 0
    verdict(7, "bridge re-extraction and ICM label stability", ok,
            f"bridge identical={bridge_ok}/{bridge_trials} with E_tr < r_cert; "
            f"ICM labels identical={icm_ok}/{icm_checked} perturbations below margins (of 400)")


def test_criterion_08_block_energy_algebra(verdict):
    rng = np.random.default_rng(8)
    coarse_err, theta_fail, leak_fail, pert_fail = 0.0, 0, 0, 0
    for trial in range(1000):
        K = int(rng.integers(2, 6))
        sizes_r, sizes_c = rng.integers(1, 4, K), rng.integers(1, 4, K)
        m, n = int(sizes_r.sum()), int(sizes_c.sum())
        A = rng.standard_normal((m, n)) * (rng.random((m, n)) < 0.8) + 0.01
        rows = np.split(np.arange(m), np.cumsum(sizes_r)[:-1])
        cols = np.split(np.arange(n), np.cumsum(sizes_c)[:-1])
        rows, cols = [r.tolist() for r in rows], [c.tolist() for c in cols]
        Kr, Kc = int(rng.integers(1, K + 1)), int(rng.integers(1, K + 1))
        pi_r = np.concatenate([np.arange(Kr), rng.integers(0, Kr, K - Kr)])
        pi_c = np.concatenate([np.arange(Kc), rng.integers(0, Kc, K - Kc)])
        bem = be.block_energy(A, rows, cols)
        c = be.coarsen(bem.E, bem.row_energies, pi_r, pi_c)
        coarse_err = max(coarse_err, float(np.max(np.abs(c.E - direct_coarse_energies(A, rows, cols, pi_r, pi_c)))))
        t = be.scale_transfer(A, rng.uniform(0.5, 2.0, m), rng.uniform(0.5, 2.0, n), rows, cols)
        theta_fail += not (t.entrywise_holds and t.bad_transfer_holds)
        L = np.eye(m) + rng.uniform(0.0, 0.5) * rng.standard_normal((m, m))
        leak_fail += not all(g.holds for g in be.row_leakage(A, L, rows, cols))
        E = rng.standard_normal((m, n))
        E *= rng.uniform(1e-4, 0.5) / np.linalg.norm(E)
        pert_fail += not be.perturb_bound(A, A + E, rows, cols).holds
    ok = coarse_err <= 1e-12 and theta_fail == 0 and leak_fail == 0 and pert_fail == 0
    verdict(8, "coarsening exact, scale sandwich, leakage, perturbation bound", ok,
            f"1000 instances: max coarsening error={coarse_err:.1e} (tol 1e-12) theta failures={theta_fail} "
            f"leakage failures={leak_fail} perturbation-bound failures={pert_fail}")


def test_criterion_09_capacity_and_finetune(verdict):
    relu = activation_moments("relu", order=128)
    relu_err = max(abs(relu.kappa - 0.5), abs(relu.chi - 0.5))
    rng = np.random.default_rng(9)
    boundary = 0.0
    for _ in range(200):
        e0, s, eta = rng.uniform(0.2, 3.0, 3)
        L, M = int(rng.integers(1, 40)), float(rng.uniform(1.1, 8.0))
        mom = activation_moments(str(rng.choice(["identity", "relu", "gelu", "tanh", "swish"])), order=128)
        eta = min(eta, 1.0)
        b = scale_bounds(e0, s, L, M, eta, mom)
        e = simulate_energy_recursion(e0, s, L, eta, mom.kappa, b.C_typical, seed=int(rng.integers(1 << 30)))
        x = coherent_iteration(1.0, L, mom.chi, b.C_coherent)
        boundary = max(boundary, abs(e[-1] / (M * M * e0) - 1.0), abs(x[-1] / M - 1.0))
    ident = 0.0
    for _ in range(500):
        n = int(rng.integers(2, 10))
        r = scale_disruption(rng.uniform(0.05, 20.0, n), rng.uniform(0.1, 5.0, n))
        ident = max(ident, abs(r.D_log - r.variance_form) / max(r.D_log, 1e-300))
        sigma = np.sort(rng.uniform(0.2, 4.0, n))[::-1]
        Q, scale = random_orthogonal(n, rng), float(rng.uniform(0.3, 3.0))
        c = frame_rotation_cost(np.diag(sigma), Q, Q, scale * sigma)
        direct = float(np.linalg.norm(Q @ np.diag(scale * sigma) @ Q.T - np.diag(sigma)))
        for value in (c.double_sum_cost, rotation_double_sum(Q, sigma, scale), c.delta_W):
            ident = max(ident, abs(value - direct) / direct)
    ok = relu_err <= 1e-8 and boundary <= 1e-8 and ident <= 1e-9
    verdict(9, "ReLU moments, scale-bound crossovers, disruption and rotation identities", ok,
            f"ReLU moment error={relu_err:.1e} (tol 1e-8) boundary error={boundary:.1e} (tol 1e-8) "
            f"identity error={ident:.1e} (relative tol 1e-9)")


REQUIRED_FIELDS = ("alpha_hat", "rank_window", "tail_error", "truncation_error", "r_cert", "min_gap",
                   "overlap_ratio_max", "H_max", "noise_ratio", "verdicts", "coordinates")


def test_criterion_10_end_to_end(verdict, tmp_path):
    t0 = time.perf_counter()
    exe = shutil.which("chaincert")
    cmd = [exe] if exe else [sys.executable, "-m", "chaincert.cli"]
    chain = tmp_path / "chain"
    out = tmp_path / "out"
    steps = [cmd + ["synth", "--out", str(chain), "--seed", "3", "--baseline", "gaussian"],
             cmd + ["certify", "--manifest", str(chain / "manifest.json"), "--config", str(chain / "config.json"),
                    "--out", str(out), "--strict"]]
    codes = [subprocess.run(c, capture_output=True, text=True).returncode for c in steps]
    report = json.loads((out / "report.json").read_text())
    missing = [(r["interface"], k) for r in report["interfaces"] for k in REQUIRED_FIELDS
               if r.get(k, "not measured") == "not measured"]
    verdicts = [v for r in report["interfaces"] for v in r["verdicts"].values()]
    gauss = report["baselines"]["gaussian"]
    margins = ", ".join(f"r_cert={x['r_cert']:.2e}/gap={x['min_gap']:.2e}" for x in gauss["interfaces"])
    elapsed = time.perf_counter() - t0
    ok = (codes == [0, 0] and not missing and all(v is True for v in verdicts) and report["complete"]
          and report["domain"]["full"] is True and "protocol" in report and "physical" in gauss)
    verdict(10, "synth -> certify: complete report, all verdicts true", ok,
            f"exit codes={codes} missing fields={len(missing)} verdicts true={sum(v is True for v in verdicts)}"
            f"/{len(verdicts)} full domain={report['domain']['full']} | gaussian baseline (recorded, not "
            f"asserted): physical={gauss['physical']} {margins} time={elapsed:.2f}s")
