"""Acceptance suite: one test per exit criterion, each printing a PASS/FAIL
line (run with ``pytest tests/test_acceptance.py -s`` to see every line).

Two clauses are implemented exactly as stated and are expected to fail with
untrained, freshly normalized weights; their assertion messages carry the
measured evidence:

* the stress-ordering clause (test_2): scaling response logits x5 destabilizes
  the exponential-response kinds first, because their logits are raw position
  dot products with no weight attenuation, while the softplus-wrapped
  dot-product response is column-normalized into a nearly scale-free map.
  The ordering that emerges from *training* dynamics does not emerge from
  random weights at any matched input scale that was tried.
* the 20-block log-det relative-error clause (test_6): random zero-centered
  weights put most block log-determinants near zero (measured median ~0.4),
  while the stochastic trace estimator's noise floor at 64 probes is ~0.1
  absolute, so a 5% relative bar is statistically out of reach; the
  estimator itself is verified unbiased (errors shrink as probes grow and
  sit within the standard error; see also the 4-standard-error unit test).
"""

import numpy as np
import pytest

from invattn.attention import build_block, make_residual_branch
from invattn.harness.experiment import ExperimentConfig, _scale_weights_inplace, run_experiment
from invattn.harness.ppm import load_ppm, save_ppm
from invattn.inversion import InversionConfig, estimate_lipschitz, roundtrip_check
from invattn.linalg import exact_svd_oracle, norm_frobenius, norm_l1, power_iteration, spectral_normalize
from invattn.logdet import LogDetConfig, brute_force_logdet, logdet_series, logdet_series_from_branch
from invattn.attention import response_map

ROUNDTRIP_KINDS = ("gaussian", "embedded", "concat")
ALL_KINDS = ("gaussian", "embedded", "dot", "concat")


def _verdict(ok: bool, label: str, detail: str) -> None:
    print(f"\n[{'PASS' if ok else 'FAIL'}] {label}: {detail}")
    assert ok, f"{label}: {detail}"


def uniform01_sampler(shape):
    def sample(rng):
        return rng.uniform(0.0, 1.0, shape)

    return sample


@pytest.fixture(scope="module")
def roundtrip_reports():
    """100 roundtrips per kind at 16x16x3, c = 0.9, N = 100, with traces."""
    rng = np.random.default_rng(2024)
    cfg = InversionConfig(max_iters=100, early_stop_tol=1e-10, record_trace=True)
    results = {}
    blocks = {}
    for kind in ROUNDTRIP_KINDS:
        block = build_block(kind, "invertible", 3, c=0.9, seed=42)
        reports = [roundtrip_check(rng.uniform(0.0, 1.0, (3, 16, 16)), block, cfg) for _ in range(100)]
        results[kind] = reports
        blocks[kind] = block
    return blocks, results


def test_1_invertibility_roundtrip(roundtrip_reports):
    _, results = roundtrip_reports
    details = []
    ok = True
    for kind in ROUNDTRIP_KINDS:
        mses = [r.reconstruction_mse for r in results[kind]]
        v_score = float(np.mean([m < 10.0 for m in mses]))
        mean_mse = float(np.mean(mses))
        details.append(f"{kind}: V={100 * v_score:.1f}% meanMSE={mean_mse:.2e}")
        ok = ok and v_score == 1.0 and mean_mse < 1e-6
    _verdict(ok, "invertibility roundtrip (3 kinds x 100 inputs)", "; ".join(details))


def test_2_stress_ordering_dot_product():
    counts = {}
    cfg = InversionConfig(max_iters=100, early_stop_tol=1e-10)
    for kind in ALL_KINDS:
        rng = np.random.default_rng(777)
        failures = 0
        for trial in range(200):
            block = build_block(kind, "invertible", 3, c=0.9, seed=10_000 + trial, logit_scale=5.0)
            x = rng.standard_normal((3, 8, 8))
            report = roundtrip_check(x, block, cfg)
            failed = report.diverged or not report.converged or report.reconstruction_mse >= 10.0
            failures += bool(failed)
        counts[kind] = failures
    others = {k: v for k, v in counts.items() if k != "dot"}
    ok = all(counts["dot"] > v for v in others.values())
    _verdict(
        ok,
        "stress ordering (response logits x5, 200 trials/kind)",
        f"failures {counts}; expected dot strictly greatest — untrained weights "
        "put the exponential-response kinds into the unstable regime first "
        "(raw position products, no weight attenuation), while the normalized "
        "softplus response stays nearly scale-free",
    )


def test_3_spectral_normalization():
    rng = np.random.default_rng(31337)
    worst_sigma = 0.0
    worst_rel = 0.0
    gapped = 0
    for _ in range(100):
        w = rng.standard_normal((16, 16))
        reference = exact_svd_oracle(w)
        state = power_iteration(w, iters=1000, tol=1e-15, seed=17)
        scaled = spectral_normalize(w, 0.9, state)
        worst_sigma = max(worst_sigma, float(exact_svd_oracle(scaled)[0]))
        gap = (reference[0] - reference[1]) / reference[0]
        if gap >= 0.05:
            gapped += 1
            fresh = power_iteration(w, iters=1000, tol=1e-15, seed=18)
            worst_rel = max(worst_rel, abs(fresh.sigma_estimate - reference[0]) / reference[0])
    ok = worst_sigma <= 0.9 + 1e-6 and worst_rel <= 1e-6
    _verdict(
        ok,
        "spectral normalization (100 random 16x16)",
        f"max normalized sigma {worst_sigma:.9f}; max power-iteration rel err "
        f"{worst_rel:.2e} over {gapped} spectral-gap>=0.05 matrices",
    )


def test_4_response_map_contract():
    rng = np.random.default_rng(4242)
    checked = 0
    worst_col = 0.0
    worst_l1 = 0.0
    min_entry = np.inf
    for kind in ALL_KINDS:
        for variant in ("invertible", "noninvertible"):
            block = build_block(kind, variant, 3, seed=500)
            for _ in range(63):
                resp = response_map(rng.uniform(0.0, 1.0, (3, 4, 4)), block)
                checked += 1
                if variant == "invertible":
                    min_entry = min(min_entry, float(resp.min()))
                    worst_col = max(worst_col, float(np.abs(resp.sum(axis=0) - 1.0).max()))
                    worst_l1 = max(worst_l1, abs(norm_l1(resp) - 1.0))
                elif kind in ("gaussian", "embedded"):
                    assert np.abs(resp.sum(axis=1) - 1.0).max() <= 1e-9
    ok = checked >= 500 and min_entry >= 0.0 and worst_col < 1e-9 and worst_l1 < 1e-9
    _verdict(
        ok,
        "response-map contract (column-stochastic invertible maps)",
        f"{checked} inputs; min entry {min_entry:.1e}, max |colsum-1| {worst_col:.1e}, "
        f"max |L1-1| {worst_l1:.1e}",
    )


def test_5_norm_properties():
    rng = np.random.default_rng(90210)
    violations = 0
    for _ in range(1000):
        rows, inner, cols = rng.integers(1, 17, size=3)
        g = rng.standard_normal((rows, inner))
        f = rng.standard_normal((inner, cols))
        prod = g @ f
        if norm_l1(prod) > norm_l1(g) * norm_l1(f) + 1e-9:
            violations += 1
        if norm_frobenius(prod) > norm_frobenius(g) * norm_frobenius(f) + 1e-9:
            violations += 1
        top_g = exact_svd_oracle(g)[0]
        top_f = exact_svd_oracle(f)[0]
        if exact_svd_oracle(prod)[0] > top_g * top_f + 1e-9:
            violations += 1
        if top_g > norm_frobenius(g) + 1e-9:
            violations += 1
    _verdict(
        violations == 0,
        "norm sub-multiplicativity and ordering (1000 random pairs)",
        f"{violations} violations at 1e-9 slack",
    )


def test_6_logdet_oracle_agreement():
    # closed form: g(x) = 0.5x in d = 10
    x = np.zeros((10, 1, 1))
    closed = logdet_series_from_branch(
        lambda y: 0.5 * y, x, LogDetConfig(series_terms=30, hutchinson_samples=4, seed=7)
    )
    closed_err = abs(closed.value - 10.0 * np.log(1.5))
    closed_ok = closed_err <= 1e-4

    rng = np.random.default_rng(99)
    rels = []
    signs_ok = True
    for i in range(20):
        kind = ROUNDTRIP_KINDS[i % 3]
        block = build_block(kind, "invertible", 3, seed=500 + i)
        grid = rng.uniform(0.0, 1.0, (3, 4, 4))  # d = 48
        cfg = LogDetConfig(series_terms=20, hutchinson_samples=64, seed=1000 + i)
        estimate = logdet_series(block, grid, cfg)
        oracle = brute_force_logdet(block, grid)  # raises if sign != +1
        rels.append(abs(estimate.value - oracle) / abs(oracle))
    rels = np.array(rels)
    agreement_ok = bool(np.all(rels <= 0.05))
    ok = closed_ok and signs_ok and agreement_ok
    _verdict(
        ok,
        "log-det oracle agreement (closed form, sign, 20 blocks at d=48)",
        f"closed-form err {closed_err:.2e} (<=1e-4: {closed_ok}); Jacobian sign +1 in "
        f"all 20 oracle runs; per-block rel err median {np.median(rels):.3f} max "
        f"{rels.max():.3f}, {int((rels <= 0.05).sum())}/20 within 5% — the stochastic "
        f"noise floor at 64 probes exceeds 5% of the near-zero log-dets that "
        f"zero-centered random weights produce",
    )


def test_7_contraction_diagnostics(roundtrip_reports):
    blocks, results = roundtrip_reports
    details = []
    ok = True
    for kind in ROUNDTRIP_KINDS:
        estimate = estimate_lipschitz(
            make_residual_branch(blocks[kind]),
            uniform01_sampler((3, 16, 16)),
            pairs=2000,
            seed=7,
            local_probes=8,
        )
        bound = estimate.sup_ratio * 1.1
        worst_ratio = 0.0
        for report in results[kind]:
            trace = np.array(report.trace)
            trace = trace[trace > 1e-12]
            if trace.size > 1:
                ratios = trace[1:] / trace[:-1]
                worst_ratio = max(worst_ratio, float(ratios.max()))
        kind_ok = worst_ratio <= bound
        ok = ok and kind_ok
        details.append(f"{kind}: worst step ratio {worst_ratio:.3f} <= {bound:.3f}")
    # negative control: deliberately broken bound must be flagged, never silent
    broken = build_block("embedded", "invertible", 3, seed=42)
    _scale_weights_inplace(broken, 5.0)
    rng = np.random.default_rng(11)
    flagged = 0
    for _ in range(10):
        report = roundtrip_check(rng.uniform(0.0, 1.0, (3, 16, 16)), broken)
        if report.diverged or not report.converged:
            flagged += 1
            assert not report.converged  # a flagged run never reads as success
    ok = ok and flagged > 0
    details.append(f"negative control flagged {flagged}/10")
    _verdict(ok, "contraction diagnostics", "; ".join(details))


def test_8_determinism_and_formats(tmp_path):
    base = dict(kinds=("gaussian", "embedded"), size=8, batch=4, seed=3, workers=2)
    run_experiment(ExperimentConfig(out_dir=str(tmp_path / "a"), **base))
    run_experiment(ExperimentConfig(out_dir=str(tmp_path / "b"), **base))
    summary_a = (tmp_path / "a" / "summary.txt").read_bytes()
    summary_b = (tmp_path / "b" / "summary.txt").read_bytes()
    rng = np.random.default_rng(8)
    lattice = rng.integers(0, 256, size=(3, 7, 5)).astype(np.float64) / 255.0
    save_ppm(lattice, tmp_path / "probe.ppm")
    bit_exact = np.array_equal(load_ppm(tmp_path / "probe.ppm"), lattice)
    ok = summary_a == summary_b and bit_exact
    _verdict(
        ok,
        "determinism and formats",
        f"summary bytes identical: {summary_a == summary_b}; "
        f"PPM lattice round trip bit-exact: {bit_exact}",
    )
