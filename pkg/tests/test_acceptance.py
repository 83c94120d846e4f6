"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v`` (the lines appear in the terminal
summary) or ``python tests/test_acceptance.py`` to print them directly.
"""

import json
import math
import sys
import tempfile
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from conftest import CONFOUNDERS, balanced_spec  # noqa: E402
from oracles import constrained_representative, dense_svd_pair  # noqa: E402

from morpho.cohort import Cohort  # noqa: E402
from morpho.discriminant import PipelineConfig, fit_pipeline, pattern_similarity, whitened_scores  # noqa: E402
from morpho.experiments import deflation_population_study, dummy_variable_experiment, stability_experiment  # noqa: E402
from morpho.linear import logistic_fit, logistic_objective, pls_fit  # noqa: E402
from morpho.mesh import LV_ENDO, LV_EPI, TriMesh, box, closed_volume, icosphere, measure, signed_volume, unflatten  # noqa: E402
from morpho.procrustes import generalized_procrustes, random_rotation, rigid_align  # noqa: E402
from morpho.regression_shape import regression_fit, representative_for_value  # noqa: E402
from morpho.synth import generate, imbalance_spec  # noqa: E402

RESULTS: dict[int, tuple[bool, str]] = {}


def record(n: int, ok: bool, detail: str) -> None:
    RESULTS[n] = (bool(ok), detail)
    print(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")


# -- 1 ---------------------------------------------------------------------------


def criterion_1():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    r_err = t_err = 0.0
    for _ in range(100):
        x = rng.standard_normal((40, 3)) * [30.0, 20.0, 10.0]
        r = random_rotation(rng)
        t = rng.uniform(-50, 50, 3)
        tf, _ = rigid_align(x.reshape(-1), (x @ r.T + t).reshape(-1))
        r_err = max(r_err, np.abs(tf.rotation - r).max())
        t_err = max(t_err, np.abs(tf.translation - t).max())
    base = rng.standard_normal((60, 3)) * [30.0, 20.0, 10.0]
    copies = np.array([(base @ random_rotation(rng).T + rng.uniform(-20, 20, 3)).reshape(-1) for _ in range(10)])
    aligned = generalized_procrustes(copies).aligned
    pair = max(np.linalg.norm(a - b) for i, a in enumerate(aligned) for b in aligned[i + 1 :])
    elapsed = time.perf_counter() - t0
    ok = r_err < 1e-9 and t_err < 1e-9 and pair < 1e-8 and elapsed < 10
    return ok, f"rotation err {r_err:.1e}, translation err {t_err:.1e}, GPA pairwise {pair:.1e}, {elapsed:.1f} s"


# -- 2 ---------------------------------------------------------------------------


def criterion_2():
    rng = np.random.default_rng(2)
    worst_dot = 1.0
    worst_orth = 0.0
    for _ in range(50):
        n, p, q = rng.integers(10, 40), rng.integers(2, 30), rng.integers(1, 6)
        x = rng.standard_normal((n, p))
        y = x[:, :1] @ rng.standard_normal((1, q)) + rng.standard_normal((n, q))
        m = pls_fit(x, y, min(3, p))
        u, v, _ = dense_svd_pair(x, y)
        worst_dot = min(worst_dot, abs(m.x_weights[0] @ u), abs(m.y_weights[0] @ v))
        xr, yr = x - x.mean(axis=0), y - y.mean(axis=0)
        for w, pl, c in zip(m.x_weights, m.x_loadings, m.y_loadings):
            t = xr @ w
            xr = xr - np.outer(t, pl)
            yr = yr - np.outer(t, c)
            nt = np.linalg.norm(t)
            worst_orth = max(worst_orth, np.abs(xr.T @ t).max() / nt, np.abs(yr.T @ t).max() / nt)
    ok = worst_dot >= 1 - 1e-8 and worst_orth < 1e-8
    return ok, f"min |dot| with dense SVD {worst_dot:.12f}, max relative block/score product {worst_orth:.1e}"


# -- 3 ---------------------------------------------------------------------------


def criterion_3():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((80, 5))
    y = (x @ [1.0, -0.5, 0.3, 0.0, 0.8] + rng.standard_normal(80) > 0).astype(float)
    h = 1e-6
    worst = 0.0
    for _ in range(20):
        params = rng.standard_normal(6)
        _, g = logistic_objective(params, x, y, 0.1)
        fd = np.array(
            [
                (logistic_objective(params + h * e, x, y, 0.1)[0] - logistic_objective(params - h * e, x, y, 0.1)[0]) / (2 * h)
                for e in np.eye(6)
            ]
        )
        worst = max(worst, np.linalg.norm(g - fd) / np.linalg.norm(fd))
    fit = logistic_fit(x, y)
    ok = worst < 1e-6 and fit.grad_norm <= 1e-6
    return ok, f"max relative gradient error {worst:.1e}, optimizer gradient norm {fit.grad_norm:.1e}"


# -- 4 ---------------------------------------------------------------------------


def criterion_4():
    v, f = icosphere(3)
    sphere = abs(signed_volume(v, f) - 4 * math.pi / 3) / (4 * math.pi / 3)
    bv, bf = box((10.0, 10.0, 10.0), (1.0, 2.0, 3.0))
    cube = abs(signed_volume(bv, bf) - 1000.0)
    r_in, r_out = 20.0, 28.0
    sv, sf = icosphere(4)
    n = len(sv)
    mesh = TriMesh(np.vstack([sv * r_in, sv * r_out]), np.vstack([sf, sf + n]), np.array([LV_ENDO] * n + [LV_EPI] * n))
    mass = (closed_volume(mesh, LV_EPI) - closed_volume(mesh, LV_ENDO)) * 1.05
    analytic = 4 / 3 * math.pi * (r_out**3 - r_in**3) / 1000 * 1.05
    mass_err = abs(mass - analytic) / analytic
    ok = sphere < 0.01 and cube < 1e-12 and mass_err < 0.01
    return ok, f"icosphere rel err {sphere:.2%}, cube abs err {cube:.1e} mm^3, shell mass rel err {mass_err:.2%}"


# -- 5 ---------------------------------------------------------------------------


DR_CONFIGS = {
    "PCA5": PipelineConfig(dr_method="pca", pca_modes=5),
    "PLS3": PipelineConfig(dr_method="pls", pls_modes=3),
    "PCA20+PLS3": PipelineConfig(dr_method="pca+pls", pca_modes=20, pls_modes=3),
}


def criterion_5():
    t0 = time.perf_counter()
    cohort, truth = generate(balanced_spec(n=80, noise_ratio=0.1))
    dots = {name: fit_pipeline(cohort, cfg).pattern.standardized @ truth.class_direction for name, cfg in DR_CONFIGS.items()}
    elapsed = time.perf_counter() - t0
    ok = min(dots.values()) >= 0.9 and elapsed < 120
    detail = ", ".join(f"{k} {v:.4f}" for k, v in dots.items())
    return ok, f"w_hat . g on n=160: {detail}; {elapsed:.1f} s"


# -- 6 ---------------------------------------------------------------------------


def criterion_6():
    t0 = time.perf_counter()
    cohort, truth = generate(imbalance_spec(0, n_controls=160))
    configs = [replace_cfg(cfg, adjust=a) for cfg in DR_CONFIGS.values() for a in (False, True)]
    rep = stability_experiment(cohort, configs, n_seeds=100).records
    runs = rep[rep["seed"] >= 0]

    def arm(label, adjust):
        return runs[(runs["config"] == label) & (runs["adjust"] == adjust)].set_index("seed")

    lines = []
    for label in DR_CONFIGS:
        a, u = arm(label, True), arm(label, False)
        lines.append(
            f"{label}: adjusted wins {(a['dot_full'] > u['dot_full']).sum()}/100, "
            f"median dot adj {a['dot_full'].median():.3f} vs unadj {u['dot_full'].median():.3f}, "
            f"median LV mass ratio at +2SD adj {a['lv_mass_ratio'].median():.3f} vs unadj {u['lv_mass_ratio'].median():.3f}"
        )
    a, u = arm("PCA5", True), arm("PCA5", False)
    wins = int((a["dot_full"] > u["dot_full"]).sum())
    # ground truth: the class effect increases LV mass
    t = cohort.template
    amp = math.sqrt(t.n_vertices)
    truth_mass = measure(unflatten(t.vertices.reshape(-1) + amp * truth.class_direction, t)).lv_mass / measure(t).lv_mass
    flip = u["lv_mass_ratio"].median() < 1.0 < a["lv_mass_ratio"].median() and truth_mass > 1.0
    elapsed = time.perf_counter() - t0
    ok = wins >= 80 and a["dot_full"].median() > u["dot_full"].median() and flip and elapsed < 1800
    return ok, f"PCA5 adjusted wins {wins}/100, mass sign flip {'reproduced' if flip else 'absent'}; {elapsed:.0f} s\n    " + "\n    ".join(lines)


def replace_cfg(cfg, **kw):
    return replace(cfg, confounders=CONFOUNDERS, **kw)


# -- 7 ---------------------------------------------------------------------------


def criterion_7():
    cohort, _ = generate(imbalance_spec(0))
    ok = True
    parts = []
    for label in ("PLS3", "PCA20+PLS3"):
        cfg = replace_cfg(DR_CONFIGS[label], deflate=True)
        med = deflation_population_study(cohort, cfg, n_seeds=100).runs().groupby("arm")["dot_full"].median()
        ok &= med["a"] >= med["b"] and med["c"] < med["a"]
        parts.append(f"{label}: a {med['a']:.3f}, b {med['b']:.3f}, c {med['c']:.3f}")
    return ok, "median dot_full per arm, " + "; ".join(parts)


# -- 8 ---------------------------------------------------------------------------


def criterion_8():
    cohort, _ = generate(imbalance_spec(0))
    d = dummy_variable_experiment(cohort, 0.5, 100, confounders=CONFOUNDERS)
    ctl = d[d["training"] == "controls"]["dot"]
    both = d[d["training"] == "both"]["dot"]
    gap = both.median() - ctl.median()
    ok = ctl.abs().median() <= 0.2 and gap >= 0.3
    return ok, f"controls-only median |dot| {ctl.abs().median():.3f}, both-classes median {both.median():.3f}, gap {gap:.3f}"


# -- 9 ---------------------------------------------------------------------------


def criterion_9():
    cohort, _ = generate(balanced_spec())
    rng = np.random.default_rng(9)
    cfgs = list(DR_CONFIGS.values())
    worst = 0.0
    for _ in range(20):
        fits = []
        for _ in range(2):
            labels = rng.permutation(cohort.labels)
            c = Cohort(cohort.subject_ids, cohort.shapes, labels, cohort.demographics, cohort.template)
            fits.append(fit_pipeline(c, cfgs[rng.integers(len(cfgs))]))
        a, b = fits
        k = a.pattern.whiten_modes
        za = whitened_scores(a.pattern, a.pca, cohort.shapes, k)
        zb = whitened_scores(b.pattern, a.pca, cohort.shapes, k)
        worst = max(worst, abs(np.corrcoef(za, zb)[0, 1] - pattern_similarity(a.pattern, b.pattern)))
    return worst <= 0.02, f"max |corr(whitened scores) - w_a.w_b| over 20 pairs {worst:.1e}"


# -- 10 --------------------------------------------------------------------------


def criterion_10():
    cohort, _ = generate(balanced_spec(n=60, variation_modes=8))
    ctl = cohort.subset(cohort.class_mask("controls"))
    m = regression_fit(ctl.shapes, ctl.demographics["bmi"].to_numpy(), 3)
    k = m.metric_modes
    rng = np.random.default_rng(10)
    dev = con = 0.0
    for b in m.value_mean + rng.uniform(-2.5, 2.5, 20) * m.value_sd:
        x = representative_for_value(m, b)
        ref = constrained_representative(m.mean_shape, m.pca.components[:k], m.pca.variances[:k], m.coeffs, m.value_mean, b)
        dev = max(dev, np.abs(x - ref).max())
        con = max(con, abs(m.predict(x) - b))
    return dev < 1e-6 and con < 1e-9, f"max deviation from SLSQP {dev:.1e} mm, max |predict - b| {con:.1e}"


# -- 11 --------------------------------------------------------------------------


def criterion_11():
    from test_cli import SMALL_SPEC, workflow

    with tempfile.TemporaryDirectory() as tmp:
        base = Path(tmp)
        spec = base / "spec.json"
        spec.write_text(json.dumps(SMALL_SPEC))
        trees = []
        for name in ("a", "b"):
            root = base / name
            root.mkdir()
            codes = workflow(root, spec)
            if any(codes.values()):
                return False, f"commands failed: {codes}"
            trees.append({p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()})
        a, b = trees
        diff = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
        n_manifests = sum(k.endswith("manifest.json") for k in a)
        commands = sorted(codes)
    return not diff, f"{len(commands)} command runs, {len(a)} files ({n_manifests} manifests), differing: {diff or 'none'}"


CRITERIA = {
    1: criterion_1,
    2: criterion_2,
    3: criterion_3,
    4: criterion_4,
    5: criterion_5,
    6: criterion_6,
    7: criterion_7,
    8: criterion_8,
    9: criterion_9,
    10: criterion_10,
    11: criterion_11,
}


@pytest.mark.acceptance
@pytest.mark.parametrize("n", list(CRITERIA))
def test_criterion(n):
    ok, detail = CRITERIA[n]()
    record(n, ok, detail)
    assert ok, detail


if __name__ == "__main__":
    failed = 0
    for n, fn in CRITERIA.items():
        ok, detail = fn()
        record(n, ok, detail)
        failed += not ok
    sys.exit(1 if failed else 0)
