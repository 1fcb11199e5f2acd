"""Acceptance criteria, one test each.

Every test records a PASS/FAIL line with its measured numbers; the lines are
repeated in the terminal summary. Criteria 6 to 8 run the full reference
config (``configs/reference.ini``) and are marked slow.
"""

import filecmp
import math
import os
import time
from pathlib import Path

import pytest

from epig_bench.cli import cli_main
from epig_bench.config import parse_config
from epig_bench.identities import (
    epig_forms_suite,
    greedy_bound_suite,
    mc_joint_entropy_suite,
    redundancy_suite,
    submodularity_suite,
)
from epig_bench.simulator import ablate_eval_size, final_summary, run_experiment

from conftest import CRITERION_LINES

REFERENCE = Path(__file__).resolve().parents[1] / "configs" / "reference.ini"


def report(n, title, ok, detail):
    line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'} {title}: {detail}"
    CRITERION_LINES.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def forms_and_inequality():
    t0 = time.perf_counter()
    forms, ineq = epig_forms_suite(200, seed=0)
    return forms, ineq, time.perf_counter() - t0


def test_criterion_01_epig_forms_agree(forms_and_inequality):
    forms, _, dt = forms_and_inequality
    report(1, "three exact EPIG forms agree", forms.passed and dt < 10, f"{forms.detail}; {dt:.2f}s (limit 10s)")


def test_criterion_02_submodularity():
    t0 = time.perf_counter()
    bb, epig = submodularity_suite(100, seed=0)
    dt = time.perf_counter() - t0
    ok = bb.passed and epig.passed and dt < 30
    report(2, "diminishing returns", ok, f"BatchBALD: {bb.detail}; EPIG: {epig.detail}; {dt:.2f}s (limit 30s)")


def test_criterion_03_greedy_bound():
    r = greedy_bound_suite(100, seed=0, pool=8, b=3)
    report(3, "greedy >= (1-1/e) optimum", r.passed and r.seconds < 30, f"{r.detail}; {r.seconds:.2f}s (limit 30s)")


def test_criterion_04_redundancy():
    r = redundancy_suite()
    report(4, "BatchBALD redundancy", r.passed, f"{r.detail} (targets ln2 = {math.log(2):.12f}, 2 ln2)")


def test_criterion_05_conditioning_inequality(forms_and_inequality):
    _, ineq, _ = forms_and_inequality
    report(5, "E[conditional BALD] <= BALD", ineq.passed, f"{ineq.detail} (slack 1e-9)")


# --- desk-scale simulations on the reference config ----------------------

@pytest.fixture(scope="module")
def reference():
    return parse_config(REFERENCE)


@pytest.fixture(scope="module")
def shift_runs(reference):
    """BALD and EPIG-BALD in both OoD modes, timed together."""
    out = {}
    t0 = time.perf_counter()
    for mode in ("rejection", "exposure"):
        cfg = reference.with_updates(experiment={"ood_mode": mode, "methods": ("bald_topk", "epig_bald_topk")})
        logs = run_experiment(cfg)
        assert not [log.error for log in logs if log.error]
        out[mode] = final_summary(logs)
    return out, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_06_epig_avoids_ood(shift_runs):
    runs, dt = shift_runs
    ok = dt < 15 * 60
    parts = []
    for mode, s in runs.items():
        (b_acc, b_ood), (e_acc, e_ood) = s["bald_topk"], s["epig_bald_topk"]
        ok &= e_ood < b_ood and e_acc >= b_acc - 0.005
        parts.append(f"{mode}: OoD ratio EPIG-BALD {e_ood:.3f} vs BALD {b_ood:.3f}, "
                     f"accuracy {e_acc:.4f} vs {b_acc:.4f}")
    report(6, "EPIG-BALD acquires less junk than BALD", ok, "; ".join(parts) + f"; {dt:.0f}s (limit 900s)")


@pytest.mark.slow
def test_criterion_07_against_uniform(reference, shift_runs):
    # the reference config's own OoD mode; EPIG-BALD reuses the run from criterion 6
    mode = reference.experiment.ood_mode
    cfg = reference.with_updates(experiment={"methods": ("uniform", "epig_entropy")})
    logs = run_experiment(cfg)
    assert not [log.error for log in logs if log.error]
    s = final_summary(logs)
    e_acc = shift_runs[0][mode]["epig_bald_topk"][0]
    u_acc, h_acc = s["uniform"][0], s["epig_entropy"][0]
    ok = e_acc > u_acc and h_acc <= u_acc + 0.01
    report(7, "EPIG-BALD beats uniform, EPIG-entropy does not", ok,
           f"{mode} mode, final median accuracy EPIG-BALD {e_acc:.4f}, uniform {u_acc:.4f}, EPIG-entropy {h_acc:.4f}")


@pytest.mark.slow
def test_criterion_08_eval_size_trend(reference):
    cfg = reference.with_updates(experiment={"methods": ("epig_bald_topk",)})
    sizes = [10, 50, 200]
    results = ablate_eval_size(cfg, sizes)
    acc = [results[n][1]["epig_bald_topk"][0] for n in sizes]
    drops = [a - b for a, b in zip(acc, acc[1:]) if b < a]
    ok = len(drops) <= 1 and all(d <= 0.005 for d in drops)
    detail = ", ".join(f"eval {n}: {a:.4f}" for n, a in zip(sizes, acc))
    report(8, "larger evaluation sets do not hurt", ok, f"final median accuracy {detail}")


def test_criterion_09_mc_joint_entropy():
    r = mc_joint_entropy_suite(m=10_000, seed=0)
    report(9, "MC joint entropy within 3 SE", r.passed, r.detail)


def test_criterion_10_determinism(tmp_path):
    # reduced reference config so the two runs stay quick
    cfg = tmp_path / "small.ini"
    cfg.write_text(REFERENCE.read_text().replace("rounds = 40", "rounds = 3")
                   + "\n[model]\nepochs = 40\nmembers = 4\n\n[epig]\ndistill_epochs = 20\n")
    dirs = [tmp_path / "a", tmp_path / "b"]
    codes = [cli_main(["run", str(cfg), "--trials", "2", "--out-dir", str(d)]) for d in dirs]
    names = sorted(os.listdir(dirs[0]))
    _, mismatch, errors = filecmp.cmpfiles(dirs[0], dirs[1], names, shallow=False)
    check = cli_main(["check-identities", "--instances", "200", "--seed", "0"])
    ok = codes == [0, 0] and not mismatch and not errors and check == 0
    report(10, "byte-identical reruns, identities exit 0", ok,
           f"run exit codes {codes}, {len(names)} files compared ({', '.join(names)}), "
           f"differing {mismatch + errors}, check-identities exit {check}")
