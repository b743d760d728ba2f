import json
import math

import numpy as np
import pytest

from coxjm import FitConfig, TransitionParams, ValidationError, em_fit
from coxjm.cli import main
from coxjm.simulate import SimConfig, gen_dataset
from coxjm.study import (
    StudyConfig,
    config_hash,
    derive_rep_seed,
    load_report_csv,
    run_study,
    write_report_csv,
    write_report_json,
)

ALPHA0 = TransitionParams(0.0, 1.0, 0.0, 0.7, 0.25)


def _study(n=25, reps=3, seed=0, estimators=("npml", "lvcf")):
    sim = SimConfig(n=n, grid_step=0.25, tau=3.0, alpha0=ALPHA0, beta0=1.0,
                    lambda0=0.3, censor_rate=0.2, seed=seed)
    return StudyConfig(sim=sim, fit=FitConfig(), replications=reps, estimators=estimators)


def test_study_deterministic_csv(tmp_path):
    cfg = _study()
    r1 = run_study(cfg)
    r2 = run_study(cfg)
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_report_csv(r1, p1)
    write_report_csv(r2, p2)
    assert p1.read_bytes() == p2.read_bytes()
    rows = load_report_csv(p1)
    assert {r["estimator"] for r in rows} == {"npml", "lvcf"}
    assert all(r["config_hash"] == config_hash(cfg) for r in rows)


def test_single_replication_equals_single_fit():
    cfg = _study(reps=1, estimators=("npml",))
    report = run_study(cfg)
    seed = derive_rep_seed(cfg.sim.seed, 0)
    from dataclasses import replace

    ds, _ = gen_dataset(replace(cfg.sim, seed=seed))
    fit = em_fit(ds, config=cfg.fit)
    row = report.rows[0]
    assert row["mean_beta"] == pytest.approx(fit.theta_hat.beta, abs=1e-12)
    assert row["convergence_rate"] == 1.0
    assert math.isnan(row["emp_sd"])


def test_study_config_round_trip():
    cfg = _study()
    back = StudyConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert config_hash(back) == config_hash(cfg)


def test_mixed_hash_refused(tmp_path):
    cfg = _study()
    r = run_study(cfg)
    p = tmp_path / "r.csv"
    write_report_csv(r, p)
    lines = p.read_text().splitlines()
    tampered = lines + [lines[1].replace(config_hash(cfg), "deadbeefdeadbeef")]
    p2 = tmp_path / "bad.csv"
    p2.write_text("\n".join(tampered) + "\n")
    with pytest.raises(ValidationError):
        load_report_csv(p2)


def test_study_report_json(tmp_path):
    cfg = _study(reps=2, estimators=("npml",))
    r = run_study(cfg)
    p = tmp_path / "r.json"
    write_report_json(r, p)
    doc = json.loads(p.read_text())
    assert doc["config_hash"] == config_hash(cfg)
    assert len(doc["replications"]) == 2
    assert "wall_time_s" in doc


def test_workers_give_same_rows():
    cfg = _study(reps=4, estimators=("npml",))
    a = run_study(cfg, workers=1)
    b = run_study(cfg, workers=2)
    assert a.rows == b.rows


def test_cli_mc_study_and_compare(tmp_path, capsys):
    sim = _sim_dict = {
        "n": 20, "grid_step": 0.25, "tau": 3.0, "alpha0": ALPHA0.to_dict(),
        "beta0": 1.0, "lambda0": 0.3, "censor_rate": 0.2, "seed": 11, "truncate_at": None,
    }
    study = {"sim": sim, "replications": 2, "estimators": ["npml", "lvcf"],
             "ci_level": 0.95, "output_dir": None, "workers": 1}
    cfgp = tmp_path / "study.json"
    cfgp.write_text(json.dumps(study))
    out = tmp_path / "study_out"
    assert main(["mc-study", "--config", str(cfgp), "--out", str(out)]) == 0
    assert (out / "study_report.csv").exists()
    assert main(["compare", "--report", str(out / "study_report.csv"),
                 str(out / "study_report.csv")]) == 0
    text = capsys.readouterr().out
    assert "npml" in text and "lvcf" in text
