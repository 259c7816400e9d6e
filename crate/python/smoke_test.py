#!/usr/bin/env python3
"""End-to-end exercise of the Python bindings: generate a study, evaluate
it, run resampling inference, round-trip CSV and JSON artifacts, and run a
tiny Monte-Carlo experiment."""

import json
import math
import sys
import tempfile
from pathlib import Path


def _load_module():
    try:
        import steam_eval_py

        return steam_eval_py
    except ImportError:
        pass
    root = Path(__file__).resolve().parents[1]
    for profile in ("release", "debug"):
        so = root / "target" / profile / "libsteam_eval_py.so"
        if so.exists():
            staging = Path(tempfile.mkdtemp(prefix="steam_eval_py_"))
            (staging / "steam_eval_py.so").write_bytes(so.read_bytes())
            sys.path.insert(0, str(staging))
            import steam_eval_py

            return steam_eval_py
    raise SystemExit(
        "steam_eval_py is not importable; run `pip install -e . --no-build-isolation`"
        " or `cargo build -p steam-eval-py` first"
    )


se = _load_module()


def main():
    study = se.generate_study(n=150, big_n=700, n_t=700, validation_labels=60, seed=11)
    assert study.n == 150 and study.n_target > 0 and study.n_validation == 60
    assert len(study.feature_names) == 10
    assert "Study(" in repr(study)

    result = se.evaluate(
        study, folds=2, seed=11, methods=["steam", "weighted", "target_labeled"]
    )
    assert set(result.methods()) == {"steam", "weighted", "target_labeled"}
    assert result.used_cv and not result.failures
    auc = result.auc("steam")
    assert 0.5 < auc <= 1.0, auc
    assert 0.0 < result.prevalence("steam") < 1.0

    roc = result.roc("steam")
    assert roc[0] == (0.0, 1.0, 1.0)
    cutoffs = [c for c, _, _ in roc]
    assert cutoffs == sorted(cutoffs)
    fprs = [f for _, f, _ in roc]
    assert all(a >= b for a, b in zip(fprs, fprs[1:]))

    ops = result.operating_points("steam")
    assert len(ops) == 1 and abs(ops[0]["u0"] - 0.05) < 1e-12
    mu, tpr = result.prevalence("steam"), ops[0]["tpr"]
    ppv = mu * tpr / (mu * tpr + (1.0 - mu) * 0.05)
    assert math.isclose(ops[0]["ppv"], ppv, rel_tol=1e-12)

    inference = result.perturb(variant="approx", draws=120, seed=11)
    assert inference.variant == "approx"
    assert inference.draws_requested == 120
    assert inference.draws_failed * 20 <= 120
    scalars = {s["name"]: s for s in inference.scalars()}
    assert scalars["auc"]["se"] > 0.0
    assert scalars["auc"]["ci_lower"] < scalars["auc"]["ci_upper"]
    band = inference.band()
    assert band and all(lo <= hi for _, lo, hi in band)

    artifact = json.loads(result.report_json(inference))
    assert artifact["schema_version"] == 1
    steam_block = next(m for m in artifact["methods"] if m["method"] == "steam")
    assert steam_block["inference"]["draws_requested"] == 120

    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "study.csv"
        study.to_csv(str(path))
        reloaded = se.Study.from_csv(str(path))
        assert reloaded.n == study.n and reloaded.n_validation == study.n_validation
        again = se.evaluate(reloaded, folds=2, seed=11, methods=["steam"])
        assert again.auc("steam") == auc, (again.auc("steam"), auc)

    sim = se.simulate(
        n=120,
        big_n=600,
        n_t=600,
        validation_labels=40,
        replicates=2,
        oracle_draws=2000,
        folds=2,
        seed=1,
        methods=["steam", "weighted"],
    )
    rows = sim.table()
    assert any(r["method"] == "steam" and r["measure"] == "auc" for r in rows)
    assert sim.replicates == 2
    truth = sim.truth()
    assert 0.5 < truth["auc"] <= 1.0
    assert "measure" in str(sim)

    print(
        "smoke test passed:",
        f"steam auc {auc:.4f} (se {scalars['auc']['se']:.4f}),",
        f"{len(rows)} simulation cells",
    )


if __name__ == "__main__":
    main()
