import json
import subprocess
import sys

import numpy as np
import pytest

import zestkit as zk
from zestkit.cli import main
from zestkit.oracle import ModelServer


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One trained pair of models plus dataset and plan, built via the CLI."""
    root = tmp_path_factory.mktemp("cliws")
    common = ["--classes", "3", "--features", "16", "--train-size", "400",
              "--data-seed", "5", "--epochs", "30"]
    code = main(["train", *common, "--seed", "1", "--model-id", "victim",
                 "--save-data", str(root / "train.ds"),
                 "--out", str(root / "victim.mlp")])
    assert code == 0
    code = main(["train", *common, "--seed", "2", "--model-id", "proxy",
                 "--out", str(root / "proxy.mlp")])
    assert code == 0
    code = main(["plan", "--data", str(root / "train.ds"), "--n", "4",
                 "--p", "80", "--segments", "8", "--seed", "3",
                 "--screen", str(root / "victim.mlp"), str(root / "proxy.mlp"),
                 "--out", str(root / "shared.plan")])
    assert code == 0
    return root


def test_train_reports_accuracy(capsys, tmp_path):
    code, out, err = run_cli(
        capsys, "train", "--classes", "3", "--features", "8",
        "--train-size", "200", "--epochs", "15", "--model-id", "m",
        "--out", str(tmp_path / "m.mlp"))
    assert code == 0
    assert "trained m: accuracy" in out
    assert (tmp_path / "m.mlp").exists()


def test_plan_prints_fingerprint(capsys, workspace):
    plan = zk.load_plan(workspace / "shared.plan")
    code, out, err = run_cli(
        capsys, "plan", "--data", str(workspace / "train.ds"), "--n", "4",
        "--p", "80", "--segments", "8", "--seed", "3",
        "--out", str(workspace / "again.plan"))
    assert code == 0
    assert "plan N=4 P=80 S=8" in out
    assert plan.fingerprint()[:12] in out  # same seed and shape, same plan


def test_sign_reports_query_bill(capsys, workspace):
    code, out, err = run_cli(
        capsys, "sign", "--oracle", str(workspace / "victim.mlp"),
        "--plan", str(workspace / "shared.plan"),
        "--store", str(workspace / "store"),
        "--out", str(workspace / "victim.sig"))
    assert code == 0
    assert "320 perturbation queries" in out          # N*P = 4*80
    assert "victim queries: total=324" in out         # + N baselines
    assert "signature=320" in out
    assert "signature_baseline=4" in out
    assert (workspace / "store" / "index.tsv").exists()


def test_sign_proxy_and_dist(capsys, workspace):
    code, out, _ = run_cli(
        capsys, "sign", "--oracle", str(workspace / "proxy.mlp"),
        "--plan", str(workspace / "shared.plan"),
        "--store", str(workspace / "store"),
        "--out", str(workspace / "proxy.sig"))
    assert code == 0
    code, out, _ = run_cli(
        capsys, "dist", str(workspace / "victim.sig"),
        str(workspace / "proxy.sig"), "--metric", "cosine")
    assert code == 0
    d = float(out.strip())
    assert 0.0 < d < 2.0


def test_dist_identical_signatures_prints_zero(capsys, workspace):
    code, out, _ = run_cli(
        capsys, "dist", str(workspace / "victim.sig"),
        str(workspace / "victim.sig"), "--metric", "l1")
    assert code == 0
    assert out.strip() == "0.0000"


def test_select_from_store(capsys, workspace):
    code, out, _ = run_cli(
        capsys, "select", "--store", str(workspace / "store"),
        "--victim-sig", str(workspace / "victim.sig"),
        "--metric", "cosine", "--out", str(workspace / "select.csv"))
    assert code == 0
    assert "selected victim (distance 0.0000" in out  # own signature is stored
    text = (workspace / "select.csv").read_text()
    assert text.startswith("victim_id,proxy_id,metric,distance,rank\n")


def test_attack_and_transfer(capsys, workspace):
    code, out, _ = run_cli(
        capsys, "attack", "--model", str(workspace / "proxy.mlp"),
        "--data", str(workspace / "train.ds"), "--points", "25",
        "--epsilon", "0.2", "--step-size", "0.02", "--steps", "20",
        "--restarts", "3", "--seed", "0",
        "--csv", str(workspace / "batch.csv"),
        "--out", str(workspace / "batch.adv"))
    assert code == 0
    assert "local success" in out
    assert "epsilon 0.2" in out

    code, out, _ = run_cli(
        capsys, "transfer", "--victim", str(workspace / "victim.mlp"),
        "--batch", str(workspace / "batch.adv"),
        "--out", str(workspace / "transfer.csv"))
    assert code == 0
    assert "transfer " in out
    assert "victim queries: total=50 " in out  # 2 * 25 rows
    assert "attack_eval=50" in out
    report = (workspace / "transfer.csv").read_text().strip().split("\n")
    assert report[0].startswith("victim_id,surrogate_id,total_points")
    assert report[1].split(",")[0] == "victim"


def test_remote_sign_matches_local(capsys, workspace, tmp_path):
    model = zk.load_model(workspace / "victim.mlp")
    with ModelServer(model, port=0) as server:
        code, out, _ = run_cli(
            capsys, "sign", "--oracle", server.base_url,
            "--plan", str(workspace / "shared.plan"),
            "--out", str(tmp_path / "remote.sig"))
    assert code == 0
    remote_sig = zk.load_signature(tmp_path / "remote.sig")
    local_sig = zk.load_signature(workspace / "victim.sig")
    assert np.array_equal(remote_sig.flatten(include_intercepts=True),
                          local_sig.flatten(include_intercepts=True))
    assert remote_sig.model_id.startswith("http://127.0.0.1:")


def test_remote_transfer(capsys, workspace):
    model = zk.load_model(workspace / "victim.mlp")
    with ModelServer(model, port=0) as server:
        code, out, _ = run_cli(
            capsys, "transfer", "--victim", server.base_url,
            "--batch", str(workspace / "batch.adv"))
    assert code == 0
    assert "attack_eval=50" in out


def test_replay_passes(capsys):
    code, out, _ = run_cli(capsys, "replay", "--metric", "linf")
    assert code == 0
    assert "10/10 closest-pair matches" in out
    code, out, _ = run_cli(capsys, "replay", "--metric", "cosine",
                           "--stability")
    assert code == 0
    assert "10/10 closest-pair matches" in out
    assert "ties flagged: 1" in out
    assert "rank agreement vs n=128" in out


def test_campaign_cli(capsys, tmp_path):
    cfg = {
        "master_seed": 41,
        "dataset": {"kind": "blobs", "classes": 3, "features": 8,
                    "train_size": 200, "test_size": 100, "noise": 0.08},
        "victim": {"kind": "local", "hidden": [10], "epochs": 20},
        "portfolio": [
            {"model_id": "sur-a", "hidden": [10], "epochs": 20},
            {"model_id": "sur-b", "hidden": [16], "epochs": 20},
            {"model_id": "sur-c", "hidden": [6], "epochs": 6,
             "train_fraction": 0.5, "label_noise": 0.25},
        ],
        "lime": {"n": 4, "p": 40, "segments": 8},
        "metrics": ["cosine"],
        "attack": {"epsilon": 0.15, "step_size": 0.03, "steps": 10,
                   "restarts": 2, "points": 15},
    }
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(json.dumps(cfg))
    code, out, _ = run_cli(capsys, "campaign", "--config", str(cfg_path),
                           "--out", str(tmp_path / "run"))
    assert code == 0
    assert "selected[cosine] = sur-" in out
    assert "pearson[cosine] = " in out
    assert "victim queries: total=" in out
    manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert manifest["status"] == "ok"


def test_usage_error_exits_two(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["dist", "only-one-file"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2


def test_operation_error_exits_one(capsys, tmp_path):
    code, out, err = run_cli(capsys, "dist", str(tmp_path / "missing_a.sig"),
                             str(tmp_path / "missing_b.sig"))
    assert code == 1
    assert err.startswith("error:")

    bad = tmp_path / "bad.sig"
    bad.write_bytes(b"not a container at all")
    code, out, err = run_cli(capsys, "dist", str(bad), str(bad))
    assert code == 1
    assert "error:" in err


def test_mismatched_plans_exit_one(capsys, workspace, tmp_path):
    code, _, _ = run_cli(
        capsys, "plan", "--data", str(workspace / "train.ds"), "--n", "4",
        "--p", "80", "--segments", "8", "--seed", "99",
        "--out", str(tmp_path / "other.plan"))
    assert code == 0
    code, _, _ = run_cli(
        capsys, "sign", "--oracle", str(workspace / "victim.mlp"),
        "--plan", str(tmp_path / "other.plan"),
        "--out", str(tmp_path / "other.sig"))
    assert code == 0
    code, out, err = run_cli(
        capsys, "dist", str(workspace / "victim.sig"),
        str(tmp_path / "other.sig"))
    assert code == 1
    assert "different plans" in err


def test_console_script_installed():
    proc = subprocess.run([sys.executable, "-m", "zestkit.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "train" in proc.stdout and "campaign" in proc.stdout
