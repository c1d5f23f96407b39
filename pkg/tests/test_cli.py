import json
import subprocess
import sys

import numpy as np
import pytest

from mltr.cli import main
from mltr.experiment import read_csv_rows
from mltr.ranker import ParameterVector, load_params, save_params


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_inspect_data_json(workdir, capsys, synthetic):
    code, out, _ = run(capsys, "inspect-data", str(workdir / "corpus.txt"), "--expected-dims", "8", "--json")
    assert code == 0
    st = json.loads(out)
    assert st["queries"] == len(synthetic) and st["features"] == 8
    code, out, _ = run(capsys, "inspect-data", "--config", str(workdir / "small.toml"))
    assert code == 0 and "queries" in out.splitlines()[0]


def test_train_writes_checkpoints(workdir, capsys):
    out_dir = workdir / "ckpt"
    code, out, _ = run(capsys, "train", "--config", str(workdir / "small.toml"), "--seed", "1",
                       "--arms", "LTR,MLTR_finetune", "--out", str(out_dir))
    assert code == 0
    names = sorted(p.name for p in out_dir.iterdir())
    assert names == [
        "ltr_p1n9_seed1.ckpt", "ltr_p1n9_seed1.state.json", "ltr_p1n9_seed1_history.csv",
        "mltr_p1n9_seed1.ckpt", "mltr_p1n9_seed1.state.json", "mltr_p1n9_seed1_history.csv",
    ]
    theta, header = load_params(out_dir / "mltr_p1n9_seed1.ckpt")
    assert header["layout"] == [8, 8, 1] and header["seed"] == 1
    state = json.loads((out_dir / "mltr_p1n9_seed1.state.json").read_text())
    assert state["epoch"] == 3
    assert len(read_csv_rows(out_dir / "mltr_p1n9_seed1_history.csv")) == 3


def test_evaluate_checkpoint_matches_experiment(workdir, capsys):
    cfg = str(workdir / "small.toml")
    assert run(capsys, "train", "--config", cfg, "--seed", "0", "--arms", "MLTR_finetune", "--out", str(workdir / "m"))[0] == 0
    code, out, _ = run(capsys, "evaluate", "--config", cfg, "--seed", "0", "--arms", "LTR,MLTR_finetune",
                       "--out", str(workdir / "r"))
    assert code == 0
    rows = read_csv_rows(workdir / "r" / "results.csv")
    want = next(float(r["ndcg10"]) for r in rows if r["arm"] == "MLTR_finetune")
    code, out, _ = run(capsys, "evaluate", "--config", cfg, "--seed", "0", "--checkpoint",
                       str(workdir / "m" / "mltr_p1n9_seed0.ckpt"))
    assert code == 0
    got = json.loads(out)
    assert got["ndcg"]["10"] == pytest.approx(want, abs=5e-7) and got["finetune_epochs"] == 1


def test_sweep_command(workdir, capsys):
    code, out, _ = run(capsys, "sweep", "--config", str(workdir / "small.toml"), "--seed", "0",
                       "--arms", "LTR,MLTR_finetune", "--out", str(workdir / "s"))
    assert code == 0
    assert (workdir / "s" / "relative_improvement.csv").exists()


@pytest.mark.parametrize(
    "argv,code",
    [
        (["train"], 2),
        (["train", "--config", "missing.toml"], 2),
        (["train", "--config", "{cfg}", "--arms", "LTR,Bogus"], 2),
        (["inspect-data", "{dir}/nothing.txt"], 3),
    ],
)
def test_exit_codes(workdir, capsys, argv, code):
    argv = [a.format(cfg=workdir / "small.toml", dir=workdir) for a in argv]
    got, _, err = run(capsys, *argv)
    assert got == code and err


def test_malformed_data_exits_3(workdir, capsys):
    (workdir / "corpus.txt").write_text("1 qid:a 1:0.5\n0 qid:a 1:zz\n")
    code, _, err = run(capsys, "inspect-data", "--config", str(workdir / "small.toml"))
    assert code == 3 and "line 2" in err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_fine_tune_exits_4(workdir, capsys):
    layout = (8, 8, 1)
    theta = ParameterVector(np.full(9 * 8 + 9, 1e200), layout)
    ckpt = save_params(theta, workdir / "huge.ckpt")
    code, _, err = run(capsys, "evaluate", "--config", str(workdir / "small.toml"), "--checkpoint", str(ckpt))
    assert code == 4 and "non-finite" in err


def test_module_entry_point(workdir):
    proc = subprocess.run([sys.executable, "-m", "mltr", "inspect-data", str(workdir / "corpus.txt"), "--json"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and json.loads(proc.stdout)["features"] == 8
