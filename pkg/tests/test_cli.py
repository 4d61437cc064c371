import numpy as np
import pytest

from crfseg.cli import FROZEN_FILTER_TOLERANCE, cli_dispatch
from crfseg.formats import load_label_map, load_params


@pytest.fixture
def run_cfg(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "L=2\n"
        "t_train=3\n"
        "t_infer=5\n"
        "learning_rate=3e-6\n"
        "momentum=0.99\n"
        "epochs=5\n"
        "kernel=spatial,theta_gamma=3,weight=3.0\n"
        "kernel=bilateral,theta_alpha=80,theta_beta=13,weight=5.0\n"
    )
    return cfg


def test_unknown_flag_is_input_error(capsys):
    assert cli_dispatch(["gradcheck", "--bogus"]) == 1


def test_missing_subcommand_is_input_error():
    assert cli_dispatch([]) == 1


def test_missing_config_file(run_cfg, tmp_path):
    assert cli_dispatch(["gradcheck", "--config", str(tmp_path / "nope.cfg")]) == 1


def test_gradcheck_passes(run_cfg, capsys):
    rc = cli_dispatch(
        ["gradcheck", "--config", str(run_cfg), "--size", "5x5", "--labels", "2", "-T", "2"]
    )
    out = capsys.readouterr().out
    assert rc == 0
    assert "max relative error" in out


def test_compare_below_tolerance(run_cfg, capsys):
    rc = cli_dispatch(["compare", "--config", str(run_cfg), "--size", "12x12"])
    out = capsys.readouterr().out
    assert rc == 0
    errs = [
        float(line.rsplit(" ", 1)[-1])
        for line in out.splitlines()
        if "relative L2 error" in line and "max" not in line
    ]
    assert errs and max(errs) <= FROZEN_FILTER_TOLERANCE


def test_compare_rejects_oversized_input(run_cfg):
    assert cli_dispatch(["compare", "--config", str(run_cfg), "--size", "128x128"]) == 1


def test_bench_smoke(run_cfg, tmp_path, capsys):
    assert cli_dispatch(
        ["synth", "--seed", "0", "--out", str(tmp_path / "d"), "--n", "1", "--size", "16x16"]
    ) == 0
    rc = cli_dispatch(
        [
            "bench",
            "--config", str(run_cfg),
            "--image", str(tmp_path / "d" / "sample_000.ppm"),
            "--unary", str(tmp_path / "d" / "sample_000.crft"),
            "--repeat", "1",
        ]
    )
    out = capsys.readouterr().out
    assert rc == 0
    for stage in ("splat", "blur", "slice", "filter", "iteration"):
        assert stage in out


def test_bench_requires_inputs_without_scaling(run_cfg):
    assert cli_dispatch(["bench", "--config", str(run_cfg)]) == 1


def test_synth_train_infer_pipeline(run_cfg, tmp_path, capsys):
    data = tmp_path / "data"
    assert cli_dispatch(
        ["synth", "--seed", "3", "--out", str(data), "--n", "3",
         "--size", "16x16", "--noise", "0.2"]
    ) == 0
    assert (data / "manifest.tsv").exists()

    params_path = tmp_path / "params.crft"
    history_path = tmp_path / "history.csv"
    assert cli_dispatch(
        ["train", "--config", str(run_cfg), "--manifest", str(data / "manifest.tsv"),
         "--out-params", str(params_path), "--history", str(history_path)]
    ) == 0
    params = load_params(params_path)
    assert params.weights.shape == (2, 2)
    assert params.compatibility.shape == (2, 2)
    lines = history_path.read_text().strip().splitlines()
    assert lines[0] == "epoch,loss,mean_iu"
    assert len(lines) == 6  # header + 5 epochs

    labels_path = tmp_path / "labels.pgm"
    rc = cli_dispatch(
        ["infer", "--config", str(run_cfg),
         "--image", str(data / "sample_000.ppm"),
         "--unary", str(data / "sample_000.crft"),
         "--out-labels", str(labels_path),
         "--out-marginals", str(tmp_path / "marg.crft"),
         "--overlay", str(tmp_path / "overlay.ppm")]
    ) == 0
    assert rc
    out = capsys.readouterr().out
    # default iteration count comes from the config file
    assert "T=5" in out
    labels = load_label_map(labels_path)
    assert labels.shape == (16, 16)
    gt = load_label_map(data / "sample_000_gt.pgm")
    assert np.mean(labels == gt) > 0.8


def test_infer_explicit_T(run_cfg, tmp_path, capsys):
    data = tmp_path / "d2"
    cli_dispatch(["synth", "--seed", "1", "--out", str(data), "--n", "1", "--size", "12x12"])
    rc = cli_dispatch(
        ["infer", "--config", str(run_cfg),
         "--image", str(data / "sample_000.ppm"),
         "--unary", str(data / "sample_000.crft"),
         "--out-labels", str(tmp_path / "l.pgm"), "-T", "2"]
    )
    assert rc == 0
    assert "T=2" in capsys.readouterr().out
