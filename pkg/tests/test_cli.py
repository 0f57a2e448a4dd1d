# tests/test_cli.py

from click.testing import CliRunner

from byzsgd.errors import FilterCollapsedError, TrainingAborted
from byzsgd.scripts.cli import cli, cli_main

TINY_TRAIN = "[data]\nd = 3\nR = 2\nn = 10\n[train]\nT = 1\neps = 0.0\nb = 2\n"


def test_help_exits_cleanly():
    assert cli_main(["--help"]) == 0


def test_missing_config_is_a_config_error(tmp_path):
    assert cli_main(["--config", str(tmp_path / "absent.ini"), "train"]) == 1


def test_unknown_subcommand():
    assert cli_main(["frobnicate"]) == 1


def test_invalid_config_value(write_ini):
    assert cli_main(["--config", str(write_ini("[train]\nT = zero\n")), "train"]) == 1


def test_filter_failure_exit_code(mocker, write_ini):
    mocker.patch(
        "byzsgd.harness.run_train",
        side_effect=TrainingAborted("filter failed", [], FilterCollapsedError("emptied")),
    )
    assert cli_main(["--config", str(write_ini(TINY_TRAIN)), "train"]) == 2


def test_train_writes_one_row(write_ini, tmp_path):
    runner = CliRunner()
    result = runner.invoke(cli, ["--config", str(write_ini(TINY_TRAIN)), "train"])
    assert result.exit_code == 0, result.output
    assert "(1 rounds)" in result.output
    lines = (tmp_path / "out" / "metrics.csv").read_text(encoding="utf-8").splitlines()
    assert len(lines) == 2


def test_out_flag_redirects_output(write_ini, tmp_path):
    target = tmp_path / "elsewhere"
    code = cli_main(["--config", str(write_ini(TINY_TRAIN)), "--out", str(target), "train"])
    assert code == 0
    assert (target / "metrics.csv").exists()
    assert (target / "summary.json").exists()


def test_flags_reach_the_harness(mocker, write_ini):
    bench = mocker.patch("byzsgd.harness.run_rge_bench", return_value=[])
    args = ["--config", str(write_ini("")), "--seed", "4", "--sigma0-sq", "5.0", "--threads", "2", "rge-bench"]
    code = cli_main(args)
    assert code == 0
    config = bench.call_args.args[0]
    assert config.seeds.master == 4
    assert config.train.sigma0_override == 5.0
    assert config.train.threads == 2


def test_rge_bench_prints_rows(write_ini):
    path = write_ini(
        "[experiment]\nbench_eps = 0.2\nbench_attacks = constant\nbench_seeds = 2\nbench_R = 20\nbench_d = 4\n"
    )
    result = CliRunner().invoke(cli, ["--config", str(path), "rge-bench"])
    assert result.exit_code == 0, result.output
    assert "constant" in result.output
    assert "bound=" in result.output
    assert "below_tenth_naive=" in result.output


def test_concentration_check_summary(write_ini):
    path = write_ini("[experiment]\nconcentration_m = 5\nconcentration_seeds = 2\n")
    result = CliRunner().invoke(cli, ["--config", str(path), "concentration-check"])
    assert result.exit_code == 0, result.output
    assert "/2 seeds" in result.output


def test_batch_larger_than_local_dataset_is_a_config_error(write_ini):
    path = write_ini("[data]\nn = 10\n[train]\nb = 50\n")
    assert cli_main(["--config", str(path), "train"]) == 1


def test_k_larger_than_dimension_is_a_config_error(write_ini):
    path = write_ini("[data]\nd = 3\n[train]\nmode = compressed_sgd\nk = 5\n")
    assert cli_main(["--config", str(path), "train"]) == 1


def test_nonconvex_under_strongly_convex_rule_is_a_config_error(write_ini, capsys):
    path = write_ini("[objective]\nkind = smooth-nonconvex\n")
    assert cli_main(["--config", str(path), "train"]) == 1
    assert "lr_rule" in capsys.readouterr().err
