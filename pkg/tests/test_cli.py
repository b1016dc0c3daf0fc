import pytest

from orderdisent import config
from orderdisent.cli import main

TINY = """\
# tiny benchmark
n_sequences = 12
min_length = 8
max_length = 12
epochs = 2
encoder_widths = 12
branch_widths = 6
z_dim = 3
"""


@pytest.fixture
def cfg(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY)
    return str(path)


def test_config_parse_and_echo():
    rc = config.RunConfig().with_overrides(config.parse(TINY + "adv = 0.3\nsplit = 0.6,0.3,0.1\n"))
    assert rc.generator.n_sequences == 12 and rc.train.epochs == 2
    assert rc.network.encoder_widths == (12,) and rc.train.weights.adv == 0.3
    assert rc.generator.split == (0.6, 0.3, 0.1)
    again = config.RunConfig().with_overrides(config.parse(rc.echo()))
    assert again == rc


@pytest.mark.parametrize("text", ["nonsense_key = 1", "epochs = many", "epochs", "lr = -1", "a = 1\na = 2"])
def test_config_errors(text):
    with pytest.raises(config.ConfigError):
        config.RunConfig().with_overrides(config.parse(text))


def test_pipeline(cfg, tmp_path, capsys):
    ds, run = tmp_path / "ds", tmp_path / "run"
    assert main(["gen", "--config", cfg, "--seed", "2", "--out", str(ds)]) == 0
    assert (ds / "records.jsonl").exists() and (ds / "config.txt").exists()
    assert main(["train", "--config", cfg, "--data", str(ds), "--method", "supervised", "--out", str(run)]) == 0
    for name in ("config.txt", "metrics.csv", "checkpoint.npz", "run.log"):
        assert (run / name).exists()
    log = (run / "run.log").read_text()
    assert "seed 0" in log and "config hash" in log
    assert len((run / "metrics.csv").read_text().splitlines()) == 3
    assert main(["eval", "--config", cfg, "--data", str(ds), "--checkpoint", str(run / "checkpoint.npz")]) == 0
    assert "accuracy=" in capsys.readouterr().out


def test_compare_is_byte_identical(cfg, tmp_path):
    for out in ("a", "b"):
        assert main(["compare", "--config", cfg, "--seeds", "0,1", "--out", str(tmp_path / out)]) == 0
    a, b = ((tmp_path / o / "comparison.csv").read_bytes() for o in ("a", "b"))
    assert a == b and a.count(b"\n") == 6


def test_ablate_and_strips(cfg, tmp_path):
    assert main(["ablate", "--config", cfg, "--seeds", "0", "--out", str(tmp_path / "ab")]) == 0
    assert (tmp_path / "ab" / "ablation.csv").read_text().count("\n") == 5
    assert main(["strips", "--config", cfg, "--out", str(tmp_path / "st")]) == 0
    assert (tmp_path / "st" / "strips.svg").read_text().startswith("<svg")
    assert main(["strips", "--config", cfg, "--sequences", "999", "--out", str(tmp_path / "st2")]) == 2


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--cases", "3"]) == 0
    assert main(["gradcheck", "--cases", "3", "--tol", "1e-300"]) == 3
    assert main(["gradcheck", "--cases", "0"]) == 1


def test_exit_codes(cfg, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["train"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["compare", "--seeds", "a,b", "--out", str(tmp_path)])
    assert exc.value.code == 1
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = blue\n")
    assert main(["gen", "--config", str(bad), "--out", str(tmp_path / "x")]) == 1
    assert main(["train", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "r")]) == 2
    assert main(["eval", "--checkpoint", str(tmp_path / "none.npz")]) == 2


def test_numeric_failure_exit_code(cfg, tmp_path):
    hot = tmp_path / "hot.cfg"
    hot.write_text(TINY + "lr = 1e200\n")
    assert main(["train", "--config", str(hot), "--out", str(tmp_path / "r")]) == 3
