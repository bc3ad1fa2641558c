import pytest

from transfer_nmt.cli import main
from transfer_nmt.config import REGISTRY

from conftest import TINY_CONFIG


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Corpus, encoder and a trained model shared by the file-based subcommands."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.cfg"
    cfg.write_text(TINY_CONFIG, encoding="utf-8")
    common = ["--config", cfg, "--seed", 3, "--log-level", "WARNING"]
    assert main([str(a) for a in ["gen-corpus", "--out", root / "data", *common]]) == 0
    assert main([str(a) for a in ["pretrain", "--data", root / "data", "--out", root / "enc.sxtp", *common]]) == 0
    assert main([str(a) for a in ["train", "--data", root / "data", "--out", root / "run", "--init", root / "enc.sxtp",
                                  "--langs", "l1", *common]]) == 0
    return root, common


def test_defaults_lists_every_key(capsys):
    code, out, _ = run(["defaults"], capsys)
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "key\tdefault\towner\tdescription"
    assert len(lines) == len(REGISTRY) + 1


@pytest.mark.parametrize("argv, needle", [
    (["frobnicate"], "frobnicate"),
    (["defaults", "--colour", "red"], "--colour"),
    (["defaults", "--set", "model.colour = red"], "model.colour"),
    (["translate", "--src", "x"], "--model"),
])
def test_usage_errors_exit_1(argv, needle, capsys):
    code, _, err = run(argv, capsys)
    assert code == 1
    assert needle in err


def test_unknown_key_in_config_file(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("train.speed = 3\n", encoding="utf-8")
    code, _, err = run(["defaults", "--config", bad], capsys)
    assert code == 1 and "train.speed" in err


def test_runtime_failure_exits_2(tmp_path, capsys):
    code, _, err = run(["translate", "--model", tmp_path / "missing.sxtp", "--src", tmp_path / "x.l1"], capsys)
    assert code == 2 and "missing.sxtp" in err


def test_corpus_files(workdir):
    root, _ = workdir
    names = {p.name for p in (root / "data").iterdir()}
    assert {"mono.l1", "mono.en", "train-l1.l1", "train-l1.en", "valid-l2.l2", "test-l5.l5", "test-l5.en"} <= names


def test_train_outputs(workdir):
    run_dir = workdir[0] / "run"
    assert (run_dir / "model.sxtp").exists()
    assert (run_dir / "train.log").read_text().splitlines()
    assert list(run_dir.glob("checkpoint_*.sxtp"))


def test_translate_one_line_per_input(workdir, capsys):
    root, common = workdir
    src = root / "data" / "test-l5.l5"
    code, out, _ = run(["translate", "--model", root / "run" / "model.sxtp", "--src", src, "--beam", 2, *common],
                       capsys)
    assert code == 0
    assert len(out.splitlines()) == len(src.read_text().splitlines())


def test_score_and_probe(workdir, capsys):
    root, common = workdir
    test = root / "data" / "test-l5.en"
    code, out, _ = run(["score", "--hyp", test, "--ref", test], capsys)
    assert code == 0 and out.splitlines()[0] == "bleu\t100.0000"
    code, out, _ = run(["probe", "--model", root / "enc.sxtp", "--src", root / "data" / "test-l5.l5",
                        "--tgt", test, *common], capsys)
    assert code == 0 and out.startswith("retrieval_accuracy\t")


def test_stage_two_needs_model(workdir, capsys):
    root, common = workdir
    code, _, err = run(["train", "--data", root / "data", "--out", root / "s2", "--stage", 2, *common], capsys)
    assert code == 1 and "--model" in err


def _outputs(root, common, tag):
    out = root / tag
    argv = [
        ["gen-corpus", "--out", out / "data", *common],
        ["pretrain", "--data", root / "data", "--out", out / "enc.sxtp", *common],
        ["train", "--data", root / "data", "--out", out / "run", "--init", out / "enc.sxtp", "--stage", 1, *common],
        ["train", "--data", root / "data", "--out", out / "run2", "--model", out / "run" / "model.sxtp",
         "--stage", 2, "--pde", "on", *common],
        ["translate", "--model", out / "run2" / "model.sxtp", "--src", root / "data" / "test-l5.l5",
         "--out", out / "hyp.en", *common],
        ["backtranslate", "--model", out / "run2" / "model.sxtp", "--mono", root / "data" / "test-l5.l5",
         "--out", out / "bt", *common],
    ]
    for a in argv:
        assert main([str(x) for x in a]) == 0, a
    return {p.relative_to(out): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}


def test_equal_seeds_give_identical_bytes(workdir):
    root, common = workdir
    first = _outputs(root, common, "a")
    second = _outputs(root, common, "b")
    assert first.keys() == second.keys()
    assert {k for k in first if first[k] != second[k]} == set()
    assert any(str(k).startswith("bt") for k in first)


def test_experiment_smoke(workdir, tmp_path, capsys):
    root, common = workdir
    spec = tmp_path / "ml.cfg"
    spec.write_text(f"experiment.kind = multilinguality\nexperiment.name = smoke\nexperiment.cache_dir = {tmp_path}\n"
                    "experiment.seeds = 0, 1, 2\n", encoding="utf-8")
    code, out, _ = run(["experiment", "--spec", spec, "--out", tmp_path / "report.txt", *common], capsys)
    assert code == 0
    assert out.startswith("# smoke (multilinguality)")
    assert "many_minus_few" in out
    assert (tmp_path / "report.txt").read_text() == out


def test_experiment_rejects_bad_spec(tmp_path, capsys):
    spec = tmp_path / "bad.cfg"
    spec.write_text("experiment.seeds = 0, 0, 1\n", encoding="utf-8")
    code, _, err = run(["experiment", "--spec", spec], capsys)
    assert code == 1 and "seed" in err
