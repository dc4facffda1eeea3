import json
import subprocess
import sys

import pytest

from kgvqa.cli import main
from kgvqa.results import read_rows

GEN = ["--n-entities", "40", "--n-relations", "2", "--n-edges", "120", "--n-images", "10", "--n-questions", "40",
       "--cluster-size", "20", "--word-dim", "8", "--planted-dim", "4", "--seed", "3"]
FAST = ["--dim", "8", "--kge-steps", "30", "--kge-batch-size", "32", "--qa-epochs", "2", "--qa-state-dim", "4",
        "--gate-epochs", "1", "--gate-state-dim", "4", "--n-splits", "1", "--top-k", "10"]


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["gen", "--out", str(d / "data"), *GEN]) == 0
    return d


def _run(corpus, *args):
    return main([args[0], "--config", str(corpus / "data" / "experiment.cfg"), *FAST,
                 "--workdir", str(corpus / "run"), "--results", str(corpus / "results.csv"), *args[1:]])


def test_gen_writes_corpus_and_config(corpus):
    names = sorted(p.name for p in (corpus / "data").iterdir())
    assert names == ["experiment.cfg", "images.tsv", "kg.tsv", "qa.tsv", "vectors.txt"]


def test_full_workflow(corpus, capsys):
    assert _run(corpus, "train-kge") == 0
    assert _run(corpus, "eval-linkpred") == 0
    assert _run(corpus, "train-qa") == 0
    assert _run(corpus, "eval-qa") == 0
    assert _run(corpus, "eval-qa", "--mode", "composite", "--lambda1", "0.5", "--lambda2", "0.25",
                "--lambda3", "0.25") == 0
    stages = [r["stage"] for r in read_rows(corpus / "results.csv")]
    assert stages == ["linkpred", "eval", "eval", "composite", "composite"]
    capsys.readouterr()
    img = (corpus / "data" / "images.tsv").read_text().split("\t")[0]
    assert _run(corpus, "answer", "--question", "which object here relates to something", "--image", img,
                "--composite") == 0
    out = json.loads(capsys.readouterr().out)
    assert out["head"] in ("kvc", "kb") and 0 <= out["gate_probability"] <= 1
    assert _run(corpus, "bench", "--counts", "50,100", "--repeats", "2") == 0
    lines = [json.loads(x) for x in capsys.readouterr().out.splitlines()]
    assert [r["evaluations_per_query"] for r in lines[:2]] == [50, 100]


def test_run_and_harness_commands(corpus):
    assert _run(corpus, "run", "--stages", "kge,qa,eval") == 0
    assert _run(corpus, "sweep-lambda", "--top-ks", "5") == 0
    assert _run(corpus, "compare-sampling", "--kinds", "transe", "--n-seeds", "1") == 0


def test_occlude(corpus, capsys):
    out = corpus / "occluded.tsv"
    assert _run(corpus, "occlude", "--occlusion", "fraction", "--occlusion-fraction", "0.5", "--out", str(out)) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["edges_after"] == info["edges_before"] - info["edges_before"] // 2
    assert len(out.read_text().splitlines()) == info["edges_after"]
    assert _run(corpus, "occlude", "--occlusion", "qa-facts", "--out", str(out)) == 0
    assert _run(corpus, "occlude", "--out", str(out)) == 2


def test_usage_errors(corpus):
    assert main([]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["train-kge", "--no-such-flag", "1"]) == 1
    assert main(["eval-qa", "--mode", "sideways"]) == 1


def test_data_errors(corpus, tmp_path):
    assert main(["train-kge", "--config", str(tmp_path / "missing.cfg")]) == 2
    assert main(["train-kge", "--kg", str(tmp_path / "missing.tsv"), "--workdir", str(tmp_path / "w")]) == 2
    assert not (tmp_path / "w").exists()
    assert _run(corpus, "train-kge", "--kind", "distmult") == 2
    assert _run(corpus, "eval-qa", "--lambda1", "0.9", "--mode", "composite") == 2
    (tmp_path / "empty.tsv").write_text("")
    assert _run(corpus, "train-kge", "--kg", str(tmp_path / "empty.tsv")) == 2


def test_missing_checkpoint_is_a_data_error(corpus, tmp_path):
    assert main(["train-qa", "--config", str(corpus / "data" / "experiment.cfg"),
                 "--workdir", str(tmp_path / "nowhere")]) == 2


def test_numerical_failure(corpus, tmp_path):
    with pytest.warns(RuntimeWarning):
        code = _run(corpus, "train-kge", "--kge-lr", "inf", "--workdir", str(tmp_path / "w"))
    assert code == 3


def test_module_entry_point():
    done = subprocess.run([sys.executable, "-m", "kgvqa", "--help"], capture_output=True, text=True)
    assert done.returncode == 0
    assert "train-kge" in done.stdout
