import json

import pytest

from corefdre.cli import main
from corefdre.synthetic import chain_dependent_dre_corpus, planted_coref_corpus
from conftest import write_split


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_validate(capsys, tmp_path, fixture_files):
    corpus, chains = fixture_files
    code, out, _ = run(capsys, "validate", corpus, "--chains", chains)
    assert code == 0 and "no violations" in out
    raw = json.loads(chains.read_text(encoding="utf-8"))
    raw["fixture-1"][0]["mentions"][0]["s"] = 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(raw), encoding="utf-8")
    code, out, _ = run(capsys, "validate", corpus, "--chains", bad, "--json", tmp_path / "r.json")
    assert code == 1 and "SURFACE_MISMATCH" in out
    report = json.loads((tmp_path / "r.json").read_text())
    assert report["valid"] is False and report["violations"][0]["dialogue"] == "fixture-1"
    code, _, err = run(capsys, "validate", tmp_path / "absent.json")
    assert code == 1 and "PARSE_ERROR" in err


def test_stats_table_and_json_agree(capsys, tmp_path, fixture_files):
    corpus, chains = fixture_files
    code, out, _ = run(capsys, "stats", "--split", f"fix={corpus}:{chains}", "--out", tmp_path, "--json", tmp_path / "s.json")
    assert code == 0
    st = json.loads((tmp_path / "s.json").read_text())
    for line in out.splitlines()[2:]:
        name, *cells = line.split()
        assert float(cells[0].replace(",", "")) == pytest.approx(st["fix"][name], abs=1e-4)
    report = json.loads((tmp_path / "reports" / "stats.json").read_text())
    assert report["stats"] == st and len(report["fingerprint"]) == 16


def test_build_graph(capsys, tmp_path, fixture_files):
    corpus, chains = fixture_files
    args = ["build-graph", corpus, "--chains", chains, "--dialogue", "fixture-0", "--pair", 1, "--out", tmp_path]
    assert run(capsys, *args)[0] == 0
    path = tmp_path / "graphs" / "fixture-0.1.tucore.json"
    g = json.loads(path.read_text())
    assert {e[2] for e in g["edges"]} == {"DU", "UU", "AU", "MU", "CC"}
    first = path.read_bytes()
    assert run(capsys, *args)[0] == 0
    assert path.read_bytes() == first
    code, out, _ = run(capsys, *args, "--strip", "CC,MU", "--stdout")
    stripped = json.loads(out)
    assert code == 0 and not [n for n in stripped["nodes"] if n["kind"] == "MENTION"]
    assert run(capsys, *args, "--recipe", "GAIN")[0] == 0
    assert (tmp_path / "graphs" / "fixture-0.1.gain.entity.json").exists()


def test_config_errors(capsys, tmp_path, fixture_files):
    corpus, chains = fixture_files
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"recipee": "TUCORE"}))
    code, _, err = run(capsys, "stats", "--config", cfg)
    assert code == 2 and "recipee" in err
    code, _, err = run(capsys, "build-graph", corpus, "--dialogue", "0", "--strip", "FC", "--out", tmp_path)
    assert code == 2
    code, _, _ = run(capsys, "build-graph", corpus, "--dialogue", "0", "--pair", 9, "--out", tmp_path)
    assert code == 2


def test_data_root_env(capsys, tmp_path, monkeypatch, fixture_files):
    corpus, chains = fixture_files
    monkeypatch.setenv("COREFDRE_DATA_ROOT", str(corpus.parent))
    code, out, _ = run(capsys, "validate", corpus.name, "--chains", chains.name)
    assert code == 0


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    ds = chain_dependent_dre_corpus(30, seed=2)
    write_split(ds[:18], d, "train")
    write_split(ds[18:24], d, "dev")
    write_split(ds[24:], d, "test")
    cfg = {
        "data_root": str(d), "train": "train.json", "dev": "dev.json", "test": "test.json",
        "train_chains": "train.chains.json", "dev_chains": "dev.chains.json", "test_chains": "test.chains.json",
        "epochs": 2, "lr": 0.01, "embed_dim": 8, "hidden_dim": 8,
        "coref": {"epochs": 1, "embed_dim": 8, "hidden_dim": 8, "ffnn_dim": 8, "feature_dim": 4},
    }
    (d / "run.json").write_text(json.dumps(cfg))
    return d


def test_dre_pipeline_is_reproducible(capsys, tmp_path, synth_dir):
    cfg = synth_dir / "run.json"
    logs = []
    for run_id in ("a", "b"):
        out = tmp_path / run_id
        assert run(capsys, "train-dre", "--config", cfg, "--out", out)[0] == 0
        logs.append((out / "reports" / "train_log.json").read_bytes())
    assert logs[0] == logs[1]
    code, out, _ = run(capsys, "eval-dre", "--config", cfg, "--out", tmp_path / "a",
                       "--checkpoint", tmp_path / "a" / "checkpoints" / "dre.pt")
    assert code == 0 and "inter_intra" in out
    report = json.loads((tmp_path / "a" / "reports" / "eval.json").read_text())
    assert report["checkpoint"]["recipe"] == "TUCORE"
    assert report["speakers"]["pairs"]["2"] == 12


def test_coref_pipeline_feeds_predicted_chains(capsys, tmp_path, synth_dir):
    cfg = synth_dir / "run.json"
    out = tmp_path / "run"
    assert run(capsys, "train-coref", "--config", cfg, "--out", out)[0] == 0
    ckpt = out / "checkpoints" / "coref.pt"
    sides = []
    for split in ("train", "dev"):
        assert run(capsys, "predict-coref", synth_dir / f"{split}.json", "--checkpoint", ckpt, "--out", out)[0] == 0
        sides.append(str(out / "sidecars" / f"{split}.pred.json"))
    code, _, _ = run(capsys, "train-dre", "--config", cfg, "--out", out, "--chain-source", "predicted",
                     "--chains", ",".join(sides), "--epochs", 1)
    assert code == 0
    assert json.loads((out / "reports" / "train_log.json").read_text())["chain_source"] == "predicted"


def test_train_coref_regimes(capsys, tmp_path, synth_dir):
    from corefdre.corpus import write_conll

    conll = tmp_path / "extra.conll"
    write_conll(planted_coref_corpus(4, seed=1), conll)
    cfg = synth_dir / "run.json"
    assert run(capsys, "train-coref", "--config", cfg, "--out", tmp_path / "c", "--regime", "conll", "--conll", conll)[0] == 0
    assert run(capsys, "train-coref", "--config", cfg, "--out", tmp_path / "s", "--regime", "sequential", "--conll", conll)[0] == 0
    stages = {r["stage"] for r in json.loads((tmp_path / "s" / "reports" / "coref_train.json").read_text())["log"]}
    assert stages == {"conll", "corpus"}
    assert run(capsys, "train-coref", "--config", cfg, "--out", tmp_path / "x", "--regime", "conll")[0] == 2


def test_ablate(capsys, tmp_path, synth_dir):
    code, out, _ = run(capsys, "ablate", "--config", synth_dir / "run.json", "--out", tmp_path,
                       "--sets", ";CC,MU", "--seeds", "0,1", "--epochs", 1)
    assert code == 0 and "w/o CC+MU" in out
    rows = json.loads((tmp_path / "reports" / "ablation.json").read_text())["rows"]
    assert [r["strip"] for r in rows] == [[], ["CC", "MU"]]
