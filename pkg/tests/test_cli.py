import configparser
import json

import pytest

from monoattn.cli import main


def test_verify_fast_suites(tmp_path, capsys):
    code = main(["verify", "--suite", "lattice", "--suite", "chunk_sync", "--out", str(tmp_path)])
    assert code == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 2
    assert len(json.loads((tmp_path / "verify.json").read_text())) == 2


def test_config_precedence_and_effective_config(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[data]\ntask = local_reorder\nn = 7\nseed = 4\n")
    out = tmp_path / "gen"
    assert main(["gen", "--config", str(ini), "--n", "5", "--out", str(out)]) == 0
    assert len((out / "corpus.txt").read_text().splitlines()) == 5
    eff = configparser.ConfigParser()
    eff.read(out / "effective_config.ini")
    assert eff["data"]["n"] == "5"                  # flag beats file
    assert eff["data"]["task"] == "local_reorder"   # file beats default
    assert eff["data"]["window"] == "3"             # default


def test_train_decode_eval_small(tmp_path):
    d = str(tmp_path)
    ini = tmp_path / "m.ini"
    ini.write_text("[model]\nd_model = 16\nheads = 2\nd_ff = 32\nencoder_layers = 1\n"
                   "predictor_layers = 1\nsrc_vocab = 4\nvocab_size = 4\n")
    assert main(["gen", "--task", "copy", "--n", "12", "--vocab-size", "4", "--max-len", "8",
                 "--out", d]) == 0
    assert main(["train", "--config", str(ini), "--data", f"{d}/corpus.txt", "--mode", "posterior",
                 "--chunk", "2", "--steps", "3", "--batch-size", "4", "--out", d]) == 0
    recs = [json.loads(x) for x in (tmp_path / "train_log.jsonl").read_text().splitlines()]
    assert len(recs) == 3
    assert main(["decode", "--checkpoint", f"{d}/model.ckpt", "--data", f"{d}/corpus.txt",
                 "--chunk", "2", "--limit", "4", "--out", d]) == 0
    assert len((tmp_path / "decode.jsonl").read_text().splitlines()) == 4
    assert main(["eval", "--decodes", f"{d}/decode.jsonl", "--out", d]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["all"]["n"] == 4 and "tercile" in summary


def test_chunk_inf_means_offline(tmp_path):
    d = str(tmp_path)
    ini = tmp_path / "m.ini"
    ini.write_text("[model]\nd_model = 16\nheads = 2\nd_ff = 32\nsrc_vocab = 4\nvocab_size = 4\n")
    assert main(["gen", "--task", "copy", "--n", "4", "--vocab-size", "4", "--min-len", "9",
                 "--max-len", "9", "--out", d]) == 0
    # a streaming mode cannot silently fall back to the default chunk
    assert main(["train", "--config", str(ini), "--data", f"{d}/corpus.txt", "--mode", "posterior",
                 "--chunk", "inf", "--out", d]) == 2
    assert main(["train", "--config", str(ini), "--data", f"{d}/corpus.txt", "--mode", "offline",
                 "--steps", "1", "--batch-size", "2", "--out", d]) == 0
    assert main(["decode", "--checkpoint", f"{d}/model.ckpt", "--data", f"{d}/corpus.txt",
                 "--chunk", "inf", "--out", d]) == 0
    eff = configparser.ConfigParser()
    eff.read(tmp_path / "effective_config.ini")
    assert eff["decode"]["chunk"] == "inf"
    for line in (tmp_path / "decode.jsonl").read_text().splitlines():
        reads = [e for e in json.loads(line)["trace"]["events"] if e["type"] == "READ"]
        assert len(reads) == 1 and reads[0]["total"] == 9


def test_eval_wait_one_fixture(tmp_path, capsys):
    from test_evaluation import wait_k_record

    recs = [wait_k_record(0, [0, 1, 2], [0, 1, 2], 1)]
    recs[0]["alignment"] = [[0, 0], [1, 1], [2, 2]]
    (tmp_path / "d.jsonl").write_text("\n".join(json.dumps(r) for r in recs) + "\n")
    assert main(["eval", "--decodes", str(tmp_path / "d.jsonl"), "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["all"]["AL"] == pytest.approx(1.0)
    assert summary["all"]["LAAL"] == pytest.approx(1.0)
    assert summary["all"]["AP"] == pytest.approx(2 / 3)


def test_error_exits(tmp_path, capsys):
    assert main(["decode", "--data", "x.txt", "--out", str(tmp_path)]) == 2
    assert "monoattn decode: error" in capsys.readouterr().err
    assert main(["gen", "--config", str(tmp_path / "missing.ini"), "--out", str(tmp_path)]) == 2
    assert main(["train", "--data", str(tmp_path / "nope.txt"), "--out", str(tmp_path)]) == 2
    with pytest.raises(SystemExit):
        main(["train", "--chunk", "0"])


@pytest.mark.slow
def test_copy_offline_round_trip(tmp_path):
    d = str(tmp_path)
    common = ["--task", "copy", "--vocab-size", "8", "--min-len", "4", "--max-len", "8", "--out", d]
    assert main(["gen", "--n", "20000", *common]) == 0
    assert main(["gen", "--n", "100", "--seed", "1", "--name", "test", *common]) == 0
    ini = tmp_path / "m.ini"
    ini.write_text("[model]\nsrc_vocab = 8\nvocab_size = 8\n"
                   "[train]\nwarmup_steps = 100\nweight_decay = 0\nlog_every = 0\n")
    assert main(["train", "--config", str(ini), "--data", f"{d}/corpus.txt", "--mode", "offline",
                 "--steps", "2000", "--batch-size", "32", "--out", d]) == 0
    assert main(["decode", "--checkpoint", f"{d}/model.ckpt", "--data", f"{d}/test.txt",
                 "--chunk", "inf", "--out", d]) == 0
    assert main(["eval", "--decodes", f"{d}/decode.jsonl", "--out", d]) == 0
    assert json.loads((tmp_path / "summary.json").read_text())["all"]["accuracy"] >= 0.99
