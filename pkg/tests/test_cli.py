import json
import subprocess
import sys

import numpy as np
import pytest

from edgeaudio.cli import main
from edgeaudio.container import read_tensor_container
from edgeaudio.frontend import write_wav
from edgeaudio.models import save_weights
from edgeaudio.synth import random_clip, tonal_bursts


@pytest.fixture(scope="module")
def workdir(tmp_path_factory, quant_models, float_models):
    d = tmp_path_factory.mktemp("cli")
    save_weights(quant_models["emotion"], d / "emo_q.eatc")
    save_weights(quant_models["kws"], d / "kws_q.eatc")
    save_weights(float_models["kws"], d / "kws_f.eatc")
    write_wav(d / "long.wav", tonal_bursts(11.0, seed=4))
    write_wav(d / "short.wav", random_clip(5.0, seed=4))
    return d


def call(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_frontend(capsys, workdir):
    code, out, _ = call(capsys, "frontend", workdir / "short.wav", "--out", workdir / "s.eatc",
                        "--csv", workdir / "s.csv", "--png", workdir / "s.png")
    assert code == 0 and json.loads(out)["shape"] == [32, 498]
    values, _, meta = read_tensor_container(workdir / "s.eatc")
    assert values.dtype == np.uint16 and meta["kind"] == "spectrogram"
    assert (workdir / "s.png").stat().st_size > 0
    code, _, _ = call(capsys, "frontend", workdir / "short.wav", "--out", workdir / "t.eatc", "--streaming")
    assert np.array_equal(read_tensor_container(workdir / "t.eatc")[0], values)


def test_infer_wav_and_container_agree(capsys, workdir):
    call(capsys, "frontend", workdir / "short.wav", "--out", workdir / "s2.eatc")
    _, a, _ = call(capsys, "infer", "--model", workdir / "emo_q.eatc", "--input", workdir / "short.wav")
    _, b, _ = call(capsys, "infer", "--model", workdir / "emo_q.eatc", "--input", workdir / "s2.eatc")
    assert json.loads(a) == json.loads(b)
    assert len(json.loads(a)["probs"]) == 5


def test_stream(capsys, workdir):
    code, out, err = call(capsys, "stream", "--model", workdir / "emo_q.eatc", "--input", workdir / "long.wav",
                          "--out", workdir / "ev.jsonl", "--plot", workdir / "ev.png")
    assert code == 0
    assert len(out.splitlines()) == 2 and json.loads(err)["windows"] == 2
    assert (workdir / "ev.jsonl").read_text().splitlines() == out.splitlines()


def test_stream_rejects_float_model(capsys, workdir):
    code, _, err = call(capsys, "stream", "--model", workdir / "kws_f.eatc", "--input", workdir / "long.wav")
    assert code == 1 and json.loads(err)["error"]
    code, out, _ = call(capsys, "stream", "--model", workdir / "kws_f.eatc", "--input", workdir / "long.wav",
                        "--float")
    assert code == 0 and len(out.splitlines()) == 2


def test_compile_report(capsys, workdir):
    code, out, _ = call(capsys, "compile-report", "--model", workdir / "kws_q.eatc")
    assert code == 0 and "fully accelerated: true" in out
    code, out, _ = call(capsys, "compile-report", "--model", workdir / "kws_f.eatc", "--format", "json")
    assert code == 0 and json.loads(out)["fully_accelerated"] is False


def test_compile_report_with_policy_config(capsys, workdir):
    cfg = workdir / "small_budget.yaml"
    cfg.write_text("policy:\n  param_cache_budget_bytes: 1000\n")
    code, out, _ = call(capsys, "--config", cfg, "compile-report", "--model", workdir / "kws_q.eatc",
                        "--format", "json")
    rep = json.loads(out)
    assert code == 0 and rep["budget"]["passed"] is False and rep["budget"]["budget_bytes"] == 1000


def test_model_summary(capsys):
    code, out, _ = call(capsys, "model", "summary", "--arch", "kws")
    assert code == 0 and "221,016" in out
    code, out, _ = call(capsys, "model", "summary", "--arch", "emotion", "--format", "csv")
    assert out.startswith("block,")


def test_dataprep(capsys, workdir):
    code, out, _ = call(capsys, "dataprep", "segment", workdir / "long.wav", "--out-dir", workdir / "seg")
    assert code == 0 and json.loads(out)["segments"] == 2
    ali = workdir / "ali.csv"
    ali.write_text("word,start_s,end_s\nhello,0.5,0.9\nthere,2.0,2.4\nfriend,3,3.5\nhow,4,4.2\nare,6,6.3\n")
    code, out, _ = call(capsys, "dataprep", "keyword-clips", workdir / "long.wav", "--alignments", ali,
                        "--out-dir", workdir / "clips")
    files = json.loads(out)["files"]
    assert code == 0 and len(files) == 5
    code, out, _ = call(capsys, "dataprep", "stitch", *files, "--out", workdir / "five.wav")
    assert code == 0 and json.loads(out)["samples"] == 80000
    code, out, _ = call(capsys, "dataprep", "augment", workdir / "five.wav", "--out", workdir / "aug.wav",
                        "--preset", "emotion", "--seed", "3", "--noise", workdir / "short.wav",
                        "--rir", files[0], "--spec-out", workdir / "aug.eatc")
    assert code == 0 and isinstance(json.loads(out)["augmentations"], list)
    ann = workdir / "ann.csv"
    ann.write_text("clip_id,votes\na,happy,excited\nb,frustrated\n")
    code, out, _ = call(capsys, "dataprep", "labels", "--annotations", ann, "--out", workdir / "m.jsonl")
    assert code == 0 and json.loads(out)["records"] == 1 and json.loads(out)["skipped"] == ["b"]
    freq = workdir / "freq.csv"
    freq.write_text("emotion,word,count\nhappy,great,3000\nsad,the,9000\n")
    stop = workdir / "stop.txt"
    stop.write_text("the\n")
    code, out, _ = call(capsys, "dataprep", "keywords", "--freq", freq, "--stopwords", stop,
                        "--out", workdir / "kw.json")
    assert code == 0 and json.loads(out)["classes"] == ["great", "UNKNOWN", "NEGATIVE"]


def test_eval(capsys, workdir):
    refs, hyps = workdir / "r.csv", workdir / "h.csv"
    refs.write_text("neutral\nhappy\nsad\nangry\nnone\n")
    hyps.write_text("neutral\nhappy\nsad\nnone\nnone\n")
    code, out, _ = call(capsys, "eval", "emotion", "--refs", refs, "--hyps", hyps, "--format", "json",
                        "--confusion-png", workdir / "cm.png")
    assert code == 0 and json.loads(out)["accuracy"] == pytest.approx(0.8)
    refs.write_text("0\n1\n2\n3\n")
    hyps.write_text("0\n3\n2\n3\n")
    code, out, _ = call(capsys, "eval", "kws", "--refs", refs, "--hyps", hyps, "--num-classes", "4",
                        "--format", "json")
    rep = json.loads(out)
    assert rep["far"] == 0.0 and rep["mr"] == pytest.approx(0.5)


def test_errors(capsys, workdir):
    assert call(capsys, "nonsense")[0] == 2
    code, _, err = call(capsys, "infer", "--model", workdir / "long.wav", "--input", workdir / "short.wav")
    assert code == 1 and "error" in json.loads(err)
    code, _, err = call(capsys, "frontend", workdir / "missing.wav", "--out", workdir / "x.eatc")
    assert code == 1
    bad = workdir / "bad.yaml"
    bad.write_text("colour: blue\n")
    code, _, err = call(capsys, "--config", bad, "model", "summary")
    assert code == 1 and json.loads(err)["error"] == "config"


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "edgeaudio", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "compile-report" in r.stdout
