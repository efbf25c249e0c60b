"""Command-line interface.

Exit codes: 0 on success, 2 on usage errors, 1 on any other failure (with a
JSON ``{"error": <category>, "message": ...}`` line on stderr).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import compiler, datapipe, evaluation, frontend, models, plotting, runtime
from .config import load_config
from .container import emit_tensor_container, read_tensor_container
from .errors import ConfigError, EdgeAudioError, ModelInputMismatch


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


# --------------------------------------------------------------------------- #
# frontend


def cmd_frontend(args, cfg) -> None:
    samples = frontend.read_wav(args.input)
    if args.streaming:
        spec = frontend.stream_spectrogram(frontend.iter_hops(samples, cfg.frontend.hop_length), cfg.frontend)
    else:
        spec = frontend.compute_spectrogram(samples, cfg.frontend)
    emit_tensor_container(spec.values, args.out, name="spectrogram",
                          metadata={"kind": "spectrogram", "frame_duration_ms": spec.frame_duration_ms,
                                    "frontend": cfg.frontend.to_dict()})
    if args.csv:
        frontend.spectrogram_to_csv(spec, args.csv)
    if args.png:
        plotting.plot_spectrogram(spec.values, args.png, spec.frame_duration_ms)
    _print_json({"out": args.out, "shape": list(spec.values.shape), "dtype": str(spec.values.dtype)})


# --------------------------------------------------------------------------- #
# dataprep


def cmd_segment(args, cfg) -> None:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    audio = frontend.read_wav(args.input, allow_stereo=args.stereo)
    sources = {"": audio}
    if args.stereo:
        left, right = datapipe.isolate_channels(audio)
        sources = {"_ch0": left.samples, "_ch1": right.samples}
    written = []
    stem = Path(args.input).stem
    for suffix, x in sources.items():
        for i, seg in enumerate(datapipe.segment_audio(x, args.window, args.overlap)):
            path = out / f"{stem}{suffix}_{i:04d}.wav"
            frontend.write_wav(path, seg.samples)
            written.append(str(path))
    _print_json({"segments": len(written), "files": written})


def cmd_keywords(args, cfg) -> None:
    tables = datapipe.read_word_frequencies(args.freq)
    stop = Path(args.stopwords).read_text().split() if args.stopwords else []
    counts = None
    if args.counts:
        counts = {}
        for line in Path(args.counts).read_text().splitlines():
            parts = [p.strip() for p in line.split(",")]
            if len(parts) == 2 and parts[1].lstrip("-").isdigit():
                counts[parts[0]] = int(parts[1])
    res = datapipe.curate_keywords(tables, stop, args.min_count, args.max_count, args.top_k, counts)
    text = json.dumps(res.to_dict(), indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")


def cmd_labels(args, cfg) -> None:
    recs = []
    skipped = []
    for ann in datapipe.read_annotations(args.annotations):
        try:
            lab = datapipe.make_soft_label(ann)
        except EdgeAudioError:
            skipped.append(ann.clip_id)
            continue
        recs.append(datapipe.ManifestRecord(ann.clip_id, lab.probs.tolist(), args.split,
                                            source=str(args.annotations)))
    n = datapipe.write_manifest(args.out, recs)
    _print_json({"records": n, "skipped": skipped, "classes": list(models.EMOTION_CLASSES)})


def cmd_augment(args, cfg) -> None:
    aug = cfg.augment
    if args.preset or aug is None:
        aug = datapipe.AugmentConfig.from_dict({"preset": args.preset or "kws"})
    if args.seed is not None:
        aug = datapipe.AugmentConfig(**{**aug.__dict__, "rng_seed": args.seed})
    noise = [frontend.read_wav(p) for p in args.noise or []]
    rirs = [frontend.read_wav(p) for p in args.rir or []]
    log: list = []
    out = datapipe.augment_waveform(frontend.read_wav(args.input), aug, aug.rng(), noise, rirs, log)
    frontend.write_wav(args.out, out.samples)
    if args.spec_out:
        spec = frontend.compute_spectrogram(out, cfg.frontend)
        masked = datapipe.spec_augment(spec, aug, np.random.default_rng(aug.rng_seed + 1), log)
        emit_tensor_container(masked.values, args.spec_out, name="spectrogram",
                              metadata={"kind": "spectrogram", "frame_duration_ms": masked.frame_duration_ms})
    _print_json({"out": args.out, "augmentations": log})


def cmd_keyword_clips(args, cfg) -> None:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    audio = frontend.read_wav(args.input)
    files = []
    for i, al in enumerate(datapipe.read_alignments(args.alignments)):
        clip = datapipe.extract_keyword_clip(audio, al, args.duration)
        path = out / f"{i:04d}_{al.word}.wav"
        frontend.write_wav(path, clip.samples)
        files.append(str(path))
    _print_json({"clips": len(files), "files": files})


def cmd_stitch(args, cfg) -> None:
    out = datapipe.stitch_five([frontend.read_wav(p) for p in args.clips])
    frontend.write_wav(args.out, out.samples)
    _print_json({"out": args.out, "samples": len(out)})


# --------------------------------------------------------------------------- #
# models


def cmd_model_build(args, cfg) -> None:
    g = runtime.build_initialized(args.arch, args.seed, args.init_samples)
    models.save_weights(g, args.out)
    _print_json({"out": args.out, "arch": args.arch, "params": g.param_count()})


def cmd_model_summary(args, cfg) -> None:
    g = models.load_model(args.model) if args.model else models.build_model(args.arch)
    print(models.summary_csv(g) if args.format == "csv" else models.summary_text(g), end="")


def _calibration(arch: str, args) -> np.ndarray:
    if args.calib_wavs:
        return np.concatenate([runtime.windows_from_wav(p, arch) for p in args.calib_wavs])
    return runtime.synthetic_inputs(arch, args.num_calib, seed=args.seed)


def cmd_quantize(args, cfg) -> None:
    g = models.load_model(args.model)
    kind = runtime.model_kind(g)
    samples = _calibration(kind, args)
    if len(samples) == 0:
        raise ConfigError("calibration audio is shorter than one window")
    q = runtime.quantize_model(g, samples)
    models.save_weights(q, args.out)
    _print_json({"out": args.out, "calibration_inputs": len(samples), "tensors": len(q.quant)})


def cmd_compile_report(args, cfg) -> None:
    if args.model:
        g = models.load_model(args.model)
    else:
        g = runtime.build_initialized(args.arch, args.seed)
        g = runtime.quantize_model(g, runtime.synthetic_inputs(args.arch, args.num_calib, seed=args.seed))
    report = compiler.compile_graph(g, cfg.policy)
    text = report.to_json() if args.format == "json" else report.to_text()
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")


def _load_input(path: str, kind: str, db_floor: float, cfg) -> np.ndarray:
    if Path(path).suffix.lower() == ".wav":
        windows = runtime.windows_from_wav(path, kind, cfg.frontend, db_floor)
        if len(windows) == 0:
            raise ModelInputMismatch(f"{path} is shorter than one {runtime.WINDOW_FRAMES}-frame window")
        return windows[0]
    values, _, meta = read_tensor_container(path)
    if values.ndim != 2 or values.shape[0] != models.NUM_MEL or values.shape[1] < runtime.WINDOW_FRAMES:
        raise ModelInputMismatch(f"{path}: expected a {models.NUM_MEL}x{runtime.WINDOW_FRAMES} "
                                 f"spectrogram, got {values.shape}")
    return runtime.window_features(values[:, :runtime.WINDOW_FRAMES], kind, db_floor)


def cmd_infer(args, cfg) -> None:
    g = models.load_model(args.model)
    kind = runtime.model_kind(g)
    x = _load_input(args.input, kind, args.db_floor, cfg)
    probs = runtime.run(g, x)["probs"]
    out = {"kind": kind, "probs": probs.astype(np.float64).tolist()}
    out["label"] = (models.EMOTION_CLASSES[int(probs.argmax())] if kind == "emotion"
                    else [int(i) for i in probs.argmax(axis=-1)])
    _print_json(out)


def cmd_stream(args, cfg) -> None:
    run_cfg = runtime.RunConfig.from_dict(
        {**cfg.run, "model_path": args.model, "input_path": args.input, "output_path": args.out,
         **({"db_floor": args.db_floor} if args.db_floor is not None else {}),
         **({"quantized": False} if args.float else {})},
        cfg.frontend)
    model = models.load_model(args.model)
    events = runtime.stream_run(run_cfg, model)
    for ev in events:
        print(json.dumps(ev.to_dict(), sort_keys=True))
    if args.plot:
        names = list(models.EMOTION_CLASSES) if runtime.model_kind(model) == "emotion" else []
        plotting.plot_stream(events, names, args.plot)
    print(json.dumps({"windows": len(events)}), file=sys.stderr)


# --------------------------------------------------------------------------- #
# eval


def _read_labels(path: str, classes: list[str]) -> np.ndarray:
    index = {c: i for i, c in enumerate(classes)}

    def one(v):
        if isinstance(v, str) and v in index:
            return index[v]
        try:
            return int(v)
        except (TypeError, ValueError):
            raise ConfigError(f"{path}: unknown class {v!r}") from None

    p = Path(path)
    if p.suffix == ".jsonl":
        out = []
        for line in p.read_text().splitlines():
            if line.strip():
                lab = json.loads(line)["label"]
                out.extend(one(v) for v in (lab if isinstance(lab, list) else [lab]))
        return np.array(out, dtype=np.int64)
    rows = [r.split(",") for r in p.read_text().splitlines() if r.strip() and not r.startswith("#")]
    if rows and len(rows[0]) > 1:  # soft labels
        return np.array([[float(v) for v in r] for r in rows])
    return np.array([one(r[0].strip()) for r in rows], dtype=np.int64)


def cmd_eval(args, cfg) -> None:
    if args.task == "emotion":
        classes = list(models.EMOTION_CLASSES)
        negative = None
    else:
        if args.classes:
            classes = json.loads(Path(args.classes).read_text())["classes"]
        else:
            classes = [f"kw{i}" for i in range(args.num_classes - 2)] + [datapipe.UNKNOWN, datapipe.NEGATIVE]
        negative = [classes.index(datapipe.UNKNOWN), classes.index(datapipe.NEGATIVE)]
    refs = _read_labels(args.refs, classes)
    hyps = _read_labels(args.hyps, classes)
    rep = evaluation.classification_report(refs, hyps, len(classes), classes, negative)
    if args.task == "kws":
        r, h = evaluation._hard(refs), evaluation._hard(hyps)
        if len(r):
            rep.wer = evaluation.wer(r.tolist(), h.tolist())
    text = rep.to_json() if args.format == "json" else rep.to_text()
    if args.out:
        Path(args.out).write_text(text)
    if args.confusion_png:
        plotting.plot_confusion(rep.confusion, classes, args.confusion_png)
    print(text, end="")


# --------------------------------------------------------------------------- #
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="edgeaudio", description="Edge audio keyword and emotion toolkit.")
    p.add_argument("--config", help="YAML config with frontend/augment/policy/run sections")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("frontend", help="WAV to fixed-point log-mel spectrogram container")
    s.add_argument("input")
    s.add_argument("--out", required=True)
    s.add_argument("--csv")
    s.add_argument("--png")
    s.add_argument("--streaming", action="store_true", help="feed the audio hop by hop")
    s.set_defaults(func=cmd_frontend)

    dp = sub.add_parser("dataprep", help="dataset preparation").add_subparsers(dest="action", required=True)
    s = dp.add_parser("segment")
    s.add_argument("input")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--window", type=float, default=5.0)
    s.add_argument("--overlap", type=float, default=1.0)
    s.add_argument("--stereo", action="store_true", help="split channels before segmenting")
    s.set_defaults(func=cmd_segment)
    s = dp.add_parser("keywords")
    s.add_argument("--freq", required=True, help="CSV emotion,word,count")
    s.add_argument("--stopwords")
    s.add_argument("--counts", help="CSV word,instances")
    s.add_argument("--min-count", type=int, default=2000)
    s.add_argument("--max-count", type=int, default=20000)
    s.add_argument("--top-k", type=int, default=100)
    s.add_argument("--out")
    s.set_defaults(func=cmd_keywords)
    s = dp.add_parser("labels")
    s.add_argument("--annotations", required=True, help="CSV clip_id,vote,...")
    s.add_argument("--split", default="train")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_labels)
    s = dp.add_parser("augment")
    s.add_argument("input")
    s.add_argument("--out", required=True)
    s.add_argument("--preset", choices=["kws", "emotion", "identity"])
    s.add_argument("--noise", nargs="*")
    s.add_argument("--rir", nargs="*")
    s.add_argument("--seed", type=int)
    s.add_argument("--spec-out", help="also write a masked spectrogram container")
    s.set_defaults(func=cmd_augment)
    s = dp.add_parser("keyword-clips")
    s.add_argument("input")
    s.add_argument("--alignments", required=True, help="CSV word,start_s,end_s")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--duration", type=float, default=1.0)
    s.set_defaults(func=cmd_keyword_clips)
    s = dp.add_parser("stitch")
    s.add_argument("clips", nargs=5)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_stitch)

    mp = sub.add_parser("model", help="build or summarize models").add_subparsers(dest="action", required=True)
    s = mp.add_parser("build")
    s.add_argument("--arch", choices=["kws", "emotion"], required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--init-samples", type=int, default=16)
    s.set_defaults(func=cmd_model_build)
    s = mp.add_parser("summary")
    s.add_argument("--arch", choices=["kws", "emotion"], default="emotion")
    s.add_argument("--model")
    s.add_argument("--format", choices=["text", "csv"], default="text")
    s.set_defaults(func=cmd_model_summary)

    s = sub.add_parser("quantize", help="calibrate and convert to INT8")
    s.add_argument("--model", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--calib-wavs", nargs="*")
    s.add_argument("--num-calib", type=int, default=32)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_quantize)

    s = sub.add_parser("compile-report", help="accelerator compatibility report")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--model")
    g.add_argument("--arch", choices=["kws", "emotion"])
    s.add_argument("--format", choices=["text", "json"], default="text")
    s.add_argument("--out")
    s.add_argument("--num-calib", type=int, default=16)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_compile_report)

    s = sub.add_parser("infer", help="run one input (WAV or spectrogram container)")
    s.add_argument("--model", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--db-floor", type=float, default=-80.0)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("stream", help="streaming inference over a WAV file")
    s.add_argument("--model", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--out", help="JSON-lines event log")
    s.add_argument("--plot", help="per-window probability PNG")
    s.add_argument("--db-floor", type=float)
    s.add_argument("--float", action="store_true", help="allow a float model")
    s.set_defaults(func=cmd_stream)

    s = sub.add_parser("eval", help="metrics report")
    s.add_argument("task", choices=["kws", "emotion"])
    s.add_argument("--refs", required=True)
    s.add_argument("--hyps", required=True)
    s.add_argument("--classes", help="JSON with a 'classes' list (keyword curation output)")
    s.add_argument("--num-classes", type=int, default=models.KWS_NUM_CLASSES)
    s.add_argument("--format", choices=["text", "json"], default="text")
    s.add_argument("--out")
    s.add_argument("--confusion-png")
    s.set_defaults(func=cmd_eval)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = load_config(args.config)
        args.func(args, cfg)
    except EdgeAudioError as exc:
        print(json.dumps({"error": exc.category, "message": str(exc)}), file=sys.stderr)
        return 1
    except OSError as exc:
        print(json.dumps({"error": "io", "message": str(exc)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
