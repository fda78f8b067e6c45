"""Command-line surface for the whole pipeline.

Subcommands cover dataset generation, trace conversion, model training,
the attack itself, leakage localization and the defenses. Every run
writes its fully resolved configuration next to its outputs so any result
can be regenerated from the emitted key=value file alone.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import defend as defend_mod
from . import localize as localize_mod
from . import model as model_mod
from .cachesim import CacheConfig, capture_pp, format_pp_trace, parse_pp_trace
from .errors import (CapacityError, DataFormatError, TrainingDiverged,
                     UnalignedTraceError)
from .folding import (NormStats, apply_norm, encode_pp, fit_norm, fold,
                      format_matrix)
from .traces import (CACHE_BANK, CACHE_LINE, PAGE_TABLE, derive_side_channel,
                     format_memory_trace, format_side_channel,
                     parse_memory_trace, parse_side_channel)
from .utils import substream
from .victims import (Dataset, DatasetManifest, EOS_ID, FIRST_WORD_ID,
                      MediaSample, SOS_ID, format_media, gen_dataset,
                      parse_media, sample_continuous, victim_from_manifest)

CHANNELS = {k.name: k for k in (CACHE_BANK, CACHE_LINE, PAGE_TABLE)}


def _positive_int(text: str) -> int:
    value = int(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _int_tuple(text: str) -> tuple:
    try:
        return tuple(int(p) for p in text.split(",") if p.strip() != "")
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated ints, got {text!r}")


def _read(path: str) -> str:
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


def _write(path: str, text: str):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def write_pgm(path: str, image: np.ndarray):
    """8-bit binary portable graymap, values clipped to [0, 1]."""
    img = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    data = np.rint(img * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def _resolved_config(args: argparse.Namespace) -> str:
    skip = {"func", "config"}
    pairs = []
    for key, value in sorted(vars(args).items()):
        if key in skip:
            continue
        if isinstance(value, (tuple, list)):
            value = ",".join(str(v) for v in value)
        pairs.append(f"{key}={value}\n")
    return "".join(pairs)


def _emit_config(args: argparse.Namespace, anchor: str):
    """Write the resolved run config next to the run's outputs."""
    if os.path.isdir(anchor):
        path = os.path.join(anchor, "config.txt")
    else:
        path = anchor + ".config.txt"
    _write(path, _resolved_config(args))


# ---------------------------------------------------------------- datasets

def write_dataset_dir(path: str, ds: Dataset):
    for sub in ("samples", "traces", "outputs"):
        os.makedirs(os.path.join(path, sub), exist_ok=True)
    _write(os.path.join(path, "manifest.txt"), ds.manifest.to_lines())
    _write(os.path.join(path, "labels.txt"),
           "".join(f"{int(v)}\n" for v in ds.labels))
    for i, (sample, trace, output) in enumerate(zip(ds.samples, ds.traces, ds.outputs)):
        _write(os.path.join(path, "samples", f"sample_{i:06d}.txt"), format_media(sample))
        _write(os.path.join(path, "traces", f"trace_{i:06d}.txt"), format_memory_trace(trace))
        _write(os.path.join(path, "outputs", f"output_{i:06d}.txt"), format_media(output))


def load_dataset_dir(path: str) -> Dataset:
    manifest = DatasetManifest.from_lines(_read(os.path.join(path, "manifest.txt")))
    n = manifest.n_train + manifest.n_test
    labels = np.array(
        [int(line) for line in _read(os.path.join(path, "labels.txt")).split()],
        dtype=np.int64,
    )
    if labels.shape[0] != n:
        raise DataFormatError(
            f"{path}: manifest promises {n} samples, labels.txt has {labels.shape[0]}"
        )
    samples, traces, outputs = [], [], []
    for i in range(n):
        samples.append(parse_media(_read(os.path.join(path, "samples", f"sample_{i:06d}.txt"))))
        name = os.path.join(path, "traces", f"trace_{i:06d}.txt")
        traces.append(parse_memory_trace(_read(name), source=name))
        outputs.append(parse_media(_read(os.path.join(path, "outputs", f"output_{i:06d}.txt"))))
    return Dataset(
        manifest=manifest,
        victim=victim_from_manifest(manifest),
        samples=samples,
        traces=traces,
        outputs=outputs,
        labels=labels,
        train_idx=np.arange(0, manifest.n_train),
        test_idx=np.arange(manifest.n_train, n),
    )


# ------------------------------------------------------------- encoding

def _encoding_from_args(args) -> dict:
    if getattr(args, "pp", False):
        return {
            "mode": "pp",
            "sets": args.sets,
            "ways": args.ways,
            "line": args.line,
            "epoch_len": args.epoch_len,
            "repeat": args.repeat,
            "k": args.k,
            "n": args.n,
        }
    return {"mode": "scalar", "channel": args.channel, "k": args.k, "n": args.n}


def _encode_traces(traces, encoding: dict, norm: NormStats | None,
                   truncate: bool = False):
    """Fold raw memory traces into model-ready matrices.

    Returns (stacked matrices, per-trace TraceMatrix list). Normalization
    is applied when stats are given; Prime+Probe bits are already in [0,1].
    """
    shape = (encoding["k"], encoding["n"])
    mats = []
    if encoding["mode"] == "pp":
        config = CacheConfig(
            num_sets=encoding["sets"],
            ways=encoding["ways"],
            line_size=encoding["line"],
            epoch_len=encoding["epoch_len"],
        )
        for trace in traces:
            pp = capture_pp(trace, config, repeats=encoding["repeat"])
            mats.append(encode_pp(pp.vectors, shape, truncate=truncate))
    else:
        kind = CHANNELS[encoding["channel"]]
        for trace in traces:
            side = derive_side_channel(trace, kind)
            mats.append(fold(side.values, shape, truncate=truncate))
    if norm is not None:
        mats = [apply_norm(m, norm) for m in mats]
    return np.stack([m.data for m in mats]), mats


def _fit_encoding_norm(traces, encoding: dict) -> NormStats:
    if encoding["mode"] == "pp":
        return NormStats(0.0, 1.0)
    kind = CHANNELS[encoding["channel"]]
    return fit_norm([derive_side_channel(t, kind) for t in traces])


def _targets(ds: Dataset, idx: np.ndarray):
    if ds.manifest.victim == "hashcheck":
        return [ds.samples[i].tokens for i in idx]
    return np.stack([ds.samples[i].image for i in idx])


def _modality(ds: Dataset) -> str:
    return "tokens" if ds.manifest.victim == "hashcheck" else "continuous"


# ----------------------------------------------------------- subcommands

def cmd_gen(args) -> int:
    # --n alone means "exactly this many samples": a bare train split.
    if args.n_test is not None:
        n_test = args.n_test
    else:
        n_test = 0 if args.n is not None else 128
    manifest = DatasetManifest(
        victim=args.victim,
        n_train=args.n if args.n is not None else args.n_train,
        n_test=n_test,
        seed=args.seed,
        height=args.height,
        width=args.width,
        levels=args.levels,
        factors=args.factors,
        vocab_size=args.vocab,
    )
    ds = gen_dataset(manifest)
    os.makedirs(args.out, exist_ok=True)
    write_dataset_dir(args.out, ds)
    _emit_config(args, args.out)
    total = manifest.n_train + manifest.n_test
    print(f"wrote {total} samples ({manifest.n_train} train, {manifest.n_test} test) to {args.out}")
    return 0


def cmd_derive(args) -> int:
    trace = parse_memory_trace(_read(args.trace), source=args.trace)
    side = derive_side_channel(trace, CHANNELS[args.kind])
    _write(args.out, format_side_channel(side))
    _emit_config(args, args.out)
    print(f"derived {len(side.values)} {args.kind} values -> {args.out}")
    return 0


def cmd_fold(args) -> int:
    side = parse_side_channel(_read(args.trace), source=args.trace)
    matrix = fold(side.values, (args.k, args.n), truncate=args.truncate)
    _write(args.out, format_matrix(matrix))
    _emit_config(args, args.out)
    print(f"folded {matrix.valid_len} records into {args.k}x{args.n}x{args.n} -> {args.out}")
    return 0


def cmd_pp(args) -> int:
    trace = parse_memory_trace(_read(args.trace), source=args.trace)
    config = CacheConfig(num_sets=args.sets, ways=args.ways,
                         line_size=args.line, epoch_len=args.epoch_len)
    pp = capture_pp(trace, config, repeats=args.repeat)
    _write(args.out, format_pp_trace(pp))
    _emit_config(args, args.out)
    print(f"captured {len(pp.vectors)} activity vectors -> {args.out}")
    return 0


def cmd_train(args) -> int:
    ds = load_dataset_dir(args.dataset)
    encoding = _encoding_from_args(args)
    train_traces = [ds.traces[i] for i in ds.train_idx]
    norm = _fit_encoding_norm(train_traces, encoding)
    matrices, _ = _encode_traces(train_traces, encoding, norm)
    spec = model_mod.ModelSpec(
        matrix_shape=(args.k, args.n),
        modality=_modality(ds),
        conv_channels=args.conv_channels,
        conv_strides=args.strides,
        attention_after=args.attention_after,
        latent_dim=args.latent,
        out_hw=(ds.manifest.height, ds.manifest.width),
        vocab_size=ds.manifest.vocab_size + FIRST_WORD_ID,
        max_words=args.max_words,
    )
    cfg = model_mod.TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        lr=args.lr,
        lam=args.lam,
        seed=args.seed,
        explicit_metric=args.explicit_metric,
    )
    targets = _targets(ds, ds.train_idx)
    labels = ds.labels[ds.train_idx]
    trained, history = model_mod.train(matrices, targets, labels, spec, cfg)
    trained.norm_stats = norm
    meta = {
        "encoding": encoding,
        "manifest": {k: getattr(ds.manifest, k) for k in ds.manifest.__dataclass_fields__},
        "train": {"epochs": cfg.epochs, "batch_size": cfg.batch_size, "lr": cfg.lr,
                  "lam": cfg.lam, "seed": cfg.seed, "metric": cfg.explicit_metric},
    }
    model_mod.save_model(args.out, trained, meta)
    _write(os.path.splitext(args.out)[0] + ".history.csv", model_mod.history_csv(history))
    _emit_config(args, args.out)
    last = history[-1]
    print(f"trained {cfg.epochs} epochs; final L_explicit={last[1]:.6f} -> {args.out}")
    return 0


def _load_for_attack(args):
    trained, meta = model_mod.load_model(args.model)
    ds = load_dataset_dir(args.dataset)
    if meta["manifest"]["victim"] != ds.manifest.victim:
        raise DataFormatError(
            f"model was trained on victim {meta['manifest']['victim']!r}, "
            f"dataset holds {ds.manifest.victim!r}"
        )
    return trained, meta, ds


def _metric_rows(ds, idx, recons, refs, train_idx):
    """(header, rows, summary) for the modality's metric plus its baseline."""
    if _modality(ds) == "continuous":
        mses = model_mod.evaluate_mse(recons, refs)
        mean_img = np.stack([ds.samples[i].image for i in train_idx]).mean(axis=0)
        base = model_mod.evaluate_mse([MediaSample.continuous(mean_img)] * len(refs), refs)
        header = "index,mse,baseline_mse"
        rows = [f"{int(i)},{repr(float(m))},{repr(float(b))}"
                for i, m, b in zip(idx, mses, base)]
        summary = f"mean,{repr(float(mses.mean()))},{repr(float(base.mean()))}"
        return header, rows, summary, float(mses.mean()), float(base.mean())
    accs = model_mod.evaluate_word_accuracy(recons, refs)
    base = 1.0 / ds.manifest.vocab_size
    header = "index,word_accuracy,baseline_word_accuracy"
    rows = [f"{int(i)},{repr(float(a))},{repr(base)}" for i, a in zip(idx, accs)]
    summary = f"mean,{repr(float(accs.mean()))},{repr(base)}"
    return header, rows, summary, float(accs.mean()), base


def cmd_attack(args) -> int:
    trained, meta, ds = _load_for_attack(args)
    if args.metric != "auto":
        want = "mse" if _modality(ds) == "continuous" else "word_accuracy"
        if args.metric != want:
            raise DataFormatError(
                f"--metric {args.metric} does not apply to {_modality(ds)} media"
            )
    idx = ds.split(args.split)
    traces = [ds.traces[i] for i in idx]
    matrices, _ = _encode_traces(traces, meta["encoding"], trained.norm_stats)
    recons = model_mod.reconstruct(trained, matrices)
    refs = [ds.samples[i] for i in idx]
    os.makedirs(args.outdir, exist_ok=True)
    for i, rec in zip(idx, recons):
        _write(os.path.join(args.outdir, f"recon_{int(i):06d}.txt"), format_media(rec))
        if rec.kind == "continuous":
            write_pgm(os.path.join(args.outdir, f"recon_{int(i):06d}.pgm"), rec.image)
    header, rows, summary, mean_metric, mean_base = _metric_rows(
        ds, idx, recons, refs, ds.train_idx
    )
    _write(os.path.join(args.outdir, "metrics.csv"),
           "\n".join([header] + rows + [summary]) + "\n")
    _emit_config(args, args.outdir)
    name = header.split(",")[1]
    print(f"attacked {len(idx)} {args.split} samples: mean {name}={mean_metric:.6f} "
          f"(baseline {mean_base:.6f}) -> {args.outdir}")
    return 0


def cmd_localize(args) -> int:
    trained, meta, ds = _load_for_attack(args)
    if meta["encoding"]["mode"] == "pp":
        raise UnalignedTraceError(
            "Prime+Probe traces have no record-to-instruction alignment; "
            "localization needs a scalar-channel model"
        )
    idx = ds.split(args.split)
    kind = CHANNELS[meta["encoding"]["channel"]]
    side = [derive_side_channel(ds.traces[i], kind) for i in idx]
    mem = [ds.traces[i] for i in idx]
    k = None if args.topk == "auto" else int(args.topk)
    report = localize_mod.localize_traces(
        trained, side, mem, ds.victim.symbols,
        (meta["encoding"]["k"], meta["encoding"]["n"]), k=k,
    )
    os.makedirs(args.outdir, exist_ok=True)
    _write(os.path.join(args.outdir, "report.csv"), report.to_csv())
    _write(os.path.join(args.outdir, "addresses.txt"), report.address_lines())
    _emit_config(args, args.outdir)
    top = report.rows()[0] if report.rows() else ("<none>", 0, 0)
    print(f"localized {report.total_frequency()} flagged records across "
          f"{report.n_traces} traces; top function {top[0]} (frequency {top[2]}) "
          f"-> {args.outdir}")
    return 0


def _kv_csv(pairs) -> str:
    lines = ["key,value"]
    for key, value in pairs:
        if isinstance(value, float):
            value = repr(value)
        lines.append(f"{key},{value}")
    return "\n".join(lines) + "\n"


def _defend_blind(args, trained, meta, ds) -> list:
    idx = ds.split("test")
    refs = [ds.samples[i] for i in idx]
    victim = ds.victim
    matrices, _ = _encode_traces([ds.traces[i] for i in idx],
                                 meta["encoding"], trained.norm_stats)
    pre = model_mod.reconstruct(trained, matrices)
    mask_rng = substream(args.mask_seed, "mask")
    if _modality(ds) == "continuous":
        h, w = ds.manifest.height, ds.manifest.width
        if args.mask == "same-family":
            mask, _, _ = sample_continuous(mask_rng, h, w, ds.manifest.factors)
        else:
            mask = MediaSample.continuous(mask_rng.uniform(0.0, 1.0, (h, w)))
        cfg = defend_mod.BlindConfig(args.alpha, mask)
        blinded = [MediaSample.continuous(defend_mod.blind_continuous(s.image, cfg))
                   for s in refs]
    else:
        vocab = ds.manifest.vocab_size
        word = args.mask_word if args.mask_word is not None else (
            FIRST_WORD_ID + int(mask_rng.integers(vocab))
        )
        mask = MediaSample.token_seq([SOS_ID, word, EOS_ID])
        cfg = defend_mod.BlindConfig(args.alpha, mask, mask_word=word)
        blinded = [MediaSample.token_seq(defend_mod.blind_text(s.tokens, cfg))
                   for s in refs]
    runs = [victim.run(b) for b in blinded]
    # Blinding lengthens text traces; the model window is fixed, so fold
    # keeps what fits and the report says how many traces were cut.
    capacity = meta["encoding"]["k"] * meta["encoding"]["n"] ** 2
    cut = sum(1 for t, _ in runs if len(t) > capacity)
    mats_b, _ = _encode_traces([t for t, _ in runs], meta["encoding"],
                               trained.norm_stats, truncate=True)
    post = model_mod.reconstruct(trained, mats_b)
    rows = [("mode", "blind"), ("alpha", args.alpha), ("n", len(idx)),
            ("truncated_traces", cut)]
    if _modality(ds) == "continuous":
        pre_mse = model_mod.evaluate_mse(pre, refs)
        post_mse = model_mod.evaluate_mse(post, refs)
        to_mask = model_mod.evaluate_mse(post, [mask] * len(idx))
        p_mask = victim.public_output(mask).image
        rel = 0.0
        for (_, out_b), i in zip(runs, idx):
            recovered = defend_mod.unblind_output(out_b.image, p_mask, args.alpha)
            truth = ds.outputs[i].image
            rel = max(rel, float(np.max(np.abs(recovered - truth)
                                        / (np.abs(truth) + 1e-12))))
        rows += [
            ("mask", args.mask),
            ("pre_mse", float(pre_mse.mean())),
            ("post_mse", float(post_mse.mean())),
            ("degradation_ratio", float(post_mse.mean() / pre_mse.mean())),
            ("closer_to_mask_fraction", float(np.mean(to_mask < post_mse))),
            ("recovery_max_rel_err", rel),
        ]
    else:
        pre_acc = model_mod.evaluate_word_accuracy(pre, refs)
        post_acc = model_mod.evaluate_word_accuracy(post, refs)
        exact = 0
        for (_, out_b), i in zip(runs, idx):
            recovered = defend_mod.unblind_text(out_b.tokens, cfg)
            exact += int(np.array_equal(recovered, ds.outputs[i].tokens))
        rows += [
            ("mask_word", cfg.mask_word),
            ("pre_word_accuracy", float(pre_acc.mean())),
            ("post_word_accuracy", float(post_acc.mean())),
            ("recovery_exact_fraction", exact / len(idx)),
        ]
    return rows


def _defend_noise(args, trained, meta, ds) -> list:
    if args.preset is not None:
        scheme = defend_mod.preset_scheme(args.preset, seed=args.noise_seed)
    else:
        if args.kind is None or args.amount is None:
            raise DataFormatError("noise defense needs --preset or --kind/--amount")
        scheme = defend_mod.NoiseScheme(args.kind, args.amount, seed=args.noise_seed)
    idx = ds.split("test")
    refs = [ds.samples[i] for i in idx]
    encoding = meta["encoding"]
    matrices, _ = _encode_traces([ds.traces[i] for i in idx], encoding,
                                 trained.norm_stats)
    pre = model_mod.reconstruct(trained, matrices)
    shape = (encoding["k"], encoding["n"])
    noisy_mats = []
    if encoding["mode"] == "pp":
        config = CacheConfig(num_sets=encoding["sets"], ways=encoding["ways"],
                             line_size=encoding["line"], epoch_len=encoding["epoch_len"])
        for i in idx:
            pp = capture_pp(ds.traces[i], config, repeats=encoding["repeat"])
            noisy = defend_mod.apply_noise(pp, scheme)
            noisy_mats.append(encode_pp(noisy.vectors, shape))
    else:
        kind = CHANNELS[encoding["channel"]]
        for i in idx:
            side = derive_side_channel(ds.traces[i], kind)
            noisy = defend_mod.apply_noise(side, scheme)
            noisy_mats.append(fold(noisy.values, shape))
    if trained.norm_stats is not None:
        noisy_mats = [apply_norm(m, trained.norm_stats) for m in noisy_mats]
    post = model_mod.reconstruct(trained, np.stack([m.data for m in noisy_mats]))
    rows = [("mode", "noise"), ("scheme", scheme.kind), ("amount", scheme.amount),
            ("n", len(idx))]
    if _modality(ds) == "continuous":
        pre_m = model_mod.evaluate_mse(pre, refs)
        post_m = model_mod.evaluate_mse(post, refs)
        mean_img = np.stack([ds.samples[i].image for i in ds.train_idx]).mean(axis=0)
        base = model_mod.evaluate_mse([MediaSample.continuous(mean_img)] * len(refs), refs)
        rows += [("pre_mse", float(pre_m.mean())), ("post_mse", float(post_m.mean())),
                 ("baseline_mse", float(base.mean())),
                 ("beats_baseline", int(post_m.mean() < base.mean()))]
    else:
        pre_a = model_mod.evaluate_word_accuracy(pre, refs)
        post_a = model_mod.evaluate_word_accuracy(post, refs)
        base = 1.0 / ds.manifest.vocab_size
        rows += [("pre_word_accuracy", float(pre_a.mean())),
                 ("post_word_accuracy", float(post_a.mean())),
                 ("baseline_word_accuracy", base),
                 ("beats_baseline", int(post_a.mean() > base))]
    return rows


def cmd_defend(args) -> int:
    trained, meta, ds = _load_for_attack(args)
    if args.mode == "blind":
        rows = _defend_blind(args, trained, meta, ds)
    else:
        rows = _defend_noise(args, trained, meta, ds)
    os.makedirs(args.outdir, exist_ok=True)
    _write(os.path.join(args.outdir, "defend_report.csv"), _kv_csv(rows))
    _emit_config(args, args.outdir)
    summary = ", ".join(f"{k}={v}" for k, v in rows if k not in ("mode", "n"))
    print(f"defense {args.mode}: {summary} -> {args.outdir}")
    return 0


def cmd_noise(args) -> int:
    if args.preset is not None:
        scheme = defend_mod.preset_scheme(args.preset, seed=args.seed)
    else:
        if args.kind is None or args.amount is None:
            raise DataFormatError("need --preset or --kind and --amount")
        scheme = defend_mod.NoiseScheme(args.kind, args.amount, seed=args.seed)
    text = _read(args.trace)
    first = text.splitlines()[0] if text.splitlines() else ""
    if first.startswith("kind="):
        trace = parse_side_channel(text, source=args.trace)
        noisy = defend_mod.apply_noise(trace, scheme)
        _write(args.out, format_side_channel(noisy))
    else:
        trace = parse_pp_trace(text)
        noisy = defend_mod.apply_noise(trace, scheme)
        _write(args.out, format_pp_trace(noisy))
    _emit_config(args, args.out)
    print(f"applied {scheme.kind}({scheme.amount}) -> {args.out}")
    return 0


# -------------------------------------------------------------- plumbing

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scabench",
        description="Side-channel trace reconstruction workbench",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None,
                       help="key=value file supplying defaults for any flag")

    p = sub.add_parser("gen", help="generate a victim dataset directory")
    common(p)
    p.add_argument("--victim", required=True, choices=("lookup", "transform", "hashcheck"))
    p.add_argument("--n", type=_positive_int, default=None,
                   help="sample count (train split only; overrides --n-train)")
    p.add_argument("--n-train", type=_positive_int, default=512)
    p.add_argument("--n-test", type=_positive_int, default=None,
                   help="test split size (default 128, or 0 when --n is given)")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--height", type=_positive_int, default=16)
    p.add_argument("--width", type=_positive_int, default=16)
    p.add_argument("--levels", type=_positive_int, default=8)
    p.add_argument("--factors", type=_positive_int, default=4)
    p.add_argument("--vocab", type=_positive_int, default=32)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("derive", help="derive a side channel from a memory trace")
    common(p)
    p.add_argument("trace")
    p.add_argument("--kind", required=True, choices=sorted(CHANNELS))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_derive)

    p = sub.add_parser("fold", help="fold a side-channel trace into a matrix")
    common(p)
    p.add_argument("trace")
    p.add_argument("--k", type=_positive_int, required=True)
    p.add_argument("--n", type=_positive_int, required=True)
    p.add_argument("--truncate", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fold)

    p = sub.add_parser("pp", help="simulate a Prime+Probe capture of a memory trace")
    common(p)
    p.add_argument("trace")
    p.add_argument("--sets", type=_positive_int, default=64)
    p.add_argument("--ways", type=_positive_int, default=8)
    p.add_argument("--line", type=_positive_int, default=64)
    p.add_argument("--epoch-len", type=_positive_int, default=4)
    p.add_argument("--repeat", type=_positive_int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pp)

    p = sub.add_parser("train", help="train the reconstruction model on a dataset")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--channel", choices=sorted(CHANNELS), default="cacheline")
    p.add_argument("--pp", action="store_true", help="encode via Prime+Probe capture")
    p.add_argument("--sets", type=_positive_int, default=64)
    p.add_argument("--ways", type=_positive_int, default=8)
    p.add_argument("--line", type=_positive_int, default=64)
    p.add_argument("--epoch-len", type=_positive_int, default=4)
    p.add_argument("--repeat", type=_positive_int, default=1)
    p.add_argument("--k", type=_positive_int, required=True)
    p.add_argument("--n", type=_positive_int, required=True)
    p.add_argument("--conv-channels", type=_int_tuple, default=(8, 16))
    p.add_argument("--strides", type=_int_tuple, default=(1, 2))
    p.add_argument("--attention-after", type=_int_tuple, default=(0,))
    p.add_argument("--latent", type=_positive_int, default=128)
    p.add_argument("--max-words", type=_positive_int, default=12)
    p.add_argument("--epochs", type=_positive_int, default=60)
    p.add_argument("--batch", type=_positive_int, default=64)
    p.add_argument("--lr", type=float, default=2e-4)
    p.add_argument("--lam", type=float, default=50.0)
    p.add_argument("--explicit-metric", choices=("mse", "l1"), default="mse")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="reconstruct media from traces with a trained model")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--metric", choices=("auto", "mse", "word_accuracy"), default="auto",
                   help="auto picks the modality's metric")
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("localize", help="rank leaky records and map them to functions")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--topk", default="auto",
                   help="records to flag per trace; 'auto' = 0.1%% of the records")
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("defend", help="evaluate blinding or trace noise against a model")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--mode", choices=("blind", "noise"), required=True)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--mask", choices=("same-family", "noise"), default="same-family")
    p.add_argument("--mask-word", type=int, default=None)
    p.add_argument("--mask-seed", type=int, default=1)
    p.add_argument("--preset", choices=sorted(defend_mod.NOISE_PRESETS), default=None)
    p.add_argument("--kind", choices=defend_mod.NoiseScheme._SCALAR + defend_mod.NoiseScheme._BITS,
                   default=None)
    p.add_argument("--amount", type=float, default=None)
    p.add_argument("--noise-seed", type=int, default=0)
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=cmd_defend)

    p = sub.add_parser("noise", help="perturb one captured trace file")
    common(p)
    p.add_argument("trace")
    p.add_argument("--preset", choices=sorted(defend_mod.NOISE_PRESETS), default=None)
    p.add_argument("--kind", choices=defend_mod.NoiseScheme._SCALAR + defend_mod.NoiseScheme._BITS,
                   default=None)
    p.add_argument("--amount", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_noise)

    return parser


def _apply_config_defaults(parser, argv):
    """Let a --config file supply defaults for the chosen subcommand."""
    if not argv or argv[0].startswith("-"):
        return
    path = None
    for i, token in enumerate(argv):
        if token == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif token.startswith("--config="):
            path = token.split("=", 1)[1]
    if path is None:
        return
    sub_actions = [a for a in parser._actions if isinstance(a, argparse._SubParsersAction)]
    subparser = sub_actions[0].choices.get(argv[0])
    if subparser is None:
        return
    defaults = {}
    for lineno, raw in enumerate(_read(path).splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise DataFormatError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        dest = key.strip().replace("-", "_")
        action = next((a for a in subparser._actions if a.dest == dest), None)
        if action is None:
            raise DataFormatError(f"{path}:{lineno}: unknown option {key.strip()!r}")
        value = value.strip()
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            defaults[dest] = value.lower() in ("1", "true", "yes")
        elif action.type is not None:
            defaults[dest] = action.type(value)
        else:
            defaults[dest] = value
        action.required = False  # the config satisfies this flag
    subparser.set_defaults(**defaults)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config_defaults(parser, argv)
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        # argparse reports usage problems with its own exit
        code = exc.code if exc.code is not None else 0
        return 1 if code != 0 else 0
    except (DataFormatError, CapacityError, UnalignedTraceError,
            FileNotFoundError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TrainingDiverged, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
