"""Experiment orchestration: the work behind each CLI subcommand.

Every stage reads a RunConfig, writes its artifacts under the run
directory, and is bitwise reproducible from config plus seed.
"""

from __future__ import annotations

import os

import numpy as np

from . import corpus as corpus_mod
from . import metrics
from . import model as M
from . import selection as sel
from . import training
from .checkpoint import (InitScheme, ParamStore, apply_partial, apply_scheme,
                         check_compatible, format_surgery_report, init_random)
from .config import RunConfig
from .tokenizer import (Vocabulary, encode_pair, read_corpus, wordpiece_tokenize,
                        write_corpus)


def _ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


def encode_corpus(pairs, vocab, source_limit, target_limit):
    return [encode_pair(doc, summary, vocab, source_limit, target_limit)
            for doc, summary in pairs]


def _load_data(cfg: RunConfig):
    vocab = Vocabulary.load(cfg.resolve(cfg.vocab))
    out = {"vocab": vocab}
    for split in ("train", "dev"):
        path = cfg.corpus.get(split)
        if path:
            pairs = read_corpus(cfg.resolve(path))
            out[split] = pairs
            out[f"{split}_enc"] = encode_corpus(pairs, vocab, cfg.source_limit(),
                                                cfg.target_limit())
    return out


def _labels_for(pairs, vocab):
    labels = []
    for doc, summary in pairs:
        src = wordpiece_tokenize(doc, vocab)
        tgt = wordpiece_tokenize(summary, vocab)
        labels.append(sel.build_labels(src, tgt).y)
    return labels


def _clip_labels(labels, examples):
    """Align alignment labels with the truncated/padded source positions."""
    out = []
    for y, ex in zip(labels, examples):
        n = int((~ex.source_pad_mask).sum())
        arr = np.zeros(n, dtype=np.int64)
        arr[: min(n, len(y))] = y[:n]
        out.append(arr)
    return out


def run_generate(cfg: RunConfig) -> dict:
    """Emit corpus files, the vocabulary, and sidecar spec records."""
    out_dir = _ensure_dir(cfg.run_dir)
    vocab_size = int(cfg.generate.get("vocab_size", 96))
    vocab = Vocabulary(corpus_mod.build_vocab_pieces(vocab_size))
    vocab.save(os.path.join(out_dir, "vocab.txt"))
    written = {"vocab": os.path.join(out_dir, "vocab.txt")}
    for entry in cfg.generate.get("corpora", []):
        entry = dict(entry)
        name = entry.pop("name")
        dev_n = int(entry.pop("dev_examples", 0))
        entry.setdefault("vocab_size", vocab_size)
        spec = corpus_mod.CorpusSpec(**entry)
        pairs = corpus_mod.generate(spec)
        train_pairs = pairs[: len(pairs) - dev_n]
        dev_pairs = pairs[len(pairs) - dev_n:]
        train_path = os.path.join(out_dir, f"{name}.train.tsv")
        write_corpus(train_pairs, train_path)
        written[f"{name}.train"] = train_path
        if dev_pairs:
            dev_path = os.path.join(out_dir, f"{name}.dev.tsv")
            write_corpus(dev_pairs, dev_path)
            written[f"{name}.dev"] = dev_path
        with open(os.path.join(out_dir, f"{name}.spec.json"), "w") as f:
            f.write(corpus_mod.spec_sidecar(spec))
    return written


def run_pretrain(cfg: RunConfig) -> str:
    """Masked-token denoising stage; writes the generic-stage checkpoint."""
    out_dir = _ensure_dir(cfg.run_dir)
    data = _load_data(cfg)
    mcfg = cfg.model_config()
    tcfg = cfg.train_config()
    store, report = training.denoise_pretrain(mcfg, tcfg, data["train_enc"],
                                              data.get("dev_enc", []))
    store.provenance = ["denoise-stage"]
    ckpt = os.path.join(out_dir, "checkpoint.ckpt")
    store.save(ckpt)
    with open(os.path.join(out_dir, "train_report.txt"), "w") as f:
        f.write(report.format())
    return ckpt


def build_init_store(cfg: RunConfig) -> tuple[ParamStore, dict]:
    mcfg = cfg.model_config()
    if cfg.partial:
        source = ParamStore.load(cfg.resolve(cfg.partial["source"]))
        return apply_partial(source, mcfg, int(cfg.partial["k"]), cfg.seed)
    scheme = cfg.scheme or {}
    init = InitScheme(
        encoder=cfg.resolve(scheme.get("encoder")),
        decoder=(scheme.get("decoder") if scheme.get("decoder") == "symmetric"
                 else cfg.resolve(scheme.get("decoder"))))
    return apply_scheme(init, mcfg, cfg.seed)


def run_train(cfg: RunConfig) -> dict:
    """Summarization fine-tuning under the configured initialization."""
    out_dir = _ensure_dir(cfg.run_dir)
    data = _load_data(cfg)
    mcfg = cfg.model_config()
    tcfg = cfg.train_config()
    store, surgery = build_init_store(cfg)
    with open(os.path.join(out_dir, "surgery_report.txt"), "w") as f:
        f.write(format_surgery_report(surgery))
    dev = list(zip(data.get("dev_enc", []),
                   [s for _, s in data.get("dev", [])]))
    best, report = training.train_stage(store, mcfg, data["train_enc"], dev,
                                        tcfg, data["vocab"])
    stage_name = cfg.train.get("stage_name", "summarize-stage")
    best.provenance = list(store.provenance) + [stage_name]
    ckpt = os.path.join(out_dir, "checkpoint.ckpt")
    best.save(ckpt)
    with open(os.path.join(out_dir, "train_report.txt"), "w") as f:
        f.write(report.format())
    return {"checkpoint": ckpt, "best_epoch": report.best_epoch,
            "best_metric": report.best_metric}


def run_select_train(cfg: RunConfig) -> dict:
    """Train the content selector; writes checkpoint and threshold."""
    out_dir = _ensure_dir(cfg.run_dir)
    data = _load_data(cfg)
    mcfg = cfg.model_config()
    tcfg = cfg.train_config()
    tcfg.stage = "select"
    vocab = data["vocab"]
    train_labels = _clip_labels(_labels_for(data["train"], vocab), data["train_enc"])
    dev_labels = _clip_labels(_labels_for(data["dev"], vocab), data["dev_enc"])
    init = init_random(mcfg, cfg.seed, arch="selector")
    enc_src = (cfg.scheme or {}).get("encoder")
    if enc_src:
        source = ParamStore.load(cfg.resolve(enc_src))
        from .checkpoint import _block_params, _copy_param
        report_d: dict = {}
        _copy_param(init, source, "embedding.word", "embedding.word", report_d)
        _copy_param(init, source, "embedding.pos_enc", "embedding.pos_enc", report_d)
        for i in range(mcfg.num_layers):
            for name in _block_params(f"encoder.layer.{i}", cross=False):
                _copy_param(init, source, name, name, report_d)
    train_data = list(zip(data["train_enc"], train_labels))
    dev_data = list(zip(data["dev_enc"], dev_labels))
    best, report = training.train_stage(init, mcfg, train_data, dev_data, tcfg)
    ckpt = os.path.join(out_dir, "selector.ckpt")
    best.save(ckpt)
    # calibrate the mask threshold on pooled dev positions
    probs, labels = [], []
    from . import autodiff as ad
    with ad.no_grad():
        for ex, y in dev_data:
            enc = M.encode(best, mcfg, ex.source_ids, ex.source_pad_mask, None)
            probs.append(sel.selector_forward(best, enc).data[~ex.source_pad_mask])
            labels.append(y)
    eps = sel.calibrate_threshold(np.concatenate(probs), np.concatenate(labels))
    with open(os.path.join(out_dir, "threshold.txt"), "w") as f:
        f.write(f"{eps!r}\n")
    with open(os.path.join(out_dir, "train_report.txt"), "w") as f:
        f.write(report.format())
    return {"checkpoint": ckpt, "threshold": eps, "best_f1": report.best_metric}


def _selection_fn(cfg: RunConfig, data, mcfg):
    """Per-example selection vectors for decoding, or None."""
    mode = cfg.selection.get("mode", "none")
    if mode == "none":
        return None
    examples = data["dev_enc"]
    vocab = data["vocab"]
    if mode == "oracle":
        labels = _clip_labels(_labels_for(data["dev"], vocab), examples)
        vectors = [sel.selection_vector(sel.SelectionLabels(y), ex.source_pad_mask)
                   for y, ex in zip(labels, examples)]
    elif mode == "model":
        selector = ParamStore.load(cfg.resolve(cfg.selection["selector"]))
        thr = cfg.selection["threshold"]
        if isinstance(thr, str):
            with open(cfg.resolve(thr)) as f:
                thr = float(f.read().strip())
        from . import autodiff as ad
        vectors = []
        with ad.no_grad():
            for ex in examples:
                enc = M.encode(selector, mcfg, ex.source_ids, ex.source_pad_mask, None)
                p = sel.selector_forward(selector, enc).data[~ex.source_pad_mask]
                pred = sel.SelectionPrediction(p=p, threshold=thr)
                vectors.append(sel.selection_vector(pred, ex.source_pad_mask))
    else:
        raise ValueError(f"unknown selection mode {mode!r}")
    return lambda i: vectors[i]


def run_decode(cfg: RunConfig) -> str:
    """Decode the dev corpus with the configured model; one summary per line."""
    out_dir = _ensure_dir(cfg.run_dir)
    data = _load_data(cfg)
    mcfg = cfg.model_config()
    store = ParamStore.load(cfg.resolve(cfg.checkpoint))
    check_compatible(store, mcfg, "seq2seq")
    selected_for = _selection_fn(cfg, data, mcfg)
    hyps = training.decode_corpus(
        store, mcfg, data["dev_enc"], data["vocab"], selected_for,
        mode=cfg.decode.get("mode", "greedy"),
        beam_width=int(cfg.decode.get("beam_width", 4)),
        alpha=float(cfg.decode.get("alpha", 0.6)))
    path = os.path.join(out_dir, "decoded.txt")
    with open(path, "w", encoding="utf-8") as f:
        for h in hyps:
            f.write(h + "\n")
    return path


def eval_summaries(ref_pairs, hypotheses) -> dict:
    refs = [metrics.normalize_for_rouge(s) for _, s in ref_pairs]
    hyps = [metrics.normalize_for_rouge(h) for h in hypotheses]
    report = metrics.rouge_report(refs, hyps).as_dict()
    rates = []
    for (doc, _), hyp in zip(ref_pairs, hyps):
        if hyp:
            rates.append(metrics.abstraction_rate(
                metrics.normalize_for_rouge(doc), hyp))
    report["abstraction_rate"] = float(np.mean(rates)) if rates else 0.0
    return report


def run_eval(cfg: RunConfig) -> dict:
    """ROUGE and abstraction-rate report for a decoded-output file."""
    out_dir = _ensure_dir(cfg.run_dir)
    ref_pairs = read_corpus(cfg.resolve(cfg.eval["references"]))
    with open(cfg.resolve(cfg.eval["hypotheses"]), encoding="utf-8") as f:
        hyps = [line.rstrip("\n") for line in f]
    report = eval_summaries(ref_pairs, hyps)
    with open(os.path.join(out_dir, "metrics.txt"), "w") as f:
        f.write(metrics.format_report(report))
    return report


def _grid_run_one(base: dict, overrides: dict) -> dict:
    merged = dict(base)
    merged.update(overrides)
    sub = RunConfig(**merged)
    result = run_train(sub)
    # decode + score the dev set with the trained checkpoint
    sub2 = RunConfig(**{**merged, "checkpoint": result["checkpoint"]})
    decoded = run_decode(sub2)
    data_pairs = read_corpus(sub.resolve(sub.corpus["dev"]))
    with open(decoded, encoding="utf-8") as f:
        hyps = [line.rstrip("\n") for line in f]
    rep = eval_summaries(data_pairs, hyps)
    rep["best_epoch"] = result["best_epoch"]
    return rep


def run_grid(cfg: RunConfig) -> dict:
    """Comparative experiment grid; emits one report row per configuration."""
    out_dir = _ensure_dir(cfg.run_dir)
    base = dict(cfg.grid.get("base", {}))
    seeds = cfg.grid.get("seeds", [cfg.seed])
    kind = cfg.grid.get("kind", "schemes")
    rows = []
    if kind == "schemes":
        for entry in cfg.grid["runs"]:
            per_seed = []
            for seed in seeds:
                overrides = {k: v for k, v in entry.items() if k != "name"}
                overrides["seed"] = seed
                overrides["out_dir"] = os.path.join(
                    cfg.out_dir, f"{entry['name']}-seed{seed}")
                try:
                    per_seed.append(_grid_run_one(base, overrides))
                except FileNotFoundError as e:
                    per_seed.append({"absent": str(e)})
            rows.append({"name": entry["name"], "seeds": per_seed})
    elif kind == "layerwise":
        for k in cfg.grid["ks"]:
            per_seed = []
            for seed in seeds:
                overrides = {
                    "seed": seed,
                    "partial": {"source": cfg.grid["source"], "k": int(k)},
                    "out_dir": os.path.join(cfg.out_dir, f"k{k}-seed{seed}"),
                }
                per_seed.append(_grid_run_one(base, overrides))
            rows.append({"name": f"k={k}", "k": int(k), "seeds": per_seed})
    else:
        raise ValueError(f"unknown grid kind {kind!r}")

    lines = []
    xs, ys = [], []
    for row in rows:
        valid = [r for r in row["seeds"] if "rougeL_f1" in r]
        if not valid:
            lines.append(f"{row['name']}\tabsent")
            continue
        mean = {key: float(np.mean([r[key] for r in valid]))
                for key in ("rouge1_f1", "rouge2_f1", "rougeL_f1", "abstraction_rate")}
        spread = float(np.std([r["rougeL_f1"] for r in valid]))
        epochs = [r["best_epoch"] for r in valid]
        lines.append(
            f"{row['name']}\trouge1_f1={mean['rouge1_f1']!r}"
            f"\trouge2_f1={mean['rouge2_f1']!r}\trougeL_f1={mean['rougeL_f1']!r}"
            f"\tabstraction_rate={mean['abstraction_rate']!r}"
            f"\trougeL_spread={spread!r}\tbest_epochs={epochs!r}")
        if "k" in row:
            for r in valid:
                xs.append(row["k"])
                ys.append(r["rougeL_f1"])
    result = {"rows": rows}
    if xs and len(set(xs)) > 1:
        r = metrics.pearson_r(xs, ys)
        lines.append(f"pearson_r\t{r!r}")
        result["pearson_r"] = r
    with open(os.path.join(out_dir, "grid_report.txt"), "w") as f:
        f.write("\n".join(lines) + "\n")
    if xs:
        with open(os.path.join(out_dir, "layerwise_points.txt"), "w") as f:
            for x, y in zip(xs, ys):
                f.write(f"{x}\t{y!r}\n")
    result["report"] = "\n".join(lines) + "\n"
    return result
