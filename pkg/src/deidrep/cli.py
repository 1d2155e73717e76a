"""Command line entry point: ``deidrep <subcommand> ...``.

Every subcommand that writes to an output directory leaves a
``manifest.json`` there holding the command, its resolved configuration,
seeds, input fingerprints and the sha256 of every checkpoint written.
Nothing time-dependent goes into the manifest, so two runs with the same
manifest must produce the same files.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import math
import os
import sys
from pathlib import Path

from . import __version__
from .corpus import (
    generate_synthetic, labeled_sentences, read_corpus, sentences_to_document, toy_embeddings, write_corpus,
    write_document,
)
from .embed import EmbeddingStore, load_vectors, write_vectors
from .metrics import binary_hipaa_f1, category_report, format_report, load_hipaa_map
from .models import load_model, save_model
from .privacy import continued_adversary_attack
from .pseudo import PseudonymizationConfig, pseudonymize_corpus
from .train import (
    TrainConfig, dann_train, evaluate_tagger, predict_labels, split_documents, three_phase_train, train_tagger,
)

log = logging.getLogger("deidrep")

ENV_EMBEDDINGS = "DEIDREP_EMBEDDINGS"
MANIFEST = "manifest.json"
MODES = ("tagger", "pseudo", "dann", "threephase")


class CliError(RuntimeError):
    pass


# ---------------------------------------------------------------- helpers

def _clean(x):
    """JSON-safe copy: NaN/inf become None."""
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    return x


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _corpus_fingerprint(path: Path) -> str:
    h = hashlib.sha256()
    files = sorted(path.glob("*.xml")) if path.is_dir() else [path]
    for f in files:
        h.update(f.name.encode())
        h.update(f.read_bytes())
    return h.hexdigest()[:16]


def _write_manifest(out: Path, args, **extra) -> dict:
    skip = {"func", "log_level"}
    cfg = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k not in skip}
    manifest = {"version": __version__, "command": args.command, "args": cfg}
    manifest.update(extra)
    out.mkdir(parents=True, exist_ok=True)
    _dump(out / MANIFEST, manifest)
    return manifest


def _store(args) -> EmbeddingStore:
    path = args.embeddings or os.environ.get(ENV_EMBEDDINGS)
    if not path:
        raise CliError(f"no embeddings given: pass --embeddings or set {ENV_EMBEDDINGS}")
    args.embeddings = str(path)
    return load_vectors(path)


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("list must not be empty")
    return vals


def _config(args, **over) -> TrainConfig:
    kw = {"seed": args.seed}
    for name in ("neighbors", "repr_dim", "lam", "p2_min_accuracy"):
        if getattr(args, name, None) is not None:
            kw[name] = getattr(args, name)
    cap = getattr(args, "max_epochs", None)
    if cap is not None:
        base = TrainConfig()
        for f in dataclasses.fields(TrainConfig):
            if f.name.startswith("max_epochs_"):
                kw[f.name] = min(cap, getattr(base, f.name))
    kw.update(over)
    return TrainConfig(**kw)


def _split(args):
    docs = read_corpus(args.corpus)
    return split_documents(docs, args.test_fraction, seed=args.seed)


def _write_losses(path: Path, records) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(_clean(r.as_dict()), sort_keys=True) + "\n")


# ---------------------------------------------------------------- subcommands

def cmd_gen_synthetic(args) -> int:
    out = Path(args.out)
    docs = generate_synthetic(args.seed, args.docs, phi_density=args.phi_density,
                              background_size=args.background)
    write_corpus(docs, out)
    extra = {"documents": len(docs), "corpus_fingerprint": _corpus_fingerprint(out)}
    if args.embeddings_out:
        tokens, matrix = toy_embeddings(args.dim, args.background, seed=args.seed)
        write_vectors(args.embeddings_out, tokens, matrix)
        extra["embeddings_sha256"] = _sha256(Path(args.embeddings_out))
    _write_manifest(out, args, **extra)
    print(f"wrote {len(docs)} documents to {out}")
    return 0


def cmd_pseudonymize(args) -> int:
    store = _store(args)
    out = Path(args.out)
    sents = [s for d in read_corpus(args.corpus) for s in labeled_sentences(d)]
    res = pseudonymize_corpus(sents, store, PseudonymizationConfig(args.neighbors, args.seed))
    if out.suffix == ".xml":
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_bytes(write_document(sentences_to_document(out.stem, res.sentences)))
        where = out.parent
    else:
        k = args.sentences_per_doc
        docs = [sentences_to_document(f"pseudo-{args.seed}-{i // k:05d}", res.sentences[i:i + k])
                for i in range(0, len(res.sentences), k)]
        write_corpus(docs, out)
        where = out
    print(f"oov PHI tokens kept verbatim: {res.oov_kept}", file=sys.stderr)
    _write_manifest(where, args, embeddings_fingerprint=store.fingerprint,
                    input_fingerprint=_corpus_fingerprint(Path(args.corpus)),
                    output_fingerprint=_corpus_fingerprint(out), replaced=len(res.replaced),
                    oov_kept=res.oov_kept)
    print(f"pseudonymized {len(sents)} sentences ({len(res.replaced)} tokens replaced) into {out}")
    return 0


def cmd_train_tagger(args) -> int:
    store = _store(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train, test = _split(args)
    if args.pseudo_neighbors:
        train = pseudonymize_corpus(train, store, PseudonymizationConfig(args.pseudo_neighbors, args.seed)).sentences
    rep = None
    if args.representation:
        rep, _ = load_model(args.representation)
    cfg = _config(args)
    res = train_tagger(train, store, cfg, representation=rep)
    ckpt = {"tagger": save_model(out / "tagger.ckpt", res.tagger)}
    _write_losses(out / "losses.jsonl", res.records)
    report = evaluate_tagger(res.tagger, test, store, rep, seed=args.seed)
    _dump(out / "metrics.json", report.as_dict())
    _write_manifest(out, args, config=cfg.as_dict(), embeddings_fingerprint=store.fingerprint,
                    corpus_fingerprint=_corpus_fingerprint(Path(args.corpus)), checkpoints=ckpt,
                    best_epoch=res.best_epoch)
    print(format_report(report))
    return 0


def _train_private(args, fn) -> int:
    store = _store(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train, test = _split(args)
    cfg = _config(args)
    res = fn(train, store, cfg)
    ckpt = {name: save_model(out / f"{name}.ckpt", model)
            for name, model in (("representation", res.representation), ("tagger", res.tagger),
                                ("adversary", res.adversary))}
    _write_losses(out / "losses.jsonl", res.records)
    if res.audits:
        with (out / "audits.jsonl").open("w", encoding="utf-8") as fh:
            for a in res.audits:
                fh.write(json.dumps({**dataclasses.asdict(a), "ok": a.ok}, sort_keys=True) + "\n")
    report = evaluate_tagger(res.tagger, test, store, res.representation, seed=args.seed)
    _dump(out / "metrics.json", report.as_dict())
    _write_manifest(out, args, config=cfg.as_dict(), embeddings_fingerprint=store.fingerprint,
                    corpus_fingerprint=_corpus_fingerprint(Path(args.corpus)), checkpoints=ckpt,
                    best_epoch=res.best_epoch, p2_accuracy=res.p2_accuracy)
    print(format_report(report))
    return 0


def cmd_train_dann(args) -> int:
    return _train_private(args, dann_train)


def cmd_train_threephase(args) -> int:
    return _train_private(args, three_phase_train)


def cmd_attack(args) -> int:
    store = _store(args)
    rep, _ = load_model(args.checkpoint)
    if rep.component != "representation":
        raise CliError(f"{args.checkpoint} holds a {rep.component}, not a representation")
    train, test = _split(args)
    rep_report = continued_adversary_attack(rep, train, test, store, neighbors=args.neighbors,
                                            extra_epochs=args.epochs, seed=args.seed, kind=args.kind)
    path = Path(args.report)
    path.parent.mkdir(parents=True, exist_ok=True)
    _dump(path, rep_report.as_dict())
    path.with_suffix(".txt").write_text(rep_report.to_text(), encoding="utf-8")
    _write_manifest(path.parent, args, embeddings_fingerprint=store.fingerprint,
                    checkpoints={"representation": _sha256(Path(args.checkpoint))},
                    corpus_fingerprint=_corpus_fingerprint(Path(args.corpus)))
    print(rep_report.to_text(), end="")
    return 0


def cmd_evaluate(args) -> int:
    hmap = load_hipaa_map(args.hipaa_map) if args.hipaa_map else None
    gold_docs = read_corpus(args.gold)
    gold_sents = [s for d in gold_docs for s in labeled_sentences(d)]
    if args.pred:
        pred = [s.labels for d in read_corpus(args.pred) for s in labeled_sentences(d)]
    elif args.tagger:
        store = _store(args)
        tagger, _ = load_model(args.tagger)
        rep = load_model(args.representation)[0] if args.representation else None
        pred = predict_labels(tagger, gold_sents, store, rep, seed=args.seed)
    else:
        raise CliError("evaluate needs --pred or --tagger")
    gold = [s.labels for s in gold_sents]
    report = binary_hipaa_f1(gold, pred, hmap)
    print(format_report(report))
    if args.per_category:
        for cat, c in sorted(category_report(gold, pred).per_category.items()):
            print(f"{cat:<12} P={c.precision:.4f} R={c.recall:.4f} F1={c.f1:.4f}")
    if args.report:
        _dump(Path(args.report), report.as_dict())
    if args.min_f1 is not None and report.f1 < args.min_f1:
        print(f"F1 {report.f1:.4f} below required {args.min_f1}", file=sys.stderr)
        return 1
    return 0


def _sweep_point(mode, n, d, seed, args, store, docs) -> dict:
    train, test = split_documents(docs, args.test_fraction, seed=seed)
    cfg = _config(args, seed=seed, neighbors=max(n, 2), repr_dim=d)
    row = {"mode": mode, "N": n, "d": d, "seed": seed, "f1": math.nan, "attack_accuracy": math.nan}
    if mode in ("tagger", "pseudo"):
        if mode == "pseudo":
            train = pseudonymize_corpus(train, store, PseudonymizationConfig(n, seed)).sentences
        res = train_tagger(train, store, cfg)
        row["f1"] = evaluate_tagger(res.tagger, test, store, seed=seed).f1
        return row
    res = (dann_train if mode == "dann" else three_phase_train)(train, store, cfg)
    row["f1"] = evaluate_tagger(res.tagger, test, store, res.representation, seed=seed).f1
    if args.attack_epochs > 0:
        att = continued_adversary_attack(res.representation, train, test, store, neighbors=cfg.neighbors,
                                         extra_epochs=args.attack_epochs, seed=seed)
        row["attack_accuracy"] = att.test_accuracy
    return row


def cmd_sweep(args) -> int:
    store = _store(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    docs = read_corpus(args.corpus)
    cols = ["mode", "N", "d", "seed", "f1", "attack_accuracy"]
    rows = []
    with (out / "results.tsv").open("w", encoding="utf-8") as fh:
        fh.write("\t".join(cols) + "\n")
        for seed in args.seeds:
            for n in args.neighbors:
                if n > len(store):
                    raise CliError(f"N={n} exceeds vocabulary size {len(store)}")
                for d in args.repr_dim:
                    row = _sweep_point(args.mode, n, d, seed, args, store, docs)
                    rows.append(row)
                    fh.write("\t".join(f"{row[c]:.6f}" if isinstance(row[c], float) else str(row[c])
                                       for c in cols) + "\n")
                    fh.flush()
                    log.info("sweep %s", row)
    _write_manifest(out, args, embeddings_fingerprint=store.fingerprint,
                    corpus_fingerprint=_corpus_fingerprint(Path(args.corpus)), rows=len(rows))
    print((out / "results.tsv").read_text(), end="")
    return 0


# ---------------------------------------------------------------- parser

def _common(p, corpus=True, out_dir=True):
    p.add_argument("--seed", type=int, default=0, help="governs all randomness (default 0)")
    p.add_argument("--embeddings", help=f"text vector file (default: ${ENV_EMBEDDINGS})")
    if corpus:
        p.add_argument("--corpus", required=True, help="XML file or directory of XML documents")
        p.add_argument("--test-fraction", type=float, default=0.2, help="document share held out for testing")
    if out_dir:
        p.add_argument("--out-dir", required=True, help="directory for checkpoints, losses and manifest")


def _training(p, private=False):
    p.add_argument("--max-epochs", type=int, help="cap on epochs for every phase")
    if private:
        p.add_argument("--neighbors", type=int, default=50, help="neighbor count N for fake pairs")
        p.add_argument("--repr-dim", type=int, default=50, help="representation width d")
        p.add_argument("--lambda", dest="lam", type=float, default=1.0, help="privacy loss weight")
        p.add_argument("--p2-min-accuracy", type=float,
                       help="abort when the pretrained adversary's validation accuracy is not above this")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="deidrep",
                                 description="De-identification taggers on adversarially private representations.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("--log-level", default="WARNING", help="python logging level (INFO shows epochs)")
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("gen-synthetic", help="write a seeded synthetic annotated corpus")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--docs", type=int, default=200)
    p.add_argument("--phi-density", type=float, default=0.2)
    p.add_argument("--background", type=int, default=8000, help="number of background words")
    p.add_argument("--out", required=True, help="output directory for XML files")
    p.add_argument("--embeddings-out", help="also write matching toy vectors to this path")
    p.add_argument("--dim", type=int, default=50, help="toy vector width")
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("pseudonymize", help="replace PHI tokens by random top-N embedding neighbors")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--embeddings")
    p.add_argument("--corpus", "--in", dest="corpus", required=True, help="XML file or directory")
    p.add_argument("--neighbors", type=int, default=100)
    p.add_argument("--sentences-per-doc", type=int, default=50, help="grouping when --out is a directory")
    p.add_argument("--out", required=True, help="directory, or a single .xml file")
    p.set_defaults(func=cmd_pseudonymize)

    p = sub.add_parser("train-tagger", help="train the BiLSTM-CRF tagger")
    _common(p)
    _training(p)
    p.add_argument("--representation", help="frozen representation checkpoint feeding the tagger")
    p.add_argument("--pseudo-neighbors", type=int, default=0,
                   help="pseudonymize the training split with this N first (0: off)")
    p.set_defaults(func=cmd_train_tagger)

    p = sub.add_parser("train-dann", help="conjoint adversarial training with gradient reversal")
    _common(p)
    _training(p, private=True)
    p.set_defaults(func=cmd_train_dann)

    p = sub.add_parser("train-threephase", help="three-phase adversarial training")
    _common(p)
    _training(p, private=True)
    p.set_defaults(func=cmd_train_threephase)

    p = sub.add_parser("attack", help="train a fresh adversary against a frozen representation")
    _common(p, out_dir=False)
    p.add_argument("--checkpoint", required=True, help="representation checkpoint")
    p.add_argument("--kind", choices=["a1", "a2", "both"], default="both")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--neighbors", type=int, default=50)
    p.add_argument("--report", required=True, help="JSON report path; a key=value .txt goes beside it")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("evaluate", help="token-level binary HIPAA F1")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--embeddings")
    p.add_argument("--gold", required=True, help="gold XML corpus")
    p.add_argument("--pred", help="predicted XML corpus with the same sentences")
    p.add_argument("--tagger", help="tagger checkpoint to predict with instead of --pred")
    p.add_argument("--representation", help="representation checkpoint used with --tagger")
    p.add_argument("--hipaa-map", help="config file with a [hipaa] section")
    p.add_argument("--min-f1", type=float, help="exit 1 when F1 falls below this")
    p.add_argument("--per-category", action="store_true")
    p.add_argument("--report", help="write the report as JSON")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="grid over N, d and seeds; one TSV row per point")
    _common(p)
    p.add_argument("--mode", choices=MODES, required=True)
    p.add_argument("--neighbors", type=_int_list, default=[50], help="comma-separated N values")
    p.add_argument("--repr-dim", type=_int_list, default=[50], help="comma-separated d values")
    p.add_argument("--seeds", type=_int_list, default=[0], help="comma-separated seeds")
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--attack-epochs", type=int, default=50, help="0 skips the attack")
    p.set_defaults(func=cmd_sweep)
    return ap


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # runtime failures map to exit 1
        log.debug("failure", exc_info=True)
        print(f"deidrep {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
