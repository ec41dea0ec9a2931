"""Command-line entry point: ``sbncl <subcommand> ...``.

Every subcommand reads and writes files only. Exit status is 0 on success,
1 on a runtime error and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np

DATA_DIR_ENV = "SBNCL_DATA_DIR"

log = logging.getLogger("ecg_sbncl")


class UsageError(Exception):
    pass


# -- helpers ----------------------------------------------------------------------------------


def _resolve(args, path: str | os.PathLike) -> Path:
    """Paths that do not exist as given are looked up under the data directory."""
    p = Path(path)
    if p.is_absolute() or p.exists() or not args.data_dir:
        return p
    return Path(args.data_dir) / p


def _config(args):
    from .config import load_config

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _seed(args, default: int = 0) -> int:
    return default if args.seed is None else args.seed


def _thread_limit(args):
    from threadpoolctl import threadpool_limits

    if args.reproducible:
        return threadpool_limits(limits=1)
    if args.threads:
        return threadpool_limits(limits=args.threads)
    return contextlib.nullcontext()


def _pick_lead(record, lead: str | None) -> int:
    from .io.errors import LeadNotFound

    if lead is None:
        try:
            return record.find_lead("ECG")
        except LeadNotFound:
            return 0
    if lead.isdigit():
        idx = int(lead)
        if idx >= record.header.n_signals:
            raise LeadNotFound(f"lead index {idx} out of range ({record.header.n_signals} signals)")
        return idx
    return record.find_lead(lead)


def _read_stages(path: Path, epoch_samples: int):
    from .io.wfdb import Annotation

    tokens = [t for t in path.read_text(encoding="utf-8").split() if t]
    return [Annotation(sample_index=i * epoch_samples, code=22, aux_text=t) for i, t in enumerate(tokens)]


def _write(path: str | os.PathLike, text: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text, encoding="utf-8")


def _emit_report(report, out: str | None) -> None:
    print(report.to_text())
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        report.save(out)


# -- subcommands ---------------------------------------------------------------------------------------


def cmd_ingest(args) -> int:
    from .io import read_edf, read_wfdb_annotations, read_wfdb_record, save_strips
    from .io.strips import StripLabels, extract_strips
    from .preprocess import FilterSpec, prepare_record

    strips = []
    for raw in args.records:
        path = _resolve(args, raw)
        if path.suffix.lower() == ".edf":
            record = read_edf(path, lead=args.lead or "ECG")
            lead = 0
        else:
            record = read_wfdb_record(path.with_suffix(".hea"))
            lead = _pick_lead(record, args.lead)
        prepared = prepare_record(record, lead=lead, spec=FilterSpec(cutoff=args.cutoff, order=args.order))

        annotations, ann_rate = None, None
        if args.annotations:
            annotations = read_wfdb_annotations(path.with_suffix("." + args.annotations.lstrip(".")))
            ann_rate = record.sampling_rate
        elif args.stages:
            annotations = _read_stages(_resolve(args, args.stages), int(round(args.epoch * 100)))
        kind = "sleep" if args.stages or args.label_kind == "sleep" else "rhythm"
        labels = StripLabels(gender=args.gender, age=args.age)
        got = extract_strips(
            prepared,
            annotations,
            stride=args.stride,
            subject_id=args.subject or record.header.record_name,
            cycle=args.cycle,
            label_kind=kind,
            base_labels=labels,
            annotation_rate=ann_rate,
        )
        log.info("%s: %d strips", path.name, len(got))
        strips += got
    save_strips(strips, args.out)
    print(f"wrote {len(strips)} strips to {args.out}")
    return 0


def cmd_preprocess(args) -> int:
    from .io import load_strips, save_strips
    from .preprocess import NormalizationStats, QualityLabel, normalize_dataset, quality_gate

    strips = [s for p in args.stores for s in load_strips(_resolve(args, p))]
    threshold = QualityLabel.parse(args.min_quality)
    kept = [s for s in strips if quality_gate(s.values) >= threshold]
    if not kept:
        raise ValueError(f"no strip reaches quality {threshold.name}")
    stats = NormalizationStats.load(_resolve(args, args.use_stats)) if args.use_stats else None
    normalized, stats = normalize_dataset(kept, stats=stats, dataset_id=args.dataset_id)
    save_strips(normalized, args.out)
    sidecar = Path(args.stats) if args.stats else Path(str(args.out) + ".norm")
    stats.save(sidecar)
    print(f"kept {len(kept)}/{len(strips)} strips at quality >= {threshold.name}; std {stats.std:.6g} -> {sidecar}")
    return 0


def cmd_synth(args) -> int:
    from .io import save_strips
    from .synthetic import make_cohort, make_rhythm_dataset, make_sleep_dataset

    seed = _seed(args)
    if args.kind == "cohort":
        strips = make_cohort(args.subjects, args.strips_per_subject, seed=seed, noise=args.noise)
    elif args.kind == "rhythm":
        strips = make_rhythm_dataset(args.subjects, args.duration, seed=seed, prefix=args.prefix)
    else:
        strips = make_sleep_dataset(args.subjects, args.epochs, seed=seed)
    save_strips(strips, args.out)
    print(f"wrote {len(strips)} synthetic {args.kind} strips to {args.out}")
    return 0


def cmd_train(args) -> int:
    from .checkpoint import checkpoint_load
    from .io import load_strips
    from .sbncl import train

    cfg = _config(args)
    train_cfg = cfg.train
    if args.iterations is not None:
        train_cfg = dataclasses.replace(train_cfg, iterations=args.iterations)
    if args.checkpoint_every is not None:
        train_cfg = dataclasses.replace(train_cfg, checkpoint_every=args.checkpoint_every)
    if args.eval_every is not None:
        train_cfg = dataclasses.replace(train_cfg, eval_every=args.eval_every)
    strips = load_strips(_resolve(args, args.store))
    state = checkpoint_load(args.resume) if args.resume else None
    hook = None if args.no_eval else "gender"
    result = train(cfg.model, cfg.heads, cfg.ssl, train_cfg, strips, out_dir=args.out_dir, eval_hook=hook, state=state)
    _write(Path(args.out_dir) / "config.ini", dataclasses.replace(cfg, train=train_cfg).to_text())
    print(f"trained {result.state.iteration} iterations; final loss {result.losses[-1]:.6f}" if result.losses else "nothing to do")
    for it, metric in result.metric_curve:
        print(f"  iteration {it:>6d}  gender accuracy {metric:.4f}")
    return 0


def cmd_embed(args) -> int:
    from .checkpoint import checkpoint_load
    from .evaluation import EmbeddingTable, write_embeddings
    from .io import load_strips
    from .sbncl import embed

    state = checkpoint_load(_resolve(args, args.checkpoint))
    strips = load_strips(_resolve(args, args.store))
    values = np.stack([s.values for s in strips])
    emb = embed(values, state.encoder_params(args.weights), state.model)
    write_embeddings(args.out, EmbeddingTable.from_strips(emb, strips))
    print(f"wrote {emb.shape[0]} x {emb.shape[1]} embeddings to {args.out}")
    return 0


def _table(args, path):
    from .evaluation import read_embeddings

    return read_embeddings(_resolve(args, path))


def cmd_probe_gender(args) -> int:
    from .evaluation import run_gender_probe

    t = _table(args, args.embeddings)
    t = t.subset(t.present("gender"))
    subjects = t.label("subject_id") if args.by_subject else None
    report = run_gender_probe(
        t.values, t.label("gender"), seed=_seed(args), folds=args.folds, k=args.k, subjects=subjects, max_rows=args.max_rows
    )
    _emit_report(report, args.out)
    return 0


def cmd_probe_afib(args) -> int:
    from .evaluation import run_afib_transfer

    tr, te = _table(args, args.train), _table(args, args.test)
    report = run_afib_transfer(
        tr.values,
        tr.label("rhythm"),
        te.values,
        te.label("rhythm"),
        train_dataset=args.train_id or Path(args.train).stem,
        test_dataset=args.test_id or Path(args.test).stem,
        seed=_seed(args),
        per_class=args.per_class,
    )
    _emit_report(report, args.out)
    return 0


def cmd_probe_age(args) -> int:
    from .evaluation import run_age_probe

    t = _table(args, args.embeddings)
    t = t.subset(t.present("age"))
    report = run_age_probe(t.values, t.label("age").astype(float), seed=_seed(args), folds=args.folds, max_rows=args.max_rows)
    _emit_report(report, args.out)
    return 0


def cmd_probe_sleep(args) -> int:
    from .evaluation import run_sleep_staging

    t = _table(args, args.embeddings)
    t = t.subset(t.present("sleep_stage"))
    report = run_sleep_staging(t.values, t.label("sleep_stage"), t.label("subject_id"), seed=_seed(args), folds=args.folds)
    _emit_report(report, args.out)
    return 0


def cmd_pca(args) -> int:
    from .evaluation import run_subject_pca, select_subject_strips, write_projections

    t = _table(args, args.embeddings)
    if args.subjects:
        t = t.subset(select_subject_strips(t.label("subject_id"), t.label("record_id"), args.subjects, args.per_subject, _seed(args)))
    rhythm = t.label("rhythm") if "rhythm" in t.columns and t.present("rhythm").all() else None
    res, report = run_subject_pca(t.values, t.label("subject_id"), args.components, rhythm=rhythm, seed=_seed(args))
    labels = {k: t.columns[k] for k in ("subject_id", "record_id", "rhythm") if k in t.columns}
    write_projections(args.out, res.projections, labels)
    _emit_report(report, args.report)
    print(f"wrote {res.projections.shape[0]} projections to {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    from .sbncl import gradcheck_model

    res = gradcheck_model(
        model_dim=args.dim,
        n_blocks=args.blocks,
        input_len=args.input_len,
        patch_size=args.patch,
        n_heads=args.heads,
        seed=_seed(args),
        step=args.step,
    )
    for name, err in res.per_tensor.items():
        log.info("%-28s %.3e", name, err)
    ok = res.max_rel_error < args.tolerance
    print(f"max relative error {res.max_rel_error:.3e} over {res.n_scalars} scalars ({'ok' if ok else 'FAIL'} at {args.tolerance:g})")
    return 0 if ok else 1


def cmd_paramcount(args) -> int:
    from .vit1d import REFERENCE_PARAM_COUNT, param_count

    n = param_count(_config(args).model)
    dev = 100.0 * (n - REFERENCE_PARAM_COUNT) / REFERENCE_PARAM_COUNT
    print(f"parameters {n}")
    print(f"reference  {REFERENCE_PARAM_COUNT}")
    print(f"deviation  {dev:+.3f}%")
    return 0


# -- parser -------------------------------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="overrides the configured seed")
    common.add_argument("--reproducible", action="store_true", help="single-threaded BLAS for bit-identical output")
    common.add_argument("--threads", type=int, default=None)
    common.add_argument("--data-dir", default=os.environ.get(DATA_DIR_ENV, ""), help=f"default: ${DATA_DIR_ENV}")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="sbncl", description="Same-subject self-supervised ECG representation learning.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(fn=fn)
        return sp

    sp = add("ingest", cmd_ingest, "read WFDB/EDF records, resample, high-pass and cut strips")
    sp.add_argument("records", nargs="+", help=".hea/.dat record paths or .edf files")
    sp.add_argument("--out", required=True)
    sp.add_argument("--lead", default=None, help="lead name substring or index (default: first ECG lead, else 0)")
    sp.add_argument("--annotations", default=None, help="WFDB annotation extension, e.g. atr")
    sp.add_argument("--stages", default=None, help="text file with one sleep-stage token per epoch")
    sp.add_argument("--epoch", type=float, default=30.0, help="stage epoch length in seconds")
    sp.add_argument("--label-kind", choices=("rhythm", "sleep"), default="rhythm")
    sp.add_argument("--stride", type=int, default=1000)
    sp.add_argument("--subject", default=None)
    sp.add_argument("--cycle", type=int, choices=(1, 2), default=None)
    sp.add_argument("--gender", choices=("F", "M"), default=None)
    sp.add_argument("--age", type=float, default=None)
    sp.add_argument("--cutoff", type=float, default=0.5)
    sp.add_argument("--order", type=int, default=5)

    sp = add("preprocess", cmd_preprocess, "quality-gate and normalize strip stores of one dataset")
    sp.add_argument("stores", nargs="+")
    sp.add_argument("--out", required=True)
    sp.add_argument("--dataset-id", default="dataset")
    sp.add_argument("--min-quality", default="excellent", choices=("excellent", "barely", "unacceptable"))
    sp.add_argument("--stats", default=None, help="where to write the normalization sidecar")
    sp.add_argument("--use-stats", default=None, help="apply an existing sidecar instead of recomputing")

    sp = add("synth", cmd_synth, "write a synthetic strip store")
    sp.add_argument("--kind", choices=("cohort", "rhythm", "sleep"), default="cohort")
    sp.add_argument("--out", required=True)
    sp.add_argument("--subjects", type=int, default=20)
    sp.add_argument("--strips-per-subject", type=int, default=200)
    sp.add_argument("--noise", type=float, default=0.03)
    sp.add_argument("--duration", type=float, default=1200.0, help="rhythm record length (s)")
    sp.add_argument("--epochs", type=int, default=40, help="sleep epochs per subject")
    sp.add_argument("--prefix", default="afdb")

    sp = add("train", cmd_train, "train the encoder")
    sp.add_argument("--store", required=True)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--config", default="table1", help="preset name or config file")
    sp.add_argument("--iterations", type=int, default=None)
    sp.add_argument("--checkpoint-every", type=int, default=None)
    sp.add_argument("--eval-every", type=int, default=None)
    sp.add_argument("--no-eval", action="store_true", help="skip the periodic gender probe")
    sp.add_argument("--resume", default=None, help="checkpoint to continue from")

    sp = add("embed", cmd_embed, "encode a strip store with a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--store", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--weights", choices=("student", "teacher"), default="student")

    sp = add("probe-gender", cmd_probe_gender, "k-fold KNN gender accuracy")
    sp.add_argument("--embeddings", required=True)
    sp.add_argument("--out", default=None)
    sp.add_argument("--folds", type=int, default=10)
    sp.add_argument("-k", type=int, default=5)
    sp.add_argument("--max-rows", type=int, default=15000)
    sp.add_argument("--by-subject", action="store_true")

    sp = add("probe-afib", cmd_probe_afib, "AFib vs Normal linear SVC across datasets")
    sp.add_argument("--train", required=True)
    sp.add_argument("--test", required=True)
    sp.add_argument("--train-id", default=None)
    sp.add_argument("--test-id", default=None)
    sp.add_argument("--per-class", type=int, default=768)
    sp.add_argument("--out", default=None)

    sp = add("probe-age", cmd_probe_age, "k-fold linear regression R^2 on age")
    sp.add_argument("--embeddings", required=True)
    sp.add_argument("--folds", type=int, default=10)
    sp.add_argument("--max-rows", type=int, default=15000)
    sp.add_argument("--out", default=None)

    sp = add("probe-sleep", cmd_probe_sleep, "subject-grouped sleep staging accuracy")
    sp.add_argument("--embeddings", required=True)
    sp.add_argument("--folds", type=int, default=3)
    sp.add_argument("--out", default=None)

    sp = add("pca", cmd_pca, "PCA projections and silhouette scores")
    sp.add_argument("--embeddings", required=True)
    sp.add_argument("--out", required=True, help="projection CSV")
    sp.add_argument("--report", default=None)
    sp.add_argument("--components", type=int, default=3)
    sp.add_argument("--subjects", type=int, default=0, help="sample this many subjects (0 = all rows)")
    sp.add_argument("--per-subject", type=int, default=16)

    sp = add("gradcheck", cmd_gradcheck, "finite-difference check of the training objective")
    sp.add_argument("--dim", type=int, default=8)
    sp.add_argument("--blocks", type=int, default=1)
    sp.add_argument("--heads", type=int, default=1)
    sp.add_argument("--input-len", type=int, default=40)
    sp.add_argument("--patch", type=int, default=20)
    sp.add_argument("--step", type=float, default=1e-5)
    sp.add_argument("--tolerance", type=float, default=1e-4)

    sp = add("paramcount", cmd_paramcount, "encoder parameter count")
    sp.add_argument("--config", default="table1")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"sbncl: error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        with _thread_limit(args):
            return args.fn(args)
    except Exception as exc:  # noqa: BLE001 - reported, not swallowed
        if args.verbose:
            log.exception("failed")
        print(f"sbncl {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
