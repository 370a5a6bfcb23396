"""csattn command line: synth / train / decode / score / grid.

Exit codes: 0 success, 2 usage, 3 data error, 4 numeric failure.
Config files are plain `key = value` lines; explicit flags win.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import decode as dec
from . import metrics, synth
from .attention import VARIANTS
from .errors import DataError, NumericError, ShapeError, VocabError
from .model import AdamState, Model, ModelConfig, load_checkpoint, make_batch, save_checkpoint, train_step
from .vocab import Vocab

CONDITIONS = ("cs", "cs+a", "cs+b", "all")

# keys a train config file may set (flags use the same names with dashes)
TRAIN_KEYS = {
    "steps": int, "batch": int, "d_model": int, "heads": int, "d_ff": int,
    "n_enc": int, "n_dec": int, "dropout": float, "eps_ls": float,
    "warmup": int, "lr_scale": float, "w_same": float, "w_diff": float,
    "alpha": float, "beam": int, "max_len": int,
}

TRAIN_DEFAULTS = {
    "steps": 3000, "batch": 32, "d_model": 64, "heads": 4, "d_ff": 128,
    "n_enc": 2, "n_dec": 2, "dropout": 0.1, "eps_ls": 0.1, "warmup": 400,
    "lr_scale": 1.0, "w_same": 1.0, "w_diff": 0.1, "alpha": 0.1,
    "beam": 10, "max_len": 40,
}


def read_kv_config(path) -> dict:
    kv = {}
    for ln, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}:{ln}: expected `key = value`, got {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        kv[k] = v
    return kv


def _global_seed(arg_seed):
    if arg_seed is not None:
        return arg_seed
    return int(os.environ.get("CSATTN_SEED", "0"))


def _resolve_train_opts(args) -> dict:
    opts = dict(TRAIN_DEFAULTS)
    if args.config:
        for k, v in read_kv_config(args.config).items():
            if k not in TRAIN_KEYS:
                raise DataError(f"{args.config}: unknown config key {k!r}")
            opts[k] = TRAIN_KEYS[k](v)
    for k in TRAIN_KEYS:
        v = getattr(args, k, None)
        if v is not None:
            opts[k] = v
    return opts


# -- data loading ------------------------------------------------------------


class Dataset:
    """Synthesized data directory: vocab, manifests, on-demand features."""

    def __init__(self, datadir):
        self.dir = Path(datadir)
        if not self.dir.is_dir():
            raise DataError(f"data directory {datadir} does not exist")
        self.cfg = synth.load_data_cfg(self.dir)
        self.vocab = Vocab.load(self.dir / "vocab.txt")
        self._feat_cache: dict[str, np.ndarray] = {}

    def manifest(self, split) -> list[tuple[str, str]]:
        path = self.dir / f"{split}.manifest"
        if not path.exists():
            raise DataError(f"missing manifest {path}")
        return synth.load_manifest(path)

    def features(self, utt_id, line) -> np.ndarray:
        cached = self._feat_cache.get(utt_id)
        if cached is None:
            cached = synth.featurize(
                line.split(), utt_id, self.vocab, self.cfg.seed,
                d_f=self.cfg.d_f, noise=self.cfg.noise,
            )
            self._feat_cache[utt_id] = cached
        return cached

    def condition_corpora(self, condition):
        if condition not in CONDITIONS:
            raise DataError(f"unknown condition {condition!r}; choose from {CONDITIONS}")
        splits = ["train_cs"]
        if condition in ("cs+a", "all"):
            splits.append("train_mono_a")
        if condition in ("cs+b", "all"):
            splits.append("train_mono_b")
        return {s: self.manifest(s) for s in splits}


def run_training(data: Dataset, variant: str, condition: str, seed: int,
                 opts: dict, out_path, log_lines: list | None = None) -> Model:
    corpora = data.condition_corpora(condition)
    names = sorted(corpora)
    sizes = np.array([len(corpora[n]) for n in names], dtype=float)
    probs = sizes / sizes.sum()
    cfg = ModelConfig(
        vocab_size=len(data.vocab),
        d_model=opts["d_model"], heads=opts["heads"], d_ff=opts["d_ff"],
        n_enc=opts["n_enc"], n_dec=opts["n_dec"], d_f=data.cfg.d_f,
        dropout=opts["dropout"], eps_ls=opts["eps_ls"], variant=variant,
        w_same=opts["w_same"], w_diff=opts["w_diff"], alpha=opts["alpha"],
        warmup=opts["warmup"], lr_scale=opts["lr_scale"], seed=seed,
    )
    model = Model(cfg)
    opt = AdamState(model)
    sample_rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5A5A]))
    drop_rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD120]))
    batch_size = opts["batch"]
    for step in range(1, opts["steps"] + 1):
        # interleave corpora proportionally to their sizes
        src = names[int(sample_rng.choice(len(names), p=probs))]
        entries = corpora[src]
        idx = sample_rng.choice(len(entries), size=min(batch_size, len(entries)),
                                replace=False)
        feats, targets = [], []
        for i in idx:
            utt_id, line = entries[int(i)]
            feats.append(data.features(utt_id, line))
            targets.append(data.vocab.encode(line))
        batch = make_batch(feats, targets, data.vocab)
        probe = "self_b" if variant == "independent" else None
        result = train_step(model, batch, opt, step, rng=drop_rng,
                            probe_prefix=probe)
        loss, probe_max = result if probe else (result, None)
        if log_lines is not None and (step % 50 == 0 or step == 1):
            extra = ""
            if probe is not None:
                extra = f" src={src} grad_self_b={probe_max:.3e}"
            log_lines.append(f"step={step} loss={loss:.4f}{extra}")
    if out_path is not None:
        save_checkpoint(out_path, model, step=opts["steps"])
    return model


def decode_to_file(model: Model, data: Dataset, manifest, out_path, beam, max_len):
    lines = []
    for utt_id, line in manifest:
        feats = data.features(utt_id, line)
        best, _ = dec.beam_search(model, data.vocab, feats, beam, max_len)
        lines.append(f"{utt_id}\t{data.vocab.decode(list(best.ids))}\t{best.logp:.6f}")
    Path(out_path).write_text(
        ("\n".join(lines) + "\n") if lines else "", encoding="utf-8"
    )


def read_hyp_file(path) -> dict:
    hyps = {}
    for ln, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not raw.strip():
            continue
        parts = raw.split("\t")
        if len(parts) != 3:
            raise DataError(f"{path}:{ln}: expected `utt_id<TAB>tokens<TAB>logprob`")
        hyps[parts[0]] = parts[1]
    return hyps


# -- subcommands -------------------------------------------------------------


def cmd_synth(args):
    cfg = synth.SynthConfig(seed=_global_seed(args.seed))
    if args.config:
        for k, v in read_kv_config(args.config).items():
            if not hasattr(cfg, k):
                raise DataError(f"{args.config}: unknown synth key {k!r}")
            cur = getattr(cfg, k)
            setattr(cfg, k, type(cur)(float(v)) if isinstance(cur, int) and "." in v
                    else type(cur)(v))
    synth.write_dataset(args.out, cfg)
    print(f"wrote dataset to {args.out}")
    return 0


def cmd_train(args):
    data = Dataset(args.data)
    opts = _resolve_train_opts(args)
    seed = _global_seed(args.seed)
    log: list[str] = []
    run_training(data, args.variant, args.condition, seed, opts, args.out, log)
    Path(str(args.out) + ".log").write_text("\n".join(log) + "\n", encoding="utf-8")
    print(f"wrote checkpoint {args.out} ({opts['steps']} steps)")
    return 0


def cmd_decode(args):
    data = Dataset(args.data)
    model, _ = load_checkpoint(args.ckpt)
    if model.cfg.vocab_size != len(data.vocab):
        raise DataError(
            f"checkpoint vocab size {model.cfg.vocab_size} != dataset vocab {len(data.vocab)}"
        )
    manifest = synth.load_manifest(args.manifest)
    decode_to_file(model, data, manifest, args.out, args.beam, args.max_len)
    print(f"decoded {len(manifest)} utterances -> {args.out}")
    return 0


def cmd_score(args):
    vocab = Vocab.load(args.vocab)
    refs = dict(synth.load_manifest(args.ref))
    hyps = read_hyp_file(args.hyp)
    report = metrics.score_corpus(refs, hyps, vocab)
    print(metrics.format_report(report))
    return 0


def _grid_cells(args):
    if args.plan:
        cells = []
        for k, v in read_kv_config(args.plan).items():
            if k == "variants":
                variants = [s.strip() for s in v.split(",")]
            elif k == "conditions":
                conditions = [s.strip() for s in v.split(",")]
            elif k == "seeds":
                seeds = [int(s) for s in v.split(",")]
            else:
                raise DataError(f"{args.plan}: unknown plan key {k!r}")
        try:
            return variants, conditions, seeds
        except UnboundLocalError:
            raise DataError(f"{args.plan}: plan needs variants, conditions, seeds")
    variants = [s.strip() for s in args.variants.split(",")]
    conditions = [s.strip() for s in args.conditions.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]
    return variants, conditions, seeds


def cmd_grid(args):
    data = Dataset(args.data)
    opts = _resolve_train_opts(args)
    variants, conditions, seeds = _grid_cells(args)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    test_manifest = data.manifest("test")
    mers: dict[tuple[str, str], list[float]] = {}
    for variant in variants:
        for condition in conditions:
            for seed in seeds:
                tag = f"{variant}_{condition.replace('+', '')}_s{seed}"
                ckpt = outdir / f"{tag}.ckpt"
                hyp = outdir / f"{tag}.hyp"
                score = outdir / f"{tag}.score"
                if score.exists() and ckpt.exists():
                    kv = read_kv_config(score)
                    mers.setdefault((variant, condition), []).append(float(kv["MER"]))
                    print(f"[skip] {tag} MER={kv['MER']}")
                    continue
                log: list[str] = []
                model = run_training(data, variant, condition, seed, opts, ckpt, log)
                (outdir / f"{tag}.log").write_text("\n".join(log) + "\n")
                decode_to_file(model, data, test_manifest, hyp,
                               opts["beam"], opts["max_len"])
                report = metrics.score_corpus(
                    dict(test_manifest), read_hyp_file(hyp), data.vocab
                )
                score.write_text(f"MER = {100.0 * report.mer:.4f}\n")
                mers.setdefault((variant, condition), []).append(100.0 * report.mer)
                print(f"[done] {tag} MER={100.0 * report.mer:.2f}")
    lines = _grid_summary(mers, variants, conditions)
    summary = "\n".join(lines)
    (outdir / "summary.txt").write_text(summary + "\n")
    print(summary)
    return 0


def _grid_summary(mers, variants, conditions):
    """Table of seed-mean test MER per cell plus relative reduction vs the
    (first variant, first condition) reference cell."""
    ref_cell = (variants[0], conditions[0])
    ref = float(np.mean(mers[ref_cell])) if ref_cell in mers else None
    lines = [f"{'variant':<16} {'condition':<10} {'meanMER%':>9} {'rel-vs-ref%':>12}"]
    for variant in variants:
        for condition in conditions:
            vals = mers.get((variant, condition))
            if not vals:
                continue
            mean = float(np.mean(vals))
            rel = "" if not ref else f"{100.0 * (ref - mean) / ref:>12.2f}"
            lines.append(f"{variant:<16} {condition:<10} {mean:>9.2f} {rel}")
    return lines


# -- entry point -------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="csattn", description=__doc__)
    sub = p.add_subparsers(dest="cmd", required=True)

    sp = sub.add_parser("synth", help="generate the synthetic bilingual dataset")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--config", default=None)
    sp.set_defaults(fn=cmd_synth)

    def add_train_flags(q):
        q.add_argument("--config", default=None)
        for k, typ in TRAIN_KEYS.items():
            q.add_argument(f"--{k.replace('_', '-')}", dest=k, type=typ, default=None)

    tp = sub.add_parser("train", help="train one (variant, condition) cell")
    tp.add_argument("--data", required=True)
    tp.add_argument("--variant", required=True, choices=list(VARIANTS))
    tp.add_argument("--condition", required=True, choices=list(CONDITIONS))
    tp.add_argument("--seed", type=int, default=None)
    tp.add_argument("--out", required=True)
    add_train_flags(tp)
    tp.set_defaults(fn=cmd_train)

    dp = sub.add_parser("decode", help="beam-search decode a manifest")
    dp.add_argument("--ckpt", required=True)
    dp.add_argument("--data", required=True)
    dp.add_argument("--manifest", required=True)
    dp.add_argument("--beam", type=int, default=10)
    dp.add_argument("--max-len", dest="max_len", type=int, default=40)
    dp.add_argument("--out", required=True)
    dp.set_defaults(fn=cmd_decode)

    cp = sub.add_parser("score", help="mixed error rate of a decode output")
    cp.add_argument("--ref", required=True)
    cp.add_argument("--hyp", required=True)
    cp.add_argument("--vocab", required=True)
    cp.set_defaults(fn=cmd_score)

    gp = sub.add_parser("grid", help="run the (variant x condition x seed) grid")
    gp.add_argument("--data", required=True)
    gp.add_argument("--out", required=True)
    gp.add_argument("--plan", default=None)
    gp.add_argument("--variants", default="baseline,score-reweight,shared,independent")
    gp.add_argument("--conditions", default="cs,all")
    gp.add_argument("--seeds", default="0,1,2")
    add_train_flags(gp)
    gp.set_defaults(fn=cmd_grid)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (DataError, VocabError, ShapeError, FileNotFoundError, OSError) as e:
        print(f"csattn: data error: {e}", file=sys.stderr)
        return 3
    except NumericError as e:
        print(f"csattn: numeric failure: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
