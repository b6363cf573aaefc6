"""Command-line pipeline driver.

Commands: ``synth``, ``train``, ``score``, ``eval``, ``inspect-bundle``.
Configuration is a flat key=value file with sections; command-line flags
override file values and ``DIGITVEC_SEED`` is the seed fallback. Exit
codes: 0 ok, 1 runtime failure, 2 usage or config error.
"""

import argparse
import configparser
import os
import sys
from pathlib import Path

from . import metrics, pipeline
from ._kernels import BACKEND
from .corpus import (
    SynthConfig,
    format_trial_list,
    generate_synthetic_corpus,
    load_features,
    load_manifest,
    make_trial_list,
    parse_trial_list,
    read_container,
    save_bundle,
    load_bundle,
    save_features,
    save_manifest,
)
from .errors import ConfigError, DigitvecError

# allowed config keys per section
_SCHEMA = {
    "corpus": {f for f in SynthConfig.__dataclass_fields__},
    "hmm": {"states", "comps", "iters"},
    "ivector": {"rank", "iters", "seed"},
    "compensation": {"method", "reg_coeff", "lda_dim"},
    "scoring": {"snorm"},
}


def load_config(path):
    """Parse and validate a key=value config file into a flat dict."""
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise ConfigError(f"cannot read config file {path}")
    values = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
            values[f"{section}.{key}"] = raw
    return values


def _default_seed(args_seed, config):
    if args_seed is not None:
        return args_seed
    if "ivector.seed" in config:
        return int(config["ivector.seed"])
    return int(os.environ.get("DIGITVEC_SEED", "0"))


def _synth_config(args, config):
    kwargs = {}
    for key, raw in config.items():
        section, name = key.split(".", 1)
        if section != "corpus":
            continue
        fieldtype = SynthConfig.__dataclass_fields__[name].type
        kwargs[name] = float(raw) if fieldtype is float else int(raw)
    if args.speakers is not None:
        kwargs["n_speakers"] = args.speakers
    kwargs["seed"] = _default_seed(args.seed, config)
    return SynthConfig(**kwargs)


def _pipeline_config(args, config):
    get = config.get
    cfg = pipeline.PipelineConfig(
        hmm_states=int(get("hmm.states", 4)),
        hmm_comps=int(get("hmm.comps", 2)),
        hmm_iters=int(get("hmm.iters", 3)),
        ivector_rank=int(get("ivector.rank", 8)),
        ivector_iters=int(get("ivector.iters", 5)),
        seed=_default_seed(args.seed, config),
        method=get("compensation.method", "uncertainty_norm"),
        reg_coeff=float(get("compensation.reg_coeff", 1.0)),
        lda_dim=int(get("compensation.lda_dim", 0)),
        snorm=get("scoring.snorm", "true").lower() in ("1", "true", "yes"),
        jobs=args.jobs,
    )
    if getattr(args, "states", None) is not None:
        cfg.hmm_states = args.states
    if getattr(args, "comps", None) is not None:
        cfg.hmm_comps = args.comps
    if getattr(args, "rank", None) is not None:
        cfg.ivector_rank = args.rank
    if getattr(args, "method", None) is not None:
        cfg.method = args.method
        cfg.__post_init__()
    return cfg


def cmd_synth(args):
    config = load_config(args.config) if args.config else {}
    cfg = _synth_config(args, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest, features, _ = generate_synthetic_corpus(cfg)
    save_manifest(out / "manifest.txt", manifest)
    save_features(out / "features.dvc", list(features.values()))
    trials = make_trial_list(manifest)
    (out / "trials.txt").write_text(format_trial_list(trials))
    print(f"wrote {len(manifest.utterances)} utterances, {len(trials)} trials to {out}")
    return 0


def cmd_train(args):
    config = load_config(args.config) if args.config else {}
    cfg = _pipeline_config(args, config)
    data = Path(args.data)
    manifest_path = data / "manifest.txt"
    if not manifest_path.exists():
        raise ConfigError(f"missing manifest: {manifest_path}")
    manifest = load_manifest(manifest_path)
    features = load_features(data / "features.dvc")
    bundle = pipeline.train_models(manifest, features, cfg)
    save_bundle(args.out, bundle)
    final_ll = bundle.training_log["hmm_loglik"][-1] if bundle.training_log["hmm_loglik"] else None
    print(f"trained {len(bundle.hmms)} digit models "
          f"(final HMM loglik {final_ll}); bundle -> {args.out}")
    return 0


def _format_score(value):
    return repr(float(value))


def cmd_score(args):
    data = Path(args.data)
    manifest = load_manifest(data / "manifest.txt")
    features = load_features(data / "features.dvc")
    bundle = load_bundle(args.bundle)
    trials = parse_trial_list(Path(args.trials).read_text())

    models = pipeline.enroll_speakers(manifest, features, bundle, jobs=args.jobs)
    gender_of = {u.utt_id: u.gender for u in manifest.utterances}
    scores, rejects = pipeline.score_trials(
        trials, models, features, bundle,
        use_snorm=not args.no_snorm, jobs=args.jobs, gender_of=gender_of,
    )
    with open(args.out, "w") as fh:
        for s in scores:
            label = s.label or "-"
            fh.write(
                f"{s.enroll_id}\t{s.test_id}\t{s.digit_string}\t{label}\t"
                f"{_format_score(s.raw)}\t{_format_score(s.normalized)}\n"
            )
    if rejects:
        reject_path = str(args.out) + ".rejects"
        with open(reject_path, "w") as fh:
            for t in rejects:
                fh.write(f"{t.enroll_id} {t.test_id} {t.digit_string}\n")
        print(f"warning: {len(rejects)} trials rejected (see {reject_path})",
              file=sys.stderr)
    print(f"wrote {len(scores)} scores to {args.out}")
    return 0


def read_score_file(path):
    scores, labels = [], []
    with open(path) as fh:
        for i, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 6:
                raise ConfigError(f"{path} line {i}: expected 6 fields")
            scores.append(float(parts[5]))
            labels.append(parts[3])
    return scores, labels


def cmd_eval(args):
    scores, labels = read_score_file(args.scores)
    if any(lab not in ("target", "nontarget") for lab in labels):
        print("error: score file contains unlabeled trials", file=sys.stderr)
        return 2
    curve = metrics.compute_det(scores, [lab == "target" for lab in labels])
    eer = metrics.compute_eer(curve)
    dcf_old = metrics.compute_min_dcf(curve, metrics.DCF_OLD)
    dcf_new = metrics.compute_min_dcf(curve, metrics.DCF_NEW)
    report = (
        f"trials          {curve.num_targets + curve.num_nontargets}\n"
        f"targets         {curve.num_targets}\n"
        f"nontargets      {curve.num_nontargets}\n"
        f"eer             {eer:.6f}\n"
        f"ndcf_old_min    {dcf_old:.6f}\n"
        f"ndcf_new_min    {dcf_new:.6f}\n"
    )
    print(report, end="")
    if args.out:
        Path(args.out).write_text(report)
    if args.det_csv:
        Path(args.det_csv).write_text(metrics.det_csv(curve))
    return 0


def cmd_inspect_bundle(args):
    meta, arrays = read_container(args.bundle)
    print(f"kind: {meta.get('kind')}  seed: {meta.get('seed')}")
    print(f"kernel backend: {BACKEND}")
    for d in meta.get("digits", []):
        w = arrays.get(f"hmm/{d}/weights")
        T = arrays.get(f"ext/{d}/T")
        chain = meta.get("chain_kinds", {}).get(str(d), [])
        line = f"digit {d}: "
        if w is not None:
            line += f"hmm {w.shape[0]}x{w.shape[1]}"
        if T is not None:
            line += f", subspace {T.shape[0]}x{T.shape[1]}"
        if chain:
            line += f", chain [{', '.join(chain)}]"
        print(line)
    print(f"cohort models: {len(meta.get('cohort_models', []))}, "
          f"cohort tests: {len(meta.get('cohort_tests', []))}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="digitvec")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--speakers", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train all models into a bundle")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--states", type=int)
    p.add_argument("--comps", type=int)
    p.add_argument("--rank", type=int)
    p.add_argument("--method")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score a trial list")
    p.add_argument("--bundle", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--trials", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-snorm", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="compute metrics from a score file")
    p.add_argument("--scores", required=True)
    p.add_argument("--out")
    p.add_argument("--det-csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect-bundle", help="describe a model bundle")
    p.add_argument("--bundle", required=True)
    p.set_defaults(func=cmd_inspect_bundle)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DigitvecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
