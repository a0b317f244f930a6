"""Command-line surface: reproducible experiment workflows.

Subcommands: synth, train, embed, retrieve-eval, gradcheck, sweep, diagnose.
Exit codes: 0 success, 1 usage error, 2 data/config error, 3 numerical
failure.  All file outputs are written atomically (temp file + rename) so an
interrupted run never leaves a truncated artifact.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from dataclasses import dataclass, field

import numpy as np

from . import dataio, evaluation, model as model_mod
from .config import CONFIG_KEYS, HARMONIZATION_KINDS, VARIANTS, _REQUIRED, load_config
from .errors import ConfigError, DataError, HmgpError, NumericalError
from .objectives import ObjectiveData, model_gradient, model_objective, pack_params
from .optimizer import check_gradients

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


@dataclass
class CommandResult:
    exit_code: int
    artifacts: list[str] = field(default_factory=list)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _config_key_help() -> str:
    lines = ["config keys (JSON):"]
    paper_defaults = {"M": "paper default", "gamma_x": "paper default", "q": "paper range [7,10]"}
    for key, (dflt, doc) in CONFIG_KEYS.items():
        tag = f" [{paper_defaults[key]}]" if key in paper_defaults else ""
        shown = "required" if dflt is _REQUIRED else f"default {dflt!r}"
        lines.append(f"  {key:22s} {doc} ({shown}){tag}")
    return "\n".join(lines)


def build_parser() -> _Parser:
    p = _Parser(prog="hmgp", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic paired two-modality dataset")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--q", type=int, required=True)
    sp.add_argument("--d1", type=int, required=True)
    sp.add_argument("--d2", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--noise", type=float, default=0.1)
    sp.add_argument("--groups", type=int, default=10)
    sp.add_argument("--separation", type=float, default=0.0)
    sp.add_argument("--test-fraction", type=float, default=0.2)
    sp.add_argument("--out-dir", required=True)

    tp = sub.add_parser(
        "train",
        help="train a model from a config and paired feature matrices",
        epilog=_config_key_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    tp.add_argument("--config", required=True)
    tp.add_argument("--y1", required=True, help="modality-1 feature matrix (MTXB or CSV)")
    tp.add_argument("--y2", required=True)
    tp.add_argument("--labels", default=None)
    tp.add_argument("--split", default=None, help="JSON file with train/test index lists")
    tp.add_argument("--model", required=True, help="output model container path")
    tp.add_argument("--trace", default=None, help="optional optimization trace CSV path")
    tp.add_argument("--seed", type=int, default=None, help="override the config seed")

    ep = sub.add_parser("embed", help="MAP-infer latent positions for a test matrix")
    ep.add_argument("--model", required=True)
    ep.add_argument("--test", required=True)
    ep.add_argument("--modality", type=int, required=True, help="1-based modality id")
    ep.add_argument("--out", required=True)
    ep.add_argument("--threads", type=int, default=1)

    rp = sub.add_parser("retrieve-eval", help="two-direction cross-modal retrieval metrics")
    rp.add_argument("--latents1", required=True, help="modality-1 test embeddings (MTXB)")
    rp.add_argument("--latents2", required=True)
    rp.add_argument("--labels", required=True)
    rp.add_argument("--out", required=True, help="metric report JSON path")
    rp.add_argument("--pr-out", default=None, help="PR curve CSV path prefix")
    rp.add_argument("--ap-out", default=None, help="per-query AP CSV path prefix")

    gp = sub.add_parser("gradcheck", help="finite-difference check of a variant's full gradient")
    gp.add_argument("--variant", required=True, choices=VARIANTS)
    gp.add_argument("--harmonization", default=None, choices=HARMONIZATION_KINDS)
    gp.add_argument("--n", type=int, default=12)
    gp.add_argument("--q", type=int, default=2)
    gp.add_argument("--seed", type=int, default=0)
    gp.add_argument("--tolerance", type=float, default=1e-5)

    wp = sub.add_parser("sweep", help="train/evaluate over a grid of penalty weights")
    wp.add_argument("--config", required=True)
    wp.add_argument("--y1", required=True)
    wp.add_argument("--y2", required=True)
    wp.add_argument("--labels", required=True)
    wp.add_argument("--split", required=True)
    wp.add_argument("--grid-mu", required=True, help="comma-separated mu values")
    wp.add_argument("--grid-lambda", default=None, help="comma-separated lambda values")
    wp.add_argument("--out", required=True, help="sweep CSV path")
    wp.add_argument("--threads", type=int, default=1)
    wp.add_argument("--seed", type=int, default=None)

    dp = sub.add_parser("diagnose", help="kernel/latent-similarity divergence report")
    dp.add_argument("--model", required=True)
    dp.add_argument("--out-dir", required=True)
    dp.add_argument("--baseline-model", default=None, help="paired model for comparison CSV")

    return p


def _read_any_matrix(path) -> np.ndarray:
    fmt = "csv" if str(path).endswith(".csv") else "binary"
    return dataio.read_matrix(path, format=fmt)


def _read_split(path) -> dataio.Split:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if "train" not in doc or "test" not in doc:
        raise DataError(f"{path}: split file needs 'train' and 'test' index lists")
    return dataio.Split(
        train=np.asarray(doc["train"], dtype=np.intp),
        test=np.asarray(doc["test"], dtype=np.intp),
        seed=doc.get("seed"),
    )


def cmd_synth(args) -> CommandResult:
    bundle = dataio.generate_synthetic(
        n=args.n,
        q=args.q,
        d1=args.d1,
        d2=args.d2,
        seed=args.seed,
        noise=args.noise,
        groups=args.groups,
        separation=args.separation,
        test_fraction=args.test_fraction,
    )
    import os

    os.makedirs(args.out_dir, exist_ok=True)
    paths = {
        "y1": os.path.join(args.out_dir, "y1.mtxb"),
        "y2": os.path.join(args.out_dir, "y2.mtxb"),
        "z_true": os.path.join(args.out_dir, "z_true.mtxb"),
        "labels": os.path.join(args.out_dir, "labels.txt"),
        "split": os.path.join(args.out_dir, "split.json"),
    }
    dataio.write_matrix(bundle.modalities[0], paths["y1"])
    dataio.write_matrix(bundle.modalities[1], paths["y2"])
    dataio.write_matrix(bundle.latent_truth, paths["z_true"])
    dataio.write_labels(bundle.labels, paths["labels"])
    dataio.atomic_write_text(
        paths["split"],
        json.dumps(
            {
                "train": bundle.split.train.tolist(),
                "test": bundle.split.test.tolist(),
                "seed": args.seed,
            }
        ),
    )
    return CommandResult(EXIT_OK, sorted(paths.values()))


def _load_bundle(args) -> dataio.DatasetBundle:
    y1 = _read_any_matrix(args.y1)
    y2 = _read_any_matrix(args.y2)
    labels = dataio.read_labels(args.labels) if getattr(args, "labels", None) else None
    split = _read_split(args.split) if getattr(args, "split", None) else None
    return dataio.DatasetBundle(modalities=[y1, y2], labels=labels, split=split)


def cmd_train(args) -> CommandResult:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    bundle = _load_bundle(args)
    trained, trace = model_mod.train(bundle, cfg)
    model_mod.save_model(trained, args.model)
    artifacts = [args.model]
    if args.trace:
        dataio.atomic_write_text(args.trace, trace.to_csv())
        artifacts.append(args.trace)
    return CommandResult(EXIT_OK, artifacts)


def cmd_embed(args) -> CommandResult:
    trained = model_mod.load_model(args.model)
    y_test = _read_any_matrix(args.test)
    if args.modality < 1 or args.modality > trained.n_modalities:
        raise DataError(
            f"modality {args.modality} out of range 1..{trained.n_modalities}"
        )
    latents = model_mod.embed_test_set(y_test, args.modality - 1, trained, threads=args.threads)
    dataio.write_matrix(latents.reshape(latents.shape[0], trained.cfg.q), args.out)
    return CommandResult(EXIT_OK, [args.out])


def cmd_retrieve_eval(args) -> CommandResult:
    x1 = _read_any_matrix(args.latents1)
    x2 = _read_any_matrix(args.latents2)
    labels = dataio.read_labels(args.labels)
    if x1.shape[0] != x2.shape[0] or x1.shape[0] != len(labels):
        raise DataError("embeddings and labels disagree on the number of test objects")
    report = evaluation.cross_modal_report(x1, x2, labels)
    dataio.atomic_write_text(args.out, json.dumps(report.to_dict(), indent=2))
    artifacts = [args.out]
    if args.pr_out:
        for name, pr in (("i2t", report.pr_i2t), ("t2i", report.pr_t2i)):
            path = f"{args.pr_out}.{name}.csv"
            rows = ["recall,precision"] + [f"{r},{p}" for r, p in pr]
            dataio.atomic_write_text(path, "\n".join(rows) + "\n")
            artifacts.append(path)
    if args.ap_out:
        for name, aps in (
            ("i2t", report.per_query_ap_i2t),
            ("t2i", report.per_query_ap_t2i),
        ):
            path = f"{args.ap_out}.{name}.csv"
            rows = ["query,ap"] + [f"{i},{a}" for i, a in enumerate(aps)]
            dataio.atomic_write_text(path, "\n".join(rows) + "\n")
            artifacts.append(path)
    return CommandResult(EXIT_OK, artifacts)


def random_instance(variant, harmonization, n, q, seed, mu=0.5):
    """A small random problem instance for gradient verification."""
    from .config import has_semantic_terms, is_harmonized, is_similarity_based
    from .kernels import feature_similarity, RbfHyperparams
    from .config import SemanticConstraints

    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, q))
    thetas = [
        model_mod.RbfHyperparams(*(0.3 * rng.standard_normal(4) + [0.0, 0.0, -1.0, -2.0]))
        for _ in range(2)
    ]
    y = [rng.standard_normal((n, 3)), rng.standard_normal((n, 4))]
    if is_similarity_based(variant):
        data = [feature_similarity(yc, 2.0) for yc in y]
    else:
        data = y
    semantic = None
    if has_semantic_terms(variant):
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
        order = rng.permutation(len(pairs))
        pairs = [pairs[k] for k in order]
        semantic = SemanticConstraints(
            similar_pairs=tuple(pairs[: n // 2]),
            dissimilar_pairs=tuple(pairs[n // 2 : n]),
            lambda_similar=0.7,
            lambda_dissimilar=0.9,
        )
    obj_data = ObjectiveData(
        variant=variant,
        data_matrices=data,
        mu=(mu, mu) if is_harmonized(variant) else (0.0, 0.0),
        harmonization_kind=harmonization if is_harmonized(variant) else None,
        gamma_x=1.0,
        semantic=semantic,
        include_latent_prior=not is_harmonized(variant),
        q=q,
    )
    params = pack_params(x, thetas)
    return params, obj_data


def cmd_gradcheck(args) -> CommandResult:
    from .config import is_harmonized

    variant = args.variant
    if is_harmonized(variant) and args.harmonization is None:
        raise ConfigError(f"variant {variant} needs --harmonization")
    params, data = random_instance(variant, args.harmonization, args.n, args.q, args.seed)
    err, idx = check_gradients(
        lambda p: model_objective(p, data).total,
        lambda p: model_gradient(p, data),
        params,
    )
    print(f"gradcheck {variant}: max relative error {err:.3e} at coordinate {idx}")
    if err >= args.tolerance:
        raise NumericalError(
            f"gradient check failed: error {err:.3e} at coordinate {idx} "
            f"exceeds {args.tolerance}"
        )
    return CommandResult(EXIT_OK, [])


def run_pipeline(bundle, cfg, threads=1):
    """Train, embed the test split for both modalities, and evaluate retrieval."""
    trained, trace = model_mod.train(bundle, cfg)
    test_idx = bundle.split.test
    if test_idx.size == 0:
        raise DataError("pipeline evaluation needs a non-empty test split")
    if bundle.labels is None:
        raise DataError("pipeline evaluation needs labels")
    latents = [
        model_mod.embed_test_set(
            bundle.modalities[c][test_idx], c, trained, threads=threads
        )
        for c in range(2)
    ]
    labels_test = [bundle.labels[i] for i in test_idx]
    report = evaluation.cross_modal_report(latents[0], latents[1], labels_test)
    return trained, trace, report


def cmd_sweep(args) -> CommandResult:
    base = load_config(args.config)
    if args.seed is not None:
        base.seed = args.seed
    bundle = _load_bundle(args)
    mus = [float(v) for v in args.grid_mu.split(",") if v.strip() != ""]
    lambdas = (
        [float(v) for v in args.grid_lambda.split(",") if v.strip() != ""]
        if args.grid_lambda
        else [None]
    )
    if not mus:
        raise ConfigError("--grid-mu is empty")
    rows = ["mu,lambda,map_i2t,map_t2i,map_average"]
    for mu in mus:
        for lam in lambdas:
            cfg = copy.deepcopy(base)
            cfg.mu = (mu, mu)
            if lam is not None:
                cfg.lambda_similar = lam
                cfg.lambda_dissimilar = lam
            _, _, report = run_pipeline(bundle, cfg, threads=args.threads)
            lam_out = "" if lam is None else lam
            rows.append(
                f"{mu},{lam_out},{report.map_i2t},{report.map_t2i},{report.map_average}"
            )
    dataio.atomic_write_text(args.out, "\n".join(rows) + "\n")
    return CommandResult(EXIT_OK, [args.out])


def cmd_diagnose(args) -> CommandResult:
    import os

    trained = model_mod.load_model(args.model)
    report = evaluation.divergence_report(trained)
    os.makedirs(args.out_dir, exist_ok=True)
    artifacts = []
    for c, diff in enumerate(report.abs_diff, start=1):
        path = os.path.join(args.out_dir, f"abs_diff_mod{c}.mtxb")
        dataio.write_matrix(diff, path)
        artifacts.append(path)
    summary = {
        "riemannian": report.riemannian,
        "total": report.total,
        "kernel_diagonals": report.kernel_diagonals,
        "similarity_diagonal": report.similarity_diagonal,
        "jitters": report.jitters,
        "seed": trained.cfg.seed,
    }
    if args.baseline_model:
        base = model_mod.load_model(args.baseline_model)
        base_report = evaluation.divergence_report(base)
        summary["baseline_riemannian"] = base_report.riemannian
        summary["baseline_total"] = base_report.total
        path = os.path.join(args.out_dir, "divergence_comparison.csv")
        rows = ["model,modality,riemannian"]
        for c, d in enumerate(report.riemannian, start=1):
            rows.append(f"harmonized,{c},{d}")
        for c, d in enumerate(base_report.riemannian, start=1):
            rows.append(f"baseline,{c},{d}")
        rows.append(f"harmonized,total,{report.total}")
        rows.append(f"baseline,total,{base_report.total}")
        dataio.atomic_write_text(path, "\n".join(rows) + "\n")
        artifacts.append(path)
    path = os.path.join(args.out_dir, "divergence.json")
    dataio.atomic_write_text(path, json.dumps(summary, indent=2))
    artifacts.append(path)
    return CommandResult(EXIT_OK, artifacts)


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "embed": cmd_embed,
    "retrieve-eval": cmd_retrieve_eval,
    "gradcheck": cmd_gradcheck,
    "sweep": cmd_sweep,
    "diagnose": cmd_diagnose,
}


def run(argv=None) -> CommandResult:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return CommandResult(EXIT_USAGE)
    try:
        return _COMMANDS[args.command](args)
    except (DataError, ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return CommandResult(EXIT_DATA)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return CommandResult(EXIT_NUMERICAL)
    except HmgpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return CommandResult(EXIT_DATA)


def main(argv=None) -> int:
    try:
        result = run(argv)
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
