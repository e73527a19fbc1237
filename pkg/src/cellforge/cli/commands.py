"""Implementations behind the command-line entry points.

Each command resolves its inputs (explicit flags beat discovery of the
latest upstream run), writes a timestamped run directory under --out with
a config snapshot and a log, and returns that directory so `repro-all`
can chain steps by path instead of by discovery.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
from contextlib import contextmanager
from pathlib import Path
from typing import Optional

import numpy as np

from cellforge.cli.config import (
    CliError,
    classifier_config,
    diffusion_config,
    finetune_config,
    latest_run,
    new_run_dir,
    require_artifact,
    resolve_config,
    reward_config,
    write_snapshot,
)
from cellforge.datagen import (
    build_dataset,
    default_world,
    load_manifest,
    render_for_class,
    save_png,
    write_dataset,
)
from cellforge.diffusion import extend_vocabulary, load_checkpoint, pretrain, sample, save_checkpoint
from cellforge.evalx import (
    MetricsReport,
    ablation_feedback_fraction,
    downstream_eval,
    group_by_class,
    manifold_metrics,
    oracle_judge,
    plausibility_table,
    write_metrics_json,
    write_plausibility_csv,
)
from cellforge.feedback_service import ServiceRuntime, create_app
from cellforge.finetune import (
    GuidedModel,
    concept_finetune,
    guided_finetune,
    reward_weighted_finetune,
    sample_guided,
    train_noisy_classifier,
    train_subtype_classifier,
)
from cellforge.records import FeedbackRecord, ImageRecord
from cellforge.reward import (
    build_feedback_dataset,
    embed_records,
    load_classifier,
    load_reward,
    reward_auc,
    save_classifier,
    save_reward,
    train_classifier,
    train_reward,
)

log = logging.getLogger("cellforge")

MODE_ALIASES = {
    "reward": "reward_weighted",
    "guided": "classifier_guided",
    "concept": "concept_combined",
    "reward_weighted": "reward_weighted",
    "classifier_guided": "classifier_guided",
    "concept_combined": "concept_combined",
}

ARM_ALIASES = {
    "pretrained": "no-feedback",
    "reward": "feedback",
    "guided": "auto",
}

COMPARISON_COLUMNS = (
    "arm", "f1", "accuracy", "precision", "recall",
    "macro_plausibility", "knn_precision", "knn_recall", "coverage",
)


@contextmanager
def _run_log(run_dir: Path):
    handler = logging.FileHandler(run_dir / "log.txt")
    handler.setFormatter(logging.Formatter("%(asctime)s %(message)s"))
    log.addHandler(handler)
    try:
        yield
    finally:
        log.removeHandler(handler)
        handler.close()



def _snapshot(run_dir: Path, command: str, cfg: dict, args, inputs=None) -> None:
    write_snapshot(run_dir, command, cfg, inputs=inputs, argv=getattr(args, "argv", None))

def _config_from(args: argparse.Namespace) -> dict:
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        from cellforge.cli.config import parse_value

        overrides[key.strip()] = parse_value(raw)
    if args.seed is not None:
        overrides["seed"] = args.seed
    return resolve_config(args.size, args.config, overrides)


def _world(cfg: dict):
    return default_world(int(cfg["data.image_size"]))


def _dataset_dir(args: argparse.Namespace) -> Path:
    explicit = Path(args.data) if getattr(args, "data", None) else None
    return require_artifact(args.out, "gen-data", "dataset", flag="--data", explicit=explicit)


def _load_split(dataset_dir: Path, split: str, world) -> list[ImageRecord]:
    manifest = dataset_dir / split / "manifest.csv"
    if not manifest.is_file():
        raise CliError(
            f"{manifest} is missing",
            hint="point --data at a `cellforge gen-data` output (it holds train/ and test/)",
        )
    return load_manifest(manifest, world.vocabulary)


def _service_runtime(args: argparse.Namespace, out: Path) -> ServiceRuntime:
    data_dir = Path(args.data_dir) if getattr(args, "data_dir", None) else out / "feedback-data"
    checkpoints = {}
    pre = latest_run(out, "pretrain")
    if pre is not None and (pre / "checkpoint.pt").exists():
        checkpoints["pretrained"] = pre / "checkpoint.pt"
    for mode in ("reward_weighted", "classifier_guided", "concept_combined"):
        run = latest_run(out, f"finetune-{mode}")
        if run is not None and (run / "checkpoint.pt").exists():
            checkpoints[f"finetuned-{mode}"] = run / "checkpoint.pt"
    for item in getattr(args, "checkpoints", None) or []:
        if "=" not in item:
            raise CliError(f"--checkpoint expects name=path, got {item!r}")
        name, path = item.split("=", 1)
        checkpoints[name.strip()] = Path(path)
    return ServiceRuntime(data_dir, checkpoints)


def _feedback_pool(
    args: argparse.Namespace, out: Path
) -> tuple[list[FeedbackRecord], list[ImageRecord], Path, Path]:
    """Feedback records plus the synthetic images they refer to."""
    export = require_artifact(
        out, "oracle-annotate", "export.ndjson", flag="--export",
        explicit=getattr(args, "export", None),
    )
    feedback = [
        FeedbackRecord.from_json(line)
        for line in export.read_text().splitlines()
        if line
    ]
    if not feedback:
        raise CliError(f"{export} holds no feedback records")
    data_dir = Path(args.data_dir) if getattr(args, "data_dir", None) else out / "feedback-data"
    runtime = ServiceRuntime(data_dir)
    try:
        pool = [runtime.images.get(r.image_id) for r in feedback]
    except KeyError as exc:
        raise CliError(
            f"{exc.args[0]} while loading the feedback pool from {data_dir}",
            hint="pass the --data-dir that `cellforge oracle-annotate` used",
        )
    finally:
        runtime.store.close()
    return feedback, pool, export, data_dir


def cmd_gen_data(args: argparse.Namespace) -> Path:
    cfg = _config_from(args)
    run_dir = new_run_dir(args.out, "gen-data")
    with _run_log(run_dir):
        _snapshot(run_dir, "gen-data", cfg, args)
        world = _world(cfg)
        train, test = build_dataset(
            world,
            run_dir / "dataset",
            per_class_train=int(cfg["data.per_class_train"]),
            per_class_test=int(cfg["data.per_class_test"]),
            seed=int(cfg["seed"]),
        )
        log.info(
            "gen-data: %d train / %d test images across %d classes -> %s",
            len(train), len(test), len(world.vocabulary.codes), run_dir / "dataset",
        )
    return run_dir


def cmd_pretrain(args: argparse.Namespace) -> Path:
    cfg = _config_from(args)
    dataset = _dataset_dir(args)
    run_dir = new_run_dir(args.out, "pretrain")
    with _run_log(run_dir):
        _snapshot(run_dir, "pretrain", cfg, args, inputs={"dataset": dataset})
        world = _world(cfg)
        train = _load_split(dataset, "train", world)
        dconfig = diffusion_config(cfg)
        log.info("pretrain: %d images, %d epochs, T=%d", len(train), dconfig.epochs, dconfig.timesteps)
        state = pretrain(train, world.vocabulary, dconfig)
        save_checkpoint(state, run_dir / "checkpoint.pt")
        log.info("pretrain: checkpoint -> %s", run_dir / "checkpoint.pt")
    return run_dir


def _sample_grid(records: list[ImageRecord], codes, per_row: int = 8) -> np.ndarray:
    rows = []
    for code in codes:
        row = [r.pixels for r in records if r.class_code == code][:per_row]
        if row:
            rows.append(np.concatenate(row, axis=1))
    width = max(r.shape[1] for r in rows)
    padded = [
        np.pad(r, ((0, 0), (0, width - r.shape[1]), (0, 0)), constant_values=1.0)
        for r in rows
    ]
    return np.concatenate(padded, axis=0)


def cmd_sample(args: argparse.Namespace) -> Path:
    cfg = _config_from(args)
    checkpoint = require_artifact(
        args.out, "pretrain", "checkpoint.pt", flag="--checkpoint", explicit=args.checkpoint
    )
    run_dir = new_run_dir(args.out, "sample")
    with _run_log(run_dir):
        _snapshot(run_dir, "sample", cfg, args, inputs={"checkpoint": checkpoint})
        state = load_checkpoint(checkpoint)
        n = args.per_class or int(cfg["eval.samples_per_class"])
        seed = int(cfg["seed"])
        records: list[ImageRecord] = []
        if args.guidance_classifier:
            classifier = load_classifier(args.guidance_classifier)
            model = GuidedModel(state, classifier, float(cfg["finetune.guidance_scale"]))
            for code in state.vocabulary.codes:
                records.extend(sample_guided(model, code, n, seed=seed, id_prefix=args.prefix))
        else:
            for code in state.vocabulary.codes:
                records.extend(sample(state, code, n, seed=seed, id_prefix=args.prefix))
        write_dataset(run_dir / "samples", records)
        save_png(run_dir / "grid.png", _sample_grid(records, state.vocabulary.codes))
        log.info("sample: %d images (%d per class) -> %s", len(records), n, run_dir / "samples")
    return run_dir


def cmd_serve(args: argparse.Namespace) -> Path:
    import uvicorn

    cfg = _config_from(args)
    run_dir = new_run_dir(args.out, "serve")
    with _run_log(run_dir):
        runtime = _service_runtime(args, Path(args.out))
        _snapshot(
            run_dir, "serve", cfg, args,
            inputs={"data_dir": runtime.data_dir,
                    **{f"checkpoint:{k}": v for k, v in runtime.checkpoints.items()}},
        )
        if not runtime.checkpoints:
            log.info("serve: no checkpoints registered; existing sessions only")
        log.info("serve: feedback data in %s", runtime.data_dir)
        log.info("serve: listening on http://%s:%d", args.host, args.port)
        uvicorn.run(create_app(runtime), host=args.host, port=args.port, log_level="warning")
    return run_dir


def cmd_oracle_annotate(args: argparse.Namespace) -> Path:
    cfg = _config_from(args)
    run_dir = new_run_dir(args.out, "oracle-annotate")
    with _run_log(run_dir):
        runtime = _service_runtime(args, Path(args.out))
        _snapshot(run_dir, "oracle-annotate", cfg, args, inputs={"data_dir": runtime.data_dir})
        world = _world(cfg)
        if args.session:
            session_id = args.session
        else:
            checkpoint_id = args.checkpoint_id
            if checkpoint_id not in runtime.checkpoints:
                raise CliError(
                    f"checkpoint {checkpoint_id!r} is not registered "
                    f"(known: {sorted(runtime.checkpoints) or 'none'})",
                    hint="run `cellforge pretrain` first, or pass --checkpoint name=path",
                )
            session = runtime.create_session(
                checkpoint_id,
                images_per_class=int(cfg["feedback.images_per_class"]),
                seed=int(cfg["seed"]),
            )
            session_id = session.session_id
            log.info("oracle-annotate: session %s with %d images",
                     session_id, len(session.image_ids))
        count = runtime.oracle_annotate(session_id, world)
        export = runtime.export(session_id)
        (run_dir / "export.ndjson").write_text(export)
        lines = [FeedbackRecord.from_json(l) for l in export.splitlines()]
        rate = sum(r.implausible for r in lines) / len(lines)
        log.info("oracle-annotate: labeled %d new images; %d records exported, "
                 "%.1f%% implausible", count, len(lines), 100 * rate)
        runtime.store.close()
    return run_dir


def cmd_train_reward(args: argparse.Namespace) -> Path:
    cfg = _config_from(args)
    dataset = _dataset_dir(args)
    feedback, pool, export, data_dir = _feedback_pool(args, Path(args.out))
    run_dir = new_run_dir(args.out, "train-reward")
    with _run_log(run_dir):
        _snapshot(run_dir, "train-reward", cfg, args,
                  inputs={"dataset": dataset, "export": export, "data_dir": data_dir})
        world = _world(cfg)
        real_train = _load_split(dataset, "train", world)
        log.info("train-reward: backbone on %d real images", len(real_train))
        backbone = train_classifier(real_train, world.vocabulary, classifier_config(cfg))
        lambda_real = float(cfg["reward.lambda_real"])
        examples = build_feedback_dataset(
            feedback, {r.id: r for r in pool}, real_train, world.vocabulary,
            seed=int(cfg["seed"]), lambda_real=lambda_real,
        )
        model = train_reward(examples, lambda_real, reward_config(cfg),
                             backbone=backbone, vocabulary=world.vocabulary)
        save_reward(model, run_dir / "reward.pt")
        save_classifier(backbone, run_dir / "backbone.pt")
        log.info("train-reward: %d examples (%d feedback + %d real), "
                 "in-sample AUC %.3f", len(examples), len(feedback), len(real_train),
                 reward_auc(model, examples))
    return run_dir


def _subtype_training_pack(world, cfg: dict):
    """Render labeled child-class images standing in for new annotations."""
    parent = str(cfg["subtype.parent"])
    children = world.vocabulary.subtype_map.get(parent)
    if not children:
        raise CliError(f"class {parent!r} declares no subtypes")
    per_child = int(cfg["subtype.per_child"])
    seed0 = int(cfg["seed"]) * 10_000 + 5_000
    images, annotations, subtype_set = [], [], []
    for offset, child in enumerate(children):
        for i in range(per_child):
            seed = seed0 + offset * per_child + i
            pixels, _ = render_for_class(world, child, plausible=True, seed=seed)
            rid = f"subtype-{child.lower()}-{seed}"
            images.append(ImageRecord(id=rid, pixels=pixels, class_code=parent, source="real"))
            annotations.append(FeedbackRecord(
                image_id=rid, declared_class=parent, implausible=0,
                annotator="oracle", timestamp=0.0, subtype=child,
            ))
            subtype_set.append(ImageRecord(id=rid, pixels=pixels, class_code=child, source="real"))
    return parent, annotations, images, subtype_set


def cmd_finetune(args: argparse.Namespace) -> Path:
    cfg = _config_from(args)
    mode = MODE_ALIASES.get(args.mode)
    if mode is None:
        raise CliError(f"unknown finetune mode {args.mode!r}; choose reward, guided, or concept")
    checkpoint = require_artifact(
        args.out, "pretrain", "checkpoint.pt", flag="--checkpoint", explicit=args.checkpoint
    )
    dataset = _dataset_dir(args)
    run_dir = new_run_dir(args.out, f"finetune-{mode}")
    with _run_log(run_dir):
        world = _world(cfg)
        state = load_checkpoint(checkpoint)
        real_train = _load_split(dataset, "train", world)
        ft_config = finetune_config(cfg, mode)
        inputs = {"checkpoint": checkpoint, "dataset": dataset}

        if mode == "classifier_guided":
            _snapshot(run_dir, f"finetune-{mode}", cfg, args, inputs=inputs)
            log.info("finetune[guided]: training noise-aware classifier")
            classifier = train_noisy_classifier(
                real_train, world.vocabulary, state.schedule,
                classifier_config(cfg, time_conditioned=True,
                                  max_timestep=int(cfg["diffusion.timesteps"])),
            )
            guided_finetune(state, classifier, ft_config, run_dir=run_dir)
            log.info("finetune[guided]: scale %.2f -> %s", ft_config.guidance_scale, run_dir)
            return run_dir

        reward_path = require_artifact(
            args.out, "train-reward", "reward.pt", flag="--reward", explicit=args.reward
        )
        reward_model = load_reward(reward_path)
        feedback, pool, export, data_dir = _feedback_pool(args, Path(args.out))
        inputs.update({"reward": reward_path, "export": export, "data_dir": data_dir})
        _snapshot(run_dir, f"finetune-{mode}", cfg, args, inputs=inputs)

        if mode == "reward_weighted":
            log.info("finetune[reward]: %d synthetic + %d real images, %d epochs",
                     len(pool), len(real_train), ft_config.epochs)
            reward_weighted_finetune(state, reward_model, pool, real_train,
                                     ft_config, run_dir=run_dir)
        else:
            parent, annotations, images, subtype_set = _subtype_training_pack(world, cfg)
            log.info("finetune[concept]: %d subtype images for %s", len(subtype_set), parent)
            subtype_model = train_subtype_classifier(
                annotations, images, classifier_config(cfg), parent=parent
            )
            extended = extend_vocabulary(state, parent)
            concept_finetune(extended, reward_model, subtype_model, pool,
                             subtype_set, real_train, ft_config, run_dir=run_dir)
        log.info("finetune[%s]: run dir %s", args.mode, run_dir)
    return run_dir


def _parse_arm(spec: str) -> tuple[str, Optional[Path]]:
    name, _, path = spec.partition("=")
    name = ARM_ALIASES.get(name.strip(), name.strip())
    return name, Path(path) if path else None


def _arm_samples(
    name: str, path: Optional[Path], cfg: dict, out: Path, real_train: list[ImageRecord]
) -> list[ImageRecord]:
    n = int(cfg["eval.samples_per_class"])
    seed = int(cfg["eval.sample_seed"])
    if name == "real":
        return real_train
    if name == "auto":
        run = path if path is not None else latest_run(out, "finetune-classifier_guided")
        if run is None or not (run / "checkpoint.pt").exists():
            raise CliError(
                "no classifier-guided run found for arm 'auto'",
                hint="run `cellforge finetune --mode guided` first",
            )
        state = load_checkpoint(run / "checkpoint.pt")
        classifier = load_classifier(run / "guidance_classifier.pt")
        model = GuidedModel(state, classifier, float(cfg["finetune.guidance_scale"]))
        return [
            record
            for code in state.vocabulary.codes
            for record in sample_guided(model, code, n, seed=seed, id_prefix=f"eval-{name}")
        ]
    if path is None:
        lookup = {
            "no-feedback": ("pretrain", "pretrain"),
            "feedback": ("finetune-reward_weighted", "finetune --mode reward"),
            "concept": ("finetune-concept_combined", "finetune --mode concept"),
        }.get(name)
        if lookup is None:
            raise CliError(
                f"unknown arm {name!r}",
                hint="use real, no-feedback, auto, feedback, concept, or name=checkpoint.pt",
            )
        command, hint_cmd = lookup
        run = latest_run(out, command)
        if run is None or not (run / "checkpoint.pt").exists():
            raise CliError(
                f"no checkpoint.pt from a `{command}` run found under {out}",
                hint=f"run `cellforge {hint_cmd}` first, or pass --arm {name}=PATH",
            )
        path = run / "checkpoint.pt"
    elif path.is_dir():
        path = path / "checkpoint.pt"
    if not path.exists():
        raise CliError(f"checkpoint {path} does not exist for arm {name!r}")
    state = load_checkpoint(path)
    codes = [c for c in state.vocabulary.codes if c in {r.class_code for r in real_train}]
    return [
        record
        for code in codes
        for record in sample(state, code, n, seed=seed, id_prefix=f"eval-{name}")
    ]


def _embedding_backbone(cfg: dict, out: Path, real_train, world):
    run = latest_run(out, "train-reward")
    if run is not None and (run / "backbone.pt").exists():
        log.info("embedding backbone from %s", run / "backbone.pt")
        return load_classifier(run / "backbone.pt")
    log.info("training a fresh embedding backbone")
    return train_classifier(real_train, world.vocabulary, classifier_config(cfg))


def cmd_evaluate(args: argparse.Namespace) -> Path:
    cfg = _config_from(args)
    dataset = _dataset_dir(args)
    arm_specs = [_parse_arm(a) for a in (args.arm or ["no-feedback", "feedback"])]
    run_dir = new_run_dir(args.out, "evaluate")
    with _run_log(run_dir):
        _snapshot(run_dir, "evaluate", cfg, args, inputs={"dataset": dataset})
        world = _world(cfg)
        real_train = _load_split(dataset, "train", world)
        real_test = _load_split(dataset, "test", world)
        backbone = _embedding_backbone(cfg, Path(args.out), real_train, world)
        real_embed = embed_records(backbone, real_test)
        judge = oracle_judge(world)

        reports: dict[str, MetricsReport] = {}
        tables: dict[str, object] = {}
        for name, path in arm_specs:
            samples = _arm_samples(name, path, cfg, Path(args.out), real_train)
            table = plausibility_table(group_by_class(samples), judge)
            knn = manifold_metrics(real_embed, embed_records(backbone, samples),
                                   k=int(cfg["eval.k"]))
            downstream = downstream_eval(samples, real_test, classifier_config(cfg),
                                         vocabulary=world.vocabulary)
            report = MetricsReport(
                precision=knn["precision"],
                recall=knn["recall"],
                coverage=knn["coverage"],
                k=knn["k"],
                per_class_plausibility=dict(table.rates),
                downstream=downstream,
                metadata={"arm": name, "samples": len(samples), "seed": int(cfg["seed"]),
                          "sample_seed": int(cfg["eval.sample_seed"])},
            )
            reports[name] = report
            tables[name] = table
            write_metrics_json(report, run_dir / f"metrics-{name}.json")
            write_plausibility_csv(table, run_dir / f"plausibility-{name}.csv")
            log.info("evaluate[%s]: f1 %.3f, macro plausibility %.3f, coverage %.3f",
                     name, downstream["f1"], report.macro_plausibility, knn["coverage"])

        _write_combined(run_dir, reports, tables)
        _print_comparison(reports)
    return run_dir


def _write_combined(run_dir: Path, reports: dict[str, MetricsReport], tables: dict) -> None:
    combined = {name: json.loads(report.to_json()) for name, report in reports.items()}
    (run_dir / "metrics.json").write_text(json.dumps(combined, indent=2, sort_keys=True) + "\n")
    with open(run_dir / "plausibility.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["arm", "class", "rate", "n"])
        for name, table in tables.items():
            for code in sorted(table.rates):
                writer.writerow([name, code, table.rates[code], table.counts[code]])
    with open(run_dir / "comparison.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(COMPARISON_COLUMNS)
        for name, report in reports.items():
            writer.writerow(_comparison_row(name, report))


def _comparison_row(name: str, report: MetricsReport) -> list:
    return [
        name,
        report.downstream["f1"], report.downstream["accuracy"],
        report.downstream["precision"], report.downstream["recall"],
        report.macro_plausibility, report.precision, report.recall, report.coverage,
    ]


def _print_comparison(reports: dict[str, MetricsReport]) -> None:
    header = "{:<14}{:>8}{:>10}{:>12}{:>10}{:>10}{:>10}".format(
        "arm", "f1", "accuracy", "plausible", "knn-prec", "knn-rec", "coverage"
    )
    print(header)
    print("-" * len(header))
    for name, r in reports.items():
        print("{:<14}{:>8.3f}{:>10.3f}{:>12.3f}{:>10.3f}{:>10.3f}{:>10.3f}".format(
            name, r.downstream["f1"], r.downstream["accuracy"],
            r.macro_plausibility, r.precision, r.recall, r.coverage,
        ))
    names = list(reports)
    if len(names) > 1:
        base = reports[names[0]]
        for name in names[1:]:
            r = reports[name]
            print(
                f"{name} vs {names[0]}: "
                f"f1 {r.downstream['f1'] - base.downstream['f1']:+.3f}, "
                f"plausibility {r.macro_plausibility - base.macro_plausibility:+.3f}, "
                f"coverage {r.coverage - base.coverage:+.3f}"
            )


def cmd_ablate(args: argparse.Namespace) -> Path:
    cfg = _config_from(args)
    checkpoint = require_artifact(
        args.out, "pretrain", "checkpoint.pt", flag="--checkpoint", explicit=args.checkpoint
    )
    dataset = _dataset_dir(args)
    feedback, pool, export, data_dir = _feedback_pool(args, Path(args.out))
    run_dir = new_run_dir(args.out, "ablate")
    with _run_log(run_dir):
        _snapshot(run_dir, "ablate", cfg, args,
                  inputs={"checkpoint": checkpoint, "dataset": dataset,
                          "export": export, "data_dir": data_dir})
        world = _world(cfg)
        real_train = _load_split(dataset, "train", world)
        real_test = _load_split(dataset, "test", world)
        backbone = _embedding_backbone(cfg, Path(args.out), real_train, world)
        fractions = tuple(
            float(f) for f in (args.fractions or list(cfg["ablate.fractions"]))
        )
        log.info("ablate: fractions %s over %d feedback records", fractions, len(feedback))
        rows = ablation_feedback_fraction(
            load_checkpoint(checkpoint), feedback, pool, real_train, real_test,
            backbone,
            fractions=fractions,
            lambda_real=float(cfg["reward.lambda_real"]),
            reward_config=reward_config(cfg),
            finetune_config=finetune_config(cfg, "reward_weighted"),
            downstream_config=classifier_config(cfg),
            samples_per_class=int(cfg["ablate.samples_per_class"]),
            sample_seed=int(cfg["eval.sample_seed"]),
            subsample_seed=int(cfg["seed"]),
            run_dir=run_dir,
        )
        for row in rows:
            log.info("ablate: fraction %.2f -> f1 %.3f", row["fraction"], row["f1"])
    return run_dir


def cmd_repro_all(args: argparse.Namespace) -> Path:
    cfg = _config_from(args)
    run_dir = new_run_dir(args.out, "repro-all")
    base = dict(out=args.out, config=args.config, size=args.size, seed=args.seed,
                set=args.set, argv=getattr(args, "argv", None))

    def step(**kw) -> argparse.Namespace:
        merged = dict(base)
        merged.update(kw)
        return argparse.Namespace(**merged)

    with _run_log(run_dir):
        _snapshot(run_dir, "repro-all", cfg, args)
        feedback_data = run_dir / "feedback-data"

        log.info("repro-all 1/7: gen-data")
        data_run = cmd_gen_data(step())
        dataset = data_run / "dataset"

        log.info("repro-all 2/7: pretrain")
        pretrain_run = cmd_pretrain(step(data=dataset))
        checkpoint = pretrain_run / "checkpoint.pt"

        log.info("repro-all 3/7: oracle-annotate")
        annotate_run = cmd_oracle_annotate(step(
            data_dir=feedback_data, session=None, checkpoint_id="pretrained",
            checkpoints=[f"pretrained={checkpoint}"],
        ))
        export = annotate_run / "export.ndjson"

        log.info("repro-all 4/7: train-reward")
        reward_run = cmd_train_reward(step(
            data=dataset, data_dir=feedback_data, export=export,
        ))

        log.info("repro-all 5/7: finetune (reward-weighted and classifier-guided)")
        feedback_run = cmd_finetune(step(
            mode="reward", checkpoint=checkpoint, data=dataset,
            reward=reward_run / "reward.pt", export=export, data_dir=feedback_data,
        ))
        guided_run = cmd_finetune(step(
            mode="guided", checkpoint=checkpoint, data=dataset,
            reward=None, export=None, data_dir=None,
        ))

        log.info("repro-all 6/7: evaluate")
        evaluate_run = cmd_evaluate(step(
            data=dataset,
            arm=["real", f"no-feedback={checkpoint}", f"auto={guided_run}",
                 f"feedback={feedback_run / 'checkpoint.pt'}"],
        ))

        log.info("repro-all 7/7: ablate")
        ablate_run = cmd_ablate(step(
            checkpoint=checkpoint, data=dataset, export=export,
            data_dir=feedback_data, fractions=None,
        ))

        for source, names in (
            (evaluate_run, ("metrics.json", "plausibility.csv", "comparison.csv")),
            (ablate_run, ("ablation.csv", "ablation.png")),
        ):
            for name in names:
                if (source / name).exists():
                    (run_dir / name).write_bytes((source / name).read_bytes())
        steps = {
            "gen-data": data_run, "pretrain": pretrain_run,
            "oracle-annotate": annotate_run, "train-reward": reward_run,
            "finetune-reward_weighted": feedback_run,
            "finetune-classifier_guided": guided_run,
            "evaluate": evaluate_run, "ablate": ablate_run,
        }
        (run_dir / "steps.json").write_text(
            json.dumps({k: str(v) for k, v in steps.items()}, indent=2) + "\n"
        )
        log.info("repro-all: aggregate artifacts in %s", run_dir)
    return run_dir
