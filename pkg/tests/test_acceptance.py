"""Acceptance gate: one test per primary claim, one PASS/FAIL line each.

Fast claims (metric equivalence, hand cases, gradient identities, oracle
round-trip, service durability) run from scratch every time. The pipeline
claims (plausibility lift, fidelity, downstream ordering, ablation trend,
subtype conditioning) share one desk-scale build that takes tens of minutes
on a single CPU core; its artifacts and measured numbers cache under
``runs/desk-accept`` (override with CELLFORGE_ACCEPT_DIR, force a rebuild
with CELLFORGE_ACCEPT_REBUILD=1) keyed by a hash of the build profile, so
only the first run pays. Run with ``-s`` to see the verdict lines.
"""

import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import pytest
import torch

from cellforge.datagen import (
    build_dataset,
    default_world,
    load_manifest,
    oracle_plausibility,
    oracle_subtype,
    render_for_class,
    write_dataset,
)
from cellforge.diffusion import (
    CondUNet,
    DiffusionConfig,
    extend_vocabulary,
    load_checkpoint,
    make_schedule,
    per_example_losses,
    pretrain,
    sample,
    save_checkpoint,
)
from cellforge.evalx import (
    ablation_feedback_fraction,
    downstream_eval,
    group_by_class,
    manifold_metrics,
    oracle_judge,
    plausibility_table,
)
from cellforge.feedback_service import ServiceRuntime, create_app
from cellforge.finetune import (
    FinetuneConfig,
    concept_finetune,
    reward_weighted_finetune,
    sample_guided,
    train_noisy_classifier,
    train_subtype_classifier,
    guided_finetune,
)
from cellforge.records import CRITERIA_NAMES, FeedbackRecord, ImageRecord
from cellforge.reward import (
    ClassifierConfig,
    RewardConfig,
    build_feedback_dataset,
    classify_records,
    embed_records,
    load_classifier,
    load_reward,
    reward_loss_terms,
    save_classifier,
    save_reward,
    train_classifier,
    train_reward,
)

from test_manifold import brute_prdc


def _verdict(criterion: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
    print(line)
    assert ok, line


# --------------------------------------------------------------------------
# Fast claims


class TestMetricEquivalence:
    def test_manifold_metrics_match_brute_force_on_200_instances(self):
        rng = np.random.default_rng(20260822)
        t0 = time.monotonic()
        mismatches = 0
        for _ in range(200):
            k = int(rng.choice([1, 3, 5]))
            n = int(rng.integers(k + 1, 33))
            m = int(rng.integers(k + 1, 33))
            d = int(rng.integers(1, 9))
            real = rng.normal(size=(n, d))
            synth = rng.normal(size=(m, d)) * float(rng.uniform(0.5, 2.0))
            p, r, c = brute_prdc(real, synth, k)
            got = manifold_metrics(real, synth, k=k)
            if (got["precision"], got["recall"], got["coverage"]) != (p, r, c):
                mismatches += 1
        elapsed = time.monotonic() - t0
        _verdict(
            1,
            mismatches == 0 and elapsed < 60.0,
            f"200 random instances, {mismatches} mismatches vs brute force, "
            f"{elapsed:.1f}s (< 60s)",
        )

    def test_manifold_metrics_hand_case(self):
        real = np.array([[0.0, 0.0], [1.0, 0.0]])
        synth = np.array([[0.1, 0.0], [5.0, 5.0]])
        got = manifold_metrics(real, synth, k=1)
        ok = (got["precision"], got["recall"], got["coverage"]) == (0.5, 1.0, 1.0)
        _verdict(
            2,
            ok,
            f"hand case precision={got['precision']} recall={got['recall']} "
            f"coverage={got['coverage']} (want 0.5, 1.0, 1.0 exactly)",
        )


class TestRewardObjective:
    def test_reward_loss_hand_case(self):
        pred = torch.tensor([0.8, 0.1, 0.5], dtype=torch.float64)
        target = torch.tensor([1.0, 0.0, 1.0], dtype=torch.float64)
        is_real = torch.tensor([0.0, 0.0, 1.0], dtype=torch.float64)
        total, _, _ = reward_loss_terms(pred, target, is_real, 2.0)
        _verdict(
            3,
            float(total) == pytest.approx(0.55, abs=1e-12),
            f"loss hand case total={float(total):.12f} (want 0.55)",
        )

    def test_reward_weighted_gradient_identities(self):
        t0 = time.monotonic()
        torch.manual_seed(0)
        net = CondUNet(num_classes=2, base_channels=6, channel_mults=(1,), emb_dim=12).double()
        n_params = sum(p.numel() for p in net.parameters())
        schedule = make_schedule("cosine", 20)
        gen = torch.Generator().manual_seed(1)
        x0 = torch.rand((4, 3, 8, 8), generator=gen, dtype=torch.float64) * 2.0 - 1.0
        y = torch.tensor([0, 1, 0, 1])
        t = torch.tensor([3, 11, 0, 19])
        noise = torch.randn(x0.shape, generator=gen, dtype=torch.float64)

        worst_identity = 0.0
        for i, r in enumerate((0.13, 0.5, 0.91, 1.0)):
            weighted = r * per_example_losses(
                net, schedule, x0[i : i + 1], y[i : i + 1], t[i : i + 1], noise[i : i + 1]
            )[0]
            g_w = torch.autograd.grad(weighted, list(net.parameters()))
            plain = per_example_losses(
                net, schedule, x0[i : i + 1], y[i : i + 1], t[i : i + 1], noise[i : i + 1]
            )[0]
            g_p = torch.autograd.grad(plain, list(net.parameters()))
            num = torch.sqrt(sum(((a - r * b) ** 2).sum() for a, b in zip(g_w, g_p)))
            den = torch.sqrt(sum(((r * b) ** 2).sum() for b in g_p))
            worst_identity = max(worst_identity, float(num / den))

        xr = torch.rand((4, 3, 8, 8), generator=gen, dtype=torch.float64) * 2.0 - 1.0
        yr = torch.tensor([1, 0, 1, 0])
        tr = torch.tensor([7, 2, 15, 9])
        nr = torch.randn(xr.shape, generator=gen, dtype=torch.float64)
        rewards = torch.tensor([0.2, 0.9, 0.4, 0.7], dtype=torch.float64)

        def objective():
            syn = (rewards * per_example_losses(net, schedule, x0, y, t, noise)).mean()
            return syn + 0.8 * per_example_losses(net, schedule, xr, yr, tr, nr).mean()

        params = list(net.parameters())
        grads = torch.autograd.grad(objective(), params)
        direction = [torch.randn(p.shape, generator=gen, dtype=torch.float64) for p in params]
        norm = torch.sqrt(sum((d ** 2).sum() for d in direction))
        direction = [d / norm for d in direction]
        analytic = float(sum((g * d).sum() for g, d in zip(grads, direction)))
        eps = 1e-4
        with torch.no_grad():
            for p, d in zip(params, direction):
                p += eps * d
            f_plus = float(objective())
            for p, d in zip(params, direction):
                p -= 2 * eps * d
            f_minus = float(objective())
            for p, d in zip(params, direction):
                p += eps * d
        numeric = (f_plus - f_minus) / (2 * eps)
        fd_err = abs(numeric - analytic) / max(abs(analytic), 1e-12)
        elapsed = time.monotonic() - t0
        _verdict(
            4,
            n_params <= 10_000 and worst_identity <= 1e-5 and fd_err <= 1e-3
            and elapsed < 300.0,
            f"{n_params} params, weighting identity rel err {worst_identity:.2e} "
            f"(<= 1e-5), finite-difference rel err {fd_err:.2e} (<= 1e-3), "
            f"{elapsed:.1f}s (< 5 min)",
        )


class TestOracleRoundTrip:
    def test_generator_intent_matches_oracle_verdict_on_1000_images(self):
        world = default_world(32)
        t0 = time.monotonic()
        total = 0
        disagreements = []
        per_class = 32  # 16 classes x 32 seeds x 2 flags = 1024 images
        for code in world.vocabulary.codes:
            for flag in (True, False):
                for seed in range(per_class):
                    pixels, info = render_for_class(
                        world, code, plausible=flag, seed=9_000_000 + seed
                    )
                    verdict = oracle_plausibility(pixels, code, world)
                    total += 1
                    if verdict.implausible != (0 if info.plausible else 1):
                        disagreements.append((code, flag, seed))
        elapsed = time.monotonic() - t0
        _verdict(
            5,
            total >= 1000 and not disagreements and elapsed < 300.0,
            f"{total} images across all {len(world.vocabulary.codes)} classes and "
            f"both flags, {len(disagreements)} disagreements, {elapsed:.1f}s (< 5 min)",
        )


class TestServiceDurability:
    def test_1000_submits_collapse_and_survive_restart(self, tmp_path):
        world = default_world(32)
        renders = [
            ImageRecord(
                id=f"dur-{code.lower()}-{i}",
                pixels=render_for_class(world, code, plausible=True, seed=100 + i)[0],
                class_code=code,
                source="synthetic",
            )
            for code in world.vocabulary.codes
            for i in range(8)
        ][:125]
        runtime = ServiceRuntime(tmp_path / "svc")
        session = runtime.register_session(renders, checkpoint_id="durability")
        from fastapi.testclient import TestClient

        annotators = [f"ann-{chr(97 + i)}" for i in range(4)]
        acked = [0]

        with TestClient(create_app(runtime)) as client:
            def drive(annotator: str) -> int:
                ok = 0
                # two passes per image: first verdict, then a revision
                for round_no, flag in ((1, 0), (2, 1)):
                    for record in renders:
                        resp = client.post(
                            f"/api/sessions/{session.session_id}/feedback",
                            json={
                                "image_id": record.id,
                                "declared_class": record.class_code,
                                "implausible": flag,
                                "annotator": annotator,
                                "timestamp": float(round_no),
                            },
                        )
                        if resp.status_code == 200:
                            ok += 1
                return ok

            with ThreadPoolExecutor(max_workers=4) as pool:
                acked[0] = sum(pool.map(drive, annotators))
            export_live = client.get("/api/export").text

        lines = [FeedbackRecord.from_json(l) for l in export_live.splitlines()]
        # abandon the runtime without closing: a kill keeps the acked bytes
        reopened = ServiceRuntime(tmp_path / "svc")
        export_reopened = reopened.export()
        rows_on_disk = len(reopened.store.rows)
        reopened.store.close()

        ok = (
            acked[0] == 1000
            and len(lines) == 500
            and all(r.implausible == 1 and r.timestamp == 2.0 for r in lines)
            and export_reopened == export_live
            and rows_on_disk == 1000
        )
        _verdict(
            11,
            ok,
            f"{acked[0]} acked submits from 4 annotators over 125 images, export "
            f"{len(lines)} records (duplicates collapsed), restart export "
            f"{'byte-identical' if export_reopened == export_live else 'DIFFERS'}, "
            f"{rows_on_disk} rows on disk",
        )


# --------------------------------------------------------------------------
# Desk-scale pipeline build shared by the directional claims

PROFILE = {
    "image_size": 32,
    "per_class_train": 32,
    "per_class_test": 16,
    "diffusion": dict(base_channels=16, channel_mults=(1, 2, 4), emb_dim=96,
                      timesteps=100, schedule="cosine", epochs=200,
                      batch_size=64, learning_rate=8e-4, ema_decay=0.999, seed=0),
    "pool_per_class": 24,
    "pool_seed": 77,
    "classifier": dict(width=32, feature_dim=64, epochs=25, batch_size=64,
                       learning_rate=2e-3, seed=0),
    "reward": dict(hidden_dim=128, epochs=300, batch_size=64, learning_rate=3e-3,
                   validation_fraction=0.1, patience=60, seed=0),
    "lambda_real": 1.0,
    "finetune": dict(epochs=8, synthetic_batch_size=64, real_batch_size=64,
                     beta_real=1.0),
    "guidance_scale": 1.0,
    "eval_per_class": 25,
    "seeds": (1, 2, 3),
    "k": 5,
    "ablation_fractions": (0.0, 0.1, 0.5, 1.0),
    "ablation_per_class": 16,
    "subtype_parent": "M5",
    "subtype_train_per_child": 32,
    "subtype_scorer_per_child": 48,
    "subtype_eval_per_child": 64,
}


def _profile_tag() -> str:
    blob = json.dumps(PROFILE, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _subtype_pack(world, per_child: int, seed0: int):
    """Oracle-labeled child-class renders standing in for annotations."""
    parent = PROFILE["subtype_parent"]
    children = world.vocabulary.subtype_map[parent]
    annotations, images, subtype_set = [], [], []
    for offset, child in enumerate(children):
        for i in range(per_child):
            seed = seed0 + offset * per_child + i
            pixels, _ = render_for_class(world, child, plausible=True, seed=seed)
            rid = f"sub-{child.lower()}-{seed}"
            images.append(ImageRecord(id=rid, pixels=pixels, class_code=parent, source="real"))
            annotations.append(FeedbackRecord(
                image_id=rid, declared_class=parent, implausible=0,
                annotator="oracle", timestamp=0.0, subtype=child,
            ))
            subtype_set.append(ImageRecord(id=rid, pixels=pixels, class_code=child, source="real"))
    return annotations, images, subtype_set


def _build_summary(cache: Path) -> dict:
    """Run the pipeline once at desk scale and measure every claim."""
    t_build = time.monotonic()
    world = default_world(PROFILE["image_size"])
    judge = oracle_judge(world)
    say = lambda msg: print(f"[desk-accept] {msg}", flush=True)

    dataset_dir = cache / "dataset"
    if not (dataset_dir / "train" / "manifest.csv").exists():
        say("rendering dataset")
        build_dataset(world, dataset_dir,
                      per_class_train=PROFILE["per_class_train"],
                      per_class_test=PROFILE["per_class_test"], seed=0)
    real_train = load_manifest(dataset_dir / "train" / "manifest.csv", world.vocabulary)
    real_test = load_manifest(dataset_dir / "test" / "manifest.csv", world.vocabulary)

    pre_path = cache / "pretrain.pt"
    if not pre_path.exists():
        say(f"pretraining ({PROFILE['diffusion']['epochs']} epochs)")
        state = pretrain(real_train, world.vocabulary,
                         DiffusionConfig(image_size=PROFILE["image_size"],
                                         **PROFILE["diffusion"]))
        save_checkpoint(state, pre_path)
    pretrained = load_checkpoint(pre_path)

    pool_dir = cache / "pool"
    feedback_path = cache / "feedback.ndjson"
    if not feedback_path.exists():
        say("sampling feedback pool and labeling with the oracle")
        pool = [
            r for code in world.vocabulary.codes
            for r in sample(pretrained, code, PROFILE["pool_per_class"],
                            seed=PROFILE["pool_seed"], id_prefix="pool")
        ]
        write_dataset(pool_dir, pool)
        records = []
        for r in pool:
            v = oracle_plausibility(r.pixels, r.class_code, world)
            records.append(FeedbackRecord(
                image_id=r.id, declared_class=r.class_code,
                implausible=v.implausible, annotator="oracle", timestamp=0.0,
                criteria_violations=v.criteria_violations,
                subtype=oracle_subtype(r.pixels, r.class_code, world)
                if not v.implausible else None,
            ))
        feedback_path.write_text("".join(rec.to_json() + "\n" for rec in records))
    pool = load_manifest(pool_dir / "manifest.csv", world.vocabulary)
    feedback = [FeedbackRecord.from_json(l)
                for l in feedback_path.read_text().splitlines() if l]

    backbone_path = cache / "backbone.pt"
    reward_path = cache / "reward.pt"
    if not reward_path.exists():
        say("training embedding backbone and reward model")
        backbone = train_classifier(real_train, world.vocabulary,
                                    ClassifierConfig(**PROFILE["classifier"]))
        save_classifier(backbone, backbone_path)
        examples = build_feedback_dataset(feedback, {r.id: r for r in pool},
                                          real_train, world.vocabulary, seed=0,
                                          lambda_real=PROFILE["lambda_real"])
        reward = train_reward(examples, PROFILE["lambda_real"],
                              RewardConfig(**PROFILE["reward"]),
                              backbone=backbone, vocabulary=world.vocabulary)
        save_reward(reward, reward_path)
    backbone = load_classifier(backbone_path)
    reward = load_reward(reward_path)

    noisy_path = cache / "noisy.pt"
    if not noisy_path.exists():
        say("training guidance classifier")
        noisy = train_noisy_classifier(
            real_train, world.vocabulary, pretrained.schedule,
            ClassifierConfig(**{**PROFILE["classifier"],
                                "time_conditioned": True,
                                "max_timestep": PROFILE["diffusion"]["timesteps"]}),
        )
        save_classifier(noisy, noisy_path)
    noisy = load_classifier(noisy_path)

    for s in PROFILE["seeds"]:
        ft_path = cache / f"feedback-s{s}.pt"
        if not ft_path.exists():
            say(f"reward-weighted finetune, seed {s}")
            cfg = FinetuneConfig(mode="reward_weighted", seed=s, **PROFILE["finetune"])
            tuned = reward_weighted_finetune(pretrained, reward, pool, real_train, cfg)
            save_checkpoint(tuned, ft_path)

    say("sampling and scoring arms across seeds")
    real_embed = embed_records(backbone, real_test)
    n_eval = PROFILE["eval_per_class"]
    plaus: dict = {"no-feedback": {}, "feedback": {}}
    prdc: dict = {"no-feedback": {}, "feedback": {}, "auto": {}}
    f1: dict = {"real": {}, "no-feedback": {}, "feedback": {}, "auto": {}}
    guided = guided_finetune(pretrained, noisy,
                             FinetuneConfig(mode="classifier_guided",
                                            guidance_scale=PROFILE["guidance_scale"]))
    for s in PROFILE["seeds"]:
        tuned = load_checkpoint(cache / f"feedback-s{s}.pt")
        arms = {
            "no-feedback": [r for c in world.vocabulary.codes
                            for r in sample(pretrained, c, n_eval, seed=1000 + s)],
            "feedback": [r for c in world.vocabulary.codes
                         for r in sample(tuned, c, n_eval, seed=1000 + s)],
            "auto": [r for c in world.vocabulary.codes
                     for r in sample_guided(guided, c, n_eval, seed=1000 + s)],
        }
        for name, samples in arms.items():
            if name in plaus:
                table = plausibility_table(group_by_class(samples), judge)
                plaus[name][s] = float(np.mean(list(table.rates.values())))
            metrics = manifold_metrics(real_embed, embed_records(backbone, samples),
                                       k=PROFILE["k"])
            prdc[name][s] = {m: metrics[m] for m in ("precision", "recall", "coverage")}
            f1[name][s] = downstream_eval(
                samples, real_test,
                ClassifierConfig(**{**PROFILE["classifier"], "seed": s}),
                vocabulary=world.vocabulary)["f1"]
        f1["real"][s] = downstream_eval(
            real_train, real_test,
            ClassifierConfig(**{**PROFILE["classifier"], "seed": s}),
            vocabulary=world.vocabulary)["f1"]
        say(f"seed {s}: plaus pre {plaus['no-feedback'][s]:.3f} -> "
            f"tuned {plaus['feedback'][s]:.3f}; f1 real {f1['real'][s]:.3f} "
            f"feedback {f1['feedback'][s]:.3f} pre {f1['no-feedback'][s]:.3f} "
            f"auto {f1['auto'][s]:.3f}")

    say("feedback-fraction ablation")
    ablation = ablation_feedback_fraction(
        pretrained, feedback, pool, real_train, real_test, backbone,
        fractions=PROFILE["ablation_fractions"],
        lambda_real=PROFILE["lambda_real"],
        reward_config=RewardConfig(**PROFILE["reward"]),
        finetune_config=FinetuneConfig(mode="reward_weighted", seed=0,
                                       **PROFILE["finetune"]),
        downstream_config=ClassifierConfig(**PROFILE["classifier"]),
        samples_per_class=PROFILE["ablation_per_class"],
        sample_seed=2000, subsample_seed=0,
    )

    say("concept extension")
    annotations, images, subtype_set = _subtype_pack(
        world, PROFILE["subtype_train_per_child"], seed0=5_000_000)
    trainer_clf = train_subtype_classifier(
        annotations, images, ClassifierConfig(**PROFILE["classifier"]),
        parent=PROFILE["subtype_parent"])
    extended = extend_vocabulary(pretrained, PROFILE["subtype_parent"])
    concept = concept_finetune(
        extended, reward, trainer_clf, pool, subtype_set, real_train,
        FinetuneConfig(mode="concept_combined", seed=0, **PROFILE["finetune"]))
    scorer_ann, scorer_img, _ = _subtype_pack(
        world, PROFILE["subtype_scorer_per_child"], seed0=6_000_000)
    scorer = train_subtype_classifier(
        scorer_ann, scorer_img,
        ClassifierConfig(**{**PROFILE["classifier"], "seed": 9}),
        parent=PROFILE["subtype_parent"])
    children = world.vocabulary.subtype_map[PROFILE["subtype_parent"]]
    subtype_scores: dict = {"per_child_recall": {}}
    hits = 0
    n_total = 0
    for child in children:
        child_samples = sample(concept, child, PROFILE["subtype_eval_per_child"],
                               seed=3000)
        predicted = classify_records(scorer.classifier, child_samples)
        child_hits = sum(1 for p in predicted if p == child)
        subtype_scores["per_child_recall"][child] = child_hits / len(child_samples)
        hits += child_hits
        n_total += len(child_samples)
    subtype_scores["accuracy"] = hits / n_total
    subtype_scores["macro_recall"] = float(
        np.mean(list(subtype_scores["per_child_recall"].values())))
    say(f"subtype accuracy {subtype_scores['accuracy']:.3f} "
        f"macro recall {subtype_scores['macro_recall']:.3f}")

    return {
        "profile_tag": _profile_tag(),
        "build_seconds": time.monotonic() - t_build,
        "plausibility": plaus,
        "prdc": prdc,
        "f1": f1,
        "ablation": ablation,
        "subtype": subtype_scores,
    }


@pytest.fixture(scope="session")
def desk() -> dict:
    root = Path(os.environ.get(
        "CELLFORGE_ACCEPT_DIR", Path(__file__).parents[1] / "runs" / "desk-accept"))
    cache = root / f"v-{_profile_tag()}"
    summary_path = cache / "summary.json"
    if summary_path.exists() and not os.environ.get("CELLFORGE_ACCEPT_REBUILD"):
        return json.loads(summary_path.read_text())
    cache.mkdir(parents=True, exist_ok=True)
    summary = _build_summary(cache)
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def _per_seed(table: dict) -> dict:
    # json round-trips integer keys as strings
    return {int(k): v for k, v in table.items()}


class TestPipelineClaims:
    def test_finetuning_lifts_oracle_plausibility(self, desk):
        pre = _per_seed(desk["plausibility"]["no-feedback"])
        tuned = _per_seed(desk["plausibility"]["feedback"])
        s = min(pre)  # headline comparison on the first seed, 25 samples/class
        lift = tuned[s] - pre[s]
        hours = desk["build_seconds"] / 3600.0
        _verdict(
            6,
            lift >= 0.15 and hours <= 12.0,
            f"macro plausibility {pre[s]:.3f} -> {tuned[s]:.3f} "
            f"(lift {lift * 100:.1f}pp, need >= 15pp) on 25 samples/class; "
            f"build {hours:.2f}h CPU (<= 12h)",
        )

    def test_finetuning_preserves_fidelity_and_diversity(self, desk):
        pre = _per_seed(desk["prdc"]["no-feedback"])
        tuned = _per_seed(desk["prdc"]["feedback"])
        wins = [
            s for s in pre
            if tuned[s]["precision"] >= pre[s]["precision"]
            and tuned[s]["coverage"] >= pre[s]["coverage"]
        ]
        detail = "; ".join(
            f"seed {s}: precision {pre[s]['precision']:.3f}->{tuned[s]['precision']:.3f} "
            f"coverage {pre[s]['coverage']:.3f}->{tuned[s]['coverage']:.3f}"
            for s in sorted(pre)
        )
        _verdict(
            7,
            len(wins) >= 2,
            f"feedback arm >= pretrained on precision and coverage in "
            f"{len(wins)}/3 seeds (need majority). {detail}",
        )

    def test_downstream_classifier_ordering(self, desk):
        f1 = {arm: _per_seed(v) for arm, v in desk["f1"].items()}
        seeds = sorted(f1["real"])
        mean = {arm: float(np.mean([f1[arm][s] for s in seeds])) for arm in f1}
        auto_wins = sum(1 for s in seeds if f1["feedback"][s] > f1["auto"][s])
        gap = (mean["feedback"] - mean["no-feedback"]) * 100
        ok = (
            mean["real"] > mean["feedback"] > mean["no-feedback"]
            and auto_wins >= 2
            and gap >= 5.0
        )
        _verdict(
            8,
            ok,
            f"macro F1 means: real {mean['real']:.3f} > feedback "
            f"{mean['feedback']:.3f} > no-feedback {mean['no-feedback']:.3f}; "
            f"feedback > auto ({mean['auto']:.3f}) in {auto_wins}/3 seeds "
            f"(need >= 2); feedback - no-feedback gap {gap:.1f} F1 points "
            f"(need >= 5)",
        )

    def test_feedback_fraction_ablation_trend(self, desk):
        rows = sorted(desk["ablation"], key=lambda r: r["fraction"])
        f1s = [r["f1"] for r in rows]
        inversions = sum(1 for a, b in zip(f1s, f1s[1:]) if b < a)
        ok = f1s[-1] > f1s[0] and inversions <= 1
        curve = ", ".join(f"{r['fraction']:.1f}: {r['f1']:.3f}" for r in rows)
        _verdict(
            9,
            ok,
            f"F1 at full feedback {f1s[-1]:.3f} > none {f1s[0]:.3f}; "
            f"{inversions} inversion(s) along the curve (allow <= 1). [{curve}]",
        )

    def test_subtype_conditional_generation(self, desk):
        scores = desk["subtype"]
        ok = scores["accuracy"] >= 0.6 and scores["macro_recall"] >= 0.6
        per_child = ", ".join(
            f"{child} {rec:.3f}" for child, rec in scores["per_child_recall"].items()
        )
        _verdict(
            10,
            ok,
            f"independent subtype classifier on subtype-conditional samples: "
            f"accuracy {scores['accuracy']:.3f}, macro recall "
            f"{scores['macro_recall']:.3f} (both need >= 0.6). per child: {per_child}",
        )
