"""Reward model: loss arithmetic, feedback assembly, and training behavior."""

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from cellforge.datagen import generate_cell_image
from cellforge.records import ClassVocabulary, FeedbackRecord, ImageRecord
from cellforge.reward import (
    ClassifierConfig,
    RewardConfig,
    RewardExample,
    RewardHead,
    build_feedback_dataset,
    classify_records,
    embed_records,
    load_reward,
    predict_reward,
    predict_reward_batch,
    reward_accuracy,
    reward_auc,
    reward_loss_terms,
    save_reward,
    train_classifier,
    train_reward,
)
from cellforge.reward.model import _stratified_split

SUBSET = ("B1", "B2", "ER1", "M4")


def _fake_record(rid, code, rng, source="real"):
    pixels = rng.random((32, 32, 3)).astype(np.float32)
    return ImageRecord(id=rid, pixels=pixels, class_code=code, source=source)


class TestRewardLossTerms:
    def test_hand_case(self):
        # Two synthetic predictions (0.8, 0.1) against targets (1, 0) and one
        # real prediction 0.5 against target 1, real weight 2:
        # (0.2^2 + 0.1^2) + 2 * 0.5^2 = 0.55.
        pred = torch.tensor([0.8, 0.1, 0.5], dtype=torch.float64)
        target = torch.tensor([1.0, 0.0, 1.0], dtype=torch.float64)
        is_real = torch.tensor([0.0, 0.0, 1.0], dtype=torch.float64)
        total, syn, real = reward_loss_terms(pred, target, is_real, 2.0)
        assert abs(float(syn) - 0.05) < 1e-12
        assert abs(float(real) - 0.25) < 1e-12
        assert abs(float(total) - 0.55) < 1e-12

    def test_sums_not_means(self):
        # Doubling the batch by repetition doubles every term.
        pred = torch.tensor([0.3, 0.9], dtype=torch.float64)
        target = torch.tensor([1.0, 0.0], dtype=torch.float64)
        is_real = torch.tensor([0.0, 1.0], dtype=torch.float64)
        t1, s1, r1 = reward_loss_terms(pred, target, is_real, 0.5)
        t2, s2, r2 = reward_loss_terms(
            pred.repeat(2), target.repeat(2), is_real.repeat(2), 0.5
        )
        assert float(t2) == pytest.approx(2 * float(t1), abs=1e-15)
        assert float(s2) == pytest.approx(2 * float(s1), abs=1e-15)
        assert float(r2) == pytest.approx(2 * float(r1), abs=1e-15)

    def test_decomposition_exact(self):
        rng = np.random.default_rng(3)
        pred = torch.from_numpy(rng.random(50))
        target = torch.from_numpy(rng.integers(0, 2, 50).astype(np.float64))
        is_real = torch.from_numpy(rng.integers(0, 2, 50).astype(np.float64))
        for lam in (0.0, 0.5, 1.0, 2.0):
            total, syn, real = reward_loss_terms(pred, target, is_real, lam)
            assert float(total) == float(syn) + lam * float(real)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="matching shapes"):
            reward_loss_terms(torch.zeros(3), torch.zeros(2), torch.zeros(3), 1.0)

    def test_lambda_zero_kills_real_gradients(self):
        torch.manual_seed(0)
        head = RewardHead(8, 3)
        feats = torch.randn(6, 8)
        onehot = F.one_hot(torch.tensor([0, 1, 2, 0, 1, 2]), 3).float()
        pred = head(feats, onehot)
        target = torch.tensor([1.0, 0.0, 1.0, 0.0, 1.0, 0.0])
        all_real = torch.ones(6)
        total, _, _ = reward_loss_terms(pred, target, all_real, 0.0)
        grads = torch.autograd.grad(total, list(head.parameters()))
        for g in grads:
            assert torch.all(g == 0)


class TestRewardExample:
    def test_target_must_be_binary(self, world):
        rec = _fake_record("r-0", "B1", np.random.default_rng(0))
        with pytest.raises(ValueError, match="target"):
            RewardExample(image=rec, class_code="B1", target=0.5, weight=1.0, is_real=False)

    def test_weight_must_be_nonnegative_finite(self):
        rec = _fake_record("r-0", "B1", np.random.default_rng(0))
        for bad in (-1.0, float("nan"), float("inf")):
            with pytest.raises(ValueError, match="weight"):
                RewardExample(image=rec, class_code="B1", target=1.0, weight=bad, is_real=True)


class TestBuildFeedbackDataset:
    @pytest.fixture()
    def parts(self, world):
        rng = np.random.default_rng(9)
        synth = [
            _fake_record(f"syn-{i}", SUBSET[i % 4], rng, source="synthetic")
            for i in range(10)
        ]
        feedback = [
            FeedbackRecord(
                image_id=f"syn-{i}",
                declared_class=SUBSET[i % 4],
                implausible=i % 2,
                annotator="oracle",
                timestamp=float(i),
            )
            for i in range(10)
        ]
        real = [_fake_record(f"real-{i}", SUBSET[i % 4], rng) for i in range(12)]
        return synth, feedback, real

    def test_synthetic_part(self, parts, world):
        synth, feedback, real = parts
        examples = build_feedback_dataset(feedback, synth, real, world.vocabulary, seed=0)
        assert len(examples) == len(feedback) + len(real)
        for fb, ex in zip(feedback, examples[: len(feedback)]):
            assert ex.image.id == fb.image_id
            assert ex.class_code == fb.declared_class
            assert ex.target == 1.0 - fb.implausible
            assert ex.weight == 1.0
            assert not ex.is_real

    def test_real_part_pseudo_labels(self, parts, world):
        synth, feedback, real = parts
        examples = build_feedback_dataset(
            feedback, synth, real, world.vocabulary, seed=0, lambda_real=2.5
        )
        for rec, ex in zip(real, examples[len(feedback) :]):
            assert ex.is_real
            assert ex.weight == 2.5
            assert ex.class_code in world.vocabulary.codes
            assert ex.target == (1.0 if ex.class_code == rec.class_code else 0.0)

    def test_pseudo_label_positive_fraction(self, world):
        # Uniform class draws give P(target = 1) = 1/|C|; with n = 960 and
        # p = 1/16 the observed fraction stays within 3 binomial sigmas.
        rng = np.random.default_rng(4)
        codes = world.vocabulary.codes
        real = [_fake_record(f"real-{i}", codes[i % len(codes)], rng) for i in range(960)]
        examples = build_feedback_dataset([], {}, real, world.vocabulary, seed=21)
        frac = np.mean([e.target for e in examples])
        p = 1.0 / len(codes)
        sigma = np.sqrt(p * (1 - p) / len(real))
        assert abs(frac - p) <= 3 * sigma
        declared = {e.class_code for e in examples}
        assert declared == set(codes)

    def test_dangling_ids_listed(self, parts, world):
        synth, feedback, real = parts
        feedback = feedback + [
            FeedbackRecord(
                image_id=f"ghost-{i}",
                declared_class="B1",
                implausible=0,
                annotator="oracle",
                timestamp=0.0,
            )
            for i in range(2)
        ]
        with pytest.raises(ValueError, match=r"ghost-0.*ghost-1"):
            build_feedback_dataset(feedback, synth, real, world.vocabulary, seed=0)

    def test_mapping_input_and_determinism(self, parts, world):
        synth, feedback, real = parts
        by_id = {r.id: r for r in synth}
        a = build_feedback_dataset(feedback, by_id, real, world.vocabulary, seed=5)
        b = build_feedback_dataset(feedback, synth, real, world.vocabulary, seed=5)
        assert [e.class_code for e in a] == [e.class_code for e in b]
        assert [e.target for e in a] == [e.target for e in b]
        c = build_feedback_dataset(feedback, synth, real, world.vocabulary, seed=6)
        assert [e.class_code for e in a[len(feedback):]] != [
            e.class_code for e in c[len(feedback):]
        ]


class TestStratifiedSplit:
    def test_partition_and_strata(self):
        targets = np.array([0.0] * 90 + [1.0] * 10)
        train, val = _stratified_split(targets, 0.1, np.random.default_rng(0))
        assert len(val) == 10
        assert np.sum(targets[val] == 1.0) == 1
        assert len(np.intersect1d(train, val)) == 0
        assert len(train) + len(val) == 100

    def test_zero_fraction(self):
        targets = np.array([0.0, 1.0] * 5)
        train, val = _stratified_split(targets, 0.0, np.random.default_rng(0))
        assert len(val) == 0 and len(train) == 10

    def test_singleton_stratum_stays_in_train(self):
        targets = np.array([0.0] * 9 + [1.0])
        train, val = _stratified_split(targets, 0.2, np.random.default_rng(0))
        assert np.all(targets[val] == 0.0)
        assert 9 in train


@pytest.fixture(scope="module")
def sub_vocab():
    return ClassVocabulary(codes=SUBSET)


@pytest.fixture(scope="module")
def real_records(world):
    records = []
    for code in SUBSET:
        spec = world.spec_for(code)
        for i in range(16):
            img, _ = generate_cell_image(spec, plausible=True, seed=1000 + i)
            records.append(
                ImageRecord(id=f"real-{code.lower()}-{i}", pixels=img, class_code=code, source="real")
            )
    return records


@pytest.fixture(scope="module")
def backbone(real_records, sub_vocab):
    # Kept deliberately under-trained: a fully converged classifier collapses
    # the within-class variation the reward head feeds on.
    cfg = ClassifierConfig(epochs=12, batch_size=32, seed=5)
    return train_classifier(real_records, sub_vocab, cfg)


@pytest.fixture(scope="module")
def feedback_pack(world):
    """(synthetic records, feedback rows, held-out eval examples)."""
    synth, feedback, eval_examples = [], [], []
    for code in SUBSET:
        spec = world.spec_for(code)
        for flag in (0, 1):
            for i in range(8):
                img, _ = generate_cell_image(spec, plausible=not flag, seed=2000 + 100 * flag + i)
                rid = f"syn-{code.lower()}-{flag}{i}"
                synth.append(ImageRecord(id=rid, pixels=img, class_code=code, source="synthetic"))
                feedback.append(
                    FeedbackRecord(
                        image_id=rid,
                        declared_class=code,
                        implausible=flag,
                        annotator="oracle",
                        timestamp=float(i),
                    )
                )
            for i in range(4):
                img, _ = generate_cell_image(spec, plausible=not flag, seed=2200 + 100 * flag + i)
                rec = ImageRecord(
                    id=f"ev-{code.lower()}-{flag}{i}", pixels=img, class_code=code, source="synthetic"
                )
                eval_examples.append(
                    RewardExample(
                        image=rec, class_code=code, target=1.0 - flag, weight=1.0, is_real=False
                    )
                )
    return synth, feedback, eval_examples


@pytest.fixture(scope="module")
def reward_examples(feedback_pack, real_records, sub_vocab):
    synth, feedback, _ = feedback_pack
    return build_feedback_dataset(feedback, synth, real_records, sub_vocab, seed=11)


@pytest.fixture(scope="module")
def reward_model(reward_examples, backbone):
    return train_reward(
        reward_examples, 1.0, RewardConfig(epochs=150, seed=7), backbone=backbone
    )


class TestClassifier:
    def test_holdout_accuracy(self, backbone, feedback_pack):
        _, _, eval_examples = feedback_pack
        plausible = [e.image for e in eval_examples if e.target == 1.0]
        predicted = classify_records(backbone, plausible)
        truth = [r.class_code for r in plausible]
        accuracy = np.mean([p == t for p, t in zip(predicted, truth)])
        assert accuracy >= 0.9

    def test_loss_decreased(self, backbone):
        assert backbone.loss_history[-1] < backbone.loss_history[0]

    def test_embeddings(self, backbone, real_records):
        feats = embed_records(backbone, real_records[:10])
        assert feats.shape == (10, backbone.network.embedding_dim)
        assert feats.dtype == np.float64
        assert np.all(np.isfinite(feats))

    def test_determinism(self, real_records, sub_vocab):
        cfg = ClassifierConfig(epochs=2, batch_size=32, seed=5)
        a = train_classifier(real_records, sub_vocab, cfg)
        b = train_classifier(real_records, sub_vocab, cfg)
        probe = real_records[0].pixels
        assert torch.equal(a.predict_logits(probe), b.predict_logits(probe))

    def test_unknown_class_rejected(self, sub_vocab):
        rng = np.random.default_rng(0)
        records = [_fake_record("x-0", "B1", rng), _fake_record("x-1", "ZZ", rng)]
        with pytest.raises(ValueError, match="ZZ"):
            train_classifier(records, sub_vocab, ClassifierConfig(epochs=1))

    def test_empty_rejected(self, sub_vocab):
        with pytest.raises(ValueError, match="empty"):
            train_classifier([], sub_vocab, ClassifierConfig(epochs=1))

    def test_time_conditioning_guards(self, backbone):
        from cellforge.reward import SmallConvNet

        x = torch.zeros(1, 3, 32, 32)
        with pytest.raises(ValueError, match="plain classifier"):
            backbone.network(x, torch.tensor([0]))
        noisy = SmallConvNet(4, time_conditioned=True)
        with pytest.raises(ValueError, match="needs timesteps"):
            noisy(x)
        assert noisy(x, torch.tensor([3])).shape == (1, 4)


class TestTrainReward:
    def test_scores_in_unit_interval(self, reward_model, feedback_pack):
        _, _, eval_examples = feedback_pack
        scores = predict_reward_batch(
            reward_model, [e.image for e in eval_examples], [e.class_code for e in eval_examples]
        )
        assert np.all(scores > 0.0) and np.all(scores < 1.0)

    def test_separates_plausible_from_implausible(self, reward_model, feedback_pack):
        _, _, eval_examples = feedback_pack
        scores = predict_reward_batch(
            reward_model, [e.image for e in eval_examples], [e.class_code for e in eval_examples]
        )
        targets = np.array([e.target for e in eval_examples])
        assert scores[targets == 1.0].mean() > scores[targets == 0.0].mean()
        assert reward_auc(reward_model, eval_examples) >= 0.75

    def test_determinism(self, reward_examples, backbone, feedback_pack):
        _, _, eval_examples = feedback_pack
        cfg = RewardConfig(epochs=10, seed=7)
        a = train_reward(reward_examples, 1.0, cfg, backbone=backbone)
        b = train_reward(reward_examples, 1.0, cfg, backbone=backbone)
        images = [e.image for e in eval_examples[:8]]
        codes = [e.class_code for e in eval_examples[:8]]
        assert np.array_equal(
            predict_reward_batch(a, images, codes), predict_reward_batch(b, images, codes)
        )

    def test_lambda_zero_matches_synthetic_only_training(
        self, reward_examples, backbone, feedback_pack
    ):
        _, _, eval_examples = feedback_pack
        cfg = RewardConfig(epochs=10, seed=3)
        mixed = train_reward(reward_examples, 0.0, cfg, backbone=backbone)
        synthetic_only = [e for e in reward_examples if not e.is_real]
        pure = train_reward(synthetic_only, 0.0, cfg, backbone=backbone)
        images = [e.image for e in eval_examples]
        codes = [e.class_code for e in eval_examples]
        assert np.array_equal(
            predict_reward_batch(mixed, images, codes), predict_reward_batch(pure, images, codes)
        )

    def test_single_target_value_rejected(self, reward_examples, backbone):
        positives = [e for e in reward_examples if e.target == 1.0]
        with pytest.raises(ValueError, match="both target values"):
            train_reward(positives, 1.0, RewardConfig(epochs=1), backbone=backbone)

    def test_all_real_with_lambda_zero_rejected(self, reward_examples, backbone):
        real_only = [e for e in reward_examples if e.is_real]
        with pytest.raises(ValueError, match="no examples"):
            train_reward(real_only, 0.0, RewardConfig(epochs=1), backbone=backbone)

    def test_unknown_class_rejected(self, backbone):
        rng = np.random.default_rng(0)
        examples = [
            RewardExample(
                image=_fake_record(f"q-{i}", "B1", rng), class_code="ZZ",
                target=float(i % 2), weight=1.0, is_real=False,
            )
            for i in range(4)
        ]
        with pytest.raises(ValueError, match="ZZ"):
            train_reward(examples, 1.0, RewardConfig(epochs=1), backbone=backbone)

    def test_negative_lambda_rejected(self, reward_examples, backbone):
        with pytest.raises(ValueError, match="lambda_real"):
            train_reward(reward_examples, -1.0, RewardConfig(epochs=1), backbone=backbone)

    def test_predict_reward_single(self, reward_model, feedback_pack):
        _, _, eval_examples = feedback_pack
        ex = eval_examples[0]
        score = predict_reward(reward_model, ex.image, ex.class_code)
        assert 0.0 < score < 1.0
        assert score == predict_reward(reward_model, ex.image, ex.class_code)
        with pytest.raises(KeyError):
            predict_reward(reward_model, ex.image, "ZZ")

    def test_reward_accuracy_range(self, reward_model, feedback_pack):
        _, _, eval_examples = feedback_pack
        acc = reward_accuracy(reward_model, eval_examples)
        assert 0.0 <= acc <= 1.0

    def test_auc_needs_both_targets(self, reward_model, feedback_pack):
        _, _, eval_examples = feedback_pack
        ones = [e for e in eval_examples if e.target == 1.0]
        with pytest.raises(ValueError, match="both target values"):
            reward_auc(reward_model, ones)

    def test_validation_history_recorded(self, reward_model):
        assert len(reward_model.train_history) >= 1
        assert len(reward_model.val_history) == len(reward_model.train_history)


class TestRewardCheckpoint:
    def test_round_trip(self, reward_model, feedback_pack, tmp_path):
        _, _, eval_examples = feedback_pack
        path = tmp_path / "reward.pt"
        save_reward(reward_model, path)
        loaded = load_reward(path)
        images = [e.image for e in eval_examples]
        codes = [e.class_code for e in eval_examples]
        assert np.array_equal(
            predict_reward_batch(reward_model, images, codes),
            predict_reward_batch(loaded, images, codes),
        )
        assert loaded.lambda_real == reward_model.lambda_real
        assert loaded.config == reward_model.config
        assert loaded.vocabulary.codes == reward_model.vocabulary.codes
        assert loaded.train_history == reward_model.train_history

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_reward(tmp_path / "absent.pt")
