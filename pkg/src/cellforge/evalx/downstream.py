"""Downstream utility: train a classifier on one dataset, test on another.

The classifier is the same small convnet that backs the reward model, so
"synthetic data is useful" means useful to the architecture the rest of the
pipeline already trusts. All scores are macro-averaged over classes.
"""

from __future__ import annotations

from typing import Optional, Sequence

from sklearn.metrics import accuracy_score, f1_score, precision_score, recall_score

from cellforge.records import ClassVocabulary, ImageRecord
from cellforge.reward.backbone import ClassifierConfig, classify_records, train_classifier

DOWNSTREAM_KEYS = ("f1", "accuracy", "precision", "recall")


def macro_scores(
    true_codes: Sequence[str], predicted_codes: Sequence[str], codes: Sequence[str]
) -> dict[str, float]:
    """Macro f1/accuracy/precision/recall over the given class list.

    Classes absent from both truth and prediction contribute 0 to the macro
    averages rather than raising.
    """
    if len(true_codes) != len(predicted_codes):
        raise ValueError("prediction/truth length mismatch")
    labels = list(codes)
    kwargs = dict(labels=labels, average="macro", zero_division=0)
    return {
        "f1": float(f1_score(true_codes, predicted_codes, **kwargs)),
        "accuracy": float(accuracy_score(true_codes, predicted_codes)),
        "precision": float(precision_score(true_codes, predicted_codes, **kwargs)),
        "recall": float(recall_score(true_codes, predicted_codes, **kwargs)),
    }


def downstream_eval(
    train_set: Sequence[ImageRecord],
    test_set: Sequence[ImageRecord],
    config: ClassifierConfig = ClassifierConfig(),
    *,
    vocabulary: Optional[ClassVocabulary] = None,
) -> dict[str, float]:
    """Train on train_set, evaluate on test_set, macro-averaged scores."""
    if not train_set or not test_set:
        raise ValueError("both train and test sets must be non-empty")
    train_codes = {r.class_code for r in train_set}
    test_codes = {r.class_code for r in test_set}
    if train_codes != test_codes:
        raise ValueError(
            f"train/test class mismatch: train has {sorted(train_codes)}, "
            f"test has {sorted(test_codes)}"
        )
    if vocabulary is None:
        vocabulary = ClassVocabulary(codes=tuple(sorted(train_codes)))
    model = train_classifier(train_set, vocabulary, config)
    predicted = classify_records(model, test_set)
    return macro_scores([r.class_code for r in test_set], predicted, vocabulary.codes)
