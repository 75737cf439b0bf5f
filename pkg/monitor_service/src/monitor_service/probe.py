"""Linear separability probe.

A logistic regression over bag-of-token counts of the window's current
(final) entry, the step the label refers to. A plain bag over the whole
window is position-blind and conflates "just left a loop" with "still in
one"; restricting the bag to the current reasoning-action line is the
cheapest faithful check. If this probe cannot reach the target F1 on a
dataset, the encoder will not either.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

from sklearn.feature_extraction.text import CountVectorizer
from sklearn.linear_model import LogisticRegression

from .data import Sample, load_samples, tokenize
from .train import DetectorMetrics, metrics_from_predictions


def current_entry_text(sample: Sample) -> str:
    return sample.text.splitlines()[-1]


def probe_f1(train: Sequence[Sample], evaluation: Sequence[Sample]) -> DetectorMetrics:
    vectorizer = CountVectorizer(analyzer=tokenize)
    x_train = vectorizer.fit_transform(current_entry_text(s) for s in train)
    x_eval = vectorizer.transform(current_entry_text(s) for s in evaluation)
    clf = LogisticRegression(max_iter=1000, class_weight="balanced")
    clf.fit(x_train, [s.label for s in train])
    predicted = clf.predict(x_eval).tolist()
    return metrics_from_predictions(predicted, [s.label for s in evaluation])


def probe_files(train_file: Path | str, eval_file: Path | str, kind: str) -> DetectorMetrics:
    return probe_f1(load_samples(train_file, kind), load_samples(eval_file, kind))
