"""Confusion-matrix metrics and stratified folds."""
import numpy as np

from jointvit.evaluation import (
    accuracy, confusion_matrix, kfold_split, macro_sensitivity, macro_specificity,
)

## A classifier that always answers the majority class
labels = np.array([0] * 9 + [1] * 35 + [2] * 13)
cm = confusion_matrix(np.ones_like(labels), labels, 3)
print(cm.counts)
print(f"accuracy {100 * accuracy(cm):.2f}%  sensitivity {100 * macro_sensitivity(cm):.2f}%  "
      f"specificity {100 * macro_specificity(cm):.2f}%")

## Three folds of 19, each with a share of every class
ids = [f"case{j:02d}" for j in range(57)]
folds = kfold_split(ids, k=3, seed=0, labels=labels)
for f, fold in enumerate(folds):
    idx = [ids.index(i) for i in fold]
    print(f"fold {f}: {len(fold)} ids, class counts {np.bincount(labels[idx], minlength=3).tolist()}")
