"""Synthetic long-tailed data, balancing augmentation and folder round trip."""
import tempfile

import numpy as np

from jointvit.data import (
    AugmentPolicy, SaO2Class, SynthSpec, augment_once, balance_augment, load_image_folder, sao2_to_class,
    slice_volume, stripe_frequency, synth_longtail, write_image_folder,
)

for pct in (90, 94, 97):
    print(pct, "->", sao2_to_class(pct).name)

## 3D volume to 2D slices
vol = np.random.default_rng(0).uniform(size=(6, 32, 32))
print("slices at stride 2:", len(slice_volume(vol, stride=2)))

## Stripe textures with a class-specific frequency
ds = synth_longtail(SynthSpec(counts=(9, 30, 18), image_size=32, seed=0))
print("class counts:", ds.class_counts)
for c in SaO2Class:
    first = next(i for i in ds if i.sao2_class == c)
    print(f"  {c.name:14s} dominant frequency {stripe_frequency(first.slices[0]):.2f} cycles")

## Crop / flip / rotate, same seed gives the same image
img = ds.instances[0].slices[0]
a = augment_once(img, AugmentPolicy(), np.random.default_rng(1))
b = augment_once(img, AugmentPolicy(), np.random.default_rng(1))
print("augment deterministic:", np.array_equal(a, b), a.shape)

## Minority classes are topped up to the majority count
bal = balance_augment(ds, AugmentPolicy(), seed=0)
print("after balancing:", bal.class_counts, "augmented:", sum(i.is_augmented for i in bal))

## PNG folder + manifest round trip (8-bit quantisation)
with tempfile.TemporaryDirectory() as tmp:
    write_image_folder(ds, tmp)
    back = load_image_folder(tmp).by_id()
    err = max(np.abs(i.slices[0] - back[i.instance_id].slices[0]).max() for i in ds)
    print(f"round-trip max error {err:.5f} (1/255 = {1 / 255:.5f})")
