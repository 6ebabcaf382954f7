"""Patchify an image and run the two-headed ViT."""
import numpy as np

from jointvit.model import ViTConfig, forward, init_params, param_count, patchify, predict_class

cfg = ViTConfig()  # 64x64 grayscale, 16px patches, width 64, depth 4
print("parameters:", param_count(cfg))

img = np.random.default_rng(0).uniform(size=(64, 64, 1))
tokens = patchify(img, cfg.patch_size)
print("patch tokens:", tokens.shape)  # 16 patches of 256 pixels

params = init_params(cfg, seed=0)
logits, value = forward(params, img[None])
print("class logits:", np.round(logits.data, 4))
print("value head:", value.data)
print("predicted class:", predict_class(logits)[0])

## Names follow block.<i>.<layer>.<weight|bias>
for name in list(params.names())[:8]:
    print(f"  {name:28s} {params[name].shape}")
