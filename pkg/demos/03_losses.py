"""Joint loss: lambda * BCE(classes) + (1 - lambda) * MSE(value)."""
import numpy as np

from jointvit.autodiff import Tensor
from jointvit.losses import JointLossConfig, bal_bce_loss, bce_loss, joint_loss, mse_loss, one_hot

logits = Tensor(np.array([[2.0, -1.0, 0.5], [-0.5, 1.5, 0.0]]))
values = Tensor(np.array([0.91, 0.95]))
y = one_hot([0, 1], 3)
targets = np.array([90.0, 94.0]) / 100  # regress SaO2 as a fraction

print("bce", bce_loss(logits, y).item())
print("mse", mse_loss(values, targets).item())
for lam in (0.0, 0.5, 0.99, 1.0):
    print(f"lambda={lam:<5} joint={joint_loss(logits, values, y, targets, JointLossConfig(lam)).item():.6f}")

## Prior-shifted BCE for long-tailed counts
counts = [9, 30, 18]
print("bal_bce", bal_bce_loss(logits, y, counts).item())
print("bal_bce, counts x10", bal_bce_loss(logits, y, [10 * c for c in counts]).item())
