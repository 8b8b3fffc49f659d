"""Compact promptable segmentation network: autodiff, model, losses, training."""
