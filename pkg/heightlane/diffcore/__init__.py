"""
Differentiable compute substrate.

Tensors, parameters and reverse-mode gradients come from PyTorch; this package adds
the operator conventions the model relies on (pixel-coordinate sampling, attention
layers, masked deformable sampling), the functional Adam update, the
HLCK checkpoint codec and the determinism switches.
"""
