"""Dual-branch evidential deep learning (DuEDL) on a small numpy autograd engine."""
