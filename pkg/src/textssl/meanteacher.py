"""Teacher model lifecycle: EMA tracking of the student and gradient-free
pseudo-label decoding on weakly augmented views.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import recognizer as rec


class TeacherState:
    """Parameter mirror of the student, updated only by exponential averaging."""

    def __init__(self, student):
        self.model = student.copy(requires_grad=False)

    def parameters(self):
        return self.model.parameters()


def ema_update(teacher, student, gamma_r):
    """theta_t <- gamma_r * theta_t + (1 - gamma_r) * theta_s, elementwise.

    gamma_r is the retention coefficient: at 0 the teacher becomes an exact
    copy of the student, near 1 it trails the student slowly.
    """
    if not 0.0 <= gamma_r < 1.0:
        raise ValueError(f"ema_update: retention coefficient must be in [0, 1), got {gamma_r}")
    t_params = teacher.parameters()
    s_params = student.parameters()
    if t_params.keys() != s_params.keys():
        raise ValueError("ema_update: parameter layouts differ")
    for name, tp in t_params.items():
        sp = s_params[name]
        if tp.data.shape != sp.data.shape:
            raise ValueError(f"ema_update: shape mismatch for {name}: {tp.data.shape} vs {sp.data.shape}")
        tp.data *= gamma_r
        tp.data += (1.0 - gamma_r) * sp.data


def teacher_predict(teacher, weak_image, max_len=None):
    """Greedy argmax decode on the teacher; outputs carry no gradient record."""
    with ad.no_grad():
        features = rec.encode(teacher.model, weak_image)
        return rec.decode_greedy(teacher.model, features, feedback_mode="argmax", max_len=max_len)


def parameter_distance(teacher, student):
    """Flat L2 distance between the two parameter sets."""
    total = 0.0
    s_params = student.parameters()
    for name, tp in teacher.parameters().items():
        diff = tp.data - s_params[name].data
        total += float(np.sum(diff * diff))
    return np.sqrt(total)
