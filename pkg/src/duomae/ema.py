"""Exponential-moving-average tracking of the student encoder by the teacher."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from .errors import ConfigurationError, ContractError


@torch.no_grad()
def ema_update(teacher: nn.Module, student: nn.Module, decay: float) -> None:
    """teacher <- decay * teacher + (1 - decay) * student, element-wise.

    No gradient flows through the assignment; teacher parameters never see the
    optimizer.
    """
    if not (0.0 < decay < 1.0):
        raise ConfigurationError(f"ema decay must lie in (0, 1), got {decay!r}")
    teacher_params = dict(teacher.named_parameters())
    student_params = dict(student.named_parameters())
    if teacher_params.keys() != student_params.keys():
        raise ContractError("teacher and student parameter sets differ")
    for name, t_param in teacher_params.items():
        s_param = student_params[name]
        if t_param.shape != s_param.shape:
            raise ContractError(f"shape mismatch for {name}: {t_param.shape} vs {s_param.shape}")
        t_param.mul_(decay).add_(s_param.detach(), alpha=1.0 - decay)


@dataclass
class EmaState:
    """Constant decay plus a step counter, incremented once per update."""

    decay: float
    step: int = field(default=0)

    def __post_init__(self) -> None:
        if not (0.0 < self.decay < 1.0):
            raise ConfigurationError(f"ema decay must lie in (0, 1), got {self.decay!r}")

    def update(self, teacher: nn.Module, student: nn.Module) -> None:
        ema_update(teacher, student, self.decay)
        self.step += 1
