from collections.abc import Mapping

import numpy as np

from autodiff.parameters import ParameterStore
from errors import ContractError, TrainingDivergenceError


def lr_at(step: int, peak_lr: float, warmup_steps: int, total_steps: int) -> float:
    """Linear warmup from 0 to ``peak_lr``, then linear decay to 0 at ``total_steps``."""
    if not 0 <= step <= total_steps or warmup_steps > total_steps:
        msg = f"lr_at: need 0 <= step ({step}) <= total ({total_steps}) and warmup ({warmup_steps}) <= total"
        raise ContractError(msg)
    if step < warmup_steps:
        return peak_lr * step / warmup_steps
    if step >= total_steps:
        return 0.0
    return peak_lr * (total_steps - step) / (total_steps - warmup_steps)


def adam_step(
    store: ParameterStore,
    lr: float | Mapping[str, float],
    *,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.01,
) -> None:
    """Apply one AdamW update in place and clear the gradients.

    Parameters
    ----------
    store : ParameterStore
        Parameters with populated gradient slots.
    lr : float | Mapping[str, float]
        A single learning rate or one per parameter group.
    betas : tuple[float, float], optional
        Moment decay rates.
    eps : float, optional
        Denominator guard.
    weight_decay : float, optional
        Decoupled decay factor, applied only to parameters flagged ``decay``.

    Raises
    ------
    TrainingDivergenceError
        If any gradient holds NaN or infinity.
    """
    for name, param in store.items():
        grad = param.tensor.grad
        if grad is not None and not np.isfinite(grad).all():
            msg = f"non-finite gradient for {name}"
            raise TrainingDivergenceError(msg, step=store.step)

    store.step += 1
    beta1, beta2 = betas
    correction1 = 1.0 - beta1**store.step
    correction2 = 1.0 - beta2**store.step
    for _, param in store.items():
        rate = lr if isinstance(lr, (int, float)) else lr[param.group]
        tensor = param.tensor
        grad = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.value)
        param.first_moment = beta1 * param.first_moment + (1.0 - beta1) * grad
        param.second_moment = beta2 * param.second_moment + (1.0 - beta2) * grad**2
        update = (param.first_moment / correction1) / (np.sqrt(param.second_moment / correction2) + eps)
        if param.decay and weight_decay:
            update = update + weight_decay * tensor.value
        tensor.value = tensor.value - rate * update
    store.zero_grad()
