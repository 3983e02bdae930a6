import csv
from collections.abc import Iterator, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from tqdm.auto import tqdm

from autodiff import Tape, adam_step, lr_at
from autodiff.parameters import ENCODER_GROUP, HEAD_GROUP
from config import CDAPConfig
from corpus import Episode
from errors import EpisodeValidationError, NumericalError, TrainingDivergenceError
from networks import CDAPModel
from utils import get_logger, progress_enabled


logger = get_logger(__name__)

TRACE_FIELDS = ("step", "L_t", "L_s", "L_c", "total", "lr")


@dataclass(frozen=True)
class LossRecord:
    step: int
    L_t: float  # noqa: N815
    L_s: float  # noqa: N815
    L_c: float  # noqa: N815
    total: float
    lr: float


@dataclass
class TrainingResult:
    model: CDAPModel
    trace: list[LossRecord] = field(default_factory=list)


def episode_batches(episodes: Sequence[Episode], batch_size: int, seed: int) -> Iterator[list[Episode]]:
    """Endless batches; the episode order is reshuffled with a seeded generator on every pass."""
    rng = np.random.default_rng(seed)
    order: list[int] = []
    while True:
        batch = []
        while len(batch) < batch_size:
            if not order:
                order = rng.permutation(len(episodes)).tolist()
            batch.append(episodes[order.pop(0)])
        yield batch


def train(episodes: Sequence[Episode], config: CDAPConfig, model: CDAPModel | None = None) -> TrainingResult:
    """Optimise both networks jointly over a stream of episodes.

    Every step averages the total loss of ``training.batch_size`` episodes,
    back-propagates it and applies one AdamW update with the scheduled rates
    of the head and encoder parameter groups.

    Parameters
    ----------
    episodes : Sequence[Episode]
        Training episodes, cycled in a seeded order.
    config : CDAPConfig
        Loss weights, optimiser and schedule settings.
    model : CDAPModel | None, optional
        Model to continue training; a fresh one is created otherwise.

    Returns
    -------
    TrainingResult
        The trained model and one loss record per step.

    Raises
    ------
    TrainingDivergenceError
        If a loss or gradient becomes non-finite.
    """
    settings = config.training
    if model is None:
        sentences = [s for e in episodes for s in (*e.support, *e.query)]
        model = CDAPModel.create(config, sentences)
    result = TrainingResult(model=model)
    if settings.max_steps == 0:
        logger.info("max_steps is 0, parameters left unchanged")
        return result
    if not episodes:
        msg = "no training episodes"
        raise EpisodeValidationError(msg)
    empty = [e.episode_id or str(i) for i, e in enumerate(episodes) if not e.query]
    if empty:
        msg = f"episodes without query sentences cannot be trained on: {', '.join(empty)}"
        raise EpisodeValidationError(msg)

    warmup = settings.warmup_steps
    if warmup > settings.max_steps:
        logger.warning("warmup_steps %d exceeds max_steps %d, clamping", warmup, settings.max_steps)
        warmup = settings.max_steps
    unreachable = model.unreachable_spans(episodes)
    if unreachable:
        logger.warning(
            "%d gold query spans are longer than max_span_len_train=%s and can never be predicted",
            unreachable,
            config.model.max_span_len_train,
        )

    store = model.store
    store.zero_grad()
    batches = episode_batches(episodes, settings.batch_size, config.seed)
    logger.info("Training for %d steps on %d episodes", settings.max_steps, len(episodes))
    for step in tqdm(range(settings.max_steps), desc="Training", disable=not progress_enabled()):
        batch = next(batches)
        rates = {
            HEAD_GROUP: lr_at(step + 1, settings.lr, warmup, settings.max_steps),
            ENCODER_GROUP: lr_at(step + 1, settings.encoder_lr, warmup, settings.max_steps),
        }
        sums = dict.fromkeys(("L_t", "L_s", "L_c", "total"), 0.0)
        for episode in batch:
            tape = Tape()
            try:
                losses = model.forward(tape, episode)
                values = losses.values()
                if not np.isfinite(list(values.values())).all():
                    msg = f"non-finite loss {values}"
                    raise TrainingDivergenceError(msg, step=step, episode_id=episode.episode_id)
                tape.backward(tape.scale(losses.total, 1.0 / len(batch)))
            except TrainingDivergenceError:
                raise
            except NumericalError as exc:
                raise TrainingDivergenceError(str(exc), step=step, episode_id=episode.episode_id) from exc
            for key, value in values.items():
                sums[key] += value / len(batch)
        try:
            adam_step(store, rates, weight_decay=settings.weight_decay)
        except TrainingDivergenceError as exc:
            ids = ",".join(e.episode_id for e in batch)
            raise TrainingDivergenceError(str(exc), step=step, episode_id=ids) from exc

        record = LossRecord(step=step + 1, lr=rates[HEAD_GROUP], **sums)
        result.trace.append(record)
        if (step + 1) % settings.log_every == 0 or step + 1 == settings.max_steps:
            logger.info(
                "step %d/%d lr=%.3e L_t=%.4f L_s=%.4f L_c=%.4f total=%.4f",
                record.step,
                settings.max_steps,
                record.lr,
                record.L_t,
                record.L_s,
                record.L_c,
                record.total,
            )
    return result


def write_loss_trace(path: str | Path, records: Sequence[LossRecord]) -> None:
    """CSV with columns ``step,L_t,L_s,L_c,total,lr``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as file:
        writer = csv.DictWriter(file, fieldnames=TRACE_FIELDS)
        writer.writeheader()
        for record in records:
            writer.writerow(asdict(record))
    logger.info("Loss trace with %d steps written to %s", len(records), path)
