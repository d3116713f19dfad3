"""Pretraining and fine-tuning loops with deterministic checkpointing.

All randomness in a run flows through one seeded torch generator (batch
order) plus the seeded parameter initialization, so a re-run with the
same seed reproduces the trajectory and a checkpoint resume is bitwise
identical to uninterrupted training.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import CHECKPOINT_FORMAT_VERSION
from .crossmodal import (
    DEFAULT_TEMPERATURE,
    InteractionBlock,
    MappingBlock,
    pretrain_loss,
)
from .encoders import DualEncoder, EncoderConfig, init_parameters
from .errors import NumericError, ValidationError
from .fusion_heads import (
    CageHead,
    ContactHead,
    FusionStack,
    LoopHead,
    UnetDecoder,
    bce_loss,
    mse_loss,
)
from .preprocessing import SamplePair

TASKS = ("none", "loop", "cage", "contact")
INPUT_MODES = ("bimodal", "infer_missing_hic", "track_only")


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings for one pretraining or fine-tuning run."""

    phase: str
    task: str = "none"
    learning_rate: float = 1e-5
    batch_size: int = 32
    max_epochs: int = 200
    early_stop_patience: int = 20
    optimizer_betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.01
    seed: int = 0
    input_mode: str = "bimodal"
    temperature: float = DEFAULT_TEMPERATURE
    grad_clip_norm: float | None = 5.0
    squared_orthogonal: bool = True
    pairwise_combine: str = "sum"
    symmetrize_output: bool = False

    def __post_init__(self):
        if self.phase not in ("pretrain", "finetune"):
            raise ValidationError(f"unknown phase {self.phase!r}")
        if self.task not in TASKS:
            raise ValidationError(f"unknown task {self.task!r}")
        if self.input_mode not in INPUT_MODES:
            raise ValidationError(f"unknown input mode {self.input_mode!r}")
        if self.phase == "pretrain" and self.task != "none":
            raise ValidationError("pretraining does not take a task")
        if self.phase == "finetune" and self.task == "none":
            raise ValidationError("fine-tuning requires a task")
        if self.task == "contact" and self.input_mode == "bimodal":
            raise ValidationError(
                "contact-map prediction cannot run bimodal: the target would "
                "leak into the input; use infer_missing_hic or track_only"
            )
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValidationError("batch_size and max_epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValidationError("learning rate must be positive")

    @classmethod
    def reference_pretrain(cls, seed: int = 0) -> "TrainConfig":
        """Full-scale pretraining settings (500 epochs, lr 1e-5, batch 256)."""
        return cls(
            phase="pretrain", learning_rate=1e-5, batch_size=256, max_epochs=500, seed=seed
        )

    @classmethod
    def reference_finetune(cls, task: str, seed: int = 0) -> "TrainConfig":
        """Full-scale fine-tuning settings (batch 64, 200 epochs, patience 20)."""
        lr = 1e-4 if task == "cage" else 1e-5
        return cls(
            phase="finetune",
            task=task,
            learning_rate=lr,
            batch_size=64,
            max_epochs=200,
            early_stop_patience=20,
            seed=seed,
            input_mode="infer_missing_hic" if task == "contact" else "bimodal",
        )


def config_digest(train_config: TrainConfig, encoder_config: EncoderConfig) -> str:
    """Stable hash of the full configuration pair."""
    payload = json.dumps(
        {"train": asdict(train_config), "encoder": asdict(encoder_config)},
        sort_keys=True,
        default=list,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class WindowDataset:
    """In-memory tensor views of assembled sample pairs."""

    def __init__(
        self,
        contacts: torch.Tensor,
        tracks: torch.Tensor,
        task: str = "none",
        targets: torch.Tensor | None = None,
    ):
        if contacts.shape[0] != tracks.shape[0]:
            raise ValidationError("contact and track counts differ")
        if task != "none" and (targets is None or targets.shape[0] != contacts.shape[0]):
            raise ValidationError(f"task {task!r} requires one target per sample")
        self.contacts = contacts
        self.tracks = tracks
        self.task = task
        self.targets = targets

    @classmethod
    def from_samples(cls, samples: list[SamplePair], dtype=torch.float32) -> "WindowDataset":
        if not samples:
            raise ValidationError("dataset must be non-empty")
        task = samples[0].target_kind
        if any(s.target_kind != task for s in samples):
            raise ValidationError("all samples must carry the same target kind")
        contacts = torch.from_numpy(np.stack([s.contact.values for s in samples])).to(dtype)
        tracks = torch.from_numpy(np.stack([s.track.values for s in samples])).to(dtype)
        targets = None
        if task == "loop":
            targets = torch.tensor([float(s.loop_label) for s in samples], dtype=dtype)
        elif task == "cage":
            targets = torch.from_numpy(np.stack([s.cage for s in samples])).to(dtype)
        elif task == "contact":
            targets = torch.from_numpy(np.stack([s.contact_target for s in samples])).to(dtype)
        return cls(contacts, tracks, task, targets)

    def __len__(self) -> int:
        return self.contacts.shape[0]

    def slice(self, index: torch.Tensor):
        target = self.targets[index] if self.targets is not None else None
        return self.contacts[index], self.tracks[index], target


class PretrainModel(nn.Module):
    """Dual encoders + interaction and mapping blocks for self-supervision."""

    def __init__(
        self,
        config: EncoderConfig,
        temperature: float = DEFAULT_TEMPERATURE,
        squared_orthogonal: bool = True,
    ):
        super().__init__()
        self.encoder_config = config
        self.temperature = temperature
        self.squared_orthogonal = squared_orthogonal
        self.encoders = DualEncoder(config)
        self.interaction = InteractionBlock(config)
        self.mapping = MappingBlock(config)

    def forward(self, contact: torch.Tensor, track: torch.Tensor):
        stages = self.encoders(contact, track)
        embeddings = self.interaction(stages.contact.bottleneck, stages.track.bottleneck)
        contact_to_track, track_to_contact = self.mapping(
            embeddings.contact_concat, embeddings.track_concat
        )
        return stages, embeddings, contact_to_track, track_to_contact

    def loss(self, contact: torch.Tensor, track: torch.Tensor):
        _, embeddings, contact_to_track, track_to_contact = self(contact, track)
        return pretrain_loss(
            embeddings,
            contact_to_track,
            track_to_contact,
            temperature=self.temperature,
            squared_orthogonal=self.squared_orthogonal,
        )


class TaskModel(nn.Module):
    """Fine-tuning model: encoders, fusion and one task decoder/head.

    ``input_mode`` selects the contact stream fed to the fusion block:
    the real encoded contact map (bimodal), the mapped track embedding
    (infer_missing_hic) or the track embedding itself (track_only, the
    mapping-ablated variant).
    """

    def __init__(self, config: EncoderConfig, train_config: TrainConfig):
        super().__init__()
        if train_config.task == "none":
            raise ValidationError("TaskModel requires a task")
        if train_config.task == "contact" and config.track_stage0_length != 2 * config.window_side:
            raise ValidationError(
                "contact-map prediction requires the track stage-0 length to be "
                "twice the window side so the decoded halves align with the axes"
            )
        self.encoder_config = config
        self.task = train_config.task
        self.input_mode = train_config.input_mode
        self.encoders = DualEncoder(config)
        self.interaction = InteractionBlock(config)
        self.mapping = MappingBlock(config) if train_config.input_mode != "track_only" else None
        self.fusion = FusionStack(config)
        if self.task == "loop":
            self.head = LoopHead(config)
        else:
            self.decoder = UnetDecoder(config)
            if self.task == "cage":
                self.head = CageHead(config)
            else:
                self.head = ContactHead(
                    config,
                    pairwise_combine=train_config.pairwise_combine,
                    symmetrize_output=train_config.symmetrize_output,
                )

    def contact_stream(
        self, contact: torch.Tensor | None, track_concat: torch.Tensor, input_mode: str
    ) -> torch.Tensor:
        if input_mode == "bimodal":
            if contact is None:
                raise ValidationError("bimodal forward requires contact-map input")
            contact_stages = self.encoders.contact_encoder(contact)
            c_inv = self.interaction.contact_to_invariant(contact_stages.bottleneck)
            c_spec = self.interaction.contact_to_specific(contact_stages.bottleneck)
            return torch.cat([c_inv, c_spec], dim=-1)
        if input_mode == "infer_missing_hic":
            if self.mapping is None:
                raise ValidationError("this model was built without a mapping block")
            return self.mapping.map_track_to_contact(track_concat)
        return track_concat

    def forward(
        self,
        contact: torch.Tensor | None,
        track: torch.Tensor,
        input_mode: str | None = None,
    ) -> torch.Tensor:
        mode = input_mode or self.input_mode
        if mode not in INPUT_MODES:
            raise ValidationError(f"unknown input mode {mode!r}")
        if self.task == "contact" and mode == "bimodal":
            raise ValidationError("contact-map prediction cannot consume its own target")
        track_stages = self.encoders.track_encoder(track)
        t_inv = self.interaction.track_to_invariant(track_stages.bottleneck)
        t_spec = self.interaction.track_to_specific(track_stages.bottleneck)
        track_concat = torch.cat([t_inv, t_spec], dim=-1)
        contact_like = self.contact_stream(contact, track_concat, mode)
        fused = self.fusion(track_concat, contact_like)
        if self.task == "loop":
            return self.head(fused)
        decoded = self.decoder(fused, (track_stages.x2, track_stages.x1, track_stages.x0))
        return self.head(decoded)

    def loss(self, contact: torch.Tensor | None, track: torch.Tensor, target: torch.Tensor):
        output = self(contact, track)
        if self.task == "loop":
            return bce_loss(output, target), output
        return mse_loss(output, target), output


@dataclass
class Checkpoint:
    """A resumable training state plus the configs that produced it."""

    kind: str  # "pretrain" or the task name
    encoder_config: EncoderConfig
    train_config: TrainConfig
    model_state: dict
    optimizer_state: dict
    epoch: int
    best_metric: float
    generator_state: torch.Tensor
    data_meta: dict = field(default_factory=dict)

    @property
    def digest(self) -> str:
        return config_digest(self.train_config, self.encoder_config)


def save_checkpoint(checkpoint: Checkpoint, path: str | Path) -> None:
    torch.save(
        {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "kind": checkpoint.kind,
            "encoder_config": asdict(checkpoint.encoder_config),
            "train_config": asdict(checkpoint.train_config),
            "model_state": checkpoint.model_state,
            "optimizer_state": checkpoint.optimizer_state,
            "epoch": checkpoint.epoch,
            "best_metric": checkpoint.best_metric,
            "generator_state": checkpoint.generator_state,
            "data_meta": checkpoint.data_meta,
            "config_digest": checkpoint.digest,
        },
        path,
    )


def load_checkpoint(path: str | Path) -> Checkpoint:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ValidationError(
            f"unsupported checkpoint format {payload.get('format_version')!r}"
        )
    encoder_config = EncoderConfig(
        **{
            **payload["encoder_config"],
            "conv_pool_factors": tuple(payload["encoder_config"]["conv_pool_factors"]),
        }
    )
    raw_train = dict(payload["train_config"])
    raw_train["optimizer_betas"] = tuple(raw_train["optimizer_betas"])
    train_config = TrainConfig(**raw_train)
    return Checkpoint(
        kind=payload["kind"],
        encoder_config=encoder_config,
        train_config=train_config,
        model_state=payload["model_state"],
        optimizer_state=payload["optimizer_state"],
        epoch=payload["epoch"],
        best_metric=payload["best_metric"],
        generator_state=payload["generator_state"],
        data_meta=payload["data_meta"],
    )


def build_model(checkpoint: Checkpoint) -> nn.Module:
    """Reconstruct the module a checkpoint was saved from."""
    if checkpoint.kind == "pretrain":
        model = PretrainModel(
            checkpoint.encoder_config,
            temperature=checkpoint.train_config.temperature,
            squared_orthogonal=checkpoint.train_config.squared_orthogonal,
        )
    else:
        model = TaskModel(checkpoint.encoder_config, checkpoint.train_config)
    model.load_state_dict(checkpoint.model_state)
    return model


def load_pretrained_weights(model: TaskModel, pretrained: Checkpoint) -> int:
    """Copy every overlapping tensor from a pretraining checkpoint.

    Returns the number of tensors copied (encoders, interaction and,
    when present, the mapping block).
    """
    own = model.state_dict()
    copied = 0
    for name, tensor in pretrained.model_state.items():
        if name in own and own[name].shape == tensor.shape:
            own[name] = tensor
            copied += 1
    model.load_state_dict(own)
    return copied


def _make_optimizer(model: nn.Module, config: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.AdamW(
        model.parameters(),
        lr=config.learning_rate,
        betas=config.optimizer_betas,
        weight_decay=config.weight_decay,
    )


def _batches(n: int, batch_size: int, generator: torch.Generator):
    perm = torch.randperm(n, generator=generator)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


def _check_loss_finite(loss: torch.Tensor, step: int, detail: str) -> None:
    if not torch.isfinite(loss):
        raise NumericError(f"non-finite loss at step {step}: {detail}")


@dataclass
class TrainResult:
    """Outcome of one training run."""

    checkpoint: Checkpoint
    best_checkpoint: Checkpoint
    metrics_path: Path | None
    epoch_summary_path: Path | None
    final_loss: float
    epochs_run: int


def _snapshot(model: nn.Module, optimizer: torch.optim.Optimizer):
    return (
        copy.deepcopy(model.state_dict()),
        copy.deepcopy(optimizer.state_dict()),
    )


def pretrain(
    dataset: WindowDataset,
    train_config: TrainConfig,
    encoder_config: EncoderConfig,
    out_dir: str | Path | None = None,
    data_meta: dict | None = None,
    resume_from: Checkpoint | None = None,
) -> TrainResult:
    """Minimize the self-supervised objective over paired windows.

    Writes per-step component losses as ``step<TAB>l_con<TAB>l_orth<TAB>
    l_mapping<TAB>l_pretrain`` plus final/best checkpoints when an output
    directory is given.
    """
    if train_config.phase != "pretrain":
        raise ValidationError("pretrain() requires a pretrain-phase config")
    if len(dataset) == 0:
        raise ValidationError("pretraining dataset is empty")
    if len(dataset) < 2:
        raise ValidationError("the contrastive objective needs at least 2 samples")

    model = PretrainModel(
        encoder_config,
        temperature=train_config.temperature,
        squared_orthogonal=train_config.squared_orthogonal,
    )
    init_parameters(model, train_config.seed)
    optimizer = _make_optimizer(model, train_config)
    generator = torch.Generator().manual_seed(train_config.seed + 1)
    start_epoch = 0
    if resume_from is not None:
        model.load_state_dict(resume_from.model_state)
        optimizer.load_state_dict(resume_from.optimizer_state)
        generator.set_state(resume_from.generator_state)
        start_epoch = resume_from.epoch

    out_dir = Path(out_dir) if out_dir is not None else None
    metrics_path = None
    metrics_handle = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = out_dir / "pretrain_metrics.tsv"
        mode = "a" if resume_from is not None else "w"
        metrics_handle = open(metrics_path, mode)

    steps_per_epoch = (len(dataset) + train_config.batch_size - 1) // train_config.batch_size
    if len(dataset) % train_config.batch_size == 1:
        steps_per_epoch -= 1  # singleton tail batches are skipped
    step = start_epoch * steps_per_epoch
    best_loss = resume_from.best_metric if resume_from is not None else float("inf")
    best_state = _snapshot(model, optimizer)
    best_epoch_end_gen = generator.get_state()
    epoch_loss = float("nan")
    epochs_run = 0
    try:
        for epoch in range(start_epoch, train_config.max_epochs):
            model.train()
            epoch_losses = []
            for index in _batches(len(dataset), train_config.batch_size, generator):
                contact, track, _ = dataset.slice(index)
                if contact.shape[0] < 2:
                    continue  # contrastive loss undefined on singleton tail batches
                step += 1
                optimizer.zero_grad()
                loss, report = model.loss(contact, track)
                _check_loss_finite(
                    loss,
                    step,
                    f"l_con={report.contrastive:.6g} l_orth={report.orthogonal:.6g} "
                    f"l_mapping={report.mapping:.6g}",
                )
                loss.backward()
                if train_config.grad_clip_norm is not None:
                    nn.utils.clip_grad_norm_(model.parameters(), train_config.grad_clip_norm)
                optimizer.step()
                epoch_losses.append(report.total)
                if metrics_handle is not None:
                    metrics_handle.write(
                        f"{step}\t{report.contrastive:.8f}\t{report.orthogonal:.8f}"
                        f"\t{report.mapping:.8f}\t{report.total:.8f}\n"
                    )
            epoch_loss = float(np.mean(epoch_losses))
            epochs_run = epoch + 1
            if epoch_loss < best_loss:
                best_loss = epoch_loss
                best_state = _snapshot(model, optimizer)
                best_epoch_end_gen = generator.get_state()
    finally:
        if metrics_handle is not None:
            metrics_handle.close()

    final = Checkpoint(
        kind="pretrain",
        encoder_config=encoder_config,
        train_config=train_config,
        model_state=model.state_dict(),
        optimizer_state=optimizer.state_dict(),
        epoch=epochs_run,
        best_metric=best_loss,
        generator_state=generator.get_state(),
        data_meta=data_meta or {},
    )
    best = Checkpoint(
        kind="pretrain",
        encoder_config=encoder_config,
        train_config=train_config,
        model_state=best_state[0],
        optimizer_state=best_state[1],
        epoch=epochs_run,
        best_metric=best_loss,
        generator_state=best_epoch_end_gen,
        data_meta=data_meta or {},
    )
    if out_dir is not None:
        save_checkpoint(final, out_dir / "final.pt")
        save_checkpoint(best, out_dir / "best.pt")
    return TrainResult(final, best, metrics_path, None, epoch_loss, epochs_run)


def evaluate_loss(model: TaskModel, dataset: WindowDataset, batch_size: int = 64) -> float:
    """Mean task loss over a dataset, eval mode, no gradients."""
    model.eval()
    total = 0.0
    count = 0
    with torch.no_grad():
        for start in range(0, len(dataset), batch_size):
            index = torch.arange(start, min(start + batch_size, len(dataset)))
            contact, track, target = dataset.slice(index)
            loss, _ = model.loss(contact, track, target)
            total += float(loss) * len(index)
            count += len(index)
    return total / count


def finetune(
    train_dataset: WindowDataset,
    val_dataset: WindowDataset,
    train_config: TrainConfig,
    encoder_config: EncoderConfig,
    pretrained: Checkpoint | None = None,
    out_dir: str | Path | None = None,
    data_meta: dict | None = None,
    resume_from: Checkpoint | None = None,
) -> TrainResult:
    """Task-specific training with validation-loss early stopping.

    Returns the best-validation checkpoint; with ``pretrained`` absent the
    encoders start from fresh seeded initialization.
    """
    if train_config.phase != "finetune":
        raise ValidationError("finetune() requires a finetune-phase config")
    if len(train_dataset) == 0 or len(val_dataset) == 0:
        raise ValidationError("fine-tuning requires non-empty train and validation sets")
    for ds, where in ((train_dataset, "train"), (val_dataset, "validation")):
        if ds.task != train_config.task:
            raise ValidationError(
                f"{where} dataset carries {ds.task!r} targets, config expects "
                f"{train_config.task!r}"
            )

    model = TaskModel(encoder_config, train_config)
    init_parameters(model, train_config.seed)
    if pretrained is not None:
        load_pretrained_weights(model, pretrained)
    optimizer = _make_optimizer(model, train_config)
    generator = torch.Generator().manual_seed(train_config.seed + 1)
    start_epoch = 0
    best_val = float("inf")
    if resume_from is not None:
        model.load_state_dict(resume_from.model_state)
        optimizer.load_state_dict(resume_from.optimizer_state)
        generator.set_state(resume_from.generator_state)
        start_epoch = resume_from.epoch
        best_val = resume_from.best_metric

    out_dir = Path(out_dir) if out_dir is not None else None
    metrics_path = summary_path = None
    metrics_handle = summary_handle = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = out_dir / "finetune_metrics.tsv"
        summary_path = out_dir / "epoch_summary.tsv"
        mode = "a" if resume_from is not None else "w"
        metrics_handle = open(metrics_path, mode)
        summary_handle = open(summary_path, mode)

    step = 0
    best_state = _snapshot(model, optimizer)
    best_gen_state = generator.get_state()
    best_epoch = start_epoch
    epochs_since_best = 0
    train_loss = float("nan")
    val_loss = float("inf")
    epochs_run = start_epoch
    try:
        for epoch in range(start_epoch, train_config.max_epochs):
            model.train()
            epoch_losses = []
            for index in _batches(len(train_dataset), train_config.batch_size, generator):
                step += 1
                contact, track, target = train_dataset.slice(index)
                optimizer.zero_grad()
                loss, _ = model.loss(contact, track, target)
                _check_loss_finite(loss, step, f"task={train_config.task}")
                loss.backward()
                if train_config.grad_clip_norm is not None:
                    nn.utils.clip_grad_norm_(model.parameters(), train_config.grad_clip_norm)
                optimizer.step()
                epoch_losses.append(float(loss))
                if metrics_handle is not None:
                    metrics_handle.write(f"{step}\t{float(loss):.8f}\n")
            train_loss = float(np.mean(epoch_losses))
            val_loss = evaluate_loss(model, val_dataset, train_config.batch_size)
            epochs_run = epoch + 1
            if summary_handle is not None:
                summary_handle.write(f"{epoch + 1}\t{train_loss:.8f}\t{val_loss:.8f}\n")
            if val_loss < best_val:
                best_val = val_loss
                best_state = _snapshot(model, optimizer)
                best_gen_state = generator.get_state()
                best_epoch = epoch + 1
                epochs_since_best = 0
            else:
                epochs_since_best += 1
                if epochs_since_best >= train_config.early_stop_patience:
                    break
    finally:
        if metrics_handle is not None:
            metrics_handle.close()
        if summary_handle is not None:
            summary_handle.close()

    meta = data_meta or {}
    final = Checkpoint(
        kind=train_config.task,
        encoder_config=encoder_config,
        train_config=train_config,
        model_state=model.state_dict(),
        optimizer_state=optimizer.state_dict(),
        epoch=epochs_run,
        best_metric=best_val,
        generator_state=generator.get_state(),
        data_meta=meta,
    )
    best = Checkpoint(
        kind=train_config.task,
        encoder_config=encoder_config,
        train_config=train_config,
        model_state=best_state[0],
        optimizer_state=best_state[1],
        epoch=best_epoch,
        best_metric=best_val,
        generator_state=best_gen_state,
        data_meta=meta,
    )
    if out_dir is not None:
        save_checkpoint(final, out_dir / "final.pt")
        save_checkpoint(best, out_dir / "best.pt")
    return TrainResult(final, best, metrics_path, summary_path, train_loss, epochs_run)


def predict(
    checkpoint: Checkpoint,
    dataset: WindowDataset,
    input_mode: str | None = None,
    batch_size: int = 64,
) -> np.ndarray:
    """Deterministic batched inference with an optional input-mode override."""
    if checkpoint.kind == "pretrain":
        raise ValidationError("prediction requires a task checkpoint, not a pretraining one")
    model = build_model(checkpoint)
    assert isinstance(model, TaskModel)
    mode = input_mode or checkpoint.train_config.input_mode
    if mode != "bimodal" and mode not in INPUT_MODES:
        raise ValidationError(f"unknown input mode {mode!r}")
    if mode == "infer_missing_hic" and model.mapping is None:
        raise ValidationError("checkpoint has no mapping block; cannot infer the contact stream")
    model.eval()
    outputs = []
    with torch.no_grad():
        for start in range(0, len(dataset), batch_size):
            index = torch.arange(start, min(start + batch_size, len(dataset)))
            contact, track, _ = dataset.slice(index)
            outputs.append(model(contact, track, input_mode=mode).numpy())
    return np.concatenate(outputs, axis=0)
