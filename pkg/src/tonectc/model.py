"""Pyramidal BLSTM encoder, per-language per-tier softmax heads, training and decoding."""

from __future__ import annotations

import copy
import dataclasses
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import torch
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from .corpus import Example
from .ctc import BigramLM, beam_decode, ctc_loss, greedy_decode
from .errors import (
    ConfigError,
    DataEmpty,
    DimMismatch,
    FormatError,
    InputTooShort,
    MissingHead,
    TrainingError,
)
from .features import pack_tpf, unpack_tpf
from .kvconfig import format_kv, read_kv
from .tiers import Tier, TierAlphabet, VARIANTS, ModelVariant

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"TONECTC-CKPT"
CHECKPOINT_VERSION = 1
MIN_FRAMES = 4


@dataclass
class TrainConfig:
    variant: int = 1
    input_dim: int = 40
    hidden_dim: int = 64
    fc_dim: int = 64
    num_layers: int = 3
    lr: float = 1.0
    rho: float = 0.95
    eps: float = 1e-6
    batch_size: int = 4
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0
    init_scale: float = 0.1
    tiers: str = ""  # comma-separated override of the variant's tier set

    @property
    def model(self) -> ModelVariant:
        base = VARIANTS[self.variant]
        if not self.tiers:
            return base
        return ModelVariant(base.id, tuple(Tier(t.strip()) for t in self.tiers.split(",")))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: Mapping) -> "TrainConfig":
        kwargs = {}
        fields = {f.name: f for f in dataclasses.fields(cls)}
        for key, raw in values.items():
            if key not in fields:
                raise ConfigError(f"unknown training option {key!r}")
            typ = type(getattr(cls(), key))
            try:
                kwargs[key] = typ(raw)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key}: {raw!r}") from exc
        cfg = cls(**kwargs)
        if cfg.variant not in VARIANTS:
            raise ConfigError(f"variant must be 1-4, got {cfg.variant}")
        return cfg

    @classmethod
    def read(cls, path) -> "TrainConfig":
        return cls.from_dict(read_kv(path))

    def write(self, path) -> None:
        Path(path).write_text(format_kv(self.to_dict()), encoding="utf-8")


def encoded_length(T: int, num_layers: int = 3) -> int:
    n = T
    for _ in range(num_layers - 1):
        n = math.ceil(n / 2)
    return n


def _pyramid(h: torch.Tensor, lens: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Concatenate adjacent frame pairs; odd lengths get a zero frame."""
    B, T, F = h.shape
    if T % 2:
        h = torch.cat([h, h.new_zeros(B, 1, F)], dim=1)
        T += 1
    return h.reshape(B, T // 2, 2 * F), (lens + 1) // 2


class PyramidalEncoder(nn.Module):
    def __init__(self, input_dim: int, hidden_dim: int, fc_dim: int, num_layers: int = 3):
        super().__init__()
        self.layers = nn.ModuleList(
            nn.LSTM(input_dim if i == 0 else 4 * hidden_dim, hidden_dim,
                    batch_first=True, bidirectional=True)
            for i in range(num_layers))
        self.fc = nn.Linear(2 * hidden_dim, fc_dim)

    def forward(self, x: torch.Tensor, lens: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = x
        for i, lstm in enumerate(self.layers):
            if i > 0:
                h, lens = _pyramid(h, lens)
            packed = pack_padded_sequence(h, lens, batch_first=True, enforce_sorted=False)
            out, _ = lstm(packed)
            h, _ = pad_packed_sequence(out, batch_first=True, total_length=h.shape[1])
        return self.fc(h), lens


def head_key(tier: Tier, lang: str) -> str:
    return f"{Tier(tier).value}/{lang}"


class AcousticModel(nn.Module):
    """Shared encoder plus one linear softmax head per (tier, language)."""

    def __init__(self, config: TrainConfig, alphabets: Mapping[tuple[Tier, str], TierAlphabet]):
        super().__init__()
        self.config = config
        self.encoder = PyramidalEncoder(config.input_dim, config.hidden_dim, config.fc_dim,
                                        config.num_layers)
        self.alphabets: dict[tuple[Tier, str], TierAlphabet] = {}
        self.heads = nn.ModuleDict()
        for (tier, lang), alpha in sorted(alphabets.items(), key=lambda kv: head_key(*kv[0])):
            if lang == "universal" or tier not in config.model.tiers:
                continue
            self.add_head(alpha)

    def add_head(self, alphabet: TierAlphabet) -> nn.Linear:
        head = nn.Linear(self.config.fc_dim, len(alphabet))
        self.heads[head_key(alphabet.tier, alphabet.lang)] = head
        self.alphabets[(alphabet.tier, alphabet.lang)] = alphabet
        return head

    def head(self, tier: Tier, lang: str) -> nn.Linear:
        key = head_key(tier, lang)
        if key not in self.heads:
            raise MissingHead(lang, Tier(tier).value)
        return self.heads[key]

    @property
    def languages(self) -> list[str]:
        return sorted({lang for _, lang in self.alphabets})

    def encoder_parameters(self):
        return self.encoder.parameters()

    def encode(self, x: torch.Tensor, lens: torch.Tensor):
        if int(lens.min()) < MIN_FRAMES:
            raise InputTooShort(f"need at least {MIN_FRAMES} frames, got {int(lens.min())}")
        if x.shape[-1] != self.config.input_dim:
            raise DimMismatch(f"features have {x.shape[-1]} dims, model expects {self.config.input_dim}")
        return self.encoder(x, lens)


def head_logits(hidden, weight, bias):
    """Per-frame ``hidden @ weight.T + bias`` for one softmax head."""
    hidden = np.asarray(hidden)
    weight = np.asarray(weight)
    if hidden.shape[-1] != weight.shape[1] or len(bias) != weight.shape[0]:
        raise DimMismatch(f"hidden width {hidden.shape[-1]} vs head {weight.shape}")
    return hidden @ weight.T + np.asarray(bias)


class _CTCLoss(torch.autograd.Function):
    @staticmethod
    def forward(ctx, logits, labels):
        loss, grad = ctc_loss(logits.detach().cpu().double().numpy(), labels)
        if not np.isfinite(loss):
            loss = float("inf")
        ctx.save_for_backward(torch.as_tensor(grad, dtype=logits.dtype))
        return logits.new_tensor(loss)

    @staticmethod
    def backward(ctx, grad_out):
        (grad,) = ctx.saved_tensors
        return grad_out * grad, None


def tier_ctc(logits: torch.Tensor, labels: np.ndarray) -> torch.Tensor:
    return _CTCLoss.apply(logits, labels)


def _batch_tensor(examples: Sequence[Example], dtype=torch.float32):
    lens = torch.tensor([len(e.features) for e in examples], dtype=torch.long)
    F = examples[0].features.shape[1]
    x = torch.zeros(len(examples), int(lens.max()), F, dtype=dtype)
    for i, e in enumerate(examples):
        x[i, : len(e.features)] = torch.as_tensor(e.features, dtype=dtype)
    return x, lens


@dataclass
class BatchLoss:
    total: torch.Tensor
    per_tier: dict[Tier, float]
    count: int
    skipped: int


def batch_loss(model: AcousticModel, examples: Sequence[Example],
               tiers: Sequence[Tier] | None = None) -> BatchLoss:
    """Sum over utterances of the sum of tier CTC losses (equal tier weights).

    Unalignable (tier, utterance) pairs are skipped and counted.
    """
    tiers = list(tiers or model.config.model.tiers)
    dtype = next(model.parameters()).dtype
    x, lens = _batch_tensor(examples, dtype)
    hidden, out_lens = model.encode(x, lens)
    total = hidden.new_zeros(())
    per_tier = {t: 0.0 for t in tiers}
    skipped = 0
    for i, ex in enumerate(examples):
        h = hidden[i, : int(out_lens[i])]
        for tier in tiers:
            head = model.head(tier, ex.lang)
            labels = model.alphabets[(tier, ex.lang)].encode(ex.tiers[tier])
            loss = tier_ctc(head(h), labels)
            if not torch.isfinite(loss):
                skipped += 1
                continue
            total = total + loss
            per_tier[tier] += float(loss.detach())
    return BatchLoss(total, per_tier, len(examples), skipped)


def make_batches(examples: Sequence[Example], batch_size: int, rng: np.random.Generator) -> list[list[Example]]:
    """Language-homogeneous batches in a seeded random order."""
    batches = []
    for lang in sorted({e.lang for e in examples}):
        group = [e for e in examples if e.lang == lang]
        order = rng.permutation(len(group))
        for s in range(0, len(group), batch_size):
            batches.append([group[j] for j in order[s:s + batch_size]])
    return [batches[j] for j in rng.permutation(len(batches))]


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_loss: float
    per_tier: dict[str, float]


@dataclass
class TrainResult:
    model: AcousticModel
    optimizer_state: dict
    history: list[EpochRecord]
    best_epoch: int
    best_dev: float


def evaluate_loss(model: AcousticModel, examples: Sequence[Example], batch_size: int = 16) -> float:
    """Mean total loss per utterance."""
    if not examples:
        return float("nan")
    model.eval()
    total = 0.0
    count = 0
    with torch.no_grad():
        for lang in sorted({e.lang for e in examples}):
            group = [e for e in examples if e.lang == lang]
            for s in range(0, len(group), batch_size):
                bl = batch_loss(model, group[s:s + batch_size])
                total += float(bl.total.detach())
                count += bl.count
    return total / count


def fit(model: AcousticModel, train: Sequence[Example], dev: Sequence[Example] | None,
        config: TrainConfig, parameters: Iterable[nn.Parameter] | None = None,
        max_epochs: int | None = None, log: Callable[[str], None] | None = None) -> TrainResult:
    """Adadelta with early stopping on dev loss; returns the best-dev model.

    ``parameters`` restricts which tensors are optimized (the rest stay frozen).
    Running out of epochs is not an error: the best model so far is returned.
    """
    if not train:
        raise DataEmpty("no training utterances")
    max_epochs = config.max_epochs if max_epochs is None else max_epochs
    params = list(parameters) if parameters is not None else list(model.parameters())
    trainable = {id(p) for p in params}
    frozen = [p for p in model.parameters() if id(p) not in trainable]
    for p in frozen:
        p.requires_grad_(False)
    opt = torch.optim.Adadelta(params, lr=config.lr, rho=config.rho, eps=config.eps)
    rng = np.random.default_rng(config.seed)
    dev = dev if dev else train
    best_state = copy.deepcopy(model.state_dict())
    best_opt = copy.deepcopy(opt.state_dict())
    best_dev = evaluate_loss(model, dev)
    best_epoch = 0
    history: list[EpochRecord] = []
    bad = 0
    try:
        for epoch in range(1, max_epochs + 1):
            model.train()
            total, count, skipped = 0.0, 0, 0
            per_tier: dict[str, float] = {}
            for batch in make_batches(train, config.batch_size, rng):
                opt.zero_grad()
                bl = batch_loss(model, batch)
                if torch.isnan(bl.total):
                    raise TrainingError(f"loss became NaN in epoch {epoch}")
                if bl.total.requires_grad:
                    (bl.total / bl.count).backward()
                    opt.step()
                total += float(bl.total.detach())
                count += bl.count
                skipped += bl.skipped
                for t, v in bl.per_tier.items():
                    per_tier[t.value] = per_tier.get(t.value, 0.0) + v
            if skipped == count * len(model.config.model.tiers):
                raise TrainingError("no training utterance is long enough to align its transcripts")
            dev_loss = evaluate_loss(model, dev)
            rec = EpochRecord(epoch, total / count, dev_loss, {k: v / count for k, v in per_tier.items()})
            history.append(rec)
            if log:
                log(f"epoch {epoch}: train {rec.train_loss:.4f} dev {dev_loss:.4f}")
            if dev_loss < best_dev:
                best_dev, best_epoch, bad = dev_loss, epoch, 0
                best_state = copy.deepcopy(model.state_dict())
                best_opt = copy.deepcopy(opt.state_dict())
            else:
                bad += 1
                if bad >= config.patience:
                    break
    finally:
        for p in frozen:
            p.requires_grad_(True)
    model.load_state_dict(best_state)
    return TrainResult(model, best_opt, history, best_epoch, best_dev)


def init_model(config: TrainConfig, alphabets) -> AcousticModel:
    torch.manual_seed(config.seed)
    model = AcousticModel(config, alphabets)
    if config.init_scale > 0:
        with torch.no_grad():
            for p in model.parameters():
                p.uniform_(-config.init_scale, config.init_scale)
    return model


def train_lms(model: AcousticModel, examples: Sequence[Example]) -> dict[tuple[Tier, str], BigramLM]:
    """Add-one bigram per (tier, language) over training transcripts."""
    lms = {}
    for (tier, lang), alpha in sorted(model.alphabets.items(), key=lambda kv: head_key(*kv[0])):
        seqs = [alpha.encode(e.tiers[tier]) for e in examples if e.lang == lang and tier in e.tiers]
        lms[(tier, lang)] = BigramLM.train(seqs, len(alpha))
    return lms


@dataclass
class Checkpoint:
    model: AcousticModel
    lms: dict[tuple[Tier, str], BigramLM] = field(default_factory=dict)
    optimizer_state: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def config(self) -> TrainConfig:
        return self.model.config


def train(train_examples: Sequence[Example], dev_examples: Sequence[Example] | None,
          alphabets, config: TrainConfig, log=None) -> Checkpoint:
    if not train_examples:
        raise DataEmpty("no training utterances")
    model = init_model(config, alphabets)
    res = fit(model, train_examples, dev_examples, config, log=log)
    meta = {"best_epoch": res.best_epoch, "best_dev": res.best_dev,
            "history": [dataclasses.asdict(h) for h in res.history]}
    return Checkpoint(model, train_lms(model, train_examples), res.optimizer_state, meta)


@dataclass
class DecodeOptions:
    beam_width: int = 25
    lm_weight: float = 0.1
    use_lm: bool = True
    greedy: bool = False


def utterance_logits(model: AcousticModel, examples: Sequence[Example], tiers: Sequence[Tier],
                     batch_size: int = 16) -> dict[str, dict[Tier, np.ndarray]]:
    model.eval()
    out = {}
    with torch.no_grad():
        for s in range(0, len(examples), batch_size):
            batch = list(examples[s:s + batch_size])
            for ex in batch:
                for tier in tiers:
                    model.head(tier, ex.lang)
            x, lens = _batch_tensor(batch, next(model.parameters()).dtype)
            hidden, out_lens = model.encode(x, lens)
            for i, ex in enumerate(batch):
                h = hidden[i, : int(out_lens[i])]
                out[ex.utt_id] = {t: model.head(t, ex.lang)(h).double().numpy() for t in tiers}
    return out


def evaluate(ckpt: Checkpoint, examples: Sequence[Example],
             options: DecodeOptions | None = None) -> dict[Tier, dict[str, list[str]]]:
    """Decode every active tier of every utterance into symbol strings."""
    options = options or DecodeOptions()
    model = ckpt.model
    tiers = model.config.model.tiers
    logits = utterance_logits(model, examples, tiers)
    hyps: dict[Tier, dict[str, list[str]]] = {t: {} for t in tiers}
    for ex in examples:
        for tier in tiers:
            alpha = model.alphabets[(tier, ex.lang)]
            L = logits[ex.utt_id][tier]
            if options.greedy:
                labels = greedy_decode(L)
            else:
                lm = ckpt.lms.get((tier, ex.lang)) if options.use_lm else None
                labels = beam_decode(L, lm, options.beam_width, options.lm_weight if lm else 0.0)
            hyps[tier][ex.utt_id] = alpha.decode(labels)
    return hyps


# --- checkpoint file ---------------------------------------------------------

def _alphabet_key(tier: Tier, lang: str) -> str:
    return head_key(tier, lang)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    """Versioned header, JSON manifest of (name, shape) entries, then TPF1 blocks in order."""
    entries = []
    blocks = []

    def add(name, tensor):
        arr = np.asarray(tensor.detach().cpu() if torch.is_tensor(tensor) else tensor, dtype=np.float32)
        entries.append({"name": name, "shape": list(arr.shape)})
        blocks.append(pack_tpf(arr.reshape(1, -1) if arr.ndim != 2 else arr))

    for name, t in ckpt.model.state_dict().items():
        add("param/" + name, t)
    for (tier, lang), lm in sorted(ckpt.lms.items(), key=lambda kv: head_key(*kv[0])):
        add(f"lm/{head_key(tier, lang)}", lm.log_probs)
    opt_meta = {}
    if ckpt.optimizer_state:
        state = ckpt.optimizer_state.get("state", {})
        opt_meta = {"param_groups": ckpt.optimizer_state.get("param_groups", []), "steps": {}}
        for idx in sorted(state):
            for key, val in sorted(state[idx].items()):
                if torch.is_tensor(val) and val.dim() > 0:
                    add(f"opt/{idx}/{key}", val)
                else:
                    opt_meta["steps"][f"{idx}/{key}"] = float(val)
    manifest = {
        "version": CHECKPOINT_VERSION,
        "config": ckpt.config.to_dict(),
        "alphabets": {_alphabet_key(t, l): list(a.symbols)
                      for (t, l), a in sorted(ckpt.model.alphabets.items(), key=lambda kv: head_key(*kv[0]))},
        "entries": entries,
        "optimizer": opt_meta,
        "meta": ckpt.meta,
    }
    header = json.dumps(manifest, ensure_ascii=False, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        f.write(header)
        for b in blocks:
            f.write(b)


def load_checkpoint(path) -> Checkpoint:
    buf = Path(path).read_bytes()
    if not buf.startswith(CHECKPOINT_MAGIC):
        raise FormatError(f"{path}: not a checkpoint")
    off = len(CHECKPOINT_MAGIC)
    version, hlen = struct.unpack_from("<II", buf, off)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    off += 8
    manifest = json.loads(buf[off:off + hlen].decode("utf-8"))
    off += hlen
    arrays = {}
    for entry in manifest["entries"]:
        data, off = unpack_tpf(buf, off)
        arrays[entry["name"]] = data.reshape(entry["shape"])
    if off != len(buf):
        raise FormatError(f"{path}: trailing bytes")
    config = TrainConfig.from_dict(manifest["config"])
    alphabets = {}
    for key, symbols in manifest["alphabets"].items():
        tier, lang = key.split("/", 1)
        alphabets[(Tier(tier), lang)] = TierAlphabet(Tier(tier), lang, tuple(symbols))
    model = AcousticModel(config, {})
    for (tier, lang), alpha in sorted(alphabets.items(), key=lambda kv: head_key(*kv[0])):
        model.add_head(alpha)
    state = {name[len("param/"):]: torch.from_numpy(a.copy()) for name, a in arrays.items()
             if name.startswith("param/")}
    model.load_state_dict(state)
    lms = {}
    for name, a in arrays.items():
        if name.startswith("lm/"):
            tier, lang = name[3:].split("/", 1)
            lms[(Tier(tier), lang)] = BigramLM(a.astype(np.float64))
    opt_state = {}
    om = manifest.get("optimizer") or {}
    if om:
        state: dict[int, dict] = {}
        for name, a in arrays.items():
            if name.startswith("opt/"):
                _, idx, key = name.split("/", 2)
                state.setdefault(int(idx), {})[key] = torch.from_numpy(a.copy())
        for k, v in om.get("steps", {}).items():
            idx, key = k.split("/", 1)
            state.setdefault(int(idx), {})[key] = torch.tensor(v)
        opt_state = {"state": state, "param_groups": om.get("param_groups", [])}
    return Checkpoint(model, lms, opt_state, manifest.get("meta", {}))
