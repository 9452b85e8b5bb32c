"""Episodic training of the stub encoder with decoupled-weight-decay Adam.

One optimizer step per episode: forward, loss, analytic backward to the
representation level, then the linear chain through mean pooling and the stub
encoder down to the mask vectors (and token embeddings when the token state
is learnable).  Model selection is by validation Macro-F1.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .encoder import TOKEN_STATE_LEARNABLE, StubEncoder
from .episodes import episode_seed, mix64, sample_episode
from .errors import FormatError, ShapeError, TrainingError
from .evalharness import EvalProtocol, evaluate
from .inference import ThresholdParams
from .model import backward_episode, encode_episode, forward_episode, loss_from_forward
from .numerics import DEFAULT_EPS

CKPT_FORMAT = "lgp-ckpt"
CKPT_VERSION = 1

_SALT_TRAIN = 0x545241494E
_SALT_VAL = 0x56414C


@dataclass(frozen=True)
class OptimizerParams:
    lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01


class AdamW:
    """Decoupled weight decay Adam over named numpy parameters."""

    def __init__(self, params: OptimizerParams):
        self.hp = params
        self.state: dict[str, dict] = {}

    def step(self, name: str, param: np.ndarray, grad: np.ndarray) -> None:
        """One bias-corrected update, in place on ``param``."""
        if param.shape != grad.shape:
            raise ShapeError(f"param {name}: shape {param.shape} vs grad {grad.shape}")
        st = self.state.get(name)
        if st is None:
            st = {"step": 0, "m": np.zeros_like(param), "v": np.zeros_like(param)}
            self.state[name] = st
        hp = self.hp
        st["step"] += 1
        t = st["step"]
        m, v = st["m"], st["v"]
        m *= hp.beta1
        m += (1.0 - hp.beta1) * grad
        v *= hp.beta2
        v += (1.0 - hp.beta2) * grad * grad
        m_hat = m / (1.0 - hp.beta1**t)
        v_hat = v / (1.0 - hp.beta2**t)
        param -= hp.lr * m_hat / (np.sqrt(v_hat) + hp.eps)
        param -= hp.lr * hp.weight_decay * param


def adamw_step(param, grad, state: dict, hp: OptimizerParams):
    """Functional single-parameter update; returns (new_param, new_state)."""
    param = np.array(param, dtype=np.float64)
    opt = AdamW(hp)
    if state:
        opt.state["p"] = {
            "step": state["step"],
            "m": np.array(state["m"], dtype=np.float64),
            "v": np.array(state["v"], dtype=np.float64),
        }
    opt.step("p", param, np.asarray(grad, dtype=np.float64))
    return param, opt.state["p"]


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def _to_hex(arr: np.ndarray) -> str:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes().hex()


def _from_hex(blob: str, shape) -> np.ndarray:
    arr = np.frombuffer(bytes.fromhex(blob), dtype="<f8").copy()
    return arr.reshape(shape)


@dataclass
class Checkpoint:
    d: int
    m: int
    seed: int
    epoch: int
    token_state: str
    mask_tokens: np.ndarray
    trained_tokens: dict
    optimizer_state: dict
    config: dict = field(default_factory=dict)

    def build_encoder(self) -> StubEncoder:
        enc = StubEncoder(d=self.d, m=self.m, seed=self.seed, token_state=self.token_state)
        enc.mask_tokens = self.mask_tokens.copy()
        enc.load_trained_tokens(self.trained_tokens)
        return enc


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    payload = {
        "format": CKPT_FORMAT,
        "version": CKPT_VERSION,
        "d": ckpt.d,
        "m": ckpt.m,
        "seed": ckpt.seed,
        "epoch": ckpt.epoch,
        "token_state": ckpt.token_state,
        "mask_tokens": _to_hex(ckpt.mask_tokens),
        "trained_tokens": {tok: _to_hex(vec) for tok, vec in ckpt.trained_tokens.items()},
        "optimizer": {
            name: {"step": st["step"], "m": _to_hex(st["m"]), "v": _to_hex(st["v"])}
            for name, st in ckpt.optimizer_state.items()
        },
        "config": ckpt.config,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> Checkpoint:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid checkpoint JSON: {exc}") from exc
    if payload.get("format") != CKPT_FORMAT or payload.get("version") != CKPT_VERSION:
        raise FormatError(
            f"{path}: expected {CKPT_FORMAT} v{CKPT_VERSION}, got "
            f"{payload.get('format')!r} v{payload.get('version')!r}"
        )
    d, m = int(payload["d"]), int(payload["m"])
    mask = _from_hex(payload["mask_tokens"], (m, d))
    trained = {tok: _from_hex(blob, (d,)) for tok, blob in payload["trained_tokens"].items()}
    opt_state = {}
    for name, st in payload.get("optimizer", {}).items():
        shape = (m, d) if name == "mask_tokens" else (d,)
        opt_state[name] = {
            "step": int(st["step"]),
            "m": _from_hex(st["m"], shape),
            "v": _from_hex(st["v"], shape),
        }
    return Checkpoint(
        d=d,
        m=m,
        seed=int(payload["seed"]),
        epoch=int(payload["epoch"]),
        token_state=str(payload["token_state"]),
        mask_tokens=mask,
        trained_tokens=trained,
        optimizer_state=opt_state,
        config=payload.get("config", {}),
    )


# ---------------------------------------------------------------------------
# Trainer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainProtocol:
    n_way: int = 5
    k_shot: int = 5
    n_query: int = 5
    tasks_per_epoch: int = 800
    epochs: int = 5
    val_episodes: int = 100


@dataclass
class TrainResult:
    log: list  # per-epoch dicts: epoch, mean_loss, val_f1, val_auc
    best_epoch: int
    best_val_f1: float
    checkpoint: Checkpoint


class Trainer:
    """Single-writer training loop over a stub encoder."""

    def __init__(self, encoder: StubEncoder, provider, templates, corpus, split,
                 optimizer: OptimizerParams = OptimizerParams(),
                 protocol: TrainProtocol = TrainProtocol(),
                 threshold: ThresholdParams = ThresholdParams(),
                 seed: int = 0, eps: float = DEFAULT_EPS):
        self.encoder = encoder
        self.provider = provider
        self.templates = templates
        self.corpus = corpus
        self.split = split
        self.protocol = protocol
        self.threshold = threshold
        self.seed = seed
        self.eps = eps
        self.optimizer = AdamW(optimizer)

    def train_episode(self, episode) -> float:
        """Forward, backward, and one optimizer step; returns the episode loss."""
        batch = encode_episode(self.encoder, self.provider, self.templates, episode)
        fwd = forward_episode(batch.V, batch.vc, batch.vq, self.eps)
        loss = loss_from_forward(fwd, batch.labels)
        if not math.isfinite(loss):
            raise TrainingError(f"non-finite loss {loss!r} on episode {episode.classes}")
        grads = backward_episode(fwd, batch.labels)

        m = self.encoder.m
        mask_grad = np.zeros_like(self.encoder.mask_tokens)
        token_grads: dict[str, np.ndarray] = {}

        def accumulate(prompt, rep_grad):
            dh = np.repeat(rep_grad[None, :] / m, m, axis=0)
            sg = self.encoder.grad(prompt, dh)
            nonlocal mask_grad
            mask_grad += sg.mask_tokens
            for tok, g in sg.token_table.items():
                prev = token_grads.get(tok)
                if prev is None:
                    token_grads[tok] = g
                else:
                    prev += g

        for ci, row in enumerate(batch.support_prompts):
            for ki, prompt in enumerate(row):
                accumulate(prompt, grads.dV[ci, ki])
        for ci, prompt in enumerate(batch.description_prompts):
            accumulate(prompt, grads.dvc[ci])
        for qi, prompt in enumerate(batch.query_prompts):
            accumulate(prompt, grads.dvq[qi])

        self.optimizer.step("mask_tokens", self.encoder.mask_tokens, mask_grad)
        for tok, g in token_grads.items():
            self.optimizer.step(f"tok:{tok}", self.encoder.trainable_token(tok), g)
        return loss

    def checkpoint(self, epoch: int, config: dict | None = None) -> Checkpoint:
        return Checkpoint(
            d=self.encoder.d,
            m=self.encoder.m,
            seed=self.encoder.seed,
            epoch=epoch,
            token_state=self.encoder.token_state,
            mask_tokens=self.encoder.mask_tokens.copy(),
            trained_tokens={t: v.copy() for t, v in self.encoder.trained_tokens.items()},
            optimizer_state={
                name: {"step": st["step"], "m": st["m"].copy(), "v": st["v"].copy()}
                for name, st in self.optimizer.state.items()
            },
            config=dict(config or {}),
        )

    def restore(self, ckpt: Checkpoint) -> None:
        if (ckpt.d, ckpt.m) != (self.encoder.d, self.encoder.m):
            raise FormatError(
                f"checkpoint is d={ckpt.d} m={ckpt.m}, trainer has "
                f"d={self.encoder.d} m={self.encoder.m}"
            )
        self.encoder.mask_tokens = ckpt.mask_tokens.copy()
        self.encoder.load_trained_tokens(ckpt.trained_tokens)
        self.optimizer.state = {
            name: {"step": st["step"], "m": st["m"].copy(), "v": st["v"].copy()}
            for name, st in ckpt.optimizer_state.items()
        }

    def validate(self) -> tuple:
        proto = EvalProtocol(
            n_way=self.protocol.n_way,
            k_shot=self.protocol.k_shot,
            n_query=self.protocol.n_query,
            episodes=self.protocol.val_episodes,
            seed=mix64(self.seed ^ _SALT_VAL),
        )
        report = evaluate(self.encoder, self.provider, self.templates, self.corpus,
                          self.split.val, proto, self.threshold, eps=self.eps)
        return report.macro_f1, report.auc

    def train(self, config: dict | None = None, log_fn=None) -> TrainResult:
        log = []
        best = None
        for epoch in range(self.protocol.epochs):
            stream_seed = mix64(self.seed ^ _SALT_TRAIN ^ (epoch * 0x9E3779B97F4A7C15))
            losses = []
            for index in range(self.protocol.tasks_per_epoch):
                rng = np.random.Generator(np.random.PCG64(episode_seed(stream_seed, index)))
                episode = sample_episode(rng, self.corpus, self.split.train,
                                         self.protocol.n_way, self.protocol.k_shot,
                                         self.protocol.n_query)
                losses.append(self.train_episode(episode))
            val_f1, val_auc = self.validate()
            entry = {
                "epoch": epoch,
                "mean_loss": float(np.mean(losses)),
                "val_f1": val_f1,
                "val_auc": val_auc,
            }
            log.append(entry)
            if log_fn is not None:
                log_fn(entry)
            if best is None or val_f1 > best[1]:
                best = (epoch, val_f1, self.checkpoint(epoch, config))
        best_epoch, best_f1, best_ckpt = best
        return TrainResult(log=log, best_epoch=best_epoch, best_val_f1=best_f1,
                           checkpoint=best_ckpt)
