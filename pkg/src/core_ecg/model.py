"""Student encoder, time/latent decoders, projection heads, EMA teacher and classifier.

Tokens are (lead, time-patch) cells of the ``C x N`` patch grid, ordered
lead-major (``lead * N + patch``). Each token is embedded by a 1-D
convolution with kernel and stride equal to the patch length, then gets a
learned lead embedding and a fixed sinusoidal time-position embedding.

Batches are ``[B, ...]``. The encoder sees a different number of visible
tokens per sample; these are padded to the batch maximum and padded keys
are excluded from attention with a large negative bias.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .autodiff import (
    Tensor,
    add,
    concat,
    conv1d,
    gelu,
    index_select,
    layer_norm,
    matmul,
    mean_pool,
    mul,
    reshape,
    scale,
    scatter,
    softmax,
)
from .fda import FrequencyImportance
from .stdm import MaskPlan

_NEG = -1e9


@dataclass
class ModelConfig:
    dim: int = 256
    heads: int = 4
    enc_layers: int = 10
    latent_dec_layers: int = 8
    time_dec_layers: int = 10
    patch_len: int = 75
    n_leads: int = 12
    n_patches: int = 30
    proj_hidden: int = 256
    proj_out: int = 128
    mlp_ratio: int = 4

    def __post_init__(self):
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")

    @classmethod
    def toy(cls, **overrides) -> "ModelConfig":
        base = dict(dim=32, heads=2, enc_layers=2, latent_dec_layers=2, time_dec_layers=2)
        base.update(overrides)
        return cls(**base)

    @property
    def signal_len(self) -> int:
        return self.n_patches * self.patch_len

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def sinusoidal_table(n: int, dim: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(dim // 2)[None, :]
    angle = pos / np.power(10000.0, 2 * i / dim)
    table = np.zeros((n, dim))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)[:, : dim - dim // 2]
    return table


# --------------------------------------------------------------- parameters


def _xavier(rng, fan_in, fan_out, shape=None):
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, shape or (fan_in, fan_out))


def _block_params(rng, prefix: str, dim: int, ratio: int) -> dict[str, np.ndarray]:
    hid = dim * ratio
    p = {}
    for ln in ("ln1", "ln2"):
        p[f"{prefix}.{ln}.gamma"] = np.ones(dim)
        p[f"{prefix}.{ln}.beta"] = np.zeros(dim)
    for w in ("wq", "wk", "wv", "wo"):
        p[f"{prefix}.attn.{w}"] = _xavier(rng, dim, dim)
        p[f"{prefix}.attn.b{w[1]}"] = np.zeros(dim)
    p[f"{prefix}.mlp.fc1.weight"] = _xavier(rng, dim, hid)
    p[f"{prefix}.mlp.fc1.bias"] = np.zeros(hid)
    p[f"{prefix}.mlp.fc2.weight"] = _xavier(rng, hid, dim)
    p[f"{prefix}.mlp.fc2.bias"] = np.zeros(dim)
    return p


def _stack_params(rng, prefix: str, cfg: ModelConfig, layers: int) -> dict[str, np.ndarray]:
    p = {}
    for i in range(layers):
        p.update(_block_params(rng, f"{prefix}.blocks.{i}", cfg.dim, cfg.mlp_ratio))
    p[f"{prefix}.norm.gamma"] = np.ones(cfg.dim)
    p[f"{prefix}.norm.beta"] = np.zeros(cfg.dim)
    p[f"{prefix}.lead_embed"] = rng.normal(0.0, 0.02, (cfg.n_leads, cfg.dim))
    return p


def init_encoder(rng, cfg: ModelConfig, prefix: str = "encoder") -> dict[str, np.ndarray]:
    p = _stack_params(rng, prefix, cfg, cfg.enc_layers)
    p[f"{prefix}.patch_embed.weight"] = _xavier(rng, cfg.patch_len, cfg.dim, (cfg.patch_len, 1, cfg.dim))
    p[f"{prefix}.patch_embed.bias"] = np.zeros(cfg.dim)
    return p


def init_projection(rng, cfg: ModelConfig, prefix: str = "projection") -> dict[str, np.ndarray]:
    return {
        f"{prefix}.fc1.weight": _xavier(rng, cfg.dim, cfg.proj_hidden),
        f"{prefix}.fc1.bias": np.zeros(cfg.proj_hidden),
        f"{prefix}.fc2.weight": _xavier(rng, cfg.proj_hidden, cfg.proj_out),
        f"{prefix}.fc2.bias": np.zeros(cfg.proj_out),
    }


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> dict[str, np.ndarray]:
    """Fresh student, teacher (exact copy) and FDA weights, keyed by stable names."""
    rng = np.random.default_rng(seed)
    p = init_encoder(rng, cfg)
    td = _stack_params(rng, "time_decoder", cfg, cfg.time_dec_layers)
    td["time_decoder.mask_token"] = rng.normal(0.0, 0.02, cfg.dim)
    td["time_decoder.head.weight"] = _xavier(rng, cfg.dim, cfg.patch_len)
    td["time_decoder.head.bias"] = np.zeros(cfg.patch_len)
    p.update(td)
    ld = _stack_params(rng, "latent_decoder", cfg, cfg.latent_dec_layers)
    ld["latent_decoder.mask_token"] = rng.normal(0.0, 0.02, cfg.dim)
    p.update(ld)
    p.update(init_projection(rng, cfg))
    for name in list(p):
        if name.startswith(("encoder.", "projection.")):
            p[f"teacher.{name}"] = p[name].copy()
    p["fda.W"] = np.zeros((cfg.n_leads, cfg.signal_len // 2 + 1))
    return {k: np.asarray(v, dtype=dtype) for k, v in p.items()}


def is_teacher(name: str) -> bool:
    return name.startswith("teacher.")


@dataclass
class VisibleTokens:
    """Encoder output for a batch of partially visible grids."""

    tokens: Tensor  # [B, Lmax, dim]
    index: list[np.ndarray]  # per sample: flat grid positions of its visible tokens
    valid: np.ndarray  # [B, Lmax] bool
    grid: tuple[int, int]  # (C, N)

    @property
    def positions(self) -> list[list[tuple[int, int]]]:
        N = self.grid[1]
        return [[(int(i // N), int(i % N)) for i in idx] for idx in self.index]


class EmptyVisibleSetError(ValueError):
    pass


class CoReECG:
    """Parameters plus forward passes of every sub-network.

    ``params`` maps names to :class:`Tensor`; teacher entries never require
    gradients. ``lead_ids`` maps the rows of the input grid to rows of the
    lead-embedding tables (a lead subset uses a subset of ids).
    """

    def __init__(self, cfg: ModelConfig, params: dict[str, np.ndarray] | None = None, seed: int = 0,
                 dtype=np.float32, lead_ids=None):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        raw = params if params is not None else init_params(cfg, seed, dtype)
        self.params: dict[str, Tensor] = {
            k: Tensor(np.array(v, dtype=self.dtype), requires_grad=not is_teacher(k), name=k) for k, v in raw.items()
        }
        self.lead_ids = np.arange(cfg.n_leads) if lead_ids is None else np.asarray(lead_ids, dtype=np.int64)
        self.pos_table = sinusoidal_table(cfg.n_patches, cfg.dim).astype(self.dtype)

    # -- parameter bookkeeping -------------------------------------------------

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def trainable(self) -> dict[str, Tensor]:
        return {k: t for k, t in self.params.items() if t.requires_grad}

    def teacher_params(self) -> dict[str, Tensor]:
        return {k: t for k, t in self.params.items() if is_teacher(k)}

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True, prefixes=None) -> None:
        for k, v in state.items():
            if prefixes is not None and not k.startswith(tuple(prefixes)):
                continue
            if k not in self.params:
                if strict:
                    raise KeyError(f"unexpected parameter {k}")
                continue
            if tuple(v.shape) != self.params[k].shape:
                raise ValueError(f"shape mismatch for {k}: checkpoint {tuple(v.shape)} vs model {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=self.dtype)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def fda(self, epsilon: float = 1e-6) -> FrequencyImportance:
        W = self.params["fda.W"]
        return FrequencyImportance(index_select(W, self.lead_ids, axis=0) if len(self.lead_ids) != W.shape[0]
                                   or np.any(self.lead_ids != np.arange(W.shape[0])) else W, epsilon)

    def add_classifier(self, n_classes: int, seed: int = 0) -> None:
        rng = np.random.default_rng(seed)
        self.params["head.weight"] = Tensor(_xavier(rng, self.cfg.dim, n_classes).astype(self.dtype),
                                            requires_grad=True, name="head.weight")
        self.params["head.bias"] = Tensor(np.zeros(n_classes, dtype=self.dtype), requires_grad=True, name="head.bias")

    # -- building blocks -------------------------------------------------------

    def _linear(self, x, prefix: str, weight: str = "weight", bias: str = "bias"):
        return add(matmul(x, self.params[f"{prefix}.{weight}"]), self.params[f"{prefix}.{bias}"])

    def _attention(self, x: Tensor, prefix: str, key_bias: np.ndarray | None) -> Tensor:
        p = self.params
        dim, H = self.cfg.dim, self.cfg.heads
        dh = dim // H
        q = add(matmul(x, p[f"{prefix}.wq"]), p[f"{prefix}.bq"])
        k = add(matmul(x, p[f"{prefix}.wk"]), p[f"{prefix}.bk"])
        v = add(matmul(x, p[f"{prefix}.wv"]), p[f"{prefix}.bv"])
        inv = 1.0 / math.sqrt(dh)
        heads = []
        for h in range(H):
            cols = np.arange(h * dh, (h + 1) * dh)
            qh = index_select(q, cols, axis=-1)
            kh = index_select(k, cols, axis=-1)
            vh = index_select(v, cols, axis=-1)
            s = scale(matmul(qh, kh, transpose_b=True), inv)
            if key_bias is not None:
                s = add(s, key_bias)
            heads.append(matmul(softmax(s, axis=-1), vh))
        o = concat(*heads, axis=-1) if H > 1 else heads[0]
        return add(matmul(o, p[f"{prefix}.wo"]), p[f"{prefix}.bo"])

    def _block(self, x: Tensor, prefix: str, key_bias) -> Tensor:
        p = self.params
        h = layer_norm(x, p[f"{prefix}.ln1.gamma"], p[f"{prefix}.ln1.beta"])
        x = add(x, self._attention(h, f"{prefix}.attn", key_bias))
        h = layer_norm(x, p[f"{prefix}.ln2.gamma"], p[f"{prefix}.ln2.beta"])
        h = gelu(self._linear(h, f"{prefix}.mlp.fc1"))
        return add(x, self._linear(h, f"{prefix}.mlp.fc2"))

    def _stack(self, x: Tensor, prefix: str, layers: int, key_bias=None) -> Tensor:
        for i in range(layers):
            x = self._block(x, f"{prefix}.blocks.{i}", key_bias)
        return layer_norm(x, self.params[f"{prefix}.norm.gamma"], self.params[f"{prefix}.norm.beta"])

    def _embed(self, x_flat, prefix: str, lead_rows: np.ndarray, pos_rows: np.ndarray) -> Tensor:
        """Patch-embed ``x_flat`` ``[B, L * P, 1]`` and add lead/position embeddings for ``[B, L]`` ids."""
        p = self.params
        P = self.cfg.patch_len
        emb = add(conv1d(x_flat, p[f"{prefix}.patch_embed.weight"], stride=P), p[f"{prefix}.patch_embed.bias"])
        B, L = lead_rows.shape
        lead = index_select(p[f"{prefix}.lead_embed"], lead_rows.reshape(-1), axis=0)
        emb = add(emb, reshape(lead, (B, L, self.cfg.dim)))
        return add(emb, self.pos_table[pos_rows])

    def _grid_ids(self, C: int, N: int) -> tuple[np.ndarray, np.ndarray]:
        flat = np.arange(C * N)
        return self.lead_ids[flat // N], flat % N

    def _encode_all(self, x_flat, prefix: str, layers: int, B: int, C: int, N: int) -> Tensor:
        leads, pos = self._grid_ids(C, N)
        emb = self._embed(x_flat, prefix, np.broadcast_to(leads, (B, C * N)), np.broadcast_to(pos, (B, C * N)))
        return self._stack(emb, prefix, layers)

    # -- public forwards -------------------------------------------------------

    def encode_visible(self, patches: np.ndarray, plans) -> VisibleTokens:
        """Encode only the visible cells of ``patches`` (``[B, C, N, P]`` or ``[C, N, P]``)."""
        patches = np.asarray(patches, dtype=self.dtype)
        if patches.ndim == 3:
            patches = patches[None]
        plans = [plans] if isinstance(plans, MaskPlan) else list(plans)
        B, C, N, P = patches.shape
        if len(plans) != B:
            raise ValueError(f"{len(plans)} plans for batch of {B}")
        index = []
        for b, plan in enumerate(plans):
            if plan.shape != (C, N):
                raise ValueError(f"plan {plan.shape} does not match patch grid {(C, N)}")
            idx = plan.visible_index()
            if idx.size == 0:
                raise EmptyVisibleSetError(f"sample {b} has no visible patches")
            index.append(idx)
        Lmax = max(len(i) for i in index)
        flat = patches.reshape(B, C * N, P)
        gathered = np.zeros((B, Lmax, P), dtype=self.dtype)
        valid = np.zeros((B, Lmax), dtype=bool)
        grid_pos = np.zeros((B, Lmax), dtype=np.int64)
        for b, idx in enumerate(index):
            gathered[b, : len(idx)] = flat[b, idx]
            valid[b, : len(idx)] = True
            grid_pos[b, : len(idx)] = idx
        leads = self.lead_ids[grid_pos // N]
        pos = grid_pos % N
        emb = self._embed(gathered.reshape(B, Lmax * P, 1), "encoder", leads, pos)
        key_bias = None
        if not valid.all():
            key_bias = np.where(valid, 0.0, _NEG).astype(self.dtype)[:, None, :]
        z = self._stack(emb, "encoder", self.cfg.enc_layers, key_bias)
        return VisibleTokens(z, index, valid, (C, N))

    def _token_grid(self, z: VisibleTokens, prefix: str) -> Tensor:
        C, N = z.grid
        L = C * N
        B, Lmax, dim = z.tokens.shape
        rows = np.concatenate([b * Lmax + np.arange(len(idx)) for b, idx in enumerate(z.index)])
        dest = np.concatenate([b * L + idx for b, idx in enumerate(z.index)])
        picked = index_select(reshape(z.tokens, (B * Lmax, dim)), rows, axis=0)
        grid = reshape(scatter(picked, dest, size=B * L, axis=0), (B, L, dim))
        hidden = np.ones((B * L, 1), dtype=self.dtype)
        hidden[dest] = 0.0
        grid = add(grid, mul(self.params[f"{prefix}.mask_token"], hidden.reshape(B, L, 1)))
        leads, pos = self._grid_ids(C, N)
        grid = add(grid, index_select(self.params[f"{prefix}.lead_embed"], leads, axis=0))
        return add(grid, self.pos_table[pos])

    def decode_time(self, z: VisibleTokens) -> Tensor:
        """Reconstructed patches ``[B, C, N, P]``; hidden cells carry the time-decoder mask token."""
        C, N = z.grid
        h = self._stack(self._token_grid(z, "time_decoder"), "time_decoder", self.cfg.time_dec_layers)
        out = self._linear(h, "time_decoder.head")
        return reshape(out, (out.shape[0], C, N, self.cfg.patch_len))

    def decode_latent_global(self, z: VisibleTokens) -> Tensor:
        """Mean-pooled latent-decoder output ``[B, dim]``."""
        h = self._stack(self._token_grid(z, "latent_decoder"), "latent_decoder", self.cfg.latent_dec_layers)
        return mean_pool(h, axis=1)

    def project(self, zg: Tensor, prefix: str = "projection") -> Tensor:
        return self._linear(gelu(self._linear(zg, f"{prefix}.fc1")), f"{prefix}.fc2")

    def _as_flat_signal(self, x) -> tuple:
        """Accept ``[B, C, T]`` / ``[B, C, N, P]`` (array or Tensor); return ``([B, C*T, 1], B, C, N)``."""
        if not isinstance(x, Tensor):
            x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 4:
            B, C, N, P = x.shape
        elif x.ndim == 3:
            B, C, T = x.shape
            N = T // self.cfg.patch_len
        else:
            raise ValueError(f"expected batched signal or patches, got shape {x.shape}")
        shape = (B, C * N * self.cfg.patch_len, 1)
        flat = reshape(x, shape) if isinstance(x, Tensor) else x.reshape(shape)
        return flat, B, C, N

    def encode_all(self, x, prefix: str = "encoder") -> Tensor:
        flat, B, C, N = self._as_flat_signal(x)
        return self._encode_all(flat, prefix, self.cfg.enc_layers, B, C, N)

    def teacher_forward(self, x_aug) -> Tensor:
        """Teacher encoder over every token of the augmented view, mean-pooled, then teacher projection."""
        z = self.encode_all(x_aug, "teacher.encoder")
        return self.project(mean_pool(z, axis=1), "teacher.projection")

    def classify(self, x) -> Tensor:
        z = self.encode_all(x, "encoder")
        return self._linear(mean_pool(z, axis=1), "head")

    def ema_update(self, m: float) -> None:
        """``teacher <- m * teacher + (1 - m) * student`` for encoder and projection."""
        if not 0.0 <= m <= 1.0:
            raise ValueError(f"EMA momentum must lie in [0, 1], got {m}")
        for name, t in self.teacher_params().items():
            s = self.params[name[len("teacher."):]].data
            t.data = (m * t.data + (1.0 - m) * s).astype(self.dtype)

    def copy_student_to_teacher(self) -> None:
        self.ema_update(0.0)
