"""Model configuration and the named parameter set.

Every trainable array has a stable dotted name (``enc.tree.UL_z``,
``dec.att.V_a``, ...) used for checkpointing, optimizer state, and gradient
maps. Weight matrices draw from per-name seeded substreams of one master
seed; biases start at zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .optim import derive_seed, init_params, zeros
from .tape import Param

BETA_MODES = ("gating", "fixed:0.0", "fixed:0.5", "fixed:1.0", "unweighted")

GATE_NAMES = ("Wz", "Uz", "bz", "Wr", "Ur", "br", "Wh", "Uh", "bh")


class ConfigError(ValueError):
    """Carries every validation problem at once."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class UnknownTokenIdError(ValueError):
    pass


def beta_fixed_value(beta_mode):
    """The constant β of a fixed mode, or None for gating/unweighted."""
    if beta_mode.startswith("fixed:"):
        return float(beta_mode.split(":", 1)[1])
    return None


@dataclass
class ModelConfig:
    """Architecture hyperparameters.

    Desk-scale defaults; a full research-scale configuration (d_emb=620,
    d=1000, vocab 40k) is documented in the config template but impractical
    without a corpus of millions of sentence pairs.
    """

    d_emb: int = 32
    d: int = 64
    a: int = 0       # attention hidden size; 0 means "same as d"
    d_c: int = 0     # composite state size; 0 means "same as d"
    beta_mode: str = "gating"
    attend_eos: bool = True
    backward_leaf: bool = True
    top_down: bool = True

    def __post_init__(self):
        if self.a == 0:
            self.a = self.d
        if self.d_c == 0:
            self.d_c = self.d

    def validate(self):
        problems = []
        for name in ("d_emb", "d", "a", "d_c"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1")
        if self.backward_leaf and self.d % 2 != 0:
            problems.append("d must be even (forward/backward halves each d/2)")
        if self.beta_mode not in BETA_MODES:
            problems.append(
                f"beta_mode must be one of {'|'.join(BETA_MODES)}, "
                f"got {self.beta_mode!r}"
            )
        if problems:
            raise ConfigError(problems)
        return self


class Model:
    """Named parameters plus the config and vocab sizes they were built for."""

    def __init__(self, config: ModelConfig, src_vocab_size, tgt_vocab_size,
                 seed=0):
        config.validate()
        self.config = config
        self.src_vocab_size = int(src_vocab_size)
        self.tgt_vocab_size = int(tgt_vocab_size)
        self.seed = int(seed)
        self.params = {}
        self._build()

    def _weight(self, name, shape):
        self.params[name] = Param(name, init_params(shape, derive_seed(self.seed, name)))

    def _bias(self, name, shape):
        self.params[name] = Param(name, zeros(shape))

    def _gru_set(self, prefix, input_dim, state_dim):
        for gate in ("z", "r", "h"):
            self._weight(f"{prefix}.W{gate}", (state_dim, input_dim))
            self._weight(f"{prefix}.U{gate}", (state_dim, state_dim))
            self._bias(f"{prefix}.b{gate}", (state_dim,))

    def _build(self):
        cfg = self.config
        d, d_emb, a, d_c = cfg.d, cfg.d_emb, cfg.a, cfg.d_c

        self._weight("enc.emb", (self.src_vocab_size, d_emb))
        leaf_dim = d // 2 if cfg.backward_leaf else d
        self._gru_set("enc.fwd", d_emb, leaf_dim)
        if cfg.backward_leaf:
            self._gru_set("enc.bwd", d_emb, leaf_dim)

        # bottom-up tree composition: update gate, two reset gates, candidate
        for gate in ("z", "rl", "rr", "h"):
            self._weight(f"enc.tree.UL_{gate}", (d, d))
            self._weight(f"enc.tree.UR_{gate}", (d, d))
            self._bias(f"enc.tree.b_{gate}", (d,))

        if cfg.top_down:
            self._gru_set("enc.td.left", d, d)
            self._gru_set("enc.td.right", d, d)

        self._weight("dec.emb", (self.tgt_vocab_size, d_emb))
        self._gru_set("dec.gru", d_emb + d_c, d)

        self._weight("dec.att.V_a", (a,))
        self._weight("dec.att.U_a", (a, d))
        self._weight("dec.att.W_a", (a, d))
        self._bias("dec.att.b_a", (a,))

        if cfg.beta_mode == "gating":
            self._weight("dec.beta.W", (d_c,))
            self._bias("dec.beta.b", ())

        self._weight("dec.comp.W", (d_c, 2 * d))
        self._bias("dec.comp.b", (d_c,))
        self._weight("dec.out.W", (self.tgt_vocab_size, d_c))
        self._bias("dec.out.b", (self.tgt_vocab_size,))
        self._weight("dec.init.W", (d, d))
        self._bias("dec.init.b", (d,))

    def zero_params(self):
        """Zero every parameter in place (for algebraic edge-case tests)."""
        for p in self.params.values():
            p.value[...] = 0.0
        return self

    def check_src_id(self, idx):
        if not 0 <= idx < self.src_vocab_size:
            raise UnknownTokenIdError(f"source token id {idx} out of range")

    def check_tgt_id(self, idx):
        if not 0 <= idx < self.tgt_vocab_size:
            raise UnknownTokenIdError(f"target token id {idx} out of range")
