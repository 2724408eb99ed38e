"""Assembly of the full ranking network and its ablation variants."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Graph, Tensor
from .config import ModelConfig
from .extraction import CustomGateStage, MultiExpertStage
from .heads import AttentionUnit, ProbabilityHead, Tower, transfer_graph
from .nn import MLP, ParameterStore
from .objective import bce_loss, combine_fixed, combine_uncertainty

N_TASKS = 3


@dataclass
class TaskOutputs:
    probs: list  # conditional p_ctr, p_avr, p_cvr (or per-task p in single-task mode)
    outputs: list  # what the losses and metrics see
    trace: dict = field(default_factory=dict)

    def numpy(self):
        return np.concatenate([y.data for y in self.outputs], axis=1)


class RankingModel:
    """Multi-task network with component toggles.

    ``specific_experts`` off gives a plain shared-bottom MLP; on gives the
    two-stage expert extraction. ``attention_units`` off feeds tower outputs
    straight into the heads; ``probability_transfer`` off makes each task's
    output its own head probability. ``single_task`` builds three disjoint
    networks (bottom, tower, head) whose only link is the summed loss.
    """

    def __init__(self, cfg: ModelConfig, input_dim: int):
        cfg.validate()
        self.cfg = cfg
        self.input_dim = input_dim
        self.store = ParameterStore(np.random.default_rng(cfg.seed))
        st = self.store
        K = N_TASKS
        if cfg.single_task:
            self.bottoms = [
                MLP(st, f"task{k}/bottom", input_dim, cfg.expert_hidden, dropout=cfg.dropout)
                for k in range(K)
            ]
            width = self.bottoms[0].out_dim
            self.towers = [Tower(st, f"task{k}/tower", width, cfg.tower_hidden, cfg.tower_dim)
                           for k in range(K)]
            self.heads = [ProbabilityHead(st, f"task{k}/head", cfg.tower_dim) for k in range(K)]
            self.log_var = None
            return

        if cfg.specific_experts:
            self.stage1 = MultiExpertStage(st, input_dim, K, cfg.n_experts_stage1,
                                           cfg.expert_hidden, cfg.dropout)
            self.stage2 = CustomGateStage(st, self.stage1.out_dim, K, cfg.n_shared_stage2,
                                          cfg.n_specific_stage2, cfg.stage2_hidden, cfg.dropout)
            width = self.stage2.out_dim
        else:
            self.bottom = MLP(st, "bottom", input_dim, cfg.expert_hidden, dropout=cfg.dropout)
            width = self.bottom.out_dim
        self.towers = [Tower(st, f"tower{k}", width, cfg.tower_hidden, cfg.tower_dim)
                       for k in range(K)]
        if cfg.attention_units:
            self.attention = [AttentionUnit(st, f"attention{k}", cfg.tower_dim,
                                            cfg.attention_readout) for k in range(K)]
        self.heads = [ProbabilityHead(st, f"head{k}", cfg.tower_dim) for k in range(K)]
        self.log_var = st.new("loss/log_var", np.zeros(K)) if cfg.uncertainty_loss else None

    @property
    def params(self) -> dict[str, Tensor]:
        return self.store.params

    def forward(self, g: Graph, x, mode="train", rng=None) -> TaskOutputs:
        cfg = self.cfg
        trace = {}
        if cfg.single_task:
            probs = []
            for k in range(N_TASKS):
                h = self.bottoms[k](g, x, mode, rng)
                probs.append(self.heads[k](g, self.towers[k](g, h)))
            return TaskOutputs(probs, list(probs), trace)

        if cfg.specific_experts:
            gs = self.stage1(g, x, mode, rng, trace)
            vs = self.stage2(g, gs, mode, rng, trace)
        else:
            shared = self.bottom(g, x, mode, rng)
            vs = [shared] * N_TASKS
        ts = [tower(g, v) for tower, v in zip(self.towers, vs)]
        if cfg.attention_units:
            reps, prev = [], None
            for unit, t in zip(self.attention, ts):
                prev = unit(g, t, prev, trace)
                reps.append(prev)
        else:
            reps = ts
        probs = [head(g, a) for head, a in zip(self.heads, reps)]
        outputs = transfer_graph(g, probs) if cfg.probability_transfer else list(probs)
        return TaskOutputs(probs, outputs, trace)

    def loss(self, g: Graph, out: TaskOutputs, labels, sample_weight=None):
        """(total, per-task losses) against entire-space binary labels (batch x 3)."""
        labels = np.asarray(labels, dtype=np.float64)
        losses = [
            bce_loss(g, y, labels[:, k : k + 1], sample_weight)
            for k, y in enumerate(out.outputs)
        ]
        if self.cfg.single_task:
            total = combine_fixed(g, losses, [1.0] * N_TASKS)
        elif self.log_var is not None:
            total = combine_uncertainty(g, losses, self.log_var)
        else:
            total = combine_fixed(g, losses, self.cfg.fixed_weights)
        return total, losses

    def predict(self, X, batch_size=4096):
        """Eval-mode outputs (n x 3) without recording a tape."""
        X = np.asarray(X, dtype=np.float64)
        parts = []
        for lo in range(0, X.shape[0], batch_size):
            g = Graph(record=False)
            parts.append(self.forward(g, Tensor(X[lo : lo + batch_size]), mode="eval").numpy())
        return np.concatenate(parts, axis=0) if parts else np.zeros((0, N_TASKS))

    def state_dict(self):
        return self.store.state_dict()

    def load_state_dict(self, state, strict=True):
        self.store.load_state_dict(state, strict)
