"""Two-stage expert extraction.

Stage 1 is a pool of shared experts mixed per task by its own softmax gate.
Stage 2 gives every task a private set of experts next to a shared set; each
task's gate reads that task's stage-1 vector and mixes only its own pool.
"""

from __future__ import annotations

from .autodiff import Graph
from .errors import DimensionError
from .nn import MLP, Linear, ParameterStore


def mix(g: Graph, weights, outputs):
    """Sum of ``outputs[e]`` weighted by column ``e`` of ``weights`` (batch x E)."""
    if weights.shape[-1] != len(outputs):
        raise DimensionError(
            f"mix: gate has {weights.shape[-1]} weights for {len(outputs)} experts"
        )
    acc = None
    for e, out in enumerate(outputs):
        term = g.mul(g.slice(weights, e, e + 1), out)
        acc = term if acc is None else g.add(acc, term)
    return acc


class Gate:
    """Bias-free linear map to one logit per expert, then softmax."""

    def __init__(self, store, name, n_in, n_experts):
        self.linear = Linear(store, name, n_in, n_experts, bias=False)

    def __call__(self, g, x):
        return g.softmax(self.linear(g, x))


class MultiExpertStage:
    def __init__(self, store: ParameterStore, n_in, n_tasks, n_experts, hidden, dropout,
                 name="stage1"):
        self.experts = [
            MLP(store, f"{name}/expert{e}", n_in, hidden, dropout=dropout)
            for e in range(n_experts)
        ]
        self.gates = [Gate(store, f"{name}/gate{k}", n_in, n_experts) for k in range(n_tasks)]
        self.out_dim = self.experts[0].out_dim

    def __call__(self, g, x, mode="train", rng=None, trace=None):
        # each expert runs once; every task's gate reuses the same outputs
        outs = [E(g, x, mode, rng) for E in self.experts]
        result = []
        for k, gate in enumerate(self.gates):
            w = gate(g, x)
            if trace is not None:
                trace.setdefault("stage1_gates", []).append(w.data)
            result.append(mix(g, w, outs))
        return result


class CustomGateStage:
    def __init__(self, store: ParameterStore, n_in, n_tasks, n_shared, n_specific, hidden,
                 dropout, name="stage2"):
        self.shared = [
            MLP(store, f"{name}/shared{e}", n_in, hidden, dropout=dropout)
            for e in range(n_shared)
        ]
        self.specific = [
            [MLP(store, f"{name}/task{k}/expert{e}", n_in, hidden, dropout=dropout)
             for e in range(n_specific)]
            for k in range(n_tasks)
        ]
        self.gates = [
            Gate(store, f"{name}/gate{k}", n_in, n_specific + n_shared) for k in range(n_tasks)
        ]
        self.n_in = n_in
        self.out_dim = self.shared[0].out_dim

    def __call__(self, g, inputs, mode="train", rng=None, trace=None):
        if len(inputs) != len(self.gates):
            raise DimensionError(f"stage2: {len(inputs)} task inputs for {len(self.gates)} gates")
        result = []
        for k, x in enumerate(inputs):
            if x.shape[-1] != self.n_in:
                raise DimensionError(f"stage2: task {k} input width {x.shape[-1]} != {self.n_in}")
            pool = [E(g, x, mode, rng) for E in self.specific[k]]
            pool += [E(g, x, mode, rng) for E in self.shared]
            w = self.gates[k](g, x)
            if trace is not None:
                trace.setdefault("stage2_gates", []).append(w.data)
            result.append(mix(g, w, pool))
        return result
