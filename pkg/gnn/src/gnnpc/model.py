"""Heterogeneous line-graph attention network for power prediction.

Node features live on access-point/terminal links and are refined over a
fixed number of rounds. Each round updates user-link and device-link
tensors separately: for every edge kind feeding a node class, multi-head
scaled-exponential attention aggregates peer features, with the projected
activity code added to both the attention key and the message value so
that served and unserved links are weighted differently. The per-kind
results (a learned self term plus the attention sum, heads concatenated)
are summed over kinds, passed through ReLU, and layer-normalized. A final
linear map produces one scalar per link node; per-terminal powers are the
access-point average of those scalars squashed by a sigmoid and scaled by
the class power budget, so every prediction respects the budget boxes by
construction and is invariant to access-point relabeling.
"""

import math
from dataclasses import asdict

import torch
from torch import nn

from .data import (DEVICE_SIDE_KINDS, PEER_CLASS, USER_SIDE_KINDS,
                   Standardizer, build_topology)

CHECKPOINT_FORMAT = "gnnpc-checkpoint-v1"

DEFAULT_LAYER_SIZES = (1, 32, 32, 64, 64, 32, 32, 1)
DEFAULT_HEADS = 4


def segment_softmax(logits, groups, n_groups):
    """Softmax of (B, E, H) logits over edges sharing a group id.

    Stable under large logits: the per-group maximum is subtracted before
    exponentiation. Groups without any edge never appear in the output.
    """
    b, n_edges, h = logits.shape
    spread = groups.view(1, n_edges, 1).expand(b, n_edges, h)
    top = logits.new_full((b, n_groups, h), -math.inf)
    top.scatter_reduce_(1, spread, logits, reduce="amax", include_self=True)
    shifted = (logits - top.index_select(1, groups)).exp()
    denom = logits.new_zeros((b, n_groups, h))
    denom.index_add_(1, groups, shifted)
    return shifted / denom.index_select(1, groups)


class EdgeAttention(nn.Module):
    """Multi-head attention over one edge kind at one depth.

    The activity-code projection shifts both the key (so attention weights
    depend on serving state) and the value (so the delivered message does).
    Heads are concatenated; a learned self term is always added, which
    keeps nodes without peers of this kind well-defined.
    """

    def __init__(self, in_dim, out_dim, heads):
        super().__init__()
        if out_dim % heads:
            raise ValueError(f"width {out_dim} not divisible by {heads} heads")
        self.heads = heads
        self.head_dim = out_dim // heads
        self.self_proj = nn.Linear(in_dim, out_dim)
        self.query_proj = nn.Linear(in_dim, out_dim)
        self.key_proj = nn.Linear(in_dim, out_dim)
        self.value_proj = nn.Linear(in_dim, out_dim)
        self.code_proj = nn.Linear(4, out_dim)

    def forward(self, node_feats, peer_feats, node_idx, peer_idx, codes):
        own = self.self_proj(node_feats)
        if node_idx.numel() == 0:
            return own
        b, n_nodes, _ = node_feats.shape
        heads, width = self.heads, self.head_dim

        def split(x):
            return x.view(b, -1, heads, width)

        query = split(self.query_proj(node_feats))
        key = split(self.key_proj(peer_feats))
        value = split(self.value_proj(peer_feats))
        shift = split(self.code_proj(codes))          # (B, E, H, D)

        logits = (query.index_select(1, node_idx)
                  * (key.index_select(1, peer_idx) + shift)).sum(-1)
        logits = logits / math.sqrt(width)
        weights = segment_softmax(logits, node_idx, n_nodes)

        messages = weights.unsqueeze(-1) * (value.index_select(1, peer_idx)
                                            + shift)
        agg = messages.new_zeros((b, n_nodes, heads, width))
        agg.index_add_(1, node_idx, messages)
        return own + agg.reshape(b, n_nodes, heads * width)


class PowerControlNet(nn.Module):
    """Fading in, budget-respecting transmit powers out."""

    def __init__(self, m, k_u, k_d, user_budget, device_budget,
                 layer_sizes=DEFAULT_LAYER_SIZES, heads=DEFAULT_HEADS):
        super().__init__()
        if len(layer_sizes) < 3:
            raise ValueError("need at least input, one hidden, output widths")
        self.m, self.k_u, self.k_d = m, k_u, k_d
        self.user_budget = float(user_budget)
        self.device_budget = float(device_budget)
        self.layer_sizes = tuple(int(s) for s in layer_sizes)
        self.heads = int(heads)
        self.depth = len(layer_sizes) - 2

        for kind, (node, peer) in build_topology(m, k_u, k_d).items():
            self.register_buffer(f"edge_node_{kind}",
                                 torch.as_tensor(node), persistent=False)
            self.register_buffer(f"edge_peer_{kind}",
                                 torch.as_tensor(peer), persistent=False)

        self.user_layers = nn.ModuleList()
        self.device_layers = nn.ModuleList()
        self.user_norms = nn.ModuleList()
        self.device_norms = nn.ModuleList()
        for t in range(self.depth):
            w_in, w_out = self.layer_sizes[t], self.layer_sizes[t + 1]
            self.user_layers.append(nn.ModuleDict(
                {k: EdgeAttention(w_in, w_out, heads)
                 for k in USER_SIDE_KINDS}))
            self.device_layers.append(nn.ModuleDict(
                {k: EdgeAttention(w_in, w_out, heads)
                 for k in DEVICE_SIDE_KINDS}))
            self.user_norms.append(nn.LayerNorm(w_out))
            self.device_norms.append(nn.LayerNorm(w_out))
        self.user_head = nn.Linear(self.layer_sizes[-2], self.layer_sizes[-1])
        self.device_head = nn.Linear(self.layer_sizes[-2],
                                     self.layer_sizes[-1])
        self.double()

    def _aggregate(self, layers, kinds, user_feats, device_feats, codes):
        feats = {"user": user_feats, "device": device_feats}
        total = None
        for kind in kinds:
            node_idx = getattr(self, f"edge_node_{kind}")
            peer_idx = getattr(self, f"edge_peer_{kind}")
            out = layers[kind](feats["user" if kind in USER_SIDE_KINDS
                                     else "device"],
                               feats[PEER_CLASS[kind]],
                               node_idx, peer_idx, codes[kind])
            total = out if total is None else total + out
        return total

    def forward(self, batch):
        """Predict (user powers (B, K_u), device powers (B, K_d)) in watts."""
        h, g = batch.user_x, batch.device_x
        for t in range(self.depth):
            h_new = self._aggregate(self.user_layers[t], USER_SIDE_KINDS,
                                    h, g, batch.codes)
            g_new = self._aggregate(self.device_layers[t], DEVICE_SIDE_KINDS,
                                    h, g, batch.codes)
            h = self.user_norms[t](torch.relu(h_new))
            g = self.device_norms[t](torch.relu(g_new))
        h = self.user_head(h).squeeze(-1)      # (B, M*K_u)
        g = self.device_head(g).squeeze(-1)
        b = h.shape[0]
        p = torch.sigmoid(h.view(b, self.m, self.k_u).mean(dim=1))
        q = torch.sigmoid(g.view(b, self.m, self.k_d).mean(dim=1))
        return p * self.user_budget, q * self.device_budget


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, model, standardizer, settings=None, extra=None):
    """Persist the model with everything needed to rebuild and reuse it."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "m": model.m, "k_u": model.k_u, "k_d": model.k_d,
        "user_budget": model.user_budget,
        "device_budget": model.device_budget,
        "layer_sizes": list(model.layer_sizes),
        "heads": model.heads,
        "state": model.state_dict(),
        "standardizer": asdict(standardizer),
        "settings": dict(settings) if settings else None,
        "extra": dict(extra) if extra else None,
    }
    torch.save(payload, path)


def load_checkpoint(path):
    """Rebuild (model, standardizer, payload) from a saved checkpoint."""
    payload = torch.load(path, weights_only=True)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
    model = PowerControlNet(payload["m"], payload["k_u"], payload["k_d"],
                            payload["user_budget"], payload["device_budget"],
                            layer_sizes=payload["layer_sizes"],
                            heads=payload["heads"])
    model.load_state_dict(payload["state"])
    model.eval()
    return model, Standardizer(**payload["standardizer"]), payload
