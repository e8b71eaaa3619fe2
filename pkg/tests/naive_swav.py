"""Straight-line torch transcription of the two-crop training loop, float64.

Deliberately naive: autograd for every gradient, ``torch.optim.SGD`` for the
update, and the Sinkhorn routine copied statement by statement.
"""
from __future__ import annotations

import numpy as np
import torch

from swavdesk import training
from swavdesk.losses import ViewBatch


def sinkhorn(scores, eps=0.05, niters=3):
    Q = torch.exp(scores / eps).T
    Q /= torch.sum(Q)
    K, B = Q.shape
    u, r, c = torch.zeros(K, dtype=Q.dtype), torch.ones(K, dtype=Q.dtype) / K, torch.ones(B, dtype=Q.dtype) / B
    for _ in range(niters):
        u = torch.sum(Q, dim=1)
        Q *= (r / u).unsqueeze(1)
        Q *= (c / torch.sum(Q, dim=0)).unsqueeze(0)
    return (Q / torch.sum(Q, dim=0, keepdim=True)).T


class Model(torch.nn.Module):
    def __init__(self, params):
        super().__init__()
        self.n_backbone = params.n_backbone
        self.layers = torch.nn.ModuleList()
        for w, b in params.layers:
            lin = torch.nn.Linear(w.shape[0], w.shape[1]).double()
            with torch.no_grad():
                lin.weight.copy_(torch.from_numpy(w.T.copy()))
                lin.bias.copy_(torch.from_numpy(b.copy()))
            self.layers.append(lin)

    def forward(self, x):
        n = len(self.layers)
        for i, lin in enumerate(self.layers):
            x = lin(x)
            if i < self.n_backbone or i < n - 1:
                x = torch.relu(x)
        return torch.nn.functional.normalize(x, dim=1, p=2)


def run_naive(state, data, n_batches):
    """Replay the trainer's first ``n_batches`` batches; returns per-step losses and final params."""
    cfg = state.cfg
    model = Model(state.encoder)
    C = torch.nn.Parameter(torch.from_numpy(state.heads[0].c.copy()))
    opt = torch.optim.SGD([
        {"params": model.parameters(), "weight_decay": cfg.weight_decay},
        {"params": [C], "weight_decay": 0.0},
    ], lr=cfg.base_lr, momentum=cfg.momentum)
    temp = cfg.tau
    rng, batches = training._epoch_setup(state, len(data))
    losses = []
    for bi, idx in enumerate(batches[:n_batches]):
        x_t, x_s = training.make_views(data, idx, cfg, rng.split(f"batch{bi}"))
        B = x_t.shape[0]
        z = model(torch.cat([torch.from_numpy(x_t), torch.from_numpy(x_s)]))
        scores = torch.mm(z, C)
        scores_t = scores[:B]
        scores_s = scores[B:]
        with torch.no_grad():
            q_t = sinkhorn(scores_t, cfg.eps, cfg.sinkhorn_iters)
            q_s = sinkhorn(scores_s, cfg.eps, cfg.sinkhorn_iters)
        p_t = torch.softmax(scores_t / temp, dim=1)
        p_s = torch.softmax(scores_s / temp, dim=1)
        # "mean" read as the batch mean of the per-sample cross-entropy
        loss = -0.5 * torch.mean(torch.sum(q_t * torch.log(p_s) + q_s * torch.log(p_t), dim=1))
        opt.zero_grad()
        loss.backward()
        opt.step()
        with torch.no_grad():
            C.copy_(torch.nn.functional.normalize(C, dim=0, p=2))
        losses.append(float(loss.detach()))
    params = [(lin.weight.detach().numpy().T.copy(), lin.bias.detach().numpy().copy()) for lin in model.layers]
    return losses, params, C.detach().numpy().copy()


def run_trainer(state, data, n_batches, monkeypatch):
    """Run the package trainer for ``n_batches`` steps, recording every step's loss."""
    losses = []
    real = training.swapped_loss

    def recording(views: ViewBatch, *a, **kw):
        out = real(views, *a, **kw)
        losses.append(out.loss)
        return out

    monkeypatch.setattr(training, "swapped_loss", recording)
    training.train_epoch_swav(state, data)
    return losses[:n_batches], state
