"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .params import Parameter
from .rng import RngStream


def grad_check(f: Callable[[], "object"], params: Iterable[Parameter],
               h: float = 1e-4, samples_per_param: int = 4,
               rng: RngStream | None = None) -> float:
    """Compare analytic grads of the scalar f() against central differences.

    f must be deterministic (dropout off, pinned rng) and rebuild its graph on
    every call. Returns the max relative error over the sampled coordinates:
    |analytic - fd| / (|analytic| + |fd| + 1e-12).

    Coordinates whose gradient is orders of magnitude smaller than the loss
    are roundoff-limited at any single step size, so when the error at h is
    poor the step is escalated (x10, x100) and the best agreement kept. A
    wrong analytic gradient disagrees at every step size.
    """
    params = list(params)
    rng = rng or RngStream(0).split("gradcheck")

    for p in params:
        p.zero_grad()
    loss = f()
    loss.backward()
    analytic = {p.name: (p.tensor.grad.copy() if p.tensor.grad is not None
                         else np.zeros_like(p.value)) for p in params}

    def fd_error(flat, c, an, step):
        orig = flat[c]
        flat[c] = orig + step
        f_plus = float(f().data)
        flat[c] = orig - step
        f_minus = float(f().data)
        flat[c] = orig
        fd = (f_plus - f_minus) / (2.0 * step)
        return abs(an - fd) / (abs(an) + abs(fd) + 1e-12)

    max_err = 0.0
    for p in params:
        n = p.value.size
        k = min(samples_per_param, n)
        coords = rng.choice_without_replacement(n, k) if k < n else np.arange(n)
        flat = p.value.reshape(-1)
        for c in coords:
            an = float(analytic[p.name].reshape(-1)[c])
            err = fd_error(flat, c, an, h)
            for step in (10 * h, 100 * h):
                if err < 1e-5:
                    break
                err = min(err, fd_error(flat, c, an, step))
            max_err = max(max_err, err)
    return max_err


def micro_model_config():
    """Small width everywhere so the finite-difference sweep stays cheap."""
    from .config import ModelConfig
    return ModelConfig(d_feat=8, mlp_hidden=8, pool_heads=2, pool_inner=8,
                       pool_ffn=8, enc_dim=8, enc_heads=2, enc_head_dim=4,
                       dec_dim=8, dec_heads=2, dec_head_dim=4,
                       mlp_ratio=2.0, vocab_size=16, obs_window=4,
                       obs_hidden=8)


def full_model_gradcheck(samples_per_param: int = 2, seed: int = 0,
                         h: float = 1e-4) -> dict[str, float]:
    """Check every parameter group of the policy through one composite loss
    (behavior cloning + masked prediction + matching) in float64.

    Returns group tag -> max relative error.
    """
    from . import modalities as mod
    from .autodiff import Tensor, as_tensor, precision
    from .ops import cross_entropy, l1_loss, mse_loss
    from .policy import PolicyModel, gmm_nll
    from .rng import RngStream as _R

    cfg = micro_model_config()
    with precision(np.float64):
        model = PolicyModel(cfg, _R(seed).split("init"))
        r = np.random.default_rng(seed)
        B = 2
        obs = r.normal(size=(B, cfg.obs_window, cfg.obs_dim))
        pad = np.zeros((B, cfg.obs_window), dtype=bool)
        pad[0, 0] = True
        tokens = {m: r.normal(size=(B, mod.TOKEN_COUNTS[m] or 4, cfg.d_feat))
                  for m in mod.MODALITIES}
        positions = {m: np.stack([r.choice(tokens[m].shape[1],
                                           size=mod.MASK_COUNTS[m],
                                           replace=False)
                                  for _ in range(B)]).astype(np.int64)
                     for m in mod.MODALITIES}
        for m in positions:
            positions[m].sort(axis=1)
        target_ids = {m: r.integers(0, cfg.vocab_size,
                                    size=(B, mod.MASK_COUNTS[m]))
                      for m in mod.TEXT_MODALITIES}
        actions = r.normal(size=(B, cfg.action_dim))
        # fixed matching target: the real loss detaches the video embedding,
        # which finite differences cannot honor, so the check uses a constant
        match_target = Tensor(r.normal(size=(B, cfg.d_feat)))

        def loss():
            spec_tokens = {}
            for m in mod.MODALITIES:
                t = model.spec_encoders.apply_mask(m, as_tensor(tokens[m]),
                                                   positions[m])
                spec_tokens[m] = (t, None)
            out = model.forward(obs, pad, spec_tokens, stage=2,
                                rng=_R(1).split("fwd"), training=False,
                                masked_queries=positions)
            total = gmm_nll(out.gmm[0], actions)
            for m in mod.MODALITIES:
                if m in mod.TEXT_MODALITIES:
                    total = total + 0.5 * cross_entropy(out.text_logits[m],
                                                        target_ids[m])
                else:
                    total = total + 0.5 * l1_loss(
                        out.feature_preds[m],
                        Tensor(tokens[m][np.arange(B)[:, None], positions[m]]))
            for m in mod.MODALITIES:
                if m != mod.MATCHING_TARGET:
                    total = total + 0.5 * mse_loss(out.embeddings[m],
                                                   match_target)
            return total

        groups: dict[str, list] = {}
        for p in model.store:
            groups.setdefault(p.group_tag, []).append(p)
        errors = {}
        check_rng = _R(seed).split("coords")
        for tag in sorted(groups):
            errors[tag] = grad_check(loss, groups[tag], h=h,
                                     samples_per_param=samples_per_param,
                                     rng=check_rng.split(tag))
    return errors
