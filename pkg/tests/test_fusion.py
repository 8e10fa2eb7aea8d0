import math

import pytest
import torch
import torch.nn as nn
import torch.nn.functional as F

from cyin.fusion import (
    CrossModalAttentionLayer,
    FusionConfigError,
    FusionDecoder,
    PairFusion,
    PredictionHead,
    pair_order,
    task_loss,
)


def test_pair_order():
    assert pair_order(2) == [(0, 1)]
    assert pair_order(3) == [(0, 1), (1, 2), (0, 2)]
    assert pair_order(4) == [(0, 1), (1, 2), (2, 3), (0, 2), (0, 3), (1, 3)]


def test_head_divisibility_check():
    with pytest.raises(FusionConfigError):
        CrossModalAttentionLayer(5, 2, 8)


def test_single_token_identity_attention():
    layer = CrossModalAttentionLayer(3, 1, 4).double()
    with torch.no_grad():
        eye = torch.eye(3, dtype=torch.float64)
        layer.w_q.weight.copy_(eye)
        layer.w_k.weight.copy_(eye)
        layer.w_v.weight.copy_(eye)
        layer.w_o.weight.copy_(eye)
    q = torch.randn(1, 3, dtype=torch.float64)
    kv = torch.randn(1, 3, dtype=torch.float64)
    # softmax over a single key is 1, so the pre-residual output is the kv token
    assert torch.allclose(layer.attention(q, kv), kv, atol=1e-12)


def test_attention_shape_contract():
    layer = CrossModalAttentionLayer(8, 2, 16)
    out = layer(torch.randn(5, 4, 8), torch.randn(5, 4, 8))
    assert out.shape == (5, 4, 8)
    out = layer(torch.randn(4, 8), torch.randn(6, 8))
    assert out.shape == (4, 8)


def test_attention_manual_evaluation():
    torch.manual_seed(0)
    dim, heads = 2, 1
    layer = CrossModalAttentionLayer(dim, heads, 4).double()
    q_tokens = torch.randn(2, dim, dtype=torch.float64)
    kv_tokens = torch.randn(2, dim, dtype=torch.float64)

    q = q_tokens @ layer.w_q.weight.T
    k = kv_tokens @ layer.w_k.weight.T
    v = kv_tokens @ layer.w_v.weight.T
    scores = q @ k.T / math.sqrt(dim)
    attn = torch.softmax(scores, dim=-1)
    manual_y = (attn @ v) @ layer.w_o.weight.T
    assert torch.allclose(layer.attention(q_tokens, kv_tokens), manual_y, atol=1e-8)
    # attention rows are probability distributions
    assert torch.allclose(attn.sum(dim=-1), torch.ones(2, dtype=torch.float64), atol=1e-6)
    assert torch.all(attn >= 0)

    z = manual_y + layer.norm1(q_tokens)
    z_n = layer.norm2(z)
    manual_out = layer.ff(z_n) + z_n
    assert torch.allclose(layer(q_tokens, kv_tokens), manual_out, atol=1e-8)


def test_multi_head_matches_manual_split():
    torch.manual_seed(1)
    dim, heads = 4, 2
    layer = CrossModalAttentionLayer(dim, heads, 4).double()
    qt = torch.randn(3, dim, dtype=torch.float64)
    kt = torch.randn(3, dim, dtype=torch.float64)
    q = qt @ layer.w_q.weight.T
    k = kt @ layer.w_k.weight.T
    v = kt @ layer.w_v.weight.T
    outs = []
    for h in range(heads):
        sl = slice(h * 2, (h + 1) * 2)
        scores = q[:, sl] @ k[:, sl].T / math.sqrt(dim)
        outs.append(torch.softmax(scores, dim=-1) @ v[:, sl])
    manual = torch.cat(outs, dim=-1) @ layer.w_o.weight.T
    assert torch.allclose(layer.attention(qt, kt), manual, atol=1e-10)


def test_post_norm_variant():
    torch.manual_seed(2)
    layer = CrossModalAttentionLayer(4, 1, 8, literal_norm=False).double()
    qt = torch.randn(2, 4, dtype=torch.float64)
    kt = torch.randn(2, 4, dtype=torch.float64)
    y = layer.attention(qt, kt)
    z = layer.norm1(y + qt)
    expected = layer.norm2(layer.ff(z) + z)
    assert torch.allclose(layer(qt, kt), expected, atol=1e-10)


def test_pair_fusion_two_layer_composition():
    torch.manual_seed(3)
    pf = PairFusion(4, 2, 2, 8).double()
    lj = torch.randn(3, 4, dtype=torch.float64)
    lk = torch.randn(3, 4, dtype=torch.float64)
    stream = pf.layers[0](lj, lk)
    stream = pf.layers[1](stream, lk)
    assert torch.allclose(pf(lj, lk), stream[-1, :], atol=1e-10)


def test_pair_fusion_mean_reduction():
    torch.manual_seed(4)
    pf = PairFusion(4, 1, 1, 8, reduce="mean").double()
    lj = torch.randn(3, 4, dtype=torch.float64)
    lk = torch.randn(3, 4, dtype=torch.float64)
    assert torch.allclose(pf(lj, lk), pf.layers[0](lj, lk).mean(dim=0), atol=1e-10)


def test_fuse_all_output_dims():
    for U, pairs in ((2, 1), (3, 3), (4, 6)):
        dec = FusionDecoder(U, 4, 1, 1, 8)
        latents = [torch.randn(2, 3, 4) for _ in range(U)]
        out = dec(latents)
        assert out.shape == (2, pairs * 4)
        assert dec.out_dim == pairs * 4


def test_fuse_all_arity():
    dec = FusionDecoder(3, 4, 1, 1, 8)
    with pytest.raises(FusionConfigError):
        dec([torch.randn(2, 3, 4)] * 2)


def test_modality_permutation_invariance():
    # Swapping modalities 0 and 1, with parameters moved correspondingly,
    # must leave the prediction unchanged. Symmetric pair fusion makes the
    # per-pair modules direction-complete so the swap is expressible.
    torch.manual_seed(5)
    U, dim = 3, 4
    dec = FusionDecoder(U, dim, 1, 1, 8, symmetric=True).double()
    head = PredictionHead(dec.out_dim, 8, "regression").double()
    latents = [torch.randn(2, 3, dim, dtype=torch.float64) for _ in range(U)]
    base = head(dec(latents))

    perm = {0: 1, 1: 0, 2: 2}
    dec2 = FusionDecoder(U, dim, 1, 1, 8, symmetric=True).double()
    # pair (j,k) of the permuted model corresponds to the original pair
    # {perm[j], perm[k]}; direction flips when the order reverses.
    for j, k in dec2.pairs:
        pj, pk = perm[j], perm[k]
        flipped = pj > pk
        src = dec.pair_modules[f"{min(pj, pk)}|{max(pj, pk)}"]
        dst = dec2.pair_modules[f"{j}|{k}"]
        src_fwd, src_rev = (src.layers_rev, src.layers) if flipped else (src.layers, src.layers_rev)
        dst.layers.load_state_dict(src_fwd.state_dict())
        dst.layers_rev.load_state_dict(src_rev.state_dict())

    head2 = PredictionHead(dec.out_dim, 8, "regression").double()
    # the concatenation order changes from [(0,1),(1,2),(0,2)] under the swap:
    # new (0,1) <- old (0,1), new (1,2) <- old (0,2), new (0,2) <- old (1,2)
    w = head.net[0].weight.detach().clone().reshape(8, len(dec.pairs), dim)
    block_of_old = {(0, 1): 0, (1, 2): 1, (0, 2): 2}
    cols = [block_of_old[tuple(sorted((perm[j], perm[k])))] for j, k in dec2.pairs]
    with torch.no_grad():
        head2.net[0].weight.copy_(w[:, cols, :].reshape(8, -1))
        head2.net[0].bias.copy_(head.net[0].bias)
        head2.net[2].weight.copy_(head.net[2].weight)
        head2.net[2].bias.copy_(head.net[2].bias)

    permuted_latents = [latents[1], latents[0], latents[2]]
    swapped = head2(dec2(permuted_latents))
    assert torch.allclose(base, swapped, atol=1e-10)


def test_prediction_head_zero_weights():
    head = PredictionHead(6, 4, "regression")
    with torch.no_grad():
        for p in head.parameters():
            p.zero_()
    assert torch.all(head(torch.randn(3, 6)) == 0)

    clf = PredictionHead(6, 4, "classification", num_classes=5)
    with torch.no_grad():
        for p in clf.parameters():
            p.zero_()
    probs = clf(torch.randn(3, 6))
    assert torch.allclose(probs, torch.full((3, 5), 0.2))


def test_prediction_head_probabilities_normalized():
    clf = PredictionHead(6, 4, "classification", num_classes=4)
    probs = clf(torch.randn(7, 6))
    assert torch.allclose(probs.sum(dim=-1), torch.ones(7), atol=1e-6)
    assert torch.all(probs >= 0)


def test_prediction_head_gradients_match_finite_differences():
    torch.manual_seed(6)
    head = PredictionHead(3, 4, "regression").double()
    x = torch.randn(2, 3, dtype=torch.float64)
    y = torch.randn(2, dtype=torch.float64)

    def loss_fn():
        return task_loss(head(x), y, "regression")

    loss_fn().backward()
    eps = 1e-6
    for p in head.parameters():
        flat = p.detach().reshape(-1)
        g = p.grad.reshape(-1)
        for idx in range(min(flat.numel(), 6)):
            with torch.no_grad():
                orig = flat[idx].item()
                flat[idx] = orig + eps
                up = loss_fn().item()
                flat[idx] = orig - eps
                down = loss_fn().item()
                flat[idx] = orig
            fd = (up - down) / (2 * eps)
            assert abs(fd - g[idx].item()) / max(abs(fd), abs(g[idx].item()), 1e-6) < 1e-4


def test_task_loss_values():
    y = torch.tensor([1.0, -0.5])
    assert task_loss(y.clone(), y, "regression").item() == 0.0
    preds = torch.tensor([0.0, 2.0])
    labels = torch.tensor([1.0, 1.0])
    assert task_loss(preds, labels, "regression").item() == pytest.approx(1.0)

    onehot = torch.tensor([[0.0, 1.0, 0.0]])
    assert task_loss(onehot, torch.tensor([1]), "classification").item() == pytest.approx(0.0, abs=1e-9)
    uniform = torch.full((2, 4), 0.25)
    ce = task_loss(uniform, torch.tensor([0, 3]), "classification").item()
    assert ce == pytest.approx(math.log(4), rel=1e-6)


def test_task_loss_type_checks():
    with pytest.raises(TypeError):
        task_loss(torch.zeros(2), torch.tensor([0, 1]), "regression")
    with pytest.raises(TypeError):
        task_loss(torch.zeros(2, 3), torch.tensor([0.0, 1.0]), "classification")
    with pytest.raises(TypeError):
        task_loss(torch.zeros(2), torch.zeros(2), "ranking")
