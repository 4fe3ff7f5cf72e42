import numpy as np
import pytest
import torch

from motionedit.diffusion import make_cosine_schedule
from motionedit.errors import CapacityError, CheckpointError, InputError
from motionedit.model import (
    ModelConfig,
    build_bundle,
    condition_forward,
    diffusion_forward,
    load_bundle,
    make_condition_batch,
    save_bundle,
)
from motionedit.motion import FeatureLayout, MotionSequence
from motionedit.text import HashedTextEncoder, TextFeatures
from motionedit.training import Example, Trainer, TrainConfig

LAYOUT = FeatureLayout(1, 0, 2, 2)
TOY = ModelConfig(latent_dim=16, cond_layers=2, diff_layers=2, heads=2, K=3, D=LAYOUT.D, max_frames=16,
                  dropout=0.0, text_dim=8, max_tokens=6, num_timesteps=20)


def randomize_gates(model, scale=0.2, seed=0):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in model.gate_parameters():
            p.copy_(torch.randn(p.shape, generator=g, dtype=p.dtype) * scale)


def toy_model(seed=0, dtype=torch.float64, gates=True, **overrides):
    cfg = ModelConfig(**{**TOY.__dict__, **overrides})
    m = build_bundle(cfg, seed=seed).to(dtype)
    if gates:
        randomize_gates(m, seed=seed)
    return m


def toy_batch(rng, b=3, F=7, Fp=5, dtype=torch.float64):
    enc = HashedTextEncoder(TOY.text_dim, TOY.max_tokens)
    words = ["raise the arm", "turn left slowly", "", "jump"]
    cond = make_condition_batch([rng.normal(size=(F - i, LAYOUT.D)) for i in range(b)],
                                [enc.encode(words[i % 4]) for i in range(b)], dtype=dtype)
    x_t = torch.as_tensor(rng.normal(size=(b, Fp, LAYOUT.D)), dtype=dtype)
    tmask = torch.zeros((b, Fp), dtype=torch.bool)
    tmask[0, -1] = True
    labels = torch.as_tensor(rng.integers(0, TOY.K, size=(b, F)))
    return cond, x_t, tmask, labels


def test_default_output_shapes():
    model = build_bundle(ModelConfig(), seed=0)
    model.eval()
    src = MotionSequence(np.random.default_rng(0).normal(size=(20, 207)), FeatureLayout())
    out = condition_forward(src, HashedTextEncoder().encode("raise both arms"), model)
    assert out.enhanced_motion.shape == (1, 20, 512)
    assert out.similarity_logits.shape == (1, 20, 3)
    empty = condition_forward(src, HashedTextEncoder().encode(""), model)
    assert empty.similarity_logits.shape == (1, 20, 3)
    pred = diffusion_forward(np.zeros((11, 207)), 5, out, model)
    assert pred.shape == (11, 207)


def test_text_permutation_invariance_without_positions(rng):
    model = toy_model(positional=False)
    model.eval()
    rows = rng.normal(size=(4, TOY.text_dim))
    perm = rows[[2, 0, 3, 1]]
    src = [rng.normal(size=(6, LAYOUT.D))]
    a = model.encode_conditions(make_condition_batch(src, [TextFeatures.from_tokens(rows, 6)], dtype=torch.float64))
    b = model.encode_conditions(make_condition_batch(src, [TextFeatures.from_tokens(perm, 6)], dtype=torch.float64))
    torch.testing.assert_close(a.similarity_logits, b.similarity_logits, rtol=0, atol=1e-10)


def test_gates_zero_at_init():
    model = build_bundle(TOY, seed=3)
    assert all(torch.count_nonzero(p) == 0 for p in model.gate_parameters())


def test_init_output_equals_ablated_network(rng):
    model = build_bundle(TOY, seed=1).double()
    model.eval()
    cond, x_t, tmask, _ = toy_batch(rng)
    t = torch.tensor([0, 7, 19])
    with torch.no_grad():
        full, cond_out = model(x_t, tmask, t, cond)
        d = model.diffusion
        c = d.conditioning(t, cond_out.pooled_text)
        ablated = d.final(d.embed_target(x_t), c)
    torch.testing.assert_close(full, ablated, rtol=0, atol=1e-5)


def test_enhanced_motion_row_changes_output(rng):
    model = toy_model()
    model.eval()
    cond, x_t, tmask, _ = toy_batch(rng, b=1)
    t = torch.tensor([4])
    with torch.no_grad():
        out = model.encode_conditions(cond)
        base = model.denoise(x_t, tmask, t, out)
        out.enhanced_motion = out.enhanced_motion.clone()
        out.enhanced_motion[0, 2] += 1.0
        moved = model.denoise(x_t, tmask, t, out)
    assert torch.max(torch.abs(moved - base)) > 0


def test_capacity_and_timestep_errors(rng):
    model = toy_model()
    cond, x_t, tmask, _ = toy_batch(rng, b=1)
    with pytest.raises(InputError):
        model(x_t, tmask, torch.tensor([TOY.num_timesteps]), cond)
    long = make_condition_batch([np.zeros((TOY.max_frames + 1, LAYOUT.D))],
                                [HashedTextEncoder(8, 6).encode("x")], dtype=torch.float64)
    with pytest.raises(CapacityError):
        model.encode_conditions(long)


def _losses(model, rng):
    ex = []
    enc = HashedTextEncoder(TOY.text_dim, TOY.max_tokens)
    from motionedit.motion import EditTriplet
    for i in range(3):
        src = MotionSequence(rng.normal(size=(7, LAYOUT.D)), LAYOUT)
        tgt = MotionSequence(rng.normal(size=(6, LAYOUT.D)), LAYOUT)
        tr = EditTriplet(f"e{i}", src, tgt, "raise the arm")
        ex.append(Example(tr, enc.features(tr), rng.integers(0, TOY.K, size=7)))
    trainer = Trainer(model, make_cosine_schedule(TOY.num_timesteps), TrainConfig(batch_size=3), seed=0)
    t = torch.tensor([1, 9, 17])
    eps = torch.as_tensor(rng.normal(size=(3, 6, LAYOUT.D)))
    return lambda: trainer.compute_losses(ex, t=t, eps=eps)


def test_gradient_decoupling_and_flow(rng):
    model = toy_model()
    model.train()
    l_e, l_aux = _losses(model, rng)()
    groups = model.parameter_groups()
    diff_params = [p for _, p in groups["diffusion"]]
    # The similarity head only feeds L_aux, so the flow check covers the encoder itself.
    cond_params = [p for n, p in groups["condition"] if "similarity_head" not in n]
    g_aux = torch.autograd.grad(l_aux, diff_params, allow_unused=True)
    assert all(g is None or torch.count_nonzero(g) == 0 for g in g_aux)
    g_e = torch.autograd.grad(l_e, diff_params + cond_params, allow_unused=True)
    nonzero = [g is not None and torch.count_nonzero(g) > 0 for g in g_e]
    n_diff = len(diff_params)
    assert np.mean(nonzero[:n_diff]) >= 0.95
    assert np.mean(nonzero[n_diff:]) >= 0.95


def test_total_gradient_is_sum_of_parts(rng):
    model = toy_model()
    compute = _losses(model, rng)
    params = list(model.parameters())
    l_e, l_aux = compute()
    g_total = torch.autograd.grad(l_e + l_aux, params, allow_unused=True, retain_graph=True)
    g_e = torch.autograd.grad(l_e, params, allow_unused=True, retain_graph=True)
    g_a = torch.autograd.grad(l_aux, params, allow_unused=True)
    for gt, ge, ga in zip(g_total, g_e, g_a):
        ref = (0 if ge is None else ge) + (0 if ga is None else ga)
        if gt is None:
            continue
        torch.testing.assert_close(gt, ref if torch.is_tensor(ref) else torch.zeros_like(gt), rtol=1e-10, atol=1e-12)


def test_finite_difference_gradients(rng):
    model = toy_model()
    compute = _losses(model, rng)

    def total():
        l_e, l_aux = compute()
        return l_e + l_aux

    params = [p for p in model.parameters()]
    grads = torch.autograd.grad(total(), params, allow_unused=True)
    pick = np.random.default_rng(5)
    candidates = [(i, j) for i, (p, g) in enumerate(zip(params, grads)) if g is not None
                  for j in range(p.numel())]
    chosen = [candidates[k] for k in pick.choice(len(candidates), size=50, replace=False)]
    h = 1e-6
    for i, j in chosen:
        p = params[i].data.view(-1)
        old = p[j].item()
        with torch.no_grad():
            p[j] = old + h
            up = total().item()
            p[j] = old - h
            down = total().item()
            p[j] = old
        fd = (up - down) / (2 * h)
        an = grads[i].reshape(-1)[j].item()
        assert abs(fd - an) <= 1e-3 * max(abs(fd), abs(an)) + 1e-8, (i, j, fd, an)


def test_checkpoint_round_trip(tmp_path, rng):
    model = toy_model(dtype=torch.float32)
    save_bundle(model, tmp_path / "m.mdt")
    back = load_bundle(tmp_path / "m.mdt")
    for (n1, p1), (n2, p2) in zip(model.state_dict().items(), back.state_dict().items()):
        assert n1 == n2 and torch.equal(p1, p2)
    model.eval()
    back.eval()
    cond, x_t, tmask, _ = toy_batch(rng, dtype=torch.float32)
    t = torch.tensor([3, 3, 3])
    with torch.no_grad():
        assert torch.equal(model(x_t, tmask, t, cond)[0], back(x_t, tmask, t, cond)[0])
    with pytest.raises(CheckpointError):
        load_bundle(tmp_path / "m.mdt", D=207)
    save_bundle(model, tmp_path / "again.mdt")
    assert (tmp_path / "m.mdt").read_bytes() == (tmp_path / "again.mdt").read_bytes()


def test_checkpoint_version_checked(tmp_path):
    save_bundle(toy_model(dtype=torch.float32), tmp_path / "m.mdt", extra={"version": "mdt-0"})
    with pytest.raises(CheckpointError):
        load_bundle(tmp_path / "m.mdt")
    (tmp_path / "junk.mdt").write_bytes(b"not a zip")
    with pytest.raises(CheckpointError):
        load_bundle(tmp_path / "junk.mdt")
