import math

import numpy as np
import pytest

import harp.harp_pass as hp
from conftest import SMALL
from harp.model import KVCache, embed, forward_rest, next_token_logits
from harp.harp_pass import HarpConfig, harp_step, perturb, should_reframe
from harp.rng import RandomSource
from harp.tensor_ops import shannon_entropy, softmax

PROMPT = [72, 101, 108, 108, 111]  # "Hello"


class TestConfig:
    def test_defaults_match_shipped_hyperparameters(self):
        cfg = HarpConfig()
        assert cfg.theta == 1.0
        assert cfg.delta == 0.20
        assert cfg.beta == 0.5
        assert cfg.max_reframe_steps == 1
        assert cfg.gate == "entropy"
        assert cfg.noise == "dropout"

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"gate": "sometimes"},
            {"noise": "gaussian"},
            {"theta": -0.5},
            {"delta": 1.2},
            {"beta": -0.1},
            {"max_reframe_steps": -1},
            {"noise": "neftune", "neftune_alpha": 0.0},
        ],
    )
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ValueError):
            HarpConfig(**kwargs)


class TestGate:
    def test_uniform_over_threshold(self):
        p = np.full(4, 0.25, dtype=np.float32)
        assert should_reframe(p, HarpConfig(theta=1.0)) is True

    def test_one_hot_strict_inequality(self):
        p = np.zeros(4, dtype=np.float32)
        p[2] = 1.0
        # entropy == theta == 0: strictly-greater gate must not fire
        assert should_reframe(p, HarpConfig(theta=0.0)) is False

    def test_skewed_distribution_exceeds_one_bit(self):
        p = np.array([0.7, 0.1, 0.1, 0.1], dtype=np.float32)
        assert shannon_entropy(p) > 1.0
        assert should_reframe(p, HarpConfig(theta=1.0)) is True

    def test_always_and_never(self):
        p = np.zeros(4, dtype=np.float32)
        p[0] = 1.0
        assert should_reframe(p, HarpConfig(gate="always")) is True
        uniform = np.full(4, 0.25, dtype=np.float32)
        assert should_reframe(uniform, HarpConfig(gate="never")) is False

    def test_threshold_monotonicity_on_fixed_distribution(self):
        rng = np.random.default_rng(1)
        p = softmax(rng.normal(size=50).astype(np.float32))
        thetas = [0.2, 0.8, 1.4, 2.0, 5.0]
        fired = [should_reframe(p, HarpConfig(theta=t)) for t in thetas]
        # once the gate stops firing it stays off for every larger threshold
        assert fired == sorted(fired, reverse=True)


class TestPerturb:
    def test_dropout_delta_zero_identity(self, small_ckpt):
        e = embed(PROMPT, small_ckpt)
        out = perturb(e, HarpConfig(delta=0.0), RandomSource(0).perturbation(0, 0))
        assert np.array_equal(out, e)

    def test_dropout_delta_one_zeroes(self, small_ckpt):
        e = embed(PROMPT, small_ckpt)
        out = perturb(e, HarpConfig(delta=1.0), RandomSource(0).perturbation(0, 0))
        assert np.array_equal(out, np.zeros_like(e))

    def test_dropout_unscaled_keeps_surviving_entries(self, small_ckpt):
        e = embed(PROMPT, small_ckpt)
        out = perturb(e, HarpConfig(delta=0.5), RandomSource(3).perturbation(0, 0))
        kept = out != 0.0
        assert np.array_equal(out[kept], e[kept])

    def test_scaled_dropout_mode(self, small_ckpt):
        e = embed(PROMPT, small_ckpt)
        rng_a = RandomSource(3).perturbation(0, 0)
        rng_b = RandomSource(3).perturbation(0, 0)
        plain = perturb(e, HarpConfig(delta=0.5), rng_a)
        scaled = perturb(e, HarpConfig(delta=0.5, scaled_dropout=True), rng_b)
        assert np.allclose(scaled, plain * 2.0, atol=1e-7)

    def test_neftune_bound(self, small_ckpt):
        e = embed(PROMPT, small_ckpt)
        alpha = 0.25
        cfg = HarpConfig(noise="neftune", neftune_alpha=alpha)
        out = perturb(e, cfg, RandomSource(0).perturbation(0, 0))
        bound = alpha / math.sqrt(e.shape[0] * e.shape[1])
        assert np.max(np.abs(out - e)) <= bound

    def test_noise_kinds_produce_different_views(self, small_ckpt):
        e = embed(PROMPT, small_ckpt)
        rng = RandomSource(2)
        dropped = perturb(e, HarpConfig(noise="dropout"), rng.perturbation(0, 0))
        noised = perturb(
            e, HarpConfig(noise="neftune", neftune_alpha=5.0), rng.perturbation(0, 0)
        )
        assert not np.array_equal(dropped, noised)
        # dropout only ever zeroes entries; additive noise shifts them
        assert np.all((dropped == 0.0) | (dropped == e))
        assert np.any(noised != e)


def vanilla_last_logits(tokens, ckpt):
    return forward_rest(embed(tokens, ckpt), ckpt)[-1]


class TestHarpStep:
    def test_gate_never_is_bit_exact_vanilla(self, small_ckpt):
        out = harp_step(PROMPT, small_ckpt, HarpConfig(gate="never"), RandomSource(0), 0)
        assert out.reframe_count == 0
        assert out.pre_reframe_top1 is None
        assert np.array_equal(out.final_logits, vanilla_last_logits(PROMPT, small_ckpt))

    def test_theta_above_log2_vocab_never_fires(self, small_ckpt):
        cfg = HarpConfig(theta=9.0)  # > log2(259) ~ 8.02
        out = harp_step(PROMPT, small_ckpt, cfg, RandomSource(0), 0)
        assert out.reframe_count == 0
        assert np.array_equal(out.final_logits, vanilla_last_logits(PROMPT, small_ckpt))

    def test_beta_one_always_gate_is_bit_exact_vanilla(self, small_ckpt):
        cfg = HarpConfig(beta=1.0, gate="always")
        out = harp_step(PROMPT, small_ckpt, cfg, RandomSource(0), 0)
        assert out.reframe_count == 1
        assert out.pre_reframe_top1 is not None
        assert np.array_equal(out.final_logits, vanilla_last_logits(PROMPT, small_ckpt))

    def test_delta_zero_reframe_equals_vanilla(self, small_ckpt):
        cfg = HarpConfig(delta=0.0, gate="always", beta=0.5)
        out = harp_step(PROMPT, small_ckpt, cfg, RandomSource(0), 0)
        assert out.reframe_count == 1
        vanilla = vanilla_last_logits(PROMPT, small_ckpt)
        assert np.max(np.abs(out.final_logits - vanilla)) < 1e-5

    def test_entropy_gate_fires_on_toy_checkpoint(self, small_ckpt):
        # random toy weights give near-uniform logits, far above one bit
        out = harp_step(PROMPT, small_ckpt, HarpConfig(), RandomSource(0), 0)
        assert out.entropy_bits > 1.0
        assert out.reframe_count == 1
        assert out.final_logits.shape == (SMALL.vocab_size,)

    def test_pre_reframe_top1_is_initial_argmax(self, small_ckpt):
        vanilla = vanilla_last_logits(PROMPT, small_ckpt)
        out = harp_step(PROMPT, small_ckpt, HarpConfig(gate="always"), RandomSource(5), 0)
        assert out.pre_reframe_top1 == int(np.argmax(vanilla))

    def test_forward_pass_accounting(self, small_ckpt, monkeypatch):
        calls = {"n": 0}
        real = hp.forward_rest

        def counting(*args, **kwargs):
            calls["n"] += 1
            return real(*args, **kwargs)

        monkeypatch.setattr(hp, "forward_rest", counting)
        for k in (0, 1, 3):
            calls["n"] = 0
            cfg = HarpConfig(gate="always", max_reframe_steps=k)
            out = harp_step(PROMPT, small_ckpt, cfg, RandomSource(2), 0)
            assert out.reframe_count == k
            assert out.forward_passes == 1 + k
            assert calls["n"] == 1 + k

    def test_reframes_draw_independent_noise(self, small_ckpt):
        cfg = HarpConfig(gate="always", max_reframe_steps=3)
        out = harp_step(PROMPT, small_ckpt, cfg, RandomSource(4), 0)
        # three blended entropies recorded, one per reframe
        assert len(out.entropies_after_each_reframe) == 3
        # the same step with a different seed produces different logits
        other = harp_step(PROMPT, small_ckpt, cfg, RandomSource(5), 0)
        assert not np.array_equal(out.final_logits, other.final_logits)

    def test_deterministic_given_seed_and_stream(self, small_ckpt):
        cfg = HarpConfig(gate="always", max_reframe_steps=2)
        a = harp_step(PROMPT, small_ckpt, cfg, RandomSource(9, 3), 7)
        b = harp_step(PROMPT, small_ckpt, cfg, RandomSource(9, 3), 7)
        assert np.array_equal(a.final_logits, b.final_logits)
        assert a.entropies_after_each_reframe == b.entropies_after_each_reframe

    def test_multistep_gate_reevaluates_on_blended_logits(self):
        # scanned fixture: blending calms the distribution below theta before
        # the reframe budget is exhausted, so the loop must stop early
        from conftest import REFERENCE, sharpened_checkpoint

        ckpt = sharpened_checkpoint(REFERENCE, seed=3)
        prompt = [256] + [ord(c) for c in "The meaning of life is"]
        cfg = HarpConfig(theta=1.0, max_reframe_steps=4)
        out = harp_step(prompt, ckpt, cfg, RandomSource(0), 0)
        assert out.entropy_bits > cfg.theta
        assert 0 < out.reframe_count < cfg.max_reframe_steps
        # every blend but the last left the gate firing; the last closed it
        *firing, final = out.entropies_after_each_reframe
        assert all(e > cfg.theta for e in firing)
        assert final <= cfg.theta

    def test_multistep_stop_law_holds_generally(self):
        from conftest import REFERENCE, sharpened_checkpoint

        ckpt = sharpened_checkpoint(REFERENCE, seed=3)
        cfg = HarpConfig(theta=1.0, max_reframe_steps=4)
        for seed in range(6):
            out = harp_step(PROMPT, ckpt, cfg, RandomSource(seed), 0)
            ents = out.entropies_after_each_reframe
            assert all(e > cfg.theta for e in ents[:-1])
            if out.reframe_count < cfg.max_reframe_steps and out.reframe_count > 0:
                assert ents[-1] <= cfg.theta


class TestMultiStepWeighting:
    @pytest.mark.parametrize("k", [1, 2, 3, 4])
    def test_original_weight_is_beta_to_the_k(self, small_ckpt, k):
        """delta=1 zeroes every perturbed embedding, so all reframed passes
        produce one fixed logit vector Lz; iterating the blend then gives
        final = beta^k * L0 + (1 - beta^k) * Lz, which exposes the weight
        of the original logits directly."""
        beta = 0.5
        cfg = HarpConfig(delta=1.0, beta=beta, gate="always", max_reframe_steps=k)
        out = harp_step(PROMPT, small_ckpt, cfg, RandomSource(0), 0)
        assert out.reframe_count == k

        l0 = vanilla_last_logits(PROMPT, small_ckpt).astype(np.float64)
        zero_e = np.zeros_like(embed(PROMPT, small_ckpt))
        lz = forward_rest(zero_e, small_ckpt)[-1].astype(np.float64)
        expected = (beta**k) * l0 + (1.0 - beta**k) * lz
        assert np.max(np.abs(out.final_logits.astype(np.float64) - expected)) < 1e-6

    def test_recovered_weight_from_instrumented_combines(self, small_ckpt, monkeypatch):
        captured = []
        real = hp.combine_logits

        def recording(orig, reframed, beta):
            captured.append((orig.copy(), reframed.copy(), beta))
            return real(orig, reframed, beta)

        monkeypatch.setattr(hp, "combine_logits", recording)
        k, beta = 3, 0.5
        cfg = HarpConfig(gate="always", max_reframe_steps=k, beta=beta)
        out = harp_step(PROMPT, small_ckpt, cfg, RandomSource(1), 0)
        assert len(captured) == k

        # replay the telescoped blend: beta^k on the initial logits plus
        # (1-beta) * beta^(k-1-j) on each reframed vector
        l0 = captured[0][0].astype(np.float64)
        expected = (beta**k) * l0
        for j, (_, reframed, _) in enumerate(captured):
            expected += (1.0 - beta) * (beta ** (k - 1 - j)) * reframed.astype(np.float64)
        assert np.max(np.abs(out.final_logits.astype(np.float64) - expected)) < 1e-6


class TestCacheInteraction:
    def test_primary_pass_updates_cache(self, small_ckpt):
        cache = KVCache.empty(SMALL)
        harp_step(PROMPT, small_ckpt, HarpConfig(gate="always"), RandomSource(0), 0, cache)
        assert cache.cached_len == len(PROMPT)

    def test_reframed_passes_do_not_touch_cache(self, small_ckpt):
        cfg = HarpConfig(gate="always", max_reframe_steps=4)
        cache = KVCache.empty(SMALL)
        harp_step(PROMPT, small_ckpt, cfg, RandomSource(0), 0, cache)
        snapshot = [k.copy() for k in cache.keys]

        reference = KVCache.empty(SMALL)
        harp_step(PROMPT, small_ckpt, HarpConfig(gate="never"), RandomSource(0), 0, reference)
        for got, want in zip(snapshot, reference.keys):
            assert np.array_equal(got, want)

    def test_cached_decoding_stays_consistent_after_reframes(self, small_ckpt):
        cfg = HarpConfig(gate="always")
        cache = KVCache.empty(SMALL)
        tokens = list(PROMPT)
        for step in range(6):
            out = harp_step(tokens, small_ckpt, cfg, RandomSource(3), step, cache)
            tokens.append(int(np.argmax(out.final_logits)))
            cached_logits = next_token_logits(tokens, small_ckpt, cache.fork())
            full_logits = next_token_logits(tokens, small_ckpt, None)
            assert np.max(np.abs(cached_logits - full_logits)) < 1e-4
