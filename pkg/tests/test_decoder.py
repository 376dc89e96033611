import math

import numpy as np
import pytest

from exemplarnet import tensor as T
from exemplarnet.data import START, STOP
from exemplarnet.decoder import (decode_argmax, decode_sample, decode_train, init_decoder, next_token_probs,
                                 start_state, step)
from exemplarnet.encoders import InputError
from exemplarnet.optim import RMSProp
from exemplarnet.tensor import Tensor

from conftest import assert_grads

V, E, H = 8, 5, 6
SEQ = [START, 4, 6, 3, 5, STOP]


def dec_params(rng, v=V, e=E, h=H):
    p = {}
    init_decoder(p, rng, v, e, h)
    return p


def overfit(rng, seq=SEQ, steps=400):
    p = dec_params(rng)
    e = rng.standard_normal(E)
    opt = RMSProp(0.02, 0.99)
    for _ in range(steps):
        for t in p.values():
            t.grad = None
        _, loss = decode_train(e, seq, p)
        loss.backward()
        opt.step(p, {k: t.grad for k, t in p.items()})
    return p, e


class TestDecodeTrain:
    def test_uniform_two_symbol(self, rng):
        p = dec_params(rng, v=2)
        p["dec.W_o"].data[:] = 0.0
        logits, loss = decode_train(rng.standard_normal(E), [START, 0, 1, 0], p)
        assert logits.shape == (1, 3, 2)
        assert loss.item() == pytest.approx(math.log(2), abs=1e-15)

    def test_input_errors(self, rng):
        p = dec_params(rng)
        with pytest.raises(InputError):
            decode_train(rng.standard_normal(E), [START], p)
        with pytest.raises(InputError):
            decode_train(rng.standard_normal(E), [4, 5], p)

    def test_loss_is_token_average(self, rng):
        p = dec_params(rng)
        e = rng.standard_normal(E)
        logits, loss = decode_train(e, SEQ, p)
        lp = logits.data[0] - np.log(np.exp(logits.data[0]).sum(axis=1, keepdims=True))
        want = -np.mean([lp[t, SEQ[t + 1]] for t in range(len(SEQ) - 1)])
        assert loss.item() == pytest.approx(want, abs=1e-13)

    def test_context_enters_first_step_only(self, rng):
        # the step -1 input is e; later steps read only the previous token
        p = dec_params(rng)
        e = Tensor(rng.standard_normal((1, E)))
        st = start_state(e, p)
        st2, logits = step(st, [START], p)
        assert st.step == 0 and st2.step == 1 and logits.shape == (1, V)
        np.testing.assert_allclose(decode_train(e.data[0], SEQ[:2], p)[0].data[0, 0], logits.data[0], atol=1e-15)

    def test_padded_batch_masks(self, rng):
        p = dec_params(rng)
        es = rng.standard_normal((2, E))
        short = [START, 4, STOP]
        batch = np.array([SEQ, short + [0] * 3])
        _, loss = decode_train(es, batch, p, lengths=[6, 3])
        l1 = decode_train(es[0], SEQ, p)[1].item()
        l2 = decode_train(es[1], short, p)[1].item()
        assert loss.item() == pytest.approx((5 * l1 + 2 * l2) / 7, abs=1e-13)

    def test_gradient_four_steps(self, rng):
        p = dec_params(rng)
        e = Tensor(rng.standard_normal(E), requires_grad=True)
        assert_grads(lambda: decode_train(e, [START, 4, 6, 3, STOP], p)[1], {**p, "e": e}, rel=1e-4)

    def test_gradient_descent_monotone(self, rng):
        p = dec_params(rng)
        e = rng.standard_normal(E)
        losses = []
        for _ in range(50):
            for t in p.values():
                t.grad = None
            _, loss = decode_train(e, SEQ, p)
            loss.backward()
            losses.append(loss.item())
            for t in p.values():
                t.data = t.data - 0.5 * t.grad
        assert all(b < a for a, b in zip(losses, losses[1:]))


class TestDecoding:
    def test_argmax_deterministic_and_no_start(self, rng):
        p = dec_params(rng)
        p["dec.b_o"].data[START] = 50.0  # START would win if it were not masked
        e = rng.standard_normal(E)
        a = decode_argmax(e, p, max_len=7)
        assert a == decode_argmax(e, p, max_len=7)
        assert a[0] == START and START not in a[1:]
        assert len(a) == 7 or a[-1] == STOP

    def test_probs_normalized(self, rng):
        p = dec_params(rng)
        probs = next_token_probs(rng.standard_normal(E), [START, 4, 5], p)
        assert abs(probs.sum() - 1) < 1e-9 and probs[START] == 0.0

    def test_overfit_reproduces_question(self, rng):
        p, e = overfit(rng)
        _, loss = decode_train(e, SEQ, p)
        assert loss.item() < 0.01
        assert decode_argmax(e, p, max_len=12) == SEQ

    def test_sample_seeded(self, rng):
        p = dec_params(rng)
        e = rng.standard_normal(E)
        assert decode_sample(e, p, 8, seed=3) == decode_sample(e, p, 8, seed=3)

    def test_zero_temperature_is_argmax(self, rng):
        p = dec_params(rng)
        e = rng.standard_normal(E)
        assert decode_sample(e, p, 8, seed=1, temperature=0.0) == decode_argmax(e, p, 8)
        with pytest.raises(ValueError):
            decode_sample(e, p, 8, temperature=-1.0)

    def test_low_temperature_approaches_argmax(self, rng):
        p = dec_params(rng)
        p["dec.W_o"].data *= 20
        e = rng.standard_normal(E)
        assert decode_sample(e, p, 8, seed=5, temperature=1e-3) == decode_argmax(e, p, 8)

    def test_sample_frequencies(self, rng):
        p = dec_params(rng)
        e = rng.standard_normal(E)
        probs = next_token_probs(e, [START], p)
        n = 10_000
        counts = np.bincount([decode_sample(e, p, max_len=2, seed=s)[1] for s in range(n)], minlength=V)
        sigma = np.sqrt(n * probs * (1 - probs))
        assert np.all(np.abs(counts - n * probs) <= 3 * sigma + 1e-9)
