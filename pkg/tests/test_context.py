import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from exemplarnet import tensor as T
from exemplarnet.attention import init_answer_head, init_attention
from exemplarnet.context import (DcnConfig, SingularityError, dan_forward, dcn_combine, dcn_forward, init_dcn,
                                 opposing_context, projection, quintuplet_forward, rejection, supporting_context)
from exemplarnet.encoders import InputError
from exemplarnet.objectives import nll, quintuplet_hinge, quintuplet_loss, triplet_hinge, triplet_loss
from exemplarnet.tensor import Tensor

from conftest import assert_grads

vec = hnp.arrays(np.float64, 6, elements=st.floats(-1, 1))


def params(rng, Dh=3, E=3, C=4, dcn=None):
    p = {}
    init_attention(p, rng, Dh, E)
    init_answer_head(p, rng, Dh, E, C)
    if dcn:
        init_dcn(p, dcn)
    for k, t in p.items():
        if not k.startswith("dcn."):
            t.data = rng.uniform(-1, 1, t.shape)
    return p


def triple(rng, R=3, Dh=3, E=3):
    return tuple((rng.standard_normal((R, Dh)), rng.standard_normal(E)) for _ in range(3))


class TestContext:
    def test_identity_inputs(self, rng):
        s = rng.random(5)
        np.testing.assert_allclose(supporting_context(s, s, s).data, 2 * s, atol=1e-15)

    def test_orthogonal_inputs(self):
        s, o = np.array([1.0, 0.0, 0.0]), np.array([0.0, 2.0, -1.0])
        np.testing.assert_array_equal(supporting_context(s, o, o).data, np.zeros(3))

    def test_hand_values(self):
        s, sp, sn = np.array([1.0, 0.0]), np.array([1.0, 1.0]), np.array([2.0, 0.0])
        np.testing.assert_allclose(supporting_context(s, sp, sn).data, [3.0, 0.0], atol=1e-15)
        np.testing.assert_allclose(opposing_context(s, sp, sn).data, [0.0, 1.0], atol=1e-15)

    def test_parallel_inputs_no_opposing(self, rng):
        s = rng.random(4)
        np.testing.assert_allclose(opposing_context(s, 3 * s, -0.5 * s).data, np.zeros(4), atol=1e-15)

    def test_loop_oracle(self, rng):
        s, sp, sn = rng.random(7), rng.random(7), rng.random(7)
        n2 = sum(x * x for x in s)
        cp, cn = sum(a * b for a, b in zip(s, sp)) / n2, sum(a * b for a, b in zip(s, sn)) / n2
        want_p = [(cp + cn) * x for x in s]
        want_n = [sp[i] - cp * s[i] + sn[i] - cn * s[i] for i in range(7)]
        np.testing.assert_allclose(supporting_context(s, sp, sn).data, want_p, atol=1e-14)
        np.testing.assert_allclose(opposing_context(s, sp, sn).data, want_n, atol=1e-14)

    def test_zero_target_raises(self):
        with pytest.raises(SingularityError):
            supporting_context(np.zeros(3), np.ones(3), np.ones(3))
        with pytest.raises(SingularityError):
            opposing_context(np.full(3, 1e-14), np.ones(3), np.ones(3))

    def test_batched_rows(self, rng):
        s, sp, sn = rng.random((4, 5)), rng.random((4, 5)), rng.random((4, 5))
        rp = supporting_context(s, sp, sn).data
        for b in range(4):
            np.testing.assert_allclose(rp[b], supporting_context(s[b], sp[b], sn[b]).data, atol=1e-15)

    def test_gradients(self, rng):
        s, sp, sn = (Tensor(rng.random(4) + 0.1, requires_grad=True) for _ in range(3))
        w = Tensor(rng.standard_normal(4))
        assert_grads(lambda: T.sum(T.mul(T.add(supporting_context(s, sp, sn), T.tanh(opposing_context(s, sp, sn))), w)),
                     {"s": s, "sp": sp, "sn": sn}, rel=1e-4)

    @settings(max_examples=100, deadline=None)
    @given(vec, vec, vec)
    def test_decomposition_and_orthogonality(self, s, sp, sn):
        if np.linalg.norm(s) < 1e-3:
            return
        for v in (sp, sn):
            np.testing.assert_allclose(projection(v, s).data + rejection(v, s).data, v, atol=1e-10)
        rp, rn = supporting_context(s, sp, sn).data, opposing_context(s, sp, sn).data
        np.testing.assert_allclose(rp + rn, sp + sn, atol=1e-10)
        assert abs(rn @ s) <= 1e-9 * max(1.0, np.linalg.norm(rn) * np.linalg.norm(s))
        # r+ lies on the line of s
        assert abs(rp[0] * s[1] - rp[1] * s[0]) <= 1e-9 * max(1.0, np.linalg.norm(rp) * np.linalg.norm(s))

    @settings(max_examples=60, deadline=None)
    @given(vec, vec, vec, st.floats(0.01, 100))
    def test_scale_robustness(self, s, sp, sn, lam):
        if np.linalg.norm(s) < 1e-3:
            return
        rp1, rp2 = supporting_context(s, sp, sn).data, supporting_context(lam * s, sp, sn).data
        np.testing.assert_allclose(opposing_context(lam * s, sp, sn).data, opposing_context(s, sp, sn).data,
                                   atol=1e-10)
        n1, n2 = np.linalg.norm(rp1), np.linalg.norm(rp2)
        if n1 > 1e-6:
            np.testing.assert_allclose(rp1 / n1, rp2 / n2, atol=1e-9)


class TestCombine:
    @pytest.mark.parametrize("scaling", ["v1", "v2"])
    def test_equal_contexts(self, rng, scaling):
        s, r = rng.random(5), rng.random(5)
        p = {}
        init_dcn(p, DcnConfig("add", scaling))
        d, probs = dcn_combine(s, r, r, DcnConfig("add", scaling), p)
        np.testing.assert_allclose(d.data, s, atol=1e-15)
        d, probs = dcn_combine(s, r, r, DcnConfig("mul", scaling), p)
        np.testing.assert_array_equal(d.data, np.zeros(5))
        np.testing.assert_allclose(probs.data, np.full(5, 0.2))

    def test_v1_v2_agree_at_unit_weights(self, rng):
        s, rp, rn = rng.random(6), rng.random(6), rng.random(6)
        p = {}
        init_dcn(p, DcnConfig("mul", "v2"))
        a = dcn_combine(s, rp, rn, DcnConfig("mul", "v1"))[1].data
        b = dcn_combine(s, rp, rn, DcnConfig("mul", "v2"), p)[1].data
        np.testing.assert_array_equal(a, b)

    def test_learned_weights_enter(self, rng):
        s, rp, rn = rng.random(4), rng.random(4), rng.random(4)
        p = {}
        init_dcn(p, DcnConfig("mul", "v2"))
        p["dcn.w1"].data[:] = 0.5
        p["dcn.w2"].data[:] = 2.0
        d, _ = dcn_combine(s, rp, rn, DcnConfig("mul", "v2"), p)
        np.testing.assert_allclose(d.data, s * np.tanh(0.5 * rp - 2.0 * rn), atol=1e-15)

    def test_bad_config(self):
        with pytest.raises(ValueError):
            DcnConfig("sub", "v1")
        with pytest.raises(ValueError):
            DcnConfig("mul", "v3")


def transcript_dcn(tri, p, combine):
    """Straight-line scalar evaluation of the DCN forward for the first triple."""
    def amap(grid, text):
        R, Dh = grid.shape
        E = len(text)
        q = [sum(text[e] * p["att.W_Q"].data[e, j] for e in range(E)) + p["att.b_q"].data[j] for j in range(Dh)]
        z = []
        for r in range(R):
            h = [math.tanh(sum(grid[r, i] * p["att.W_I"].data[i, j] for i in range(Dh)) + q[j]) for j in range(Dh)]
            z.append(sum(h[j] * p["att.W_P"].data[j, 0] for j in range(Dh)) + p["att.b_P"].data[0])
        m = max(z)
        e = [math.exp(v - m) for v in z]
        return [v / sum(e) for v in e]

    (g, f), (gp, fp), (gn, fn) = tri
    s, sp, sn = amap(g, f), amap(gp, fp), amap(gn, fn)
    n2 = sum(x * x for x in s)
    cp = sum(a * b for a, b in zip(s, sp)) / n2
    cn = sum(a * b for a, b in zip(s, sn)) / n2
    w1, w2 = p["dcn.w1"].data[0], p["dcn.w2"].data[0]
    d = []
    for i in range(len(s)):
        rplus = cp * s[i] + cn * s[i]
        rminus = (sp[i] - cp * s[i]) + (sn[i] - cn * s[i])
        gate = math.tanh(w1 * rplus - w2 * rminus)
        d.append(s[i] + gate if combine == "add" else s[i] * gate)
    m = max(d)
    e = [math.exp(v - m) for v in d]
    att = [v / sum(e) for v in e]
    Dh = g.shape[1]
    v = [sum(att[r] * g[r, j] for r in range(len(att))) for j in range(Dh)]
    C = p["cls.b_A"].shape[0]
    logits = [sum((v[j] + f[j]) * p["cls.W_A"].data[j, c] for j in range(Dh)) + p["cls.b_A"].data[c]
              for c in range(C)]
    return att, logits


class TestForward:
    def test_dan_identical_triple(self, rng):
        p = params(rng)
        g, f = rng.standard_normal((3, 3)), rng.standard_normal(3)
        s, sp, sn, logits = dan_forward(((g, f),) * 3, p)
        np.testing.assert_array_equal(s.data, sp.data)
        np.testing.assert_array_equal(s.data, sn.data)
        assert triplet_loss(s.data, sp.data, sn.data)[0] == pytest.approx(0.2, abs=1e-15)

    def test_dan_logits_from_target_only(self, rng):
        p = params(rng)
        tri = triple(rng)
        base = dan_forward(tri, p)[3].data
        other = (tri[0], triple(rng)[1], triple(rng)[2])
        np.testing.assert_array_equal(dan_forward(other, p)[3].data, base)

    @pytest.mark.parametrize("combine", ["add", "mul"])
    def test_dcn_scalar_transcript(self, rng, combine):
        cfg = DcnConfig(combine, "v2")
        p = params(rng, dcn=cfg)
        p["dcn.w1"].data[:] = 0.7
        p["dcn.w2"].data[:] = 1.3
        tri = triple(rng)
        _, _, _, att, logits = dcn_forward(tri, p, cfg)
        want_att, want_logits = transcript_dcn(tri, p, combine)
        np.testing.assert_allclose(att.data, want_att, atol=1e-10, rtol=0)
        np.testing.assert_allclose(logits.data, want_logits, atol=1e-10, rtol=0)
        assert abs(att.data.sum() - 1) < 1e-12

    @pytest.mark.parametrize("combine", ["add", "mul"])
    def test_dcn_end_to_end_gradient(self, rng, combine):
        cfg = DcnConfig(combine, "v2")
        p = params(rng, dcn=cfg)
        tri = triple(rng)

        def loss():
            s, sp, sn, _, logits = dcn_forward(tri, p, cfg)
            cls = nll(T.reshape(logits, (1, 4)), [2], prefactor=0.25)
            trip = triplet_hinge(T.reshape(s, (1, 3)), T.reshape(sp, (1, 3)), T.reshape(sn, (1, 3)), 0.2)
            return T.sum(T.add(cls, trip))
        assert_grads(loss, p, rel=1e-4)

    def test_quintuplet_forward(self, rng):
        p = params(rng)
        g, f = rng.standard_normal((3, 3)), rng.standard_normal(3)
        maps, logits = quintuplet_forward([(g, f)] * 5, p)
        assert len(maps) == 5 and logits.shape == (4,)
        hinge = quintuplet_hinge([T.reshape(m, (1, 3)) for m in maps])
        assert hinge.data[0] == pytest.approx(0.006 + 0.2 + 0.006, abs=1e-15)

    def test_quintuplet_needs_five(self, rng):
        g, f = rng.standard_normal((3, 3)), rng.standard_normal(3)
        with pytest.raises(InputError):
            quintuplet_forward([(g, f)] * 3, params(rng))

    def test_quintuplet_brute_force(self, rng):
        maps = [rng.dirichlet(np.ones(6)) for _ in range(5)]
        d = [sum((a - b) ** 2 for a, b in zip(maps[0], m)) for m in maps[1:]]
        want = sum(max(0.0, mg + d[i] - d[i + 1]) for i, mg in enumerate((0.006, 0.2, 0.006)))
        assert quintuplet_loss(*maps) == pytest.approx(want, abs=1e-12)
        assert quintuplet_hinge([Tensor(m[None]) for m in maps]).data[0] == pytest.approx(want, abs=1e-12)
