import numpy as np
import pytest

from textssl import autodiff as ad
from textssl import objective as obj
from textssl import recognizer as rec


@pytest.fixture
def small_setup():
    cfg = rec.RecognizerConfig(
        image_height=4, image_width=8, column_stride=2,
        feature_dim=6, hidden_dim=5, embed_dim=4, attention_dim=5, max_len=4,
    )
    alpha = rec.Alphabet("abc")
    state = rec.ModelState(cfg, alpha, rng=np.random.default_rng(21))
    img = np.random.default_rng(22).uniform(size=(4, 8))
    return state, alpha, img


def _const_trace(prob_rows, tokens=None):
    rows = [ad.constant(np.asarray(r)) for r in prob_rows]
    logs = [ad.constant(np.log(np.asarray(r))) for r in prob_rows]
    tokens = tokens or [0] * len(rows)
    conf = float(np.prod([r.data.max() for r in rows]))
    return rec.DecodeTrace(tokens, rows, logs, [ad.constant(np.zeros(2))] * len(rows),
                           [ad.take(l, t) for l, t in zip(logs, tokens)], conf)


class TestCeLoss:
    def test_perfect_predictions_give_zero(self):
        eps = 1e-300
        trace = _const_trace([[1.0 - eps, eps], [eps, 1.0 - eps]], tokens=[0, 1])
        assert obj.ce_loss(trace, [0, 1]).item() == pytest.approx(0.0, abs=1e-12)

    def test_uniform_over_39_tokens(self):
        p = np.full(39, 1.0 / 39.0)
        trace = _const_trace([p, p], tokens=[3, 7])
        assert obj.ce_loss(trace, [3, 7]).item() == pytest.approx(np.log(39.0))

    def test_rejects_length_mismatch(self):
        trace = _const_trace([[0.5, 0.5]])
        with pytest.raises(ValueError, match="length"):
            obj.ce_loss(trace, [0, 1])

    def test_grad_check(self, small_setup):
        state, alpha, img = small_setup
        seq = alpha.targets("ba")
        params = list(state.params.values())

        def f(_):
            feats = rec.encode(state, img)
            return obj.ce_loss(rec.decode_teacher_forcing(state, feats, seq), seq)

        assert ad.grad_check(f, params) < 1e-4


class TestCcrLoss:
    def test_identical_distributions_above_gate(self):
        p = [[0.4, 0.6], [0.9, 0.1]]
        teacher = _const_trace(p)
        teacher.confidence = 0.9
        student = _const_trace(p)
        assert obj.ccr_loss(teacher, student, tau=0.5).item() == pytest.approx(0.0, abs=1e-12)

    def test_gated_off_returns_plain_zero(self):
        teacher = _const_trace([[0.9, 0.1]])
        teacher.confidence = 0.4
        student = _const_trace([[0.1, 0.9]])
        loss = obj.ccr_loss(teacher, student, tau=0.5)
        assert loss.item() == 0.0
        assert not loss.requires_grad

    def test_closed_form_kl_value(self):
        teacher = _const_trace([[0.5, 0.5]])
        teacher.confidence = 0.9
        student = _const_trace([[0.25, 0.75]])
        expected = 0.5 * np.log(0.5 / 0.25) + 0.5 * np.log(0.5 / 0.75)
        assert expected == pytest.approx(0.14384, abs=1e-5)
        assert obj.ccr_loss(teacher, student, tau=0.5).item() == pytest.approx(expected, abs=1e-12)

    def test_rejects_length_mismatch(self):
        teacher = _const_trace([[0.5, 0.5]])
        student = _const_trace([[0.5, 0.5], [0.5, 0.5]])
        with pytest.raises(ValueError, match="length"):
            obj.ccr_loss(teacher, student, tau=0.0)

    def test_gate_blocks_gradients_bitwise(self, small_setup):
        state, alpha, img = small_setup
        feats = rec.encode(state, img)
        pseudo = alpha.targets("ab")
        with ad.no_grad():
            teacher = rec.decode_teacher_forcing(state, rec.encode(state, img), pseudo)
        teacher.confidence = 0.1  # force below threshold
        student = rec.decode_teacher_forcing(state, feats, pseudo)
        loss = obj.ccr_loss(teacher, student, tau=0.5)
        assert ad.backward(loss) == {}
        assert all(p.grad is None for p in state.params.values())

    def test_grad_check(self, small_setup):
        state, alpha, img = small_setup
        pseudo = alpha.targets("cb")
        rng = np.random.default_rng(30)
        teacher_rows = rng.dirichlet(np.ones(alpha.size), size=len(pseudo))
        teacher = _const_trace(teacher_rows, tokens=pseudo)
        teacher.confidence = 0.99
        params = list(state.params.values())

        def f(_):
            feats = rec.encode(state, img)
            student = rec.decode_teacher_forcing(state, feats, pseudo)
            return obj.ccr_loss(teacher, student, tau=0.5)

        assert ad.grad_check(f, params) < 1e-4

    def test_kl_non_negative_property(self):
        rng = np.random.default_rng(31)
        for _ in range(200):
            p = rng.dirichlet(np.ones(5))
            q = rng.dirichlet(np.ones(5))
            assert obj.kl_divergence(p, q) >= -1e-12
        p = rng.dirichlet(np.ones(5))
        assert obj.kl_divergence(p, p) == pytest.approx(0.0, abs=1e-12)


class TestTotalLoss:
    def test_default_weights_combination(self):
        ce = ad.constant(2.0)
        ccr = ad.constant(0.3)
        wvcr = ad.constant(1.5)
        scst = ad.constant(-0.2)
        total, bd = obj.total_loss(ce, ccr, wvcr, scst, 1.0, 0.1, 0.1, gate_pass_fraction=0.5)
        assert total.item() == pytest.approx(2.0 + 1.0 * 0.3 + 0.1 * 1.5 + 0.1 * -0.2)
        assert bd.total == pytest.approx(total.item())
        assert bd.gate_pass_fraction == 0.5

    def test_all_gated_off_reduces_to_ce(self):
        ce = ad.constant(1.7)
        zero = ad.constant(0.0)
        total, bd = obj.total_loss(ce, zero, zero, zero, 1.0, 0.1, 0.1)
        assert total.item() == pytest.approx(1.7)

    def test_zero_lambdas_reduce_to_ce(self):
        ce = ad.constant(1.7)
        total, _ = obj.total_loss(ce, ad.constant(9.0), ad.constant(9.0), ad.constant(9.0), 0.0, 0.0, 0.0)
        assert total.item() == pytest.approx(1.7)

    def test_disabled_components_zero_columns(self):
        total, bd = obj.total_loss(ad.constant(1.0), None, None, None, 1.0, 0.1, 0.1)
        assert bd.ccr == bd.wvcr == bd.scst == 0.0
        assert total.item() == 1.0

    def test_linear_in_each_component(self):
        ce = ad.constant(1.0)
        for lam in (0.0, 0.5, 2.0):
            total, _ = obj.total_loss(ce, ad.constant(3.0), None, None, lam, 0.0, 0.0)
            assert total.item() == pytest.approx(1.0 + lam * 3.0)

    def test_rejects_negative_lambda(self):
        with pytest.raises(ValueError, match="lambda2"):
            obj.total_loss(ad.constant(1.0), None, None, None, 1.0, -0.1, 0.1)
