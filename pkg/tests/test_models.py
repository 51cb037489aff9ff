import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import siamese_loss64
from siamshift.backbone import Adam, Tape, Tensor, backward, ops
from siamshift.errors import DimensionError, FormatError
from siamshift.models import (
    CONCAT,
    SUBTRACT,
    DirectClassifier,
    EncoderConfig,
    SiameseSimilarity,
    build_encoder,
    load_model,
    predict_class,
    save_model,
    similarity,
)

TINY = EncoderConfig(((3, 3, True), (4, 3, True)), 6, (1, 8, 8))


@pytest.fixture(scope="module")
def default_models():
    return DirectClassifier(EncoderConfig(), seed=0), SiameseSimilarity(EncoderConfig(), seed=0)


class TestEncoder:
    def test_default_output_shape(self, rng):
        enc = build_encoder(EncoderConfig())
        assert enc(Tensor(rng.uniform(size=(2, 1, 32, 32)))).shape == (2, 256)

    def test_pool_on_odd_dimension(self):
        with pytest.raises(DimensionError, match="odd"):
            EncoderConfig(((4, 3, True), (4, 3, True)), 8, (1, 6, 6))

    def test_embedding_dim_positive(self):
        with pytest.raises(DimensionError):
            EncoderConfig(embedding_dim=0)

    def test_wrong_input_shape(self, rng):
        with pytest.raises(DimensionError):
            build_encoder(TINY)(Tensor(rng.uniform(size=(1, 1, 9, 8))))

    def test_config_dict_round_trip(self):
        assert EncoderConfig.from_dict(json.loads(json.dumps(TINY.to_dict()))) == TINY

    def test_parameter_names_unique(self, default_models):
        for m in default_models:
            names = [p.name for p in m.parameters()]
            assert len(names) == len(set(names))


class TestDirect:
    def test_zero_head_gives_half(self, rng):
        m = DirectClassifier(TINY, zero_head=True)
        assert predict_class(m, rng.uniform(size=(1, 8, 8))) == 0.5

    def test_output_range(self, rng):
        m = DirectClassifier(TINY, seed=3)
        for scale in (1, 100, 1e4):
            m.out.weight.data = m.out.weight.data * np.float32(scale)
            p = m.predict_proba(rng.uniform(size=(20, 1, 8, 8)))
            assert np.all((p > 0) & (p < 1))

    def test_shape_mismatch(self, rng):
        with pytest.raises(DimensionError):
            predict_class(DirectClassifier(TINY), rng.uniform(size=(1, 7, 8)))

    def test_parameter_count(self, default_models):
        assert default_models[0].parameter_count() == 371_841


class TestSiamese:
    def test_zero_head_concat_gives_half(self, rng):
        m = SiameseSimilarity(TINY, zero_head=True)
        assert similarity(m, rng.uniform(size=(1, 8, 8)), rng.uniform(size=(1, 8, 8))) == 0.5

    def test_subtract_self_pair_constant(self, rng):
        m = SiameseSimilarity(TINY, merge=SUBTRACT, seed=4)
        x = rng.uniform(size=(10, 1, 8, 8))
        s = m.pair_scores(x, x)
        assert np.all(s == s[0])

    def test_output_range(self, rng):
        m = SiameseSimilarity(TINY, seed=1)
        m.fc3.weight.data = m.fc3.weight.data * np.float32(1e4)
        s = m.pair_scores(rng.uniform(size=(30, 1, 8, 8)), rng.uniform(size=(30, 1, 8, 8)))
        assert np.all((s > 0) & (s < 1))

    def test_shape_mismatch(self, rng):
        m = SiameseSimilarity(TINY)
        with pytest.raises(DimensionError):
            m.forward(Tensor(rng.uniform(size=(2, 1, 8, 8))), Tensor(rng.uniform(size=(3, 1, 8, 8))))

    def test_bad_merge(self):
        with pytest.raises(ValueError):
            SiameseSimilarity(TINY, merge="add")

    def test_tying_is_structural(self, rng):
        m = SiameseSimilarity(TINY, seed=2)
        a, b = Tensor(rng.uniform(size=(4, 1, 8, 8))), Tensor(rng.uniform(size=(4, 1, 8, 8)))
        with Tape() as tape:
            m.forward(a, b)
        first_kernel = m.encoder.convs[0][0]
        users = [r for r in tape.records if any(x is first_kernel for x in r.inputs)]
        assert len(users) == 2
        assert len({id(p.data) for p in m.encoder.parameters()}) == len(m.encoder.parameters())

    def test_both_branches_see_the_update(self, rng):
        m = SiameseSimilarity(TINY, seed=2)
        x = rng.uniform(size=(4, 1, 8, 8)).astype(np.float32)
        y = rng.uniform(size=(4, 1, 8, 8)).astype(np.float32)
        opt = Adam(m.parameters(), lr=1e-2)
        with Tape() as tape:
            loss = ops.bce_loss(m.forward(Tensor(x), Tensor(y)), [1, 0, 1, 0])
        backward(loss, tape)
        opt.step()
        ex, ey = m.embed(x), m.embed(y)
        s_forward = m.pair_scores(x, y)
        np.testing.assert_allclose(m.head_scores(ex, ey), s_forward, rtol=1e-6)
        # swapping roles reuses the same encoder
        np.testing.assert_array_equal(m.embed(y), ey)

    def test_tied_gradient_matches_finite_differences(self, rng):
        m = SiameseSimilarity(TINY, merge=CONCAT, hidden=(5, 4), seed=7)
        a = rng.uniform(size=(2, 1, 8, 8)).astype(np.float32)
        t = np.array([1.0, 0.0])
        with Tape() as tape:
            loss = ops.bce_loss(m.forward(Tensor(a), Tensor(a)), t)
        backward(loss, tape)
        state = {p.name: p.data.astype(np.float64) for p in m.parameters()}
        blocks = TINY.conv_blocks
        assert loss.item() == pytest.approx(siamese_loss64(state, blocks, CONCAT, a, a, t), rel=1e-5)
        h = 1e-6
        check = rng.choice(len(m.encoder.parameters()), size=4, replace=False)
        for pi in check:
            p = m.encoder.parameters()[pi]
            flat = p.data.reshape(-1)
            for j in rng.choice(flat.size, size=min(5, flat.size), replace=False):
                idx = np.unravel_index(j, p.shape)
                plus, minus = dict(state), dict(state)
                plus[p.name] = state[p.name].copy()
                minus[p.name] = state[p.name].copy()
                plus[p.name][idx] += h
                minus[p.name][idx] -= h
                fd = (siamese_loss64(plus, blocks, CONCAT, a, a, t) - siamese_loss64(minus, blocks, CONCAT, a, a, t)) / (2 * h)
                assert p.grad[idx] == pytest.approx(fd, rel=1e-3, abs=1e-5), (p.name, idx)

    def test_parameter_count_relation(self, default_models):
        direct, siamese = default_models
        encoder = sum(p.size for p in direct.encoder.parameters())
        head = sum(p.size for p in siamese.head_parameters())
        assert siamese.parameter_count() == encoder + head == 535_937
        assert direct.parameter_count() == encoder + 256 + 1


class TestPersistence:
    @pytest.mark.parametrize("family", ["direct", "concat", "subtract"])
    def test_round_trip(self, tmp_path, rng, family):
        if family == "direct":
            m = DirectClassifier(TINY, seed=5, provenance={"dataset": "abc"})
        else:
            m = SiameseSimilarity(TINY, merge=family, hidden=(7, 3), seed=5)
        save_model(m, tmp_path / "m.npz")
        m2 = load_model(tmp_path / "m.npz")
        x, y = rng.uniform(size=(6, 1, 8, 8)), rng.uniform(size=(6, 1, 8, 8))
        if family == "direct":
            assert m2.provenance == {"dataset": "abc"}
            assert m.predict_proba(x).tobytes() == m2.predict_proba(x).tobytes()
        else:
            assert m2.merge == family and m2.hidden == (7, 3)
            assert m.pair_scores(x, y).tobytes() == m2.pair_scores(x, y).tobytes()
        for p, q in zip(m.parameters(), m2.parameters()):
            assert p.name == q.name and p.data.tobytes() == q.data.tobytes()

    def test_sidecar_version_mismatch(self, tmp_path):
        save_model(DirectClassifier(TINY), tmp_path / "m.npz")
        side = tmp_path / "m.npz.json"
        meta = json.loads(side.read_text())
        meta["format_version"] = 0
        side.write_text(json.dumps(meta))
        with pytest.raises(FormatError, match="version"):
            load_model(tmp_path / "m.npz")

    def test_missing_sidecar(self, tmp_path):
        save_model(DirectClassifier(TINY), tmp_path / "m.npz")
        (tmp_path / "m.npz.json").unlink()
        with pytest.raises(FormatError, match="sidecar"):
            load_model(tmp_path / "m.npz")

    def test_mismatched_state(self):
        m = DirectClassifier(TINY)
        state = m.state_dict()
        state.pop("head.out.bias")
        with pytest.raises(FormatError, match="head.out.bias"):
            m.load_state_dict(state)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([CONCAT, SUBTRACT]))
def test_outputs_in_open_unit_interval(seed, merge):
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=(3, 1, 8, 8))
    y = rng.uniform(size=(3, 1, 8, 8))
    s = SiameseSimilarity(TINY, merge=merge, seed=seed % 1000).pair_scores(x, y)
    p = DirectClassifier(TINY, seed=seed % 1000).predict_proba(x)
    assert np.all((s > 0) & (s < 1)) and np.all((p > 0) & (p < 1))
