import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from harlens import fusion, models
from harlens.data import ActivityLabel, select_columns
from harlens.fusion import (vote, train_fusion, predict_fusion,
                            predict_fusion_batch, save_ensemble, load_ensemble,
                            FusionEnsemble, SUBSET_M, SUBSET_M1, SUBSET_M2)

labels_st = st.sampled_from(list(ActivityLabel))


@pytest.fixture(scope="module")
def tiny_ensemble(synth_splits):
    train_std, _ = synth_splits
    cfg = models.NetworkConfig(epochs=3, arch="cnn-lstm", lstm_hidden=8, seed=31)
    return train_fusion(train_std, cfg)


class TestVote:
    def test_majority_with_m(self):
        assert vote(ActivityLabel.WALKING, ActivityLabel.WALKING,
                    ActivityLabel.SITTING) == ActivityLabel.WALKING

    def test_three_way_disagreement_takes_model_m(self):
        assert vote(ActivityLabel.SITTING, ActivityLabel.STANDING,
                    ActivityLabel.LYING) == ActivityLabel.SITTING

    def test_two_consistent_results(self):
        assert vote(ActivityLabel.STANDING, ActivityLabel.SITTING,
                    ActivityLabel.SITTING) == ActivityLabel.SITTING

    def test_exhaustive_all_triples(self):
        for m, m1, m2 in itertools.product(ActivityLabel, repeat=3):
            result = vote(m, m1, m2)
            votes = [m, m1, m2]
            majority = [l for l in set(votes) if votes.count(l) >= 2]
            expected = majority[0] if majority else m
            assert result == expected, (m, m1, m2)

    @given(labels_st, labels_st, labels_st)
    def test_symmetric_in_m1_m2(self, m, m1, m2):
        assert vote(m, m1, m2) == vote(m, m2, m1)

    @given(labels_st, labels_st)
    def test_agreement_with_m_wins(self, x, y):
        assert vote(x, x, y) == x
        assert vote(x, y, x) == x

    @given(labels_st, labels_st, labels_st)
    def test_result_is_one_of_the_inputs(self, m, m1, m2):
        assert vote(m, m1, m2) in (m, m1, m2)


class TestTrainFusion:
    def test_channel_counts(self, tiny_ensemble):
        counts = [m.config.input_channels for m in tiny_ensemble.models]
        assert counts == [9, 6, 4]
        assert tiny_ensemble.subsets == (SUBSET_M, SUBSET_M1, SUBSET_M2)

    def test_epochs_zero_still_valid(self, synth_splits):
        train_std, _ = synth_splits
        cfg = models.NetworkConfig(epochs=0, arch="cnn-lstm", lstm_hidden=8,
                                   seed=32)
        ensemble = train_fusion(train_std, cfg)
        label = predict_fusion(ensemble, train_std.windows[0])
        assert isinstance(label, ActivityLabel)

    def test_master_seed_determinism(self, synth_splits):
        train_std, _ = synth_splits
        cfg = models.NetworkConfig(epochs=1, arch="cnn-lstm", lstm_hidden=8,
                                   seed=33)
        a = train_fusion(train_std, cfg)
        b = train_fusion(train_std, cfg)
        for ma, mb in zip(a.models, b.models):
            for k, v in ma.network.param_dict().items():
                assert np.array_equal(v, mb.network.param_dict()[k])

    def test_per_model_seeds_differ(self):
        seeds = [fusion.derive_seed(42, i) for i in range(3)]
        assert len(set(seeds)) == 3

    def test_requires_nine_columns(self, synth_splits):
        from harlens.data import select_columns_dataset
        train_std, _ = synth_splits
        cfg = models.NetworkConfig(epochs=0, arch="cnn-lstm", lstm_hidden=8)
        with pytest.raises(ValueError):
            train_fusion(select_columns_dataset(train_std, (0, 1)), cfg)


class TestPredictFusion:
    def test_componentwise_oracle(self, tiny_ensemble, synth_splits):
        _, test_std = synth_splits
        for window in test_std.windows[:20]:
            expected = vote(*[models.predict(m, select_columns(window, s))[0]
                              for m, s in zip(tiny_ensemble.models,
                                              tiny_ensemble.subsets)])
            assert predict_fusion(tiny_ensemble, window) == expected

    def test_batch_matches_scalar_path(self, tiny_ensemble, synth_splits):
        _, test_std = synth_splits
        batch = predict_fusion_batch(tiny_ensemble, test_std.windows)
        for i, window in enumerate(test_std.windows):
            assert predict_fusion(tiny_ensemble, window).value == batch[i]

    def test_unanimous_ensemble_equals_model_m(self, synth_splits):
        train_std, _ = synth_splits
        cfg = models.NetworkConfig(epochs=1, arch="cnn-lstm", lstm_hidden=8,
                                   seed=34)
        model = models.train_model(train_std, cfg)
        ensemble = FusionEnsemble(model_M=model, model_m1=model, model_m2=model,
                                  master_seed=34)
        for window in train_std.windows[:10]:
            assert (predict_fusion(ensemble, window)
                    == models.predict(model, window)[0])

    def test_shape_mismatch(self, tiny_ensemble):
        with pytest.raises(ValueError):
            predict_fusion(tiny_ensemble, np.zeros((128, 4)))


class TestPersistence:
    def test_ensemble_round_trip(self, tiny_ensemble, synth_splits, tmp_path):
        _, test_std = synth_splits
        save_ensemble(tiny_ensemble, tmp_path / "ens")
        loaded = load_ensemble(tmp_path / "ens")
        assert loaded.master_seed == tiny_ensemble.master_seed
        assert loaded.subsets == tiny_ensemble.subsets
        a = predict_fusion_batch(tiny_ensemble, test_std.windows[:16])
        b = predict_fusion_batch(loaded, test_std.windows[:16])
        assert np.array_equal(a, b)

    def test_manifest_contents(self, tiny_ensemble, tmp_path):
        import json
        save_ensemble(tiny_ensemble, tmp_path / "ens")
        manifest = json.loads((tmp_path / "ens" / "ensemble.json").read_text())
        assert manifest["master_seed"] == 31
        assert manifest["models"][1]["column_subset"] == [3, 4, 5, 6, 7, 8]
        assert manifest["models"][2]["column_subset"] == [3, 4, 6, 7]
