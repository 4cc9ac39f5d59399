import numpy as np
import pytest

from neurolock import transform as tr
from neurolock.errors import ConfigError, IncompatibleTemplates
from neurolock.ingest import Protocol
from neurolock.pipeline import random_feature_dataset
from neurolock.system import AuthSystem, SystemConfig


@pytest.fixture(scope="module")
def dataset():
    return random_feature_dataset(n_subjects=6, n_frames=20, dim=10, seed=21)


class TestEnrollment:
    def test_lost_key_shares_parameters(self, dataset):
        system = AuthSystem(dataset, SystemConfig(enroll_frames=5, query_frames=1))
        key_ids = {system.users[s].params.key_id for s in system.subjects}
        assert len(key_ids) == 1

    def test_per_user_keys_differ(self, dataset):
        config = SystemConfig(enroll_frames=5, query_frames=1, lost_key=False)
        system = AuthSystem(dataset, config)
        key_ids = {system.users[s].params.key_id for s in system.subjects}
        assert len(key_ids) == len(system.subjects)

    def test_explicit_keys_respected(self, dataset):
        keys = {s: 1000 + i for i, s in enumerate(dataset.subjects)}
        system = AuthSystem(dataset, SystemConfig(enroll_frames=5, query_frames=1),
                            user_keys=keys)
        for s in system.subjects:
            assert system.users[s].params.user_key == keys[s]

    def test_too_few_frames_raises(self, dataset):
        with pytest.raises(ConfigError):
            AuthSystem(dataset, SystemConfig(enroll_frames=20, query_frames=1))

    def test_template_quant_range_mirrors_params(self, dataset):
        system = AuthSystem(dataset, SystemConfig(enroll_frames=5, query_frames=1))
        for s in system.subjects:
            account = system.users[s]
            assert np.array_equal(account.template.meta.quant_range,
                                  account.params.quant_range)


class TestQueriesAndVerify:
    def test_self_query_on_enrollment_frames_matches_exactly(self, dataset):
        config = SystemConfig(enroll_frames=5, query_frames=5)
        system = AuthSystem(dataset, config)
        for s in system.subjects[:2]:
            query = system.query_template(s, s, 0, 5)
            result = system.verify(s, query)
            assert result.score == 0.0
            assert result.decision

    def test_verify_uses_config_threshold(self, dataset):
        config = SystemConfig(enroll_frames=5, query_frames=1, theta=1.0)
        system = AuthSystem(dataset, config)
        query = system.query_template("S001", "S002", 5)
        assert system.verify("S001", query).decision  # theta=1 accepts anything
        assert not system.verify("S001", query, theta=0.0).decision

    def test_cross_key_template_rejected_by_matcher(self, dataset):
        config = SystemConfig(enroll_frames=5, query_frames=1)
        system = AuthSystem(dataset, config)
        fresh = system.reissue("S001", 987654)
        with pytest.raises(IncompatibleTemplates):
            tr.match(fresh.template, system.users["S001"].template, 0.5)

    def test_standardization_round_trip(self, dataset):
        system = AuthSystem(dataset, SystemConfig(enroll_frames=5, query_frames=1))
        raw = dataset.frames("S003", Protocol.EO)[:4]
        z = system.standardize_a(raw)
        assert z.shape == raw.shape
        # pooled enrollment features have zero mean in the standardized space
        pooled = np.concatenate([system.standardize_a(
            dataset.frames(s, Protocol.EO)[:5]) for s in system.subjects])
        assert np.abs(pooled.mean(axis=0)).max() < 1e-9

    def test_feature_query_bits_match_query_template(self, dataset):
        config = SystemConfig(enroll_frames=5, query_frames=1)
        system = AuthSystem(dataset, config)
        v1 = dataset.frames("S002", Protocol.EO)[7]
        v2 = dataset.frames("S002", Protocol.EC)[7]
        bits = system.feature_query_bits("S001", v1, v2)
        template = system.query_template("S001", "S002", 7, 1)
        assert np.array_equal(bits, template.bits)


class TestReissue:
    def test_reissue_is_deterministic_and_non_mutating(self, dataset):
        system = AuthSystem(dataset, SystemConfig(enroll_frames=5, query_frames=1))
        before = system.users["S001"].template.bits.copy()
        a = system.reissue("S001", 555)
        b = system.reissue("S001", 555)
        assert np.array_equal(a.template.bits, b.template.bits)
        assert np.array_equal(system.users["S001"].template.bits, before)
        assert a.params.key_id != system.users["S001"].params.key_id

    def test_revoke_mutates(self, dataset):
        system = AuthSystem(dataset, SystemConfig(enroll_frames=5, query_frames=1))
        old_bits = system.users["S001"].template.bits.copy()
        system.revoke("S001", 808)
        assert system.users["S001"].params.user_key == 808
        assert not np.array_equal(system.users["S001"].template.bits, old_bits)

    def test_reissued_template_accepts_true_features(self, dataset):
        # re-enrollment from the stored features stays self-consistent
        config = SystemConfig(enroll_frames=5, query_frames=5)
        system = AuthSystem(dataset, config)
        system.revoke("S004", 31337)
        query = system.query_template("S004", "S004", 0, 5)
        assert system.verify("S004", query).score == 0.0


class TestSingleProtocolPair:
    def test_same_protocol_for_both_streams(self):
        dataset = random_feature_dataset(n_subjects=4, n_frames=12, dim=8, seed=9,
                                         protocols=(Protocol.EO, Protocol.EO))
        config = SystemConfig(enroll_frames=4, query_frames=1,
                              protocol_pair=(Protocol.EO, Protocol.EO))
        system = AuthSystem(dataset, config)
        query = system.query_template("S001", "S001", 0, 4)
        assert system.verify("S001", query).score == 0.0
