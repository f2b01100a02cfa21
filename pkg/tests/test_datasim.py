import numpy as np
import pytest

from chatemg import classifiers as clf
from chatemg.dataset import build_classifier_set
from chatemg.datasim import (
    CONDITIONS,
    SubjectProfile,
    default_profiles,
    make_profile,
    protocol_labels,
    simulate_corpus,
    simulate_recording,
)
from chatemg.signal_core import Intent, segment_windows


def cue_starts(labels, intent):
    starts = np.concatenate([[True], labels[1:] != labels[:-1]])
    return int(np.sum(starts & (labels == intent)))


@pytest.fixture(scope="module")
def corpus():
    return simulate_corpus()


def test_protocol_shape():
    labels = protocol_labels()
    assert len(labels) == 6500
    assert cue_starts(labels, Intent.OPEN) == 3 and cue_starts(labels, Intent.CLOSE) == 3
    assert np.all(labels[:500] == Intent.RELAX)


def test_corpus_coverage(corpus):
    assert len(corpus) == 80
    assert len({r.recording_id for r in corpus}) == 80
    combos = {(r.meta.subject_id, r.meta.session_index, r.meta.condition) for r in corpus}
    assert len(combos) == 5 * 2 * len(CONDITIONS)
    for r in corpus:
        assert r.frames.shape == (6500, 8)
        assert r.frames.min() >= 0 and r.frames.max() <= 1000


def test_deterministic():
    a = simulate_corpus(n_subjects=1, n_sessions=1, conditions=1, recordings_per_condition=1, master_seed=4)
    b = simulate_corpus(n_subjects=1, n_sessions=1, conditions=1, recordings_per_condition=1, master_seed=4)
    np.testing.assert_array_equal(a[0].frames, b[0].frames)
    c = simulate_corpus(n_subjects=1, n_sessions=1, conditions=1, recordings_per_condition=1, master_seed=5)
    assert not np.array_equal(a[0].frames, c[0].frames)


def test_profile_roundtrip(tmp_path):
    prof = make_profile("S9", 3)
    path = tmp_path / "p.txt"
    path.write_text(prof.to_text())
    back = SubjectProfile.from_file(path)
    assert back.to_text() == prof.to_text()


def windows_xy(recs, stride=25):
    return build_classifier_set([w for r in recs for w in segment_windows(r, 256, stride)])


def test_intents_separable_within_subject(corpus):
    s1 = [r for r in corpus if r.meta.subject_id == "S1" and r.meta.session_index == 1]
    X, y = windows_xy(s1[:4])
    Xq, yq = windows_xy(s1[4:])
    assert clf.accuracy(clf.fit(clf.ClfConfig("lda"), X, y), Xq, yq) >= 0.9


def test_subjects_differ(corpus):
    def subject(s, session):
        return [r for r in corpus if r.meta.subject_id == s and r.meta.session_index == session]
    X, y = windows_xy(subject("S1", 1))
    model = clf.fit(clf.ClfConfig("lda"), X, y)
    own = clf.accuracy(model, *windows_xy(subject("S1", 2)))
    others = [clf.accuracy(model, *windows_xy(subject(s, 1))) for s in ("S2", "S3", "S4", "S5")]
    assert own >= 0.9
    assert min(others) <= 0.8


def test_arm_off_and_motor_change_signal():
    prof = default_profiles(1)[0]
    base = simulate_recording(prof, ("on_table", "off"), 1, 7)
    arm = simulate_recording(prof, ("off_table", "off"), 1, 7)
    motor = simulate_recording(prof, ("on_table", "on"), 1, 7)
    assert arm.frames.mean() > base.frames.mean()
    assert not np.array_equal(motor.frames, base.frames)


def test_bad_counts():
    with pytest.raises(ValueError):
        simulate_corpus(n_subjects=0)
    with pytest.raises(ValueError):
        simulate_corpus(n_sessions=3)
