import dataclasses
import filecmp
import json

import numpy as np
import pytest

from laslab.decoding import corpus_cer
from laslab.errors import ConfigError, InputError, NormalizationError, VocabularyError
from laslab.harness.config import Key, config_hash, parse_config_text, resolve, stamp
from laslab.harness.formats import (
    ManifestEntry,
    read_features,
    read_lexicon,
    read_manifest,
    read_table,
    write_features,
    write_lexicon,
    write_manifest,
)
from laslab.harness.synthetic import SyntheticTask, SyntheticTaskSpec, generate, load_split, normalize_features
from laslab.vocab import EOS, SOS, UNK, Vocabulary

SMALL = SyntheticTaskSpec(n_train=30, n_valid=10, n_test=10, speaker_block=10)


# -- feature files -------------------------------------------------------------------------
def test_feature_round_trip_is_lossless(tmp_path):
    x = np.random.default_rng(0).normal(size=(13, 5)).astype(np.float32)
    write_features(tmp_path / "a.lasf", x)
    y = read_features(tmp_path / "a.lasf")
    assert y.dtype == np.float32
    assert y.tobytes() == x.tobytes()


def test_feature_header_layout(tmp_path):
    write_features(tmp_path / "a.lasf", np.zeros((2, 3)))
    raw = (tmp_path / "a.lasf").read_bytes()
    assert raw[:4] == b"LASF"
    assert [int.from_bytes(raw[i:i + 4], "little") for i in (4, 8, 12)] == [1, 2, 3]
    assert len(raw) == 16 + 2 * 3 * 4


@pytest.mark.parametrize("mutate", [lambda b: b[:10], lambda b: b[:-1], lambda b: b"XXXX" + b[4:],
                                    lambda b: b[:4] + (9).to_bytes(4, "little") + b[8:]])
def test_corrupt_feature_file(tmp_path, mutate):
    path = tmp_path / "a.lasf"
    write_features(path, np.ones((4, 2)))
    path.write_bytes(mutate(path.read_bytes()))
    with pytest.raises(InputError):
        read_features(path)


# -- manifests and tables --------------------------------------------------------------------
def test_manifest_round_trip(tmp_path):
    for uid in ("u1", "u2"):
        write_features(tmp_path / "f" / f"{uid}.lasf", np.zeros((1, 1)))
    entries = [ManifestEntry("u1", tmp_path / "f" / "u1.lasf", "ab c"),
               ManifestEntry("u2", tmp_path / "f" / "u2.lasf", "d")]
    write_manifest(tmp_path / "m.tsv", entries)
    assert "\tf/u1.lasf\t" in (tmp_path / "m.tsv").read_text()
    back = read_manifest(tmp_path / "m.tsv")
    assert back.ids() == ["u1", "u2"]
    assert back.by_id()["u1"].transcript == "ab c"
    assert back.by_id()["u2"].path == (tmp_path / "f" / "u2.lasf").resolve()


def test_manifest_duplicate_ids(tmp_path):
    write_features(tmp_path / "a.lasf", np.zeros((1, 1)))
    (tmp_path / "m.tsv").write_text("u\ta.lasf\tx\nu\ta.lasf\ty\n")
    with pytest.raises(InputError, match="duplicate"):
        read_manifest(tmp_path / "m.tsv")


def test_manifest_missing_feature_file(tmp_path):
    (tmp_path / "m.tsv").write_text("u\tnope.lasf\tx\n")
    with pytest.raises(InputError, match="does not exist"):
        read_manifest(tmp_path / "m.tsv")
    assert len(read_manifest(tmp_path / "m.tsv", check_files=False)) == 1


def test_table_and_lexicon_round_trip(tmp_path):
    (tmp_path / "t").write_text("# comment\na\tx y\nb\tz\n")
    assert read_table(tmp_path / "t") == {"a": "x y", "b": "z"}
    write_lexicon(tmp_path / "lex", {"w0": ("a", "b"), "w1": ("c",)})
    assert (tmp_path / "lex").read_text() == "w0\ta b\nw1\tc\n"
    assert read_lexicon(tmp_path / "lex") == {"w0": ("a", "b"), "w1": ("c",)}


# -- vocabulary ---------------------------------------------------------------------------------
def test_vocabulary_reserved_ids_and_file(tmp_path):
    v = Vocabulary(["a", "b"])
    assert (v.id("<unk>"), v.id("<sos>"), v.id("<eos>")) == (UNK, SOS, EOS)
    assert v.encode("a b?") == [3, 4, UNK]
    assert v.decode([SOS, 3, 4, EOS]) == "ab"
    v.save(tmp_path / "vocab.txt")
    assert (tmp_path / "vocab.txt").read_text().splitlines() == ["<unk>", "<sos>", "<eos>", "a", "b"]
    assert Vocabulary.load(tmp_path / "vocab.txt").tokens == v.tokens
    with pytest.raises(VocabularyError):
        v.decode([9])


# -- synthetic corpus ---------------------------------------------------------------------------
def test_generation_is_byte_identical(tmp_path):
    generate(SMALL, tmp_path / "a")
    generate(SMALL, tmp_path / "b")
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
    files = [p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file()]
    assert len(files) > 50
    for rel in files:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel
    assert not cmp.diff_files


def test_templates_are_separated():
    task = SyntheticTask(SyntheticTaskSpec(min_template_distance=2.0))
    t = task.templates
    d = np.linalg.norm(t[:, None] - t[None], axis=-1) + np.eye(len(t)) * 1e9
    assert d.min() >= 2.0


def test_impossible_template_distance():
    with pytest.raises(ConfigError):
        SyntheticTask(SyntheticTaskSpec(n_chars=20, dim=1, min_template_distance=5.0))


def test_spec_validation():
    with pytest.raises(ConfigError):
        SyntheticTaskSpec(frames_mean=1, frames_jitter=1)
    with pytest.raises(ConfigError):
        SyntheticTaskSpec(min_len=5, max_len=3)


def test_count_must_be_positive(tmp_path):
    with pytest.raises(InputError):
        generate(SMALL, tmp_path, count=0)


def test_frame_counts_within_construction_bounds(tmp_path):
    spec = SMALL
    generate(spec, tmp_path)
    for e in read_manifest(tmp_path / "train" / "manifest.tsv"):
        n = len(e.transcript.replace(" ", ""))
        assert spec.min_len <= n <= spec.max_len
        T = len(read_features(e.path))
        assert n * (spec.frames_mean - spec.frames_jitter) <= T <= n * (spec.frames_mean + spec.frames_jitter)


def test_noiseless_corpus_is_decodable_by_nearest_template(tmp_path):
    spec = dataclasses.replace(SMALL, noise_std=0.0, frames_jitter=0, speaker_offset_std=0.0,
                               speaker_scale_jitter=0.0)
    generate(spec, tmp_path)
    task = SyntheticTask(spec)
    pairs = []
    for e in read_manifest(tmp_path / "test" / "manifest.tsv"):
        feats = read_features(e.path).astype(np.float64)
        runs = feats.reshape(-1, spec.frames_mean, spec.dim)
        assert np.all(runs == runs[:, :1])  # exact template repetitions
        idx = np.argmin(np.linalg.norm(runs[:, 0, None] - task.templates[None], axis=-1), axis=1)
        hyp = "".join(task.chars[i] for i in idx)
        pairs.append((e.transcript.replace(" ", ""), hyp))
    assert corpus_cer(pairs) == 0.0


def test_generated_files_and_split_loading(tmp_path):
    generate(SMALL, tmp_path)
    for name in ("vocab.txt", "lexicon.txt", "task.json"):
        assert (tmp_path / name).exists()
    assert json.loads((tmp_path / "task.json").read_text())["seed"] == 0
    vocab = Vocabulary.load(tmp_path / "vocab.txt")
    assert len(vocab) == 23
    utts = load_split(tmp_path, "valid", vocab)
    text = read_table(tmp_path / "valid" / "text")
    assert [u.uid for u in utts] == list(text)
    for u in utts:
        assert u.text == text[u.uid]
        assert vocab.decode(u.labels) == u.text
    lexicon = read_lexicon(tmp_path / "lexicon.txt")
    spelled = {" ".join(s) for s in lexicon.values()}
    for e in read_manifest(tmp_path / "valid" / "manifest.tsv"):
        assert all(" ".join(w) in spelled for w in e.transcript.split())


# -- normalization -------------------------------------------------------------------------------
def test_per_speaker_moments():
    rng = np.random.default_rng(0)
    feats = {f"u{i}": rng.normal(3.0 + i % 2, 2.0, size=(int(rng.integers(3, 9)), 4)) for i in range(10)}
    spk = {u: f"s{int(u[1:]) % 2}" for u in feats}
    out = normalize_features(feats, spk)
    for s in ("s0", "s1"):
        stacked = np.concatenate([out[u] for u in out if spk[u] == s])
        np.testing.assert_allclose(stacked.mean(axis=0), 0.0, atol=1e-9)
        np.testing.assert_allclose(stacked.var(axis=0), 1.0, atol=1e-6)


def test_constant_dimension_becomes_zero():
    feats = {"a": np.column_stack([np.full(5, 7.0), np.arange(5.0)])}
    out = normalize_features(feats, {"a": "s"})
    np.testing.assert_array_equal(out["a"][:, 0], 0.0)
    assert np.all(np.isfinite(out["a"]))


def test_speaker_offsets_removed():
    rng = np.random.default_rng(1)
    base = rng.normal(size=(400, 3))
    feats = {"a": base[:200] * 3 + 10, "b": base[200:] - 5}
    out = normalize_features(feats, {"a": "s1", "b": "s2"})
    # before: disjoint ranges; after: both centred with unit spread
    assert feats["a"].min() > feats["b"].max()
    assert abs(out["a"].mean() - out["b"].mean()) < 0.2
    assert abs(out["a"].std() - out["b"].std()) < 0.2


def test_speaker_with_one_frame():
    with pytest.raises(NormalizationError):
        normalize_features({"a": np.ones((1, 2))}, {"a": "s"})


def test_missing_speaker():
    with pytest.raises(NormalizationError):
        normalize_features({"a": np.ones((3, 2))}, {})


# -- config files -------------------------------------------------------------------------------
SCHEMA = {"beam": Key(30), "tau": Key(2.0), "lm": Key(""), "flag": Key(False)}


def test_config_text_parsing():
    cfg = parse_config_text("beam = 5  # narrow\n\ntau=0.5\nflag = yes\n", SCHEMA)
    assert cfg == {"beam": 5, "tau": 0.5, "flag": True}


def test_unknown_key_lists_valid_keys():
    with pytest.raises(ConfigError, match="valid keys: beam, flag, lm, tau"):
        parse_config_text("bean = 5\n", SCHEMA)
    with pytest.raises(ConfigError, match="valid keys"):
        resolve(SCHEMA, overrides={"gamma": "1"})


def test_bad_value_type():
    with pytest.raises(ConfigError, match="beam"):
        parse_config_text("beam = wide\n", SCHEMA)


def test_overrides_beat_file(tmp_path):
    (tmp_path / "c.cfg").write_text("beam = 5\ntau = 3\n")
    cfg = resolve(SCHEMA, tmp_path / "c.cfg", {"beam": "7"})
    assert cfg == {"beam": 7, "tau": 3.0, "lm": "", "flag": False}


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        resolve(SCHEMA, tmp_path / "nope.cfg")


def test_hash_changes_iff_effective_setting_changes(tmp_path):
    base = resolve(SCHEMA)
    (tmp_path / "same.cfg").write_text("beam = 30\n")
    assert config_hash(resolve(SCHEMA, tmp_path / "same.cfg")) == config_hash(base)
    assert config_hash(resolve(SCHEMA, overrides={"tau": "2"})) == config_hash(base)
    for k, v in (("beam", "31"), ("tau", "2.5"), ("lm", "x"), ("flag", "1")):
        assert config_hash(resolve(SCHEMA, overrides={k: v})) != config_hash(base)


def test_stamp_carries_seed_and_hash():
    s = stamp("train", {"seed": 3, "beam": 1})
    assert s["seed"] == 3 and len(s["config_hash"]) == 64
