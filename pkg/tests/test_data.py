import numpy as np
import pytest

from egcn.data import (DataError, SynthSpec, assemble_dataset, load_modality_csv, read_sidecar,
                       standardize, synth_dataset, write_dataset, write_sidecar)


def write(path, text):
    path.write_text(text)
    return path


def test_load_small_csv(tmp_path):
    p = write(tmp_path / "m.csv", "subject_id,f0,f1,f2\nb,1,2,3\na,4.5,-6,7e-3\n")
    ids, x = load_modality_csv(p)
    assert ids == ["b", "a"]
    assert x.data.tolist() == [[1, 2, 3], [4.5, -6, 0.007]]


def test_non_numeric_cell_location(tmp_path):
    p = write(tmp_path / "m.csv", "subject_id,f0,f1,f2\na,1,2,3\nb,4,abc,6\n")
    with pytest.raises(DataError, match="row 2, column 3"):
        load_modality_csv(p)


def test_dimension_mismatch(tmp_path):
    header = "subject_id," + ",".join(f"f{j}" for j in range(3999))
    p = write(tmp_path / "m.csv", header + "\n")
    with pytest.raises(DataError, match="expected 4000.*found 3999"):
        load_modality_csv(p, expected_dim=4000)


@pytest.mark.parametrize("text", [
    "subject_id,f0\na,1\na,2\n",        # duplicate id
    "subject_id,f0\n,1\n",              # missing id
    "",                                 # no header
    "id,f0\na,1\n",                     # wrong header
    "subject_id,f0\na,nan\n",           # non-finite
    "subject_id,f0,f1\na,1\n",          # short row
])
def test_malformed_modality_files(tmp_path, text):
    with pytest.raises(DataError):
        load_modality_csv(write(tmp_path / "m.csv", text))


def small_files(tmp_path, sites_text="subject_id,site\ns1,A\ns2,A\ns3,B\n"):
    m0 = write(tmp_path / "m0.csv", "subject_id,f0,f1\ns1,1,2\ns2,3,4\ns3,5,6\n")
    m1 = write(tmp_path / "m1.csv", "subject_id,g0\ns3,30\ns1,10\ns2,20\n")
    sites = write(tmp_path / "sites.csv", sites_text)
    labels = write(tmp_path / "labels.csv", "subject_id,label\ns2,1\ns1,0\ns3,1\n")
    return {"m0": m0, "m1": m1}, sites, labels


def test_assemble_aligns_to_labels(tmp_path):
    mods, sites, labels = small_files(tmp_path)
    ds = assemble_dataset(mods, sites, labels)
    assert ds.n == 3 and ds.subject_ids == ["s2", "s1", "s3"]
    assert ds.modalities[0][1].data.tolist() == [[3, 4], [1, 2], [5, 6]]
    assert ds.modalities[1][1].data.tolist() == [[20], [10], [30]]
    assert ds.site_labels == ["A", "A", "B"]
    assert ds.labels.tolist() == [1, 0, 1]


def test_assemble_missing_subject(tmp_path):
    mods, sites, labels = small_files(tmp_path, "subject_id,site\ns1,A\ns2,A\n")
    with pytest.raises(DataError, match="s3"):
        assemble_dataset(mods, sites, labels)


def test_bad_label(tmp_path):
    mods, sites, _ = small_files(tmp_path)
    labels = write(tmp_path / "l2.csv", "subject_id,label\ns1,0\ns2,2\ns3,1\n")
    with pytest.raises(DataError, match="row 2"):
        assemble_dataset(mods, sites, labels)


def test_assemble_invariant_to_row_order(tmp_path):
    ds = synth_dataset(SynthSpec(n_subjects=15, modality_dims=[4, 3, 2], n_sites=3, seed=2))
    a = tmp_path / "a"
    paths = write_dataset(ds, a)
    ref = assemble_dataset(paths["modalities"], paths["sites"], paths["labels"], [4, 3, 2])
    rng = np.random.default_rng(0)
    b = tmp_path / "b"
    b.mkdir()
    shuffled = {}
    for name, p in list(paths["modalities"].items()) + [("sites", paths["sites"])]:
        lines = open(p).read().splitlines()
        body = [lines[1 + i] for i in rng.permutation(len(lines) - 1)]
        shuffled[name] = write(b / f"{name}.csv", "\n".join([lines[0]] + body) + "\n")
    sites = shuffled.pop("sites")
    got = assemble_dataset(shuffled, sites, paths["labels"])
    assert got.subject_ids == ref.subject_ids
    for (_, x), (_, y) in zip(got.modalities, ref.modalities):
        assert x.data.tobytes() == y.data.tobytes()
    assert got.site_labels == ref.site_labels


def test_synth_defaults_and_determinism():
    spec = SynthSpec()
    assert spec.n_subjects == 870 and sum(spec.modality_dims) == 5206
    small = SynthSpec(n_subjects=30, modality_dims=[10, 5, 2], seed=4)
    a, b = synth_dataset(small), synth_dataset(small)
    assert a.subject_ids == b.subject_ids and a.labels.tolist() == b.labels.tolist()
    for (_, x), (_, y) in zip(a.modalities, b.modalities):
        assert x.data.tobytes() == y.data.tobytes()
    assert a.site_labels[:3] == ["site00", "site01", "site02"]
    assert int(a.labels.sum()) == 15


def test_synth_signal_is_linearly_detectable():
    ds = synth_dataset(SynthSpec(n_subjects=40, modality_dims=[50, 20, 6], signal_strength=5.0, seed=1))
    x = np.hstack([t.data for t in ds.tensors] + [np.ones((40, 1))])
    y = 2.0 * ds.labels - 1.0
    # minimum-norm least squares probe scored on its own training rows
    w = np.linalg.lstsq(x, y, rcond=None)[0]
    assert np.mean((x @ w > 0) == (y > 0)) >= 0.95


def test_synth_validation():
    with pytest.raises(ValueError):
        SynthSpec(class_balance=1.0)
    with pytest.raises(ValueError):
        SynthSpec(signal_strength=-1)


def test_round_trip_bit_identical(tmp_path):
    ds = synth_dataset(SynthSpec(n_subjects=12, modality_dims=[7, 4, 3], signal_strength=0.37, seed=9))
    for sidecar in (False, True):
        out = tmp_path / str(sidecar)
        paths = write_dataset(ds, out, sidecar=sidecar)
        back = assemble_dataset(paths["modalities"], paths["sites"], paths["labels"], ds.dims)
        assert back.subject_ids == ds.subject_ids
        assert back.site_labels == ds.site_labels
        assert back.labels.tolist() == ds.labels.tolist()
        for (_, x), (_, y) in zip(back.modalities, ds.modalities):
            assert x.data.tobytes() == y.data.tobytes()


def test_sidecar_format(tmp_path):
    arr = np.random.default_rng(0).standard_normal((3, 5))
    p = tmp_path / "x.bin"
    write_sidecar(p, arr)
    raw = p.read_bytes()
    assert raw[:4] == b"EGCN" and len(raw) == 4 + 4 + 8 + 8 + 15 * 8
    assert read_sidecar(p).tobytes() == arr.tobytes()
    p.write_bytes(raw[:-8])
    with pytest.raises(DataError):
        read_sidecar(p)
    p.write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(DataError, match="magic"):
        read_sidecar(p)


def test_sidecar_shape_disagreement(tmp_path):
    p = write(tmp_path / "m.csv", "subject_id,f0\na,1\nb,2\n")
    write_sidecar(str(p) + ".bin", np.zeros((3, 1)))
    with pytest.raises(DataError):
        load_modality_csv(p)
    ids, x = load_modality_csv(p, use_sidecar=False)
    assert x.data.tolist() == [[1.0], [2.0]]


def test_standardize_uses_train_rows_only():
    ds = synth_dataset(SynthSpec(n_subjects=20, modality_dims=[3, 2, 2], seed=0))
    train = np.arange(10)
    z = standardize(ds, train)
    for _, x in z.modalities:
        np.testing.assert_allclose(x.data[train].mean(axis=0), 0, atol=1e-12)
        np.testing.assert_allclose(x.data[train].std(axis=0), 1, atol=1e-12)
