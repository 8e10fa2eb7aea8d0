import math
import os

import numpy as np
import pytest

from cyin.config import DatasetSpec, ValidationError
from cyin.data import (
    BadMagicError,
    ShapeMismatchError,
    TruncatedFileError,
    UnsupportedTaskError,
    bayes_oracle_regression,
    generate_dataset,
    generator_params,
    read_dataset,
    write_dataset,
    GeneratorParams,
    MultimodalSample,
)


def small_spec(**kw):
    base = dict(num_modalities=3, seq_len=4, feat_dims=[8, 8, 8], latent_dim=4,
                task="regression", noise_scale=0.1, distractor_dim=2,
                num_samples=50, seed=11)
    base.update(kw)
    return DatasetSpec(**base)


def test_generation_deterministic():
    a = generate_dataset(small_spec())
    b = generate_dataset(small_spec())
    for sa, sb in zip(a, b):
        assert sa.label == sb.label
        for ma, mb in zip(sa.modalities, sb.modalities):
            assert np.array_equal(ma, mb)


def test_label_ranges():
    for s in generate_dataset(small_spec(num_samples=300)):
        assert -3.0 <= s.label <= 3.0
    cls = small_spec(task="classification", num_classes=4)
    labels = {s.label for s in generate_dataset(cls)}
    assert labels <= set(range(4))


def test_invalid_spec_names_violation():
    with pytest.raises(ValidationError, match="num_modalities"):
        small_spec(num_modalities=1).validate()
    with pytest.raises(ValidationError, match="feat_dims"):
        small_spec(feat_dims=[8, 8]).validate()
    with pytest.raises(ValidationError, match="num_classes"):
        small_spec(task="classification", num_classes=1).validate()


def test_noiseless_oracle_recovers_labels_exactly():
    spec = small_spec(noise_scale=0.0, distractor_dim=0, num_samples=30)
    samples = generate_dataset(spec)
    params = generator_params(spec)
    for s in samples:
        # tokens are stored as float32, so recovery is exact only to f32 precision
        assert bayes_oracle_regression(s, spec, params) == pytest.approx(s.label, abs=1e-6)


def test_oracle_rejects_classification():
    spec = small_spec(task="classification", num_classes=3, num_samples=5)
    samples = generate_dataset(spec)
    params = generator_params(spec)
    with pytest.raises(UnsupportedTaskError):
        bayes_oracle_regression(samples[0], spec, params)


def test_oracle_huge_noise_approaches_prior_mean():
    spec = small_spec(noise_scale=1e6, distractor_dim=0, num_samples=5)
    samples = generate_dataset(spec)
    params = generator_params(spec)
    pred = bayes_oracle_regression(samples[0], spec, params, present=[0])
    assert abs(pred) < 1e-3


def test_oracle_matches_quadrature():
    # U=2, d=1, hand-built 2x1 maps; posterior integrated numerically.
    from scipy.integrate import quad

    spec = DatasetSpec(num_modalities=2, seq_len=1, feat_dims=[2, 2], latent_dim=1,
                       task="regression", noise_scale=0.5, distractor_dim=0,
                       num_samples=1, seed=0)
    A = [np.array([[1.0], [0.5]]), np.array([[-0.3], [0.8]])]
    w = np.array([1.0])
    params = GeneratorParams(mixing=A, distractors=[np.zeros((2, 0))] * 2,
                             label_weights=w, noise_scale=0.5)
    obs = [np.array([[0.7, 0.1]]), np.array([[-0.2, 0.9]])]
    sample = MultimodalSample(obs, 0.0, 0)

    def log_lik(z):
        ll = -0.5 * z * z
        for u in range(2):
            resid = obs[u][0] - A[u][:, 0] * z
            ll += -0.5 * (resid**2).sum() / 0.25
        return ll

    def integrand_num(z):
        return np.clip(w[0] * z, -3, 3) * math.exp(log_lik(z))

    def integrand_den(z):
        return math.exp(log_lik(z))

    num, _ = quad(integrand_num, -12, 12, limit=200)
    den, _ = quad(integrand_den, -12, 12, limit=200)
    expected = num / den
    got = bayes_oracle_regression(sample, spec, params)
    assert got == pytest.approx(expected, abs=1e-6)


def test_modalities_share_signal():
    # First principal components of two modalities track the same shared
    # latent; the observed |corr| on this spec is ~0.99, assert a safe floor.
    spec = small_spec(num_samples=1000, seed=5)
    samples = generate_dataset(spec)
    pcs = []
    for u in (0, 1):
        X = np.stack([s.modalities[u].mean(axis=0) for s in samples])
        X = X - X.mean(axis=0)
        _, _, vt = np.linalg.svd(X, full_matrices=False)
        pcs.append(X @ vt[0])
    corr = abs(np.corrcoef(pcs[0], pcs[1])[0, 1])
    assert corr > 0.5


def test_round_trip(tmp_path):
    spec = small_spec(num_samples=12)
    samples = generate_dataset(spec)
    path = str(tmp_path / "ds.bin")
    write_dataset(samples, spec, path)
    spec2, samples2 = read_dataset(path)
    assert spec2.num_modalities == spec.num_modalities
    assert spec2.seq_len == spec.seq_len
    assert spec2.feat_dims == spec.feat_dims
    assert spec2.task == spec.task
    assert spec2.seed == spec.seed
    for a, b in zip(samples, samples2):
        assert a.label == pytest.approx(b.label)
        for ma, mb in zip(a.modalities, b.modalities):
            assert np.array_equal(np.asarray(ma, dtype=np.float32), mb)


def test_round_trip_classification(tmp_path):
    spec = small_spec(task="classification", num_classes=5, num_samples=8)
    samples = generate_dataset(spec)
    path = str(tmp_path / "cls.bin")
    write_dataset(samples, spec, path)
    spec2, samples2 = read_dataset(path)
    assert spec2.task == "classification"
    assert spec2.num_classes == 5
    assert [s.label for s in samples2] == [s.label for s in samples]


def test_bad_magic(tmp_path):
    path = str(tmp_path / "bad.bin")
    spec = small_spec(num_samples=3)
    write_dataset(generate_dataset(spec), spec, path)
    raw = bytearray(open(path, "rb").read())
    raw[:4] = b"XXXX"
    open(path, "wb").write(bytes(raw))
    with pytest.raises(BadMagicError, match="magic"):
        read_dataset(path)


def test_truncated_file(tmp_path):
    path = str(tmp_path / "trunc.bin")
    spec = small_spec(num_samples=3)
    write_dataset(generate_dataset(spec), spec, path)
    raw = open(path, "rb").read()
    open(path, "wb").write(raw[:-10])
    with pytest.raises(TruncatedFileError, match="expected"):
        read_dataset(path)


def test_trailing_bytes(tmp_path):
    path = str(tmp_path / "trail.bin")
    spec = small_spec(num_samples=3)
    write_dataset(generate_dataset(spec), spec, path)
    with open(path, "ab") as fh:
        fh.write(b"\x00\x00")
    with pytest.raises(ShapeMismatchError):
        read_dataset(path)


def test_write_shape_mismatch(tmp_path):
    spec = small_spec(num_samples=2)
    samples = generate_dataset(spec)
    samples[1].modalities[0] = samples[1].modalities[0][:, :4]
    with pytest.raises(ShapeMismatchError):
        write_dataset(samples, spec, str(tmp_path / "bad.bin"))


def test_sidecar_refines_spec(tmp_path):
    spec = small_spec(num_samples=4, latent_dim=4, noise_scale=0.25, seed=77)
    path = str(tmp_path / "meta.bin")
    write_dataset(generate_dataset(spec), spec, path)
    spec2, _ = read_dataset(path)
    assert spec2.latent_dim == 4
    assert spec2.noise_scale == 0.25
    assert spec2.seed == 77
    assert os.path.exists(path + ".meta")
