import struct

import numpy as np
import pytest

from augem import data


def write_idx_images(path, arrays):
    """Pack a list of equal-shape uint8 images as an IDX3 file."""
    arr = np.asarray(arrays, dtype=np.uint8)
    n, h, w = arr.shape
    path.write_bytes(struct.pack(">IIII", 0x00000803, n, h, w)
                     + arr.tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    path.write_bytes(struct.pack(">II", 0x00000801, len(labels))
                     + labels.tobytes())


def write_cifar(path, records):
    """Pack (label, 32x32x3 uint8 image) pairs as CIFAR-10 binary."""
    blob = bytearray()
    for label, img in records:
        blob.append(label)
        blob.extend(np.asarray(img, dtype=np.uint8)
                    .transpose(2, 0, 1).tobytes())
    path.write_bytes(bytes(blob))


class TestMnistLoader:
    def test_two_record_golden(self, tmp_path):
        imgs = [[[0, 255], [128, 64]],
                [[255, 255], [0, 1]]]
        write_idx_images(tmp_path / "im.idx", imgs)
        write_idx_labels(tmp_path / "lb.idx", [3, 1])
        ds = data.load_mnist_idx(tmp_path / "im.idx", tmp_path / "lb.idx")
        assert ds.images.shape == (2, 2, 2, 1)
        np.testing.assert_array_equal(
            ds.images[0, :, :, 0],
            np.array([[0, 255], [128, 64]]) / 255.0)
        np.testing.assert_array_equal(
            ds.images[1, :, :, 0],
            np.array([[255, 255], [0, 1]]) / 255.0)
        np.testing.assert_array_equal(ds.labels, [3, 1])
        assert ds.n_classes == 10

    def test_byte_255_maps_to_one(self, tmp_path):
        write_idx_images(tmp_path / "im.idx", [[[255]]])
        write_idx_labels(tmp_path / "lb.idx", [0])
        ds = data.load_mnist_idx(tmp_path / "im.idx", tmp_path / "lb.idx")
        assert ds.images[0, 0, 0, 0] == 1.0

    def test_round_trip_to_bytes(self, tmp_path, rng):
        pixels = rng.integers(0, 256, size=(3, 4, 4)).astype(np.uint8)
        write_idx_images(tmp_path / "im.idx", pixels)
        write_idx_labels(tmp_path / "lb.idx", [0, 1, 2])
        ds = data.load_mnist_idx(tmp_path / "im.idx", tmp_path / "lb.idx")
        back = np.rint(ds.images[..., 0] * 255).astype(np.uint8)
        np.testing.assert_array_equal(back, pixels)

    def test_label_magic_on_images_is_format_error(self, tmp_path):
        write_idx_labels(tmp_path / "im.idx", [1, 2])
        write_idx_labels(tmp_path / "lb.idx", [1, 2])
        with pytest.raises(data.FormatError):
            data.load_mnist_idx(tmp_path / "im.idx", tmp_path / "lb.idx")

    def test_truncated_payload_is_length_error(self, tmp_path):
        write_idx_images(tmp_path / "im.idx", [[[0, 255], [128, 64]]])
        blob = (tmp_path / "im.idx").read_bytes()
        (tmp_path / "im.idx").write_bytes(blob[:-2])
        write_idx_labels(tmp_path / "lb.idx", [0])
        with pytest.raises(data.LengthError):
            data.load_mnist_idx(tmp_path / "im.idx", tmp_path / "lb.idx")

    def test_count_mismatch_is_length_error(self, tmp_path):
        write_idx_images(tmp_path / "im.idx", [[[1]], [[2]]])
        write_idx_labels(tmp_path / "lb.idx", [0])
        with pytest.raises(data.LengthError):
            data.load_mnist_idx(tmp_path / "im.idx", tmp_path / "lb.idx")


class TestCifarLoader:
    def test_two_record_golden(self, tmp_path, rng):
        img0 = np.zeros((32, 32, 3), dtype=np.uint8)
        img0[:, :, 0] = 255          # solid red
        img0[:, :, 2] = 128
        img1 = rng.integers(0, 256, size=(32, 32, 3)).astype(np.uint8)
        write_cifar(tmp_path / "batch.bin", [(7, img0), (0, img1)])
        ds = data.load_cifar10_bin(tmp_path / "batch.bin")
        assert ds.images.shape == (2, 32, 32, 3)
        np.testing.assert_array_equal(ds.labels, [7, 0])
        np.testing.assert_array_equal(ds.images[0], img0 / 255.0)
        np.testing.assert_array_equal(ds.images[1], img1 / 255.0)

    def test_single_record(self, tmp_path):
        img = np.full((32, 32, 3), 9, dtype=np.uint8)
        write_cifar(tmp_path / "one.bin", [(4, img)])
        ds = data.load_cifar10_bin(tmp_path / "one.bin")
        assert len(ds) == 1

    def test_multiple_files_concatenate(self, tmp_path):
        img = np.zeros((32, 32, 3), dtype=np.uint8)
        write_cifar(tmp_path / "a.bin", [(1, img)])
        write_cifar(tmp_path / "b.bin", [(2, img), (3, img)])
        ds = data.load_cifar10_bin([tmp_path / "a.bin", tmp_path / "b.bin"])
        np.testing.assert_array_equal(ds.labels, [1, 2, 3])

    def test_bad_size_is_length_error(self, tmp_path):
        (tmp_path / "bad.bin").write_bytes(b"\x00" * 3072)
        with pytest.raises(data.LengthError):
            data.load_cifar10_bin(tmp_path / "bad.bin")

    def test_label_out_of_range(self, tmp_path):
        img = np.zeros((32, 32, 3), dtype=np.uint8)
        write_cifar(tmp_path / "bad.bin", [(10, img)])
        with pytest.raises(data.LabelRangeError):
            data.load_cifar10_bin(tmp_path / "bad.bin")

    def test_round_trip_to_bytes(self, tmp_path, rng):
        img = rng.integers(0, 256, size=(32, 32, 3)).astype(np.uint8)
        write_cifar(tmp_path / "batch.bin", [(5, img)])
        ds = data.load_cifar10_bin(tmp_path / "batch.bin")
        back = np.rint(ds.images[0] * 255).astype(np.uint8)
        np.testing.assert_array_equal(back, img)


class TestGenBlobs:
    def test_zero_spread_collapses_to_means(self):
        ds = data.gen_blobs(30, 3, 16, 0.0, seed=1)
        for c in range(3):
            rows = ds.images[ds.labels == c].reshape(-1, 16)
            assert np.ptp(rows, axis=0).max() == 0.0
        flat = {tuple(ds.images[ds.labels == c][0].ravel()) for c in range(3)}
        assert len(flat) == 3

    def test_same_seed_identical(self):
        a = data.gen_blobs(100, 5, 25, 0.4, seed=9)
        b = data.gen_blobs(100, 5, 25, 0.4, seed=9)
        np.testing.assert_array_equal(a.images, b.images)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_stratified_counts(self):
        ds = data.gen_blobs(1000, 10, 16, 0.3, seed=2)
        counts = np.bincount(ds.labels, minlength=10)
        np.testing.assert_array_equal(counts, 100)

    def test_split_streams_differ(self):
        a = data.gen_blobs(50, 5, 16, 0.3, seed=3, split="train")
        b = data.gen_blobs(50, 5, 16, 0.3, seed=3, split="test")
        assert not np.array_equal(a.images, b.images)

    def test_bad_args(self):
        with pytest.raises(ValueError):
            data.gen_blobs(2, 5, 16, 0.1, seed=0)
        with pytest.raises(ValueError):
            data.gen_blobs(10, 2, 15, 0.1, seed=0)


class TestGenShapes:
    def test_shape_and_range(self):
        ds = data.gen_shapes(40, seed=4)
        assert ds.images.shape == (40, 28, 28, 1)
        assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0
        assert ds.n_classes == 10

    def test_all_classes_present(self):
        ds = data.gen_shapes(100, seed=4)
        assert set(ds.labels.tolist()) == set(range(10))

    def test_deterministic(self):
        a = data.gen_shapes(30, seed=8)
        b = data.gen_shapes(30, seed=8)
        np.testing.assert_array_equal(a.images, b.images)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_splits_disjoint_streams(self):
        a = data.gen_shapes(30, seed=8, split="train")
        b = data.gen_shapes(30, seed=8, split="test")
        assert not np.array_equal(a.images, b.images)

    def test_glyphs_carry_signal(self):
        # nearest neighbour in pixel space recovers the class far above
        # chance (class centroids are useless here by design: the
        # polarity coin averages light-on-dark against dark-on-light)
        train = data.gen_shapes(1000, seed=5, split="train")
        test = data.gen_shapes(300, seed=5, split="test")
        flat_tr = train.images.reshape(len(train), -1)
        flat_te = test.images.reshape(len(test), -1)
        d2 = ((flat_te[:, None, :] - flat_tr[None]) ** 2).sum(axis=2)
        preds = train.labels[d2.argmin(axis=1)]
        assert (preds == test.labels).mean() > 0.5


class TestBaselinePreprocess:
    def test_cifar_identity_when_forced(self, rng, stub_rng_factory):
        img = rng.random((32, 32, 3))
        out = data.baseline_preprocess(
            img, "cifar", stub_rng_factory(floats=[0.9], ints=[4, 4]))
        np.testing.assert_array_equal(out, img)

    def test_cifar_flip_when_forced(self, rng, stub_rng_factory):
        img = rng.random((32, 32, 3))
        out = data.baseline_preprocess(
            img, "cifar", stub_rng_factory(floats=[0.1], ints=[4, 4]))
        np.testing.assert_array_equal(out, img[:, ::-1, :])

    def test_mnist_identity_when_forced(self, rng, stub_rng_factory):
        img = rng.random((28, 28, 1))
        out = data.baseline_preprocess(img, "mnist",
                                       stub_rng_factory(ints=[2, 2]))
        np.testing.assert_array_equal(out, img)

    def test_blobs_identity(self, rng):
        img = rng.random((4, 4, 1))
        out = data.baseline_preprocess(img, "blobs",
                                       np.random.default_rng(0))
        np.testing.assert_array_equal(out, img)

    def test_shape_preserved(self, rng):
        for kind, shape in (("cifar", (32, 32, 3)), ("mnist", (28, 28, 1))):
            img = rng.random(shape)
            out = data.baseline_preprocess(img, kind,
                                           np.random.default_rng(1))
            assert out.shape == shape

    def test_unknown_kind(self, rng):
        with pytest.raises(ValueError):
            data.baseline_preprocess(rng.random((4, 4, 1)), "svhn",
                                     np.random.default_rng(0))

    def test_flip_frequency(self):
        # horizontal ramp: column order reveals the flip under any crop
        # (row 8 of the view always lands inside the padded content)
        w = 16
        img = np.tile(np.linspace(0.0, 1.0, w), (w, 1)).reshape(w, w, 1)
        rng = np.random.default_rng(123)
        flips = 0
        n = 100_000
        for _ in range(n):
            out = data.baseline_preprocess(img, "cifar", rng)
            flips += out[8, 10, 0] < out[8, 5, 0]
        assert flips / n == pytest.approx(0.5, abs=0.01)


class TestBatches:
    def test_large_batch_single_chunk(self):
        plan = data.BatchPlan(batch_size=100, seed=1)
        chunks = data.batches(17, plan, epoch=0)
        assert len(chunks) == 1
        assert sorted(chunks[0]) == list(range(17))

    def test_same_seed_epoch_identical(self):
        plan = data.BatchPlan(batch_size=4, seed=5)
        a = data.batches(13, plan, epoch=2)
        b = data.batches(13, plan, epoch=2)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_different_epochs_differ(self):
        plan = data.BatchPlan(batch_size=4, seed=5)
        a = np.concatenate(data.batches(13, plan, epoch=0))
        b = np.concatenate(data.batches(13, plan, epoch=1))
        assert not np.array_equal(a, b)

    def test_partition_with_partial_tail(self):
        plan = data.BatchPlan(batch_size=4, seed=0)
        chunks = data.batches(10, plan, epoch=0)
        assert [len(c) for c in chunks] == [4, 4, 2]
        assert sorted(np.concatenate(chunks)) == list(range(10))

    def test_accepts_dataset(self):
        ds = data.gen_blobs(12, 3, 4, 0.1, seed=0)
        plan = data.BatchPlan(batch_size=5, seed=1)
        chunks = data.batches(ds, plan, epoch=0)
        assert sum(len(c) for c in chunks) == 12

    def test_bad_plan(self):
        with pytest.raises(ValueError):
            data.BatchPlan(batch_size=0, seed=1)


class TestHelpers:
    def test_one_hot(self):
        out = data.one_hot([0, 2], 3)
        np.testing.assert_array_equal(out, [[1, 0, 0], [0, 0, 1]])

    def test_standardize_round_trip(self, rng):
        images = rng.random((10, 4, 4, 3))
        mean, std = data.channel_stats(images)
        z = data.standardize(images, mean, std)
        np.testing.assert_allclose(z.mean(axis=(0, 1, 2)), 0.0, atol=1e-12)
        np.testing.assert_allclose(z.std(axis=(0, 1, 2)), 1.0, atol=1e-12)

    def test_dataset_validation(self):
        with pytest.raises(data.LengthError):
            data.Dataset(images=np.zeros((2, 2, 2, 1)),
                         labels=np.array([0]), n_classes=2)
        with pytest.raises(data.LabelRangeError):
            data.Dataset(images=np.zeros((1, 2, 2, 1)),
                         labels=np.array([5]), n_classes=2)
