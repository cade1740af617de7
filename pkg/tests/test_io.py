import numpy as np
import pytest

from coparse import io, synthgen
from coparse.errors import DataError


class TestPnm:
    def test_ppm_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        pixels = rng.integers(0, 256, size=(5, 7, 3), dtype=np.uint8)
        path = tmp_path / "x.ppm"
        io.write_ppm(path, pixels)
        assert (io.read_ppm(path) == pixels).all()

    def test_pgm16_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        values = rng.integers(0, 65536, size=(4, 6))
        path = tmp_path / "x.pgm"
        io.write_pgm16(path, values)
        assert (io.read_pgm(path) == values).all()

    def test_pgm16_is_big_endian(self, tmp_path):
        path = tmp_path / "x.pgm"
        io.write_pgm16(path, np.array([[0x0102]]))
        raw = path.read_bytes()
        assert raw.endswith(b"\x01\x02")

    def test_pgm8_round_trip(self, tmp_path):
        values = np.array([[0, 255], [255, 0]])
        path = tmp_path / "x.pgm"
        io.write_pgm8(path, values)
        assert (io.read_pgm(path) == values).all()

    def test_header_comments_skipped(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P5\n# a comment\n2 1\n255\n\x07\x09")
        assert io.read_pgm(path).tolist() == [[7, 9]]

    def test_truncated_raster_rejected(self, tmp_path):
        path = tmp_path / "t.ppm"
        path.write_bytes(b"P6\n4 4\n255\nabc")
        with pytest.raises(DataError):
            io.read_ppm(path)

    def test_wrong_magic_rejected(self, tmp_path):
        path = tmp_path / "w.ppm"
        path.write_bytes(b"P5\n1 1\n255\n\x00")
        with pytest.raises(DataError):
            io.read_ppm(path)

    def test_value_range_enforced(self, tmp_path):
        with pytest.raises(DataError):
            io.write_pgm16(tmp_path / "o.pgm", np.array([[70000]]))


class TestManifest:
    def test_corpus_round_trip(self, tmp_path):
        corpus = synthgen.generate(synthgen.default_scene_spec(seed=3), 2)
        manifest = io.save_corpus(corpus, tmp_path)
        loaded = io.load_corpus(manifest)
        assert loaded.vocabulary == corpus.vocabulary
        assert len(loaded.images) == 2
        for a, b in zip(corpus.images, loaded.images):
            assert a.id == b.id
            assert (a.pixels == b.pixels).all()
            assert (a.superpixel_map == b.superpixel_map).all()
            assert (a.contour_map == b.contour_map).all()
            assert (a.ground_truth == b.ground_truth).all()
            assert a.tags == b.tags

    def test_vocabulary_background_first_enforced(self, tmp_path):
        (tmp_path / "m.json").write_text(
            '{"vocabulary": ["shirt", "background"], "images": []}')
        with pytest.raises(DataError):
            io.load_corpus(tmp_path / "m.json")

    def test_missing_manifest_rejected(self, tmp_path):
        with pytest.raises(DataError):
            io.load_corpus(tmp_path / "nope.json")

    def test_unknown_tag_rejected(self, tmp_path):
        corpus = synthgen.generate(synthgen.default_scene_spec(seed=3), 1)
        manifest = io.save_corpus(corpus, tmp_path)
        import json

        doc = json.loads(manifest.read_text())
        doc["images"][0]["tags"] = ["not-a-label"]
        manifest.write_text(json.dumps(doc))
        with pytest.raises(DataError):
            io.load_corpus(manifest)

    def test_empty_corpus_rejected(self, tmp_path):
        (tmp_path / "m.json").write_text(
            '{"vocabulary": ["background"], "images": []}')
        with pytest.raises(DataError):
            io.load_corpus(tmp_path / "m.json")
