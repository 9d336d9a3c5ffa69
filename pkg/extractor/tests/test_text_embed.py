import json

import numpy as np
import pytest

from tag_extractor.tensor_io import load_tensor, read_records
from tag_extractor.text_embed import ClipTextEncoder, SentenceEncoder, export_text_table, read_word_list


class TestClipTextEncoder:
    def test_shape_and_determinism(self, tiny_clip, hash_tokenizer):
        encoder = ClipTextEncoder(tiny_clip, hash_tokenizer, batch_size=3)
        texts = ["a dog in the park", "a cat", "the leaning tower", "supercar", "the moon"]
        first = encoder.encode(texts)
        second = encoder.encode(texts)
        assert first.shape == (5, 16)  # projection_dim
        assert first.tobytes() == second.tobytes()

    def test_batching_matches_single(self, tiny_clip, hash_tokenizer):
        texts = [f"caption number {i}" for i in range(7)]
        small = ClipTextEncoder(tiny_clip, hash_tokenizer, batch_size=2).encode(texts)
        big = ClipTextEncoder(tiny_clip, hash_tokenizer, batch_size=64).encode(texts)
        np.testing.assert_allclose(small, big, atol=1e-5)


class TestExportTextTable:
    def test_layout_and_alignment(self, tmp_path, stub_sentence_model):
        encoder = SentenceEncoder(stub_sentence_model)
        out = export_text_table(["dog", "cat", "tree"], encoder, tmp_path / "table", source="sbert")
        texts = read_records(out / "records.jsonl")
        matrix = load_tensor(out / "embeddings.tens")
        assert texts == ["dog", "cat", "tree"]
        assert matrix.shape == (3, 12)

    def test_prompt_template_keys(self, tmp_path, stub_sentence_model):
        encoder = SentenceEncoder(stub_sentence_model)
        out = export_text_table(
            ["a photo of a dog", "a photo of a cat"],
            encoder,
            tmp_path / "table",
            source="clip-text",
            keys=["dog", "cat"],
        )
        assert read_records(out / "records.jsonl") == ["dog", "cat"]
        # embeddings reflect the templated text, not the bare word
        bare = encoder.encode(["dog", "cat"])
        stored = load_tensor(out / "embeddings.tens")
        assert not np.allclose(stored, bare)

    def test_empty_rejected(self, tmp_path, stub_sentence_model):
        with pytest.raises(ValueError, match="no texts"):
            export_text_table([], SentenceEncoder(stub_sentence_model), tmp_path, source="x")

    def test_word_list_reader(self, tmp_path):
        (tmp_path / "words.txt").write_text("# comment\ndog\n\ncat\n")
        assert read_word_list(tmp_path / "words.txt") == ["dog", "cat"]

    def test_validates_with_engine_loader(self, tmp_path, stub_sentence_model):
        tagseg = pytest.importorskip("tagseg")
        out = export_text_table(
            ["dog", "cat"], SentenceEncoder(stub_sentence_model), tmp_path / "table", source="s"
        )
        table = tagseg.load_text_table(out / "records.jsonl", out / "embeddings.tens")
        assert len(table) == 2

    def test_manifest_written_by_cli_helpers(self, tmp_path, stub_sentence_model):
        from tag_extractor.cli import _export_with_manifest

        encoder = SentenceEncoder(stub_sentence_model)
        assert _export_with_manifest(["dog"], encoder, tmp_path / "t", "sbert") == 0
        manifest = json.loads((tmp_path / "t" / "manifest.json").read_text())
        kinds = {entry["kind"] for entry in manifest["artifacts"]}
        assert kinds == {"records", "embeddings"}
        for entry in manifest["artifacts"]:
            assert len(entry["sha256"]) == 64
