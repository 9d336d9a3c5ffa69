"""Tiny randomly-initialized models so the extractor tests run offline."""

import zlib

import numpy as np
import pytest
import torch


@pytest.fixture(scope="session")
def tiny_clip():
    from transformers import CLIPConfig, CLIPModel, CLIPTextConfig, CLIPVisionConfig

    torch.manual_seed(0)
    config = CLIPConfig(
        text_config=CLIPTextConfig(
            vocab_size=1000,
            hidden_size=32,
            intermediate_size=64,
            num_hidden_layers=2,
            num_attention_heads=2,
            max_position_embeddings=77,
            bos_token_id=998,
            eos_token_id=999,
            pad_token_id=0,
        ),
        vision_config=CLIPVisionConfig(
            hidden_size=32,
            intermediate_size=64,
            num_hidden_layers=2,
            num_attention_heads=2,
            image_size=448,
            patch_size=14,
        ),
        projection_dim=16,
    )
    model = CLIPModel(config)
    model.eval()
    return model


@pytest.fixture(scope="session")
def tiny_dino():
    from transformers import Dinov2Config, Dinov2Model

    torch.manual_seed(0)
    config = Dinov2Config(
        hidden_size=24,
        num_hidden_layers=2,
        num_attention_heads=2,
        mlp_ratio=2,
        image_size=448,
        patch_size=14,
    )
    model = Dinov2Model(config)
    model.eval()
    return model


class HashTokenizer:
    """Deterministic stand-in for a CLIP tokenizer (whitespace + crc32)."""

    def __init__(self, vocab_size=1000, bos=998, eos=999, pad=0):
        self.vocab_size = vocab_size
        self.bos = bos
        self.eos = eos
        self.pad = pad

    def _ids(self, text, max_length):
        body = [
            3 + zlib.crc32(word.encode()) % (self.vocab_size - 10)
            for word in text.lower().split()
        ]
        return [self.bos] + body[: max_length - 2] + [self.eos]

    def __call__(self, texts, padding=True, truncation=True, max_length=77,
                 return_tensors="pt"):
        rows = [self._ids(t, max_length) for t in texts]
        width = max(len(r) for r in rows)
        ids = np.full((len(rows), width), self.pad, dtype=np.int64)
        mask = np.zeros((len(rows), width), dtype=np.int64)
        for i, row in enumerate(rows):
            ids[i, : len(row)] = row
            mask[i, : len(row)] = 1
        return {
            "input_ids": torch.from_numpy(ids),
            "attention_mask": torch.from_numpy(mask),
        }


@pytest.fixture(scope="session")
def hash_tokenizer():
    return HashTokenizer()


class StubSentenceModel:
    """Deterministic sentence-embedding stand-in (crc32-seeded vectors)."""

    dim = 12

    def encode(self, texts, batch_size=32, convert_to_numpy=True,
               show_progress_bar=False):
        out = []
        for text in texts:
            rng = np.random.default_rng(zlib.crc32(text.encode()))
            out.append(rng.standard_normal(self.dim).astype(np.float32))
        return np.stack(out)


@pytest.fixture()
def stub_sentence_model():
    return StubSentenceModel()
