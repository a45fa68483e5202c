"""Full captioning model: encoder -> enhancer -> projector -> decoder."""

from __future__ import annotations

import numpy as np

from . import bridge, data, encoder, enhancer, nn
from . import tensor as T
from .rng import Rng


def build_vocabulary():
    """Closed vocabulary covering the prompt and every template caption."""
    words = bridge.word_tokens(bridge.PROMPT)
    words = [w for w in words if w not in bridge.SPECIALS]
    return bridge.Vocabulary(words + data.template_vocabulary_words())


class CaptionModel:
    def __init__(self, enc_cfg: encoder.EncoderConfig, enh_cfg: enhancer.EnhancerConfig,
                 dec_cfg: bridge.DecoderConfig, vocab: bridge.Vocabulary, seed=0):
        if enh_cfg.d_model != enc_cfg.d_model:
            raise ValueError("enhancer width must match encoder width")
        self.enc_cfg = enc_cfg
        self.enh_cfg = enh_cfg
        self.dec_cfg = dec_cfg
        self.vocab = vocab
        self.store = nn.ParamStore(Rng(seed).fork("params"))
        self.layout = bridge.PromptLayout.build(vocab, enc_cfg.num_patches)
        self._materialize()

    def _materialize(self):
        """Create every parameter up front with a throwaway forward pass."""
        zero = np.zeros((self.enc_cfg.image_size, self.enc_cfg.image_size, 3))
        self.forward_loss(zero, zero, [bridge.EOS])
        self.store.zero_grad()

    def project_features(self, img1, img2):
        pyr = encoder.encode_pair(self.store, img1, img2, self.enc_cfg)
        enh = enhancer.enhance(self.store, pyr, self.enh_cfg)
        f1p, f2p = enh.fused
        return bridge.project(self.store, f1p, f2p, self.enc_cfg.d_model,
                              self.dec_cfg.c_model)

    def forward_loss(self, img1, img2, caption_ids):
        f1h, f2h = self.project_features(img1, img2)
        seq, positions, targets = bridge.assemble_sequence(
            self.store, f1h, f2h, self.layout, self.vocab, self.dec_cfg, caption_ids)
        logits = bridge.decoder_forward(self.store, seq, len(self.vocab),
                                        self.layout, self.dec_cfg)
        return bridge.decode_loss(logits, positions, targets)

    def batch_loss(self, samples):
        """samples: list of (img1, img2, caption_ids); mean sample loss."""
        losses = [self.forward_loss(i1, i2, ids) for i1, i2, ids in samples]
        total = losses[0]
        for l in losses[1:]:
            total = total + l
        return total * (1.0 / len(losses))

    def generate(self, img1, img2):
        f1h, f2h = self.project_features(img1, img2)
        return bridge.generate(self.store, f1h, f2h, self.layout,
                               self.vocab, self.dec_cfg)

    def caption_ids(self, caption_text):
        return self.vocab.encode(caption_text) + [bridge.EOS]
