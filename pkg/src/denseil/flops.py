"""Analytic multiply-add counts for the decoder stack.

One multiply-add counts as 1. The closed forms cover exactly the matmuls the
stack executes per forward pass, so the total must equal an instrumented run
that logs every matmul. With n = I*P tokens, m = (S+1)*n interaction keys,
width d and FFN hidden h, one block costs:

  self-attention   4*n*d^2 + 2*n^2*d   (Q,K,V,output projections; scores; values)
  interaction      fusion=attention:     2*n*d^2 + 2*m*d^2 + 2*n*m*d
                   fusion=summation:     0
                   fusion=concatenation: n*(S+1)*d^2
  ffn              2*n*d*h

Per-head widths divide out: scores cost heads * n * m * (d/heads) = n*m*d,
so the count is independent of the head count. The one-time adapter matmuls
that build the pooled token matrices happen outside the stack and are
reported separately (``adapters`` field), never in ``total``, keeping the
total exactly linear in R.
"""

from __future__ import annotations

from .decoder import DecoderConfig


def estimate_decoder_flops(cfg: DecoderConfig, I: int, P: int,
                           num_encoder_blocks: int = None,
                           encoder_channels=None) -> dict:
    """Per-forward multiply-add counts; returns a breakdown dict.

    ``num_encoder_blocks`` defaults to enough blocks to cover the configured
    dense sources. ``encoder_channels`` (widths C_1..C_L) enables the
    informational adapter count.
    """
    n = I * P
    d, h = cfg.d, cfg.ffn_hidden
    if num_encoder_blocks is None:
        num_encoder_blocks = max(cfg.dense_sources) if cfg.dense_sources else 4
    source_ids = cfg.sources_for(num_encoder_blocks)
    S = len(source_ids)
    m = (S + 1) * n

    self_macs = 4 * n * d * d + 2 * n * n * d
    if cfg.variant == "TransEnc":
        dense_macs = 0
    elif cfg.fusion == "attention":
        dense_macs = 2 * n * d * d + 2 * m * d * d + 2 * n * m * d
    elif cfg.fusion == "summation":
        dense_macs = 0
    else:  # concatenation
        dense_macs = n * (S + 1) * d * d
    ffn_macs = 2 * n * d * h
    per_block = self_macs + dense_macs + ffn_macs

    adapters = 0
    if encoder_channels is not None:
        adapters = sum(n * c * d for c in encoder_channels)

    return {
        "total": cfg.R * per_block,
        "per_block": per_block,
        "self_attention": self_macs,
        "dense": dense_macs,
        "ffn": ffn_macs,
        "adapters": adapters,
    }
