// Copyright 2026 The avgen authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "avgen/synth.hpp"

namespace avgen {

/// L x T_v x D conditioning embeddings at the 25 Hz frame rate, stored
/// layer-major, then time, then dim (the .ave on-disk order).
struct LayerEmbeddings {
  int layers = 0;      // L
  int frames = 0;      // T_v
  int dim = 0;         // D
  int frame_rate = kVideoRate;
  std::vector<float> data;

  LayerEmbeddings() = default;
  LayerEmbeddings(int l, int t, int d)
      : layers(l), frames(t), dim(d),
        data(static_cast<size_t>(l) * t * d, 0.0f) {}

  float& at(int l, int t, int d) {
    return data[(static_cast<size_t>(l) * frames + t) * dim + d];
  }
  float at(int l, int t, int d) const {
    return data[(static_cast<size_t>(l) * frames + t) * dim + d];
  }
};

/// Trainable K x L logits; row-wise softmax yields the simplex weights
/// (nonnegative, summing to one by construction).
struct AggregatorWeights {
  int levels = 0;  // K
  int layers = 0;  // L
  std::vector<double> logits;

  AggregatorWeights() = default;
  AggregatorWeights(int k, int l) : levels(k), layers(l), logits(static_cast<size_t>(k) * l, 0.0) {}

  std::vector<double> weights_row(int k) const;
};

/// A dim-major time series: row d is a contiguous track of `len` values.
struct TimeSeries {
  int dim = 0;
  int len = 0;
  std::vector<double> v;

  TimeSeries() = default;
  TimeSeries(int d, int n) : dim(d), len(n), v(static_cast<size_t>(d) * n, 0.0) {}
  double& at(int d, int t) { return v[static_cast<size_t>(d) * len + t]; }
  double at(int d, int t) const { return v[static_cast<size_t>(d) * len + t]; }
};

/// Fused downsampling + channel adaptation: a Conv1D with kernel size ==
/// stride == d mapping D input channels to C output channels.
struct DownAligner {
  int out_ch = 0;   // C
  int in_ch = 0;    // D
  int factor = 0;   // d
  std::vector<double> weight;  // [C][D][d]
  std::vector<double> bias;    // [C]

  DownAligner() = default;
  DownAligner(int c, int d_in, int f)
      : out_ch(c), in_ch(d_in), factor(f),
        weight(static_cast<size_t>(c) * d_in * f, 0.0), bias(c, 0.0) {}
  double& w(int c, int e, int j) {
    return weight[(static_cast<size_t>(c) * in_ch + e) * factor + j];
  }
  double w(int c, int e, int j) const {
    return weight[(static_cast<size_t>(c) * in_ch + e) * factor + j];
  }
};

struct CondLevelShape {
  int channels = 0;  // C_k
  int frames = 0;    // T_k
  int factor = 0;    // d_k relative to the 100 Hz rate
};

/// Per-level conditioning features f_k (channels x time), broadcast over the
/// frequency axis when consumed by the score network.
struct ConditioningSet {
  std::vector<TimeSeries> features;
};

/// Simplex-weighted sum over layers for level k: sum_l w_kl * e_l.
TimeSeries aggregate(const LayerEmbeddings& emb, const AggregatorWeights& w, int level);

/// 25 Hz -> factor*25 Hz: anchor sample v maps to output index factor*v,
/// linear interpolation between anchors, last value held past the end.
TimeSeries temp_align_up(const TimeSeries& x, int factor);

/// Crops or hold-pads the series on the right to exactly `target_len`.
TimeSeries fit_length(const TimeSeries& x, int target_len);

/// Strided Conv1D with kernel size == stride == aligner.factor.
TimeSeries temp_align_down(const TimeSeries& x, const DownAligner& aligner);

/// Full Eq.-style conditioning chain per level: aggregate, upsample to the
/// 100 Hz grid, fit to d_k * T_k samples, then the fused downsampling conv.
ConditioningSet align_full(const LayerEmbeddings& emb, const AggregatorWeights& w,
                           const std::vector<DownAligner>& aligners,
                           const std::vector<CondLevelShape>& shape);

/// Mock AV-HuBERT: each (layer, symbol) pair maps to a fixed codeword drawn
/// once from codebook_seed (orthonormal across symbols within a layer, scaled
/// to norm sqrt(D)); per-frame noise is added at noise_level from noise_seed.
/// Depends only on the clean-signal labels. The codebook covers the whole
/// alphabet so codewords are consistent across clips.
LayerEmbeddings mock_embeddings(const SegmentLabels& labels, int alphabet_size, int layers,
                                int dim, std::uint64_t codebook_seed, double noise_level,
                                std::uint64_t noise_seed);

/// .ave file: magic "AVEM", u32 version=1, u32 L, u32 T_v, u32 D, then
/// L*T_v*D float32 little-endian values. Round trips bit-exactly.
void write_embeddings(const std::string& path, const LayerEmbeddings& emb);
LayerEmbeddings read_embeddings(const std::string& path);

}  // namespace avgen
