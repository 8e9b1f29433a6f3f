// Copyright 2026 The avgen authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "avgen/conditioner.hpp"
#include "avgen/sde.hpp"
#include "avgen/signal.hpp"

namespace avgen {

/// Multi-resolution U-shaped score network geometry. factors[k] is the
/// cumulative time/frequency downsampling of level k relative to the input;
/// it must start at 1 and be strictly increasing powers of two.
struct ScoreNetShape {
  int levels = 3;
  std::vector<int> channels = {16, 32, 64};
  std::vector<int> factors = {1, 2, 4};
  int temb_dim = 32;
  int cond_dim = 32;    // embedding dim D fed to the aligners
  int cond_layers = 12; // aggregator layer count L

  void validate() const;
  int pad_time(int frames) const;  // round up to a multiple of factors.back()
  std::vector<CondLevelShape> cond_shape(int frames) const;
};

struct ParamEntry {
  std::string name;
  std::vector<int> dims;
  std::size_t offset = 0;
  std::size_t size = 0;
};

/// Names and offsets of every tensor inside the flat parameter vector. The
/// ordering is part of the checkpoint format.
struct ParamLayout {
  std::vector<ParamEntry> entries;
  std::size_t total = 0;

  const ParamEntry& find(const std::string& name) const;
};

ParamLayout make_param_layout(const ScoreNetShape& shape);

/// Score model with hand-written forward/backward passes. All activations
/// live in a Work buffer owned by the caller, so batch items can run in
/// parallel on independent Work instances with shared params.
template <typename S>
class ScoreModel {
 public:
  // One intermediate tensor, stored [channel][freq][time], time contiguous.
  struct Tens {
    int c = 0, f = 0, t = 0;
    std::vector<S> v;
    void resize(int C, int F, int T) {
      c = C;
      f = F;
      t = T;
      v.assign(static_cast<std::size_t>(C) * F * T, S(0));
    }
    S* row(int ci, int fi) { return v.data() + (static_cast<std::size_t>(ci) * f + fi) * t; }
    const S* row(int ci, int fi) const {
      return v.data() + (static_cast<std::size_t>(ci) * f + fi) * t;
    }
  };

  struct Work {
    int frames = 0;       // original T before padding
    int padded = 0;       // padded T
    int bins = 0;         // F
    double sigma = 0.0;
    bool has_cond = false;

    const LayerEmbeddings* emb = nullptr;  // borrowed; valid until backward

    std::vector<S> temb;             // sinusoidal features of log sigma
    Tens input;                      // 5 x F x T
    Tens input_stem;                 // stem pointwise output
    std::vector<Tens> enc_pre;       // per level: pre-activation
    std::vector<Tens> enc_out;       // per level: h_k
    std::vector<Tens> cat;           // per level: interleave(h_k, f_k)
    Tens mid_a_pre, mid_a, mid_dw_pre, mid_dw, mid_b_pre, mid_b;
    std::vector<Tens> dec_pre;       // per level 0..K-2
    std::vector<Tens> dec_out;
    Tens out_dw_pre, out_dw, out;

    // conditioning caches (per level)
    std::vector<std::vector<S>> cond_weights;  // softmax rows
    std::vector<std::vector<S>> cond_agg;      // D x T_v
    std::vector<std::vector<S>> cond_fit;      // D x (T_k * d_k)
    std::vector<std::vector<S>> cond_f;        // C_k x T_k
    int cond_tv = 0;
  };

  explicit ScoreModel(const ScoreNetShape& shape);

  const ScoreNetShape& shape() const { return shape_; }
  const ParamLayout& layout() const { return layout_; }
  std::size_t param_count() const { return layout_.total; }

  /// Fan-in-scaled Gaussian init; the output head and aggregation logits
  /// start at zero, downsampling aligner taps start as averaging.
  std::vector<S> init_params(std::uint64_t seed) const;

  /// emb == nullptr feeds all-zero conditioning features (audio-only mode).
  void forward(Work& w, const std::vector<S>& params, const ComplexSpectrogram& x_t,
               const ComplexSpectrogram& y, const LayerEmbeddings* emb, double sigma) const;

  /// Score estimate from the last forward call, shaped like the input.
  ComplexSpectrogram score(const Work& w) const;

  /// Exact reverse-mode gradients for every parameter, accumulated into
  /// `grad` (sized layout().total). dscore is the loss gradient w.r.t. the
  /// complex score output.
  void backward(Work& w, const std::vector<S>& params, const ComplexSpectrogram& dscore,
                std::vector<S>& grad) const;

  /// Conditioning features of the last forward call as double series
  /// (testing hook; matches align_full given the same parameters).
  std::vector<TimeSeries> cond_features(const Work& w) const;

 private:
  ScoreNetShape shape_;
  ParamLayout layout_;

  void cond_forward(Work& w, const std::vector<S>& params, const LayerEmbeddings& emb) const;
  void cond_backward(Work& w, const std::vector<S>& params,
                     const std::vector<std::vector<S>>& dfk, const LayerEmbeddings& emb,
                     std::vector<S>& grad) const;
};

int conv_groups(int cin, int cout);

/// Versioned binary checkpoint: magic "AVGC", shape, SDE params, float32
/// parameters and optional Adam moments. Bit-exact across save/load.
struct AdamMoments {
  std::uint64_t step = 0;
  std::vector<float> m;
  std::vector<float> v;
};

struct Checkpoint {
  ScoreNetShape shape;
  SdeParams sde;
  std::vector<float> params;
  std::optional<AdamMoments> moments;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

extern template class ScoreModel<float>;
extern template class ScoreModel<double>;

}  // namespace avgen
