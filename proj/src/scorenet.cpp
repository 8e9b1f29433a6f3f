// Copyright 2026 The avgen authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "avgen/scorenet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "avgen/common.hpp"

namespace avgen {

void ScoreNetShape::validate() const {
  check(levels >= 1, "ScoreNetShape: need at least one level");
  check(static_cast<int>(channels.size()) == levels, "ScoreNetShape: channels size != levels");
  check(static_cast<int>(factors.size()) == levels, "ScoreNetShape: factors size != levels");
  check(factors[0] == 1, "ScoreNetShape: factors must start at 1");
  for (int k = 0; k < levels; ++k) {
    check(channels[k] >= 2, "ScoreNetShape: channels too small");
    check((factors[k] & (factors[k] - 1)) == 0, "ScoreNetShape: factors must be powers of two");
    if (k > 0) check(factors[k] > factors[k - 1], "ScoreNetShape: factors must increase");
  }
  check(temb_dim >= 2 && temb_dim % 2 == 0, "ScoreNetShape: temb_dim must be even");
  check(cond_dim >= 1 && cond_layers >= 1, "ScoreNetShape: bad conditioning dims");
}

int ScoreNetShape::pad_time(int frames) const {
  const int m = factors.back();
  return (frames + m - 1) / m * m;
}

std::vector<CondLevelShape> ScoreNetShape::cond_shape(int frames) const {
  const int padded = pad_time(frames);
  std::vector<CondLevelShape> out(levels);
  for (int k = 0; k < levels; ++k) {
    out[k] = {channels[k], padded / factors[k], factors[k]};
  }
  return out;
}

int conv_groups(int cin, int cout) {
  int g = 8;
  while (g > 1 && (cin % g != 0 || cout % g != 0 || cin / g < 4)) g >>= 1;
  return g;
}

namespace {

struct LayoutBuilder {
  ParamLayout layout;
  void add(const std::string& name, std::vector<int> dims) {
    ParamEntry e;
    e.name = name;
    e.dims = std::move(dims);
    e.size = 1;
    for (int d : e.dims) e.size *= static_cast<std::size_t>(d);
    e.offset = layout.total;
    layout.total += e.size;
    layout.entries.push_back(std::move(e));
  }
};

}  // namespace

const ParamEntry& ParamLayout::find(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return e;
  }
  throw std::invalid_argument("ParamLayout: no tensor named " + name);
}

ParamLayout make_param_layout(const ScoreNetShape& shape) {
  shape.validate();
  LayoutBuilder b;
  const int K = shape.levels;
  b.add("enc0.pw.w", {shape.channels[0], 5});
  b.add("enc0.pw.b", {shape.channels[0]});
  b.add("enc0.dw.w", {shape.channels[0], 3, 3});
  b.add("enc0.dw.b", {shape.channels[0]});
  for (int k = 1; k < K; ++k) {
    const int cin = 2 * shape.channels[k - 1];
    const int s = shape.factors[k] / shape.factors[k - 1];
    const int g = conv_groups(cin, shape.channels[k]);
    b.add("enc" + std::to_string(k) + ".down.w", {shape.channels[k], cin / g, s, s});
    b.add("enc" + std::to_string(k) + ".down.b", {shape.channels[k]});
  }
  for (int k = 0; k < K; ++k) {
    b.add("temb" + std::to_string(k) + ".w", {shape.channels[k], shape.temb_dim});
    b.add("temb" + std::to_string(k) + ".b", {shape.channels[k]});
  }
  const int cm = shape.channels[K - 1];
  b.add("mid.a.w", {cm, 2 * cm / conv_groups(2 * cm, cm)});
  b.add("mid.a.b", {cm});
  b.add("mid.dw.w", {cm, 3, 3});
  b.add("mid.dw.b", {cm});
  b.add("mid.b.w", {cm, cm});  // the one full channel mixer
  b.add("mid.b.b", {cm});
  for (int k = K - 2; k >= 0; --k) {
    const int cin = shape.channels[k + 1];
    const int g = conv_groups(cin, shape.channels[k]);
    b.add("dec" + std::to_string(k) + ".up.w", {shape.channels[k], cin / g});
    b.add("dec" + std::to_string(k) + ".up.b", {shape.channels[k]});
  }
  b.add("out.dw.w", {shape.channels[0], 3, 1});
  b.add("out.dw.b", {shape.channels[0]});
  b.add("out.pw.w", {2, shape.channels[0]});
  b.add("out.pw.b", {2});
  b.add("agg.logits", {K, shape.cond_layers});
  for (int k = 0; k < K; ++k) {
    b.add("align" + std::to_string(k) + ".w",
          {shape.channels[k], shape.cond_dim, shape.factors[k]});
    b.add("align" + std::to_string(k) + ".b", {shape.channels[k]});
  }
  return std::move(b.layout);
}

// ---------------------------------------------------------------------------
// conv primitives
// ---------------------------------------------------------------------------

namespace {

template <typename S>
using TensT = typename ScoreModel<S>::Tens;

// Grouped 1x1 conv; uf/ut > 1 reads the input as nearest-neighbor upsampled.
template <typename S>
void pw_fwd(const TensT<S>& in, TensT<S>& out, const S* w, const S* b, int groups,
            int uf, int ut) {
  const int cin_g = in.c / groups, cout_g = out.c / groups;
  for (int co = 0; co < out.c; ++co) {
    const int ci0 = (co / cout_g) * cin_g;
    for (int fo = 0; fo < out.f; ++fo) {
      S* o = out.row(co, fo);
      const S bias = b[co];
      for (int t = 0; t < out.t; ++t) o[t] = bias;
      for (int ci = 0; ci < cin_g; ++ci) {
        const S wv = w[static_cast<std::size_t>(co) * cin_g + ci];
        const S* x = in.row(ci0 + ci, fo / uf);
        if (ut == 1) {
          for (int t = 0; t < out.t; ++t) o[t] += wv * x[t];
        } else {
          for (int ti = 0; ti < in.t; ++ti) {
            const S v = wv * x[ti];
            for (int r = 0; r < ut; ++r) o[ti * ut + r] += v;
          }
        }
      }
    }
  }
}

template <typename S>
void pw_bwd(const TensT<S>& in, const TensT<S>& dout, TensT<S>& din, const S* w, S* dw,
            S* db, int groups, int uf, int ut) {
  const int cin_g = in.c / groups, cout_g = dout.c / groups;
  for (int co = 0; co < dout.c; ++co) {
    const int ci0 = (co / cout_g) * cin_g;
    S dbv = S(0);
    for (int fo = 0; fo < dout.f; ++fo) {
      const S* d = dout.row(co, fo);
      for (int t = 0; t < dout.t; ++t) dbv += d[t];
      for (int ci = 0; ci < cin_g; ++ci) {
        const S wv = w[static_cast<std::size_t>(co) * cin_g + ci];
        const S* x = in.row(ci0 + ci, fo / uf);
        S* dx = din.row(ci0 + ci, fo / uf);
        S dwv = S(0);
        if (ut == 1) {
          for (int t = 0; t < dout.t; ++t) {
            dwv += d[t] * x[t];
            dx[t] += wv * d[t];
          }
        } else {
          for (int ti = 0; ti < in.t; ++ti) {
            S acc = S(0);
            for (int r = 0; r < ut; ++r) acc += d[ti * ut + r];
            dwv += acc * x[ti];
            dx[ti] += wv * acc;
          }
        }
        dw[static_cast<std::size_t>(co) * cin_g + ci] += dwv;
      }
    }
    db[co] += dbv;
  }
}

// Grouped conv with kernel size == stride == s on both axes (no overlap).
template <typename S>
void down_fwd(const TensT<S>& in, TensT<S>& out, const S* w, const S* b, int groups, int s) {
  const int cin_g = in.c / groups, cout_g = out.c / groups;
  const int taps = s * s;
  for (int co = 0; co < out.c; ++co) {
    const int ci0 = (co / cout_g) * cin_g;
    for (int fo = 0; fo < out.f; ++fo) {
      S* o = out.row(co, fo);
      const S bias = b[co];
      for (int t = 0; t < out.t; ++t) o[t] = bias;
      for (int ci = 0; ci < cin_g; ++ci) {
        const S* wrow = w + (static_cast<std::size_t>(co) * cin_g + ci) * taps;
        for (int i = 0; i < s; ++i) {
          const S* x = in.row(ci0 + ci, fo * s + i);
          for (int j = 0; j < s; ++j) {
            const S wv = wrow[i * s + j];
            for (int t = 0; t < out.t; ++t) o[t] += wv * x[t * s + j];
          }
        }
      }
    }
  }
}

template <typename S>
void down_bwd(const TensT<S>& in, const TensT<S>& dout, TensT<S>& din, const S* w, S* dw,
              S* db, int groups, int s) {
  const int cin_g = in.c / groups, cout_g = dout.c / groups;
  const int taps = s * s;
  for (int co = 0; co < dout.c; ++co) {
    const int ci0 = (co / cout_g) * cin_g;
    S dbv = S(0);
    for (int fo = 0; fo < dout.f; ++fo) {
      const S* d = dout.row(co, fo);
      for (int t = 0; t < dout.t; ++t) dbv += d[t];
      for (int ci = 0; ci < cin_g; ++ci) {
        const S* wrow = w + (static_cast<std::size_t>(co) * cin_g + ci) * taps;
        S* dwrow = dw + (static_cast<std::size_t>(co) * cin_g + ci) * taps;
        for (int i = 0; i < s; ++i) {
          const S* x = in.row(ci0 + ci, fo * s + i);
          S* dx = din.row(ci0 + ci, fo * s + i);
          for (int j = 0; j < s; ++j) {
            const S wv = wrow[i * s + j];
            S dwv = S(0);
            for (int t = 0; t < dout.t; ++t) {
              dwv += d[t] * x[t * s + j];
              dx[t * s + j] += wv * d[t];
            }
            dwrow[i * s + j] += dwv;
          }
        }
      }
    }
  }
}

// Depthwise conv, stride 1, zero-padded "same", kernel kf x kt.
template <typename S>
void dw_fwd(const TensT<S>& in, TensT<S>& out, const S* w, const S* b, int kf, int kt) {
  const int cf = kf / 2, ct = kt / 2;
  for (int c = 0; c < in.c; ++c) {
    const S* wrow = w + static_cast<std::size_t>(c) * kf * kt;
    for (int f = 0; f < in.f; ++f) {
      S* o = out.row(c, f);
      const S bias = b[c];
      for (int t = 0; t < in.t; ++t) o[t] = bias;
      for (int i = 0; i < kf; ++i) {
        const int fi = f + i - cf;
        if (fi < 0 || fi >= in.f) continue;
        const S* x = in.row(c, fi);
        for (int j = 0; j < kt; ++j) {
          const S wv = wrow[i * kt + j];
          const int off = j - ct;
          const int lo = std::max(0, -off), hi = std::min(in.t, in.t - off);
          for (int t = lo; t < hi; ++t) o[t] += wv * x[t + off];
        }
      }
    }
  }
}

template <typename S>
void dw_bwd(const TensT<S>& in, const TensT<S>& dout, TensT<S>& din, const S* w, S* dw,
            S* db, int kf, int kt) {
  const int cf = kf / 2, ct = kt / 2;
  for (int c = 0; c < in.c; ++c) {
    const S* wrow = w + static_cast<std::size_t>(c) * kf * kt;
    S* dwrow = dw + static_cast<std::size_t>(c) * kf * kt;
    S dbv = S(0);
    for (int f = 0; f < in.f; ++f) {
      const S* d = dout.row(c, f);
      for (int t = 0; t < in.t; ++t) dbv += d[t];
      for (int i = 0; i < kf; ++i) {
        const int fi = f + i - cf;
        if (fi < 0 || fi >= in.f) continue;
        const S* x = in.row(c, fi);
        S* dx = din.row(c, fi);
        for (int j = 0; j < kt; ++j) {
          const S wv = wrow[i * kt + j];
          const int off = j - ct;
          const int lo = std::max(0, -off), hi = std::min(in.t, in.t - off);
          S dwv = S(0);
          for (int t = lo; t < hi; ++t) {
            dwv += d[t] * x[t + off];
            dx[t + off] += wv * d[t];
          }
          dwrow[i * kt + j] += dwv;
        }
      }
    }
    db[c] += dbv;
  }
}

template <typename S>
inline S sigmoid(S x) {
  return S(1) / (S(1) + std::exp(-x));
}

// out = silu(pre), elementwise.
template <typename S>
void silu_fwd(const TensT<S>& pre, TensT<S>& out) {
  for (std::size_t i = 0; i < pre.v.size(); ++i) {
    const S sg = sigmoid(pre.v[i]);
    out.v[i] = pre.v[i] * sg;
  }
}

template <typename S>
void silu_bwd(const TensT<S>& pre, const TensT<S>& dout, TensT<S>& dpre) {
  for (std::size_t i = 0; i < pre.v.size(); ++i) {
    const S sg = sigmoid(pre.v[i]);
    dpre.v[i] = dout.v[i] * sg * (S(1) + pre.v[i] * (S(1) - sg));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// ScoreModel
// ---------------------------------------------------------------------------

template <typename S>
ScoreModel<S>::ScoreModel(const ScoreNetShape& shape)
    : shape_(shape), layout_(make_param_layout(shape)) {}

template <typename S>
std::vector<S> ScoreModel<S>::init_params(std::uint64_t seed) const {
  std::vector<S> p(layout_.total, S(0));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (const auto& e : layout_.entries) {
    S* dst = p.data() + e.offset;
    const bool is_weight = e.name.ends_with(".w");
    if (!is_weight) continue;  // biases and logits stay zero
    if (e.name == "out.pw.w") continue;  // zero-init head: zero score at start
    if (e.name.starts_with("align")) {
      // adapter ~ N(0, 1/D), spread uniformly over the d averaging taps
      const int C = e.dims[0], D = e.dims[1], d = e.dims[2];
      const double sd = 1.0 / std::sqrt(static_cast<double>(D));
      for (int c = 0; c < C; ++c) {
        for (int ein = 0; ein < D; ++ein) {
          const double a = gauss(rng) * sd / d;
          for (int j = 0; j < d; ++j) dst[(static_cast<std::size_t>(c) * D + ein) * d + j] =
              static_cast<S>(a);
        }
      }
      continue;
    }
    std::size_t fan_in = 1;
    for (std::size_t i = 1; i < e.dims.size(); ++i) fan_in *= static_cast<std::size_t>(e.dims[i]);
    const double sd = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < e.size; ++i) dst[i] = static_cast<S>(gauss(rng) * sd);
  }
  return p;
}

namespace {
constexpr double kTembOmegaMin = 0.5;
constexpr double kTembOmegaMax = 30.0;
}  // namespace

template <typename S>
void ScoreModel<S>::cond_forward(Work& w, const std::vector<S>& params,
                                 const LayerEmbeddings& emb) const {
  const int K = shape_.levels;
  const int D = shape_.cond_dim;
  const int L = shape_.cond_layers;
  check(emb.dim == D, "ScoreModel: embedding dim mismatch");
  check(emb.layers == L, "ScoreModel: embedding layer count mismatch");
  const int Tv = emb.frames;
  w.cond_tv = Tv;
  const S* logits = params.data() + layout_.find("agg.logits").offset;

  w.cond_weights.assign(K, {});
  w.cond_agg.assign(K, {});
  w.cond_fit.assign(K, {});
  w.cond_f.assign(K, {});
  for (int k = 0; k < K; ++k) {
    // softmax in double for stability
    std::vector<double> wk(L);
    double mx = -1e300;
    for (int l = 0; l < L; ++l) mx = std::max(mx, static_cast<double>(logits[k * L + l]));
    double sum = 0.0;
    for (int l = 0; l < L; ++l) {
      wk[l] = std::exp(static_cast<double>(logits[k * L + l]) - mx);
      sum += wk[l];
    }
    auto& wrow = w.cond_weights[k];
    wrow.resize(L);
    for (int l = 0; l < L; ++l) wrow[l] = static_cast<S>(wk[l] / sum);

    auto& agg = w.cond_agg[k];
    agg.assign(static_cast<std::size_t>(D) * Tv, S(0));
    for (int l = 0; l < L; ++l) {
      const S wl = wrow[l];
      for (int t = 0; t < Tv; ++t) {
        const float* src = &emb.data[(static_cast<std::size_t>(l) * Tv + t) * D];
        for (int e = 0; e < D; ++e) agg[static_cast<std::size_t>(e) * Tv + t] += wl * S(src[e]);
      }
    }

    const int d = shape_.factors[k];
    const int Tk = w.padded / d;
    const int TL = Tk * d;
    const int up_len = Tv * (100 / kVideoRate);
    auto& fit = w.cond_fit[k];
    fit.assign(static_cast<std::size_t>(D) * TL, S(0));
    for (int e = 0; e < D; ++e) {
      const S* a = agg.data() + static_cast<std::size_t>(e) * Tv;
      S* dstrow = fit.data() + static_cast<std::size_t>(e) * TL;
      for (int tau = 0; tau < TL; ++tau) {
        const int ts = std::min(tau, up_len - 1);
        const double pos = ts / 4.0;
        if (pos >= Tv - 1) {
          dstrow[tau] = a[Tv - 1];
        } else {
          const int v0 = static_cast<int>(pos);
          const S frac = static_cast<S>(pos - v0);
          dstrow[tau] = (S(1) - frac) * a[v0] + frac * a[v0 + 1];
        }
      }
    }

    const int C = shape_.channels[k];
    const S* aw = params.data() + layout_.find("align" + std::to_string(k) + ".w").offset;
    const S* ab = params.data() + layout_.find("align" + std::to_string(k) + ".b").offset;
    auto& fk = w.cond_f[k];
    fk.assign(static_cast<std::size_t>(C) * Tk, S(0));
    for (int c = 0; c < C; ++c) {
      S* o = fk.data() + static_cast<std::size_t>(c) * Tk;
      for (int t = 0; t < Tk; ++t) o[t] = ab[c];
      for (int e = 0; e < D; ++e) {
        const S* x = fit.data() + static_cast<std::size_t>(e) * TL;
        for (int j = 0; j < d; ++j) {
          const S wv = aw[(static_cast<std::size_t>(c) * D + e) * d + j];
          for (int t = 0; t < Tk; ++t) o[t] += wv * x[t * d + j];
        }
      }
    }
  }
}

template <typename S>
void ScoreModel<S>::cond_backward(Work& w, const std::vector<S>& params,
                                  const std::vector<std::vector<S>>& dfk,
                                  const LayerEmbeddings& emb, std::vector<S>& grad) const {
  const int K = shape_.levels;
  const int D = shape_.cond_dim;
  const int L = shape_.cond_layers;
  const int Tv = w.cond_tv;
  const std::size_t logits_off = layout_.find("agg.logits").offset;

  for (int k = 0; k < K; ++k) {
    const int d = shape_.factors[k];
    const int Tk = w.padded / d;
    const int TL = Tk * d;
    const int C = shape_.channels[k];
    const int up_len = Tv * (100 / kVideoRate);
    const auto& fit = w.cond_fit[k];
    const S* aw = params.data() + layout_.find("align" + std::to_string(k) + ".w").offset;
    S* daw = grad.data() + layout_.find("align" + std::to_string(k) + ".w").offset;
    S* dab = grad.data() + layout_.find("align" + std::to_string(k) + ".b").offset;

    std::vector<S> dfit(static_cast<std::size_t>(D) * TL, S(0));
    for (int c = 0; c < C; ++c) {
      const S* df = dfk[k].data() + static_cast<std::size_t>(c) * Tk;
      S dbv = S(0);
      for (int t = 0; t < Tk; ++t) dbv += df[t];
      dab[c] += dbv;
      for (int e = 0; e < D; ++e) {
        const S* x = fit.data() + static_cast<std::size_t>(e) * TL;
        S* dx = dfit.data() + static_cast<std::size_t>(e) * TL;
        for (int j = 0; j < d; ++j) {
          const S wv = aw[(static_cast<std::size_t>(c) * D + e) * d + j];
          S dwv = S(0);
          for (int t = 0; t < Tk; ++t) {
            dwv += df[t] * x[t * d + j];
            dx[t * d + j] += wv * df[t];
          }
          daw[(static_cast<std::size_t>(c) * D + e) * d + j] += dwv;
        }
      }
    }

    std::vector<S> dagg(static_cast<std::size_t>(D) * Tv, S(0));
    for (int e = 0; e < D; ++e) {
      const S* dx = dfit.data() + static_cast<std::size_t>(e) * TL;
      S* da = dagg.data() + static_cast<std::size_t>(e) * Tv;
      for (int tau = 0; tau < TL; ++tau) {
        const int ts = std::min(tau, up_len - 1);
        const double pos = ts / 4.0;
        if (pos >= Tv - 1) {
          da[Tv - 1] += dx[tau];
        } else {
          const int v0 = static_cast<int>(pos);
          const S frac = static_cast<S>(pos - v0);
          da[v0] += (S(1) - frac) * dx[tau];
          da[v0 + 1] += frac * dx[tau];
        }
      }
    }

    // d(simplex weights) and the softmax Jacobian, in double
    std::vector<double> dws(L, 0.0);
    for (int l = 0; l < L; ++l) {
      double acc = 0.0;
      for (int t = 0; t < Tv; ++t) {
        const float* src = &emb.data[(static_cast<std::size_t>(l) * Tv + t) * D];
        for (int e = 0; e < D; ++e) {
          acc += static_cast<double>(dagg[static_cast<std::size_t>(e) * Tv + t]) * src[e];
        }
      }
      dws[l] = acc;
    }
    double inner = 0.0;
    for (int l = 0; l < L; ++l) inner += static_cast<double>(w.cond_weights[k][l]) * dws[l];
    for (int l = 0; l < L; ++l) {
      const double wl = static_cast<double>(w.cond_weights[k][l]);
      grad[logits_off + static_cast<std::size_t>(k) * L + l] +=
          static_cast<S>(wl * (dws[l] - inner));
    }
  }
}

template <typename S>
void ScoreModel<S>::forward(Work& w, const std::vector<S>& params, const ComplexSpectrogram& x_t,
                            const ComplexSpectrogram& y, const LayerEmbeddings* emb,
                            double sigma) const {
  check(x_t.same_shape(y), "ScoreModel: x_t and y shapes differ");
  check(x_t.compressed && y.compressed, "ScoreModel: inputs must be compressed spectrograms");
  check(sigma > 0.0, "ScoreModel: sigma must be positive");
  check(params.size() == layout_.total, "ScoreModel: bad parameter vector size");
  const int K = shape_.levels;
  const int F = x_t.num_bins;
  const int T = x_t.num_frames;
  check(F % shape_.factors.back() == 0, "ScoreModel: bins not divisible by the coarsest factor");

  w.frames = T;
  w.padded = shape_.pad_time(T);
  w.bins = F;
  w.sigma = sigma;
  w.has_cond = emb != nullptr;
  w.emb = emb;
  const int TP = w.padded;

  // sinusoidal features of log(sigma)
  w.temb.assign(shape_.temb_dim, S(0));
  const double u = std::log(sigma);
  const int half = shape_.temb_dim / 2;
  for (int j = 0; j < half; ++j) {
    const double om = kTembOmegaMin *
                      std::pow(kTembOmegaMax / kTembOmegaMin,
                               half > 1 ? static_cast<double>(j) / (half - 1) : 0.0);
    w.temb[2 * j] = static_cast<S>(std::sin(om * u));
    w.temb[2 * j + 1] = static_cast<S>(std::cos(om * u));
  }

  // input stack: Re/Im of x_t and y plus a frequency-position channel
  w.input.resize(5, F, TP);
  for (int f = 0; f < F; ++f) {
    S* r0 = w.input.row(0, f);
    S* r1 = w.input.row(1, f);
    S* r2 = w.input.row(2, f);
    S* r3 = w.input.row(3, f);
    S* r4 = w.input.row(4, f);
    const auto* xr = &x_t.data[static_cast<std::size_t>(f) * T];
    const auto* yr = &y.data[static_cast<std::size_t>(f) * T];
    const S fpos = static_cast<S>(static_cast<double>(f) / std::max(1, F - 1));
    for (int t = 0; t < T; ++t) {
      r0[t] = static_cast<S>(xr[t].real());
      r1[t] = static_cast<S>(xr[t].imag());
      r2[t] = static_cast<S>(yr[t].real());
      r3[t] = static_cast<S>(yr[t].imag());
    }
    for (int t = T; t < TP; ++t) r0[t] = r1[t] = r2[t] = r3[t] = S(0);
    for (int t = 0; t < TP; ++t) r4[t] = fpos;
  }

  if (w.has_cond) {
    cond_forward(w, params, *emb);
  } else {
    w.cond_f.assign(K, {});
    for (int k = 0; k < K; ++k) {
      w.cond_f[k].assign(static_cast<std::size_t>(shape_.channels[k]) * (TP / shape_.factors[k]),
                         S(0));
    }
  }

  w.enc_pre.resize(K);
  w.enc_out.resize(K);
  w.cat.resize(K);
  auto temb_bias = [&](int k, TensT<S>& pre) {
    const S* tw = params.data() + layout_.find("temb" + std::to_string(k) + ".w").offset;
    const S* tb = params.data() + layout_.find("temb" + std::to_string(k) + ".b").offset;
    for (int c = 0; c < pre.c; ++c) {
      S bias = tb[c];
      for (int j = 0; j < shape_.temb_dim; ++j) {
        bias += tw[static_cast<std::size_t>(c) * shape_.temb_dim + j] * w.temb[j];
      }
      for (int f = 0; f < pre.f; ++f) {
        S* o = pre.row(c, f);
        for (int t = 0; t < pre.t; ++t) o[t] += bias;
      }
    }
  };

  TensT<S> stem_tmp;
  for (int k = 0; k < K; ++k) {
    const int Fk = F / shape_.factors[k];
    const int Tk = TP / shape_.factors[k];
    const int C = shape_.channels[k];
    w.enc_pre[k].resize(C, Fk, Tk);
    if (k == 0) {
      stem_tmp.resize(C, F, TP);
      pw_fwd(w.input, stem_tmp, params.data() + layout_.find("enc0.pw.w").offset,
             params.data() + layout_.find("enc0.pw.b").offset, 1, 1, 1);
      dw_fwd(stem_tmp, w.enc_pre[0], params.data() + layout_.find("enc0.dw.w").offset,
             params.data() + layout_.find("enc0.dw.b").offset, 3, 3);
    } else {
      const int s = shape_.factors[k] / shape_.factors[k - 1];
      const int g = conv_groups(w.cat[k - 1].c, C);
      down_fwd(w.cat[k - 1], w.enc_pre[k],
               params.data() + layout_.find("enc" + std::to_string(k) + ".down.w").offset,
               params.data() + layout_.find("enc" + std::to_string(k) + ".down.b").offset, g, s);
    }
    temb_bias(k, w.enc_pre[k]);
    w.enc_out[k].resize(C, Fk, Tk);
    silu_fwd(w.enc_pre[k], w.enc_out[k]);

    // interleave h and the frequency-broadcast f_k: channel 2i = h_i, 2i+1 = f_i
    w.cat[k].resize(2 * C, Fk, Tk);
    const S* fk = w.cond_f[k].data();
    for (int c = 0; c < C; ++c) {
      const S* frow = fk + static_cast<std::size_t>(c) * Tk;
      for (int f = 0; f < Fk; ++f) {
        std::memcpy(w.cat[k].row(2 * c, f), w.enc_out[k].row(c, f), sizeof(S) * Tk);
        std::memcpy(w.cat[k].row(2 * c + 1, f), frow, sizeof(S) * Tk);
      }
    }
  }
  w.input_stem = std::move(stem_tmp);  // kept for the stem backward pass

  // middle block at the coarsest level
  const int cm = shape_.channels[K - 1];
  const int Fm = F / shape_.factors[K - 1];
  const int Tm = TP / shape_.factors[K - 1];
  w.mid_a_pre.resize(cm, Fm, Tm);
  pw_fwd(w.cat[K - 1], w.mid_a_pre, params.data() + layout_.find("mid.a.w").offset,
         params.data() + layout_.find("mid.a.b").offset, conv_groups(2 * cm, cm), 1, 1);
  w.mid_a.resize(cm, Fm, Tm);
  silu_fwd(w.mid_a_pre, w.mid_a);
  w.mid_dw_pre.resize(cm, Fm, Tm);
  dw_fwd(w.mid_a, w.mid_dw_pre, params.data() + layout_.find("mid.dw.w").offset,
         params.data() + layout_.find("mid.dw.b").offset, 3, 3);
  w.mid_dw.resize(cm, Fm, Tm);
  silu_fwd(w.mid_dw_pre, w.mid_dw);
  w.mid_b_pre.resize(cm, Fm, Tm);
  pw_fwd(w.mid_dw, w.mid_b_pre, params.data() + layout_.find("mid.b.w").offset,
         params.data() + layout_.find("mid.b.b").offset, 1, 1, 1);
  w.mid_b.resize(cm, Fm, Tm);
  silu_fwd(w.mid_b_pre, w.mid_b);

  // decoder with additive skips
  w.dec_pre.resize(std::max(0, K - 1));
  w.dec_out.resize(std::max(0, K - 1));
  const TensT<S>* up_src = &w.mid_b;
  for (int k = K - 2; k >= 0; --k) {
    const int Fk = F / shape_.factors[k];
    const int Tk = TP / shape_.factors[k];
    const int C = shape_.channels[k];
    const int s = shape_.factors[k + 1] / shape_.factors[k];
    const int g = conv_groups(shape_.channels[k + 1], C);
    w.dec_pre[k].resize(C, Fk, Tk);
    pw_fwd(*up_src, w.dec_pre[k],
           params.data() + layout_.find("dec" + std::to_string(k) + ".up.w").offset,
           params.data() + layout_.find("dec" + std::to_string(k) + ".up.b").offset, g, s, s);
    for (std::size_t i = 0; i < w.dec_pre[k].v.size(); ++i) {
      w.dec_pre[k].v[i] += w.enc_out[k].v[i];
    }
    w.dec_out[k].resize(C, Fk, Tk);
    silu_fwd(w.dec_pre[k], w.dec_out[k]);
    up_src = &w.dec_out[k];
  }

  // output head
  const TensT<S>& head_in = (K >= 2) ? w.dec_out[0] : w.mid_b;
  w.out_dw_pre.resize(shape_.channels[0], F, TP);
  dw_fwd(head_in, w.out_dw_pre, params.data() + layout_.find("out.dw.w").offset,
         params.data() + layout_.find("out.dw.b").offset, 3, 1);
  w.out_dw.resize(shape_.channels[0], F, TP);
  silu_fwd(w.out_dw_pre, w.out_dw);
  w.out.resize(2, F, TP);
  pw_fwd(w.out_dw, w.out, params.data() + layout_.find("out.pw.w").offset,
         params.data() + layout_.find("out.pw.b").offset, 1, 1, 1);
}

template <typename S>
ComplexSpectrogram ScoreModel<S>::score(const Work& w) const {
  ComplexSpectrogram s(w.bins, w.frames, true);
  const double inv_sigma = 1.0 / w.sigma;
  for (int f = 0; f < w.bins; ++f) {
    const S* re = w.out.row(0, f);
    const S* im = w.out.row(1, f);
    for (int t = 0; t < w.frames; ++t) {
      s.at(f, t) = {static_cast<double>(re[t]) * inv_sigma,
                    static_cast<double>(im[t]) * inv_sigma};
    }
  }
  return s;
}

template <typename S>
void ScoreModel<S>::backward(Work& w, const std::vector<S>& params,
                             const ComplexSpectrogram& dscore, std::vector<S>& grad) const {
  check(grad.size() == layout_.total, "ScoreModel: bad gradient vector size");
  check(dscore.num_bins == w.bins && dscore.num_frames == w.frames,
        "ScoreModel: dscore shape mismatch");
  const int K = shape_.levels;
  const int F = w.bins;
  const int TP = w.padded;
  auto pw = [&](const char* n) { return params.data() + layout_.find(n).offset; };
  auto gw = [&](const std::string& n) { return grad.data() + layout_.find(n).offset; };

  TensT<S> dout;
  dout.resize(2, F, TP);
  const double inv_sigma = 1.0 / w.sigma;
  for (int f = 0; f < F; ++f) {
    S* r0 = dout.row(0, f);
    S* r1 = dout.row(1, f);
    const auto* d = &dscore.data[static_cast<std::size_t>(f) * w.frames];
    for (int t = 0; t < w.frames; ++t) {
      r0[t] = static_cast<S>(d[t].real() * inv_sigma);
      r1[t] = static_cast<S>(d[t].imag() * inv_sigma);
    }
  }

  // output head
  TensT<S> d_out_dw;
  d_out_dw.resize(shape_.channels[0], F, TP);
  pw_bwd(w.out_dw, dout, d_out_dw, pw("out.pw.w"), gw("out.pw.w"), gw("out.pw.b"), 1, 1, 1);
  TensT<S> d_out_dw_pre;
  d_out_dw_pre.resize(shape_.channels[0], F, TP);
  silu_bwd(w.out_dw_pre, d_out_dw, d_out_dw_pre);
  const TensT<S>& head_in = (K >= 2) ? w.dec_out[0] : w.mid_b;
  TensT<S> d_head_in;
  d_head_in.resize(head_in.c, head_in.f, head_in.t);
  dw_bwd(head_in, d_out_dw_pre, d_head_in, pw("out.dw.w"), gw("out.dw.w"), gw("out.dw.b"), 3, 1);

  // decoder (level 0 upward); d_enc_out accumulates skip gradients
  std::vector<TensT<S>> d_enc_out(K);
  for (int k = 0; k < K; ++k) {
    d_enc_out[k].resize(w.enc_out[k].c, w.enc_out[k].f, w.enc_out[k].t);
  }
  TensT<S> d_up = std::move(d_head_in);  // gradient w.r.t. dec_out[k] / mid_b
  TensT<S> d_mid_b;
  for (int k = 0; k <= K - 2; ++k) {
    TensT<S> d_pre;
    d_pre.resize(w.dec_pre[k].c, w.dec_pre[k].f, w.dec_pre[k].t);
    silu_bwd(w.dec_pre[k], d_up, d_pre);
    for (std::size_t i = 0; i < d_pre.v.size(); ++i) d_enc_out[k].v[i] += d_pre.v[i];
    const TensT<S>& src = (k == K - 2) ? w.mid_b : w.dec_out[k + 1];
    TensT<S> d_src;
    d_src.resize(src.c, src.f, src.t);
    const int s = shape_.factors[k + 1] / shape_.factors[k];
    const int g = conv_groups(shape_.channels[k + 1], shape_.channels[k]);
    const std::string name = "dec" + std::to_string(k) + ".up";
    pw_bwd(src, d_pre, d_src, pw((name + ".w").c_str()), gw(name + ".w"), gw(name + ".b"), g, s,
           s);
    if (k == K - 2) {
      d_mid_b = std::move(d_src);
    } else {
      d_up = std::move(d_src);
    }
  }
  if (K == 1) d_mid_b = std::move(d_up);

  // middle block
  const int cm = shape_.channels[K - 1];
  TensT<S> d_mid_b_pre;
  d_mid_b_pre.resize(cm, w.mid_b.f, w.mid_b.t);
  silu_bwd(w.mid_b_pre, d_mid_b, d_mid_b_pre);
  TensT<S> d_mid_dw;
  d_mid_dw.resize(cm, w.mid_b.f, w.mid_b.t);
  pw_bwd(w.mid_dw, d_mid_b_pre, d_mid_dw, pw("mid.b.w"), gw("mid.b.w"), gw("mid.b.b"), 1, 1, 1);
  TensT<S> d_mid_dw_pre;
  d_mid_dw_pre.resize(cm, w.mid_b.f, w.mid_b.t);
  silu_bwd(w.mid_dw_pre, d_mid_dw, d_mid_dw_pre);
  TensT<S> d_mid_a;
  d_mid_a.resize(cm, w.mid_b.f, w.mid_b.t);
  dw_bwd(w.mid_a, d_mid_dw_pre, d_mid_a, pw("mid.dw.w"), gw("mid.dw.w"), gw("mid.dw.b"), 3, 3);
  TensT<S> d_mid_a_pre;
  d_mid_a_pre.resize(cm, w.mid_b.f, w.mid_b.t);
  silu_bwd(w.mid_a_pre, d_mid_a, d_mid_a_pre);
  std::vector<TensT<S>> d_cat(K);
  d_cat[K - 1].resize(w.cat[K - 1].c, w.cat[K - 1].f, w.cat[K - 1].t);
  pw_bwd(w.cat[K - 1], d_mid_a_pre, d_cat[K - 1], pw("mid.a.w"), gw("mid.a.w"), gw("mid.a.b"),
         conv_groups(2 * cm, cm), 1, 1);

  // encoder, deepest level first
  std::vector<std::vector<S>> dfk(K);
  const S* temb = w.temb.data();
  for (int k = K - 1; k >= 0; --k) {
    const int C = shape_.channels[k];
    const int Fk = w.cat[k].f;
    const int Tk = w.cat[k].t;
    // split the concat gradient: even channels -> h, odd -> f (summed over freq)
    dfk[k].assign(static_cast<std::size_t>(C) * Tk, S(0));
    for (int c = 0; c < C; ++c) {
      S* dfrow = dfk[k].data() + static_cast<std::size_t>(c) * Tk;
      for (int f = 0; f < Fk; ++f) {
        const S* dh = d_cat[k].row(2 * c, f);
        S* acc = d_enc_out[k].row(c, f);
        for (int t = 0; t < Tk; ++t) acc[t] += dh[t];
        const S* dfb = d_cat[k].row(2 * c + 1, f);
        for (int t = 0; t < Tk; ++t) dfrow[t] += dfb[t];
      }
    }

    TensT<S> d_pre;
    d_pre.resize(C, Fk, Tk);
    silu_bwd(w.enc_pre[k], d_enc_out[k], d_pre);

    // time-embedding projection: the bias gradient is the sum over (f, t)
    S* dtw = gw("temb" + std::to_string(k) + ".w");
    S* dtb = gw("temb" + std::to_string(k) + ".b");
    for (int c = 0; c < C; ++c) {
      S acc = S(0);
      for (int f = 0; f < Fk; ++f) {
        const S* d = d_pre.row(c, f);
        for (int t = 0; t < Tk; ++t) acc += d[t];
      }
      dtb[c] += acc;
      for (int j = 0; j < shape_.temb_dim; ++j) {
        dtw[static_cast<std::size_t>(c) * shape_.temb_dim + j] += acc * temb[j];
      }
    }

    if (k == 0) {
      TensT<S> d_stem;
      d_stem.resize(C, F, TP);
      dw_bwd(w.input_stem, d_pre, d_stem, pw("enc0.dw.w"), gw("enc0.dw.w"), gw("enc0.dw.b"), 3,
             3);
      TensT<S> d_input;
      d_input.resize(5, F, TP);
      pw_bwd(w.input, d_stem, d_input, pw("enc0.pw.w"), gw("enc0.pw.w"), gw("enc0.pw.b"), 1, 1,
             1);
    } else {
      d_cat[k - 1].resize(w.cat[k - 1].c, w.cat[k - 1].f, w.cat[k - 1].t);
      const int s = shape_.factors[k] / shape_.factors[k - 1];
      const int g = conv_groups(w.cat[k - 1].c, C);
      const std::string name = "enc" + std::to_string(k) + ".down";
      down_bwd(w.cat[k - 1], d_pre, d_cat[k - 1], pw((name + ".w").c_str()), gw(name + ".w"),
               gw(name + ".b"), g, s);
    }
  }

  if (w.has_cond) {
    cond_backward(w, params, dfk, *w.emb, grad);
  }
}

template <typename S>
std::vector<TimeSeries> ScoreModel<S>::cond_features(const Work& w) const {
  std::vector<TimeSeries> out;
  for (int k = 0; k < shape_.levels; ++k) {
    const int C = shape_.channels[k];
    const int Tk = w.padded / shape_.factors[k];
    TimeSeries ts(C, Tk);
    for (std::size_t i = 0; i < ts.v.size(); ++i) {
      ts.v[i] = static_cast<double>(w.cond_f[k][i]);
    }
    out.push_back(std::move(ts));
  }
  return out;
}

template class ScoreModel<float>;
template class ScoreModel<double>;

// ---------------------------------------------------------------------------
// checkpoint io
// ---------------------------------------------------------------------------

namespace {
constexpr char kCkptMagic[4] = {'A', 'V', 'G', 'C'};
constexpr std::uint32_t kCkptVersion = 1;

void wr_u32(std::ofstream& f, std::uint32_t x) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((x >> (8 * i)) & 0xff);
  f.write(b, 4);
}
void wr_u64(std::ofstream& f, std::uint64_t x) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((x >> (8 * i)) & 0xff);
  f.write(b, 8);
}
void wr_f64(std::ofstream& f, double x) {
  std::uint64_t u;
  std::memcpy(&u, &x, 8);
  wr_u64(f, u);
}
std::uint32_t rd_u32(std::ifstream& f, const std::string& p) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  if (!f) throw IoError("load_checkpoint: truncated file " + p);
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}
std::uint64_t rd_u64(std::ifstream& f, const std::string& p) {
  const std::uint64_t lo = rd_u32(f, p);
  const std::uint64_t hi = rd_u32(f, p);
  return lo | (hi << 32);
}
double rd_f64(std::ifstream& f, const std::string& p) {
  const std::uint64_t u = rd_u64(f, p);
  double x;
  std::memcpy(&x, &u, 8);
  return x;
}
void wr_f32s(std::ofstream& f, const std::vector<float>& v) {
  f.write(reinterpret_cast<const char*>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(float)));
}
void rd_f32s(std::ifstream& f, std::vector<float>& v, const std::string& p) {
  f.read(reinterpret_cast<char*>(v.data()),
         static_cast<std::streamsize>(v.size() * sizeof(float)));
  if (f.gcount() != static_cast<std::streamsize>(v.size() * sizeof(float))) {
    throw IoError("load_checkpoint: truncated tensor data in " + p);
  }
}
}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  ckpt.shape.validate();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("save_checkpoint: cannot open " + path);
  f.write(kCkptMagic, 4);
  wr_u32(f, kCkptVersion);
  wr_u32(f, static_cast<std::uint32_t>(ckpt.shape.levels));
  for (int c : ckpt.shape.channels) wr_u32(f, static_cast<std::uint32_t>(c));
  for (int d : ckpt.shape.factors) wr_u32(f, static_cast<std::uint32_t>(d));
  wr_u32(f, static_cast<std::uint32_t>(ckpt.shape.temb_dim));
  wr_u32(f, static_cast<std::uint32_t>(ckpt.shape.cond_dim));
  wr_u32(f, static_cast<std::uint32_t>(ckpt.shape.cond_layers));
  wr_f64(f, ckpt.sde.gamma);
  wr_f64(f, ckpt.sde.sigma_min);
  wr_f64(f, ckpt.sde.sigma_max);
  wr_f64(f, ckpt.sde.t_max);
  wr_f64(f, ckpt.sde.t_eps);
  wr_u64(f, ckpt.params.size());
  wr_f32s(f, ckpt.params);
  f.put(ckpt.moments ? 1 : 0);
  if (ckpt.moments) {
    check(ckpt.moments->m.size() == ckpt.params.size() &&
              ckpt.moments->v.size() == ckpt.params.size(),
          "save_checkpoint: moment size mismatch");
    wr_u64(f, ckpt.moments->step);
    wr_f32s(f, ckpt.moments->m);
    wr_f32s(f, ckpt.moments->v);
  }
  if (!f) throw IoError("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("load_checkpoint: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kCkptMagic, 4) != 0) {
    throw IoError("load_checkpoint: bad magic in " + path);
  }
  if (rd_u32(f, path) != kCkptVersion) {
    throw IoError("load_checkpoint: unsupported version in " + path);
  }
  Checkpoint c;
  const std::uint32_t K = rd_u32(f, path);
  if (K == 0 || K > 16) throw IoError("load_checkpoint: implausible level count in " + path);
  c.shape.levels = static_cast<int>(K);
  c.shape.channels.resize(K);
  c.shape.factors.resize(K);
  for (auto& x : c.shape.channels) x = static_cast<int>(rd_u32(f, path));
  for (auto& x : c.shape.factors) x = static_cast<int>(rd_u32(f, path));
  c.shape.temb_dim = static_cast<int>(rd_u32(f, path));
  c.shape.cond_dim = static_cast<int>(rd_u32(f, path));
  c.shape.cond_layers = static_cast<int>(rd_u32(f, path));
  c.sde.gamma = rd_f64(f, path);
  c.sde.sigma_min = rd_f64(f, path);
  c.sde.sigma_max = rd_f64(f, path);
  c.sde.t_max = rd_f64(f, path);
  c.sde.t_eps = rd_f64(f, path);
  const std::uint64_t n = rd_u64(f, path);
  const std::size_t expect = make_param_layout(c.shape).total;
  if (n != expect) throw IoError("load_checkpoint: parameter count mismatch in " + path);
  c.params.resize(n);
  rd_f32s(f, c.params, path);
  char has_m = 0;
  f.get(has_m);
  if (!f) throw IoError("load_checkpoint: truncated moments flag in " + path);
  if (has_m) {
    AdamMoments mo;
    mo.step = rd_u64(f, path);
    mo.m.resize(n);
    mo.v.resize(n);
    rd_f32s(f, mo.m, path);
    rd_f32s(f, mo.v, path);
    c.moments = std::move(mo);
  }
  return c;
}

}  // namespace avgen
