// Copyright 2026 The avgen authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "avgen/conditioner.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "avgen/common.hpp"

namespace avgen {

std::vector<double> AggregatorWeights::weights_row(int k) const {
  check(k >= 0 && k < levels, "aggregator level out of range");
  std::vector<double> w(layers);
  double mx = -1e300;
  for (int l = 0; l < layers; ++l) mx = std::max(mx, logits[static_cast<size_t>(k) * layers + l]);
  double sum = 0.0;
  for (int l = 0; l < layers; ++l) {
    w[l] = std::exp(logits[static_cast<size_t>(k) * layers + l] - mx);
    sum += w[l];
  }
  for (auto& x : w) x /= sum;
  return w;
}

TimeSeries aggregate(const LayerEmbeddings& emb, const AggregatorWeights& w, int level) {
  check(emb.layers == w.layers, "aggregate: layer count mismatch");
  check(emb.frames >= 1 && emb.dim >= 1, "aggregate: empty embeddings");
  const std::vector<double> wk = w.weights_row(level);
  TimeSeries out(emb.dim, emb.frames);
  for (int l = 0; l < emb.layers; ++l) {
    const double wl = wk[l];
    for (int t = 0; t < emb.frames; ++t) {
      for (int e = 0; e < emb.dim; ++e) out.at(e, t) += wl * emb.at(l, t, e);
    }
  }
  return out;
}

TimeSeries temp_align_up(const TimeSeries& x, int factor) {
  check(factor >= 1, "temp_align_up: factor must be >= 1");
  check(x.len >= 1 && x.dim >= 1, "temp_align_up: empty input");
  if (factor == 1) return x;
  TimeSeries out(x.dim, x.len * factor);
  for (int d = 0; d < x.dim; ++d) {
    for (int t = 0; t < out.len; ++t) {
      const double pos = static_cast<double>(t) / factor;
      if (pos >= x.len - 1) {
        out.at(d, t) = x.at(d, x.len - 1);
      } else {
        const int v0 = static_cast<int>(pos);
        const double frac = pos - v0;
        out.at(d, t) = (1.0 - frac) * x.at(d, v0) + frac * x.at(d, v0 + 1);
      }
    }
  }
  return out;
}

TimeSeries fit_length(const TimeSeries& x, int target_len) {
  check(target_len >= 1, "fit_length: target must be >= 1");
  check(x.len >= 1, "fit_length: empty input");
  if (x.len == target_len) return x;
  TimeSeries out(x.dim, target_len);
  for (int d = 0; d < x.dim; ++d) {
    for (int t = 0; t < target_len; ++t) out.at(d, t) = x.at(d, std::min(t, x.len - 1));
  }
  return out;
}

TimeSeries temp_align_down(const TimeSeries& x, const DownAligner& a) {
  check(a.factor >= 1, "temp_align_down: factor must be >= 1");
  check(x.dim == a.in_ch, "temp_align_down: channel mismatch");
  check(x.len >= a.factor, "temp_align_down: series shorter than the stride");
  const int out_len = x.len / a.factor;
  TimeSeries out(a.out_ch, out_len);
  for (int c = 0; c < a.out_ch; ++c) {
    for (int t = 0; t < out_len; ++t) {
      double acc = a.bias[c];
      for (int e = 0; e < a.in_ch; ++e) {
        for (int j = 0; j < a.factor; ++j) {
          acc += a.w(c, e, j) * x.at(e, t * a.factor + j);
        }
      }
      out.at(c, t) = acc;
    }
  }
  return out;
}

ConditioningSet align_full(const LayerEmbeddings& emb, const AggregatorWeights& w,
                           const std::vector<DownAligner>& aligners,
                           const std::vector<CondLevelShape>& shape) {
  check(aligners.size() == shape.size(), "align_full: aligner/shape count mismatch");
  check(static_cast<int>(shape.size()) == w.levels, "align_full: level count mismatch");
  ConditioningSet set;
  set.features.reserve(shape.size());
  const int up_factor = 100 / emb.frame_rate;
  for (size_t k = 0; k < shape.size(); ++k) {
    check(aligners[k].factor == shape[k].factor, "align_full: factor mismatch at level");
    check(aligners[k].out_ch == shape[k].channels, "align_full: channel mismatch at level");
    TimeSeries agg = aggregate(emb, w, static_cast<int>(k));
    TimeSeries up = temp_align_up(agg, up_factor);
    TimeSeries fitted = fit_length(up, shape[k].frames * shape[k].factor);
    set.features.push_back(temp_align_down(fitted, aligners[k]));
  }
  return set;
}

LayerEmbeddings mock_embeddings(const SegmentLabels& labels, int alphabet_size, int layers,
                                int dim, std::uint64_t codebook_seed, double noise_level,
                                std::uint64_t noise_seed) {
  check(layers >= 1 && dim >= 1, "mock_embeddings: bad dimensions");
  check(!labels.symbols.empty(), "mock_embeddings: empty label track");
  check(labels.frame_rate == kVideoRate, "mock_embeddings: labels must be at 25 Hz");
  const int alphabet = alphabet_size;
  check(alphabet >= 1 && alphabet <= dim, "mock_embeddings: alphabet larger than embedding dim");
  for (int s : labels.symbols) {
    check(s >= 0 && s < alphabet, "mock_embeddings: unknown symbol");
  }

  // Per-layer codebooks: Gaussian draws orthonormalized over symbols, then
  // scaled to norm sqrt(D) so each dimension has roughly unit variance.
  std::mt19937_64 rng(codebook_seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<std::vector<double>> code(static_cast<size_t>(layers) * alphabet,
                                        std::vector<double>(dim));
  for (int l = 0; l < layers; ++l) {
    for (int s = 0; s < alphabet; ++s) {
      auto& v = code[static_cast<size_t>(l) * alphabet + s];
      for (auto& x : v) x = gauss(rng);
      for (int prev = 0; prev < s; ++prev) {
        const auto& u = code[static_cast<size_t>(l) * alphabet + prev];
        double dot = 0.0;
        for (int e = 0; e < dim; ++e) dot += v[e] * u[e];
        for (int e = 0; e < dim; ++e) v[e] -= dot * u[e];
      }
      double norm = 0.0;
      for (double x : v) norm += x * x;
      norm = std::sqrt(norm);
      check(norm > 1e-9, "mock_embeddings: degenerate codebook draw");
      for (auto& x : v) x /= norm;
    }
  }
  const double scale = std::sqrt(static_cast<double>(dim));

  LayerEmbeddings emb(layers, static_cast<int>(labels.symbols.size()), dim);
  std::mt19937_64 nrng(noise_seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int l = 0; l < layers; ++l) {
    for (int t = 0; t < emb.frames; ++t) {
      const auto& v = code[static_cast<size_t>(l) * alphabet + labels.symbols[t]];
      for (int e = 0; e < dim; ++e) {
        double x = scale * v[e];
        if (noise_level > 0.0) x += noise_level * noise(nrng);
        emb.at(l, t, e) = static_cast<float>(x);
      }
    }
  }
  return emb;
}

namespace {
constexpr char kAveMagic[4] = {'A', 'V', 'E', 'M'};
constexpr std::uint32_t kAveVersion = 1;
constexpr std::uint32_t kAveMaxDim = 1u << 24;

void write_u32(std::ofstream& f, std::uint32_t x) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((x >> (8 * i)) & 0xff);
  f.write(b, 4);
}
std::uint32_t read_u32(std::ifstream& f, const std::string& path) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  if (!f) throw IoError("read_embeddings: truncated header in " + path);
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}
}  // namespace

void write_embeddings(const std::string& path, const LayerEmbeddings& emb) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("write_embeddings: cannot open " + path);
  f.write(kAveMagic, 4);
  write_u32(f, kAveVersion);
  write_u32(f, static_cast<std::uint32_t>(emb.layers));
  write_u32(f, static_cast<std::uint32_t>(emb.frames));
  write_u32(f, static_cast<std::uint32_t>(emb.dim));
  f.write(reinterpret_cast<const char*>(emb.data.data()),
          static_cast<std::streamsize>(emb.data.size() * sizeof(float)));
  if (!f) throw IoError("write_embeddings: write failed for " + path);
}

LayerEmbeddings read_embeddings(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_embeddings: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kAveMagic, 4) != 0) {
    throw IoError("read_embeddings: bad magic in " + path);
  }
  const std::uint32_t version = read_u32(f, path);
  if (version != kAveVersion) throw IoError("read_embeddings: unsupported version in " + path);
  const std::uint32_t L = read_u32(f, path);
  const std::uint32_t T = read_u32(f, path);
  const std::uint32_t D = read_u32(f, path);
  if (L == 0 || T == 0 || D == 0 || L > kAveMaxDim || T > kAveMaxDim || D > kAveMaxDim ||
      static_cast<std::uint64_t>(L) * T * D > (1ull << 31)) {
    throw IoError("read_embeddings: implausible dimensions in " + path);
  }
  LayerEmbeddings emb(static_cast<int>(L), static_cast<int>(T), static_cast<int>(D));
  f.read(reinterpret_cast<char*>(emb.data.data()),
         static_cast<std::streamsize>(emb.data.size() * sizeof(float)));
  if (f.gcount() != static_cast<std::streamsize>(emb.data.size() * sizeof(float))) {
    throw IoError("read_embeddings: file shorter than header claims: " + path);
  }
  return emb;
}

}  // namespace avgen
