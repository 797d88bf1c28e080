#include "skna/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#if defined(__SSE__)
#include <xmmintrin.h>
#endif

#include "skna/container.hpp"
#include "skna/error.hpp"
#include "skna/seed.hpp"

namespace skna::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using MapConstMat = Eigen::Map<const RowMat<T>>;
template <typename T>
using MapVec = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using MapConstVec = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

constexpr Magic kModelMagic = {'S', 'K', 'N', 'A', 'M', 'O', 'D', 'L'};

[[noreturn]] void shape_error(const std::string& what) { throw Error(ErrorCode::Shape, what); }

// 3x3 same-padded patches: row c*9 + ky*3 + kx, column y*W + x.
// For a kernel column offset dx = kx - 1, destination columns
// [max(0, -dx), W - max(0, dx)) read from source column x + dx; the rest is padding.
template <typename T>
void im2col(const T* in, int channels, int height, int width, RowMat<T>& cols) {
  const int hw = height * width;
  cols.resize(channels * 9, hw);
  T* out = cols.data();
  for (int c = 0; c < channels; ++c) {
    const T* plane = in + static_cast<std::ptrdiff_t>(c) * hw;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const int dx = kx - 1;
        const int x0 = std::max(0, -dx), x1 = width - std::max(0, dx);
        T* row = out + static_cast<std::ptrdiff_t>(c * 9 + ky * 3 + kx) * hw;
        for (int y = 0; y < height; ++y) {
          const int sy = y + ky - 1;
          T* dst = row + static_cast<std::ptrdiff_t>(y) * width;
          if (sy < 0 || sy >= height) {
            std::fill(dst, dst + width, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::ptrdiff_t>(sy) * width + dx;
          if (x0 > 0) dst[0] = T(0);
          if (x1 < width) dst[width - 1] = T(0);
          std::copy(src + x0, src + x1, dst + x0);
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const RowMat<T>& cols, int channels, int height, int width, T* out) {
  const int hw = height * width;
  const T* in = cols.data();
  for (int c = 0; c < channels; ++c) {
    T* plane = out + static_cast<std::ptrdiff_t>(c) * hw;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const int dx = kx - 1;
        const int x0 = std::max(0, -dx), x1 = width - std::max(0, dx);
        const T* row = in + static_cast<std::ptrdiff_t>(c * 9 + ky * 3 + kx) * hw;
        for (int y = 0; y < height; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= height) continue;
          const T* src = row + static_cast<std::ptrdiff_t>(y) * width;
          T* dst = plane + static_cast<std::ptrdiff_t>(sy) * width + dx;
          for (int x = x0; x < x1; ++x) dst[x] += src[x];
        }
      }
    }
  }
}

// Flush-to-zero / denormals-are-zero for the duration of a call. Tiny
// gradients late in training otherwise run through the slow denormal path.
class DenormalGuard {
 public:
#if defined(__SSE__)
  DenormalGuard() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | 0x8040u); }
  ~DenormalGuard() { _mm_setcsr(saved_); }

 private:
  unsigned saved_;
#endif
};

// Dropout masks come from a SplitMix64 counter stream: one draw per element,
// cheap enough that mask generation does not dominate a training step.
struct MaskStream {
  std::uint64_t counter;
  double uniform() {
    counter += 0x9E3779B97F4A7C15ull;
    return static_cast<double>(mix64(counter) >> 11) * 0x1.0p-53;
  }
};

}  // namespace

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::ReLU: return "relu";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::Dropout: return "dropout";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Dense: return "dense";
  }
  return "?";
}

ArchSpec ArchSpec::production(double dropout, SampleShape input) {
  ArchSpec arch;
  arch.input = input;
  for (int ch : {8, 16, 32}) {
    arch.layers.push_back(LayerSpec::conv(ch));
    arch.layers.push_back(LayerSpec::relu());
    arch.layers.push_back(LayerSpec::max_pool());
    arch.layers.push_back(LayerSpec::dropout(dropout));
  }
  arch.layers.push_back(LayerSpec::flatten());
  arch.layers.push_back(LayerSpec::dense(64));
  arch.layers.push_back(LayerSpec::relu());
  arch.layers.push_back(LayerSpec::dropout(dropout));
  arch.layers.push_back(LayerSpec::dense(3));
  return arch;
}

std::vector<SampleShape> ArchSpec::layer_shapes() const {
  if (input[0] < 1 || input[1] < 1 || input[2] < 1) shape_error("input shape must be positive");
  std::vector<SampleShape> shapes;
  SampleShape s = input;
  bool flat = false;
  for (const auto& layer : layers) {
    switch (layer.kind) {
      case LayerKind::Conv2d:
        if (flat) shape_error("conv2d after flatten");
        if (layer.units < 1) shape_error("conv2d needs output channels");
        s = {layer.units, s[1], s[2]};
        break;
      case LayerKind::ReLU:
        break;
      case LayerKind::MaxPool:
        if (flat || s[1] < 2 || s[2] < 2) shape_error("max-pool needs a spatial input of at least 2x2");
        s = {s[0], s[1] / 2, s[2] / 2};
        break;
      case LayerKind::Dropout:
        if (!(layer.rate >= 0.0 && layer.rate < 1.0)) shape_error("dropout rate must lie in [0, 1)");
        break;
      case LayerKind::Flatten:
        s = {s[0] * s[1] * s[2], 1, 1};
        flat = true;
        break;
      case LayerKind::Dense:
        if (!flat) shape_error("dense layer needs a flattened input");
        if (layer.units < 1) shape_error("dense layer needs a width");
        s = {layer.units, 1, 1};
        break;
    }
    shapes.push_back(s);
  }
  return shapes;
}

int ArchSpec::output_width() const {
  const auto shapes = layer_shapes();
  if (shapes.empty() || layers.back().kind != LayerKind::Dense) {
    shape_error("architecture must end with a dense layer");
  }
  return shapes.back()[0];
}

nlohmann::json ArchSpec::to_json() const {
  nlohmann::json j;
  j["input"] = input;
  auto& ls = j["layers"] = nlohmann::json::array();
  for (const auto& l : layers) {
    nlohmann::json e{{"kind", to_string(l.kind)}};
    if (l.kind == LayerKind::Conv2d || l.kind == LayerKind::Dense) e["units"] = l.units;
    if (l.kind == LayerKind::Dropout) e["rate"] = l.rate;
    ls.push_back(e);
  }
  return j;
}

ArchSpec ArchSpec::from_json(const nlohmann::json& j) {
  ArchSpec arch;
  try {
    arch.input = j.at("input").get<SampleShape>();
    for (const auto& e : j.at("layers")) {
      const auto kind = e.at("kind").get<std::string>();
      if (kind == "conv2d") arch.layers.push_back(LayerSpec::conv(e.at("units").get<int>()));
      else if (kind == "relu") arch.layers.push_back(LayerSpec::relu());
      else if (kind == "maxpool") arch.layers.push_back(LayerSpec::max_pool());
      else if (kind == "dropout") arch.layers.push_back(LayerSpec::dropout(e.at("rate").get<double>()));
      else if (kind == "flatten") arch.layers.push_back(LayerSpec::flatten());
      else if (kind == "dense") arch.layers.push_back(LayerSpec::dense(e.at("units").get<int>()));
      else shape_error("unknown layer kind '" + kind + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    shape_error(std::string("malformed architecture: ") + e.what());
  }
  arch.output_width();
  return arch;
}

template <typename T>
std::size_t ModelParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.size();
  return n;
}

template <typename T>
ModelParams<T> init_model(const ArchSpec& arch, std::uint64_t seed) {
  const auto shapes = arch.layer_shapes();
  ModelParams<T> params;
  params.arch = arch;
  std::mt19937_64 rng(seed);
  SampleShape prev = arch.input;
  for (std::size_t l = 0; l < arch.layers.size(); ++l) {
    const auto& layer = arch.layers[l];
    if (layer.has_params()) {
      const bool conv = layer.kind == LayerKind::Conv2d;
      const int fan_in = conv ? prev[0] * 9 : prev[0];
      Tensor<T> w(conv ? std::array<int, 4>{layer.units, prev[0], 3, 3}
                       : std::array<int, 4>{layer.units, prev[0], 1, 1});
      std::normal_distribution<double> gauss(0.0, std::sqrt(2.0 / fan_in));
      for (auto& v : w.data) v = static_cast<T>(gauss(rng));
      params.tensors.push_back(std::move(w));
      params.tensors.emplace_back(std::array<int, 4>{layer.units, 1, 1, 1});
    }
    prev = shapes[l];
  }
  return params;
}

template <typename To, typename From>
ModelParams<To> cast_params(const ModelParams<From>& params) {
  ModelParams<To> out;
  out.arch = params.arch;
  for (const auto& t : params.tensors) {
    Tensor<To> c(t.shape);
    std::transform(t.data.begin(), t.data.end(), c.data.begin(), [](From v) { return static_cast<To>(v); });
    out.tensors.push_back(std::move(c));
  }
  return out;
}

template <typename T>
ForwardResult<T> forward(const ModelParams<T>& params, const Tensor<T>& batch, Mode mode,
                         std::uint64_t dropout_seed) {
  const DenormalGuard ftz;
  const auto& arch = params.arch;
  if (batch.shape[1] != arch.input[0] || batch.shape[2] != arch.input[1] ||
      batch.shape[3] != arch.input[2] || batch.shape[0] < 1) {
    shape_error("batch shape does not match the architecture input");
  }
  const int n = batch.shape[0];
  ForwardResult<T> result;
  auto& cache = result.cache;
  cache.mode = mode;
  cache.dropout_mask.resize(arch.layers.size());
  cache.pool_argmax.resize(arch.layers.size());
  MaskStream masks{dropout_seed};

  Tensor<T> cur = batch;
  std::size_t p = 0;
  RowMat<T> cols;
  const std::size_t layer_count = arch.layers.size();
  for (std::size_t l = 0; l < layer_count; ++l) {
    const auto& layer = arch.layers[l];
    Tensor<T> in = std::move(cur);
    const int c = in.shape[1], h = in.shape[2], w = in.shape[3];
    // Backward reads data only for conv/dense inputs and ReLU outputs.
    const bool keep = layer.has_params() || (l > 0 && arch.layers[l - 1].kind == LayerKind::ReLU) ||
                      (layer.kind == LayerKind::ReLU && l + 1 == layer_count);
    // Element-wise layers reuse the input buffer unless it has to be kept.
    auto take_input = [&] {
      if (keep) return Tensor<T>(in);
      Tensor<T> out = std::move(in);
      in = Tensor<T>();
      in.shape = out.shape;
      return out;
    };
    switch (layer.kind) {
      case LayerKind::Conv2d: {
        const auto& wt = params.tensors[p];
        const auto& bias = params.tensors[p + 1];
        p += 2;
        const int out_c = layer.units;
        cur = Tensor<T>({n, out_c, h, w});
        MapConstMat<T> wm(wt.data.data(), out_c, c * 9);
        MapConstVec<T> bv(bias.data.data(), out_c);
        for (int b = 0; b < n; ++b) {
          im2col(in.sample(b), c, h, w, cols);
          MapMat<T> out(cur.sample(b), out_c, h * w);
          out.noalias() = wm * cols;
          out.colwise() += bv;
        }
        break;
      }
      case LayerKind::ReLU:
        cur = take_input();
        for (auto& v : cur.data) v = v > T(0) ? v : T(0);
        break;
      case LayerKind::MaxPool: {
        const int ho = h / 2, wo = w / 2;
        cur = Tensor<T>({n, c, ho, wo});
        auto& arg = cache.pool_argmax[l];
        arg.resize(cur.size());
        std::size_t o = 0;
        for (int b = 0; b < n; ++b) {
          const T* src = in.sample(b);
          for (int ch = 0; ch < c; ++ch) {
            const std::size_t plane = static_cast<std::size_t>(ch) * h * w;
            for (int y = 0; y < ho; ++y) {
              const std::size_t r0 = plane + static_cast<std::size_t>(2 * y) * w;
              const std::size_t r1 = r0 + static_cast<std::size_t>(w);
              for (int x = 0; x < wo; ++x, ++o) {
                // Scan order (0,0) (0,1) (1,0) (1,1); strict > keeps the first maximum.
                std::size_t best = r0 + 2 * x;
                if (src[r0 + 2 * x + 1] > src[best]) best = r0 + 2 * x + 1;
                if (src[r1 + 2 * x] > src[best]) best = r1 + 2 * x;
                if (src[r1 + 2 * x + 1] > src[best]) best = r1 + 2 * x + 1;
                cur.data[o] = src[best];
                arg[o] = static_cast<std::uint32_t>(best);
              }
            }
          }
        }
        break;
      }
      case LayerKind::Dropout:
        cur = take_input();
        if (mode == Mode::Train && layer.rate > 0.0) {
          auto& mask = cache.dropout_mask[l];
          mask.resize(cur.size());
          const T keep_scale = static_cast<T>(1.0 / (1.0 - layer.rate));
          for (std::size_t i = 0; i < mask.size(); ++i) {
            mask[i] = masks.uniform() < layer.rate ? T(0) : keep_scale;
            cur.data[i] *= mask[i];
          }
        }
        break;
      case LayerKind::Flatten:
        cur = take_input();
        cur.shape = {n, c * h * w, 1, 1};
        break;
      case LayerKind::Dense: {
        const auto& wt = params.tensors[p];
        const auto& bias = params.tensors[p + 1];
        p += 2;
        const int f = c;
        cur = Tensor<T>({n, layer.units, 1, 1});
        MapConstMat<T> x(in.data.data(), n, f);
        MapConstMat<T> wm(wt.data.data(), layer.units, f);
        MapMat<T> out(cur.data.data(), n, layer.units);
        out.noalias() = x * wm.transpose();
        out.rowwise() += MapConstVec<T>(bias.data.data(), layer.units).transpose();
        break;
      }
    }
    if (!keep && !in.data.empty()) {
      in.data.clear();
      in.data.shrink_to_fit();
    }
    cache.inputs.push_back(std::move(in));
  }
  result.logits = std::move(cur);
  return result;
}

template <typename T>
LossResult<T> weighted_ce(const Tensor<T>& logits, std::span<const int> labels,
                          std::span<const double> class_weights) {
  const int n = logits.shape[0];
  const int k = logits.shape[1];
  if (static_cast<int>(labels.size()) != n) shape_error("one label per logit row required");
  if (static_cast<int>(class_weights.size()) != k) shape_error("one weight per class required");

  LossResult<T> out;
  out.grad = Tensor<T>(logits.shape);
  double total_weight = 0.0;
  double loss = 0.0;
  std::vector<double> row(static_cast<std::size_t>(k));
  for (int i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= k) throw Error(ErrorCode::InvalidConfig, "label out of range");
    for (int j = 0; j < k; ++j) row[static_cast<std::size_t>(j)] = logits.data[static_cast<std::size_t>(i * k + j)];
    const auto prob = softmax(row);
    const double wy = class_weights[static_cast<std::size_t>(y)];
    const double m = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double z : row) sum += std::exp(z - m);
    loss += wy * -(row[static_cast<std::size_t>(y)] - m - std::log(sum));
    total_weight += wy;
    for (int j = 0; j < k; ++j) {
      out.grad.data[static_cast<std::size_t>(i * k + j)] =
          static_cast<T>(wy * (prob[static_cast<std::size_t>(j)] - (j == y ? 1.0 : 0.0)));
    }
  }
  if (!(total_weight > 0.0)) throw Error(ErrorCode::InvalidConfig, "batch has zero total weight");
  for (auto& g : out.grad.data) g = static_cast<T>(g / total_weight);
  out.loss = static_cast<T>(loss / total_weight);
  return out;
}

template <typename T>
Gradients<T> backward(const ModelParams<T>& params, const ForwardCache<T>& cache,
                      const Tensor<T>& grad_logits) {
  const DenormalGuard ftz;
  const auto& arch = params.arch;
  if (cache.inputs.size() != arch.layers.size()) shape_error("forward cache does not match the model");
  Gradients<T> grads;
  for (const auto& t : params.tensors) grads.emplace_back(t.shape);

  Tensor<T> g = grad_logits;
  std::size_t p = params.tensors.size();
  RowMat<T> cols, dcols;
  for (std::size_t li = arch.layers.size(); li-- > 0;) {
    const auto& layer = arch.layers[li];
    const auto& in = cache.inputs[li];
    const int n = in.shape[0], c = in.shape[1], h = in.shape[2], w = in.shape[3];
    const bool need_input_grad = li > 0;
    switch (layer.kind) {
      case LayerKind::Dense: {
        p -= 2;
        const auto& wt = params.tensors[p];
        const int f = c;
        MapConstMat<T> x(in.data.data(), n, f);
        MapConstMat<T> dy(g.data.data(), n, layer.units);
        MapMat<T>(grads[p].data.data(), layer.units, f).noalias() = dy.transpose() * x;
        MapVec<T>(grads[p + 1].data.data(), layer.units) = dy.colwise().sum().transpose();
        if (need_input_grad) {
          Tensor<T> dx(in.shape);
          MapMat<T>(dx.data.data(), n, f).noalias() = dy * MapConstMat<T>(wt.data.data(), layer.units, f);
          g = std::move(dx);
        }
        break;
      }
      case LayerKind::Flatten:
        g.shape = in.shape;
        break;
      case LayerKind::Dropout:
        if (!cache.dropout_mask[li].empty()) {
          const auto& mask = cache.dropout_mask[li];
          for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] *= mask[i];
        }
        break;
      case LayerKind::MaxPool: {
        Tensor<T> dx(in.shape);
        const auto& arg = cache.pool_argmax[li];
        const std::size_t per_out = g.sample_size();
        for (int b = 0; b < n; ++b) {
          T* dst = dx.sample(b);
          for (std::size_t o = 0; o < per_out; ++o) {
            const std::size_t k = static_cast<std::size_t>(b) * per_out + o;
            dst[arg[k]] += g.data[k];
          }
        }
        g = std::move(dx);
        break;
      }
      case LayerKind::ReLU: {
        // ReLU output is positive exactly where its input is.
        const auto& ref = li + 1 < arch.layers.size() ? cache.inputs[li + 1] : in;
        if (ref.data.size() != g.data.size()) shape_error("forward cache lacks ReLU activations");
        for (std::size_t i = 0; i < g.data.size(); ++i) {
          if (!(ref.data[i] > T(0))) g.data[i] = T(0);
        }
        break;
      }
      case LayerKind::Conv2d: {
        p -= 2;
        const auto& wt = params.tensors[p];
        const int out_c = layer.units;
        MapConstMat<T> wm(wt.data.data(), out_c, c * 9);
        MapMat<T> dw(grads[p].data.data(), out_c, c * 9);
        MapVec<T> db(grads[p + 1].data.data(), out_c);
        Tensor<T> dx;
        if (need_input_grad) dx = Tensor<T>(in.shape);
        for (int b = 0; b < n; ++b) {
          im2col(in.sample(b), c, h, w, cols);
          MapConstMat<T> dy(g.sample(b), out_c, h * w);
          dw.noalias() += dy * cols.transpose();
          db += dy.rowwise().sum();
          if (need_input_grad) {
            dcols.noalias() = wm.transpose() * dy;
            col2im_add(dcols, c, h, w, dx.sample(b));
          }
        }
        if (need_input_grad) g = std::move(dx);
        break;
      }
    }
  }
  return grads;
}

template <typename T>
AdamState<T> AdamState<T>::zeros_like(const ModelParams<T>& params) {
  AdamState<T> s;
  for (const auto& t : params.tensors) {
    s.m.emplace_back(t.shape);
    s.v.emplace_back(t.shape);
  }
  return s;
}

template <typename T>
void adam_step(ModelParams<T>& params, const Gradients<T>& grads, AdamState<T>& state,
               const AdamConfig& cfg) {
  const DenormalGuard ftz;
  if (grads.size() != params.tensors.size() || state.m.size() != params.tensors.size()) {
    shape_error("gradient / optimizer state does not match parameters");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t t = 0; t < params.tensors.size(); ++t) {
    auto& theta = params.tensors[t].data;
    const auto& g = grads[t].data;
    auto& m = state.m[t].data;
    auto& v = state.v[t].data;
    if (g.size() != theta.size()) shape_error("gradient shape mismatch");
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double gi = g[i];
      const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      theta[i] = static_cast<T>(theta[i] - cfg.lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.eps));
    }
  }
}

std::vector<double> softmax(std::span<const double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) sum += p[i] = std::exp(logits[i] - m);
  for (double& v : p) v /= sum;
  return p;
}

int argmax(std::span<const double> values) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(values.size()); ++i) {
    if (values[static_cast<std::size_t>(i)] > values[static_cast<std::size_t>(best)]) best = i;
  }
  return best;
}

std::vector<Prediction> predict_batch(const ModelParams<float>& params, const Tensor<float>& batch) {
  const auto result = forward(params, batch, Mode::Eval);
  const int k = result.logits.shape[1];
  std::vector<Prediction> out;
  for (int i = 0; i < batch.shape[0]; ++i) {
    std::vector<double> row(result.logits.data.begin() + i * k, result.logits.data.begin() + (i + 1) * k);
    Prediction pred;
    pred.probabilities = softmax(row);
    pred.label = argmax(row);
    out.push_back(std::move(pred));
  }
  return out;
}

Prediction predict(const ModelParams<float>& params, std::span<const float> spectrogram) {
  const auto& in = params.arch.input;
  Tensor<float> batch({1, in[0], in[1], in[2]});
  if (spectrogram.size() != batch.size()) shape_error("spectrogram size does not match the model input");
  std::copy(spectrogram.begin(), spectrogram.end(), batch.data.begin());
  return predict_batch(params, batch).front();
}

std::vector<std::uint8_t> encode_model(const ModelParams<float>& params, const nlohmann::json& meta) {
  nlohmann::json j;
  j["arch"] = params.arch.to_json();
  j["meta"] = meta;
  auto& shapes = j["tensors"] = nlohmann::json::array();
  std::vector<float> blob;
  blob.reserve(params.parameter_count());
  for (const auto& t : params.tensors) {
    shapes.push_back(t.shape);
    blob.insert(blob.end(), t.data.begin(), t.data.end());
  }
  return encode_container(kModelMagic, kModelVersion, j.dump(), blob);
}

ModelParams<float> decode_model(const std::vector<std::uint8_t>& bytes, nlohmann::json* meta) {
  auto c = decode_container(kModelMagic, kModelVersion, bytes);
  ModelParams<float> params;
  try {
    const auto j = nlohmann::json::parse(c.metadata);
    params.arch = ArchSpec::from_json(j.at("arch"));
    std::size_t offset = 0;
    for (const auto& s : j.at("tensors")) {
      Tensor<float> t(s.get<std::array<int, 4>>());
      if (offset + t.size() > c.payload.size()) throw Error(ErrorCode::Truncated, "parameter blob too short");
      std::copy_n(c.payload.begin() + static_cast<std::ptrdiff_t>(offset), t.size(), t.data.begin());
      offset += t.size();
      params.tensors.push_back(std::move(t));
    }
    if (offset != c.payload.size()) throw Error(ErrorCode::Truncated, "parameter blob size mismatch");
    if (meta) *meta = j.value("meta", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Truncated, std::string("malformed model metadata: ") + e.what());
  }
  const auto expected = init_model<float>(params.arch, 0);
  if (expected.tensors.size() != params.tensors.size()) shape_error("tensor count does not match architecture");
  for (std::size_t i = 0; i < expected.tensors.size(); ++i) {
    if (expected.tensors[i].shape != params.tensors[i].shape) shape_error("tensor shape does not match architecture");
  }
  return params;
}

#define SKNA_INSTANTIATE(T)                                                                        \
  template struct ModelParams<T>;                                                                  \
  template struct AdamState<T>;                                                                    \
  template ModelParams<T> init_model<T>(const ArchSpec&, std::uint64_t);                           \
  template ForwardResult<T> forward<T>(const ModelParams<T>&, const Tensor<T>&, Mode, std::uint64_t); \
  template LossResult<T> weighted_ce<T>(const Tensor<T>&, std::span<const int>, std::span<const double>); \
  template Gradients<T> backward<T>(const ModelParams<T>&, const ForwardCache<T>&, const Tensor<T>&); \
  template void adam_step<T>(ModelParams<T>&, const Gradients<T>&, AdamState<T>&, const AdamConfig&);

SKNA_INSTANTIATE(float)
SKNA_INSTANTIATE(double)
#undef SKNA_INSTANTIATE

template ModelParams<double> cast_params<double, float>(const ModelParams<float>&);
template ModelParams<float> cast_params<float, double>(const ModelParams<double>&);

}  // namespace skna::nn
