#pragma once

// Small CNN engine with handwritten backpropagation. Templated on the scalar
// so training runs in float while gradient checks run in double.

#include <array>
#include <cstdint>
#include <filesystem>
#include <new>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace skna::nn {

enum class LayerKind { Conv2d, ReLU, MaxPool, Dropout, Flatten, Dense };

const char* to_string(LayerKind kind);

struct LayerSpec {
  LayerKind kind = LayerKind::ReLU;
  int units = 0;       // Conv2d output channels / Dense width
  double rate = 0.0;   // Dropout probability

  static LayerSpec conv(int out_channels) { return {LayerKind::Conv2d, out_channels, 0.0}; }
  static LayerSpec relu() { return {LayerKind::ReLU, 0, 0.0}; }
  static LayerSpec max_pool() { return {LayerKind::MaxPool, 0, 0.0}; }
  static LayerSpec dropout(double p) { return {LayerKind::Dropout, 0, p}; }
  static LayerSpec flatten() { return {LayerKind::Flatten, 0, 0.0}; }
  static LayerSpec dense(int width) { return {LayerKind::Dense, width, 0.0}; }

  bool has_params() const { return kind == LayerKind::Conv2d || kind == LayerKind::Dense; }
  bool operator==(const LayerSpec&) const = default;
};

// Shape of one sample: {channels, height, width}; after Flatten/Dense the
// activation is {features, 1, 1}.
using SampleShape = std::array<int, 3>;

struct ArchSpec {
  SampleShape input = {1, 51, 199};
  std::vector<LayerSpec> layers;

  // conv(8/16/32) -> ReLU -> 2x2 max-pool -> dropout blocks, then
  // Flatten -> Dense(64) -> ReLU -> dropout -> Dense(3).
  static ArchSpec production(double dropout = 0.2, SampleShape input = {1, 51, 199});

  // Output shape of every layer; throws Error(Shape) on an inconsistent stack.
  std::vector<SampleShape> layer_shapes() const;
  int output_width() const;

  nlohmann::json to_json() const;
  static ArchSpec from_json(const nlohmann::json& j);

  bool operator==(const ArchSpec&) const = default;
};

// 64-byte aligned storage. Vectorized kernels peel loops by address, so a
// fixed alignment keeps float summation order, and results, run-invariant.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename T>
struct Tensor {
  std::array<int, 4> shape = {0, 0, 0, 0};  // batch, channels, height, width
  std::vector<T, AlignedAllocator<T>> data;

  Tensor() = default;
  explicit Tensor(std::array<int, 4> s, T fill = T(0))
      : shape(s), data(static_cast<std::size_t>(s[0]) * s[1] * s[2] * s[3], fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t sample_size() const { return static_cast<std::size_t>(shape[1]) * shape[2] * shape[3]; }
  T* sample(int b) { return data.data() + static_cast<std::size_t>(b) * sample_size(); }
  const T* sample(int b) const { return data.data() + static_cast<std::size_t>(b) * sample_size(); }

  bool operator==(const Tensor&) const = default;
};

// Weight and bias tensors for each parametrized layer, in layer order:
// Conv2d weight {out, in, 3, 3}; Dense weight {out, in, 1, 1}; bias {out, 1, 1, 1}.
template <typename T>
struct ModelParams {
  ArchSpec arch;
  std::vector<Tensor<T>> tensors;  // w0, b0, w1, b1, ...

  std::size_t parameter_count() const;
  bool operator==(const ModelParams&) const = default;
};

template <typename T>
using Gradients = std::vector<Tensor<T>>;

template <typename T>
ModelParams<T> init_model(const ArchSpec& arch, std::uint64_t seed);

template <typename To, typename From>
ModelParams<To> cast_params(const ModelParams<From>& params);

enum class Mode { Train, Eval };

template <typename T>
struct ForwardCache {
  Mode mode = Mode::Eval;
  // Input to each layer. Data is dropped (shape kept) where backward does not need it.
  std::vector<Tensor<T>> inputs;
  std::vector<std::vector<T>> dropout_mask;  // per layer; empty unless Dropout in train mode
  std::vector<std::vector<std::uint32_t>> pool_argmax;
};

template <typename T>
struct ForwardResult {
  Tensor<T> logits;  // {batch, classes, 1, 1}
  ForwardCache<T> cache;
};

// batch: {B, C, H, W} matching arch.input. Train mode applies inverted dropout
// with masks drawn from `dropout_seed`.
template <typename T>
ForwardResult<T> forward(const ModelParams<T>& params, const Tensor<T>& batch, Mode mode,
                         std::uint64_t dropout_seed = 0);

template <typename T>
struct LossResult {
  T loss = T(0);
  Tensor<T> grad;  // dLoss/dLogits
};

// sum_i w[y_i] * -log softmax(z_i)[y_i] / sum_i w[y_i]
template <typename T>
LossResult<T> weighted_ce(const Tensor<T>& logits, std::span<const int> labels,
                          std::span<const double> class_weights);

template <typename T>
Gradients<T> backward(const ModelParams<T>& params, const ForwardCache<T>& cache,
                      const Tensor<T>& grad_logits);

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::int64_t step = 0;

  static AdamState zeros_like(const ModelParams<T>& params);
};

template <typename T>
void adam_step(ModelParams<T>& params, const Gradients<T>& grads, AdamState<T>& state,
               const AdamConfig& cfg = {});

// Numerically stable softmax of one logit row.
std::vector<double> softmax(std::span<const double> logits);

// Index of the largest entry; ties go to the lowest index.
int argmax(std::span<const double> values);

struct Prediction {
  int label = 0;
  std::vector<double> probabilities;
};

// Eval-mode inference on one already-normalized spectrogram.
Prediction predict(const ModelParams<float>& params, std::span<const float> spectrogram);

std::vector<Prediction> predict_batch(const ModelParams<float>& params, const Tensor<float>& batch);

// .sknamodel: JSON {arch, meta} + float32 parameter blob + CRC32.
inline constexpr std::uint16_t kModelVersion = 1;

std::vector<std::uint8_t> encode_model(const ModelParams<float>& params, const nlohmann::json& meta);
ModelParams<float> decode_model(const std::vector<std::uint8_t>& bytes, nlohmann::json* meta = nullptr);

}  // namespace skna::nn
