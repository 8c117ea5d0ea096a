#pragma once

// Dense feedforward networks with hand-written backpropagation.
//
// Parameters live in one flat vector; every layer reads its weights through an
// Eigen::Map over a slot of that vector. Batched routines take inputs as a
// (features x batch) matrix, one example per column.

#include "datadiet/common.hpp"
#include "datadiet/errors.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

namespace datadiet {

enum class Architecture { linear, mlp, small_conv };

std::string to_string(Architecture arch);
Architecture architecture_from_string(const std::string& name);

struct ImageShape {
  int channels = 0;
  int height = 0;
  int width = 0;

  int size() const { return channels * height * width; }
  bool empty() const { return size() == 0; }
  friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

// widths lists every activation size from input to logits:
//   linear:     [d, K]
//   mlp:        [d, h_1, ..., h_n, K]        (n >= 1)
//   small_conv: [d, conv_channels, hidden, K] with image.size() == d
struct ModelSpec {
  Architecture architecture = Architecture::mlp;
  std::vector<int> widths;
  ImageShape image;

  int input_dim() const { return widths.empty() ? 0 : widths.front(); }
  int num_classes() const { return widths.empty() ? 0 : widths.back(); }
  void validate() const;
  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

// One named tensor inside the flat parameter vector (column-major rows x cols).
struct TensorSlot {
  std::string name;
  Index offset = 0;
  Index rows = 0;
  Index cols = 0;

  Index size() const { return rows * cols; }
  friend bool operator==(const TensorSlot&, const TensorSlot&) = default;
};

std::vector<TensorSlot> parameter_layout(const ModelSpec& spec);
Index parameter_count(const ModelSpec& spec);

template <typename Scalar>
struct ParamVector {
  VectorX<Scalar> values;
  std::vector<TensorSlot> layout;

  Index size() const { return values.size(); }

  template <typename To>
  ParamVector<To> cast() const {
    return ParamVector<To>{values.template cast<To>(), layout};
  }
};

namespace detail {

enum class StageKind { dense, relu, conv3x3, mean_pool2 };

struct Stage {
  StageKind kind = StageKind::dense;
  int weight_slot = -1;  // bias is weight_slot + 1
  int in_size = 0;
  int out_size = 0;
  ImageShape in_image;  // conv3x3 / mean_pool2
  int filters = 0;      // conv3x3
};

std::vector<Stage> build_stages(const ModelSpec& spec);

void check_consistent(const ModelSpec& spec, const std::vector<TensorSlot>& layout, Index size);

template <typename Scalar>
using ConstMap = Eigen::Map<const MatrixX<Scalar>>;
template <typename Scalar>
using MutMap = Eigen::Map<MatrixX<Scalar>>;

template <typename Scalar>
ConstMap<Scalar> tensor(const VectorX<Scalar>& values, const TensorSlot& slot) {
  return ConstMap<Scalar>(values.data() + slot.offset, slot.rows, slot.cols);
}

template <typename Scalar>
MutMap<Scalar> tensor(VectorX<Scalar>& values, const TensorSlot& slot) {
  return MutMap<Scalar>(values.data() + slot.offset, slot.rows, slot.cols);
}

// Patch matrix (H*W) x (C*9) for a zero-padded 3x3 stride-1 convolution over a
// channel-major image.
template <typename Scalar, typename Derived>
MatrixX<Scalar> im2col(const Eigen::MatrixBase<Derived>& image_column, const ImageShape& shape) {
  const int c_in = shape.channels, h = shape.height, w = shape.width;
  MatrixX<Scalar> patches = MatrixX<Scalar>::Zero(h * w, c_in * 9);
  for (int c = 0; c < c_in; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const int col = c * 9 + ky * 3 + kx;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          for (int x = 0; x < w; ++x) {
            const int sx = x + kx - 1;
            if (sx < 0 || sx >= w) continue;
            patches(y * w + x, col) = image_column(c * h * w + sy * w + sx);
          }
        }
      }
    }
  }
  return patches;
}

}  // namespace detail

// Inputs to every stage of a batched forward pass; consumed by backward_batch.
template <typename Scalar>
struct ForwardTrace {
  std::vector<detail::Stage> stages;
  std::vector<MatrixX<Scalar>> inputs;
};

template <typename Scalar>
MatrixX<Scalar> forward_batch(const ParamVector<Scalar>& params, const ModelSpec& spec,
                              const MatrixX<Scalar>& inputs, ForwardTrace<Scalar>* trace = nullptr) {
  detail::check_consistent(spec, params.layout, params.size());
  if (inputs.rows() != spec.input_dim()) {
    throw ShapeError("input has " + std::to_string(inputs.rows()) + " features, model expects " +
                     std::to_string(spec.input_dim()));
  }
  auto stages = detail::build_stages(spec);
  const auto& layout = params.layout;
  MatrixX<Scalar> current = inputs;
  if (trace) trace->inputs.clear();
  for (const auto& stage : stages) {
    if (trace) trace->inputs.push_back(current);
    MatrixX<Scalar> next;
    switch (stage.kind) {
      case detail::StageKind::dense: {
        auto weight = detail::tensor(params.values, layout[stage.weight_slot]);
        auto bias = detail::tensor(params.values, layout[stage.weight_slot + 1]);
        next.noalias() = weight * current;
        next.colwise() += bias.col(0);
        break;
      }
      case detail::StageKind::relu:
        next = current.cwiseMax(Scalar(0));
        break;
      case detail::StageKind::conv3x3: {
        auto weight = detail::tensor(params.values, layout[stage.weight_slot]);
        auto bias = detail::tensor(params.values, layout[stage.weight_slot + 1]);
        const Index pixels = stage.in_image.height * stage.in_image.width;
        next.resize(stage.out_size, current.cols());
        for (Index j = 0; j < current.cols(); ++j) {
          MatrixX<Scalar> patches = detail::im2col<Scalar>(current.col(j), stage.in_image);
          detail::MutMap<Scalar> out(next.col(j).data(), pixels, stage.filters);
          out.noalias() = patches * weight.transpose();
          out.rowwise() += bias.col(0).transpose();
        }
        break;
      }
      case detail::StageKind::mean_pool2: {
        const int c = stage.in_image.channels, h = stage.in_image.height, w = stage.in_image.width;
        const int ho = h / 2, wo = w / 2;
        next.setZero(stage.out_size, current.cols());
        for (Index j = 0; j < current.cols(); ++j) {
          for (int ch = 0; ch < c; ++ch) {
            for (int y = 0; y < ho; ++y) {
              for (int x = 0; x < wo; ++x) {
                const Index base = ch * h * w + 2 * y * w + 2 * x;
                next(ch * ho * wo + y * wo + x, j) =
                    Scalar(0.25) * (current(base, j) + current(base + 1, j) + current(base + w, j) +
                                    current(base + w + 1, j));
              }
            }
          }
        }
        break;
      }
    }
    current = std::move(next);
  }
  if (trace) trace->stages = std::move(stages);
  return current;
}

// Sum over the batch of the parameter gradients of <cotangent_j, f(x_j)>.
template <typename Scalar>
VectorX<Scalar> backward_batch(const ParamVector<Scalar>& params, const ForwardTrace<Scalar>& trace,
                               const MatrixX<Scalar>& output_cotangent) {
  const auto& layout = params.layout;
  VectorX<Scalar> grad = VectorX<Scalar>::Zero(params.size());
  MatrixX<Scalar> delta = output_cotangent;
  for (std::size_t s = trace.stages.size(); s-- > 0;) {
    const auto& stage = trace.stages[s];
    const auto& input = trace.inputs[s];
    const bool need_input_grad = s > 0;
    switch (stage.kind) {
      case detail::StageKind::dense: {
        const auto& wslot = layout[stage.weight_slot];
        const auto& bslot = layout[stage.weight_slot + 1];
        detail::tensor(grad, wslot).noalias() += delta * input.transpose();
        detail::tensor(grad, bslot).col(0) += delta.rowwise().sum();
        if (need_input_grad) {
          auto weight = detail::tensor(params.values, wslot);
          MatrixX<Scalar> prev = weight.transpose() * delta;
          delta = std::move(prev);
        }
        break;
      }
      case detail::StageKind::relu:
        delta = (input.array() > Scalar(0)).select(delta, Scalar(0));
        break;
      case detail::StageKind::conv3x3: {
        const auto& wslot = layout[stage.weight_slot];
        const auto& bslot = layout[stage.weight_slot + 1];
        const Index pixels = stage.in_image.height * stage.in_image.width;
        auto dweight = detail::tensor(grad, wslot);
        auto dbias = detail::tensor(grad, bslot);
        for (Index j = 0; j < input.cols(); ++j) {
          MatrixX<Scalar> patches = detail::im2col<Scalar>(input.col(j), stage.in_image);
          detail::ConstMap<Scalar> dout(delta.col(j).data(), pixels, stage.filters);
          dweight.noalias() += dout.transpose() * patches;
          dbias.col(0) += dout.colwise().sum().transpose();
        }
        if (need_input_grad) {
          throw ShapeError("convolution is only supported as the first stage");
        }
        break;
      }
      case detail::StageKind::mean_pool2: {
        const int c = stage.in_image.channels, h = stage.in_image.height, w = stage.in_image.width;
        const int ho = h / 2, wo = w / 2;
        MatrixX<Scalar> prev = MatrixX<Scalar>::Zero(stage.in_size, delta.cols());
        for (Index j = 0; j < delta.cols(); ++j) {
          for (int ch = 0; ch < c; ++ch) {
            for (int y = 0; y < ho; ++y) {
              for (int x = 0; x < wo; ++x) {
                const Scalar g = Scalar(0.25) * delta(ch * ho * wo + y * wo + x, j);
                const Index base = ch * h * w + 2 * y * w + 2 * x;
                prev(base, j) += g;
                prev(base + 1, j) += g;
                prev(base + w, j) += g;
                prev(base + w + 1, j) += g;
              }
            }
          }
        }
        delta = std::move(prev);
        break;
      }
    }
  }
  return grad;
}

// He fan-in normal weights, zero biases. Deterministic in (spec, seed); draws
// in double so float and double parameter vectors agree up to rounding.
template <typename Scalar>
ParamVector<Scalar> init_params(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  ParamVector<Scalar> params;
  params.layout = parameter_layout(spec);
  params.values = VectorX<Scalar>::Zero(parameter_count(spec));
  std::mt19937_64 rng(mix_seed(seed));
  for (std::size_t i = 0; i < params.layout.size(); i += 2) {
    const auto& slot = params.layout[i];
    const double stddev = std::sqrt(2.0 / static_cast<double>(slot.cols));
    std::normal_distribution<double> normal(0.0, stddev);
    for (Index k = 0; k < slot.size(); ++k) {
      params.values[slot.offset + k] = static_cast<Scalar>(normal(rng));
    }
  }
  return params;
}

template <typename Scalar>
ParamVector<Scalar> zero_params(const ModelSpec& spec) {
  spec.validate();
  return ParamVector<Scalar>{VectorX<Scalar>::Zero(parameter_count(spec)), parameter_layout(spec)};
}

template <typename Scalar>
VectorX<Scalar> forward(const ParamVector<Scalar>& params, const ModelSpec& spec, const VectorX<Scalar>& x) {
  return forward_batch(params, spec, MatrixX<Scalar>(x));
}

template <typename Derived>
auto softmax(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  VectorX<Scalar> p = (logits.array() - logits.maxCoeff()).exp().matrix();
  p /= p.sum();
  return p;
}

// Column-wise softmax for a (K x batch) logit matrix.
template <typename Scalar>
MatrixX<Scalar> softmax_columns(const MatrixX<Scalar>& logits) {
  MatrixX<Scalar> p(logits.rows(), logits.cols());
  for (Index j = 0; j < logits.cols(); ++j) p.col(j) = softmax(logits.col(j));
  return p;
}

inline constexpr double kLogFloor = 1e-12;

template <typename Derived>
auto cross_entropy(const Eigen::MatrixBase<Derived>& probabilities, int label) {
  using Scalar = typename Derived::Scalar;
  if (label < 0 || label >= probabilities.size()) {
    throw ShapeError("label " + std::to_string(label) + " outside [0, " +
                     std::to_string(probabilities.size()) + ")");
  }
  const Scalar floor = static_cast<Scalar>(kLogFloor);
  return -std::log(std::max(probabilities(label), floor));
}

// Lowest index wins ties.
template <typename Derived>
int argmax(const Eigen::MatrixBase<Derived>& v) {
  int best = 0;
  for (Index k = 1; k < v.size(); ++k) {
    if (v(k) > v(best)) best = static_cast<int>(k);
  }
  return best;
}

template <typename Scalar>
VectorX<Scalar> one_hot(int label, int num_classes) {
  VectorX<Scalar> y = VectorX<Scalar>::Zero(num_classes);
  y(label) = Scalar(1);
  return y;
}

// Exact gradient of cross_entropy(softmax(f(x)), y) with respect to the parameters.
template <typename Scalar>
VectorX<Scalar> example_gradient(const ParamVector<Scalar>& params, const ModelSpec& spec,
                                 const VectorX<Scalar>& x, int label) {
  ForwardTrace<Scalar> trace;
  MatrixX<Scalar> logits = forward_batch(params, spec, MatrixX<Scalar>(x), &trace);
  if (label < 0 || label >= spec.num_classes()) throw ShapeError("label outside class range");
  MatrixX<Scalar> cotangent = softmax(logits.col(0));
  cotangent(label, 0) -= Scalar(1);
  return backward_batch(params, trace, cotangent);
}

// K x D matrix whose k-th row is the gradient of logit k. One backward pass per logit.
template <typename Scalar>
MatrixX<Scalar> logit_jacobian(const ParamVector<Scalar>& params, const ModelSpec& spec,
                               const VectorX<Scalar>& x) {
  ForwardTrace<Scalar> trace;
  forward_batch(params, spec, MatrixX<Scalar>(x), &trace);
  const int classes = spec.num_classes();
  MatrixX<Scalar> jacobian(classes, params.size());
  for (int k = 0; k < classes; ++k) {
    MatrixX<Scalar> seed = MatrixX<Scalar>::Zero(classes, 1);
    seed(k, 0) = Scalar(1);
    jacobian.row(k) = backward_batch(params, trace, seed).transpose();
  }
  return jacobian;
}

}  // namespace datadiet
