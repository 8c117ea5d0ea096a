#include "datadiet/nn_core.hpp"

namespace datadiet {

std::string to_string(Architecture arch) {
  switch (arch) {
    case Architecture::linear:
      return "linear";
    case Architecture::mlp:
      return "mlp";
    case Architecture::small_conv:
      return "small-conv";
  }
  return "unknown";
}

Architecture architecture_from_string(const std::string& name) {
  if (name == "linear") return Architecture::linear;
  if (name == "mlp") return Architecture::mlp;
  if (name == "small-conv" || name == "small_conv") return Architecture::small_conv;
  throw ConfigError("unknown architecture '" + name + "'");
}

void ModelSpec::validate() const {
  for (int w : widths) {
    if (w <= 0) throw ConfigError("layer widths must be positive");
  }
  switch (architecture) {
    case Architecture::linear:
      if (widths.size() != 2) throw ConfigError("linear model needs widths [d, K]");
      break;
    case Architecture::mlp:
      if (widths.size() < 3) throw ConfigError("mlp needs at least one hidden layer");
      break;
    case Architecture::small_conv:
      if (widths.size() != 4) throw ConfigError("small-conv needs widths [d, channels, hidden, K]");
      if (image.size() != widths[0]) {
        throw ConfigError("small-conv image shape does not match input dimension");
      }
      if (image.height < 2 || image.width < 2 || image.height % 2 || image.width % 2) {
        throw ConfigError("small-conv needs even image height and width");
      }
      break;
  }
  if (num_classes() < 2) throw ConfigError("at least two classes are required");
}

namespace {

void push_dense(std::vector<TensorSlot>& layout, Index& offset, const std::string& name, int in, int out) {
  layout.push_back({name + ".weight", offset, out, in});
  offset += static_cast<Index>(out) * in;
  layout.push_back({name + ".bias", offset, out, 1});
  offset += out;
}

}  // namespace

std::vector<TensorSlot> parameter_layout(const ModelSpec& spec) {
  spec.validate();
  std::vector<TensorSlot> layout;
  Index offset = 0;
  if (spec.architecture == Architecture::small_conv) {
    const int filters = spec.widths[1];
    const int c_in = spec.image.channels;
    layout.push_back({"conv.weight", offset, filters, c_in * 9});
    offset += static_cast<Index>(filters) * c_in * 9;
    layout.push_back({"conv.bias", offset, filters, 1});
    offset += filters;
    const int pooled = filters * (spec.image.height / 2) * (spec.image.width / 2);
    push_dense(layout, offset, "dense0", pooled, spec.widths[2]);
    push_dense(layout, offset, "dense1", spec.widths[2], spec.widths[3]);
    return layout;
  }
  for (std::size_t l = 0; l + 1 < spec.widths.size(); ++l) {
    push_dense(layout, offset, "dense" + std::to_string(l), spec.widths[l], spec.widths[l + 1]);
  }
  return layout;
}

Index parameter_count(const ModelSpec& spec) {
  Index total = 0;
  for (const auto& slot : parameter_layout(spec)) total += slot.size();
  return total;
}

namespace detail {

std::vector<Stage> build_stages(const ModelSpec& spec) {
  std::vector<Stage> stages;
  if (spec.architecture == Architecture::small_conv) {
    const int filters = spec.widths[1];
    const ImageShape conv_out{filters, spec.image.height, spec.image.width};
    const int pooled = conv_out.size() / 4;
    stages.push_back({StageKind::conv3x3, 0, spec.widths[0], conv_out.size(), spec.image, filters});
    stages.push_back({StageKind::relu, -1, conv_out.size(), conv_out.size(), {}, 0});
    stages.push_back({StageKind::mean_pool2, -1, conv_out.size(), pooled, conv_out, 0});
    stages.push_back({StageKind::dense, 2, pooled, spec.widths[2], {}, 0});
    stages.push_back({StageKind::relu, -1, spec.widths[2], spec.widths[2], {}, 0});
    stages.push_back({StageKind::dense, 4, spec.widths[2], spec.widths[3], {}, 0});
    return stages;
  }
  const std::size_t layers = spec.widths.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    stages.push_back({StageKind::dense, static_cast<int>(2 * l), spec.widths[l], spec.widths[l + 1], {}, 0});
    if (l + 1 < layers) {
      stages.push_back({StageKind::relu, -1, spec.widths[l + 1], spec.widths[l + 1], {}, 0});
    }
  }
  return stages;
}

void check_consistent(const ModelSpec& spec, const std::vector<TensorSlot>& layout, Index size) {
  auto expected = parameter_layout(spec);
  if (expected != layout || parameter_count(spec) != size) {
    throw ShapeError("parameter vector does not match model spec (expected " +
                     std::to_string(parameter_count(spec)) + " parameters, got " + std::to_string(size) + ")");
  }
}

}  // namespace detail
}  // namespace datadiet
