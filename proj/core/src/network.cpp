#include "enlfcn/network.hpp"

#include <string>

#include "enlfcn/ops.hpp"
#include "enlfcn/random.hpp"

namespace enlfcn {

const char* to_string(Arrangement a) noexcept { return a == Arrangement::parallel ? "parallel" : "series"; }

Arrangement parse_arrangement(const std::string& s) {
  if (s == "parallel") return Arrangement::parallel;
  if (s == "series") return Arrangement::series;
  throw ConfigError("unknown module arrangement '" + s + "' (expected parallel|series)");
}

void NetworkConfig::validate() const {
  if (bands == 0) throw ConfigError("network bands must be positive");
  if (classes == 0) throw ConfigError("network classes must be positive");
  if (backbone_channels == 0 || enl_channels == 0) throw ConfigError("channel counts must be positive");
  if (kernel_size == 0 || kernel_size % 2 == 0) {
    throw ConfigError("kernel_size must be odd, got " + std::to_string(kernel_size));
  }
  if (enl_position < 1 || enl_position > 4) {
    throw ConfigError("enl_position must be in 1..4, got " + std::to_string(enl_position));
  }
  if (enl_channels > backbone_channels) {
    throw ConfigError("enl_channels L=" + std::to_string(enl_channels) + " exceeds backbone_channels N=" +
                      std::to_string(backbone_channels));
  }
  if (recurrence == 0) throw ConfigError("recurrence must be at least 1");
}

std::size_t NetworkConfig::conv_input_channels(std::size_t layer) const {
  if (layer == 1) return bands;
  if (layer != enl_position + 1 || enl_module_count == 0) return backbone_channels;
  const std::size_t branches = enl_arrangement == Arrangement::parallel ? enl_module_count : 1;
  return backbone_channels * (1 + branches);
}

template <typename T>
EnlFcnModel<T> EnlFcnModel<T>::init(const NetworkConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  EnlFcnModel<T> m;
  m.config = config;
  for (std::size_t layer = 1; layer <= 5; ++layer) {
    const std::size_t out = layer == 5 ? config.classes : config.backbone_channels;
    const std::size_t k = layer == 5 ? 1 : config.kernel_size;
    m.conv[layer - 1] = glorot_conv<T>(out, config.conv_input_channels(layer), k, rng);
  }
  for (std::size_t i = 0; i < config.enl_module_count; ++i) {
    if (config.attention_kind == AttentionKind::efficient) {
      m.enl.push_back(EnlWeights<T>::init(config.backbone_channels, config.enl_channels, rng));
    } else {
      m.nonlocal.push_back(NonLocalWeights<T>::init(config.backbone_channels, config.enl_channels, rng));
    }
  }
  return m;
}

namespace {

template <typename Model, typename Fn>
void visit_parameters(Model& m, Fn&& add) {
  auto conv = [&](const std::string& prefix, auto& w) {
    add(prefix + ".w", w.kernels);
    add(prefix + ".b", w.bias);
  };
  for (std::size_t layer = 0; layer < 5; ++layer) conv("conv" + std::to_string(layer + 1), m.conv[layer]);
  for (std::size_t i = 0; i < m.enl.size(); ++i) {
    const std::string p = "enl" + std::to_string(i);
    conv(p + ".wq", m.enl[i].wq);
    conv(p + ".wk", m.enl[i].wk);
    conv(p + ".wv", m.enl[i].wv);
  }
  for (std::size_t i = 0; i < m.nonlocal.size(); ++i) {
    const std::string p = "nl" + std::to_string(i);
    conv(p + ".theta", m.nonlocal[i].theta);
    conv(p + ".phi", m.nonlocal[i].phi);
    conv(p + ".g", m.nonlocal[i].g);
  }
}

}  // namespace

template <typename T>
std::vector<NamedParameter<T>> EnlFcnModel<T>::parameters() {
  std::vector<NamedParameter<T>> out;
  visit_parameters(*this, [&](const std::string& name, Tensor<T>& t) { out.push_back({name, &t}); });
  return out;
}

template <typename T>
std::vector<ConstNamedParameter<T>> EnlFcnModel<T>::parameters() const {
  std::vector<ConstNamedParameter<T>> out;
  visit_parameters(*this, [&](const std::string& name, const Tensor<T>& t) { out.push_back({name, &t}); });
  return out;
}

template <typename T>
std::size_t EnlFcnModel<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor->size();
  return n;
}

template <typename T>
ForwardNodes forward(Tape<T>& tape, const EnlFcnModel<T>& model, NodeId input) {
  const NetworkConfig& cfg = model.config;
  const Tensor<T>& x = tape.value(input);
  if (x.rank() != 3 || x.dim(0) != cfg.bands) {
    throw ConfigError("input cube " + shape_to_string(x.shape()) + " does not have the configured " +
                      std::to_string(cfg.bands) + " bands");
  }
  ForwardNodes nodes{};
  NodeId h = input;
  for (std::size_t layer = 1; layer <= 4; ++layer) {
    h = ops::conv2d(tape, h, model.conv[layer - 1], Activation::sigmoid);
    if (layer != cfg.enl_position || cfg.enl_module_count == 0) continue;

    std::vector<NodeId> parts{h};
    NodeId chained = h;
    const std::size_t modules = cfg.enl_module_count;
    for (std::size_t m = 0; m < modules; ++m) {
      const NodeId source = cfg.enl_arrangement == Arrangement::parallel ? h : chained;
      if (cfg.attention_kind == AttentionKind::efficient) {
        EnlNodes out = enl_forward(tape, source, model.enl[m], cfg.recurrence);
        nodes.attention.push_back(std::move(out.attention));
        chained = out.output;
      } else {
        chained = original_nonlocal(tape, source, model.nonlocal[m], cfg.attention_byte_limit);
      }
      if (cfg.enl_arrangement == Arrangement::parallel) parts.push_back(chained);
    }
    if (cfg.enl_arrangement == Arrangement::series) parts.push_back(chained);
    h = ops::concat_channels<T>(tape, parts);
  }
  nodes.logits = ops::conv2d(tape, h, model.conv[4], Activation::none);
  nodes.probabilities = ops::softmax_axis(tape, nodes.logits, 0);
  return nodes;
}

template <typename T>
ForwardResult<T> forward(const EnlFcnModel<T>& model, const Tensor<T>& input) {
  Tape<T> tape(false);
  const ForwardNodes nodes = forward(tape, model, tape.constant(input));
  ForwardResult<T> result{tape.value(nodes.probabilities), {}};
  for (const auto& module : nodes.attention) {
    std::vector<AttentionState<T>> states;
    for (NodeId id : module) states.push_back({tape.value(id)});
    result.attention.push_back(std::move(states));
  }
  return result;
}

template <typename T>
LabelMap predict(const Tensor<T>& probabilities) {
  if (probabilities.rank() != 3) throw ConfigError("predict expects [C,H,W] probabilities");
  const std::size_t classes = probabilities.dim(0), h = probabilities.dim(1), w = probabilities.dim(2);
  LabelMap out(h, w);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < classes; ++c) {
        if (probabilities(c, i, j) > probabilities(best, i, j)) best = c;
      }
      out(i, j) = static_cast<std::int32_t>(best + 1);
    }
  }
  return out;
}

#define ENLFCN_INSTANTIATE_NETWORK(T)                                                       \
  template struct EnlFcnModel<T>;                                                          \
  template ForwardNodes forward<T>(Tape<T>&, const EnlFcnModel<T>&, NodeId);               \
  template ForwardResult<T> forward<T>(const EnlFcnModel<T>&, const Tensor<T>&);           \
  template LabelMap predict<T>(const Tensor<T>&);

ENLFCN_INSTANTIATE_NETWORK(float)
ENLFCN_INSTANTIATE_NETWORK(double)

}  // namespace enlfcn
