#pragma once

#include <map>
#include <string>
#include <vector>

#include "selfrobust/rng.hpp"
#include "selfrobust/tensor.hpp"

namespace selfrobust {

enum class LayerKind { Conv2d, Dense, Relu, MaxPool, GlobalAvgPool, Flatten };

struct LayerDesc {
  LayerKind kind = LayerKind::Relu;
  int filters = 0;  // conv
  int kernel = 0;   // conv
  int stride = 1;   // conv
  int pad = 0;      // conv
  int units = 0;    // dense
  int window = 2;   // maxpool (stride == window, non-overlapping)

  static LayerDesc conv2d(int filters, int kernel, int stride = 1, int pad = 0) {
    LayerDesc d;
    d.kind = LayerKind::Conv2d;
    d.filters = filters;
    d.kernel = kernel;
    d.stride = stride;
    d.pad = pad;
    return d;
  }
  static LayerDesc dense(int units) {
    LayerDesc d;
    d.kind = LayerKind::Dense;
    d.units = units;
    return d;
  }
  static LayerDesc relu() {
    LayerDesc d;
    d.kind = LayerKind::Relu;
    return d;
  }
  static LayerDesc max_pool(int window = 2) {
    LayerDesc d;
    d.kind = LayerKind::MaxPool;
    d.window = window;
    return d;
  }
  static LayerDesc global_avg_pool() {
    LayerDesc d;
    d.kind = LayerKind::GlobalAvgPool;
    return d;
  }
  static LayerDesc flatten() {
    LayerDesc d;
    d.kind = LayerKind::Flatten;
    return d;
  }

  bool has_params() const {
    return kind == LayerKind::Conv2d || kind == LayerKind::Dense;
  }
};

// Layer topology: a shared trunk whose final activation (the penultimate
// vector) feeds every named softmax head. Shapes chain-check at construction.
class NetworkSpec {
 public:
  NetworkSpec(std::vector<int> input_shape, std::vector<LayerDesc> trunk,
              std::map<std::string, int> heads)
      : input_shape_(std::move(input_shape)),
        trunk_(std::move(trunk)),
        heads_(std::move(heads)) {
    if (input_shape_.size() != 3)
      throw std::invalid_argument("NetworkSpec: input shape must be [C,H,W]");
    Tensor<float>::checked_numel(input_shape_);
    std::vector<int> cur = input_shape_;
    out_shapes_.reserve(trunk_.size());
    for (std::size_t i = 0; i < trunk_.size(); ++i) {
      cur = chain(trunk_[i], cur, static_cast<int>(i));
      out_shapes_.push_back(cur);
    }
    if (cur.size() != 1)
      throw std::invalid_argument(detail::strcat(
          "NetworkSpec: trunk must end in a vector (flatten/gap/dense), got ",
          detail::shape_string(cur)));
    if (heads_.empty())
      throw std::invalid_argument("NetworkSpec: at least one head required");
    for (const auto& [name, classes] : heads_) {
      if (classes < 2)
        throw std::invalid_argument(detail::strcat(
            "NetworkSpec: head '", name, "' needs >= 2 classes, got ", classes));
    }
  }

  const std::vector<int>& input_shape() const { return input_shape_; }
  const std::vector<LayerDesc>& trunk() const { return trunk_; }
  const std::map<std::string, int>& heads() const { return heads_; }
  const std::vector<int>& layer_out_shape(int i) const {
    return out_shapes_.at(static_cast<std::size_t>(i));
  }
  int penultimate_dim() const { return out_shapes_.back()[0]; }

  bool has_head(const std::string& name) const { return heads_.count(name) != 0; }

  int head_classes(const std::string& name) const {
    auto it = heads_.find(name);
    if (it == heads_.end())
      throw std::out_of_range("NetworkSpec: unknown head '" + name + "'");
    return it->second;
  }

 private:
  static std::vector<int> chain(const LayerDesc& d, const std::vector<int>& in, int idx) {
    auto err = [&](const std::string& msg) {
      throw std::invalid_argument(detail::strcat("NetworkSpec: trunk layer ", idx, ": ",
                                                 msg, " (input ",
                                                 detail::shape_string(in), ")"));
    };
    switch (d.kind) {
      case LayerKind::Conv2d: {
        if (in.size() != 3) err("conv2d expects [C,H,W]");
        if (d.filters <= 0 || d.kernel <= 0 || d.stride <= 0 || d.pad < 0)
          err("conv2d needs filters>0, kernel>0, stride>0, pad>=0");
        const int oh = (in[1] + 2 * d.pad - d.kernel) / d.stride + 1;
        const int ow = (in[2] + 2 * d.pad - d.kernel) / d.stride + 1;
        if (in[1] + 2 * d.pad < d.kernel || in[2] + 2 * d.pad < d.kernel)
          err("conv2d kernel larger than padded input");
        return {d.filters, oh, ow};
      }
      case LayerKind::Dense:
        if (in.size() != 1) err("dense expects a flattened vector input");
        if (d.units <= 0) err("dense needs units > 0");
        return {d.units};
      case LayerKind::Relu:
        return in;
      case LayerKind::MaxPool: {
        if (in.size() != 3) err("max_pool expects [C,H,W]");
        if (d.window <= 0) err("max_pool needs window > 0");
        if (in[1] < d.window || in[2] < d.window) err("max_pool window larger than input");
        return {in[0], in[1] / d.window, in[2] / d.window};
      }
      case LayerKind::GlobalAvgPool:
        if (in.size() != 3) err("global_avg_pool expects [C,H,W]");
        return {in[0]};
      case LayerKind::Flatten: {
        int n = 1;
        for (int v : in) n *= v;
        return {n};
      }
    }
    err("unknown layer kind");
    return {};
  }

  std::vector<int> input_shape_;
  std::vector<LayerDesc> trunk_;
  std::map<std::string, int> heads_;
  std::vector<std::vector<int>> out_shapes_;
};

// Trainable weights, keyed "trunk.<i>.weight" / "trunk.<i>.bias" and
// "head.<name>.weight" / "head.<name>.bias". Conv weights are stored
// [filters, in_c, k, k]; dense weights [in, units] so y = x * W + b.
template <typename S>
struct ParameterSet {
  std::map<std::string, Tensor<S>> tensors;

  Tensor<S>& at(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end())
      throw std::out_of_range("ParameterSet: missing tensor '" + name + "'");
    return it->second;
  }
  const Tensor<S>& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end())
      throw std::out_of_range("ParameterSet: missing tensor '" + name + "'");
    return it->second;
  }

  ParameterSet zeros_like() const {
    ParameterSet out;
    for (const auto& [name, t] : tensors) out.tensors.emplace(name, Tensor<S>(t.shape()));
    return out;
  }

  template <typename T>
  ParameterSet<T> cast() const {
    ParameterSet<T> out;
    for (const auto& [name, t] : tensors) out.tensors.emplace(name, t.template cast<T>());
    return out;
  }

  void require_compatible(const ParameterSet& other, const std::string& where) const {
    if (tensors.size() != other.tensors.size())
      throw std::invalid_argument(where + ": parameter sets differ in tensor count");
    auto it = tensors.begin();
    auto jt = other.tensors.begin();
    for (; it != tensors.end(); ++it, ++jt) {
      if (it->first != jt->first || it->second.shape() != jt->second.shape())
        throw std::invalid_argument(where + ": mismatch at tensor '" + it->first + "'");
    }
  }
};

template <typename S>
std::vector<int> conv_weight_shape(const LayerDesc& d, int in_c) {
  return {d.filters, in_c, d.kernel, d.kernel};
}

// One entry per parameterized layer, shapes taken from the chain-checked spec.
template <typename S>
ParameterSet<S> make_parameter_set(const NetworkSpec& spec) {
  ParameterSet<S> params;
  std::vector<int> cur = spec.input_shape();
  for (std::size_t i = 0; i < spec.trunk().size(); ++i) {
    const LayerDesc& d = spec.trunk()[i];
    const std::string base = "trunk." + std::to_string(i);
    if (d.kind == LayerKind::Conv2d) {
      params.tensors.emplace(base + ".weight", Tensor<S>(conv_weight_shape<S>(d, cur[0])));
      params.tensors.emplace(base + ".bias", Tensor<S>({d.filters}));
    } else if (d.kind == LayerKind::Dense) {
      params.tensors.emplace(base + ".weight", Tensor<S>({cur[0], d.units}));
      params.tensors.emplace(base + ".bias", Tensor<S>({d.units}));
    }
    cur = spec.layer_out_shape(static_cast<int>(i));
  }
  const int penult = spec.penultimate_dim();
  for (const auto& [name, classes] : spec.heads()) {
    params.tensors.emplace("head." + name + ".weight", Tensor<S>({penult, classes}));
    params.tensors.emplace("head." + name + ".bias", Tensor<S>({classes}));
  }
  return params;
}

// He-uniform fan-in initialization; biases start at zero.
template <typename S>
ParameterSet<S> init_parameters(const NetworkSpec& spec, Rng& rng) {
  ParameterSet<S> params = make_parameter_set<S>(spec);
  for (auto& [name, t] : params.tensors) {
    if (name.ends_with(".bias")) continue;
    std::int64_t fan_in = 1;
    const auto& sh = t.shape();
    for (std::size_t i = 1; i < sh.size(); ++i) fan_in *= sh[i];
    if (sh.size() == 2) fan_in = sh[0];  // dense [in, units]
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (std::int64_t i = 0; i < t.size(); ++i)
      t[i] = static_cast<S>(rng.uniform(-bound, bound));
  }
  return params;
}

}  // namespace selfrobust
