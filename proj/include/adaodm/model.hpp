#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "adaodm/ops.hpp"
#include "adaodm/rng.hpp"
#include "adaodm/tape.hpp"
#include "adaodm/tensor.hpp"

namespace adaodm {

struct ExtractorLayer {
  Tensor weight;  // in x out
  Tensor bias;    // out
  BatchNormState bn;
  bool relu_after = false;
};

/// Shared feature extractor g: a stack of affine -> batch-norm (-> ReLU on
/// hidden layers). The final layer keeps its batch-norm and drops the
/// activation, so test-time adaptation can shift the feature distribution
/// directly.
struct FeatureExtractor {
  std::vector<ExtractorLayer> layers;
  std::size_t input_dim = 0;
  std::size_t feature_dim = 0;
};

struct Head {
  Tensor weight;  // F x C
  Tensor bias;    // C
};

/// One linear classifier per source domain (or several per domain in the
/// paired / single-source variants). owner[h] is the source domain a head was
/// trained for; it drives the meta-source exclusion in the training-time
/// disagreement score.
struct ClassifierBank {
  std::vector<Head> heads;
  std::vector<int> owner;
  std::size_t feature_dim = 0;
  std::size_t num_classes = 0;

  std::size_t num_heads() const { return heads.size(); }
};

struct Model {
  FeatureExtractor extractor;
  ClassifierBank bank;
};

namespace detail {

inline Tensor he_uniform(std::size_t in, std::size_t out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in));
  Tensor w({in, out});
  for (auto& v : w.data()) v = rng.uniform(-limit, limit);
  return w;
}

}  // namespace detail

/// Deterministic model construction. The extractor draws from seed, head d
/// from seed + 1000 + d, so heads differ even when trained on one domain.
inline Model build_model(std::size_t input_dim, const std::vector<std::size_t>& hidden_dims,
                         std::size_t feature_dim, std::size_t num_classes,
                         std::size_t num_heads, std::uint64_t seed) {
  if (input_dim < 1 || feature_dim < 1 || num_classes < 1) {
    throw std::invalid_argument("build_model: dimensions must be >= 1");
  }
  if (num_heads < 2) {
    throw std::invalid_argument(
        "build_model: num_heads must be >= 2 (disagreement is undefined with one head)");
  }
  Model m;
  m.extractor.input_dim = input_dim;
  m.extractor.feature_dim = feature_dim;

  Rng rng(seed);
  std::size_t in = input_dim;
  for (std::size_t h : hidden_dims) {
    ExtractorLayer layer;
    layer.weight = detail::he_uniform(in, h, rng);
    layer.bias = Tensor::zeros({h});
    layer.bn = BatchNormState(h);
    layer.relu_after = true;
    m.extractor.layers.push_back(std::move(layer));
    in = h;
  }
  ExtractorLayer last;
  last.weight = detail::he_uniform(in, feature_dim, rng);
  last.bias = Tensor::zeros({feature_dim});
  last.bn = BatchNormState(feature_dim);
  last.relu_after = false;
  m.extractor.layers.push_back(std::move(last));

  m.bank.feature_dim = feature_dim;
  m.bank.num_classes = num_classes;
  for (std::size_t d = 0; d < num_heads; ++d) {
    Rng head_rng(seed + 1000 + d);
    Head head;
    head.weight = detail::he_uniform(feature_dim, num_classes, head_rng);
    head.bias = Tensor::zeros({num_classes});
    m.bank.heads.push_back(std::move(head));
    m.bank.owner.push_back(static_cast<int>(d));
  }
  return m;
}

/// Paired-initialization mode for few-source training: heads 2d and 2d+1
/// both belong to source domain d.
inline void assign_paired_owners(ClassifierBank& bank, std::size_t num_domains) {
  if (bank.num_heads() != 2 * num_domains) {
    throw std::invalid_argument("assign_paired_owners: need exactly 2 heads per domain");
  }
  for (std::size_t h = 0; h < bank.num_heads(); ++h)
    bank.owner[h] = static_cast<int>(h / 2);
}

/// Single-source mode: every head is trained on domain 0 and the meta-source
/// exclusion is disabled.
inline void assign_single_source(ClassifierBank& bank) {
  for (auto& o : bank.owner) o = 0;
}

// ---------------------------------------------------------------------------
// Named parameter groups

/// Every trainable tensor, in a fixed order: per layer weight, bias, bn scale,
/// bn shift; then per head weight, bias. Running stats are state, not params.
inline std::vector<Tensor*> all_params(Model& m) {
  std::vector<Tensor*> ps;
  for (auto& l : m.extractor.layers) {
    ps.push_back(&l.weight);
    ps.push_back(&l.bias);
    ps.push_back(&l.bn.scale);
    ps.push_back(&l.bn.shift);
  }
  for (auto& h : m.bank.heads) {
    ps.push_back(&h.weight);
    ps.push_back(&h.bias);
  }
  return ps;
}

/// Members of a named group: "extractor_all", "extractor_bn_affine", or
/// "head_<d>". extractor_bn_affine is a subset of extractor_all.
inline std::vector<Tensor*> select_params(Model& m, const std::string& group) {
  std::vector<Tensor*> ps;
  if (group == "extractor_all") {
    for (auto& l : m.extractor.layers) {
      ps.push_back(&l.weight);
      ps.push_back(&l.bias);
      ps.push_back(&l.bn.scale);
      ps.push_back(&l.bn.shift);
    }
    return ps;
  }
  if (group == "extractor_bn_affine") {
    for (auto& l : m.extractor.layers) {
      ps.push_back(&l.bn.scale);
      ps.push_back(&l.bn.shift);
    }
    return ps;
  }
  if (group.rfind("head_", 0) == 0) {
    const std::size_t d = std::strtoull(group.c_str() + 5, nullptr, 10);
    if (d >= m.bank.num_heads()) {
      throw std::invalid_argument("select_params: no such head in group '" + group + "'");
    }
    ps.push_back(&m.bank.heads[d].weight);
    ps.push_back(&m.bank.heads[d].bias);
    return ps;
  }
  throw std::invalid_argument("select_params: unknown group '" + group + "'");
}

inline std::size_t param_count(Model& m) {
  std::size_t n = 0;
  for (auto* p : all_params(m)) n += p->numel();
  return n;
}

// ---------------------------------------------------------------------------
// Per-tape graph builder

/// Binds a model's parameters to leaves on one tape and builds forward
/// graphs. After tape.backward(), gradients are read back per parameter.
class ModelGraph {
 public:
  ModelGraph(Tape& tape, Model& model) : tape_(tape), model_(model) {
    for (Tensor* p : all_params(model_)) leaves_.emplace(p, tape_.leaf(*p));
  }

  Tape& tape() { return tape_; }
  Model& model() { return model_; }

  Value input(const Tensor& x) {
    if (x.cols() != model_.extractor.input_dim) {
      throw std::invalid_argument("features: input width " + x.shape_string() +
                                  " does not match extractor input_dim [" +
                                  std::to_string(model_.extractor.input_dim) + "]");
    }
    return tape_.leaf(x);
  }

  /// s = g(x). Train mode updates BN running stats as a side effect.
  Value features(Value x, BnMode mode) {
    Value cur = x;
    for (auto& layer : model_.extractor.layers) {
      cur = affine(tape_, cur, leaf_of(&layer.weight), leaf_of(&layer.bias));
      cur = batchnorm(tape_, cur, leaf_of(&layer.bn.scale), leaf_of(&layer.bn.shift),
                      layer.bn, mode);
      if (layer.relu_after) cur = relu(tape_, cur);
    }
    return cur;
  }

  /// logits = s W_d + b_d
  Value head_logits(std::size_t d, Value s) {
    check_head(d);
    Head& h = model_.bank.heads[d];
    return affine(tape_, s, leaf_of(&h.weight), leaf_of(&h.bias));
  }

  /// Same forward as head_logits, but the head parameters are routed through
  /// a gradient reversal so the head receives -eta times the true gradient.
  /// The gradient into s is unaffected.
  Value head_logits_reversed(std::size_t d, Value s, double eta) {
    check_head(d);
    Head& h = model_.bank.heads[d];
    Value w = grad_reverse(tape_, leaf_of(&h.weight), eta);
    Value b = grad_reverse(tape_, leaf_of(&h.bias), eta);
    return affine(tape_, s, w, b);
  }

  /// Elementwise sum of every head's logits (the aggregate prediction rule).
  Value aggregate_logits(Value s) {
    Value sum = head_logits(0, s);
    for (std::size_t d = 1; d < model_.bank.num_heads(); ++d)
      sum = add(tape_, sum, head_logits(d, s));
    return sum;
  }

  Value leaf_of(const Tensor* param) const {
    auto it = leaves_.find(param);
    if (it == leaves_.end()) throw std::logic_error("ModelGraph: unknown parameter");
    return it->second;
  }

  const Tensor& grad_of(const Tensor* param) const { return tape_.grad(leaf_of(param)); }

 private:
  void check_head(std::size_t d) const {
    if (d >= model_.bank.num_heads()) {
      throw std::out_of_range("head index " + std::to_string(d) + " out of range [0," +
                              std::to_string(model_.bank.num_heads()) + ")");
    }
  }

  Tape& tape_;
  Model& model_;
  std::unordered_map<const Tensor*, Value> leaves_;
};

// ---------------------------------------------------------------------------
// Checkpoint I/O (versioned text, hexfloat payload, bit-exact round trip)

namespace detail {

inline void write_array(std::ostream& os, const char* name, const Tensor& t) {
  os << name << ' ' << t.numel();
  char buf[40];
  for (double v : t.data()) {
    std::snprintf(buf, sizeof(buf), " %a", v);
    os << buf;
  }
  os << '\n';
}

inline std::string hex_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

inline double read_double(std::istream& is) {
  std::string tok;
  is >> tok;
  return std::strtod(tok.c_str(), nullptr);
}

inline void read_array(std::istream& is, const char* name, Tensor& t) {
  std::string tag;
  std::size_t n = 0;
  is >> tag >> n;
  if (tag != name || n != t.numel()) {
    throw std::runtime_error("checkpoint: expected array '" + std::string(name) + "' of " +
                             std::to_string(t.numel()) + ", got '" + tag + "' of " +
                             std::to_string(n));
  }
  std::string tok;
  for (std::size_t i = 0; i < n; ++i) {
    is >> tok;
    t[i] = std::strtod(tok.c_str(), nullptr);
  }
}

}  // namespace detail

inline void save_model(const Model& m, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_model: cannot open " + path);
  os << "adaodm-model v1\n";
  os << "arch " << m.extractor.input_dim << ' ' << m.extractor.feature_dim << ' '
     << m.bank.num_classes << ' ' << m.extractor.layers.size() << ' '
     << m.bank.num_heads() << '\n';
  os << "owners";
  for (int o : m.bank.owner) os << ' ' << o;
  os << '\n';
  for (const auto& l : m.extractor.layers) {
    os << "layer " << l.weight.rows() << ' ' << l.weight.cols() << ' '
       << (l.relu_after ? 1 : 0) << ' ' << detail::hex_double(l.bn.momentum) << ' '
       << detail::hex_double(l.bn.eps) << '\n';
    detail::write_array(os, "weight", l.weight);
    detail::write_array(os, "bias", l.bias);
    detail::write_array(os, "bn_scale", l.bn.scale);
    detail::write_array(os, "bn_shift", l.bn.shift);
    detail::write_array(os, "bn_rmean", l.bn.running_mean);
    detail::write_array(os, "bn_rvar", l.bn.running_var);
  }
  for (const auto& h : m.bank.heads) {
    os << "head " << h.weight.rows() << ' ' << h.weight.cols() << '\n';
    detail::write_array(os, "weight", h.weight);
    detail::write_array(os, "bias", h.bias);
  }
  if (!os) throw std::runtime_error("save_model: write failed for " + path);
}

inline Model load_model(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_model: cannot open " + path);
  std::string magic, version, tag;
  is >> magic >> version;
  if (magic != "adaodm-model" || version != "v1") {
    throw std::runtime_error("load_model: " + path + " is not an adaodm-model v1 file");
  }
  Model m;
  std::size_t num_layers = 0, num_heads = 0;
  is >> tag >> m.extractor.input_dim >> m.extractor.feature_dim >>
      m.bank.num_classes >> num_layers >> num_heads;
  if (tag != "arch") throw std::runtime_error("load_model: missing arch record");
  m.bank.feature_dim = m.extractor.feature_dim;
  is >> tag;
  if (tag != "owners") throw std::runtime_error("load_model: missing owners record");
  m.bank.owner.resize(num_heads);
  for (auto& o : m.bank.owner) is >> o;
  for (std::size_t i = 0; i < num_layers; ++i) {
    std::size_t in = 0, out = 0;
    int relu_flag = 0;
    ExtractorLayer l;
    is >> tag >> in >> out >> relu_flag;
    l.bn.momentum = detail::read_double(is);
    l.bn.eps = detail::read_double(is);
    if (tag != "layer") throw std::runtime_error("load_model: missing layer record");
    l.weight = Tensor({in, out});
    l.bias = Tensor({out});
    l.bn.scale = Tensor({out});
    l.bn.shift = Tensor({out});
    l.bn.running_mean = Tensor({out});
    l.bn.running_var = Tensor({out});
    l.relu_after = relu_flag != 0;
    detail::read_array(is, "weight", l.weight);
    detail::read_array(is, "bias", l.bias);
    detail::read_array(is, "bn_scale", l.bn.scale);
    detail::read_array(is, "bn_shift", l.bn.shift);
    detail::read_array(is, "bn_rmean", l.bn.running_mean);
    detail::read_array(is, "bn_rvar", l.bn.running_var);
    m.extractor.layers.push_back(std::move(l));
  }
  for (std::size_t h = 0; h < num_heads; ++h) {
    std::size_t f = 0, c = 0;
    is >> tag >> f >> c;
    if (tag != "head") throw std::runtime_error("load_model: missing head record");
    Head head;
    head.weight = Tensor({f, c});
    head.bias = Tensor({c});
    detail::read_array(is, "weight", head.weight);
    detail::read_array(is, "bias", head.bias);
    m.bank.heads.push_back(std::move(head));
  }
  if (!is) throw std::runtime_error("load_model: truncated file " + path);
  return m;
}

}  // namespace adaodm
