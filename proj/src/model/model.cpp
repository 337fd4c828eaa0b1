#include "cat/model/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "cat/common/error.hpp"
#include "cat/geometry/geometry.hpp"

namespace cat::model {

using namespace tensor;

std::string to_string(PosMode mode) {
  switch (mode) {
    case PosMode::None: return "none";
    case PosMode::Sine: return "sine";
    case PosMode::Mlp: return "mlp";
  }
  return "?";
}

PosMode parse_pos_mode(const std::string& text) {
  if (text == "none") return PosMode::None;
  if (text == "sine") return PosMode::Sine;
  if (text == "mlp") return PosMode::Mlp;
  throw Error(ErrorKind::InvalidMode, "unknown positional mode '" + text + "'");
}

ModelConfig ModelConfig::large() {
  ModelConfig c;
  c.d = 512;
  c.n_points = 1024;
  c.n_local_layers = 8;
  c.n_global_layers = 3;
  c.n_decoder_layers = 3;
  c.heads = 8;
  c.head_hidden = 1024;
  c.ffn_hidden = 1024;
  return c;
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw Error(ErrorKind::InvalidConfig, msg);
  };
  require(d > 0 && n_points > 0 && heads > 0, "d, n_points and heads must be positive");
  require(n_local_layers >= 1, "n_local_layers must be at least 1");
  require(!use_global || n_global_layers >= 1, "use_global needs n_global_layers >= 1");
  require(!use_decoder || n_decoder_layers >= 1, "use_decoder needs n_decoder_layers >= 1");
  require(head_hidden > 0 && ffn_hidden > 0, "hidden widths must be positive");
  if (d % heads != 0) {
    throw Error(ErrorKind::HeadDivisibility,
                "d = " + std::to_string(d) + " is not divisible by heads = " + std::to_string(heads));
  }
}

bool ModelConfig::set(const std::string& key, const std::string& value) {
  if (key == "d") d = parse_count(key, value);
  else if (key == "n_points") n_points = parse_count(key, value);
  else if (key == "n_local_layers") n_local_layers = parse_count(key, value);
  else if (key == "n_global_layers") n_global_layers = parse_count(key, value);
  else if (key == "n_decoder_layers") n_decoder_layers = parse_count(key, value);
  else if (key == "heads") heads = parse_count(key, value);
  else if (key == "head_hidden") head_hidden = parse_count(key, value);
  else if (key == "ffn_hidden") ffn_hidden = parse_count(key, value);
  else if (key == "use_global") use_global = parse_bool(key, value);
  else if (key == "use_decoder") use_decoder = parse_bool(key, value);
  else if (key == "pos_mode") pos_mode = parse_pos_mode(value);
  else return false;
  return true;
}

KeyValues ModelConfig::to_key_values() const {
  return {{"d", std::to_string(d)},
          {"n_points", std::to_string(n_points)},
          {"n_local_layers", std::to_string(n_local_layers)},
          {"n_global_layers", std::to_string(n_global_layers)},
          {"n_decoder_layers", std::to_string(n_decoder_layers)},
          {"heads", std::to_string(heads)},
          {"head_hidden", std::to_string(head_hidden)},
          {"ffn_hidden", std::to_string(ffn_hidden)},
          {"use_global", use_global ? "true" : "false"},
          {"use_decoder", use_decoder ? "true" : "false"},
          {"pos_mode", to_string(pos_mode)}};
}

std::string ModelConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : to_key_values()) out += k + " = " + v + "\n";
  return out;
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  ModelConfig c;
  for (const auto& [k, v] : parse_key_values(text)) {
    if (!c.set(k, v)) throw Error(ErrorKind::InvalidConfig, "unknown model key '" + k + "'");
  }
  c.validate();
  return c;
}

namespace {

using ShapeList = std::vector<std::pair<std::string, Shape>>;

void add_linear(ShapeList& out, const std::string& name, std::size_t in, std::size_t outf) {
  out.emplace_back(name + ".weight", Shape{in, outf});
  out.emplace_back(name + ".bias", Shape{outf});
}

void add_norm(ShapeList& out, const std::string& name, std::size_t d) {
  out.emplace_back(name + ".gain", Shape{d});
  out.emplace_back(name + ".bias", Shape{d});
}

void add_attention(ShapeList& out, const std::string& name, std::size_t d) {
  for (const char* p : {"q_proj", "k_proj", "v_proj", "out_proj"}) add_linear(out, name + "." + p, d, d);
}

void add_ffn(ShapeList& out, const std::string& name, std::size_t d, std::size_t hidden) {
  add_linear(out, name + ".fc1", d, hidden);
  add_linear(out, name + ".fc2", hidden, d);
}

void add_encoder_layer(ShapeList& out, const std::string& name, const ModelConfig& c) {
  add_norm(out, name + ".ln1", c.d);
  add_attention(out, name + ".attn", c.d);
  add_norm(out, name + ".ln2", c.d);
  add_ffn(out, name + ".ffn", c.d, c.ffn_hidden);
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

std::vector<std::pair<std::string, Shape>> parameter_shapes(const ModelConfig& c) {
  c.validate();
  ShapeList out;
  add_linear(out, "embed.fc0", 3, c.d);
  add_linear(out, "embed.fc1", c.d, c.d);
  add_linear(out, "embed.fc2", c.d, c.d);
  if (c.pos_mode == PosMode::Mlp) {
    add_linear(out, "pos.fc0", 3, c.d);
    add_linear(out, "pos.fc1", c.d, c.d);
  } else if (c.pos_mode == PosMode::Sine) {
    add_linear(out, "pos.proj", 3 * 2 * kSineFrequencies, c.d);
  }
  out.emplace_back("box_tokens", Shape{kBoxTokens, c.d});
  for (std::size_t i = 0; i < c.n_local_layers; ++i)
    add_encoder_layer(out, "local_enc.layer" + std::to_string(i), c);
  if (c.use_global) {
    for (std::size_t i = 0; i < c.n_global_layers; ++i)
      add_encoder_layer(out, "global_enc.layer" + std::to_string(i), c);
  }
  if (c.use_decoder) {
    for (std::size_t i = 0; i < c.n_decoder_layers; ++i) {
      const std::string p = "decoder.layer" + std::to_string(i);
      add_norm(out, p + ".ln_self", c.d);
      add_attention(out, p + ".self_attn", c.d);
      add_norm(out, p + ".ln_cross", c.d);
      add_norm(out, p + ".ln_memory", c.d);
      add_attention(out, p + ".cross_attn", c.d);
      add_norm(out, p + ".ln_ffn", c.d);
      add_ffn(out, p + ".ffn", c.d, c.ffn_hidden);
    }
  }
  add_norm(out, "heads.norm", c.d);
  add_linear(out, "heads.location.fc1", 3 * c.d, c.head_hidden);
  add_linear(out, "heads.location.fc2", c.head_hidden, 3);
  add_linear(out, "heads.dimension.fc1", 3 * c.d, c.head_hidden);
  add_linear(out, "heads.dimension.fc2", c.head_hidden, 3);
  add_linear(out, "heads.yaw.fc1", c.d, c.head_hidden);
  add_linear(out, "heads.yaw.fc2", c.head_hidden, 1);
  add_linear(out, "direction.fc1", c.d, c.head_hidden);
  add_linear(out, "direction.fc2", c.head_hidden, 2);
  return out;
}

std::size_t parameter_count(const ModelConfig& config) {
  std::size_t n = 0;
  for (const auto& [name, shape] : parameter_shapes(config)) n += shape_numel(shape);
  return n;
}

CatModel::CatModel(const ModelConfig& config, Rng& rng) : config_(config) {
  for (auto& [name, shape] : parameter_shapes(config_)) {
    const std::size_t n = shape_numel(shape);
    std::vector<double> values(n, 0.0);
    if (name == "box_tokens") {
      std::normal_distribution<double> normal(0.0, 0.02);
      for (double& v : values) v = normal(rng);
    } else if (ends_with(name, ".weight")) {
      const double a = 1.0 / std::sqrt(static_cast<double>(shape[0]));
      for (double& v : values) v = uniform(rng, -a, a);
    } else if (ends_with(name, ".gain")) {
      std::fill(values.begin(), values.end(), 1.0);
    }
    index_.emplace(name, params_.size());
    params_.push_back({name, Tensor::from(shape, std::move(values), true)});
  }
}

const Tensor& CatModel::param(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorKind::MissingKey, "no parameter named " + name);
  return params_[it->second].tensor;
}

AttentionParams CatModel::attention(const std::string& prefix) const {
  auto w = [&](const char* proj) { return param(prefix + "." + proj + ".weight"); };
  auto b = [&](const char* proj) { return param(prefix + "." + proj + ".bias"); };
  return {w("q_proj"), b("q_proj"), w("k_proj"), b("k_proj"),
          w("v_proj"), b("v_proj"), w("out_proj"), b("out_proj")};
}

Tensor CatModel::mlp2(const std::string& prefix, const Tensor& x) const {
  const Tensor h = relu(linear(x, param(prefix + ".fc1.weight"), param(prefix + ".fc1.bias")));
  return linear(h, param(prefix + ".fc2.weight"), param(prefix + ".fc2.bias"));
}

Tensor CatModel::encoder_layer(const std::string& prefix, const Tensor& x, bool order_invariant,
                               std::vector<Tensor>* weights) const {
  const Tensor n1 = layer_norm(x, param(prefix + ".ln1.gain"), param(prefix + ".ln1.bias"));
  auto att = multi_head_attention(n1, n1, n1, config_.heads, attention(prefix + ".attn"),
                                  order_invariant);
  if (weights) weights->push_back(att.weights);
  const Tensor h = add(x, att.out);
  const Tensor n2 = layer_norm(h, param(prefix + ".ln2.gain"), param(prefix + ".ln2.bias"));
  return add(h, mlp2(prefix + ".ffn", n2));
}

Tensor CatModel::embed_points(const Tensor& points) const {
  if (points.rank() != 3 || points.dim(2) != 3) {
    throw Error(ErrorKind::ShapeMismatch,
                "points must have shape (B, N, 3), got " + shape_str(points.shape()));
  }
  Tensor h = relu(linear(points, param("embed.fc0.weight"), param("embed.fc0.bias")));
  h = relu(linear(h, param("embed.fc1.weight"), param("embed.fc1.bias")));
  return linear(h, param("embed.fc2.weight"), param("embed.fc2.bias"));
}

Tensor CatModel::positional_encode(const Tensor& points) const {
  if (points.rank() != 3 || points.dim(2) != 3) {
    throw Error(ErrorKind::ShapeMismatch,
                "points must have shape (B, N, 3), got " + shape_str(points.shape()));
  }
  switch (config_.pos_mode) {
    case PosMode::Mlp: {
      const Tensor h = relu(linear(points, param("pos.fc0.weight"), param("pos.fc0.bias")));
      return linear(h, param("pos.fc1.weight"), param("pos.fc1.bias"));
    }
    case PosMode::Sine: {
      // Frequencies pi * 2^k / 8 cover wavelengths from 16 m down to 12.5 cm.
      const std::size_t rows = points.numel() / 3;
      const std::size_t width = 3 * 2 * kSineFrequencies;
      std::vector<double> feat(rows * width);
      const auto p = points.data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < 3; ++c)
          for (std::size_t k = 0; k < kSineFrequencies; ++k) {
            const double w = std::numbers::pi * std::ldexp(1.0, static_cast<int>(k)) / 8.0;
            const std::size_t base = r * width + (c * kSineFrequencies + k) * 2;
            feat[base] = std::sin(w * p[r * 3 + c]);
            feat[base + 1] = std::cos(w * p[r * 3 + c]);
          }
      const Tensor enc = Tensor::from({points.dim(0), points.dim(1), width}, std::move(feat));
      return linear(enc, param("pos.proj.weight"), param("pos.proj.bias"));
    }
    case PosMode::None:
      return Tensor::zeros({points.dim(0), points.dim(1), config_.d});
  }
  throw Error(ErrorKind::InvalidMode, "unknown positional mode");
}

Tensor CatModel::forward_local(const Tensor& features, AttentionTrace* trace) const {
  const Tensor tokens = expand_leading(param("box_tokens"), features.dim(0));
  Tensor x = concat({tokens, features}, 1);
  for (std::size_t i = 0; i < config_.n_local_layers; ++i) {
    x = encoder_layer("local_enc.layer" + std::to_string(i), x, false,
                      trace ? &trace->local : nullptr);
  }
  return x;
}

Tensor CatModel::forward_global(const Tensor& features, AttentionTrace* trace) const {
  // Sorted key sums make each object's result independent of batch order.
  Tensor x = transpose_batch_seq(features);
  for (std::size_t i = 0; i < config_.n_global_layers; ++i) {
    x = encoder_layer("global_enc.layer" + std::to_string(i), x, true,
                      trace ? &trace->global : nullptr);
  }
  return transpose_batch_seq(x);
}

Tensor CatModel::forward_decoder(const Tensor& encoded, AttentionTrace* trace) const {
  const std::size_t n = encoded.dim(1) - kBoxTokens;
  Tensor t = slice(encoded, 1, 0, kBoxTokens);
  const Tensor points = slice(encoded, 1, kBoxTokens, n);
  for (std::size_t i = 0; i < config_.n_decoder_layers; ++i) {
    const std::string p = "decoder.layer" + std::to_string(i);
    auto ln = [&](const std::string& name, const Tensor& x) {
      return layer_norm(x, param(p + "." + name + ".gain"), param(p + "." + name + ".bias"));
    };
    const Tensor s = ln("ln_self", t);
    auto self = multi_head_attention(s, s, s, config_.heads, attention(p + ".self_attn"));
    t = add(t, self.out);
    const Tensor mem = ln("ln_memory", points);
    auto cross = multi_head_attention(ln("ln_cross", t), mem, mem, config_.heads,
                                      attention(p + ".cross_attn"));
    t = add(t, cross.out);
    t = add(t, mlp2(p + ".ffn", ln("ln_ffn", t)));
    if (trace) {
      trace->decoder_self.push_back(self.weights);
      trace->decoder_cross.push_back(cross.weights);
    }
  }
  return t;
}

Tensor CatModel::regress_box(const Tensor& decoded) const {
  const std::size_t B = decoded.dim(0), d = config_.d;
  const Tensor h = layer_norm(decoded, param("heads.norm.gain"), param("heads.norm.bias"));
  auto head = [&](const std::string& name, const Tensor& in) {
    const Tensor z = leaky_relu(
        linear(in, param("heads." + name + ".fc1.weight"), param("heads." + name + ".fc1.bias")));
    return linear(z, param("heads." + name + ".fc2.weight"), param("heads." + name + ".fc2.bias"));
  };
  const Tensor loc = head("location", reshape(slice(h, 1, 0, 3), {B, 3 * d}));
  const Tensor dim = head("dimension", reshape(slice(h, 1, 3, 3), {B, 3 * d}));
  const Tensor yaw = head("yaw", reshape(slice(h, 1, 6, 1), {B, d}));
  return concat({loc, dim, yaw}, 1);
}

Tensor CatModel::classify_direction(const Tensor& decoded) const {
  const std::size_t B = decoded.dim(0), d = config_.d;
  const Tensor h = layer_norm(decoded, param("heads.norm.gain"), param("heads.norm.bias"));
  const Tensor tok = reshape(slice(h, 1, 6, 1), {B, d});
  const Tensor z = leaky_relu(linear(tok, param("direction.fc1.weight"), param("direction.fc1.bias")));
  return linear(z, param("direction.fc2.weight"), param("direction.fc2.bias"));
}

ForwardOutput CatModel::forward(const Tensor& points, bool capture_attention) const {
  ForwardOutput out;
  AttentionTrace trace;
  AttentionTrace* tp = capture_attention ? &trace : nullptr;
  Tensor x = embed_points(points);
  if (config_.pos_mode != PosMode::None) x = add(x, positional_encode(points));
  x = forward_local(x, tp);
  if (config_.use_global) x = forward_global(x, tp);
  const Tensor decoded =
      config_.use_decoder ? forward_decoder(x, tp) : slice(x, 1, 0, kBoxTokens);
  out.boxes = regress_box(decoded);
  out.direction_logits = classify_direction(decoded);
  if (capture_attention) out.trace = std::move(trace);
  return out;
}

geom::Box3D decode_prediction(const double* raw, const double* logits,
                              const geom::Point3& centroid) {
  geom::Box3D b;
  b.cx = centroid.x + raw[0];
  b.cy = centroid.y + raw[1];
  b.cz = centroid.z + raw[2];
  b.width = std::exp(raw[3]);
  b.length = std::exp(raw[4]);
  b.height = std::exp(raw[5]);
  double yaw = geom::wrap_half_angle(raw[6]);
  if (logits[1] > logits[0]) yaw = geom::wrap_angle(yaw + std::numbers::pi);
  b.yaw = yaw;
  return b;
}

AttentionRanking export_attention(const AttentionTrace& trace, std::size_t layer,
                                  std::size_t object_index, std::size_t reference_index,
                                  std::size_t top_k) {
  if (layer >= trace.local.size()) {
    throw Error(ErrorKind::IndexOutOfRange, "local layer " + std::to_string(layer) + " of " +
                                                std::to_string(trace.local.size()));
  }
  const Tensor& w = trace.local[layer];  // [B, h, L, L]
  const std::size_t B = w.dim(0), H = w.dim(1), L = w.dim(2);
  if (object_index >= B) {
    throw Error(ErrorKind::IndexOutOfRange, "object " + std::to_string(object_index) + " of " +
                                                std::to_string(B));
  }
  if (reference_index >= L) {
    throw Error(ErrorKind::IndexOutOfRange, "sequence position " +
                                                std::to_string(reference_index) + " of " +
                                                std::to_string(L));
  }
  std::vector<double> row(L, 0.0);
  const auto wd = w.data();
  for (std::size_t h = 0; h < H; ++h) {
    const double* src = wd.data() + ((object_index * H + h) * L + reference_index) * L;
    for (std::size_t j = 0; j < L; ++j) row[j] += src[j];
  }
  for (double& v : row) v /= static_cast<double>(H);

  AttentionRanking r;
  r.row_sum = std::accumulate(row.begin(), row.end(), 0.0);
  r.indices.resize(L);
  std::iota(r.indices.begin(), r.indices.end(), 0);
  std::stable_sort(r.indices.begin(), r.indices.end(),
                   [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
  r.indices.resize(std::min(top_k, L));
  for (std::size_t i : r.indices) r.scores.push_back(row[i]);
  return r;
}

}  // namespace cat::model
