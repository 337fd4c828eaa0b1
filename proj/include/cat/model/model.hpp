#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cat/common/config.hpp"
#include "cat/common/rng.hpp"
#include "cat/geometry/types.hpp"
#include "cat/tensor/ops.hpp"
#include "cat/tensor/tensor.hpp"

namespace cat::model {

using tensor::Shape;
using tensor::Tensor;

enum class PosMode { None, Sine, Mlp };

std::string to_string(PosMode mode);
PosMode parse_pos_mode(const std::string& text);

inline constexpr std::size_t kBoxTokens = 7;
inline constexpr std::size_t kSineFrequencies = 8;

struct ModelConfig {
  std::size_t d = 64;
  std::size_t n_points = 128;
  std::size_t n_local_layers = 2;
  std::size_t n_global_layers = 1;
  std::size_t n_decoder_layers = 1;
  std::size_t heads = 4;
  std::size_t head_hidden = 128;
  std::size_t ffn_hidden = 128;
  bool use_global = true;
  bool use_decoder = true;
  PosMode pos_mode = PosMode::Mlp;

  static ModelConfig large();
  static ModelConfig desk();

  // Throws InvalidConfig (or HeadDivisibility) when the config cannot be built.
  void validate() const;

  // Returns false when `key` is not a model setting.
  bool set(const std::string& key, const std::string& value);
  KeyValues to_key_values() const;
  std::string to_text() const;
  static ModelConfig from_text(const std::string& text);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Names and shapes of every parameter in construction order.
std::vector<std::pair<std::string, Shape>> parameter_shapes(const ModelConfig& config);
std::size_t parameter_count(const ModelConfig& config);

struct AttentionTrace {
  std::vector<Tensor> local;          // per layer [B, heads, N+7, N+7]
  std::vector<Tensor> global;         // per layer [N+7, heads, B, B]
  std::vector<Tensor> decoder_self;   // per layer [B, heads, 7, 7]
  std::vector<Tensor> decoder_cross;  // per layer [B, heads, 7, N]
};

struct ForwardOutput {
  Tensor boxes;             // [B, 7]: centroid offset, log dimensions, yaw
  Tensor direction_logits;  // [B, 2]: front, back
  std::optional<AttentionTrace> trace;
};

class CatModel {
 public:
  CatModel(const ModelConfig& config, Rng& rng);

  const ModelConfig& config() const { return config_; }
  tensor::ParameterList& parameters() { return params_; }
  const tensor::ParameterList& parameters() const { return params_; }
  const Tensor& param(const std::string& name) const;

  ForwardOutput forward(const Tensor& points, bool capture_attention = false) const;

  // Stages of forward(), exposed for inspection.
  Tensor embed_points(const Tensor& points) const;
  Tensor positional_encode(const Tensor& points) const;
  Tensor forward_local(const Tensor& features, AttentionTrace* trace = nullptr) const;
  Tensor forward_global(const Tensor& features, AttentionTrace* trace = nullptr) const;
  Tensor forward_decoder(const Tensor& encoded, AttentionTrace* trace = nullptr) const;
  Tensor regress_box(const Tensor& decoded) const;
  Tensor classify_direction(const Tensor& decoded) const;

 private:
  Tensor mlp2(const std::string& prefix, const Tensor& x) const;
  Tensor encoder_layer(const std::string& prefix, const Tensor& x, bool order_invariant,
                       std::vector<Tensor>* weights) const;
  tensor::AttentionParams attention(const std::string& prefix) const;

  ModelConfig config_;
  tensor::ParameterList params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Raw [7] prediction to a box: center = centroid + offset, dimensions = exp,
// yaw folded to [-pi/2, pi/2) and turned by pi when the classifier says back.
geom::Box3D decode_prediction(const double* raw, const double* logits,
                              const geom::Point3& centroid);

struct AttentionRanking {
  std::vector<std::size_t> indices;  // sequence positions, 0..6 are box tokens
  std::vector<double> scores;        // non-increasing
  double row_sum = 0.0;              // before truncation
};

// Head-averaged attention row of `reference_index` in local layer `layer`
// for object `object_index`, sorted by score and cut to `top_k`.
AttentionRanking export_attention(const AttentionTrace& trace, std::size_t layer,
                                  std::size_t object_index, std::size_t reference_index,
                                  std::size_t top_k);

}  // namespace cat::model
