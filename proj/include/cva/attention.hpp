#pragma once

#include <optional>
#include <string>

#include "cva/params.hpp"

namespace cva {

/// K x D matrix of object-region features, one region per row.
class RegionFeatureMap {
 public:
  explicit RegionFeatureMap(Tensor v);
  std::size_t regions() const { return v_.rows(); }
  std::size_t channels() const { return v_.cols(); }
  const Tensor& matrix() const { return v_; }

 private:
  Tensor v_;
};

/// Attention distribution over the D channels.
struct ChannelWeights {
  Tensor beta;
};

/// Attention distribution over the K regions.
struct SpatialWeights {
  Tensor eta;
};

/// How the question enters the region scorer.
///   literal: a_k = tanh(W_vo v_k + b_vo) + (W_qo Q + b_qo)
///   joint:   a_k = tanh(W_vo v_k + b_vo + W_qo Q + b_qo)
/// Under `literal` the question term is the same for every region, so it
/// cancels in the softmax and the region weights do not depend on Q.
enum class SpatialFusion { Literal, Joint };

SpatialFusion parse_fusion(const std::string& name);
std::string to_string(SpatialFusion f);

/// What multiplies the feature map in the stacked pipelines.
///   plain:     beta
///   dimension: D * beta, so uniform channel attention is the identity
enum class ChannelScale { Plain, Dimension };

ChannelScale parse_channel_scale(const std::string& name);
std::string to_string(ChannelScale s);

enum class Variant { CA, RA, CVA, CVA_V };

/// Accepts ca, ra, cva, cva-v (and r-cva). Throws invalid_argument otherwise.
Variant parse_variant(const std::string& name);
std::string to_string(Variant v);
/// Table label: CA, RA, CVA, R-CVA.
std::string table_label(Variant v);
bool uses_channel(Variant v);
bool uses_spatial(Variant v);

struct AttentionDims {
  std::size_t channels = 32;  // D
  std::size_t question = 64;  // H
  std::size_t hidden = 32;    // h_a
};

/// c_v = w_vc * u + b_vc; c_q = W_qc Q + b_qc; B = tanh(c_v (x) c_q);
/// beta = softmax(B w_c + b_c).
struct ChannelAttentionParams {
  ParamId w_vc, b_vc, W_qc, b_qc, w_c, b_c;
  static ChannelAttentionParams create(ParameterStore& store, const AttentionDims& dims, Rng& rng);
};

/// eta = softmax(a w_o + b_o) with a from SpatialFusion.
struct SpatialAttentionParams {
  ParamId W_vo, b_vo, W_qo, b_qo, w_o, b_o;
  static SpatialAttentionParams create(ParameterStore& store, const AttentionDims& dims, Rng& rng);
};

struct AttentionParams {
  std::optional<ChannelAttentionParams> channel;
  std::optional<SpatialAttentionParams> spatial;
  SpatialFusion fusion = SpatialFusion::Literal;
  ChannelScale channel_scale = ChannelScale::Plain;
};

// Tape-level primitives.
ad::Var channel_mean_pool(ad::Var V);
ad::Var channel_attention(Bound& p, const ChannelAttentionParams& c, ad::Var u_mean, ad::Var Q);
ad::Var apply_channel_weights(ad::Var beta, ad::Var V);
/// beta as used by the pipelines under `scale`.
ad::Var channel_gain(ad::Var beta, ChannelScale scale);
ad::Var spatial_attention(Bound& p, const SpatialAttentionParams& s, ad::Var Vc, ad::Var Q, SpatialFusion fusion);
/// (1/K) sum_k eta_k v_k. The 1/K prefactor is applied on top of eta.
ad::Var apply_spatial_weights(ad::Var eta, ad::Var Vc);

struct AttentionOutput {
  ad::Var output;  // length D
  std::optional<ad::Var> beta;
  std::optional<ad::Var> eta;
};

/// Channel attention, then spatial attention on the modulated map.
AttentionOutput cva_forward(Bound& p, const AttentionParams& a, ad::Var V, ad::Var Q);
/// Spatial reweighting of rows first, then channel attention on the pooled
/// reweighted map, then one (1/K) aggregation.
AttentionOutput cva_v_forward(Bound& p, const AttentionParams& a, ad::Var V, ad::Var Q);
/// Channel attention followed by plain averaging over regions.
AttentionOutput ca_only_forward(Bound& p, const AttentionParams& a, ad::Var V, ad::Var Q);
/// Spatial attention on the raw map.
AttentionOutput ra_only_forward(Bound& p, const AttentionParams& a, ad::Var V, ad::Var Q);
AttentionOutput attend(Variant variant, Bound& p, const AttentionParams& a, ad::Var V, ad::Var Q);

// Value-level forms.
Tensor channel_mean_pool(const RegionFeatureMap& V);
ChannelWeights channel_attention(const ParameterStore& store, const ChannelAttentionParams& c, const Tensor& u_mean,
                                 const Tensor& Q);
Tensor apply_channel_weights(const Tensor& beta, const Tensor& V);
SpatialWeights spatial_attention(const ParameterStore& store, const SpatialAttentionParams& s, const Tensor& Vc,
                                 const Tensor& Q, SpatialFusion fusion);
/// `eta` may be any length-K vector (e.g. all ones), not only a distribution.
Tensor apply_spatial_weights(const Tensor& eta, const Tensor& Vc);

struct PipelineResult {
  Tensor output;
  std::optional<ChannelWeights> beta;
  std::optional<SpatialWeights> eta;
};

PipelineResult run_attention(Variant variant, const ParameterStore& store, const AttentionParams& a,
                             const RegionFeatureMap& V, const Tensor& Q);

}  // namespace cva
