#include "cva/attention.hpp"

#include <stdexcept>

namespace cva {

RegionFeatureMap::RegionFeatureMap(Tensor v) : v_(std::move(v)) {
  if (v_.rank() != 2) throw ShapeError("region feature map must be K x D", v_.shape(), Shape{0, 0});
  require_finite(v_, "region feature map");
}

SpatialFusion parse_fusion(const std::string& name) {
  if (name == "literal") return SpatialFusion::Literal;
  if (name == "joint") return SpatialFusion::Joint;
  throw std::invalid_argument("unknown spatial fusion '" + name + "' (valid: literal, joint)");
}

std::string to_string(SpatialFusion f) { return f == SpatialFusion::Literal ? "literal" : "joint"; }

ChannelScale parse_channel_scale(const std::string& name) {
  if (name == "plain") return ChannelScale::Plain;
  if (name == "dimension") return ChannelScale::Dimension;
  throw std::invalid_argument("unknown channel scale '" + name + "' (valid: plain, dimension)");
}

std::string to_string(ChannelScale s) { return s == ChannelScale::Plain ? "plain" : "dimension"; }

Variant parse_variant(const std::string& name) {
  if (name == "ca") return Variant::CA;
  if (name == "ra") return Variant::RA;
  if (name == "cva") return Variant::CVA;
  if (name == "cva-v" || name == "r-cva") return Variant::CVA_V;
  throw std::invalid_argument("unknown variant '" + name + "' (valid: ca, ra, cva, cva-v)");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::CA: return "ca";
    case Variant::RA: return "ra";
    case Variant::CVA: return "cva";
    case Variant::CVA_V: return "cva-v";
  }
  return "?";
}

std::string table_label(Variant v) {
  switch (v) {
    case Variant::CA: return "CA";
    case Variant::RA: return "RA";
    case Variant::CVA: return "CVA";
    case Variant::CVA_V: return "R-CVA";
  }
  return "?";
}

bool uses_channel(Variant v) { return v != Variant::RA; }
bool uses_spatial(Variant v) { return v != Variant::CA; }

ChannelAttentionParams ChannelAttentionParams::create(ParameterStore& store, const AttentionDims& d, Rng& rng) {
  ChannelAttentionParams c;
  c.w_vc = store.add("channel.w_vc", init_uniform({d.channels}, 1, 1, rng));
  c.b_vc = store.add("channel.b_vc", Tensor(Shape{d.channels}));
  c.W_qc = store.add("channel.W_qc", init_uniform({d.hidden, d.question}, d.question, d.hidden, rng));
  c.b_qc = store.add("channel.b_qc", Tensor(Shape{d.hidden}));
  c.w_c = store.add("channel.w_c", init_uniform({d.hidden}, d.hidden, 1, rng));
  c.b_c = store.add("channel.b_c", Tensor::scalar(0.0));
  return c;
}

SpatialAttentionParams SpatialAttentionParams::create(ParameterStore& store, const AttentionDims& d, Rng& rng) {
  SpatialAttentionParams s;
  s.W_vo = store.add("spatial.W_vo", init_uniform({d.hidden, d.channels}, d.channels, d.hidden, rng));
  s.b_vo = store.add("spatial.b_vo", Tensor(Shape{d.hidden}));
  s.W_qo = store.add("spatial.W_qo", init_uniform({d.hidden, d.question}, d.question, d.hidden, rng));
  s.b_qo = store.add("spatial.b_qo", Tensor(Shape{d.hidden}));
  s.w_o = store.add("spatial.w_o", init_uniform({d.hidden}, d.hidden, 1, rng));
  s.b_o = store.add("spatial.b_o", Tensor::scalar(0.0));
  return s;
}

ad::Var channel_mean_pool(ad::Var V) { return ad::mean_rows(V); }

ad::Var channel_attention(Bound& p, const ChannelAttentionParams& c, ad::Var u_mean, ad::Var Q) {
  using namespace ad;
  const Var cv = add(mul(p(c.w_vc), u_mean), p(c.b_vc));
  const Var cq = affine(p(c.W_qc), Q, p(c.b_qc));
  const Var B = tanh(outer(cv, cq));
  return softmax(add_scalar(affine(B, p(c.w_c)), p(c.b_c)));
}

ad::Var apply_channel_weights(ad::Var beta, ad::Var V) { return ad::mul_row(V, beta); }

ad::Var channel_gain(ad::Var beta, ChannelScale scale) {
  if (scale == ChannelScale::Plain) return beta;
  Tensor d = Tensor::zeros_like(beta.value());
  d.fill(static_cast<double>(d.size()));
  return ad::mask_mul(beta, std::move(d));
}

ad::Var spatial_attention(Bound& p, const SpatialAttentionParams& s, ad::Var Vc, ad::Var Q, SpatialFusion fusion) {
  using namespace ad;
  const Var visual = affine(p(s.W_vo), Vc, p(s.b_vo));
  const Var question = affine(p(s.W_qo), Q, p(s.b_qo));
  const Var a = fusion == SpatialFusion::Literal ? add_row(tanh(visual), question) : tanh(add_row(visual, question));
  return softmax(add_scalar(affine(a, p(s.w_o)), p(s.b_o)));
}

ad::Var apply_spatial_weights(ad::Var eta, ad::Var Vc) {
  return ad::weighted_sum_rows(eta, Vc, 1.0 / static_cast<double>(Vc.value().rows()));
}

namespace {

const ChannelAttentionParams& need_channel(const AttentionParams& a) {
  if (!a.channel) throw std::invalid_argument("variant requires channel-attention parameters");
  return *a.channel;
}

const SpatialAttentionParams& need_spatial(const AttentionParams& a) {
  if (!a.spatial) throw std::invalid_argument("variant requires spatial-attention parameters");
  return *a.spatial;
}

}  // namespace

AttentionOutput cva_forward(Bound& p, const AttentionParams& a, ad::Var V, ad::Var Q) {
  const auto beta = channel_attention(p, need_channel(a), channel_mean_pool(V), Q);
  const auto Vc = apply_channel_weights(channel_gain(beta, a.channel_scale), V);
  const auto eta = spatial_attention(p, need_spatial(a), Vc, Q, a.fusion);
  return {apply_spatial_weights(eta, Vc), beta, eta};
}

AttentionOutput cva_v_forward(Bound& p, const AttentionParams& a, ad::Var V, ad::Var Q) {
  const auto eta = spatial_attention(p, need_spatial(a), V, Q, a.fusion);
  const auto Vs_map = ad::scale_rows(V, eta);
  const auto beta = channel_attention(p, need_channel(a), channel_mean_pool(Vs_map), Q);
  const auto Vc_map = apply_channel_weights(channel_gain(beta, a.channel_scale), Vs_map);
  return {ad::mean_rows(Vc_map), beta, eta};
}

AttentionOutput ca_only_forward(Bound& p, const AttentionParams& a, ad::Var V, ad::Var Q) {
  const auto beta = channel_attention(p, need_channel(a), channel_mean_pool(V), Q);
  return {ad::mean_rows(apply_channel_weights(channel_gain(beta, a.channel_scale), V)), beta, std::nullopt};
}

AttentionOutput ra_only_forward(Bound& p, const AttentionParams& a, ad::Var V, ad::Var Q) {
  const auto eta = spatial_attention(p, need_spatial(a), V, Q, a.fusion);
  return {apply_spatial_weights(eta, V), std::nullopt, eta};
}

AttentionOutput attend(Variant variant, Bound& p, const AttentionParams& a, ad::Var V, ad::Var Q) {
  switch (variant) {
    case Variant::CA: return ca_only_forward(p, a, V, Q);
    case Variant::RA: return ra_only_forward(p, a, V, Q);
    case Variant::CVA: return cva_forward(p, a, V, Q);
    case Variant::CVA_V: return cva_v_forward(p, a, V, Q);
  }
  throw std::invalid_argument("unknown variant");
}

Tensor channel_mean_pool(const RegionFeatureMap& V) { return mean_over_rows(V.matrix()); }

ChannelWeights channel_attention(const ParameterStore& store, const ChannelAttentionParams& c, const Tensor& u_mean,
                                 const Tensor& Q) {
  ad::Tape tape;
  Bound p(tape, store);
  return {channel_attention(p, c, tape.constant(u_mean), tape.constant(Q)).value()};
}

Tensor apply_channel_weights(const Tensor& beta, const Tensor& V) {
  ad::Tape tape;
  return apply_channel_weights(tape.constant(beta), tape.constant(V)).value();
}

SpatialWeights spatial_attention(const ParameterStore& store, const SpatialAttentionParams& s, const Tensor& Vc,
                                 const Tensor& Q, SpatialFusion fusion) {
  ad::Tape tape;
  Bound p(tape, store);
  return {spatial_attention(p, s, tape.constant(Vc), tape.constant(Q), fusion).value()};
}

Tensor apply_spatial_weights(const Tensor& eta, const Tensor& Vc) {
  ad::Tape tape;
  return apply_spatial_weights(tape.constant(eta), tape.constant(Vc)).value();
}

PipelineResult run_attention(Variant variant, const ParameterStore& store, const AttentionParams& a,
                             const RegionFeatureMap& V, const Tensor& Q) {
  ad::Tape tape;
  Bound p(tape, store);
  const auto out = attend(variant, p, a, tape.constant(V.matrix()), tape.constant(Q));
  PipelineResult r{out.output.value(), std::nullopt, std::nullopt};
  if (out.beta) r.beta = ChannelWeights{out.beta->value()};
  if (out.eta) r.eta = SpatialWeights{out.eta->value()};
  return r;
}

}  // namespace cva
