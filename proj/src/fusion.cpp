#include "bevmem/fusion.hpp"

BEVMEM_NS_BEGIN

ConvLayer init_conv_layer(Rng& rng, const std::string& name, int out_ch, int in_ch, int k,
                          int dil_h, int dil_w) {
  ConvLayer layer;
  layer.k = k;
  layer.dil_h = dil_h;
  layer.dil_w = dil_w;
  layer.w = Param(name + ".w", Tensor({out_ch, in_ch, k, k}));
  layer.b = Param(name + ".b", Tensor({out_ch}));
  const double bound = std::sqrt(1.0 / (static_cast<double>(in_ch) * k * k));
  for (real& v : layer.w.value.v) v = static_cast<real>(rng.uniform(-bound, bound));
  return layer;
}

FusionParams init_fusion_params(std::uint64_t seed, const FusionConfig& cfg) {
  FusionParams p;
  p.cfg = cfg;
  Rng rng(mix_seed(seed, 0x46555345));  // fusion param stream
  if (cfg.heatmap_branch) {
    p.conv_h.push_back(init_conv_layer(rng, "conv_h.1", 16, 1, 3, 1, 1));
    p.conv_h.push_back(init_conv_layer(rng, "conv_h.2", 16, 16, 3, 1, 1));
    p.conv_h.push_back(init_conv_layer(rng, "conv_h.3", cfg.c_h, 16, 1, 1, 1));
  }
  const int c_in = cfg.mem_in_channels();
  p.conv_mem.push_back(
      init_conv_layer(rng, "conv_mem.1", cfg.channels, c_in, 3, cfg.dil_h, cfg.dil_w));
  p.conv_mem.push_back(
      init_conv_layer(rng, "conv_mem.2", cfg.channels, cfg.channels, 3, cfg.dil_h, cfg.dil_w));
  p.conv_mem.push_back(
      init_conv_layer(rng, "conv_mem.3", cfg.channels, cfg.channels, 3, cfg.dil_h, cfg.dil_w));
  p.ln_gain = Param("ln.gain", Tensor::full({cfg.channels}, real(1)));
  p.ln_bias = Param("ln.bias", Tensor({cfg.channels}));
  return p;
}

Tape::Id heatmap_features(Tape& tape, const OverlapHeatmap& h, FusionParams& p) {
  if (!p.cfg.heatmap_branch)
    throw std::logic_error("heatmap_features: heatmap branch is disabled in this config");
  if (h.map.c() != 1) throw ShapeError("heatmap_features: heatmap must be 1 x H x W");
  Tape::Id x = tape.leaf(h.map);
  for (std::size_t i = 0; i < p.conv_h.size(); ++i) {
    ConvLayer& l = p.conv_h[i];
    x = tape.conv2d(x, tape.param(l.w), tape.param(l.b), l.dil_h, l.dil_w);
    if (i + 1 < p.conv_h.size()) x = tape.relu(x);
  }
  return tape.sigmoid(x);
}

Tape::Id fuse(Tape& tape, const Tensor& wm_stacked, Tape::Id h_feat, Tape::Id f_bev,
              FusionParams& p) {
  const FusionConfig& cfg = p.cfg;
  if (wm_stacked.c() != cfg.t_wm * cfg.channels)
    throw ShapeError("fuse: stacked memory has " + std::to_string(wm_stacked.c()) +
                     " channels, config expects " + std::to_string(cfg.t_wm * cfg.channels));
  if (tape.val(f_bev).c() != cfg.channels)
    throw ShapeError("fuse: current BEV feature has " + std::to_string(tape.val(f_bev).c()) +
                     " channels, config expects " + std::to_string(cfg.channels));
  std::vector<Tape::Id> parts;
  parts.push_back(tape.leaf(wm_stacked));
  if (cfg.heatmap_branch) {
    if (h_feat == Tape::kNone) throw std::logic_error("fuse: missing heatmap feature");
    if (tape.val(h_feat).c() != cfg.c_h)
      throw ShapeError("fuse: heatmap feature has " + std::to_string(tape.val(h_feat).c()) +
                       " channels, config expects " + std::to_string(cfg.c_h));
    parts.push_back(h_feat);
  }
  parts.push_back(f_bev);
  Tape::Id x = tape.concat(parts);
  for (ConvLayer& l : p.conv_mem) {
    x = tape.conv2d(x, tape.param(l.w), tape.param(l.b), l.dil_h, l.dil_w);
    x = tape.relu(x);
  }
  return tape.layer_norm(x, tape.param(p.ln_gain), tape.param(p.ln_bias));
}

void append_fusion_params(FusionParams& p, std::vector<Param*>& out) {
  for (ConvLayer& l : p.conv_h) {
    out.push_back(&l.w);
    out.push_back(&l.b);
  }
  for (ConvLayer& l : p.conv_mem) {
    out.push_back(&l.w);
    out.push_back(&l.b);
  }
  out.push_back(&p.ln_gain);
  out.push_back(&p.ln_bias);
}

BEVMEM_NS_END
