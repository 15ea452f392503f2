#include "bevmem/model.hpp"

BEVMEM_NS_BEGIN

std::vector<Param*> ModelParams::all() {
  std::vector<Param*> out;
  out.push_back(&stem1.w);
  out.push_back(&stem1.b);
  out.push_back(&stem2.w);
  out.push_back(&stem2.b);
  if (cfg.temporal) append_fusion_params(fusion, out);
  out.push_back(&head.w);
  out.push_back(&head.b);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::named_tensors() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  auto& self = const_cast<ModelParams&>(*this);
  for (Param* p : self.all()) out.emplace_back(p->name, &p->value);
  return out;
}

ModelParams init_model_params(std::uint64_t seed, const ModelConfig& cfg) {
  cfg.validate();
  ModelParams p;
  p.cfg = cfg;
  Rng rng(mix_seed(seed, 0x7374656dULL));
  p.stem1 = init_conv_layer(rng, "stem.1", cfg.channels, cfg.obs_channels, 3, 1, 1);
  p.stem2 = init_conv_layer(rng, "stem.2", cfg.channels, cfg.channels, 3, 1, 1);
  if (cfg.temporal) p.fusion = init_fusion_params(seed, cfg.fusion_config());
  p.head = init_conv_layer(rng, "head", cfg.num_classes, cfg.channels, 1, 1, 1);
  return p;
}

namespace {

Tape::Id stem_forward(Tape& tape, ModelParams& p, Tape::Id obs) {
  Tape::Id x = tape.conv2d(obs, tape.param(p.stem1.w), tape.param(p.stem1.b), 1, 1);
  x = tape.relu(x);
  x = tape.conv2d(x, tape.param(p.stem2.w), tape.param(p.stem2.b), 1, 1);
  return tape.relu(x);
}

}  // namespace

Tensor stem_forward_value(const ModelParams& params, const Tensor& obs) {
  Tape tape(false);
  auto& p = const_cast<ModelParams&>(params);
  return tape.val(stem_forward(tape, p, tape.leaf(obs)));
}

ForwardResult forward_frame(Tape& tape, const ObservationFrame& obs, const WorkingMemory* wm,
                            ModelParams& params) {
  const ModelConfig& cfg = params.cfg;
  if (obs.observation.c() != cfg.obs_channels || obs.observation.h() != cfg.grid.h_cells ||
      obs.observation.w() != cfg.grid.w_cells)
    throw ShapeError("forward_frame: observation " + shape_str(obs.observation.shape) +
                     " does not match config");

  const Tape::Id f_bev = stem_forward(tape, params, tape.leaf(obs.observation));

  ForwardResult r;
  if (!cfg.temporal) {
    r.fused = f_bev;
    r.logits = tape.conv2d(f_bev, tape.param(params.head.w), tape.param(params.head.b), 1, 1);
    return r;
  }

  if (!wm) throw std::logic_error("forward_frame: temporal mode needs a working memory");
  if (wm->capacity() != cfg.t_wm)
    throw ShapeError("forward_frame: working memory capacity mismatch");

  Tape::Id h_feat = Tape::kNone;
  if (cfg.use_heatmap) h_feat = heatmap_features(tape, wm->heatmap(), params.fusion);
  r.fused = fuse(tape, wm->stacked(), h_feat, f_bev, params.fusion);
  r.logits = tape.conv2d(r.fused, tape.param(params.head.w), tape.param(params.head.b), 1, 1);
  return r;
}

Tape::Id focal_loss(Tape& tape, Tape::Id logits, const std::vector<std::uint8_t>& labels,
                    const FocalOptions& opt) {
  return tape.focal_loss(logits, labels, opt.gamma, opt.alpha, opt.lambda1);
}

BEVMEM_NS_END
