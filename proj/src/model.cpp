#include "vde/model.hpp"

namespace vde {

MixCoefficients MixSetting::make() const {
  return MixCoefficients::create(alpha, beta, gamma, {learn_alpha, learn_beta, learn_gamma});
}

R2mcConfig ModelConfig::r2mc() const {
  return {relative_channels(), r2mc_width, {window, 0, r2mc_heads}, no_anchor};
}

FmmConfig ModelConfig::fmm(std::size_t index) const {
  const std::size_t incoming = index == 0 ? decoder.width : decoder.widths[index - 1];
  return {encoder.widths[2 - index], incoming, decoder.hidden[index], decoder.widths[index],
          {window, 0, decoder.heads[index]}};
}

ModelConfig toy_config() { return ModelConfig{}; }

ModelConfig paper_config() {
  ModelConfig c;
  c.encoder = {4, {128, 256, 512, 1024}, {1, 1, 9, 1}, {4, 8, 16, 32}};
  c.decoder.width = 512;
  c.decoder.widths = {256, 128, 64};
  c.decoder.hidden = {1312, 640, 320};
  c.decoder.heads = {16, 8, 4};
  c.decoder.head_heads = 6;
  c.window = 12;
  c.r2mc_width = 192;
  c.r2mc_heads = 6;
  return c;
}

EncoderParams EncoderParams::create(const EncoderConfig& cfg, std::size_t window, Rng& rng) {
  EncoderParams p;
  p.patch_embed = LinearParams::create(3 * cfg.patch * cfg.patch, cfg.widths[0], rng);
  p.patch_norm = LayerNormParams::create(cfg.widths[0]);
  for (std::size_t s = 0; s < 4; ++s) {
    auto& st = p.stages[s];
    if (s > 0) {
      st.merge_norm = LayerNormParams::create(4 * cfg.widths[s - 1]);
      st.merge = LinearParams::create(4 * cfg.widths[s - 1], cfg.widths[s], rng, false);
    }
    for (std::size_t b = 0; b < cfg.blocks[s]; ++b) {
      st.blocks.push_back(TransformerBlockParams::create(cfg.widths[s], {window, 0, cfg.heads[s]}, rng));
    }
    st.output_norm = LayerNormParams::create(cfg.widths[s]);
  }
  return p;
}

void EncoderParams::collect(const std::string& prefix, ParamList& out) const {
  patch_embed.collect(prefix + ".patch_embed", out);
  patch_norm.collect(prefix + ".patch_norm", out);
  for (std::size_t s = 0; s < 4; ++s) {
    const auto& st = stages[s];
    const std::string sp = prefix + ".stage" + std::to_string(s + 1);
    if (st.merge.weight.defined()) {
      st.merge_norm.collect(sp + ".merge_norm", out);
      st.merge.collect(sp + ".merge", out);
    }
    for (std::size_t b = 0; b < st.blocks.size(); ++b) st.blocks[b].collect(sp + ".block" + std::to_string(b), out);
    st.output_norm.collect(sp + ".output_norm", out);
  }
}

PyramidPoolParams PyramidPoolParams::create(std::size_t channels, const DecoderConfig& cfg, Rng& rng) {
  if (channels % 4 != 0) throw ShapeError("pyramid_pool: channels " + std::to_string(channels) + " not divisible by 4");
  PyramidPoolParams p;
  p.bins = cfg.bins;
  for (std::size_t i = 0; i < cfg.bins.size(); ++i) p.branches.push_back(LinearParams::create(channels, channels / 4, rng));
  p.fuse = LinearParams::create(channels + cfg.bins.size() * (channels / 4), cfg.width, rng);
  return p;
}

void PyramidPoolParams::collect(const std::string& prefix, ParamList& out) const {
  for (std::size_t i = 0; i < branches.size(); ++i) branches[i].collect(prefix + ".bin" + std::to_string(bins[i]), out);
  fuse.collect(prefix + ".fuse", out);
}

DepthHeadParams DepthHeadParams::create(std::size_t channels, std::size_t heads, std::size_t window,
                                        bool metric, Rng& rng) {
  return {TransformerBlockParams::create(channels, {window, 0, heads}, rng),
          LinearParams::create(channels, 1, rng), metric};
}

void DepthHeadParams::collect(const std::string& prefix, ParamList& out) const {
  block.collect(prefix + ".block", out);
  this->out.collect(prefix + ".out", out);
}

namespace {

std::array<FmmParams, 3> make_fmms(const ModelConfig& cfg, Rng& rng) {
  std::array<FmmParams, 3> f;
  for (std::size_t i = 0; i < 3; ++i) f[i] = FmmParams::create(cfg.fmm(i), rng, {cfg.mix.make(), cfg.mix.make()});
  return f;
}

void collect_fmms(const std::array<FmmParams, 3>& fmms, const std::string& prefix, ParamList& out) {
  for (std::size_t i = 0; i < 3; ++i) fmms[i].collect(prefix + ".fmm" + std::to_string(i + 1), out);
}

std::size_t head_channels(const ModelConfig& cfg) { return cfg.relative_channels() + cfg.encoder.widths[0]; }

}  // namespace

CrdeParams CrdeParams::create(const ModelConfig& cfg, Rng& rng, bool with_normalized_head) {
  CrdeParams p;
  p.encoder = EncoderParams::create(cfg.encoder, cfg.window, rng);
  p.pool = PyramidPoolParams::create(cfg.encoder.widths[3], cfg.decoder, rng);
  p.fmms = make_fmms(cfg, rng);
  if (with_normalized_head) {
    p.normalized_head = DepthHeadParams::create(head_channels(cfg), cfg.decoder.head_heads, cfg.window, false, rng);
  }
  return p;
}

void CrdeParams::collect(const std::string& prefix, ParamList& out) const {
  encoder.collect(prefix + ".encoder", out);
  pool.collect(prefix + ".pool", out);
  collect_fmms(fmms, prefix, out);
  if (normalized_head) normalized_head->collect(prefix + ".head", out);
}

VdeModel VdeModel::create(const ModelConfig& cfg, Rng& rng) {
  VdeModel m;
  m.config = cfg;
  Rng crde_rng = rng.split("crde");
  m.crde = CrdeParams::create(cfg, crde_rng);
  return m;
}

VdeModel VdeModel::create_direct(const ModelConfig& cfg, Rng& rng) {
  VdeModel m;
  m.config = cfg;
  Rng crde_rng = rng.split("crde");
  m.crde = CrdeParams::create(cfg, crde_rng, false);
  Rng head_rng = rng.split("direct");
  m.direct_head = DepthHeadParams::create(head_channels(cfg), cfg.decoder.head_heads, cfg.window, true, head_rng);
  return m;
}

ParamList VdeModel::parameters() const {
  ParamList out;
  crde.collect("crde", out);
  if (direct_head) direct_head->collect("direct", out);
  for (const auto& [cam, r] : r2mcs) r.collect("r2mc." + cam, out);
  return out;
}

void add_camera(VdeModel& model, const CameraId& camera, Rng& rng) {
  if (model.r2mcs.count(camera)) throw ConflictError("add_camera: camera '" + camera + "' already present");
  Rng sub = rng.split(camera);
  model.r2mcs.emplace(camera, R2mcParams::create(model.config.r2mc(), sub));
}

namespace {

std::size_t total_stride(const ModelConfig& cfg) { return cfg.encoder.patch * 8; }

std::size_t round_up(std::size_t v, std::size_t m) { return (v + m - 1) / m * m; }

Tensor pad_image(const Tensor& image, std::size_t hp, std::size_t wp) {
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (h == hp && w == wp) return image;
  std::vector<std::size_t> index(c * hp * wp, kZeroIndex);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) index[(ch * hp + y) * wp + x] = (ch * h + y) * w + x;
    }
  }
  return gather(image, std::move(index), {c, hp, wp});
}

Tensor crop_map(const Tensor& map, std::size_t h, std::size_t w) {
  const std::size_t c = map.dim(0), hp = map.dim(1), wp = map.dim(2);
  if (h == hp && w == wp) return map;
  std::vector<std::size_t> index(c * h * w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) index[(ch * h + y) * w + x] = (ch * hp + y) * wp + x;
    }
  }
  return gather(map, std::move(index), {c, h, w});
}

void check_image(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("expected a 3 x H x W image, got " + shape_to_string(image.shape()));
  }
}

}  // namespace

EncoderFeatures encoder_forward(const Tensor& image, const EncoderParams& params, const ModelConfig& cfg) {
  check_image(image);
  const std::size_t stride = total_stride(cfg);
  if (image.dim(1) % stride != 0 || image.dim(2) % stride != 0) {
    throw ShapeError("encoder: extents " + shape_to_string(image.shape()) + " not divisible by " + std::to_string(stride));
  }
  std::size_t h = image.dim(1) / cfg.encoder.patch, w = image.dim(2) / cfg.encoder.patch;
  auto x = params.patch_norm(params.patch_embed(to_tokens(pixel_unshuffle(image, cfg.encoder.patch))));
  EncoderFeatures f;
  for (std::size_t s = 0; s < 4; ++s) {
    const auto& st = params.stages[s];
    if (s > 0) {
      x = to_tokens(pixel_unshuffle(from_tokens(x, h, w), 2));
      h /= 2;
      w /= 2;
      x = st.merge(st.merge_norm(x));
    }
    for (const auto& block : st.blocks) x = transformer_block_tokens(x, h, w, block, cfg.scale_mode);
    f.stages[s] = from_tokens(st.output_norm(x), h, w);
  }
  return f;
}

Tensor pyramid_pool(const Tensor& coarsest, const PyramidPoolParams& params) {
  const std::size_t h = coarsest.dim(1), w = coarsest.dim(2);
  std::vector<Tensor> parts{coarsest};
  for (std::size_t i = 0; i < params.bins.size(); ++i) {
    auto pooled = adaptive_avg_pool(coarsest, params.bins[i]);
    const std::size_t b = params.bins[i];
    parts.push_back(bilinear_resize(from_tokens(params.branches[i](to_tokens(pooled)), b, b), h, w));
  }
  return from_tokens(params.fuse(to_tokens(concat0(parts))), h, w);
}

Tensor decode(const EncoderFeatures& features, const Tensor& pooled, const std::array<FmmParams, 3>& fmms,
              const ModelConfig& cfg) {
  auto x = pooled;
  for (std::size_t i = 0; i < 3; ++i) x = fmm_forward(features.stages[2 - i], x, fmms[i], cfg.scale_mode);
  return x;
}

Tensor depth_head(const Tensor& relative, const Tensor& e1, const DepthHeadParams& params, std::size_t height,
                  std::size_t width, const ModelConfig& cfg) {
  const std::size_t h = relative.dim(1), w = relative.dim(2);
  auto x = transformer_block_tokens(to_tokens(concat0({relative, e1})), h, w, params.block, cfg.scale_mode);
  auto y = params.out(x);
  if (params.metric) y = metric_activation(y);
  return bilinear_resize(from_tokens(y, h, w), height, width);
}

CrdeOutput crde_forward(const Tensor& image, const CrdeParams& params, const ModelConfig& cfg) {
  check_image(image);
  const std::size_t h = image.dim(1), w = image.dim(2), stride = total_stride(cfg);
  const std::size_t hp = round_up(h, stride), wp = round_up(w, stride);
  auto features = encoder_forward(pad_image(image, hp, wp), params.encoder, cfg);
  auto relative = decode(features, pyramid_pool(features.stages[3], params.pool), params.fmms, cfg);
  CrdeOutput out{relative, Tensor(), features.stages[0]};
  if (params.normalized_head) {
    out.normalized = crop_map(depth_head(relative, features.stages[0], *params.normalized_head, hp, wp, cfg), h, w);
  }
  return out;
}

Tensor metric_from_relative(const VdeModel& model, const Tensor& relative, const CameraId& camera,
                            std::size_t height, std::size_t width) {
  auto it = model.r2mcs.find(camera);
  if (it == model.r2mcs.end()) throw LookupError("unknown camera '" + camera + "'");
  auto metric = r2mc_forward(relative, it->second, model.config.scale_mode).depth;
  const std::size_t stride = total_stride(model.config);
  return crop_map(bilinear_resize(metric, round_up(height, stride), round_up(width, stride)), height, width);
}

VdeOutput vde_forward(const VdeModel& model, const Tensor& image, const CameraId& camera) {
  if (!model.r2mcs.count(camera)) throw LookupError("vde_forward: unknown camera '" + camera + "'");
  auto crde = crde_forward(image, model.crde, model.config);
  auto metric = metric_from_relative(model, crde.relative, camera, image.dim(1), image.dim(2));
  return {metric, crde.normalized, crde.relative};
}

Tensor direct_forward(const VdeModel& model, const Tensor& image) {
  if (!model.direct_head) throw LookupError("direct_forward: model has no direct metric head");
  auto crde = crde_forward(image, model.crde, model.config);
  const std::size_t stride = total_stride(model.config);
  const std::size_t hp = round_up(image.dim(1), stride), wp = round_up(image.dim(2), stride);
  return crop_map(depth_head(crde.relative, crde.e1, *model.direct_head, hp, wp, model.config), image.dim(1),
                  image.dim(2));
}

MultiDecoderModel MultiDecoderModel::create(const ModelConfig& cfg, const std::vector<CameraId>& cameras, Rng& rng) {
  MultiDecoderModel m;
  m.config = cfg;
  Rng trunk = rng.split("crde");
  m.encoder = EncoderParams::create(cfg.encoder, cfg.window, trunk);
  m.pool = PyramidPoolParams::create(cfg.encoder.widths[3], cfg.decoder, trunk);
  for (const auto& cam : cameras) {
    if (m.decoders.count(cam)) throw ConflictError("multiple decoders: duplicate camera '" + cam + "'");
    Rng sub = rng.split("decoder").split(std::string_view(cam));
    Decoder d{make_fmms(cfg, sub), DepthHeadParams::create(head_channels(cfg), cfg.decoder.head_heads, cfg.window, true, sub)};
    m.decoders.emplace(cam, std::move(d));
  }
  return m;
}

ParamList MultiDecoderModel::parameters() const {
  ParamList out;
  encoder.collect("encoder", out);
  pool.collect("pool", out);
  for (const auto& [cam, d] : decoders) {
    collect_fmms(d.fmms, "decoder." + cam, out);
    d.head.collect("decoder." + cam + ".head", out);
  }
  return out;
}

Tensor multi_decoder_forward(const MultiDecoderModel& model, const Tensor& image, const CameraId& camera) {
  auto it = model.decoders.find(camera);
  if (it == model.decoders.end()) throw LookupError("multiple decoders: unknown camera '" + camera + "'");
  check_image(image);
  const auto& cfg = model.config;
  const std::size_t h = image.dim(1), w = image.dim(2), stride = total_stride(cfg);
  const std::size_t hp = round_up(h, stride), wp = round_up(w, stride);
  auto features = encoder_forward(pad_image(image, hp, wp), model.encoder, cfg);
  auto relative = decode(features, pyramid_pool(features.stages[3], model.pool), it->second.fmms, cfg);
  return crop_map(depth_head(relative, features.stages[0], it->second.head, hp, wp, cfg), h, w);
}

ParamCounts count_params(const VdeModel& model) {
  ParamCounts c;
  ParamList list;
  model.crde.collect("crde", list);
  c.crde = count_elements(list);
  if (model.direct_head) {
    ParamList head;
    model.direct_head->collect("direct", head);
    c.direct_head = count_elements(head);
  }
  c.total = c.crde + c.direct_head;
  for (const auto& [cam, r] : model.r2mcs) {
    c.r2mc[cam] = r.count();
    c.total += c.r2mc[cam];
  }
  return c;
}

std::size_t count_params(const MultiDecoderModel& model) { return count_elements(model.parameters()); }

ShapeTrace trace_shapes(const ModelConfig& cfg, std::size_t height, std::size_t width) {
  const std::size_t stride = total_stride(cfg);
  const std::size_t hp = round_up(height, stride), wp = round_up(width, stride);
  ShapeTrace t;
  std::size_t h = hp / cfg.encoder.patch, w = wp / cfg.encoder.patch;
  for (std::size_t s = 0; s < 4; ++s) {
    if (s > 0) {
      h /= 2;
      w /= 2;
    }
    t.encoder[s] = {cfg.encoder.widths[s], h, w};
  }
  t.pooled = {cfg.decoder.width, h, w};
  for (std::size_t i = 0; i < 3; ++i) {
    h *= 2;
    w *= 2;
    t.fmm[i] = {cfg.decoder.widths[i], h, w};
  }
  t.relative = t.fmm[2];
  t.head_low = {1, h, w};
  t.output = {1, height, width};
  return t;
}

Tensor image_tensor(const Image& image) {
  return Tensor::from({3, image.height, image.width}, image.data);
}

Tensor crde_sample_loss(const VdeOutput& out, const TrainTarget& target, const LossConfig& cfg) {
  return crde_loss(out.normalized, target.normalized, cfg);
}

Tensor overall_loss(const VdeModel& model, const std::vector<const Tensor*>& images,
                    const std::vector<const TrainTarget*>& targets, const LossConfig& cfg) {
  if (images.size() != targets.size() || images.empty()) {
    throw ShapeError("overall_loss: " + std::to_string(images.size()) + " images for " +
                     std::to_string(targets.size()) + " targets");
  }
  Tensor total;
  for (std::size_t i = 0; i < images.size(); ++i) {
    auto out = vde_forward(model, *images[i], targets[i]->camera);
    auto term = add(crde_loss(out.normalized, targets[i]->normalized, cfg), silog_loss(out.metric, targets[i]->depth, cfg));
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

}  // namespace vde
