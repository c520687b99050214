#pragma once

#include <array>
#include <map>
#include <optional>
#include <vector>

#include "vde/depth.hpp"
#include "vde/fmm.hpp"
#include "vde/r2mc.hpp"
#include "vde/synth.hpp"

namespace vde {

struct EncoderConfig {
  std::size_t patch = 4;
  std::array<std::size_t, 4> widths{16, 32, 64, 128};
  std::array<std::size_t, 4> blocks{1, 1, 1, 1};  // two attention layers each
  std::array<std::size_t, 4> heads{2, 2, 2, 2};
};

struct DecoderConfig {
  std::size_t width = 128;  // pyramid pooling output
  std::vector<std::size_t> bins{1, 2, 3, 6};
  std::array<std::size_t, 3> widths{64, 32, 16};  // FMM outputs; the last is Z_R
  std::array<std::size_t, 3> hidden{64, 32, 16};
  std::array<std::size_t, 3> heads{2, 2, 2};
  std::size_t head_heads = 2;  // block over concat(Z_R, E1)
};

struct MixSetting {
  double alpha = 0.5, beta = 0.5, gamma = 0.5;
  bool learn_alpha = true, learn_beta = true, learn_gamma = true;

  MixCoefficients make() const;
};

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  std::size_t window = 4;
  MixSetting mix;
  std::size_t r2mc_width = 16;
  std::size_t r2mc_heads = 2;
  bool no_anchor = false;
  ScaleMode scale_mode = ScaleMode::head_dim;

  std::size_t relative_channels() const { return decoder.widths[2]; }
  R2mcConfig r2mc() const;
  FmmConfig fmm(std::size_t index) const;
};

/// Toy defaults for 64 x 64 inputs.
ModelConfig toy_config();
/// Swin-B-sized encoder and widened decoder used for structural checks.
ModelConfig paper_config();

struct EncoderStage {
  LayerNormParams merge_norm;  // stages 2-4: LN(4C) then a bias-free linear
  LinearParams merge;
  std::vector<TransformerBlockParams> blocks;
  LayerNormParams output_norm;
};

struct EncoderParams {
  LinearParams patch_embed;
  LayerNormParams patch_norm;
  std::array<EncoderStage, 4> stages;

  static EncoderParams create(const EncoderConfig& cfg, std::size_t window, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

struct PyramidPoolParams {
  std::vector<std::size_t> bins;
  std::vector<LinearParams> branches;  // C -> C/4 per bin
  LinearParams fuse;                   // C + bins*C/4 -> decoder width

  static PyramidPoolParams create(std::size_t channels, const DecoderConfig& cfg, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

/// concat(Z_R, E1) -> transformer block -> 1-channel linear; optional
/// exp activation for metric output.
struct DepthHeadParams {
  TransformerBlockParams block;
  LinearParams out;
  bool metric = false;

  static DepthHeadParams create(std::size_t channels, std::size_t heads, std::size_t window,
                                bool metric, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

struct CrdeParams {
  EncoderParams encoder;
  PyramidPoolParams pool;
  std::array<FmmParams, 3> fmms;
  std::optional<DepthHeadParams> normalized_head;

  static CrdeParams create(const ModelConfig& cfg, Rng& rng, bool with_normalized_head = true);
  void collect(const std::string& prefix, ParamList& out) const;
};

struct VdeModel {
  ModelConfig config;
  CrdeParams crde;
  std::map<CameraId, R2mcParams> r2mcs;
  std::optional<DepthHeadParams> direct_head;

  /// CRDE with the normalized head and no cameras.
  static VdeModel create(const ModelConfig& cfg, Rng& rng);
  /// CRDE trunk with a metric head in place of the normalized head.
  static VdeModel create_direct(const ModelConfig& cfg, Rng& rng);
  ParamList parameters() const;
};

/// Appends a fresh R2MC; existing parameters are untouched.
void add_camera(VdeModel& model, const CameraId& camera, Rng& rng);

struct EncoderFeatures {
  std::array<Tensor, 4> stages;  // E1..E4
};

EncoderFeatures encoder_forward(const Tensor& image, const EncoderParams& params,
                                const ModelConfig& cfg);
Tensor pyramid_pool(const Tensor& coarsest, const PyramidPoolParams& params);
/// Z_D -> Z_R through the three FMMs with skips E3, E2, E1.
Tensor decode(const EncoderFeatures& features, const Tensor& pooled,
              const std::array<FmmParams, 3>& fmms, const ModelConfig& cfg);
/// 1 x H x W map from Z_R and E1, bilinearly resized to the image size.
Tensor depth_head(const Tensor& relative, const Tensor& e1, const DepthHeadParams& params,
                  std::size_t height, std::size_t width, const ModelConfig& cfg);

struct CrdeOutput {
  Tensor relative;    // Z_R, C x H/4 x W/4
  Tensor normalized;  // 1 x H x W (undefined without the normalized head)
  Tensor e1;
};

/// Pads the image to a multiple of 32 and crops outputs back.
CrdeOutput crde_forward(const Tensor& image, const CrdeParams& params, const ModelConfig& cfg);

struct VdeOutput {
  Tensor metric;      // 1 x H x W
  Tensor normalized;  // 1 x H x W
  Tensor relative;
};

/// Camera's converter applied to Z_R, resized and cropped to height x width.
Tensor metric_from_relative(const VdeModel& model, const Tensor& relative, const CameraId& camera,
                            std::size_t height, std::size_t width);
VdeOutput vde_forward(const VdeModel& model, const Tensor& image, const CameraId& camera);
/// Metric map from the direct head (single and separate network settings).
Tensor direct_forward(const VdeModel& model, const Tensor& image);

/// Shared encoder and pooling; per-camera FMM stack and metric head.
struct MultiDecoderModel {
  ModelConfig config;
  EncoderParams encoder;
  PyramidPoolParams pool;
  struct Decoder {
    std::array<FmmParams, 3> fmms;
    DepthHeadParams head;
  };
  std::map<CameraId, Decoder> decoders;

  static MultiDecoderModel create(const ModelConfig& cfg, const std::vector<CameraId>& cameras, Rng& rng);
  ParamList parameters() const;
};

Tensor multi_decoder_forward(const MultiDecoderModel& model, const Tensor& image, const CameraId& camera);

struct ParamCounts {
  std::size_t crde = 0;
  std::size_t direct_head = 0;
  std::map<CameraId, std::size_t> r2mc;
  std::size_t total = 0;
};

ParamCounts count_params(const VdeModel& model);
std::size_t count_params(const MultiDecoderModel& model);

struct ShapeTrace {
  std::array<Shape, 4> encoder;
  Shape pooled;
  std::array<Shape, 3> fmm;
  Shape relative;
  Shape head_low;  // head output before resizing
  Shape output;
};

/// Feature shapes for an H x W input, from the same arithmetic the forward
/// uses (no tensors are allocated).
ShapeTrace trace_shapes(const ModelConfig& cfg, std::size_t height, std::size_t width);

/// Image tensor (3 x H x W) from a planar image.
Tensor image_tensor(const Image& image);

struct TrainTarget {
  CameraId camera;
  DepthMap depth;
  NormalizedDepthMap normalized;
};

/// L_CRDE for one sample.
Tensor crde_sample_loss(const VdeOutput& out, const TrainTarget& target, const LossConfig& cfg);
/// L_CRDE + L_R2MC of the sample's own camera, summed over the batch.
Tensor overall_loss(const VdeModel& model, const std::vector<const Tensor*>& images,
                    const std::vector<const TrainTarget*>& targets, const LossConfig& cfg);

}  // namespace vde
