#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "spot/imagery.hpp"
#include "spot/priors.hpp"
#include "spot/subpixel.hpp"

namespace spot {

struct EncoderConfig {
  int depth = 4;
  int width = 128;
  int heads = 4;
  int mlp_ratio = 4;
  int num_classes = 8;
  int token_dim = 192;  ///< k²·C
  double label_smoothing = 0.0;

  void validate() const;
  int head_dim() const { return width / heads; }
  int hidden() const { return width * mlp_ratio; }
  bool operator==(const EncoderConfig&) const = default;
};

/// A named slice of the flat parameter buffer.
struct ParamTensor {
  std::string name;
  std::vector<int> dims;
  std::size_t offset = 0;
  std::size_t size = 0;
};

/// Offsets of every parameter tensor inside the flat buffer.
struct ParamLayout {
  struct Block {
    std::size_t ln1_g, ln1_b, qkv_w, qkv_b, proj_w, proj_b;
    std::size_t ln2_g, ln2_b, fc1_w, fc1_b, fc2_w, fc2_b;
  };

  explicit ParamLayout(const EncoderConfig& config);

  std::size_t patch_w = 0, patch_b = 0, cls = 0;
  std::vector<Block> blocks;
  std::size_t lnf_g = 0, lnf_b = 0, head_w = 0, head_b = 0;
  std::size_t total = 0;
  std::vector<ParamTensor> tensors;
};

/// All weights of the classifier. Every construction or mutable access
/// issues a fresh generation id, which forward traces record so a backward
/// pass against modified weights is rejected.
class EncoderParams {
 public:
  /// Zero weights with unit layer-norm gains.
  explicit EncoderParams(const EncoderConfig& config);
  static EncoderParams initialize(const EncoderConfig& config, std::uint64_t seed);

  EncoderParams(const EncoderParams& other);
  EncoderParams& operator=(const EncoderParams& other);
  EncoderParams(EncoderParams&&) noexcept = default;
  EncoderParams& operator=(EncoderParams&&) noexcept = default;

  const EncoderConfig& config() const { return config_; }
  const ParamLayout& layout() const { return layout_; }
  std::span<const double> values() const { return values_; }
  std::span<double> mutable_values();
  std::uint64_t generation() const { return generation_; }
  std::uint64_t digest() const { return digest_doubles(values_); }

  const double* at(std::size_t offset) const { return values_.data() + offset; }

 private:
  EncoderConfig config_;
  ParamLayout layout_;
  std::vector<double> values_;
  std::uint64_t generation_;
};

/// Activations cached by forward() for the reverse pass.
class ForwardTrace {
 public:
  std::vector<double> logits;
  std::vector<double> probabilities;
  std::vector<double> cls_feature;  ///< final-norm class-token state, d values

  int num_tokens() const { return num_tokens_; }
  int prediction() const;

 private:
  friend ForwardTrace forward(const EncoderParams&, std::span<const Token>);
  friend struct EncoderBackward;

  struct Layer {
    std::vector<double> x_in, ln1_xhat, ln1_rstd, ln1_out, qkv, attn, ctx;
    std::vector<double> x_mid, ln2_xhat, ln2_rstd, ln2_out, hidden_pre, hidden_act;
  };

  const EncoderParams* params_ = nullptr;
  std::uint64_t generation_ = 0;
  int num_tokens_ = 0;
  std::vector<double> features_;  ///< m × token_dim
  std::vector<Layer> layers_;
  std::vector<double> final_xhat_;
  double final_rstd_ = 0.0;
};

/// Class token prepended, pre-norm blocks (attention, GELU MLP), final norm,
/// linear head on the class token.
ForwardTrace forward(const EncoderParams& params, std::span<const Token> tokens);

std::vector<double> softmax(std::span<const double> logits);
/// Cross-entropy against (1−ε)·onehot + ε/C.
double cross_entropy(std::span<const double> logits, int label, double smoothing);

/// ∂L/∂θ in the flat parameter layout.
std::vector<double> backward_params(const ForwardTrace& trace, int label);

struct TokenGradients {
  std::vector<std::vector<double>> features;
  std::vector<std::vector<double>> pos_embedding;
};
TokenGradients backward_tokens(const ForwardTrace& trace, int label);

/// Both gradients from one reverse sweep; either output may be null.
void backward(const ForwardTrace& trace, int label, std::vector<double>* param_grad, TokenGradients* token_grad);

struct PositionGradientOptions {
  bool feature_path = true;
  bool embedding_path = true;
};

struct PositionGradient {
  double loss = 0.0;
  std::vector<Point> gradient;  ///< ∂L/∂(x,y) per token, pixel units
  std::vector<double> logits;
  int prediction = 0;
};

/// Loss at S and ∂L/∂S by the chain rule through the patch Jacobians and
/// the positional-embedding Jacobian. Never modifies params.
PositionGradient position_gradient(const EncoderParams& params, const Image& image, std::span<const Point> placements,
                                   int label, const Tokenizer& tokenizer, const PositionGradientOptions& options = {});

struct Classification {
  double loss = 0.0;
  int prediction = 0;
  std::vector<double> logits;
  std::vector<double> cls_feature;
};
Classification classify(const EncoderParams& params, const Image& image, std::span<const Point> placements, int label,
                        const Tokenizer& tokenizer);

struct ModelBundle {
  EncoderParams params;
  TokenizerConfig tokenizer;
};

/// "SPTB" | u32 version | u32 manifest length | JSON manifest | TensorFile of all values.
/// The manifest lists every tensor's name, dims, and offset.
void save_params(const std::filesystem::path& path, const EncoderParams& params, const TokenizerConfig& tokenizer);
ModelBundle load_params(const std::filesystem::path& path);
/// Throws DataError if the stored config differs from `expected`.
ModelBundle load_params(const std::filesystem::path& path, const EncoderConfig& expected);

}  // namespace spot
