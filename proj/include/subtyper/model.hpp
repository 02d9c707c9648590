#pragma once

#include "subtyper/matrix.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace subtyper {

/**
 * Hyperparameters of the MLP-Transformer autoencoder.
 *
 * The hidden activation of width `hidden_width` is viewed as `token_count`
 * tokens of width `num_heads * head_dim`, so the two must agree exactly.
 */
struct ModelConfig {
    std::size_t input_dim = 0;
    std::size_t hidden_width = 1024;
    std::size_t latent_dim = 64;
    std::size_t num_heads = 2;
    std::size_t head_dim = 64;
    std::size_t token_count = 8;
    std::size_t epochs = 100;
    std::size_t batch_size = 64;
    double learning_rate = 1e-3;
    double layer_norm_eps = 1e-5;
    std::uint64_t seed = 0;

    std::size_t model_width() const { return num_heads * head_dim; }

    /// Throws `ConfigError` naming the first violated constraint.
    void validate() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

nlohmann::json to_json(const ModelConfig& config);
/// Missing keys keep their defaults; their names are appended to `defaulted` when given.
ModelConfig model_config_from_json(const nlohmann::json& j, std::vector<std::string>* defaulted = nullptr);

/// Per-head projections plus the shared output projection.
struct AttentionParams {
    std::vector<Matrix> query;  ///< d_model x head_dim, one per head
    std::vector<Matrix> key;    ///< d_model x head_dim, one per head
    std::vector<Matrix> value;  ///< d_model x head_dim, one per head
    Matrix output;              ///< (heads * head_dim) x d_model
};

/**
 * One side of the autoencoder: Linear -> LayerNorm -> ReLU -> tokens ->
 * (multi-head attention + residual) -> LayerNorm -> flatten -> Linear.
 * The encoder maps input_dim -> latent_dim, the decoder latent_dim -> input_dim.
 */
struct BranchParams {
    Matrix w_in, b_in;
    Matrix norm1_gamma, norm1_beta;  ///< width hidden_width
    AttentionParams attention;
    Matrix norm2_gamma, norm2_beta;  ///< width d_model, applied per token
    Matrix w_out, b_out;
};

struct AutoencoderParams {
    ModelConfig config;
    BranchParams encoder;
    BranchParams decoder;

    /// Every learnable tensor with a stable dotted name, in a fixed order.
    std::vector<std::pair<std::string, Matrix*>> tensors();
    std::vector<std::pair<std::string, const Matrix*>> tensors() const;

    friend bool operator==(const AutoencoderParams& a, const AutoencoderParams& b);
};

struct TrainReport {
    std::vector<double> epoch_losses;
    std::optional<double> final_loss;
    std::size_t epochs_run = 0;

    friend bool operator==(const TrainReport&, const TrainReport&) = default;
};

struct TrainResult {
    AutoencoderParams params;
    TrainReport report;
};

/// Attention weights and token blocks captured during a forward pass.
struct BranchTrace {
    Matrix tokens;                      ///< (n * S) x d_model, input to attention
    std::vector<Matrix> head_weights;   ///< per head, (n * S) x S
    Matrix post_attention;              ///< LayerNorm(tokens + attention), (n * S) x d_model
};

struct AttentionResult {
    Matrix output;                 ///< S x d_model
    std::vector<Matrix> weights;   ///< per head, S x S
};

/// Glorot-uniform weights, zero biases, unit LayerNorm gains. Deterministic in `config.seed`.
AutoencoderParams init_params(const ModelConfig& config);

Matrix encode(const AutoencoderParams& params, const Matrix& x, BranchTrace* trace = nullptr);
Matrix decode(const AutoencoderParams& params, const Matrix& latent, BranchTrace* trace = nullptr);

AttentionResult multi_head_attention(const AttentionParams& params, const Matrix& tokens);

/// Mean over all elements of the squared reconstruction error.
double mse_loss(const Matrix& x, const Matrix& reconstruction);

struct LossGradient {
    double loss = 0.0;
    std::vector<Matrix> gradients;  ///< aligned with `AutoencoderParams::tensors()`
    std::vector<bool> relu_pattern;
};

/// Reconstruction loss of `batch` and its gradient with respect to every tensor.
LossGradient loss_and_gradient(const AutoencoderParams& params, const Matrix& batch);

/// Reconstruction loss only, with the ReLU activation pattern of the pass.
std::pair<double, std::vector<bool>> loss_with_pattern(const AutoencoderParams& params, const Matrix& batch);

/**
 * Minibatch Adam on the reconstruction loss.
 *
 * Samples are reshuffled every epoch from a seeded stream; the same config
 * and data always give the same parameters and report.
 */
TrainResult train(const ModelConfig& config, const Matrix& data);

void save_checkpoint(const AutoencoderParams& params, const std::filesystem::path& path);
AutoencoderParams load_checkpoint(const std::filesystem::path& path);

} // namespace subtyper
