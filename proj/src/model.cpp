#include "subtyper/model.hpp"

#include "subtyper/errors.hpp"
#include "subtyper/rng.hpp"
#include "subtyper/tape.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace subtyper {

namespace {

constexpr std::size_t kInferenceChunk = 512;
constexpr char kCheckpointMagic[8] = {'S', 'T', 'F', 'C', 'K', 'P', 'T', '1'};

// Visits every tensor of a branch in checkpoint order. Works for both the
// Matrix-valued params and the Var-valued tape mirror below.
template <typename Branch, typename Fn>
void visit_branch(Branch& b, const std::string& prefix, Fn&& fn) {
    fn(prefix + "w_in", b.w_in);
    fn(prefix + "b_in", b.b_in);
    fn(prefix + "norm1.gamma", b.norm1_gamma);
    fn(prefix + "norm1.beta", b.norm1_beta);
    for (std::size_t h = 0; h < b.attention.query.size(); ++h) {
        fn(prefix + "attention.query." + std::to_string(h), b.attention.query[h]);
    }
    for (std::size_t h = 0; h < b.attention.key.size(); ++h) {
        fn(prefix + "attention.key." + std::to_string(h), b.attention.key[h]);
    }
    for (std::size_t h = 0; h < b.attention.value.size(); ++h) {
        fn(prefix + "attention.value." + std::to_string(h), b.attention.value[h]);
    }
    fn(prefix + "attention.output", b.attention.output);
    fn(prefix + "norm2.gamma", b.norm2_gamma);
    fn(prefix + "norm2.beta", b.norm2_beta);
    fn(prefix + "w_out", b.w_out);
    fn(prefix + "b_out", b.b_out);
}

struct AttentionVars {
    std::vector<Var> query, key, value;
    Var output;
};

struct BranchVars {
    Var w_in, b_in, norm1_gamma, norm1_beta;
    AttentionVars attention;
    Var norm2_gamma, norm2_beta, w_out, b_out;
};

BranchVars attach(Tape& tape, const BranchParams& params, std::size_t heads, std::vector<Var>* order) {
    BranchVars vars;
    vars.attention.query.resize(heads);
    vars.attention.key.resize(heads);
    vars.attention.value.resize(heads);
    // Walk the params and the mirror in lockstep.
    std::vector<const Matrix*> sources;
    visit_branch(params, "", [&](const std::string&, const Matrix& m) { sources.push_back(&m); });
    std::size_t next = 0;
    visit_branch(vars, "", [&](const std::string&, Var& v) {
        v = tape.leaf(*sources[next++]);
        if (order != nullptr) {
            order->push_back(v);
        }
    });
    return vars;
}

Var attention_forward(const AttentionVars& attn, Var tokens, std::size_t token_count, std::size_t head_dim,
                      BranchTrace* trace) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
    std::vector<Var> heads;
    for (std::size_t h = 0; h < attn.query.size(); ++h) {
        Var q = ad::matmul(tokens, attn.query[h]);
        Var k = ad::matmul(tokens, attn.key[h]);
        Var v = ad::matmul(tokens, attn.value[h]);
        Matrix weights;
        heads.push_back(ad::block_attention(q, k, v, token_count, scale, trace != nullptr ? &weights : nullptr));
        if (trace != nullptr) {
            trace->head_weights.push_back(std::move(weights));
        }
    }
    return ad::matmul(ad::concat_cols(heads), attn.output);
}

Var branch_forward(const BranchVars& b, Var x, const ModelConfig& cfg, BranchTrace* trace) {
    const std::size_t n = x.rows();
    const std::size_t d_model = cfg.model_width();
    Var hidden = ad::add_row(ad::matmul(x, b.w_in), b.b_in);
    hidden = ad::relu(ad::layer_norm(hidden, b.norm1_gamma, b.norm1_beta, cfg.layer_norm_eps));
    Var tokens = ad::reshape(hidden, n * cfg.token_count, d_model);
    Var attended = attention_forward(b.attention, tokens, cfg.token_count, cfg.head_dim, trace);
    Var mixed = ad::layer_norm(ad::add(tokens, attended), b.norm2_gamma, b.norm2_beta, cfg.layer_norm_eps);
    if (trace != nullptr) {
        trace->tokens = tokens.value();
        trace->post_attention = mixed.value();
    }
    Var flat = ad::reshape(mixed, n, cfg.hidden_width);
    return ad::add_row(ad::matmul(flat, b.w_out), b.b_out);
}

BranchParams init_branch(std::size_t in_dim, std::size_t out_dim, const ModelConfig& cfg, Rng& rng) {
    auto glorot = [&rng](std::size_t fan_in, std::size_t fan_out) {
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        Matrix w(fan_in, fan_out);
        for (double& v : w.data()) {
            v = rng.uniform(-bound, bound);
        }
        return w;
    };
    const std::size_t d_model = cfg.model_width();
    BranchParams b;
    b.w_in = glorot(in_dim, cfg.hidden_width);
    b.b_in = Matrix(1, cfg.hidden_width);
    b.norm1_gamma = Matrix(1, cfg.hidden_width, 1.0);
    b.norm1_beta = Matrix(1, cfg.hidden_width);
    for (std::size_t h = 0; h < cfg.num_heads; ++h) {
        b.attention.query.push_back(glorot(d_model, cfg.head_dim));
        b.attention.key.push_back(glorot(d_model, cfg.head_dim));
        b.attention.value.push_back(glorot(d_model, cfg.head_dim));
    }
    b.attention.output = glorot(cfg.num_heads * cfg.head_dim, d_model);
    b.norm2_gamma = Matrix(1, d_model, 1.0);
    b.norm2_beta = Matrix(1, d_model);
    b.w_out = glorot(cfg.hidden_width, out_dim);
    b.b_out = Matrix(1, out_dim);
    return b;
}

Matrix run_branch(const BranchParams& params, const ModelConfig& cfg, const Matrix& x, std::size_t in_dim,
                  std::size_t out_dim, BranchTrace* trace, const char* what) {
    if (x.cols() != in_dim) {
        throw ShapeError(std::string(what) + ": expected " + std::to_string(in_dim) + " columns, got " + shape_of(x));
    }
    Matrix out(x.rows(), out_dim);
    if (trace != nullptr) {
        *trace = BranchTrace{};
        trace->tokens = Matrix(0, cfg.model_width());
        trace->post_attention = Matrix(0, cfg.model_width());
        trace->head_weights.assign(cfg.num_heads, Matrix(0, cfg.token_count));
    }
    // Rows are independent, so chunking does not change any output bit.
    for (std::size_t start = 0; start < x.rows(); start += kInferenceChunk) {
        const std::size_t stop = std::min(x.rows(), start + kInferenceChunk);
        std::vector<std::size_t> idx(stop - start);
        std::iota(idx.begin(), idx.end(), start);
        Tape tape;
        BranchVars vars = attach(tape, params, cfg.num_heads, nullptr);
        Var input = tape.leaf(x.select_rows(idx));
        BranchTrace local;
        Var y = branch_forward(vars, input, cfg, trace != nullptr ? &local : nullptr);
        std::copy(y.value().data().begin(), y.value().data().end(),
                  out.data().begin() + static_cast<std::ptrdiff_t>(start * out_dim));
        if (trace != nullptr) {
            auto append = [](Matrix& dst, const Matrix& src) {
                Matrix joined(dst.rows() + src.rows(), src.cols());
                std::copy(dst.data().begin(), dst.data().end(), joined.data().begin());
                std::copy(src.data().begin(), src.data().end(),
                          joined.data().begin() + static_cast<std::ptrdiff_t>(dst.size()));
                dst = std::move(joined);
            };
            append(trace->tokens, local.tokens);
            append(trace->post_attention, local.post_attention);
            for (std::size_t h = 0; h < cfg.num_heads; ++h) {
                append(trace->head_weights[h], local.head_weights[h]);
            }
        }
    }
    return out;
}

void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) {
        bytes[i] = static_cast<unsigned char>(v >> (8 * i));
    }
    os.write(reinterpret_cast<const char*>(bytes), 8);
}

std::uint64_t read_u64(std::istream& is) {
    unsigned char bytes[8];
    if (!is.read(reinterpret_cast<char*>(bytes), 8)) {
        throw DataError("checkpoint: truncated file");
    }
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    }
    return v;
}

} // namespace

void ModelConfig::validate() const {
    auto positive = [](std::size_t v, const char* name) {
        if (v == 0) {
            throw ConfigError(std::string("model config: ") + name + " must be >= 1");
        }
    };
    positive(input_dim, "input_dim");
    positive(hidden_width, "hidden_width");
    positive(num_heads, "num_heads");
    positive(head_dim, "head_dim");
    positive(token_count, "token_count");
    positive(batch_size, "batch_size");
    if (latent_dim < 2) {
        throw ConfigError("model config: latent_dim must be >= 2");
    }
    if (hidden_width != token_count * model_width()) {
        throw ConfigError("model config: hidden_width " + std::to_string(hidden_width) + " is not token_count (" +
                          std::to_string(token_count) + ") x num_heads (" + std::to_string(num_heads) +
                          ") x head_dim (" + std::to_string(head_dim) + ") = " +
                          std::to_string(token_count * model_width()));
    }
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw ConfigError("model config: learning_rate must be positive");
    }
    if (!(layer_norm_eps > 0.0)) {
        throw ConfigError("model config: layer_norm_eps must be positive");
    }
}

nlohmann::json to_json(const ModelConfig& c) {
    return nlohmann::json{{"input_dim", c.input_dim},     {"hidden_width", c.hidden_width},
                          {"latent_dim", c.latent_dim},   {"num_heads", c.num_heads},
                          {"head_dim", c.head_dim},       {"token_count", c.token_count},
                          {"epochs", c.epochs},           {"batch_size", c.batch_size},
                          {"learning_rate", c.learning_rate}, {"layer_norm_eps", c.layer_norm_eps},
                          {"seed", c.seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j, std::vector<std::string>* defaulted) {
    ModelConfig c;
    auto take = [&](const char* key, auto& field) {
        if (j.contains(key)) {
            try {
                j.at(key).get_to(field);
            } catch (const nlohmann::json::exception& e) {
                throw ConfigError(std::string("model config: bad value for '") + key + "': " + e.what());
            }
        } else if (defaulted != nullptr) {
            defaulted->push_back(std::string("model.") + key);
        }
    };
    take("input_dim", c.input_dim);
    take("hidden_width", c.hidden_width);
    take("latent_dim", c.latent_dim);
    take("num_heads", c.num_heads);
    take("head_dim", c.head_dim);
    take("token_count", c.token_count);
    take("epochs", c.epochs);
    take("batch_size", c.batch_size);
    take("learning_rate", c.learning_rate);
    take("layer_norm_eps", c.layer_norm_eps);
    take("seed", c.seed);
    return c;
}

std::vector<std::pair<std::string, Matrix*>> AutoencoderParams::tensors() {
    std::vector<std::pair<std::string, Matrix*>> out;
    auto collect = [&out](const std::string& name, Matrix& m) { out.emplace_back(name, &m); };
    visit_branch(encoder, "encoder.", collect);
    visit_branch(decoder, "decoder.", collect);
    return out;
}

std::vector<std::pair<std::string, const Matrix*>> AutoencoderParams::tensors() const {
    std::vector<std::pair<std::string, const Matrix*>> out;
    auto collect = [&out](const std::string& name, const Matrix& m) { out.emplace_back(name, &m); };
    visit_branch(encoder, "encoder.", collect);
    visit_branch(decoder, "decoder.", collect);
    return out;
}

bool operator==(const AutoencoderParams& a, const AutoencoderParams& b) {
    if (!(a.config == b.config)) {
        return false;
    }
    auto ta = a.tensors();
    auto tb = b.tensors();
    if (ta.size() != tb.size()) {
        return false;
    }
    for (std::size_t i = 0; i < ta.size(); ++i) {
        if (ta[i].first != tb[i].first || !(*ta[i].second == *tb[i].second)) {
            return false;
        }
    }
    return true;
}

AutoencoderParams init_params(const ModelConfig& config) {
    config.validate();
    Rng rng(derive_seed(config.seed, 0));
    AutoencoderParams p;
    p.config = config;
    p.encoder = init_branch(config.input_dim, config.latent_dim, config, rng);
    p.decoder = init_branch(config.latent_dim, config.input_dim, config, rng);
    return p;
}

Matrix encode(const AutoencoderParams& params, const Matrix& x, BranchTrace* trace) {
    const auto& c = params.config;
    return run_branch(params.encoder, c, x, c.input_dim, c.latent_dim, trace, "encode");
}

Matrix decode(const AutoencoderParams& params, const Matrix& latent, BranchTrace* trace) {
    const auto& c = params.config;
    return run_branch(params.decoder, c, latent, c.latent_dim, c.input_dim, trace, "decode");
}

AttentionResult multi_head_attention(const AttentionParams& params, const Matrix& tokens) {
    const std::size_t heads = params.query.size();
    if (heads == 0 || params.key.size() != heads || params.value.size() != heads) {
        throw ShapeError("multi_head_attention: inconsistent head count");
    }
    const std::size_t d_model = params.query.front().rows();
    const std::size_t head_dim = params.query.front().cols();
    if (tokens.cols() != d_model) {
        throw ShapeError("multi_head_attention: token width " + std::to_string(tokens.cols()) + " but projections expect " +
                         std::to_string(d_model));
    }
    if (params.output.rows() != heads * params.value.front().cols()) {
        throw ShapeError("multi_head_attention: output projection " + shape_of(params.output) +
                         " does not take concatenated head width");
    }
    Tape tape;
    AttentionVars vars;
    for (std::size_t h = 0; h < heads; ++h) {
        vars.query.push_back(tape.leaf(params.query[h]));
        vars.key.push_back(tape.leaf(params.key[h]));
        vars.value.push_back(tape.leaf(params.value[h]));
    }
    vars.output = tape.leaf(params.output);
    BranchTrace trace;
    Var out = attention_forward(vars, tape.leaf(tokens), std::max<std::size_t>(tokens.rows(), 1), head_dim, &trace);
    return AttentionResult{out.value(), std::move(trace.head_weights)};
}

double mse_loss(const Matrix& x, const Matrix& reconstruction) { return mse(x, reconstruction); }

LossGradient loss_and_gradient(const AutoencoderParams& params, const Matrix& batch) {
    const auto& cfg = params.config;
    if (batch.cols() != cfg.input_dim) {
        throw ShapeError("loss_and_gradient: batch " + shape_of(batch) + " vs input_dim " +
                         std::to_string(cfg.input_dim));
    }
    Tape tape;
    std::vector<Var> order;
    BranchVars enc = attach(tape, params.encoder, cfg.num_heads, &order);
    BranchVars dec = attach(tape, params.decoder, cfg.num_heads, &order);
    Var x = tape.leaf(batch);
    Var latent = branch_forward(enc, x, cfg, nullptr);
    Var rec = branch_forward(dec, latent, cfg, nullptr);
    Var loss = ad::mse(rec, x);
    tape.backward(loss);
    LossGradient out;
    out.loss = loss.value()(0, 0);
    out.relu_pattern = tape.relu_pattern();
    out.gradients.reserve(order.size());
    for (Var v : order) {
        out.gradients.push_back(tape.adjoint(v));
    }
    return out;
}

std::pair<double, std::vector<bool>> loss_with_pattern(const AutoencoderParams& params, const Matrix& batch) {
    const auto& cfg = params.config;
    Tape tape;
    BranchVars enc = attach(tape, params.encoder, cfg.num_heads, nullptr);
    BranchVars dec = attach(tape, params.decoder, cfg.num_heads, nullptr);
    Var x = tape.leaf(batch);
    Var rec = branch_forward(dec, branch_forward(enc, x, cfg, nullptr), cfg, nullptr);
    return {mse(rec.value(), batch), tape.relu_pattern()};
}

TrainResult train(const ModelConfig& config, const Matrix& data) {
    config.validate();
    if (data.rows() == 0) {
        throw DataError("train: no samples");
    }
    if (data.cols() != config.input_dim) {
        throw ShapeError("train: data " + shape_of(data) + " vs input_dim " + std::to_string(config.input_dim));
    }
    if (!data.all_finite()) {
        throw DataError("train: data contains non-finite values");
    }

    TrainResult result{init_params(config), {}};
    auto tensors = result.params.tensors();
    std::vector<Matrix> first_moment;
    std::vector<Matrix> second_moment;
    for (const auto& [name, m] : tensors) {
        first_moment.emplace_back(m->rows(), m->cols());
        second_moment.emplace_back(m->rows(), m->cols());
    }

    constexpr double beta1 = 0.9;
    constexpr double beta2 = 0.999;
    constexpr double adam_eps = 1e-8;
    const std::size_t n = data.rows();
    const std::size_t batch = std::min(config.batch_size, n);
    Rng shuffler(derive_seed(config.seed, 1));
    std::vector<std::size_t> order(n);
    std::size_t step = 0;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        shuffler.shuffle(order);
        double weighted_loss = 0.0;
        for (std::size_t start = 0; start < n; start += batch) {
            const std::size_t stop = std::min(n, start + batch);
            std::span<const std::size_t> idx(order.data() + start, stop - start);
            const Matrix mb = data.select_rows(idx);
            LossGradient lg = loss_and_gradient(result.params, mb);
            if (!std::isfinite(lg.loss)) {
                throw NumericError("train: loss became non-finite at epoch " + std::to_string(epoch + 1));
            }
            weighted_loss += lg.loss * static_cast<double>(stop - start);
            ++step;
            const double correction1 = 1.0 - std::pow(beta1, static_cast<double>(step));
            const double correction2 = 1.0 - std::pow(beta2, static_cast<double>(step));
            for (std::size_t t = 0; t < tensors.size(); ++t) {
                auto& w = tensors[t].second->data();
                auto& m = first_moment[t].data();
                auto& v = second_moment[t].data();
                const auto& g = lg.gradients[t].data();
                for (std::size_t i = 0; i < w.size(); ++i) {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                    const double mhat = m[i] / correction1;
                    const double vhat = v[i] / correction2;
                    w[i] -= config.learning_rate * mhat / (std::sqrt(vhat) + adam_eps);
                }
            }
        }
        result.report.epoch_losses.push_back(weighted_loss / static_cast<double>(n));
    }
    result.report.epochs_run = result.report.epoch_losses.size();
    if (!result.report.epoch_losses.empty()) {
        result.report.final_loss = result.report.epoch_losses.back();
    }
    return result;
}

void save_checkpoint(const AutoencoderParams& params, const std::filesystem::path& path) {
    nlohmann::json header;
    header["format"] = "subtyper-checkpoint";
    header["version"] = 1;
    header["config"] = to_json(params.config);
    header["byte_order"] = "little";
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& [name, m] : params.tensors()) {
        entries.push_back({{"name", name}, {"rows", m->rows()}, {"cols", m->cols()}});
    }
    header["tensors"] = entries;
    const std::string text = header.dump();

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw DataError("checkpoint: cannot open " + path.string() + " for writing");
    }
    os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    write_u64(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, m] : params.tensors()) {
        for (double v : m->data()) {
            write_u64(os, std::bit_cast<std::uint64_t>(v));
        }
    }
    if (!os) {
        throw DataError("checkpoint: write failed for " + path.string());
    }
}

AutoencoderParams load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw DataError("checkpoint: cannot open " + path.string());
    }
    char magic[sizeof(kCheckpointMagic)];
    if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
        throw DataError("checkpoint: " + path.string() + " is not a subtyper checkpoint");
    }
    const std::uint64_t header_len = read_u64(is);
    std::string text(header_len, '\0');
    if (!is.read(text.data(), static_cast<std::streamsize>(header_len))) {
        throw DataError("checkpoint: truncated header");
    }
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint: malformed header: ") + e.what());
    }
    ModelConfig config = model_config_from_json(header.at("config"));
    AutoencoderParams params = init_params(config);
    auto tensors = params.tensors();
    const auto& entries = header.at("tensors");
    if (entries.size() != tensors.size()) {
        throw DataError("checkpoint: tensor count does not match its config");
    }
    for (std::size_t t = 0; t < tensors.size(); ++t) {
        const auto& e = entries[t];
        Matrix& m = *tensors[t].second;
        if (e.at("name").get<std::string>() != tensors[t].first || e.at("rows").get<std::size_t>() != m.rows() ||
            e.at("cols").get<std::size_t>() != m.cols()) {
            throw DataError("checkpoint: tensor '" + e.at("name").get<std::string>() + "' does not match its config");
        }
        for (double& v : m.data()) {
            v = std::bit_cast<double>(read_u64(is));
        }
    }
    return params;
}

} // namespace subtyper
