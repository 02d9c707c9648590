#include "gradcheck.hpp"

#include "subtyper/errors.hpp"
#include "subtyper/model.hpp"
#include "subtyper/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

using namespace subtyper;

namespace {

ModelConfig mini_config() {
    ModelConfig c;
    c.input_dim = 20;
    c.hidden_width = 16;
    c.token_count = 2;
    c.num_heads = 2;
    c.head_dim = 4;
    c.latent_dim = 3;
    c.seed = 7;
    return c;
}

Matrix gaussian(Rng& rng, std::size_t r, std::size_t c) {
    Matrix m(r, c);
    for (double& v : m.data()) {
        v = rng.normal();
    }
    return m;
}

void zero(Matrix& m) { std::fill(m.data().begin(), m.data().end(), 0.0); }

// Mixture of 4 well-separated Gaussian clusters, column-standardized.
Matrix mixture(std::size_t n, std::size_t p, std::uint64_t seed) {
    Rng rng(seed);
    Matrix centres = gaussian(rng, 4, p);
    Matrix x(n, p);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < p; ++j) {
            x(i, j) = 2.0 * centres(i % 4, j) + rng.normal();
        }
    }
    for (std::size_t j = 0; j < p; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            mean += x(i, j);
        }
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            var += (x(i, j) - mean) * (x(i, j) - mean);
        }
        const double sd = std::sqrt(var / static_cast<double>(n));
        for (std::size_t i = 0; i < n; ++i) {
            x(i, j) = (x(i, j) - mean) / sd;
        }
    }
    return x;
}

// Plain-loop multi-head attention used as an oracle.
Matrix attention_by_loops(const AttentionParams& p, const Matrix& tokens) {
    const std::size_t s = tokens.rows();
    const std::size_t d_model = tokens.cols();
    const std::size_t heads = p.query.size();
    const std::size_t dk = p.query[0].cols();
    const std::size_t dv = p.value[0].cols();
    Matrix concat(s, heads * dv);
    for (std::size_t h = 0; h < heads; ++h) {
        std::vector<std::vector<double>> q(s, std::vector<double>(dk)), k(s, std::vector<double>(dk)),
            v(s, std::vector<double>(dv));
        for (std::size_t t = 0; t < s; ++t) {
            for (std::size_t c = 0; c < dk; ++c) {
                for (std::size_t m = 0; m < d_model; ++m) {
                    q[t][c] += tokens(t, m) * p.query[h](m, c);
                    k[t][c] += tokens(t, m) * p.key[h](m, c);
                }
            }
            for (std::size_t c = 0; c < dv; ++c) {
                for (std::size_t m = 0; m < d_model; ++m) {
                    v[t][c] += tokens(t, m) * p.value[h](m, c);
                }
            }
        }
        for (std::size_t i = 0; i < s; ++i) {
            std::vector<double> score(s);
            double total = 0.0;
            for (std::size_t j = 0; j < s; ++j) {
                double dot = 0.0;
                for (std::size_t c = 0; c < dk; ++c) {
                    dot += q[i][c] * k[j][c];
                }
                score[j] = std::exp(dot / std::sqrt(static_cast<double>(dk)));
                total += score[j];
            }
            for (std::size_t j = 0; j < s; ++j) {
                for (std::size_t c = 0; c < dv; ++c) {
                    concat(i, h * dv + c) += score[j] / total * v[j][c];
                }
            }
        }
    }
    Matrix out(s, d_model);
    for (std::size_t i = 0; i < s; ++i) {
        for (std::size_t m = 0; m < d_model; ++m) {
            for (std::size_t c = 0; c < heads * dv; ++c) {
                out(i, m) += concat(i, c) * p.output(c, m);
            }
        }
    }
    return out;
}

} // namespace

TEST_CASE("config validation") {
    ModelConfig c;
    c.input_dim = 9844;
    CHECK_NOTHROW(c.validate());
    c.hidden_width = 100;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK_THROWS_AS(init_params(c), ConfigError);

    ModelConfig small = mini_config();
    small.latent_dim = 1;
    CHECK_THROWS_AS(small.validate(), ConfigError);
}

TEST_CASE("init shapes with default widths") {
    ModelConfig c;
    c.input_dim = 3105 + 3217 + 383 + 3139;
    CHECK(c.input_dim == 9844);
    const AutoencoderParams p = init_params(c);
    CHECK(shape_of(p.encoder.w_in) == "9844x1024");
    CHECK(shape_of(p.encoder.w_out) == "1024x64");
    CHECK(p.encoder.attention.query.size() == 2);
    CHECK(shape_of(p.encoder.attention.query[0]) == "128x64");
    CHECK(shape_of(p.encoder.attention.value[1]) == "128x64");
    CHECK(shape_of(p.encoder.attention.output) == "128x128");
    CHECK(shape_of(p.decoder.w_in) == "64x1024");
    CHECK(shape_of(p.decoder.w_out) == "1024x9844");
    CHECK(shape_of(p.encoder.norm2_gamma) == "1x128");

    const double bound = std::sqrt(6.0 / (9844.0 + 1024.0));
    const auto& w = p.encoder.w_in.data();
    CHECK(std::all_of(w.begin(), w.end(), [bound](double v) { return std::fabs(v) <= bound; }));
    CHECK(p.encoder.b_in == Matrix(1, 1024, 0.0));
    CHECK(p.encoder.norm1_gamma == Matrix(1, 1024, 1.0));
}

TEST_CASE("init is deterministic in the seed") {
    CHECK(init_params(mini_config()) == init_params(mini_config()));
    ModelConfig other = mini_config();
    other.seed = 8;
    CHECK_FALSE(init_params(mini_config()) == init_params(other));
}

TEST_CASE("encode and decode shapes") {
    const AutoencoderParams p = init_params(mini_config());
    Rng rng(1);
    const Matrix x = gaussian(rng, 5, 20);
    const Matrix m = encode(p, x);
    CHECK(shape_of(m) == "5x3");
    const Matrix rec = decode(p, m);
    CHECK(shape_of(rec) == "5x20");
    CHECK(shape_of(encode(p, Matrix(0, 20))) == "0x3");
    CHECK_THROWS_AS(encode(p, Matrix(2, 19)), ShapeError);
    CHECK_THROWS_AS(decode(p, Matrix(2, 4)), ShapeError);
}

TEST_CASE("encode with only biases reaches b_lat") {
    AutoencoderParams p = init_params(mini_config());
    zero(p.encoder.w_in);
    zero(p.encoder.attention.output);
    zero(p.encoder.w_out);
    Rng rng(2);
    p.encoder.b_in = gaussian(rng, 1, 16);
    p.encoder.b_out = Matrix::row_vector({0.5, -1.25, 3.0});
    const Matrix m = encode(p, gaussian(rng, 4, 20));
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(m(i, 0) == 0.5);
        CHECK(m(i, 1) == -1.25);
        CHECK(m(i, 2) == 3.0);
    }
}

TEST_CASE("decode with zero weights reproduces the output bias") {
    AutoencoderParams p = init_params(mini_config());
    for (auto& [name, t] : p.tensors()) {
        if (name.rfind("decoder.", 0) == 0) {
            zero(*t);
        }
    }
    Matrix c(1, 20);
    std::iota(c.data().begin(), c.data().end(), -3.0);
    p.decoder.b_out = c;
    Rng rng(4);
    const Matrix rec = decode(p, gaussian(rng, 3, 3));
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 20; ++j) {
            CHECK(rec(i, j) == c(0, j));
        }
    }
}

TEST_CASE("multi-head attention") {
    ModelConfig cfg = mini_config();
    const AutoencoderParams p = init_params(cfg);
    const AttentionParams& attn = p.encoder.attention;
    Rng rng(12);

    SUBCASE("single token attends to itself") {
        const Matrix tok = gaussian(rng, 1, 8);
        const AttentionResult r = multi_head_attention(attn, tok);
        for (const auto& w : r.weights) {
            CHECK(w == Matrix(1, 1, 1.0));
        }
        Matrix v_concat = concat_cols(std::vector<Matrix>{attn.value[0], attn.value[1]});
        const Matrix expected = matmul(matmul(tok, v_concat), attn.output);
        for (std::size_t i = 0; i < expected.size(); ++i) {
            CHECK(r.output.data()[i] == doctest::Approx(expected.data()[i]).epsilon(1e-13));
        }
    }

    SUBCASE("identical tokens give uniform weights") {
        Matrix tok(5, 8);
        const Matrix row = gaussian(rng, 1, 8);
        for (std::size_t i = 0; i < 5; ++i) {
            std::copy(row.data().begin(), row.data().end(), tok.row(i).begin());
        }
        const AttentionResult r = multi_head_attention(attn, tok);
        for (const auto& w : r.weights) {
            for (double v : w.data()) {
                CHECK(v == doctest::Approx(0.2).epsilon(1e-15));
            }
        }
    }

    SUBCASE("matches the explicit loop implementation") {
        for (int trial = 0; trial < 20; ++trial) {
            const Matrix tok = gaussian(rng, 3, 8);
            const Matrix expected = attention_by_loops(attn, tok);
            const Matrix got = multi_head_attention(attn, tok).output;
            for (std::size_t i = 0; i < got.size(); ++i) {
                CHECK(std::fabs(got.data()[i] - expected.data()[i]) <= 1e-12);
            }
        }
    }

    CHECK_THROWS_AS(multi_head_attention(attn, Matrix(3, 7)), ShapeError);
}

TEST_CASE("attention rows are probability vectors in every layer") {
    const AutoencoderParams p = init_params(mini_config());
    Rng rng(21);
    const Matrix x = gaussian(rng, 9, 20);
    BranchTrace enc_trace;
    BranchTrace dec_trace;
    decode(p, encode(p, x, &enc_trace), &dec_trace);
    for (const BranchTrace* trace : {&enc_trace, &dec_trace}) {
        REQUIRE(trace->head_weights.size() == 2);
        for (const auto& w : trace->head_weights) {
            CHECK(w.rows() == 9 * 2);
            for (std::size_t r = 0; r < w.rows(); ++r) {
                double total = 0.0;
                for (double v : w.row(r)) {
                    total += v;
                }
                CHECK(std::fabs(total - 1.0) <= 1e-12);
            }
        }
    }
}

TEST_CASE("residual path alone when the attention output projection is zero") {
    AutoencoderParams p = init_params(mini_config());
    zero(p.encoder.attention.output);
    Rng rng(31);
    p.encoder.norm2_gamma = gaussian(rng, 1, 8);
    p.encoder.norm2_beta = gaussian(rng, 1, 8);
    BranchTrace trace;
    encode(p, gaussian(rng, 6, 20), &trace);
    const Matrix expected = layer_norm(trace.tokens, p.encoder.norm2_gamma, p.encoder.norm2_beta, 1e-5);
    CHECK(trace.post_attention == expected);
}

TEST_CASE("encode is equivariant to sample permutation") {
    const AutoencoderParams p = init_params(mini_config());
    Rng rng(41);
    const Matrix x = gaussian(rng, 10, 20);
    std::vector<std::size_t> perm(10);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(perm);
    const Matrix m = encode(p, x);
    const Matrix mp = encode(p, x.select_rows(perm));
    CHECK(mp == m.select_rows(perm));
}

TEST_CASE("mse loss") {
    CHECK(mse_loss(Matrix(2, 3, 1.5), Matrix(2, 3, 1.5)) == 0.0);
    CHECK(mse_loss(Matrix::from_rows({{0, 0}}), Matrix::from_rows({{1, 1}})) == 1.0);
    Rng rng(3);
    const Matrix a = gaussian(rng, 3, 4);
    const Matrix b = gaussian(rng, 3, 4);
    const Matrix b2 = add(a, scale(subtract(b, a), 2.0));
    CHECK(mse_loss(a, b2) == doctest::Approx(4.0 * mse_loss(a, b)).epsilon(1e-14));
    CHECK_THROWS_AS(mse_loss(Matrix(2, 2), Matrix(2, 3)), ShapeError);
}

TEST_CASE("full model gradient matches finite differences") {
    Rng rng(77);
    AutoencoderParams p = init_params(mini_config());
    // Move biases and gains off their init values so every tensor is exercised.
    for (auto& [name, t] : p.tensors()) {
        for (double& v : t->data()) {
            v += 0.1 * rng.normal();
        }
    }
    const Matrix batch = gaussian(rng, 4, 20);
    const LossGradient lg = loss_and_gradient(p, batch);
    std::vector<Matrix> point;
    for (const auto& [name, t] : p.tensors()) {
        point.push_back(*t);
    }
    testing::Objective objective = [&](const std::vector<Matrix>& values) {
        AutoencoderParams q = p;
        auto tensors = q.tensors();
        for (std::size_t i = 0; i < values.size(); ++i) {
            *tensors[i].second = values[i];
        }
        return loss_with_pattern(q, batch);
    };
    const auto stats = testing::finite_difference_check(objective, point, lg.gradients);
    CHECK(stats.failures == 0);
    CHECK(stats.checked > 1000);
}

TEST_CASE("training reduces reconstruction loss") {
    ModelConfig cfg;
    cfg.input_dim = 50;
    cfg.hidden_width = 32;
    cfg.token_count = 4;
    cfg.num_heads = 2;
    cfg.head_dim = 4;
    cfg.latent_dim = 8;
    cfg.epochs = 40;
    cfg.batch_size = 32;
    cfg.seed = 3;
    const Matrix data = mixture(200, 50, 99);
    const TrainResult r = train(cfg, data);
    REQUIRE(r.report.epoch_losses.size() == 40);
    for (double l : r.report.epoch_losses) {
        CHECK(std::isfinite(l));
        CHECK(l >= 0.0);
    }
    CHECK(*r.report.final_loss < 0.5 * r.report.epoch_losses.front());

    const TrainResult again = train(cfg, data);
    CHECK(again.report == r.report);
    CHECK(again.params == r.params);
}

TEST_CASE("training edge cases") {
    ModelConfig cfg = mini_config();
    cfg.epochs = 0;
    Rng rng(5);
    const Matrix data = gaussian(rng, 10, 20);
    const TrainResult r = train(cfg, data);
    CHECK(r.params == init_params(cfg));
    CHECK(r.report.epoch_losses.empty());
    CHECK_FALSE(r.report.final_loss.has_value());

    cfg.epochs = 2;
    cfg.batch_size = 1000;  // clamped to n
    CHECK(train(cfg, data).report.epoch_losses.size() == 2);

    CHECK_THROWS_AS(train(cfg, Matrix(0, 20)), DataError);
    Matrix bad = data;
    bad(3, 4) = std::nan("");
    CHECK_THROWS_AS(train(cfg, bad), DataError);
}

TEST_CASE("checkpoint round trip is bit exact") {
    ModelConfig cfg = mini_config();
    cfg.epochs = 3;
    Rng rng(6);
    const Matrix data = gaussian(rng, 12, 20);
    const TrainResult r = train(cfg, data);
    const auto path = std::filesystem::temp_directory_path() / "subtyper_test_checkpoint.bin";
    save_checkpoint(r.params, path);
    const AutoencoderParams back = load_checkpoint(path);
    CHECK(back == r.params);
    CHECK(encode(back, data) == encode(r.params, data));
    std::filesystem::remove(path);

    const auto junk = std::filesystem::temp_directory_path() / "subtyper_not_a_checkpoint.bin";
    {
        std::ofstream os(junk);
        os << "hello";
    }
    CHECK_THROWS_AS(load_checkpoint(junk), DataError);
    std::filesystem::remove(junk);
}

TEST_CASE("model config json") {
    ModelConfig c = mini_config();
    c.learning_rate = 3e-4;
    CHECK(model_config_from_json(to_json(c)) == c);
    std::vector<std::string> defaulted;
    const ModelConfig d = model_config_from_json(nlohmann::json{{"input_dim", 5}}, &defaulted);
    CHECK(d.input_dim == 5);
    CHECK(d.hidden_width == 1024);
    CHECK(std::find(defaulted.begin(), defaulted.end(), "model.hidden_width") != defaulted.end());
    CHECK_THROWS_AS(model_config_from_json(nlohmann::json{{"epochs", "many"}}), ConfigError);
}
