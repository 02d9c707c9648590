#include "subtyper/dataset.hpp"

#include "subtyper/errors.hpp"
#include "subtyper/rng.hpp"

#include <cmath>
#include <cstdio>

namespace subtyper {

namespace {

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& field, std::vector<std::string>* defaulted) {
    if (!j.contains(key)) {
        if (defaulted) {
            defaulted->push_back(std::string("simulation.") + key);
        }
        return;
    }
    try {
        field = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(std::string("simulation.") + key + ": wrong type");
    }
}

std::string padded(const char* prefix, std::size_t i, std::size_t width) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%0*zu", static_cast<int>(width), i);
    return prefix + std::string(buf);
}

std::size_t digits(std::size_t n) { return n < 10 ? 1 : 1 + digits(n / 10); }

} // namespace

void SimulationSpec::validate() const {
    if (samples < 2) {
        throw ConfigError("simulation.samples must be at least 2");
    }
    if (clusters < 1 || clusters > samples) {
        throw ConfigError("simulation.clusters must be in [1, samples]");
    }
    if (block_dims.empty() || block_dims.size() != block_names.size() || block_dims.size() != block_scales.size()) {
        throw ConfigError("simulation: block_names, block_dims and block_scales must be non-empty and equally long");
    }
    for (std::size_t d : block_dims) {
        if (d == 0) {
            throw ConfigError("simulation.block_dims entries must be at least 1");
        }
    }
    for (double s : block_scales) {
        if (!(s > 0.0)) {
            throw ConfigError("simulation.block_scales entries must be positive");
        }
    }
    if (!(separation >= 0.0) || !(informative_fraction >= 0.0 && informative_fraction <= 1.0) ||
        !(missing_rate >= 0.0 && missing_rate < 1.0)) {
        throw ConfigError("simulation: separation >= 0, informative_fraction in [0,1], missing_rate in [0,1) required");
    }
    if (!(baseline_hazard > 0.0) || !(censor_rate >= 0.0) || hazard_ratios.empty()) {
        throw ConfigError("simulation: baseline_hazard > 0, censor_rate >= 0 and hazard_ratios required");
    }
    for (double h : hazard_ratios) {
        if (!(h > 0.0)) {
            throw ConfigError("simulation.hazard_ratios entries must be positive");
        }
    }
    if (!(covariate_association >= 0.0 && covariate_association <= 1.0)) {
        throw ConfigError("simulation.covariate_association must be in [0, 1]");
    }
}

nlohmann::json SimulationSpec::to_json() const {
    return {{"samples", samples},
            {"block_names", block_names},
            {"block_dims", block_dims},
            {"block_scales", block_scales},
            {"clusters", clusters},
            {"separation", separation},
            {"informative_fraction", informative_fraction},
            {"missing_rate", missing_rate},
            {"baseline_hazard", baseline_hazard},
            {"hazard_ratios", hazard_ratios},
            {"censor_rate", censor_rate},
            {"covariate_association", covariate_association},
            {"seed", seed}};
}

SimulationSpec SimulationSpec::from_json(const nlohmann::json& j, std::vector<std::string>* defaulted) {
    if (!j.is_object()) {
        throw ConfigError("simulation: expected an object");
    }
    SimulationSpec s;
    read_field(j, "samples", s.samples, defaulted);
    read_field(j, "block_names", s.block_names, defaulted);
    read_field(j, "block_dims", s.block_dims, defaulted);
    read_field(j, "block_scales", s.block_scales, defaulted);
    read_field(j, "clusters", s.clusters, defaulted);
    read_field(j, "separation", s.separation, defaulted);
    read_field(j, "informative_fraction", s.informative_fraction, defaulted);
    read_field(j, "missing_rate", s.missing_rate, defaulted);
    read_field(j, "baseline_hazard", s.baseline_hazard, defaulted);
    read_field(j, "hazard_ratios", s.hazard_ratios, defaulted);
    read_field(j, "censor_rate", s.censor_rate, defaulted);
    read_field(j, "covariate_association", s.covariate_association, defaulted);
    read_field(j, "seed", s.seed, defaulted);
    s.validate();
    return s;
}

SimulatedData simulate(const SimulationSpec& spec) {
    spec.validate();
    const std::size_t n = spec.samples;
    const std::size_t k = spec.clusters;
    // Separate streams so changing one aspect (say censoring) leaves the others intact.
    Rng label_rng(derive_seed(spec.seed, 0));
    Rng mean_rng(derive_seed(spec.seed, 1));
    Rng noise_rng(derive_seed(spec.seed, 2));
    Rng survival_rng(derive_seed(spec.seed, 3));
    Rng covariate_rng(derive_seed(spec.seed, 4));
    Rng missing_rng(derive_seed(spec.seed, 5));

    std::vector<std::size_t> planted(n);
    for (std::size_t i = 0; i < n; ++i) {
        planted[i] = i % k;
    }
    label_rng.shuffle(planted);

    SimulatedData out;
    const std::size_t width = digits(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.dataset.sample_ids.push_back(padded("S", i + 1, width));
    }
    for (std::size_t b = 0; b < spec.block_dims.size(); ++b) {
        const std::size_t p = spec.block_dims[b];
        OmicsBlock block;
        block.name = spec.block_names[b];
        const std::size_t fw = digits(p);
        for (std::size_t j = 0; j < p; ++j) {
            block.features.push_back(padded("g", j + 1, fw));
        }
        // Per-feature cluster offsets, centred so the clusters sit symmetrically around 0.
        Matrix offsets(k, p);
        for (std::size_t j = 0; j < p; ++j) {
            const bool informative = mean_rng.uniform() < spec.informative_fraction;
            double centre = 0.0;
            for (std::size_t c = 0; c < k; ++c) {
                offsets(c, j) = informative ? spec.separation * mean_rng.normal() : 0.0;
                centre += offsets(c, j);
            }
            for (std::size_t c = 0; c < k; ++c) {
                offsets(c, j) -= centre / static_cast<double>(k);
            }
        }
        block.values = Matrix(n, p);
        const double scale = spec.block_scales[b];
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < p; ++j) {
                block.values(i, j) = scale * (offsets(planted[i], j) + noise_rng.normal());
                if (spec.missing_rate > 0.0 && missing_rng.uniform() < spec.missing_rate) {
                    block.values(i, j) = std::nan("");
                }
            }
        }
        out.dataset.blocks.push_back(std::move(block));
    }

    ClinicalTable& clinical = out.clinical;
    clinical.sample_ids = out.dataset.sample_ids;
    ClinicalCovariate sex{"sex", true, {}, {}};
    ClinicalCovariate age{"age", false, {}, {}};
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = planted[i];
        const double rate = spec.baseline_hazard * spec.hazard_ratios[c % spec.hazard_ratios.size()];
        const double death = survival_rng.exponential(rate);
        const double censor = spec.censor_rate > 0.0 ? survival_rng.exponential(spec.censor_rate)
                                                     : std::numeric_limits<double>::infinity();
        const double observed = std::max(1.0, std::ceil(std::min(death, censor)));
        clinical.survival.push_back(SurvivalRecord{clinical.sample_ids[i], observed, death <= censor});

        const double position = k == 1 ? 0.5 : static_cast<double>(c) / static_cast<double>(k - 1);
        const double p_male = 0.5 + spec.covariate_association * (position - 0.5);
        sex.categories.push_back(covariate_rng.uniform() < p_male ? "M" : "F");
        age.values.push_back(std::round(10.0 * covariate_rng.normal(60.0, 10.0)) / 10.0);
    }
    clinical.covariates = {std::move(sex), std::move(age)};
    out.planted = ClusterAssignment::from_labels(std::span<const std::size_t>(planted));
    // Keep the planted ids (not first-appearance order) so cluster c maps to hazard ratio c.
    out.planted.labels = planted;
    return out;
}

} // namespace subtyper
