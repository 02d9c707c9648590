#include "subtyper/pipeline.hpp"

#include "subtyper/errors.hpp"
#include "subtyper/rng.hpp"

#include <Eigen/Core>
#include <boost/version.hpp>

#include <algorithm>
#include <cmath>
#include <ctime>
#include <fstream>
#include <numeric>
#include <set>
#include <unordered_map>

#ifndef SUBTYPER_VERSION
#define SUBTYPER_VERSION "0.0.0"
#endif

namespace subtyper {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

// Reads keys from one config section, recording defaults and rejecting unknown keys.
class Section {
public:
    Section(const json& j, std::string prefix, std::vector<std::string>& defaulted)
        : j_(j), prefix_(std::move(prefix)), defaulted_(defaulted) {
        if (!j_.is_null() && !j_.is_object()) {
            throw ConfigError(name("") + " must be an object");
        }
    }

    bool has(const char* key) const { return j_.is_object() && j_.contains(key) && !j_.at(key).is_null(); }

    template <typename T>
    void get(const char* key, T& field) {
        seen_.insert(key);
        if (!has(key)) {
            defaulted_.push_back(name(key));
            return;
        }
        try {
            j_.at(key).get_to(field);
        } catch (const json::exception&) {
            throw ConfigError(name(key) + ": expected " + describe(field) + ", got " + j_.at(key).dump());
        }
    }

    template <typename T>
    void get_optional(const char* key, std::optional<T>& field) {
        seen_.insert(key);
        if (!has(key)) {
            defaulted_.push_back(name(key));
            return;
        }
        T value{};
        try {
            j_.at(key).get_to(value);
        } catch (const json::exception&) {
            throw ConfigError(name(key) + ": expected " + describe(value) + ", got " + j_.at(key).dump());
        }
        field = value;
    }

    void allow(const char* key) { seen_.insert(key); }

    const json& raw(const char* key) const { return j_.at(key); }

    void reject_unknown() const {
        if (!j_.is_object()) {
            return;
        }
        for (const auto& [key, value] : j_.items()) {
            if (!seen_.count(key)) {
                throw ConfigError("unknown config key '" + name(key.c_str()) + "'");
            }
        }
    }

private:
    std::string name(const char* key) const {
        if (prefix_.empty()) {
            return key;
        }
        return *key ? prefix_ + "." + key : prefix_;
    }
    template <typename T>
    static std::string describe(const T&) {
        if constexpr (std::is_same_v<T, bool>) {
            return "a boolean";
        } else if constexpr (std::is_integral_v<T>) {
            return "a non-negative integer";
        } else if constexpr (std::is_floating_point_v<T>) {
            return "a number";
        } else if constexpr (std::is_same_v<T, std::string>) {
            return "a string";
        } else {
            return "a list";
        }
    }

    const json& j_;
    std::string prefix_;
    std::vector<std::string>& defaulted_;
    std::set<std::string> seen_;
};

const json& child(const json& j, const char* key) {
    static const json null;
    return j.is_object() && j.contains(key) ? j.at(key) : null;
}

fs::path resolve(const fs::path& base, const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

void require_file(const fs::path& p, const std::string& what) {
    if (!fs::is_regular_file(p)) {
        throw ConfigError(what + " '" + p.string() + "' does not exist");
    }
}

std::vector<std::size_t> cluster_sizes(const ClusterAssignment& a) {
    std::vector<std::size_t> sizes(a.k, 0);
    for (std::size_t l : a.labels) {
        ++sizes[l];
    }
    return sizes;
}

json test_json(const TestResult& t) {
    json j{{"statistic", t.statistic},
           {"degrees_of_freedom", t.degrees_of_freedom},
           {"p_asymptotic", t.p_asymptotic},
           {"warnings", t.warnings}};
    if (t.p_empirical) {
        j["p_empirical"] = *t.p_empirical;
        j["permutations"] = t.permutations;
    }
    return j;
}

std::string utc_now() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

[[noreturn]] void rethrow_in_stage(const std::string& stage) {
    const std::string prefix = stage + ": ";
    try {
        throw;
    } catch (const ConfigError& e) {
        throw ConfigError(prefix + e.what());
    } catch (const NumericError& e) {
        throw NumericError(prefix + e.what());
    } catch (const ArgumentError& e) {
        throw ArgumentError(prefix + e.what());
    } catch (const ShapeError& e) {
        throw ShapeError(prefix + e.what());
    } catch (const ParseError& e) {
        throw ParseError(prefix, e);
    } catch (const DataError& e) {
        throw DataError(prefix + e.what());
    } catch (const std::exception& e) {
        throw Error(prefix + e.what());
    }
}

} // namespace

std::string version() { return SUBTYPER_VERSION; }

RunConfig RunConfig::from_json(const json& j, const fs::path& base_dir) {
    if (!j.is_object()) {
        throw ConfigError("config must be a JSON object");
    }
    RunConfig c;
    Section top(j, "", c.defaulted);
    top.get("seed", c.seed);
    top.get("threads", c.threads);
    std::string output;
    top.get("output", output);
    if (!output.empty()) {
        c.output = resolve(base_dir, output);
    }
    top.allow("simulation");

    top.allow("data");
    Section data(child(j, "data"), "data", c.defaulted);
    data.allow("blocks");
    if (data.has("blocks")) {
        const json& blocks = data.raw("blocks");
        if (!blocks.is_array()) {
            throw ConfigError("data.blocks must be a list");
        }
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            std::vector<std::string> ignored;
            Section s(blocks[b], "data.blocks[" + std::to_string(b) + "]", ignored);
            BlockSource src;
            std::string path;
            s.get("path", path);
            s.get("name", src.name);
            s.get("transpose", src.transpose);
            s.reject_unknown();
            if (path.empty()) {
                throw ConfigError("data.blocks[" + std::to_string(b) + "].path is required");
            }
            src.path = resolve(base_dir, path);
            if (src.name.empty()) {
                src.name = src.path.stem().string();
            }
            c.data.blocks.push_back(std::move(src));
        }
    }
    std::optional<std::string> clinical;
    data.get_optional("clinical", clinical);
    if (clinical) {
        c.data.clinical = resolve(base_dir, *clinical);
    }
    data.get("categorical", c.data.categorical);
    std::optional<std::string> reference;
    data.get_optional("reference_labels", reference);
    if (reference) {
        c.data.reference_labels = resolve(base_dir, *reference);
    }
    data.reject_unknown();

    top.allow("model");
    const json& model = child(j, "model");
    if (!model.is_null() && !model.is_object()) {
        throw ConfigError("model must be an object");
    }
    c.model = model_config_from_json(model.is_null() ? json::object() : model, &c.defaulted);
    c.model_seed_given = model.is_object() && model.contains("seed");
    {
        std::vector<std::string> ignored;
        Section check(model, "model", ignored);
        for (const char* key : {"input_dim", "hidden_width", "latent_dim", "num_heads", "head_dim", "token_count",
                                "epochs", "batch_size", "learning_rate", "layer_norm_eps", "seed"}) {
            check.allow(key);
        }
        check.reject_unknown();
    }

    top.allow("cluster");
    Section cl(child(j, "cluster"), "cluster", c.defaulted);
    cl.get("mode", c.cluster.mode);
    cl.get_optional("k", c.cluster.k);
    cl.get("k_min", c.cluster.k_min);
    cl.get("k_max", c.cluster.k_max);
    cl.get("resamples", c.cluster.resamples);
    cl.get("rate", c.cluster.rate);
    cl.get("restarts", c.cluster.restarts);
    cl.reject_unknown();

    top.allow("evaluation");
    Section ev(child(j, "evaluation"), "evaluation", c.defaulted);
    ev.get("enabled", c.evaluation.enabled);
    ev.get("permutations", c.evaluation.permutations);
    ev.get("alpha", c.evaluation.alpha);
    ev.reject_unknown();

    top.allow("biomarkers");
    Section bm(child(j, "biomarkers"), "biomarkers", c.defaulted);
    bm.get("enabled", c.biomarkers.enabled);
    bm.get("top_k", c.biomarkers.top_k);
    bm.get("n_trees", c.biomarkers.forest.n_trees);
    bm.get_optional("max_features", c.biomarkers.forest.max_features);
    bm.get("min_leaf", c.biomarkers.forest.min_leaf);
    bm.get_optional("max_depth", c.biomarkers.forest.max_depth);
    bm.get("bootstrap", c.biomarkers.forest.bootstrap);
    bm.reject_unknown();

    top.reject_unknown();
    return c;
}

RunConfig RunConfig::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file '" + path.string() + "'");
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return from_json(j, fs::absolute(path).parent_path());
}

json RunConfig::to_json() const {
    json blocks = json::array();
    for (const auto& b : data.blocks) {
        blocks.push_back({{"name", b.name}, {"path", b.path.string()}, {"transpose", b.transpose}});
    }
    json d{{"blocks", blocks}, {"categorical", data.categorical}};
    d["clinical"] = data.clinical ? json(data.clinical->string()) : json(nullptr);
    d["reference_labels"] = data.reference_labels ? json(data.reference_labels->string()) : json(nullptr);
    json m = subtyper::to_json(model);
    if (!model_seed_given) {
        m.erase("seed");
    }
    json cl{{"mode", cluster.mode},     {"k_min", cluster.k_min},         {"k_max", cluster.k_max},
            {"resamples", cluster.resamples}, {"rate", cluster.rate}, {"restarts", cluster.restarts}};
    cl["k"] = cluster.k ? json(*cluster.k) : json(nullptr);
    json bm{{"enabled", biomarkers.enabled},
            {"top_k", biomarkers.top_k},
            {"n_trees", biomarkers.forest.n_trees},
            {"min_leaf", biomarkers.forest.min_leaf},
            {"bootstrap", biomarkers.forest.bootstrap}};
    bm["max_features"] = biomarkers.forest.max_features ? json(*biomarkers.forest.max_features) : json(nullptr);
    bm["max_depth"] = biomarkers.forest.max_depth ? json(*biomarkers.forest.max_depth) : json(nullptr);
    return {{"seed", seed},
            {"threads", threads},
            {"output", output.string()},
            {"data", d},
            {"model", m},
            {"cluster", cl},
            {"evaluation",
             {{"enabled", evaluation.enabled}, {"permutations", evaluation.permutations}, {"alpha", evaluation.alpha}}},
            {"biomarkers", bm}};
}

void RunConfig::validate(bool require_data) const {
    if (threads == 0) {
        throw ConfigError("threads must be at least 1");
    }
    if (require_data) {
        if (data.blocks.empty()) {
            throw ConfigError("data.blocks: at least one omics block is required");
        }
        std::set<std::string> names;
        for (const auto& b : data.blocks) {
            require_file(b.path, "omics block '" + b.name + "'");
            if (!names.insert(b.name).second) {
                throw ConfigError("data.blocks: duplicate block name '" + b.name + "'");
            }
        }
        if (evaluation.enabled) {
            if (!data.clinical) {
                throw ConfigError("evaluation is enabled but data.clinical is not set");
            }
            require_file(*data.clinical, "clinical file");
        }
        if (data.reference_labels) {
            require_file(*data.reference_labels, "reference labels");
        }
    }
    ModelConfig m = model;
    m.input_dim = std::max<std::size_t>(m.input_dim, 1);
    m.validate();
    if (cluster.mode == "fixed") {
        if (!cluster.k || *cluster.k == 0) {
            throw ConfigError("cluster.k is required (>= 1) when cluster.mode is 'fixed'");
        }
    } else if (cluster.mode == "auto") {
        if (cluster.k_min < 2 || cluster.k_min > cluster.k_max) {
            throw ConfigError("cluster: need 2 <= k_min <= k_max");
        }
        if (cluster.resamples == 0 || !(cluster.rate > 0.0 && cluster.rate <= 1.0)) {
            throw ConfigError("cluster: resamples >= 1 and rate in (0, 1] required");
        }
    } else {
        throw ConfigError("cluster.mode must be 'fixed' or 'auto', got '" + cluster.mode + "'");
    }
    if (cluster.restarts == 0) {
        throw ConfigError("cluster.restarts must be at least 1");
    }
    if (evaluation.permutations == 0) {
        throw ConfigError("evaluation.permutations must be at least 1");
    }
    if (!(evaluation.alpha > 0.0 && evaluation.alpha < 1.0)) {
        throw ConfigError("evaluation.alpha must be in (0, 1)");
    }
    if (biomarkers.forest.n_trees == 0 || biomarkers.forest.min_leaf == 0) {
        throw ConfigError("biomarkers: n_trees and min_leaf must be at least 1");
    }
    if (biomarkers.forest.max_features && *biomarkers.forest.max_features == 0) {
        throw ConfigError("biomarkers.max_features must be at least 1");
    }
}

StageSeeds RunConfig::seeds() const {
    StageSeeds s;
    s.model = model_seed_given ? model.seed : derive_seed(seed, 1);
    s.kmeans = derive_seed(seed, 2);
    s.consensus = derive_seed(seed, 3);
    s.permutations = derive_seed(seed, 4);
    s.forest = derive_seed(seed, 5);
    return s;
}

PreparedData prepare(const RunConfig& config, std::vector<std::string>* log) {
    PreparedData out;
    out.dataset = impute_mean(load_omics(config.data.blocks, log), log);
    Standardized st = standardize(out.dataset);
    out.transform = std::move(st.transform);
    out.features = st.dataset.concatenated();
    if (!out.features.all_finite()) {
        throw NumericError("standardized features overflowed to non-finite values");
    }
    out.feature_names = out.dataset.feature_names();
    if (config.data.clinical) {
        const ClinicalTable table = load_clinical(*config.data.clinical, config.data.categorical, log);
        out.clinical = table.aligned_to(out.dataset.sample_ids, log);
    }
    if (config.data.reference_labels) {
        const LabelFile ref = read_labels_csv(*config.data.reference_labels);
        std::unordered_map<std::string, std::size_t> index;
        for (std::size_t i = 0; i < ref.sample_ids.size(); ++i) {
            index.emplace(ref.sample_ids[i], ref.labels.labels[i]);
        }
        std::vector<std::size_t> aligned;
        for (const auto& id : out.dataset.sample_ids) {
            const auto it = index.find(id);
            if (it == index.end()) {
                throw DataError("reference labels have no entry for sample '" + id + "'");
            }
            aligned.push_back(it->second);
        }
        out.reference = ClusterAssignment::from_labels(std::span<const std::size_t>(aligned));
    }
    return out;
}

FitOutcome fit_model(const RunConfig& config, const Matrix& features) {
    ModelConfig mc = config.model;
    if (mc.input_dim != 0 && mc.input_dim != features.cols()) {
        throw ConfigError("model.input_dim = " + std::to_string(mc.input_dim) + " but the data has " +
                          std::to_string(features.cols()) + " features");
    }
    mc.input_dim = features.cols();
    mc.seed = config.seeds().model;
    TrainResult trained = train(mc, features);
    FitOutcome out{std::move(trained.params), std::move(trained.report), Matrix()};
    out.latent = encode(out.params, features);
    if (!out.latent.all_finite()) {
        throw NumericError("latent factors contain non-finite values");
    }
    return out;
}

ClusterOutcome cluster_latent(const RunConfig& config, const Matrix& latent) {
    ClusterOutcome out;
    const StageSeeds seeds = config.seeds();
    if (config.cluster.mode == "fixed") {
        out.labels = kmeans(latent, *config.cluster.k, config.cluster.restarts, seeds.kmeans);
        return out;
    }
    KSelection sel = select_k(latent, config.cluster.k_min, config.cluster.k_max, config.cluster.resamples,
                              config.cluster.rate, seeds.consensus, config.threads);
    out.labels = consensus_labels(sel.chosen, sel.chosen_k);
    out.selection = std::move(sel);
    return out;
}

Evaluation evaluate(const RunConfig& config, const ClusterAssignment& labels, const ClinicalTable* clinical,
                    const ClusterAssignment* reference) {
    Evaluation out;
    if (reference) {
        out.nmi = nmi(labels, *reference);
        out.ari = ari(labels, *reference);
    }
    if (!clinical) {
        out.skipped = "no clinical data";
        return out;
    }
    if (clinical->sample_ids.size() != labels.size()) {
        throw ArgumentError("evaluate: clinical table is not aligned with the labels");
    }
    out.enrichment = enrichment(labels, clinical->covariates, config.evaluation.alpha);

    std::vector<SurvivalRecord> records;
    ClusterAssignment groups;
    groups.k = labels.k;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (clinical->survival[i]) {
            records.push_back(*clinical->survival[i]);
            groups.labels.push_back(labels.labels[i]);
        }
    }
    out.samples_with_survival = records.size();
    for (std::size_t g = 0; g < labels.k; ++g) {
        std::vector<SurvivalRecord> members;
        for (std::size_t i = 0; i < records.size(); ++i) {
            if (groups.labels[i] == g) {
                members.push_back(records[i]);
            }
        }
        if (!members.empty()) {
            out.curves.push_back({g, km_curve(members)});
        }
    }
    if (records.empty()) {
        out.skipped = "no survival records";
        return out;
    }
    if (out.curves.size() < 2) {
        out.skipped = "fewer than two clusters among samples with survival data";
        return out;
    }
    out.logrank = empirical_p(groups, records, config.evaluation.permutations, config.seeds().permutations,
                              config.threads);
    return out;
}

BiomarkerOutcome find_biomarkers(const RunConfig& config, const Matrix& features, const ClusterAssignment& labels,
                                 std::span<const std::string> names) {
    BiomarkerOutcome out;
    if (labels.k < 2) {
        out.skipped = "a single cluster has no discriminating features";
        out.ranking.importance.assign(features.cols(), 0.0);
        out.ranking.order.resize(features.cols());
        std::iota(out.ranking.order.begin(), out.ranking.order.end(), std::size_t{0});
        out.ranking.no_splits = true;
        return out;
    }
    ForestConfig fc = config.biomarkers.forest;
    fc.seed = config.seeds().forest;
    if (fc.max_features) {
        fc.max_features = std::min(*fc.max_features, features.cols());
    }
    const Forest forest = fit_forest(features, labels, fc, config.threads);
    out.ranking = importances(forest);
    out.top = top_biomarkers(out.ranking, std::min(config.biomarkers.top_k, features.cols()), names);
    return out;
}

json cluster_json(const ClusterOutcome& c) {
    json j{{"k", c.labels.k}, {"sizes", cluster_sizes(c.labels)}};
    if (c.selection) {
        j["mode"] = "auto";
        json pac = json::object();
        for (std::size_t i = 0; i < c.selection->pac.size(); ++i) {
            pac[std::to_string(c.selection->k_min + i)] = c.selection->pac[i];
        }
        j["selection"] = {{"k_min", c.selection->k_min},
                          {"k_max", c.selection->k_max},
                          {"pac", pac},
                          {"chosen_k", c.selection->chosen_k},
                          {"unsampled_pairs", c.selection->chosen.unsampled_pairs}};
    } else {
        j["mode"] = "fixed";
        j["inertia"] = c.labels.inertia;
    }
    return j;
}

json evaluation_json(const Evaluation& e) {
    json j;
    json surv{{"samples", e.samples_with_survival}};
    if (e.logrank) {
        surv.update(test_json(*e.logrank));
    } else {
        surv["skipped"] = e.skipped;
    }
    j["logrank"] = surv;
    json params = json::array();
    for (const auto& entry : e.enrichment.entries) {
        json p{{"parameter", entry.parameter}, {"test", entry.test}, {"significant", entry.significant}};
        if (entry.skipped.empty()) {
            p.update(test_json(entry.result));
        } else {
            p["skipped"] = entry.skipped;
        }
        params.push_back(p);
    }
    j["enrichment"] = {{"parameters", params}, {"significant_count", e.enrichment.significant_count}};
    if (e.nmi) {
        j["agreement"] = {{"nmi", *e.nmi}, {"ari", *e.ari}};
    }
    return j;
}

Manifest::Manifest(std::string command, const RunConfig& config) {
    const StageSeeds s = config.seeds();
    j_ = {{"command", std::move(command)},
          {"started_at", utc_now()},
          {"version", version()},
          {"build",
           {{"compiler", __VERSION__},
            {"cxx_standard", __cplusplus},
            {"boost", BOOST_LIB_VERSION},
            {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                          std::to_string(EIGEN_MINOR_VERSION)}}},
          {"config", config.to_json()},
          {"defaults_applied", config.defaulted},
          {"seeds",
           {{"master", config.seed},
            {"model", s.model},
            {"kmeans", s.kmeans},
            {"consensus", s.consensus},
            {"permutations", s.permutations},
            {"forest", s.forest}}},
          {"threads", config.threads},
          {"stages", nlohmann::json::array()},
          {"log", nlohmann::json::array()},
          {"outputs", nlohmann::json::array()},
          {"complete", false}};
}

void Manifest::finish(const std::string& name, std::chrono::steady_clock::time_point start) {
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    j_["stages"].push_back({{"name", name}, {"status", "ok"}, {"seconds", seconds}});
}

void Manifest::fail(const std::string& name, std::chrono::steady_clock::time_point start) {
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::string message = "unknown error";
    try {
        throw;
    } catch (const std::exception& e) {
        message = e.what();
    } catch (...) {
    }
    j_["stages"].push_back({{"name", name}, {"status", "failed"}, {"seconds", seconds}, {"error", message}});
    j_["complete"] = false;
    j_["failed_stage"] = name;
    if (!dir_.empty()) {
        try {
            write(dir_);
        } catch (const std::exception&) {
            // The original error matters more than a failed manifest write.
        }
    }
    rethrow_in_stage(name);
}

void Manifest::output(const std::string& file) { j_["outputs"].push_back(file); }

void Manifest::note(const std::string& message) { j_["log"].push_back(message); }

void Manifest::notes(const std::vector<std::string>& messages) {
    for (const auto& m : messages) {
        note(m);
    }
}

void Manifest::set(const std::string& key, nlohmann::json value) { j_[key] = std::move(value); }

void Manifest::complete() { j_["complete"] = true; }

void Manifest::write(const fs::path& dir, bool append) const {
    const fs::path path = dir / "manifest.json";
    nlohmann::json doc{{"tool", "subtyper"}, {"version", version()}, {"invocations", nlohmann::json::array()}};
    if (append && fs::exists(path)) {
        try {
            nlohmann::json existing = read_json(path);
            if (existing.contains("invocations") && existing["invocations"].is_array()) {
                doc["invocations"] = existing["invocations"];
            }
        } catch (const DataError&) {
            // Unreadable manifest: start a fresh one.
        }
    }
    doc["invocations"].push_back(j_);
    write_json(path, doc);
}

RunSummary run(const RunConfig& config) {
    config.validate();
    const fs::path out = config.output;
    fs::create_directories(out);
    Manifest manifest("run", config);
    manifest.set_directory(out);
    std::vector<std::string> log;

    PreparedData data = manifest.stage("prepare", [&] { return prepare(config, &log); });
    manifest.notes(log);
    manifest.set("data", {{"samples", data.dataset.samples()},
                          {"features", data.features.cols()},
                          {"blocks", data.dataset.blocks.size()}});
    manifest.stage("write_preprocess", [&] {
        write_json(out / "preprocess.json", {{"sample_ids", data.dataset.sample_ids},
                                             {"feature_names", data.feature_names},
                                             {"standardizer", data.transform.to_json()}});
    });
    manifest.output("preprocess.json");

    FitOutcome fit = manifest.stage("train", [&] { return fit_model(config, data.features); });
    manifest.stage("write_model", [&] {
        save_checkpoint(fit.params, out / "checkpoint.bin");
        write_latent_csv(out / "latent.csv", data.dataset.sample_ids, fit.latent);
    });
    manifest.output("checkpoint.bin");
    manifest.output("latent.csv");

    ClusterOutcome clusters = manifest.stage("cluster", [&] { return cluster_latent(config, fit.latent); });
    manifest.stage("write_clusters", [&] {
        write_labels_csv(out / "labels.csv", data.dataset.sample_ids, clusters.labels);
        if (clusters.selection) {
            write_consensus_csv(out / ("consensus_k" + std::to_string(clusters.selection->chosen_k) + ".csv"),
                                data.dataset.sample_ids, clusters.selection->chosen);
        }
    });
    manifest.output("labels.csv");
    if (clusters.selection) {
        manifest.output("consensus_k" + std::to_string(clusters.selection->chosen_k) + ".csv");
    }

    json metrics{{"samples", data.dataset.samples()},
                 {"features", data.features.cols()},
                 {"training",
                  {{"epochs", fit.report.epochs_run},
                   {"first_loss", fit.report.epoch_losses.empty() ? json(nullptr) : json(fit.report.epoch_losses.front())},
                   {"final_loss", fit.report.final_loss ? json(*fit.report.final_loss) : json(nullptr)}}},
                 {"cluster", cluster_json(clusters)}};

    if (config.evaluation.enabled || data.reference) {
        Evaluation ev = manifest.stage("evaluate", [&] {
            return evaluate(config, clusters.labels,
                            config.evaluation.enabled && data.clinical ? &*data.clinical : nullptr,
                            data.reference ? &*data.reference : nullptr);
        });
        metrics.update(evaluation_json(ev));
        if (!ev.curves.empty()) {
            manifest.stage("write_survival", [&] {
                write_km_csv(out / "km_curves.csv", ev.curves);
                write_text(out / "km.svg", km_svg(ev.curves, "Kaplan-Meier by cluster"));
            });
            manifest.output("km_curves.csv");
            manifest.output("km.svg");
        }
    }

    if (config.biomarkers.enabled) {
        BiomarkerOutcome bm = manifest.stage(
            "biomarkers", [&] { return find_biomarkers(config, data.features, clusters.labels, data.feature_names); });
        json top = json::array();
        for (const auto& b : bm.top) {
            top.push_back({{"feature", b.name}, {"importance", b.importance}, {"rank", b.rank}});
        }
        metrics["biomarkers"] = {{"top", top}};
        if (!bm.skipped.empty()) {
            metrics["biomarkers"]["skipped"] = bm.skipped;
        } else {
            manifest.stage("write_importance",
                           [&] { write_importance_csv(out / "importance.csv", bm.ranking, data.feature_names); });
            manifest.output("importance.csv");
        }
    }

    manifest.stage("write_metrics", [&] { write_json(out / "metrics.json", metrics); });
    manifest.output("metrics.json");
    manifest.output("manifest.json");
    manifest.complete();
    manifest.write(out);
    return {out, clusters.labels.k, metrics, manifest.json()};
}

nlohmann::json write_simulation(const SimulatedData& sim, const fs::path& dir, std::uint64_t seed) {
    fs::create_directories(dir);
    json blocks = json::array();
    for (const auto& block : sim.dataset.blocks) {
        std::string text = "sample_id";
        for (const auto& f : block.features) {
            text += "," + f;
        }
        text += "\n";
        for (std::size_t i = 0; i < sim.dataset.samples(); ++i) {
            text += sim.dataset.sample_ids[i];
            for (std::size_t c = 0; c < block.values.cols(); ++c) {
                const double v = block.values(i, c);
                text += "," + (std::isnan(v) ? std::string("NA") : format_double(v));
            }
            text += "\n";
        }
        write_text(dir / (block.name + ".csv"), text);
        blocks.push_back({{"name", block.name}, {"path", block.name + ".csv"}});
    }

    const ClinicalTable& cl = sim.clinical;
    std::string text = "sample_id,time,event";
    for (const auto& cov : cl.covariates) {
        text += "," + cov.name;
    }
    text += "\n";
    json categorical = json::array();
    for (const auto& cov : cl.covariates) {
        if (cov.categorical) {
            categorical.push_back(cov.name);
        }
    }
    for (std::size_t i = 0; i < cl.sample_ids.size(); ++i) {
        text += cl.sample_ids[i];
        if (cl.survival[i]) {
            text += "," + format_double(cl.survival[i]->time) + "," + (cl.survival[i]->event ? "1" : "0");
        } else {
            text += ",NA,NA";
        }
        for (const auto& cov : cl.covariates) {
            if (cov.categorical) {
                text += "," + (cov.categories[i].empty() ? std::string("NA") : cov.categories[i]);
            } else {
                text += "," + (std::isnan(cov.values[i]) ? std::string("NA") : format_double(cov.values[i]));
            }
        }
        text += "\n";
    }
    write_text(dir / "clinical.csv", text);
    write_labels_csv(dir / "planted_labels.csv", sim.dataset.sample_ids, sim.planted);

    json config{{"seed", seed},
                {"output", "out"},
                {"data",
                 {{"blocks", blocks},
                  {"clinical", "clinical.csv"},
                  {"categorical", categorical},
                  {"reference_labels", "planted_labels.csv"}}}};
    write_json(dir / "config.json", config);
    return config;
}

} // namespace subtyper
