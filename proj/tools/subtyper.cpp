#include "subtyper/errors.hpp"
#include "subtyper/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <unordered_map>

using namespace subtyper;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kNumeric = 4 };

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::size_t> threads;
};

void drop_default(RunConfig& c, const std::string& key) {
    c.defaulted.erase(std::remove(c.defaulted.begin(), c.defaulted.end(), key), c.defaulted.end());
}

RunConfig load_config(const Globals& g) {
    RunConfig c = g.config.empty() ? RunConfig::from_json(nlohmann::json::object(), fs::current_path())
                                   : RunConfig::load(g.config);
    if (g.seed) {
        c.seed = *g.seed;
        drop_default(c, "seed");
    }
    if (g.out) {
        c.output = fs::absolute(*g.out);
        drop_default(c, "output");
    }
    if (g.threads) {
        c.threads = *g.threads;
        drop_default(c, "threads");
    }
    return c;
}

void require_blocks(const RunConfig& c) {
    RunConfig copy = c;
    copy.evaluation.enabled = false;
    copy.data.reference_labels.reset();
    copy.validate(true);
}

fs::path or_default(const std::string& given, const fs::path& fallback) {
    return given.empty() ? fallback : fs::path(given);
}

LabelFile labels_for(const fs::path& path, std::span<const std::string> ids) {
    const LabelFile file = read_labels_csv(path);
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < file.sample_ids.size(); ++i) {
        index.emplace(file.sample_ids[i], file.labels.labels[i]);
    }
    std::vector<std::size_t> aligned;
    for (const auto& id : ids) {
        const auto it = index.find(id);
        if (it == index.end()) {
            throw DataError(path.string() + ": no label for sample '" + id + "'");
        }
        aligned.push_back(it->second);
    }
    LabelFile out;
    out.sample_ids.assign(ids.begin(), ids.end());
    out.labels = ClusterAssignment::from_labels(std::span<const std::size_t>(aligned));
    return out;
}

// metrics.json is shared by evaluate and biomarkers; each updates its own keys.
void merge_metrics(const fs::path& path, const nlohmann::json& update) {
    nlohmann::json j = fs::exists(path) ? read_json(path) : nlohmann::json::object();
    j.update(update);
    write_json(path, j);
}

void finish(Manifest& m, const fs::path& out) {
    m.complete();
    m.write(out, true);
    std::cout << "wrote " << out.string() << "\n";
}

int cmd_fit(const RunConfig& c) {
    require_blocks(c);
    const fs::path out = c.output;
    fs::create_directories(out);
    Manifest m("fit", c);
    m.set_directory(out);
    std::vector<std::string> log;
    const PreparedData data = m.stage("prepare", [&] { return prepare(c, &log); });
    m.notes(log);
    const FitOutcome fit = m.stage("train", [&] { return fit_model(c, data.features); });
    m.stage("write", [&] {
        save_checkpoint(fit.params, out / "checkpoint.bin");
        write_latent_csv(out / "latent.csv", data.dataset.sample_ids, fit.latent);
        write_json(out / "preprocess.json", {{"sample_ids", data.dataset.sample_ids},
                                             {"feature_names", data.feature_names},
                                             {"standardizer", data.transform.to_json()}});
    });
    for (const char* f : {"checkpoint.bin", "latent.csv", "preprocess.json"}) {
        m.output(f);
    }
    m.set("training", {{"epochs", fit.report.epochs_run}, {"losses", fit.report.epoch_losses}});
    finish(m, out);
    return kOk;
}

int cmd_cluster(RunConfig c, const std::string& latent_path) {
    c.validate(false);
    const fs::path out = c.output;
    const fs::path latent_file = or_default(latent_path, out / "latent.csv");
    fs::create_directories(out);
    Manifest m(c.cluster.mode == "fixed" ? "cluster" : "cluster-auto", c);
    m.set_directory(out);
    const DelimitedMatrix latent = m.stage("read_latent", [&] { return read_matrix(latent_file); });
    const ClusterOutcome result = m.stage("cluster", [&] { return cluster_latent(c, latent.values); });
    m.stage("write", [&] {
        write_labels_csv(out / "labels.csv", latent.row_ids, result.labels);
        if (result.selection) {
            write_consensus_csv(out / ("consensus_k" + std::to_string(result.selection->chosen_k) + ".csv"),
                                latent.row_ids, result.selection->chosen);
            write_json(out / "k_selection.json", cluster_json(result));
        }
    });
    m.output("labels.csv");
    if (result.selection) {
        m.output("consensus_k" + std::to_string(result.selection->chosen_k) + ".csv");
        m.output("k_selection.json");
    }
    m.set("cluster", cluster_json(result));
    finish(m, out);
    return kOk;
}

int cmd_evaluate(const RunConfig& c, const std::string& labels_path) {
    c.validate(false);
    if (!c.data.clinical) {
        throw ConfigError("evaluate needs data.clinical in the config");
    }
    if (!fs::is_regular_file(*c.data.clinical)) {
        throw ConfigError("clinical file '" + c.data.clinical->string() + "' does not exist");
    }
    const fs::path out = c.output;
    fs::create_directories(out);
    Manifest m("evaluate", c);
    m.set_directory(out);
    std::vector<std::string> log;
    const LabelFile labels = m.stage("read_labels", [&] { return read_labels_csv(or_default(labels_path, out / "labels.csv")); });
    const ClinicalTable clinical = m.stage("read_clinical", [&] {
        return load_clinical(*c.data.clinical, c.data.categorical, &log).aligned_to(labels.sample_ids, &log);
    });
    std::optional<ClusterAssignment> reference;
    if (c.data.reference_labels) {
        reference = m.stage("read_reference",
                            [&] { return labels_for(*c.data.reference_labels, labels.sample_ids).labels; });
    }
    m.notes(log);
    const Evaluation ev = m.stage("evaluate", [&] {
        return evaluate(c, labels.labels, &clinical, reference ? &*reference : nullptr);
    });
    m.stage("write", [&] {
        merge_metrics(out / "metrics.json", evaluation_json(ev));
        if (!ev.curves.empty()) {
            write_km_csv(out / "km_curves.csv", ev.curves);
            write_text(out / "km.svg", km_svg(ev.curves, "Kaplan-Meier by cluster"));
        }
    });
    m.output("metrics.json");
    if (!ev.curves.empty()) {
        m.output("km_curves.csv");
        m.output("km.svg");
    }
    finish(m, out);
    return kOk;
}

int cmd_biomarkers(const RunConfig& c, const std::string& labels_path) {
    require_blocks(c);
    const fs::path out = c.output;
    fs::create_directories(out);
    Manifest m("biomarkers", c);
    m.set_directory(out);
    RunConfig no_clinical = c;
    no_clinical.data.clinical.reset();
    no_clinical.data.reference_labels.reset();
    std::vector<std::string> log;
    const PreparedData data = m.stage("prepare", [&] { return prepare(no_clinical, &log); });
    m.notes(log);
    const LabelFile labels = m.stage("read_labels", [&] {
        return labels_for(or_default(labels_path, out / "labels.csv"), data.dataset.sample_ids);
    });
    const BiomarkerOutcome bm =
        m.stage("biomarkers", [&] { return find_biomarkers(c, data.features, labels.labels, data.feature_names); });
    if (!bm.skipped.empty()) {
        throw ArgumentError("biomarkers: " + bm.skipped);
    }
    nlohmann::json top = nlohmann::json::array();
    for (const auto& b : bm.top) {
        top.push_back({{"feature", b.name}, {"importance", b.importance}, {"rank", b.rank}});
        std::cout << b.rank << "\t" << b.name << "\t" << format_double(b.importance) << "\n";
    }
    m.stage("write", [&] {
        write_importance_csv(out / "importance.csv", bm.ranking, data.feature_names);
        merge_metrics(out / "metrics.json", {{"biomarkers", {{"top", top}}}});
    });
    m.output("importance.csv");
    m.output("metrics.json");
    finish(m, out);
    return kOk;
}

int cmd_simulate(const Globals& g, const std::optional<std::size_t>& samples, const std::optional<std::size_t>& k,
                 const std::optional<double>& separation) {
    nlohmann::json section = nlohmann::json::object();
    if (!g.config.empty()) {
        const nlohmann::json j = read_json(g.config);
        if (j.contains("simulation")) {
            section = j.at("simulation");
        }
    }
    std::uint64_t seed = 0;
    if (g.seed) {
        seed = *g.seed;
    } else if (section.contains("seed")) {
        seed = section.at("seed").get<std::uint64_t>();
    }
    section["seed"] = seed;
    if (samples) {
        section["samples"] = *samples;
    }
    if (k) {
        section["clusters"] = *k;
    }
    if (separation) {
        section["separation"] = *separation;
    }
    std::vector<std::string> defaulted;
    const SimulationSpec spec = SimulationSpec::from_json(section, &defaulted);
    spec.validate();
    const fs::path out = fs::absolute(g.out.value_or("simulated"));
    nlohmann::json config = write_simulation(simulate(spec), out, seed);
    config["simulation"] = spec.to_json();
    if (spec.clusters == 1) {
        config["cluster"] = {{"mode", "fixed"}, {"k", 1}};
    }
    write_json(out / "config.json", config);
    nlohmann::json note{{"command", "simulate"}, {"simulation", spec.to_json()}, {"defaults_applied", defaulted}};
    write_json(out / "simulation.json", note);
    std::cout << "wrote " << out.string() << "\n";
    return kOk;
}

int cmd_run(const RunConfig& c) {
    const RunSummary s = run(c);
    std::cout << "k = " << s.k << "\n";
    if (s.metrics.contains("logrank") && s.metrics["logrank"].contains("p_empirical")) {
        std::cout << "log-rank p (empirical) = " << s.metrics["logrank"]["p_empirical"].get<double>() << "\n";
    }
    std::cout << "wrote " << s.output.string() << "\n";
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-omics subtype discovery"};
    app.set_version_flag("--version", version());
    app.require_subcommand(1);
    app.fallthrough();

    Globals g;
    app.add_option("--config", g.config, "JSON run configuration")->check(CLI::ExistingFile);
    app.add_option("--seed", g.seed, "master seed");
    app.add_option("--out", g.out, "output directory");
    app.add_option("--threads", g.threads, "worker threads")->check(CLI::PositiveNumber);

    auto* fit = app.add_subcommand("fit", "train the autoencoder, write checkpoint and latent factors");

    std::string latent;
    std::optional<std::size_t> k, restarts;
    auto* cluster = app.add_subcommand("cluster", "k-means on latent factors with a fixed k");
    cluster->add_option("--k", k, "number of clusters")->required()->check(CLI::PositiveNumber);
    cluster->add_option("--restarts", restarts, "k-means restarts")->check(CLI::PositiveNumber);
    cluster->add_option("--latent", latent, "latent CSV (default <out>/latent.csv)");

    std::optional<std::size_t> k_min, k_max, resamples;
    std::optional<double> rate;
    auto* cluster_auto = app.add_subcommand("cluster-auto", "consensus clustering with automatic k");
    cluster_auto->add_option("--k-min", k_min);
    cluster_auto->add_option("--k-max", k_max);
    cluster_auto->add_option("--resamples", resamples);
    cluster_auto->add_option("--rate", rate, "subsampling rate");
    cluster_auto->add_option("--latent", latent, "latent CSV (default <out>/latent.csv)");

    std::string labels;
    std::optional<std::size_t> permutations;
    std::optional<double> alpha;
    auto* evaluate_cmd = app.add_subcommand("evaluate", "survival and clinical enrichment tests");
    evaluate_cmd->add_option("--permutations", permutations)->check(CLI::PositiveNumber);
    evaluate_cmd->add_option("--alpha", alpha);
    evaluate_cmd->add_option("--labels", labels, "labels CSV (default <out>/labels.csv)");

    std::optional<std::size_t> top_k, n_trees;
    auto* biomarkers = app.add_subcommand("biomarkers", "random-forest feature ranking");
    biomarkers->add_option("--top-k", top_k);
    biomarkers->add_option("--n-trees", n_trees)->check(CLI::PositiveNumber);
    biomarkers->add_option("--labels", labels, "labels CSV (default <out>/labels.csv)");

    std::optional<std::size_t> samples, clusters;
    std::optional<double> separation;
    auto* simulate_cmd = app.add_subcommand("simulate", "write a synthetic cohort and a matching config");
    simulate_cmd->add_option("--samples", samples);
    simulate_cmd->add_option("--clusters", clusters);
    simulate_cmd->add_option("--separation", separation);

    auto* run_cmd = app.add_subcommand("run", "full pipeline from one config file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    try {
        if (simulate_cmd->parsed()) {
            return cmd_simulate(g, samples, clusters, separation);
        }
        RunConfig c = load_config(g);
        if (fit->parsed()) {
            return cmd_fit(c);
        }
        if (cluster->parsed()) {
            c.cluster.mode = "fixed";
            c.cluster.k = k;
            if (restarts) {
                c.cluster.restarts = *restarts;
            }
            return cmd_cluster(c, latent);
        }
        if (cluster_auto->parsed()) {
            c.cluster.mode = "auto";
            c.cluster.k_min = k_min.value_or(c.cluster.k_min);
            c.cluster.k_max = k_max.value_or(c.cluster.k_max);
            c.cluster.resamples = resamples.value_or(c.cluster.resamples);
            c.cluster.rate = rate.value_or(c.cluster.rate);
            return cmd_cluster(c, latent);
        }
        if (evaluate_cmd->parsed()) {
            c.evaluation.permutations = permutations.value_or(c.evaluation.permutations);
            c.evaluation.alpha = alpha.value_or(c.evaluation.alpha);
            return cmd_evaluate(c, labels);
        }
        if (biomarkers->parsed()) {
            c.biomarkers.top_k = top_k.value_or(c.biomarkers.top_k);
            c.biomarkers.forest.n_trees = n_trees.value_or(c.biomarkers.forest.n_trees);
            return cmd_biomarkers(c, labels);
        }
        if (run_cmd->parsed()) {
            return cmd_run(c);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const ArgumentError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kData;
    } catch (const ShapeError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kData;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kNumeric;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFailure;
    }
    return kFailure;
}
