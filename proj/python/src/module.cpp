#include "subtyper/errors.hpp"
#include "subtyper/pipeline.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace subtyper;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
    if (a.ndim() != 2) {
        throw ShapeError("expected a 2-d array, got " + std::to_string(a.ndim()) + " dimensions");
    }
    const auto rows = static_cast<std::size_t>(a.shape(0));
    const auto cols = static_cast<std::size_t>(a.shape(1));
    return Matrix(rows, cols, std::vector<double>(a.data(), a.data() + rows * cols));
}

py::array_t<double> to_array(const Matrix& m) {
    py::array_t<double> out({m.rows(), m.cols()});
    std::copy(m.data().begin(), m.data().end(), out.mutable_data());
    return out;
}

ClusterAssignment to_labels(const std::vector<long long>& raw) {
    return ClusterAssignment::from_labels(std::span<const long long>(raw));
}

std::vector<SurvivalRecord> to_records(const std::vector<double>& time, const std::vector<bool>& event) {
    if (time.size() != event.size()) {
        throw ArgumentError("time and event differ in length");
    }
    std::vector<SurvivalRecord> r;
    for (std::size_t i = 0; i < time.size(); ++i) {
        r.push_back({std::to_string(i), time[i], event[i]});
    }
    return r;
}

py::dict test_dict(const TestResult& t) {
    py::dict d;
    d["statistic"] = t.statistic;
    d["df"] = t.degrees_of_freedom;
    d["p_asymptotic"] = t.p_asymptotic;
    d["p_empirical"] = t.p_empirical ? py::cast(*t.p_empirical) : py::none();
    d["permutations"] = t.permutations;
    d["warnings"] = t.warnings;
    return d;
}

py::object from_json(const nlohmann::json& j) {
    return py::module_::import("json").attr("loads")(j.dump());
}

nlohmann::json to_json(const py::object& o) {
    return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

class Model {
public:
    explicit Model(AutoencoderParams p) : params_(std::move(p)) {}
    static Model load(const std::filesystem::path& path) { return Model(load_checkpoint(path)); }
    void save(const std::filesystem::path& path) const { save_checkpoint(params_, path); }
    py::array_t<double> encode(const Array& x) const { return to_array(subtyper::encode(params_, to_matrix(x))); }
    py::array_t<double> decode(const Array& z) const { return to_array(subtyper::decode(params_, to_matrix(z))); }
    py::object config() const { return from_json(subtyper::to_json(params_.config)); }

private:
    AutoencoderParams params_;
};

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Multi-omics subtype discovery: autoencoder, clustering, survival statistics and biomarkers.";

    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", base);
    py::register_exception<ArgumentError>(m, "ArgumentError", base);
    py::register_exception<ShapeError>(m, "ShapeError", base);
    auto data_error = py::register_exception<DataError>(m, "DataError", base);
    py::register_exception<ParseError>(m, "ParseError", data_error);
    py::register_exception<NumericError>(m, "NumericError", base);

    m.def("version", &version);

    py::class_<Model>(m, "Model")
        .def_static("load", &Model::load, py::arg("path"))
        .def("save", &Model::save, py::arg("path"))
        .def("encode", &Model::encode, py::arg("x"))
        .def("decode", &Model::decode, py::arg("z"))
        .def_property_readonly("config", &Model::config);

    m.def(
        "train",
        [](const Array& x, const py::dict& config) {
            ModelConfig c = model_config_from_json(to_json(config));
            const Matrix data = to_matrix(x);
            if (c.input_dim == 0) {
                c.input_dim = data.cols();
            }
            TrainResult r;
            {
                py::gil_scoped_release release;
                r = subtyper::train(c, data);
            }
            return py::make_tuple(Model(std::move(r.params)), r.report.epoch_losses);
        },
        py::arg("x"), py::arg("config") = py::dict(),
        "Train the autoencoder; returns (model, per-epoch losses). input_dim defaults to x.shape[1].");

    m.def(
        "kmeans",
        [](const Array& x, std::size_t k, std::size_t restarts, std::uint64_t seed) {
            const ClusterAssignment a = subtyper::kmeans(to_matrix(x), k, restarts, seed);
            return py::make_tuple(a.labels, a.inertia);
        },
        py::arg("x"), py::arg("k"), py::arg("restarts") = 10, py::arg("seed") = 0,
        "Returns (labels, inertia); labels are numbered by first appearance.");

    m.def(
        "consensus",
        [](const Array& x, std::size_t k, std::size_t resamples, double rate, std::uint64_t seed,
           std::size_t threads) {
            const Matrix points = to_matrix(x);
            ConsensusMatrix c;
            {
                py::gil_scoped_release release;
                c = subtyper::consensus(points, k, resamples, rate, seed, threads);
            }
            return py::make_tuple(to_array(c.consensus), pac_score(c));
        },
        py::arg("x"), py::arg("k"), py::arg("resamples") = 100, py::arg("rate") = 0.8, py::arg("seed") = 0,
        py::arg("threads") = 1, "Returns (consensus matrix, PAC).");

    m.def(
        "select_k",
        [](const Array& x, std::size_t k_min, std::size_t k_max, std::size_t resamples, double rate,
           std::uint64_t seed, std::size_t threads) {
            const Matrix points = to_matrix(x);
            KSelection s;
            {
                py::gil_scoped_release release;
                s = subtyper::select_k(points, k_min, k_max, resamples, rate, seed, threads);
            }
            py::dict pac;
            for (std::size_t i = 0; i < s.pac.size(); ++i) {
                pac[py::int_(s.k_min + i)] = s.pac[i];
            }
            py::dict d;
            d["k"] = s.chosen_k;
            d["pac"] = pac;
            d["labels"] = consensus_labels(s.chosen, s.chosen_k).labels;
            d["consensus"] = to_array(s.chosen.consensus);
            return d;
        },
        py::arg("x"), py::arg("k_min") = 2, py::arg("k_max") = 10, py::arg("resamples") = 100,
        py::arg("rate") = 0.8, py::arg("seed") = 0, py::arg("threads") = 1);

    m.def(
        "km_curve",
        [](const std::vector<double>& time, const std::vector<bool>& event) {
            const SurvivalCurve c = km_curve(to_records(time, event));
            py::dict d;
            d["time"] = c.times;
            d["survival"] = c.survival;
            d["at_risk"] = c.at_risk;
            d["deaths"] = c.deaths;
            d["censored"] = c.censored;
            return d;
        },
        py::arg("time"), py::arg("event"));

    m.def(
        "logrank",
        [](const std::vector<long long>& labels, const std::vector<double>& time, const std::vector<bool>& event,
           std::size_t permutations, std::uint64_t seed, std::size_t threads) {
            const ClusterAssignment groups = to_labels(labels);
            const auto records = to_records(time, event);
            TestResult t;
            {
                py::gil_scoped_release release;
                t = permutations == 0 ? subtyper::logrank(groups, records)
                                      : empirical_p(groups, records, permutations, seed, threads);
            }
            return test_dict(t);
        },
        py::arg("labels"), py::arg("time"), py::arg("event"), py::arg("permutations") = 0, py::arg("seed") = 0,
        py::arg("threads") = 1, "Log-rank test; permutations > 0 adds an empirical p-value.");

    m.def(
        "chi_square",
        [](const std::vector<long long>& labels, const std::vector<std::string>& categories) {
            return test_dict(subtyper::chi_square(to_labels(labels), categories));
        },
        py::arg("labels"), py::arg("categories"), "Empty strings are treated as missing.");

    m.def(
        "kruskal_wallis",
        [](const std::vector<long long>& labels, const std::vector<double>& values) {
            return test_dict(subtyper::kruskal_wallis(to_labels(labels), values));
        },
        py::arg("labels"), py::arg("values"), "NaN values are treated as missing.");

    m.def(
        "nmi", [](const std::vector<long long>& a, const std::vector<long long>& b) {
            return subtyper::nmi(to_labels(a), to_labels(b));
        },
        py::arg("a"), py::arg("b"));
    m.def(
        "ari", [](const std::vector<long long>& a, const std::vector<long long>& b) {
            return subtyper::ari(to_labels(a), to_labels(b));
        },
        py::arg("a"), py::arg("b"));

    m.def(
        "friedman",
        [](const Array& scores, double alpha) {
            const FriedmanResult r = subtyper::friedman(to_matrix(scores), alpha);
            py::dict d = test_dict(r.test);
            d["mean_ranks"] = r.mean_ranks;
            d["critical_difference"] = r.critical_difference;
            d["differs"] = r.differs;
            return d;
        },
        py::arg("scores"), py::arg("alpha") = 0.05, "Rows are datasets, columns are methods; higher is better.");

    m.def(
        "feature_importance",
        [](const Array& x, const std::vector<long long>& labels, std::size_t n_trees,
           std::optional<std::size_t> max_features, std::size_t min_leaf, std::optional<std::size_t> max_depth,
           bool bootstrap, std::uint64_t seed, std::size_t threads) {
            ForestConfig c;
            c.n_trees = n_trees;
            c.max_features = max_features;
            c.min_leaf = min_leaf;
            c.max_depth = max_depth;
            c.bootstrap = bootstrap;
            c.seed = seed;
            const Matrix features = to_matrix(x);
            const ClusterAssignment y = to_labels(labels);
            ImportanceRanking r;
            {
                py::gil_scoped_release release;
                r = importances(fit_forest(features, y, c, threads));
            }
            return py::make_tuple(r.importance, r.order);
        },
        py::arg("x"), py::arg("labels"), py::arg("n_trees") = 500, py::arg("max_features") = py::none(),
        py::arg("min_leaf") = 1, py::arg("max_depth") = py::none(), py::arg("bootstrap") = true,
        py::arg("seed") = 0, py::arg("threads") = 1, "Returns (normalized importances, indices by rank).");

    m.def(
        "simulate",
        [](const py::dict& spec) {
            const SimulatedData s = subtyper::simulate(SimulationSpec::from_json(to_json(spec)));
            py::dict d;
            d["sample_ids"] = s.dataset.sample_ids;
            d["feature_names"] = s.dataset.feature_names();
            d["x"] = to_array(s.dataset.concatenated());
            d["planted"] = s.planted.labels;
            std::vector<double> time;
            std::vector<bool> event;
            for (const auto& r : s.clinical.survival) {
                time.push_back(r->time);
                event.push_back(r->event);
            }
            d["time"] = time;
            d["event"] = event;
            py::dict covariates;
            for (const auto& c : s.clinical.covariates) {
                covariates[py::str(c.name)] = c.categorical ? py::cast(c.categories) : py::cast(c.values);
            }
            d["covariates"] = covariates;
            return d;
        },
        py::arg("spec") = py::dict(), "Synthetic cohort; missing omics values are NaN.");

    m.def(
        "write_simulation",
        [](const std::filesystem::path& dir, const py::dict& spec) {
            const SimulationSpec s = SimulationSpec::from_json(to_json(spec));
            return from_json(subtyper::write_simulation(subtyper::simulate(s), dir, s.seed));
        },
        py::arg("dir"), py::arg("spec") = py::dict(), "Writes CSV inputs and config.json; returns the config.");

    m.def(
        "run",
        [](const py::dict& config, const std::filesystem::path& base_dir) {
            const RunConfig c = RunConfig::from_json(to_json(config), base_dir);
            RunSummary s;
            {
                py::gil_scoped_release release;
                s = subtyper::run(c);
            }
            py::dict d;
            d["output"] = s.output;
            d["k"] = s.k;
            d["metrics"] = from_json(s.metrics);
            return d;
        },
        py::arg("config"), py::arg("base_dir") = std::filesystem::path(),
        "Full pipeline; relative paths in the config resolve against base_dir.");

    m.def(
        "run_file",
        [](const std::filesystem::path& path) {
            const RunConfig c = RunConfig::load(path);
            RunSummary s;
            {
                py::gil_scoped_release release;
                s = subtyper::run(c);
            }
            py::dict d;
            d["output"] = s.output;
            d["k"] = s.k;
            d["metrics"] = from_json(s.metrics);
            return d;
        },
        py::arg("path"));
}
