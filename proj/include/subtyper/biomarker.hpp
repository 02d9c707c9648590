#pragma once

#include "subtyper/cluster.hpp"
#include "subtyper/matrix.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace subtyper {

struct ForestConfig {
    std::size_t n_trees = 500;
    std::optional<std::size_t> max_features;  ///< unset: floor(sqrt(p)), at least 1
    std::size_t min_leaf = 1;
    std::optional<std::size_t> max_depth;     ///< unset: grow until pure
    bool bootstrap = true;                    ///< false trains every tree on the full sample
    std::uint64_t seed = 0;

    std::size_t features_per_split(std::size_t p) const;
    void validate(std::size_t p) const;
};

struct TreeNode {
    bool leaf = true;
    std::size_t feature = 0;
    double threshold = 0.0;  ///< go left when x[feature] <= threshold
    std::size_t left = 0;
    std::size_t right = 0;
    double samples = 0.0;  ///< weighted count reaching the node at fit time
    double impurity = 0.0;
    std::vector<double> class_counts;
};

class DecisionTree {
public:
    std::vector<TreeNode> nodes;          ///< nodes[0] is the root
    std::vector<std::uint32_t> in_bag;    ///< bootstrap multiplicity per training row

    std::size_t predict(std::span<const double> row) const;
    std::size_t split_count() const;
    std::size_t depth() const;
};

struct Forest {
    ForestConfig config;
    std::size_t n_features = 0;
    std::size_t n_classes = 0;
    std::vector<DecisionTree> trees;

    /// Majority vote over trees; ties go to the lower class.
    std::vector<std::size_t> predict(const Matrix& x) const;
    /// Accuracy of tree t on its out-of-bag rows; nullopt if it has none.
    std::optional<double> out_of_bag_accuracy(std::size_t t, const Matrix& x, const ClusterAssignment& labels) const;
};

/**
 * Random forest of Gini trees. Tree t draws its bootstrap and feature subsets
 * from `derive_seed(config.seed, t)`, so any thread count gives the same forest.
 * Candidate thresholds are midpoints between consecutive distinct values;
 * equally good splits prefer the lower feature index, then the lower threshold.
 */
Forest fit_forest(const Matrix& features, const ClusterAssignment& labels, const ForestConfig& config,
                  std::size_t threads = 1);

struct ImportanceRanking {
    std::vector<double> importance;  ///< per feature, sums to 1 unless no split happened
    std::vector<std::size_t> order;  ///< features by decreasing importance, ties to lower index
    bool no_splits = false;
};

/// Mean decrease in Gini impurity, weighted by samples reaching each split, averaged over trees.
ImportanceRanking importances(const Forest& forest);

struct Biomarker {
    std::size_t feature = 0;
    std::string name;
    double importance = 0.0;
    std::size_t rank = 0;  ///< 1-based
};

/// Top-k features; `names` may be empty, in which case names are "f<index>".
std::vector<Biomarker> top_biomarkers(const ImportanceRanking& ranking, std::size_t k,
                                      std::span<const std::string> names = {});

} // namespace subtyper
