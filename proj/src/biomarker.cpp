#include "subtyper/biomarker.hpp"

#include "subtyper/errors.hpp"
#include "subtyper/parallel.hpp"
#include "subtyper/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace subtyper {

namespace {

constexpr double kTieTolerance = 1e-12;

double gini(std::span<const double> counts, double total) {
    if (total <= 0.0) {
        return 0.0;
    }
    double acc = 1.0;
    for (double c : counts) {
        acc -= (c / total) * (c / total);
    }
    return std::max(acc, 0.0);
}

std::size_t argmax_low(std::span<const double> counts) {
    return static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

struct Split {
    bool found = false;
    std::size_t feature = 0;
    double threshold = 0.0;
    double impurity = std::numeric_limits<double>::infinity();  ///< weighted child impurity / node samples
};

bool better(const Split& cand, const Split& best) {
    if (!best.found) {
        return true;
    }
    if (cand.impurity < best.impurity - kTieTolerance) {
        return true;
    }
    if (cand.impurity > best.impurity + kTieTolerance) {
        return false;
    }
    return cand.feature < best.feature || (cand.feature == best.feature && cand.threshold < best.threshold);
}

class TreeBuilder {
public:
    TreeBuilder(const Matrix& x, const std::vector<std::size_t>& y, std::size_t classes, const ForestConfig& cfg,
                Rng& rng)
        : x_(x), y_(y), classes_(classes), cfg_(cfg), rng_(rng), mtry_(cfg.features_per_split(x.cols())) {}

    DecisionTree build(std::vector<std::size_t> rows, std::vector<std::uint32_t> in_bag) {
        DecisionTree tree;
        tree.in_bag = std::move(in_bag);
        tree_ = &tree;
        grow(rows, 0);
        return tree;
    }

private:
    std::size_t grow(std::vector<std::size_t>& rows, std::size_t depth) {
        const std::size_t id = tree_->nodes.size();
        tree_->nodes.emplace_back();
        TreeNode node;
        node.class_counts.assign(classes_, 0.0);
        for (std::size_t r : rows) {
            node.class_counts[y_[r]] += 1.0;
        }
        node.samples = static_cast<double>(rows.size());
        node.impurity = gini(node.class_counts, node.samples);

        const bool stop = node.impurity == 0.0 || rows.size() < 2 * cfg_.min_leaf ||
                          (cfg_.max_depth && depth >= *cfg_.max_depth);
        const Split split = stop ? Split{} : find_split(rows, node.samples);
        if (!split.found) {
            tree_->nodes[id] = std::move(node);
            return id;
        }
        std::vector<std::size_t> left;
        std::vector<std::size_t> right;
        for (std::size_t r : rows) {
            (x_(r, split.feature) <= split.threshold ? left : right).push_back(r);
        }
        rows.clear();
        rows.shrink_to_fit();
        node.leaf = false;
        node.feature = split.feature;
        node.threshold = split.threshold;
        tree_->nodes[id] = std::move(node);
        const std::size_t l = grow(left, depth + 1);
        const std::size_t r = grow(right, depth + 1);
        tree_->nodes[id].left = l;
        tree_->nodes[id].right = r;
        return id;
    }

    Split find_split(const std::vector<std::size_t>& rows, double total) {
        const std::size_t p = x_.cols();
        std::vector<std::size_t> features(p);
        std::iota(features.begin(), features.end(), std::size_t{0});
        rng_.shuffle(features);

        Split best;
        std::size_t informative = 0;
        std::vector<std::size_t> sorted(rows);
        std::vector<double> left_counts(classes_);
        std::vector<double> right_counts(classes_);
        std::vector<double> all_counts(classes_, 0.0);
        for (std::size_t r : rows) {
            all_counts[y_[r]] += 1.0;
        }
        // Keep drawing features until mtry non-constant ones have been examined.
        for (std::size_t f : features) {
            if (informative == mtry_) {
                break;
            }
            std::sort(sorted.begin(), sorted.end(), [&](std::size_t a, std::size_t b) { return x_(a, f) < x_(b, f); });
            if (x_(sorted.front(), f) == x_(sorted.back(), f)) {
                continue;
            }
            ++informative;
            std::fill(left_counts.begin(), left_counts.end(), 0.0);
            right_counts = all_counts;
            for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
                const std::size_t c = y_[sorted[i]];
                left_counts[c] += 1.0;
                right_counts[c] -= 1.0;
                const double lo = x_(sorted[i], f);
                const double hi = x_(sorted[i + 1], f);
                if (lo == hi) {
                    continue;
                }
                const double nl = static_cast<double>(i + 1);
                const double nr = total - nl;
                if (nl < static_cast<double>(cfg_.min_leaf) || nr < static_cast<double>(cfg_.min_leaf)) {
                    continue;
                }
                Split cand;
                cand.found = true;
                cand.feature = f;
                cand.threshold = lo + (hi - lo) / 2.0;
                if (!(cand.threshold < hi)) {
                    cand.threshold = lo;
                }
                cand.impurity = (nl * gini(left_counts, nl) + nr * gini(right_counts, nr)) / total;
                if (better(cand, best)) {
                    best = cand;
                }
            }
        }
        return best;
    }

    const Matrix& x_;
    const std::vector<std::size_t>& y_;
    std::size_t classes_;
    const ForestConfig& cfg_;
    Rng& rng_;
    std::size_t mtry_;
    DecisionTree* tree_ = nullptr;
};

} // namespace

std::size_t ForestConfig::features_per_split(std::size_t p) const {
    if (max_features) {
        return *max_features;
    }
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(p)))));
}

void ForestConfig::validate(std::size_t p) const {
    if (n_trees == 0) {
        throw ConfigError("forest: n_trees must be at least 1");
    }
    if (min_leaf == 0) {
        throw ConfigError("forest: min_leaf must be at least 1");
    }
    const std::size_t m = features_per_split(p);
    if (m == 0 || m > p) {
        throw ConfigError("forest: max_features = " + std::to_string(m) + " outside [1, " + std::to_string(p) + "]");
    }
}

std::size_t DecisionTree::predict(std::span<const double> row) const {
    std::size_t i = 0;
    while (!nodes[i].leaf) {
        i = row[nodes[i].feature] <= nodes[i].threshold ? nodes[i].left : nodes[i].right;
    }
    return argmax_low(nodes[i].class_counts);
}

std::size_t DecisionTree::split_count() const {
    return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return !n.leaf; }));
}

std::size_t DecisionTree::depth() const {
    std::vector<std::size_t> d(nodes.size(), 0);
    std::size_t deepest = 0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        deepest = std::max(deepest, d[i]);
        if (!nodes[i].leaf) {
            d[nodes[i].left] = d[i] + 1;
            d[nodes[i].right] = d[i] + 1;
        }
    }
    return deepest;
}

std::vector<std::size_t> Forest::predict(const Matrix& x) const {
    if (x.cols() != n_features) {
        throw ShapeError("forest predict: expected " + std::to_string(n_features) + " features, got " + shape_of(x));
    }
    std::vector<std::size_t> out(x.rows());
    std::vector<double> votes(n_classes);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        std::fill(votes.begin(), votes.end(), 0.0);
        for (const auto& t : trees) {
            votes[t.predict(x.row(i))] += 1.0;
        }
        out[i] = argmax_low(votes);
    }
    return out;
}

std::optional<double> Forest::out_of_bag_accuracy(std::size_t t, const Matrix& x,
                                                  const ClusterAssignment& labels) const {
    const auto& tree = trees.at(t);
    std::size_t seen = 0;
    std::size_t right = 0;
    for (std::size_t i = 0; i < tree.in_bag.size(); ++i) {
        if (tree.in_bag[i] != 0) {
            continue;
        }
        ++seen;
        right += tree.predict(x.row(i)) == labels.labels[i] ? 1 : 0;
    }
    if (seen == 0) {
        return std::nullopt;
    }
    return static_cast<double>(right) / static_cast<double>(seen);
}

Forest fit_forest(const Matrix& features, const ClusterAssignment& labels, const ForestConfig& config,
                  std::size_t threads) {
    const std::size_t n = features.rows();
    const std::size_t p = features.cols();
    if (p == 0) {
        throw ArgumentError("fit_forest: no features");
    }
    if (labels.size() != n) {
        throw ArgumentError("fit_forest: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) +
                            " rows");
    }
    if (n < 2) {
        throw ArgumentError("fit_forest: need at least two samples");
    }
    if (!features.all_finite()) {
        throw DataError("fit_forest: features contain non-finite values");
    }
    config.validate(p);
    const std::size_t classes = *std::max_element(labels.labels.begin(), labels.labels.end()) + 1;
    std::vector<bool> present(classes, false);
    for (std::size_t l : labels.labels) {
        present[l] = true;
    }
    if (std::count(present.begin(), present.end(), true) < 2) {
        throw ArgumentError("fit_forest: labels contain a single class");
    }

    Forest forest;
    forest.config = config;
    forest.n_features = p;
    forest.n_classes = classes;
    forest.trees.resize(config.n_trees);
    parallel_for(config.n_trees, threads, [&](std::size_t t) {
        Rng rng(derive_seed(config.seed, t));
        std::vector<std::size_t> rows(n);
        std::vector<std::uint32_t> in_bag(n, 1);
        if (config.bootstrap) {
            std::fill(in_bag.begin(), in_bag.end(), 0);
            for (auto& r : rows) {
                r = static_cast<std::size_t>(rng.below(n));
                ++in_bag[r];
            }
            std::sort(rows.begin(), rows.end());
        } else {
            std::iota(rows.begin(), rows.end(), std::size_t{0});
        }
        TreeBuilder builder(features, labels.labels, classes, config, rng);
        forest.trees[t] = builder.build(std::move(rows), std::move(in_bag));
    });
    return forest;
}

ImportanceRanking importances(const Forest& forest) {
    ImportanceRanking out;
    out.importance.assign(forest.n_features, 0.0);
    for (const auto& tree : forest.trees) {
        for (const auto& node : tree.nodes) {
            if (node.leaf) {
                continue;
            }
            const auto& l = tree.nodes[node.left];
            const auto& r = tree.nodes[node.right];
            const double decrease = node.samples * node.impurity - l.samples * l.impurity - r.samples * r.impurity;
            out.importance[node.feature] += std::max(decrease, 0.0);
        }
    }
    double total = 0.0;
    for (double& v : out.importance) {
        v /= static_cast<double>(forest.trees.size());
        total += v;
    }
    if (total > 0.0) {
        for (double& v : out.importance) {
            v /= total;
        }
    } else {
        out.no_splits = true;
        std::fill(out.importance.begin(), out.importance.end(), 0.0);
    }
    out.order.resize(forest.n_features);
    std::iota(out.order.begin(), out.order.end(), std::size_t{0});
    std::stable_sort(out.order.begin(), out.order.end(),
                     [&](std::size_t a, std::size_t b) { return out.importance[a] > out.importance[b]; });
    return out;
}

std::vector<Biomarker> top_biomarkers(const ImportanceRanking& ranking, std::size_t k,
                                      std::span<const std::string> names) {
    const std::size_t p = ranking.importance.size();
    if (k > p) {
        throw ArgumentError("top_biomarkers: k = " + std::to_string(k) + " exceeds " + std::to_string(p) +
                            " features");
    }
    if (!names.empty() && names.size() != p) {
        throw ArgumentError("top_biomarkers: " + std::to_string(names.size()) + " names for " + std::to_string(p) +
                            " features");
    }
    std::vector<Biomarker> out;
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t f = ranking.order[i];
        out.push_back({f, names.empty() ? "f" + std::to_string(f) : names[f], ranking.importance[f], i + 1});
    }
    return out;
}

} // namespace subtyper
