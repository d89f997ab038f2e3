// Minimal stochastic gradient boosting machine for Poisson counts with a
// log-exposure offset: depth-limited regression trees fit to second-order
// gradients of the Poisson deviance.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "distill/oracle.hpp"
#include "json.hpp"

namespace distill {

struct GbmParams {
    int n_trees = 500;            // T_max
    double learning_rate = 0.01;
    double bag_fraction = 0.75;   // subsample share per tree, (0, 1]
    std::uint64_t seed = 1;
    int min_node_size = 20;       // minimum rows per child
    double gain_threshold = 0.0;  // required split gain

    void validate() const;
};

/// Axis-aligned tree node. Continuous/ordinal splits send `value < threshold`
/// left; nominal splits send level codes in `left_mask` left. Levels unseen
/// in the node during training follow the majority child (`default_left`).
struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    std::uint64_t left_mask = 0;
    std::uint64_t seen_mask = 0;
    bool nominal_split = false;
    bool default_left = true;
    int left = -1;
    int right = -1;
    double value = 0.0;  // leaf output

    bool is_leaf() const { return feature < 0; }
};

struct Tree {
    std::vector<TreeNode> nodes;  // nodes[0] is the root

    double eval(const Dataset& ds, std::size_t row, const Pins& pins) const;
    int depth() const;
};

/// Boosted ensemble; prediction is exp(init_log_rate + learning_rate * sum
/// of tree outputs), i.e. a rate per unit exposure.
class GbmModel : public PredictionOracle {
public:
    GbmModel() = default;
    GbmModel(std::vector<std::string> feature_names, double init_log_rate,
             double learning_rate, std::vector<Tree> trees, GbmParams params);

    std::vector<double> rates(const Dataset& ds, const Pins& pins,
                              std::span<const std::size_t> rows) const override;

    /// Rate using only the first `n_trees` trees (tree-count tuning).
    double rate_prefix(const Dataset& ds, std::size_t row, int n_trees) const;

    const std::vector<Tree>& trees() const { return trees_; }
    double init_log_rate() const { return init_log_rate_; }
    double learning_rate() const { return learning_rate_; }
    int n_trees() const { return static_cast<int>(trees_.size()); }
    const GbmParams& params() const { return params_; }
    const std::vector<std::string>& feature_names() const { return feature_names_; }

    /// Per-tree training deviance trace (Eq.-style mean Poisson deviance on
    /// the training data after each boosting round).
    const std::vector<double>& training_deviance() const { return train_dev_; }

    nlohmann::json to_json() const;
    static GbmModel from_json(const nlohmann::json& j);

    /// Checks that the model's feature names match the dataset columns.
    void bind_check(const Dataset& ds) const;

private:
    friend GbmModel train_gbm(const Dataset&, const GbmParams&);

    std::vector<std::string> feature_names_;
    double init_log_rate_ = 0.0;
    double learning_rate_ = 0.01;
    std::vector<Tree> trees_;
    GbmParams params_;
    std::vector<double> train_dev_;
};

/// Fits exactly params.n_trees trees by stochastic gradient boosting on the
/// Poisson deviance with log-exposure offset; init_log_rate = ln(sum y /
/// sum t). Deterministic for a fixed seed.
GbmModel train_gbm(const Dataset& ds, const GbmParams& params);

/// Selects the tree count in {1..params.n_trees} minimizing mean out-of-fold
/// Poisson deviance over k folds; ties break toward fewer trees.
struct TreeCvResult {
    int best_t = 0;
    std::vector<double> mean_deviance;  // indexed by tree count - 1
};
TreeCvResult cv_select_trees(const Dataset& ds, const GbmParams& params, int k);

// Internal tree builder shared with the benchmark regression tree: fits an
// axis-aligned tree to gradient/hessian pairs by greedy gain search, leaf
// value -G/H.
struct TreeBuildConfig {
    int max_depth = 2;
    int min_node_size = 20;
    double gain_threshold = 0.0;
};
Tree build_regression_tree(const Dataset& ds, std::span<const std::size_t> rows,
                           std::span<const double> gradient,
                           std::span<const double> hessian,
                           const TreeBuildConfig& cfg);

}  // namespace distill
