#include "distill/gbm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "distill/glm.hpp"

namespace distill {

void GbmParams::validate() const {
    if (n_trees < 1) throw ArgumentError("gbm: n_trees must be >= 1");
    if (!(learning_rate > 0.0)) throw ArgumentError("gbm: learning_rate must be > 0");
    if (!(bag_fraction > 0.0 && bag_fraction <= 1.0))
        throw ArgumentError("gbm: bag_fraction must be in (0, 1]");
    if (min_node_size < 1) throw ArgumentError("gbm: min_node_size must be >= 1");
}

// ---------------------------------------------------------------------------
// Tree evaluation
// ---------------------------------------------------------------------------

namespace {

inline double row_value(const Dataset& ds, std::size_t row, int feature,
                        const Pins& pins) {
    for (std::size_t q = 0; q < pins.feature.size(); ++q)
        if (pins.feature[q] == feature) return pins.value[q];
    return ds.value(row, feature);
}

}  // namespace

double Tree::eval(const Dataset& ds, std::size_t row, const Pins& pins) const {
    int id = 0;
    for (;;) {
        const TreeNode& nd = nodes[static_cast<std::size_t>(id)];
        if (nd.is_leaf()) return nd.value;
        const double v = row_value(ds, row, nd.feature, pins);
        bool go_left;
        if (nd.nominal_split) {
            const auto code = static_cast<std::uint64_t>(v);
            if (code >= 64 || ((nd.seen_mask >> code) & 1) == 0)
                go_left = nd.default_left;  // level unseen in this node
            else
                go_left = ((nd.left_mask >> code) & 1) != 0;
        } else {
            go_left = v < nd.threshold;
        }
        id = go_left ? nd.left : nd.right;
    }
}

int Tree::depth() const {
    // Depth = longest root-to-leaf edge count.
    std::vector<int> d(nodes.size(), 0);
    int best = 0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const TreeNode& nd = nodes[i];
        if (nd.is_leaf()) {
            best = std::max(best, d[i]);
        } else {
            d[static_cast<std::size_t>(nd.left)] = d[i] + 1;
            d[static_cast<std::size_t>(nd.right)] = d[i] + 1;
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Greedy tree construction
// ---------------------------------------------------------------------------

namespace {

struct SplitChoice {
    double gain = -1.0;
    int feature = -1;
    bool nominal = false;
    double threshold = 0.0;
    std::uint64_t left_mask = 0;
    std::uint64_t seen_mask = 0;
    bool default_left = true;

    bool valid() const { return feature >= 0; }
};

struct NodeStats {
    double g = 0.0;
    double h = 0.0;
    std::size_t count = 0;
};

inline double score_part(double g, double h) { return h > 0.0 ? g * g / h : 0.0; }

// Builds a tree level-synchronously: one pass per feature per depth level
// evaluates the best split for every open node at that level.
Tree build_tree_impl(const Dataset& ds, std::span<const std::size_t> rows,
                     std::span<const double> gradient,
                     std::span<const double> hessian, const TreeBuildConfig& cfg,
                     const std::vector<std::vector<std::size_t>>& order) {
    const std::size_t n_all = ds.n_rows();
    const int p = static_cast<int>(ds.n_features());

    std::vector<int> node_of(n_all, -1);
    for (std::size_t r : rows) node_of[r] = 0;

    Tree tree;
    tree.nodes.emplace_back();
    std::vector<NodeStats> stats(1);
    std::vector<int> node_depth{0};
    for (std::size_t r : rows) {
        stats[0].g += gradient[r];
        stats[0].h += hessian[r];
        ++stats[0].count;
    }

    std::vector<int> level{0};
    for (int depth = 0; depth < cfg.max_depth && !level.empty(); ++depth) {
        // node id -> slot within the level
        std::vector<int> slot(tree.nodes.size(), -1);
        for (std::size_t s = 0; s < level.size(); ++s) slot[static_cast<std::size_t>(level[s])] = static_cast<int>(s);
        std::vector<SplitChoice> best(level.size());

        for (int f = 0; f < p; ++f) {
            const FeatureSpec& spec = ds.feature(f);
            if (spec.kind == FeatureKind::nominal) {
                const std::size_t n_levels = spec.levels.size();
                // per (slot, code) aggregates
                std::vector<NodeStats> agg(level.size() * n_levels);
                for (std::size_t r : rows) {
                    const int nd = node_of[r];
                    if (nd < 0 || slot[static_cast<std::size_t>(nd)] < 0) continue;
                    const auto s = static_cast<std::size_t>(slot[static_cast<std::size_t>(nd)]);
                    const auto code = static_cast<std::size_t>(ds.value(r, f));
                    NodeStats& a = agg[s * n_levels + code];
                    a.g += gradient[r];
                    a.h += hessian[r];
                    ++a.count;
                }
                for (std::size_t s = 0; s < level.size(); ++s) {
                    const NodeStats& parent = stats[static_cast<std::size_t>(level[s])];
                    std::vector<std::size_t> present;
                    for (std::size_t c = 0; c < n_levels; ++c)
                        if (agg[s * n_levels + c].count > 0) present.push_back(c);
                    if (present.size() < 2) continue;
                    // Optimal binary subset split for squared loss is a prefix
                    // in g/h order of the level means.
                    std::sort(present.begin(), present.end(),
                              [&](std::size_t a, std::size_t b) {
                                  const NodeStats& na = agg[s * n_levels + a];
                                  const NodeStats& nb = agg[s * n_levels + b];
                                  const double ra = na.h > 0 ? na.g / na.h : 0.0;
                                  const double rb = nb.h > 0 ? nb.g / nb.h : 0.0;
                                  if (ra != rb) return ra < rb;
                                  return a < b;
                              });
                    NodeStats leftacc;
                    std::uint64_t mask = 0;
                    std::uint64_t seen = 0;
                    for (std::size_t c : present) seen |= (1ULL << c);
                    for (std::size_t q = 0; q + 1 < present.size(); ++q) {
                        const NodeStats& a = agg[s * n_levels + present[q]];
                        leftacc.g += a.g;
                        leftacc.h += a.h;
                        leftacc.count += a.count;
                        mask |= (1ULL << present[q]);
                        const std::size_t right_count = parent.count - leftacc.count;
                        if (leftacc.count < static_cast<std::size_t>(cfg.min_node_size) ||
                            right_count < static_cast<std::size_t>(cfg.min_node_size))
                            continue;
                        const double gain = score_part(leftacc.g, leftacc.h) +
                                            score_part(parent.g - leftacc.g,
                                                       parent.h - leftacc.h) -
                                            score_part(parent.g, parent.h);
                        if (gain > best[s].gain) {
                            best[s].gain = gain;
                            best[s].feature = f;
                            best[s].nominal = true;
                            best[s].left_mask = mask;
                            best[s].seen_mask = seen;
                            best[s].default_left = leftacc.count >= right_count;
                        }
                    }
                }
            } else {
                // continuous / ordinal: scan in value order, all nodes at once
                struct ScanState {
                    NodeStats left;
                    double last_value = 0.0;
                    bool started = false;
                };
                std::vector<ScanState> scan(level.size());
                for (std::size_t r : order[static_cast<std::size_t>(f)]) {
                    const int nd = node_of[r];
                    if (nd < 0 || slot[static_cast<std::size_t>(nd)] < 0) continue;
                    const auto s = static_cast<std::size_t>(slot[static_cast<std::size_t>(nd)]);
                    ScanState& st = scan[s];
                    const double v = ds.value(r, f);
                    const NodeStats& parent = stats[static_cast<std::size_t>(level[s])];
                    if (st.started && v != st.last_value) {
                        const std::size_t right_count = parent.count - st.left.count;
                        if (st.left.count >= static_cast<std::size_t>(cfg.min_node_size) &&
                            right_count >= static_cast<std::size_t>(cfg.min_node_size)) {
                            const double gain =
                                score_part(st.left.g, st.left.h) +
                                score_part(parent.g - st.left.g, parent.h - st.left.h) -
                                score_part(parent.g, parent.h);
                            if (gain > best[s].gain) {
                                best[s].gain = gain;
                                best[s].feature = f;
                                best[s].nominal = false;
                                best[s].threshold = 0.5 * (st.last_value + v);
                            }
                        }
                    }
                    st.left.g += gradient[r];
                    st.left.h += hessian[r];
                    ++st.left.count;
                    st.last_value = v;
                    st.started = true;
                }
            }
        }

        // Apply split decisions, creating the next level.
        std::vector<int> next_level;
        std::vector<bool> was_split(level.size(), false);
        for (std::size_t s = 0; s < level.size(); ++s) {
            const int id = level[s];
            if (!best[s].valid() || !(best[s].gain > cfg.gain_threshold)) continue;
            was_split[s] = true;
            TreeNode& nd = tree.nodes[static_cast<std::size_t>(id)];
            nd.feature = best[s].feature;
            nd.nominal_split = best[s].nominal;
            nd.threshold = best[s].threshold;
            nd.left_mask = best[s].left_mask;
            nd.seen_mask = best[s].seen_mask;
            nd.default_left = best[s].default_left;
            nd.left = static_cast<int>(tree.nodes.size());
            nd.right = nd.left + 1;
            tree.nodes.emplace_back();
            tree.nodes.emplace_back();
            stats.emplace_back();
            stats.emplace_back();
            node_depth.push_back(depth + 1);
            node_depth.push_back(depth + 1);
            next_level.push_back(nd.left);
            next_level.push_back(nd.right);
        }
        if (next_level.empty()) break;

        for (std::size_t r : rows) {
            const int nd = node_of[r];
            if (nd < 0) continue;
            const int s = slot[static_cast<std::size_t>(nd)];
            if (s < 0 || !was_split[static_cast<std::size_t>(s)]) continue;
            const TreeNode& split = tree.nodes[static_cast<std::size_t>(nd)];
            bool go_left;
            if (split.nominal_split) {
                const auto code = static_cast<std::uint64_t>(ds.value(r, split.feature));
                go_left = ((split.left_mask >> code) & 1) != 0;
            } else {
                go_left = ds.value(r, split.feature) < split.threshold;
            }
            const int child = go_left ? split.left : split.right;
            node_of[r] = child;
            NodeStats& cs = stats[static_cast<std::size_t>(child)];
            cs.g += gradient[r];
            cs.h += hessian[r];
            ++cs.count;
        }
        level = std::move(next_level);
    }

    for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
        TreeNode& nd = tree.nodes[i];
        if (!nd.is_leaf()) continue;
        nd.value = stats[i].h > 0.0 ? -stats[i].g / stats[i].h : 0.0;
    }
    return tree;
}

std::vector<std::vector<std::size_t>> sorted_orders(
    const Dataset& ds, std::span<const std::size_t> rows) {
    std::vector<std::vector<std::size_t>> order(ds.n_features());
    for (std::size_t f = 0; f < ds.n_features(); ++f) {
        if (ds.feature(static_cast<int>(f)).kind == FeatureKind::nominal) continue;
        auto& o = order[f];
        o.assign(rows.begin(), rows.end());
        const auto& col = ds.column(static_cast<int>(f));
        std::sort(o.begin(), o.end(), [&](std::size_t a, std::size_t b) {
            if (col[a] != col[b]) return col[a] < col[b];
            return a < b;
        });
    }
    return order;
}

}  // namespace

Tree build_regression_tree(const Dataset& ds, std::span<const std::size_t> rows,
                           std::span<const double> gradient,
                           std::span<const double> hessian,
                           const TreeBuildConfig& cfg) {
    for (const auto& f : ds.features())
        if (f.kind == FeatureKind::nominal && f.levels.size() > 64)
            throw ArgumentError("tree builder supports at most 64 nominal levels ('" +
                                f.name + "' has " + std::to_string(f.levels.size()) + ")");
    return build_tree_impl(ds, rows, gradient, hessian, cfg, sorted_orders(ds, rows));
}

// ---------------------------------------------------------------------------
// GbmModel
// ---------------------------------------------------------------------------

GbmModel::GbmModel(std::vector<std::string> feature_names, double init_log_rate,
                   double learning_rate, std::vector<Tree> trees, GbmParams params)
    : feature_names_(std::move(feature_names)),
      init_log_rate_(init_log_rate),
      learning_rate_(learning_rate),
      trees_(std::move(trees)),
      params_(params) {}

std::vector<double> GbmModel::rates(const Dataset& ds, const Pins& pins,
                                    std::span<const std::size_t> rows) const {
    std::vector<std::size_t> all;
    if (rows.empty()) {
        all.resize(ds.n_rows());
        std::iota(all.begin(), all.end(), std::size_t{0});
        rows = all;
    }
    std::vector<double> out;
    out.reserve(rows.size());
    for (std::size_t r : rows) {
        double s = init_log_rate_;
        for (const Tree& t : trees_) s += learning_rate_ * t.eval(ds, r, pins);
        out.push_back(std::exp(s));
    }
    return out;
}

double GbmModel::rate_prefix(const Dataset& ds, std::size_t row, int n_trees) const {
    double s = init_log_rate_;
    for (int t = 0; t < n_trees && t < static_cast<int>(trees_.size()); ++t)
        s += learning_rate_ * trees_[static_cast<std::size_t>(t)].eval(ds, row, Pins::none());
    return std::exp(s);
}

void GbmModel::bind_check(const Dataset& ds) const {
    if (feature_names_.size() != ds.n_features())
        throw SchemaError("model was trained on " + std::to_string(feature_names_.size()) +
                          " features, dataset has " + std::to_string(ds.n_features()));
    for (std::size_t j = 0; j < feature_names_.size(); ++j)
        if (feature_names_[j] != ds.feature(static_cast<int>(j)).name)
            throw SchemaError("feature mismatch at position " + std::to_string(j) +
                              ": model has '" + feature_names_[j] + "', dataset has '" +
                              ds.feature(static_cast<int>(j)).name + "'");
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

GbmModel train_gbm(const Dataset& ds, const GbmParams& params) {
    params.validate();
    for (const auto& f : ds.features())
        if (f.kind == FeatureKind::nominal && f.levels.size() > 64)
            throw ArgumentError("gbm supports at most 64 nominal levels ('" + f.name +
                                "' has " + std::to_string(f.levels.size()) + ")");

    const std::size_t n = ds.n_rows();
    const double sum_y = ds.total_claims();
    const double sum_t = ds.total_exposure();
    if (!(sum_y > 0.0))
        throw DegenerateError("gbm: target is all zero, rate model is degenerate");

    const double init = std::log(sum_y / sum_t);

    std::vector<std::size_t> all_rows(n);
    std::iota(all_rows.begin(), all_rows.end(), std::size_t{0});
    const auto order = sorted_orders(ds, all_rows);

    // score = ln(t) + init + lr * sum of trees; mu = exp(score)
    std::vector<double> score(n);
    for (std::size_t i = 0; i < n; ++i) score[i] = std::log(ds.exposure()[i]) + init;

    std::vector<double> grad(n), hess(n);
    std::vector<std::size_t> bag(n);
    std::iota(bag.begin(), bag.end(), std::size_t{0});
    const auto bag_size = static_cast<std::size_t>(
        std::max<double>(1.0, std::floor(params.bag_fraction * static_cast<double>(n))));

    Rng rng(params.seed);
    TreeBuildConfig tcfg{2, params.min_node_size, params.gain_threshold};

    GbmModel model;
    model.feature_names_.reserve(ds.n_features());
    for (const auto& f : ds.features()) model.feature_names_.push_back(f.name);
    model.init_log_rate_ = init;
    model.learning_rate_ = params.learning_rate;
    model.params_ = params;
    model.trees_.reserve(static_cast<std::size_t>(params.n_trees));
    model.train_dev_.reserve(static_cast<std::size_t>(params.n_trees));

    const auto& y = ds.target();
    for (int m = 0; m < params.n_trees; ++m) {
        for (std::size_t i = 0; i < n; ++i) {
            const double mu = std::exp(score[i]);
            grad[i] = mu - y[i];
            hess[i] = mu;
        }
        std::span<const std::size_t> tree_rows(all_rows);
        if (bag_size < n) {
            for (std::size_t i = 0; i < bag_size; ++i) {
                const std::size_t j = i + static_cast<std::size_t>(rng.next_index(n - i));
                std::swap(bag[i], bag[j]);
            }
            tree_rows = std::span<const std::size_t>(bag.data(), bag_size);
        }
        Tree tree = build_tree_impl(ds, tree_rows, grad, hess, tcfg, order);
        for (std::size_t i = 0; i < n; ++i)
            score[i] += params.learning_rate * tree.eval(ds, i, Pins::none());
        model.trees_.push_back(std::move(tree));

        KahanSum dev;
        for (std::size_t i = 0; i < n; ++i) {
            const double mu = std::exp(score[i]);
            double term = -(y[i] - mu);
            if (y[i] > 0.0) term += y[i] * std::log(y[i] / mu);
            dev.add(term);
        }
        model.train_dev_.push_back(2.0 * dev.value() / static_cast<double>(n));
    }
    return model;
}

// ---------------------------------------------------------------------------
// Tree-count selection by cross-validation
// ---------------------------------------------------------------------------

TreeCvResult cv_select_trees(const Dataset& ds, const GbmParams& params, int k) {
    if (k < 2) throw ArgumentError("cv_select_trees: need k >= 2");
    const FoldAssignment folds = kfold_split(ds, k, params.seed);
    const auto t_max = static_cast<std::size_t>(params.n_trees);
    std::vector<double> mean_dev(t_max, 0.0);

    for (int fold = 0; fold < k; ++fold) {
        const std::vector<std::size_t> train_rows = folds.rows_not_in(fold);
        const std::vector<std::size_t> test_rows = folds.rows_in(fold);
        GbmParams fold_params = params;
        fold_params.seed = mix_seed(params.seed, static_cast<std::uint64_t>(fold));
        const Dataset train = ds.subset(train_rows);
        const GbmModel model = train_gbm(train, fold_params);

        const std::size_t m = test_rows.size();
        std::vector<double> s(m);
        for (std::size_t i = 0; i < m; ++i)
            s[i] = std::log(ds.exposure()[test_rows[i]]) + model.init_log_rate();
        for (std::size_t t = 0; t < t_max; ++t) {
            KahanSum dev;
            for (std::size_t i = 0; i < m; ++i) {
                const std::size_t r = test_rows[i];
                s[i] += model.learning_rate() * model.trees()[t].eval(ds, r, Pins::none());
                const double y = ds.target()[r];
                const double mu = std::exp(s[i]);
                double term = -(y - mu);
                if (y > 0.0) term += y * std::log(y / mu);
                dev.add(term);
            }
            mean_dev[t] += 2.0 * dev.value() / static_cast<double>(m);
        }
    }
    for (double& d : mean_dev) d /= static_cast<double>(k);

    TreeCvResult res;
    res.mean_deviance = std::move(mean_dev);
    std::size_t best = 0;
    for (std::size_t t = 1; t < res.mean_deviance.size(); ++t)
        if (res.mean_deviance[t] < res.mean_deviance[best]) best = t;
    res.best_t = static_cast<int>(best) + 1;
    return res;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

nlohmann::json GbmModel::to_json() const {
    nlohmann::json j;
    j["type"] = "gbm";
    j["features"] = feature_names_;
    j["init_log_rate"] = init_log_rate_;
    j["learning_rate"] = learning_rate_;
    j["params"] = {{"n_trees", params_.n_trees},
                   {"learning_rate", params_.learning_rate},
                   {"bag_fraction", params_.bag_fraction},
                   {"seed", params_.seed},
                   {"min_node_size", params_.min_node_size},
                   {"gain_threshold", params_.gain_threshold}};
    nlohmann::json trees = nlohmann::json::array();
    for (const Tree& t : trees_) {
        nlohmann::json nodes = nlohmann::json::array();
        for (const TreeNode& nd : t.nodes) {
            nlohmann::json jn;
            if (nd.is_leaf()) {
                jn["value"] = nd.value;
            } else {
                jn["feature"] = nd.feature;
                jn["left"] = nd.left;
                jn["right"] = nd.right;
                if (nd.nominal_split) {
                    jn["left_mask"] = nd.left_mask;
                    jn["seen_mask"] = nd.seen_mask;
                    jn["default_left"] = nd.default_left;
                } else {
                    jn["threshold"] = nd.threshold;
                }
            }
            nodes.push_back(std::move(jn));
        }
        trees.push_back({{"nodes", std::move(nodes)}});
    }
    j["trees"] = std::move(trees);
    return j;
}

GbmModel GbmModel::from_json(const nlohmann::json& j) {
    if (j.value("type", "") != "gbm") throw ParseError("not a gbm model file");
    GbmModel m;
    m.feature_names_ = j.at("features").get<std::vector<std::string>>();
    m.init_log_rate_ = j.at("init_log_rate").get<double>();
    m.learning_rate_ = j.at("learning_rate").get<double>();
    const auto& p = j.at("params");
    m.params_.n_trees = p.at("n_trees").get<int>();
    m.params_.learning_rate = p.at("learning_rate").get<double>();
    m.params_.bag_fraction = p.at("bag_fraction").get<double>();
    m.params_.seed = p.at("seed").get<std::uint64_t>();
    m.params_.min_node_size = p.at("min_node_size").get<int>();
    m.params_.gain_threshold = p.at("gain_threshold").get<double>();
    for (const auto& jt : j.at("trees")) {
        Tree t;
        for (const auto& jn : jt.at("nodes")) {
            TreeNode nd;
            if (jn.contains("feature")) {
                nd.feature = jn.at("feature").get<int>();
                nd.left = jn.at("left").get<int>();
                nd.right = jn.at("right").get<int>();
                if (jn.contains("left_mask")) {
                    nd.nominal_split = true;
                    nd.left_mask = jn.at("left_mask").get<std::uint64_t>();
                    nd.seen_mask = jn.at("seen_mask").get<std::uint64_t>();
                    nd.default_left = jn.at("default_left").get<bool>();
                } else {
                    nd.threshold = jn.at("threshold").get<double>();
                }
            } else {
                nd.value = jn.at("value").get<double>();
            }
            t.nodes.push_back(nd);
        }
        m.trees_.push_back(std::move(t));
    }
    return m;
}

}  // namespace distill
