// Model-agnostic prediction interface. An oracle answers expected claims per
// unit exposure for dataset rows, optionally with some features pinned to
// fixed values (the counterfactual evaluations behind partial dependence).
#pragma once

#include <array>
#include <memory>
#include <span>
#include <vector>

#include "distill/data.hpp"

namespace distill {

/// Feature overrides applied to every row during an evaluation.
struct Pins {
    std::vector<int> feature;   // feature indices, unique
    std::vector<double> value;  // parallel pinned values (codes for categorical)

    std::size_t size() const { return feature.size(); }
    static Pins none() { return {}; }
    static Pins one(int f, double v) { return {{f}, {v}}; }
    static Pins two(int fa, double va, int fb, double vb) {
        return {{fa, fb}, {va, vb}};
    }
};

/// Pure function from rows to nonnegative finite rates. Implementations must
/// be safe for concurrent read-only evaluation.
class PredictionOracle {
public:
    virtual ~PredictionOracle() = default;

    /// Rates for the given rows (all rows when `rows` is empty) with `pins`
    /// substituted into every row.
    virtual std::vector<double> rates(const Dataset& ds, const Pins& pins,
                                      std::span<const std::size_t> rows) const = 0;

    /// Convenience: rates for every row, no overrides.
    std::vector<double> rates(const Dataset& ds) const {
        return rates(ds, Pins::none(), {});
    }

    /// Mean rate over the background rows for each pinned-value tuple. The
    /// default loops over `rates`; implementations may override with a
    /// cheaper path (e.g. precomputed grids). Tuples hold one value per
    /// pinned feature, in `features` order.
    virtual std::vector<double> pd_means(
        const Dataset& ds, std::span<const int> features,
        const std::vector<std::array<double, 2>>& tuples,
        std::span<const std::size_t> rows) const;

    /// False when the oracle can only answer aggregated counterfactual
    /// queries (required by ALE, which needs per-row differences).
    virtual bool per_row_counterfactuals() const { return true; }
};

}  // namespace distill
