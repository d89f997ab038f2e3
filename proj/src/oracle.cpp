#include "distill/oracle.hpp"

namespace distill {

std::vector<double> PredictionOracle::pd_means(
    const Dataset& ds, std::span<const int> features,
    const std::vector<std::array<double, 2>>& tuples,
    std::span<const std::size_t> rows) const {
    std::vector<double> out;
    out.reserve(tuples.size());
    const std::size_t n = rows.empty() ? ds.n_rows() : rows.size();
    for (const auto& tup : tuples) {
        Pins pins;
        for (std::size_t q = 0; q < features.size(); ++q) {
            pins.feature.push_back(features[q]);
            pins.value.push_back(tup[q]);
        }
        const std::vector<double> r = rates(ds, pins, rows);
        KahanSum sum;
        for (double v : r) sum.add(v);
        out.push_back(sum.value() / static_cast<double>(n));
    }
    return out;
}

}  // namespace distill
