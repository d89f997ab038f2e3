// Tabular dataset with a count target and exposure, typed feature columns,
// CSV ingestion and cross-validation fold assignment.
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "distill/common.hpp"
#include "json.hpp"

namespace distill {

enum class FeatureKind { continuous, ordinal, nominal };

std::string to_string(FeatureKind kind);
FeatureKind feature_kind_from_string(std::string_view s);

/// One feature column declaration. Ordinal features carry an explicit total
/// order over `levels`; nominal levels are optional (collected from data,
/// sorted lexicographically, when absent); continuous features have none.
struct FeatureSpec {
    std::string name;
    FeatureKind kind = FeatureKind::continuous;
    std::vector<std::string> levels;

    bool is_categorical() const { return kind != FeatureKind::continuous; }
};

/// Column layout of an input file: target / exposure column names plus the
/// feature declarations. Serialized as JSON.
struct Schema {
    std::string target;
    std::string exposure;
    std::vector<FeatureSpec> features;

    static Schema from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
    static Schema load(const std::string& path);
};

/// Immutable after construction; safe for concurrent read.
/// Categorical values are stored as level codes (index into FeatureSpec
/// levels), continuous values as parsed 64-bit reals.
class Dataset {
public:
    Dataset(std::vector<FeatureSpec> features,
            std::vector<std::vector<double>> columns,
            std::vector<double> target, std::vector<double> exposure,
            std::string target_name = "y", std::string exposure_name = "t");

    std::size_t n_rows() const { return target_.size(); }
    std::size_t n_features() const { return features_.size(); }
    const std::vector<FeatureSpec>& features() const { return features_; }
    const FeatureSpec& feature(int j) const {
        return features_[static_cast<std::size_t>(j)];
    }
    /// Index of a feature by name, -1 when absent.
    int feature_index(std::string_view name) const;

    const std::vector<double>& column(int j) const {
        return columns_[static_cast<std::size_t>(j)];
    }
    double value(std::size_t row, int j) const {
        return columns_[static_cast<std::size_t>(j)][row];
    }
    const std::vector<double>& target() const { return target_; }
    const std::vector<double>& exposure() const { return exposure_; }
    const std::string& target_name() const { return target_name_; }
    const std::string& exposure_name() const { return exposure_name_; }

    double total_claims() const;
    double total_exposure() const;

    /// Human-readable rendering of a stored value (level label or number).
    std::string display_value(int j, double v) const;

    /// Row subset copy (used by CV folds and holdout splits).
    Dataset subset(std::span<const std::size_t> rows) const;

    Schema schema() const;

private:
    std::vector<FeatureSpec> features_;
    std::vector<std::vector<double>> columns_;  // column-major
    std::vector<double> target_;
    std::vector<double> exposure_;
    std::string target_name_;
    std::string exposure_name_;
};

/// Parses a comma-separated file with a header row against the schema.
/// Continuous columns are parsed as reals; ordinal/nominal values are
/// validated against declared levels when present. Rows with empty cells,
/// non-integer targets, non-positive exposures or unknown levels are
/// rejected with an error naming the row and column.
Dataset load_csv(const std::string& path, const Schema& schema);

/// Writes a dataset back to CSV; load_csv on the result reproduces the
/// dataset exactly.
void write_csv(const Dataset& ds, const std::string& path);

struct FoldAssignment {
    int k = 0;
    std::vector<int> fold_of;  // per row, in [0, k)
    std::uint64_t seed = 0;

    std::vector<std::size_t> rows_in(int fold) const;
    std::vector<std::size_t> rows_not_in(int fold) const;
};

/// Uniformly random permutation-based assignment; deterministic for a fixed
/// seed, fold sizes differ by at most one. Requires 2 <= k <= n.
FoldAssignment kfold_split(const Dataset& ds, int k, std::uint64_t seed);

}  // namespace distill
