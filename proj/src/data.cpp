#include "distill/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace distill {

std::string to_string(FeatureKind kind) {
    switch (kind) {
        case FeatureKind::continuous: return "continuous";
        case FeatureKind::ordinal: return "ordinal";
        case FeatureKind::nominal: return "nominal";
    }
    return "?";
}

FeatureKind feature_kind_from_string(std::string_view s) {
    if (s == "continuous") return FeatureKind::continuous;
    if (s == "ordinal") return FeatureKind::ordinal;
    if (s == "nominal") return FeatureKind::nominal;
    throw ParseError("unknown feature kind '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Schema
// ---------------------------------------------------------------------------

Schema Schema::from_json(const nlohmann::json& j) {
    Schema s;
    if (!j.contains("target") || !j.contains("exposure") || !j.contains("features"))
        throw ParseError("schema: required keys are target, exposure, features");
    s.target = j.at("target").get<std::string>();
    s.exposure = j.at("exposure").get<std::string>();
    for (const auto& f : j.at("features")) {
        FeatureSpec spec;
        spec.name = f.at("name").get<std::string>();
        spec.kind = feature_kind_from_string(f.at("kind").get<std::string>());
        if (f.contains("levels"))
            spec.levels = f.at("levels").get<std::vector<std::string>>();
        if (spec.kind == FeatureKind::ordinal && spec.levels.empty())
            throw ParseError("schema: ordinal feature '" + spec.name +
                             "' must declare levels");
        if (spec.kind == FeatureKind::continuous && !spec.levels.empty())
            throw ParseError("schema: continuous feature '" + spec.name +
                             "' cannot declare levels");
        std::vector<std::string> sorted = spec.levels;
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
            throw ParseError("schema: duplicate level in feature '" + spec.name + "'");
        s.features.push_back(std::move(spec));
    }
    return s;
}

nlohmann::json Schema::to_json() const {
    nlohmann::json j;
    j["target"] = target;
    j["exposure"] = exposure;
    j["features"] = nlohmann::json::array();
    for (const auto& f : features) {
        nlohmann::json jf;
        jf["name"] = f.name;
        jf["kind"] = to_string(f.kind);
        if (!f.levels.empty()) jf["levels"] = f.levels;
        j["features"].push_back(jf);
    }
    return j;
}

Schema Schema::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open schema file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("schema file '" + path + "': " + e.what());
    }
    return from_json(j);
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

Dataset::Dataset(std::vector<FeatureSpec> features,
                 std::vector<std::vector<double>> columns,
                 std::vector<double> target, std::vector<double> exposure,
                 std::string target_name, std::string exposure_name)
    : features_(std::move(features)),
      columns_(std::move(columns)),
      target_(std::move(target)),
      exposure_(std::move(exposure)),
      target_name_(std::move(target_name)),
      exposure_name_(std::move(exposure_name)) {
    const std::size_t n = target_.size();
    if (n == 0) throw ArgumentError("dataset must have at least one row");
    if (exposure_.size() != n)
        throw ArgumentError("exposure length does not match target length");
    if (columns_.size() != features_.size())
        throw ArgumentError("column count does not match feature count");
    for (std::size_t j = 0; j < columns_.size(); ++j)
        if (columns_[j].size() != n)
            throw ArgumentError("column '" + features_[j].name + "' has wrong length");
    for (std::size_t i = 0; i < n; ++i) {
        if (!(exposure_[i] > 0.0))
            throw ArgumentError("exposure must be positive (row " +
                                std::to_string(i + 1) + ")");
        if (!(target_[i] >= 0.0) || target_[i] != std::floor(target_[i]))
            throw ArgumentError("target must be a nonnegative integer (row " +
                                std::to_string(i + 1) + ")");
    }
}

int Dataset::feature_index(std::string_view name) const {
    for (std::size_t j = 0; j < features_.size(); ++j)
        if (features_[j].name == name) return static_cast<int>(j);
    return -1;
}

double Dataset::total_claims() const {
    return std::accumulate(target_.begin(), target_.end(), 0.0);
}

double Dataset::total_exposure() const {
    return std::accumulate(exposure_.begin(), exposure_.end(), 0.0);
}

std::string Dataset::display_value(int j, double v) const {
    const FeatureSpec& f = feature(j);
    if (!f.is_categorical()) return fmt_num(v);
    const auto code = static_cast<std::size_t>(v);
    if (code >= f.levels.size())
        throw ArgumentError("level code out of range for feature '" + f.name + "'");
    return f.levels[code];
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
    std::vector<std::vector<double>> cols(columns_.size());
    for (std::size_t j = 0; j < columns_.size(); ++j) {
        cols[j].reserve(rows.size());
        for (std::size_t r : rows) cols[j].push_back(columns_[j][r]);
    }
    std::vector<double> y, t;
    y.reserve(rows.size());
    t.reserve(rows.size());
    for (std::size_t r : rows) {
        y.push_back(target_[r]);
        t.push_back(exposure_[r]);
    }
    return Dataset(features_, std::move(cols), std::move(y), std::move(t),
                   target_name_, exposure_name_);
}

Schema Dataset::schema() const {
    Schema s;
    s.target = target_name_;
    s.exposure = exposure_name_;
    s.features = features_;
    return s;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line, std::size_t lineno) {
    std::vector<std::string> out;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(field);
            field.clear();
        } else {
            field.push_back(c);
        }
    }
    if (quoted)
        throw ParseError("line " + std::to_string(lineno) + ": unterminated quote");
    out.push_back(field);
    return out;
}

double parse_real(const std::string& s, std::size_t row, const std::string& col) {
    const char* begin = s.c_str();
    char* end = nullptr;
    const double v = std::strtod(begin, &end);
    if (end == begin || end != begin + s.size() || !std::isfinite(v))
        throw ParseError("row " + std::to_string(row) + ", column '" + col +
                         "': cannot parse '" + s + "' as a number");
    return v;
}

std::string needs_quoting(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out += "\"";
    return out;
}

}  // namespace

Dataset load_csv(const std::string& path, const Schema& schema) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open data file '" + path + "'");

    std::string line;
    if (!std::getline(in, line)) throw ParseError("empty CSV file '" + path + "'");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::vector<std::string> header = split_csv_line(line, 1);

    auto col_of = [&](const std::string& name) {
        for (std::size_t c = 0; c < header.size(); ++c)
            if (header[c] == name) return static_cast<int>(c);
        throw SchemaError("column '" + name + "' not found in '" + path + "'");
    };

    const int target_col = col_of(schema.target);
    const int exposure_col = col_of(schema.exposure);
    std::vector<int> feat_col;
    for (const auto& f : schema.features) feat_col.push_back(col_of(f.name));

    const std::size_t p = schema.features.size();
    std::vector<std::vector<double>> columns(p);
    std::vector<double> target, exposure;
    // Raw labels per nominal feature without declared levels; codes assigned
    // after collection so that the coding is independent of row order.
    std::vector<std::vector<std::string>> raw_labels(p);
    std::vector<std::map<std::string, int>> declared(p);
    for (std::size_t j = 0; j < p; ++j)
        for (std::size_t l = 0; l < schema.features[j].levels.size(); ++l)
            declared[j][schema.features[j].levels[l]] = static_cast<int>(l);

    std::size_t lineno = 1;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        ++row;
        const std::vector<std::string> cells = split_csv_line(line, lineno);
        if (cells.size() != header.size())
            throw ParseError("row " + std::to_string(row) + ": expected " +
                             std::to_string(header.size()) + " cells, got " +
                             std::to_string(cells.size()));
        auto cell = [&](int c) -> const std::string& {
            return cells[static_cast<std::size_t>(c)];
        };
        for (std::size_t c = 0; c < cells.size(); ++c)
            if (cells[c].empty())
                throw ParseError("row " + std::to_string(row) + ", column '" +
                                 header[c] + "': missing value");

        const double y = parse_real(cell(target_col), row, schema.target);
        if (y < 0.0 || y != std::floor(y))
            throw ParseError("row " + std::to_string(row) + ", column '" +
                             schema.target + "': target must be a nonnegative integer");
        const double t = parse_real(cell(exposure_col), row, schema.exposure);
        if (!(t > 0.0))
            throw ParseError("row " + std::to_string(row) + ", column '" +
                             schema.exposure + "': exposure must be positive");
        target.push_back(y);
        exposure.push_back(t);

        for (std::size_t j = 0; j < p; ++j) {
            const FeatureSpec& f = schema.features[j];
            const std::string& s = cell(feat_col[j]);
            if (f.kind == FeatureKind::continuous) {
                double v = parse_real(s, row, f.name);
                if (v == 0.0) v = 0.0;  // normalize -0
                columns[j].push_back(v);
            } else if (!f.levels.empty()) {
                const auto it = declared[j].find(s);
                if (it == declared[j].end())
                    throw ParseError("row " + std::to_string(row) + ", column '" +
                                     f.name + "': unknown level '" + s + "'");
                columns[j].push_back(static_cast<double>(it->second));
            } else {
                raw_labels[j].push_back(s);
                columns[j].push_back(-1.0);  // coded below
            }
        }
    }
    if (row == 0) throw ParseError("no data rows in '" + path + "'");

    std::vector<FeatureSpec> feats = schema.features;
    for (std::size_t j = 0; j < p; ++j) {
        if (feats[j].kind != FeatureKind::nominal || !feats[j].levels.empty()) continue;
        std::vector<std::string> lv = raw_labels[j];
        std::sort(lv.begin(), lv.end());
        lv.erase(std::unique(lv.begin(), lv.end()), lv.end());
        std::map<std::string, int> code;
        for (std::size_t l = 0; l < lv.size(); ++l)
            code[lv[l]] = static_cast<int>(l);
        for (std::size_t i = 0; i < row; ++i)
            columns[j][i] = static_cast<double>(code[raw_labels[j][i]]);
        feats[j].levels = std::move(lv);
    }

    return Dataset(std::move(feats), std::move(columns), std::move(target),
                   std::move(exposure), schema.target, schema.exposure);
}

void write_csv(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write '" + path + "'");
    out << needs_quoting(ds.target_name()) << ',' << needs_quoting(ds.exposure_name());
    for (const auto& f : ds.features()) out << ',' << needs_quoting(f.name);
    out << '\n';
    for (std::size_t i = 0; i < ds.n_rows(); ++i) {
        out << fmt_num(ds.target()[i]) << ',' << fmt_num(ds.exposure()[i]);
        for (std::size_t j = 0; j < ds.n_features(); ++j)
            out << ',' << needs_quoting(ds.display_value(static_cast<int>(j),
                                                         ds.value(i, static_cast<int>(j))));
        out << '\n';
    }
}

// ---------------------------------------------------------------------------
// Folds
// ---------------------------------------------------------------------------

std::vector<std::size_t> FoldAssignment::rows_in(int fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < fold_of.size(); ++i)
        if (fold_of[i] == fold) out.push_back(i);
    return out;
}

std::vector<std::size_t> FoldAssignment::rows_not_in(int fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < fold_of.size(); ++i)
        if (fold_of[i] != fold) out.push_back(i);
    return out;
}

FoldAssignment kfold_split(const Dataset& ds, int k, std::uint64_t seed) {
    const std::size_t n = ds.n_rows();
    if (k < 2 || static_cast<std::size_t>(k) > n)
        throw ArgumentError("kfold_split: need 2 <= k <= n, got k=" +
                            std::to_string(k) + ", n=" + std::to_string(n));
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(perm);
    FoldAssignment fa;
    fa.k = k;
    fa.seed = seed;
    fa.fold_of.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i)
        fa.fold_of[perm[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
    return fa;
}

}  // namespace distill
