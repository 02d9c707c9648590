#include "subtyper/dataset.hpp"

#include "subtyper/errors.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <unordered_map>
#include <unordered_set>

namespace subtyper {

namespace {

constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

void note(std::vector<std::string>* log, std::string message) {
    if (log) {
        log->push_back(std::move(message));
    }
}

std::vector<std::string> split_line(const std::string& line, char delim) {
    std::vector<std::string> out;
    std::string cell;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cell.push_back('"');
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cell.push_back(c);
            }
        } else if (c == '"' && cell.empty()) {
            quoted = true;
        } else if (c == delim) {
            out.push_back(std::move(cell));
            cell.clear();
        } else {
            cell.push_back(c);
        }
    }
    out.push_back(std::move(cell));
    return out;
}

std::string trim(std::string s) {
    const auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

struct RawTable {
    std::vector<std::vector<std::string>> rows;  ///< rows[0] is the header
    std::vector<std::size_t> line_numbers;
};

RawTable read_table(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    RawTable t;
    std::string line;
    std::size_t number = 0;
    char delim = ',';
    while (std::getline(in, line)) {
        ++number;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (trim(line).empty()) {
            continue;
        }
        if (t.rows.empty()) {
            delim = line.find('\t') != std::string::npos ? '\t' : ',';
        }
        auto cells = split_line(line, delim);
        for (auto& c : cells) {
            c = trim(std::move(c));
        }
        if (!t.rows.empty() && cells.size() != t.rows.front().size()) {
            throw ParseError(path.string(), number, std::min(cells.size(), t.rows.front().size()) + 1,
                             "expected " + std::to_string(t.rows.front().size()) + " fields, found " +
                                 std::to_string(cells.size()));
        }
        t.rows.push_back(std::move(cells));
        t.line_numbers.push_back(number);
    }
    if (t.rows.empty()) {
        throw DataError(path.string() + ": file is empty");
    }
    return t;
}

std::optional<double> parse_number(std::string_view cell) {
    if (!cell.empty() && cell.front() == '+') {
        cell.remove_prefix(1);
    }
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(v) || cell.empty()) {
        return std::nullopt;
    }
    return v;
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

void require_unique(const std::vector<std::string>& ids, const std::string& what, const std::string& where) {
    std::unordered_set<std::string> seen;
    for (const auto& id : ids) {
        if (!seen.insert(id).second) {
            throw DataError(where + ": duplicate " + what + " '" + id + "'");
        }
    }
}

} // namespace

bool is_missing_token(std::string_view cell) {
    const std::string l = lower(std::string(cell));
    return l.empty() || l == "na" || l == "nan";
}

std::size_t OmicsDataset::features() const {
    std::size_t p = 0;
    for (const auto& b : blocks) {
        p += b.values.cols();
    }
    return p;
}

Matrix OmicsDataset::concatenated() const {
    std::vector<Matrix> parts;
    for (const auto& b : blocks) {
        parts.push_back(b.values);
    }
    if (parts.empty()) {
        return Matrix(samples(), 0);
    }
    return concat_cols(parts);
}

std::vector<std::string> OmicsDataset::feature_names() const {
    std::vector<std::string> out;
    for (const auto& b : blocks) {
        for (const auto& f : b.features) {
            out.push_back(b.name + ":" + f);
        }
    }
    return out;
}

void OmicsDataset::validate() const {
    require_unique(sample_ids, "sample id", "dataset");
    std::vector<std::string> names;
    for (const auto& b : blocks) {
        names.push_back(b.name);
        if (b.values.rows() != samples() || b.values.cols() != b.features.size()) {
            throw DataError("block '" + b.name + "' has shape " + shape_of(b.values) + " for " +
                            std::to_string(samples()) + " samples and " + std::to_string(b.features.size()) +
                            " features");
        }
    }
    require_unique(names, "block name", "dataset");
    require_unique(feature_names(), "feature", "dataset");
}

std::size_t ClinicalTable::with_survival() const {
    return static_cast<std::size_t>(std::count_if(survival.begin(), survival.end(), [](const auto& s) { return s.has_value(); }));
}

ClinicalTable ClinicalTable::aligned_to(std::span<const std::string> ids, std::vector<std::string>* log) const {
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < sample_ids.size(); ++i) {
        index.emplace(sample_ids[i], i);
    }
    ClinicalTable out;
    out.sample_ids.assign(ids.begin(), ids.end());
    out.survival.resize(ids.size());
    for (const auto& c : covariates) {
        ClinicalCovariate copy{c.name, c.categorical, {}, {}};
        if (c.categorical) {
            copy.categories.assign(ids.size(), "");
        } else {
            copy.values.assign(ids.size(), kMissing);
        }
        out.covariates.push_back(std::move(copy));
    }
    std::size_t missing = 0;
    std::unordered_set<std::string> wanted(ids.begin(), ids.end());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto it = index.find(ids[i]);
        if (it == index.end()) {
            ++missing;
            continue;
        }
        out.survival[i] = survival[it->second];
        for (std::size_t c = 0; c < covariates.size(); ++c) {
            if (covariates[c].categorical) {
                out.covariates[c].categories[i] = covariates[c].categories[it->second];
            } else {
                out.covariates[c].values[i] = covariates[c].values[it->second];
            }
        }
    }
    if (missing > 0) {
        note(log, "clinical: " + std::to_string(missing) + " omics samples have no clinical row");
    }
    const auto unused = std::count_if(sample_ids.begin(), sample_ids.end(),
                                      [&](const std::string& s) { return !wanted.count(s); });
    if (unused > 0) {
        note(log, "clinical: " + std::to_string(unused) + " clinical rows match no omics sample and were dropped");
    }
    return out;
}

DelimitedMatrix read_matrix(const std::filesystem::path& path, bool transpose) {
    const RawTable t = read_table(path);
    const auto& header = t.rows.front();
    if (header.size() < 2) {
        throw ParseError(path.string(), t.line_numbers.front(), 2, "header needs an id column and at least one data column");
    }
    const std::size_t body = t.rows.size() - 1;
    const std::size_t width = header.size() - 1;
    if (body == 0) {
        throw DataError(path.string() + ": no data rows");
    }
    Matrix values(body, width);
    std::vector<std::string> ids;
    for (std::size_t r = 0; r < body; ++r) {
        const auto& row = t.rows[r + 1];
        ids.push_back(row[0]);
        for (std::size_t c = 0; c < width; ++c) {
            const std::string& cell = row[c + 1];
            if (is_missing_token(cell)) {
                values(r, c) = kMissing;
                continue;
            }
            const auto v = parse_number(cell);
            if (!v) {
                throw ParseError(path.string(), t.line_numbers[r + 1], c + 2, "non-numeric value '" + cell + "'");
            }
            values(r, c) = *v;
        }
    }
    DelimitedMatrix out;
    std::vector<std::string> columns(header.begin() + 1, header.end());
    if (transpose) {
        out.row_ids = std::move(columns);
        out.columns = std::move(ids);
        out.values = subtyper::transpose(values);
    } else {
        out.row_ids = std::move(ids);
        out.columns = std::move(columns);
        out.values = std::move(values);
    }
    require_unique(out.row_ids, "sample id", path.string());
    require_unique(out.columns, "feature", path.string());
    return out;
}

OmicsDataset load_omics(std::span<const BlockSource> sources, std::vector<std::string>* log) {
    if (sources.empty()) {
        throw ConfigError("no omics blocks given");
    }
    std::vector<DelimitedMatrix> tables;
    for (const auto& s : sources) {
        tables.push_back(read_matrix(s.path, s.transpose));
    }
    std::vector<std::string> shared = tables.front().row_ids;
    for (std::size_t b = 1; b < tables.size(); ++b) {
        std::unordered_set<std::string> ids(tables[b].row_ids.begin(), tables[b].row_ids.end());
        std::erase_if(shared, [&](const std::string& s) { return !ids.count(s); });
    }
    if (shared.empty()) {
        throw DataError("omics blocks share no sample ids");
    }
    OmicsDataset out;
    out.sample_ids = shared;
    for (std::size_t b = 0; b < tables.size(); ++b) {
        std::unordered_map<std::string, std::size_t> index;
        for (std::size_t i = 0; i < tables[b].row_ids.size(); ++i) {
            index.emplace(tables[b].row_ids[i], i);
        }
        std::vector<std::size_t> rows;
        for (const auto& id : shared) {
            rows.push_back(index.at(id));
        }
        const std::size_t dropped = tables[b].row_ids.size() - shared.size();
        if (dropped > 0) {
            note(log, "block '" + sources[b].name + "': dropped " + std::to_string(dropped) +
                          " samples not present in every block");
        }
        out.blocks.push_back({sources[b].name, tables[b].columns, tables[b].values.select_rows(rows)});
    }
    out.validate();
    return out;
}

ClinicalTable load_clinical(const std::filesystem::path& path, std::span<const std::string> categorical,
                            std::vector<std::string>* log) {
    const RawTable t = read_table(path);
    const auto& header = t.rows.front();
    std::optional<std::size_t> time_col;
    std::optional<std::size_t> event_col;
    for (std::size_t c = 1; c < header.size(); ++c) {
        const std::string h = lower(header[c]);
        if (h == "time" && !time_col) {
            time_col = c;
        } else if (h == "event" && !event_col) {
            event_col = c;
        }
    }
    if (time_col.has_value() != event_col.has_value()) {
        throw DataError(path.string() + ": survival needs both 'time' and 'event' columns");
    }
    const std::set<std::string> forced(categorical.begin(), categorical.end());
    ClinicalTable out;
    const std::size_t n = t.rows.size() - 1;
    for (std::size_t r = 1; r <= n; ++r) {
        out.sample_ids.push_back(t.rows[r][0]);
    }
    require_unique(out.sample_ids, "sample id", path.string());
    out.survival.resize(n);
    if (time_col) {
        std::size_t skipped = 0;
        for (std::size_t r = 1; r <= n; ++r) {
            const std::string& tc = t.rows[r][*time_col];
            const std::string& ec = t.rows[r][*event_col];
            if (is_missing_token(tc) || is_missing_token(ec)) {
                ++skipped;
                continue;
            }
            const auto time = parse_number(tc);
            if (!time || *time <= 0.0) {
                throw ParseError(path.string(), t.line_numbers[r], *time_col + 1,
                                 "survival time must be a positive number, got '" + tc + "'");
            }
            const std::string e = lower(ec);
            bool event = false;
            if (e == "1" || e == "true" || e == "dead" || e == "yes") {
                event = true;
            } else if (e == "0" || e == "false" || e == "alive" || e == "no") {
                event = false;
            } else {
                throw ParseError(path.string(), t.line_numbers[r], *event_col + 1,
                                 "event must be 0/1 or true/false, got '" + ec + "'");
            }
            out.survival[r - 1] = SurvivalRecord{out.sample_ids[r - 1], *time, event};
        }
        if (skipped > 0) {
            note(log, "clinical: " + std::to_string(skipped) + " rows lack survival data");
        }
    }
    for (std::size_t c = 1; c < header.size(); ++c) {
        if (c == time_col || c == event_col) {
            continue;
        }
        ClinicalCovariate cov;
        cov.name = header[c];
        bool numeric = !forced.count(cov.name);
        for (std::size_t r = 1; r <= n && numeric; ++r) {
            const std::string& cell = t.rows[r][c];
            numeric = is_missing_token(cell) || parse_number(cell).has_value();
        }
        cov.categorical = !numeric;
        for (std::size_t r = 1; r <= n; ++r) {
            const std::string& cell = t.rows[r][c];
            if (numeric) {
                cov.values.push_back(is_missing_token(cell) ? kMissing : *parse_number(cell));
            } else {
                cov.categories.push_back(is_missing_token(cell) ? std::string() : cell);
            }
        }
        out.covariates.push_back(std::move(cov));
    }
    return out;
}

OmicsDataset impute_mean(const OmicsDataset& dataset, std::vector<std::string>* log) {
    OmicsDataset out = dataset;
    std::size_t filled = 0;
    for (auto& block : out.blocks) {
        Matrix& m = block.values;
        for (std::size_t j = 0; j < m.cols(); ++j) {
            double sum = 0.0;
            std::size_t seen = 0;
            for (std::size_t i = 0; i < m.rows(); ++i) {
                if (!std::isnan(m(i, j))) {
                    sum += m(i, j);
                    ++seen;
                }
            }
            if (seen == m.rows()) {
                continue;
            }
            const double fill = seen == 0 ? 0.0 : sum / static_cast<double>(seen);
            if (seen == 0) {
                note(log, "impute: feature '" + block.name + ":" + block.features[j] + "' is entirely missing; set to 0");
            }
            for (std::size_t i = 0; i < m.rows(); ++i) {
                if (std::isnan(m(i, j))) {
                    m(i, j) = fill;
                    ++filled;
                }
            }
        }
    }
    if (filled > 0) {
        note(log, "impute: filled " + std::to_string(filled) + " missing values with column means");
    }
    return out;
}

Standardizer Standardizer::fit(const Matrix& x) {
    Standardizer s;
    const std::size_t n = x.rows();
    s.mean.assign(x.cols(), 0.0);
    s.sd.assign(x.cols(), 0.0);
    if (n == 0) {
        return s;
    }
    for (std::size_t j = 0; j < x.cols(); ++j) {
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            sum += x(i, j);
        }
        const double mean = sum / static_cast<double>(n);
        double ss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            ss += (x(i, j) - mean) * (x(i, j) - mean);
        }
        s.mean[j] = mean;
        s.sd[j] = std::sqrt(ss / static_cast<double>(n));
    }
    return s;
}

Matrix Standardizer::apply(const Matrix& x) const {
    if (x.cols() != mean.size()) {
        throw ShapeError("standardizer fitted on " + std::to_string(mean.size()) + " features applied to " + shape_of(x));
    }
    Matrix out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t j = 0; j < x.cols(); ++j) {
            out(i, j) = sd[j] > 0.0 ? (x(i, j) - mean[j]) / sd[j] : 0.0;
        }
    }
    return out;
}

nlohmann::json Standardizer::to_json() const { return {{"mean", mean}, {"sd", sd}}; }

Standardizer Standardizer::from_json(const nlohmann::json& j) {
    Standardizer s;
    try {
        s.mean = j.at("mean").get<std::vector<double>>();
        s.sd = j.at("sd").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("standardizer: ") + e.what());
    }
    if (s.mean.size() != s.sd.size()) {
        throw DataError("standardizer: mean and sd lengths differ");
    }
    return s;
}

Standardized standardize(const OmicsDataset& dataset) {
    Standardized out{dataset, Standardizer::fit(dataset.concatenated())};
    std::size_t offset = 0;
    for (auto& block : out.dataset.blocks) {
        Standardizer part;
        const std::size_t p = block.values.cols();
        part.mean.assign(out.transform.mean.begin() + static_cast<std::ptrdiff_t>(offset),
                         out.transform.mean.begin() + static_cast<std::ptrdiff_t>(offset + p));
        part.sd.assign(out.transform.sd.begin() + static_cast<std::ptrdiff_t>(offset),
                       out.transform.sd.begin() + static_cast<std::ptrdiff_t>(offset + p));
        block.values = part.apply(block.values);
        offset += p;
    }
    return out;
}

} // namespace subtyper
