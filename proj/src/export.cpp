#include "subtyper/export.hpp"

#include "subtyper/dataset.hpp"
#include "subtyper/errors.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace subtyper {

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) {
        return s;
    }
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') {
            out += '"';
        }
        out += c;
    }
    return out + "\"";
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '&': out += "&amp;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

} // namespace

std::string format_double(double v) {
    std::array<char, 32> buf{};
    const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    if (ec != std::errc()) {
        throw NumericError("cannot format value");
    }
    return std::string(buf.data(), ptr);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    out << text;
    if (!out) {
        throw DataError("failed writing " + path.string());
    }
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

nlohmann::json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

void write_labels_csv(const std::filesystem::path& path, std::span<const std::string> ids,
                      const ClusterAssignment& labels) {
    if (ids.size() != labels.size()) {
        throw ArgumentError("write_labels_csv: ids and labels differ in length");
    }
    std::string text = "sample_id,label\n";
    for (std::size_t i = 0; i < ids.size(); ++i) {
        text += csv_field(ids[i]) + "," + std::to_string(labels.labels[i]) + "\n";
    }
    write_text(path, text);
}

LabelFile read_labels_csv(const std::filesystem::path& path) {
    const DelimitedMatrix m = read_matrix(path);
    if (m.values.cols() != 1) {
        throw DataError(path.string() + ": expected two columns (sample_id,label)");
    }
    std::vector<long long> raw;
    for (std::size_t i = 0; i < m.values.rows(); ++i) {
        const double v = m.values(i, 0);
        if (std::isnan(v) || v != std::floor(v) || v < 0) {
            throw ParseError(path.string(), i + 2, 2, "label must be a non-negative integer");
        }
        raw.push_back(static_cast<long long>(v));
    }
    return {m.row_ids, ClusterAssignment::from_labels(std::span<const long long>(raw))};
}

void write_latent_csv(const std::filesystem::path& path, std::span<const std::string> ids, const Matrix& latent) {
    if (ids.size() != latent.rows()) {
        throw ArgumentError("write_latent_csv: ids and rows differ in length");
    }
    std::string text = "sample_id";
    for (std::size_t j = 0; j < latent.cols(); ++j) {
        text += ",z" + std::to_string(j + 1);
    }
    text += "\n";
    for (std::size_t i = 0; i < latent.rows(); ++i) {
        text += csv_field(ids[i]);
        for (double v : latent.row(i)) {
            text += "," + format_double(v);
        }
        text += "\n";
    }
    write_text(path, text);
}

void write_consensus_csv(const std::filesystem::path& path, std::span<const std::string> ids,
                         const ConsensusMatrix& m) {
    if (ids.size() != m.n()) {
        throw ArgumentError("write_consensus_csv: ids and matrix size differ");
    }
    std::string text = "sample_id";
    for (const auto& id : ids) {
        text += "," + csv_field(id);
    }
    text += "\n";
    for (std::size_t i = 0; i < m.n(); ++i) {
        text += csv_field(ids[i]);
        for (double v : m.consensus.row(i)) {
            text += "," + format_double(v);
        }
        text += "\n";
    }
    write_text(path, text);
}

void write_km_csv(const std::filesystem::path& path, std::span<const GroupCurve> curves) {
    std::string text = "group,time,survival,at_risk,deaths,censored\n";
    for (const auto& g : curves) {
        const auto& c = g.curve;
        for (std::size_t i = 0; i < c.times.size(); ++i) {
            text += std::to_string(g.group) + "," + format_double(c.times[i]) + "," + format_double(c.survival[i]) +
                    "," + std::to_string(c.at_risk[i]) + "," + std::to_string(c.deaths[i]) + "," +
                    std::to_string(c.censored[i]) + "\n";
        }
    }
    write_text(path, text);
}

std::string km_svg(std::span<const GroupCurve> curves, const std::string& title) {
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    const double width = 640, height = 420, left = 60, right = 130, top = 40, bottom = 50;
    const double plot_w = width - left - right;
    const double plot_h = height - top - bottom;
    double t_max = 0.0;
    for (const auto& g : curves) {
        if (!g.curve.times.empty()) {
            t_max = std::max(t_max, g.curve.times.back());
        }
    }
    if (t_max <= 0.0) {
        t_max = 1.0;
    }
    auto px = [&](double t) { return left + plot_w * t / t_max; };
    auto py = [&](double s) { return top + plot_h * (1.0 - s); };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    if (!title.empty()) {
        svg << "<text x=\"" << left << "\" y=\"22\" font-size=\"14\">" << xml_escape(title) << "</text>\n";
    }
    svg << "<g stroke=\"#444\" fill=\"none\">\n";
    svg << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w << "\" y2=\""
        << top + plot_h << "\"/>\n";
    svg << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + plot_h << "\"/>\n";
    svg << "</g>\n";
    for (int tick = 0; tick <= 4; ++tick) {
        const double s = tick / 4.0;
        const double t = t_max * tick / 4.0;
        svg << "<text x=\"" << left - 8 << "\" y=\"" << fixed(py(s) + 4, 1) << "\" text-anchor=\"end\">" << fixed(s, 2)
            << "</text>\n";
        svg << "<text x=\"" << fixed(px(t), 1) << "\" y=\"" << top + plot_h + 18 << "\" text-anchor=\"middle\">"
            << fixed(t, 0) << "</text>\n";
    }
    svg << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << height - 10 << "\" text-anchor=\"middle\">time</text>\n";
    svg << "<text transform=\"translate(16," << top + plot_h / 2
        << ") rotate(-90)\" text-anchor=\"middle\">survival probability</text>\n";

    for (std::size_t gi = 0; gi < curves.size(); ++gi) {
        const auto& g = curves[gi];
        const char* colour = palette[gi % std::size(palette)];
        std::string path = "M" + fixed(px(0), 2) + "," + fixed(py(1.0), 2);
        double s = 1.0;
        for (std::size_t i = 0; i < g.curve.times.size(); ++i) {
            const double x = px(g.curve.times[i]);
            path += " H" + fixed(x, 2);
            if (g.curve.survival[i] != s) {
                s = g.curve.survival[i];
                path += " V" + fixed(py(s), 2);
            }
        }
        svg << "<path d=\"" << path << "\" stroke=\"" << colour << "\" stroke-width=\"2\" fill=\"none\"/>\n";
        for (std::size_t i = 0; i < g.curve.times.size(); ++i) {
            if (g.curve.censored[i] > 0) {
                const double x = px(g.curve.times[i]);
                const double y = py(g.curve.survival[i]);
                svg << "<line x1=\"" << fixed(x, 2) << "\" y1=\"" << fixed(y - 4, 2) << "\" x2=\"" << fixed(x, 2)
                    << "\" y2=\"" << fixed(y + 4, 2) << "\" stroke=\"" << colour << "\"/>\n";
            }
        }
        const double ly = top + 16.0 * static_cast<double>(gi + 1);
        svg << "<line x1=\"" << left + plot_w + 15 << "\" y1=\"" << ly << "\" x2=\"" << left + plot_w + 35
            << "\" y2=\"" << ly << "\" stroke=\"" << colour << "\" stroke-width=\"2\"/>\n";
        svg << "<text x=\"" << left + plot_w + 40 << "\" y=\"" << ly + 4 << "\">cluster " << g.group << " (n="
            << (g.curve.at_risk.empty() ? 0 : g.curve.at_risk.front()) << ")</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

void write_importance_csv(const std::filesystem::path& path, const ImportanceRanking& ranking,
                          std::span<const std::string> names) {
    if (names.size() != ranking.importance.size()) {
        throw ArgumentError("write_importance_csv: names and importances differ in length");
    }
    std::string text = "feature_name,importance,rank\n";
    for (std::size_t r = 0; r < ranking.order.size(); ++r) {
        const std::size_t f = ranking.order[r];
        text += csv_field(names[f]) + "," + format_double(ranking.importance[f]) + "," + std::to_string(r + 1) + "\n";
    }
    write_text(path, text);
}

} // namespace subtyper
