#include "lesionfp/feature_table.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace lesionfp {

std::string_view to_string(Label l) { return l == Label::FP ? "FP" : "TP"; }

Label label_from_string(std::string_view s) {
    if (s == "TP") return Label::TP;
    if (s == "FP") return Label::FP;
    throw Error("unknown label '" + std::string(s) + "'");
}

std::string LesionKey::str() const { return dataset + "/" + patient + "/" + std::to_string(lesion_id); }

LesionKey LesionKey::parse(std::string_view s) {
    const auto a = s.find('/');
    const auto b = s.rfind('/');
    if (a == std::string_view::npos || a == b) throw Error("malformed lesion key '" + std::string(s) + "'");
    LesionKey k{std::string(s.substr(0, a)), std::string(s.substr(a + 1, b - a - 1)), 0};
    const auto tail = s.substr(b + 1);
    const auto [ptr, ec] = std::from_chars(tail.data(), tail.data() + tail.size(), k.lesion_id);
    if (ec != std::errc() || ptr != tail.data() + tail.size())
        throw Error("malformed lesion id in key '" + std::string(s) + "'");
    return k;
}

std::string format_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

FeatureTable::FeatureTable(std::vector<std::string> names) : names_(std::move(names)) {
    std::set<std::string> unique(names_.begin(), names_.end());
    if (unique.size() != names_.size()) throw Error("feature names must be unique");
}

void FeatureTable::add_row(LesionKey key, Label label, std::vector<double> values) {
    if (values.size() != names_.size())
        throw Error("row width " + std::to_string(values.size()) + " does not match " + std::to_string(names_.size()) +
                    " columns");
    for (double v : values)
        if (!std::isfinite(v)) throw Error("non-finite feature value for " + key.str());
    keys_.push_back(std::move(key));
    labels_.push_back(label);
    values_.insert(values_.end(), values.begin(), values.end());
}

std::vector<double> FeatureTable::column(std::size_t c) const {
    std::vector<double> out(rows());
    for (std::size_t r = 0; r < rows(); ++r) out[r] = at(r, c);
    return out;
}

std::vector<double> FeatureTable::column(std::string_view name) const { return column(column_index(name)); }

std::size_t FeatureTable::column_index(std::string_view name) const {
    const auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) throw Error("missing feature '" + std::string(name) + "'");
    return static_cast<std::size_t>(it - names_.begin());
}

bool FeatureTable::has_column(std::string_view name) const {
    return std::find(names_.begin(), names_.end(), name) != names_.end();
}

std::size_t FeatureTable::count(Label l) const {
    return static_cast<std::size_t>(std::count(labels_.begin(), labels_.end(), l));
}

FeatureTable FeatureTable::project(const std::vector<std::string>& names) const {
    std::vector<std::size_t> idx;
    for (const auto& n : names) idx.push_back(column_index(n));
    FeatureTable out(names);
    for (std::size_t r = 0; r < rows(); ++r) {
        std::vector<double> v;
        v.reserve(idx.size());
        for (std::size_t c : idx) v.push_back(at(r, c));
        out.add_row(keys_[r], labels_[r], std::move(v));
    }
    return out;
}

FeatureTable FeatureTable::without_column(std::string_view name) const {
    column_index(name);
    std::vector<std::string> keep;
    for (const auto& n : names_)
        if (n != name) keep.push_back(n);
    return project(keep);
}

FeatureTable FeatureTable::subset(std::span<const std::size_t> rows) const {
    FeatureTable out(names_);
    for (std::size_t r : rows) {
        const auto v = row(r);
        out.add_row(keys_[r], labels_[r], std::vector<double>(v.begin(), v.end()));
    }
    return out;
}

void FeatureTable::append(const FeatureTable& other) {
    if (other.names_ != names_) throw Error("cannot append feature tables with different columns");
    keys_.insert(keys_.end(), other.keys_.begin(), other.keys_.end());
    labels_.insert(labels_.end(), other.labels_.begin(), other.labels_.end());
    values_.insert(values_.end(), other.values_.begin(), other.values_.end());
}

std::string FeatureTable::to_csv() const {
    std::string out = "lesion,label";
    for (const auto& n : names_) out += "," + n;
    out += '\n';
    for (std::size_t r = 0; r < rows(); ++r) {
        out += keys_[r].str();
        out += ',';
        out += to_string(labels_[r]);
        for (double v : row(r)) {
            out += ',';
            out += format_double(v);
        }
        out += '\n';
    }
    return out;
}

void FeatureTable::write_csv(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << to_csv();
    if (!out) throw Error("failed writing " + path.string());
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

}  // namespace

FeatureTable FeatureTable::read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open feature table " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw Error("empty feature table " + path.string());
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto header = split_csv_line(line);
    if (header.size() < 2 || header[0] != "lesion" || header[1] != "label")
        throw Error("feature table header must start with lesion,label");
    FeatureTable t(std::vector<std::string>(header.begin() + 2, header.end()));
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != header.size())
            throw Error(path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                        " cells");
        std::vector<double> values;
        for (std::size_t c = 2; c < cells.size(); ++c) {
            double v = 0.0;
            const auto [ptr, ec] = std::from_chars(cells[c].data(), cells[c].data() + cells[c].size(), v);
            if (ec != std::errc() || ptr != cells[c].data() + cells[c].size())
                throw Error(path.string() + ":" + std::to_string(lineno) + ": bad number '" + cells[c] + "'");
            values.push_back(v);
        }
        t.add_row(LesionKey::parse(cells[0]), label_from_string(cells[1]), std::move(values));
    }
    return t;
}

}  // namespace lesionfp
