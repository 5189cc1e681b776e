#pragma once

#include "lesionfp/volgrid.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace lesionfp {

// FP is the positive class throughout scoring and classification.
enum class Label : std::uint8_t { TP = 0, FP = 1 };

std::string_view to_string(Label l);
Label label_from_string(std::string_view s);

struct LesionKey {
    std::string dataset;
    std::string patient;
    int lesion_id = 0;

    std::string str() const;  // dataset/patient/lesion_id
    static LesionKey parse(std::string_view s);
    friend auto operator<=>(const LesionKey&, const LesionKey&) = default;
};

// Lesions x named features, row-major.
class FeatureTable {
public:
    FeatureTable() = default;
    explicit FeatureTable(std::vector<std::string> names);

    const std::vector<std::string>& names() const noexcept { return names_; }
    std::size_t rows() const noexcept { return keys_.size(); }
    std::size_t cols() const noexcept { return names_.size(); }

    void add_row(LesionKey key, Label label, std::vector<double> values);

    const LesionKey& key(std::size_t r) const { return keys_[r]; }
    Label label(std::size_t r) const { return labels_[r]; }
    const std::vector<Label>& labels() const noexcept { return labels_; }
    double at(std::size_t r, std::size_t c) const { return values_[r * names_.size() + c]; }
    std::span<const double> row(std::size_t r) const {
        return {values_.data() + r * names_.size(), names_.size()};
    }
    std::vector<double> column(std::size_t c) const;
    std::vector<double> column(std::string_view name) const;
    std::size_t column_index(std::string_view name) const;  // throws when absent
    bool has_column(std::string_view name) const;

    std::size_t count(Label l) const;

    // New table with the named columns in the given order.
    FeatureTable project(const std::vector<std::string>& names) const;
    FeatureTable without_column(std::string_view name) const;
    FeatureTable subset(std::span<const std::size_t> rows) const;
    // Appends rows of a table with identical column names.
    void append(const FeatureTable& other);

    void write_csv(const std::filesystem::path& path) const;
    std::string to_csv() const;
    static FeatureTable read_csv(const std::filesystem::path& path);

    friend bool operator==(const FeatureTable&, const FeatureTable&) = default;

private:
    std::vector<std::string> names_;
    std::vector<LesionKey> keys_;
    std::vector<Label> labels_;
    std::vector<double> values_;
};

// Shortest round-trip decimal representation.
std::string format_double(double v);

}  // namespace lesionfp
