#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mmr2 {

/// Raised for malformed input files; the message carries row/column location.
class DataError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

enum class ColumnType { factor, numeric };

struct ColumnSchema {
    std::string name;
    ColumnType type = ColumnType::numeric;
    /// Explicit level order for factors. Empty means order of first appearance.
    std::vector<std::string> levels;
};

using Schema = std::vector<ColumnSchema>;

/// Parses `{"columns": [{"name": ..., "type": "factor"|"numeric", "levels": [...]}]}`.
Schema parse_schema(std::string_view json_text);
Schema load_schema(const std::filesystem::path& path);

/// One typed column. Missing cells are kept (NaN / code -1) so that
/// validation can reject them only when a model actually references them.
class Column {
  public:
    static constexpr int missing_code = -1;

    static Column make_factor(std::string name, std::vector<std::string> levels,
                              std::vector<int> codes);
    static Column make_numeric(std::string name, std::vector<double> values);

    const std::string& name() const { return name_; }
    ColumnType type() const { return type_; }
    bool is_factor() const { return type_ == ColumnType::factor; }
    std::size_t size() const;

    const std::vector<std::string>& levels() const { return levels_; }
    const std::vector<int>& codes() const { return codes_; }
    const std::vector<double>& values() const { return values_; }

    bool is_missing(std::size_t row) const;
    bool has_missing() const;

  private:
    std::string name_;
    ColumnType type_ = ColumnType::numeric;
    std::vector<std::string> levels_;
    std::vector<int> codes_;
    std::vector<double> values_;
};

/// Long-format table, one row per observation.
class Dataset {
  public:
    explicit Dataset(std::vector<Column> columns);

    std::size_t n_rows() const { return n_rows_; }
    const std::vector<Column>& columns() const { return columns_; }

    const Column* find(const std::string& name) const;
    const Column& column(const std::string& name) const;

  private:
    std::vector<Column> columns_;
    std::size_t n_rows_ = 0;
};

Dataset read_csv(std::istream& in, const Schema& schema, const std::string& source = "<stream>");
Dataset load_csv(const std::filesystem::path& path, const Schema& schema);

}  // namespace mmr2
