#include "mmr2/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "json.hpp"

namespace mmr2 {

namespace {

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

// Splits one CSV record. Handles double-quoted fields with "" escapes.
// Returns false if a quoted field is left open at end of line.
bool split_record(const std::string& line, std::vector<std::string>& fields) {
    fields.clear();
    std::string cur;
    bool quoted = false;
    bool was_quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
            was_quoted = true;
        } else if (c == ',') {
            fields.push_back(was_quoted ? cur : trim(cur));
            cur.clear();
            was_quoted = false;
        } else {
            cur.push_back(c);
        }
    }
    if (quoted) return false;
    fields.push_back(was_quoted ? cur : trim(cur));
    return true;
}

bool is_missing_token(const std::string& cell) {
    return cell.empty() || cell == "NA" || cell == ".";
}

std::string location(const std::string& source, std::size_t line, const std::string& col) {
    std::ostringstream os;
    os << source << ": row " << line << ", column '" << col << "'";
    return os.str();
}

}  // namespace

Schema parse_schema(std::string_view json_text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("schema: invalid JSON: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("columns") || !doc["columns"].is_array())
        throw DataError("schema: expected an object with a \"columns\" array");

    Schema schema;
    for (const auto& entry : doc["columns"]) {
        ColumnSchema col;
        if (!entry.contains("name") || !entry["name"].is_string())
            throw DataError("schema: column entry without a string \"name\"");
        col.name = entry["name"].get<std::string>();
        const std::string type = entry.value("type", std::string("numeric"));
        if (type == "factor") {
            col.type = ColumnType::factor;
        } else if (type == "numeric") {
            col.type = ColumnType::numeric;
        } else {
            throw DataError("schema: column '" + col.name + "' has unknown type '" + type + "'");
        }
        if (entry.contains("levels")) {
            if (col.type != ColumnType::factor)
                throw DataError("schema: levels given for numeric column '" + col.name + "'");
            for (const auto& lv : entry["levels"]) {
                col.levels.push_back(lv.is_string() ? lv.get<std::string>() : lv.dump());
            }
        }
        for (const auto& prev : schema) {
            if (prev.name == col.name) throw DataError("schema: duplicate column '" + col.name + "'");
        }
        schema.push_back(std::move(col));
    }
    if (schema.empty()) throw DataError("schema: no columns declared");
    return schema;
}

Schema load_schema(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open schema file " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_schema(buf.str());
}

Column Column::make_factor(std::string name, std::vector<std::string> levels,
                           std::vector<int> codes) {
    const int n_levels = static_cast<int>(levels.size());
    for (int c : codes) {
        if (c != missing_code && (c < 0 || c >= n_levels))
            throw DataError("factor '" + name + "': code outside level list");
    }
    Column col;
    col.name_ = std::move(name);
    col.type_ = ColumnType::factor;
    col.levels_ = std::move(levels);
    col.codes_ = std::move(codes);
    return col;
}

Column Column::make_numeric(std::string name, std::vector<double> values) {
    Column col;
    col.name_ = std::move(name);
    col.type_ = ColumnType::numeric;
    col.values_ = std::move(values);
    return col;
}

std::size_t Column::size() const {
    return is_factor() ? codes_.size() : values_.size();
}

bool Column::is_missing(std::size_t row) const {
    return is_factor() ? codes_[row] == missing_code : std::isnan(values_[row]);
}

bool Column::has_missing() const {
    for (std::size_t i = 0; i < size(); ++i) {
        if (is_missing(i)) return true;
    }
    return false;
}

Dataset::Dataset(std::vector<Column> columns) : columns_(std::move(columns)) {
    if (columns_.empty()) throw DataError("dataset has no columns");
    n_rows_ = columns_.front().size();
    for (const auto& c : columns_) {
        if (c.size() != n_rows_)
            throw DataError("column '" + c.name() + "' length differs from other columns");
    }
    if (n_rows_ == 0) throw DataError("no rows");
    if (n_rows_ < 2) throw DataError("at least two rows are required");
}

const Column* Dataset::find(const std::string& name) const {
    for (const auto& c : columns_) {
        if (c.name() == name) return &c;
    }
    return nullptr;
}

const Column& Dataset::column(const std::string& name) const {
    if (const Column* c = find(name)) return *c;
    throw DataError("unknown column '" + name + "'");
}

Dataset read_csv(std::istream& in, const Schema& schema, const std::string& source) {
    std::string line;
    std::vector<std::string> fields;
    std::size_t line_no = 0;

    // header
    while (std::getline(in, line)) {
        ++line_no;
        if (!trim(line).empty()) break;
    }
    if (trim(line).empty()) throw DataError(source + ": no rows");
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    if (!split_record(line, fields)) throw DataError(source + ": unterminated quote in header");
    const std::vector<std::string> header = fields;

    std::vector<std::size_t> position(schema.size());
    for (std::size_t k = 0; k < schema.size(); ++k) {
        const auto it = std::find(header.begin(), header.end(), schema[k].name);
        if (it == header.end())
            throw DataError(source + ": missing column '" + schema[k].name + "' in header");
        position[k] = static_cast<std::size_t>(it - header.begin());
    }

    std::vector<std::vector<int>> codes(schema.size());
    std::vector<std::vector<double>> values(schema.size());
    std::vector<std::vector<std::string>> levels(schema.size());
    std::vector<std::map<std::string, int>> level_index(schema.size());
    for (std::size_t k = 0; k < schema.size(); ++k) {
        levels[k] = schema[k].levels;
        for (std::size_t l = 0; l < levels[k].size(); ++l)
            level_index[k][levels[k][l]] = static_cast<int>(l);
    }

    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        if (!split_record(line, fields))
            throw DataError(source + ": row " + std::to_string(line_no) + ": unterminated quote");
        if (fields.size() != header.size())
            throw DataError(source + ": row " + std::to_string(line_no) + ": expected " +
                            std::to_string(header.size()) + " fields, found " +
                            std::to_string(fields.size()));
        for (std::size_t k = 0; k < schema.size(); ++k) {
            const std::string& cell = fields[position[k]];
            const auto& col = schema[k];
            if (col.type == ColumnType::factor) {
                if (is_missing_token(cell)) {
                    codes[k].push_back(Column::missing_code);
                    continue;
                }
                auto it = level_index[k].find(cell);
                if (it == level_index[k].end()) {
                    if (!col.levels.empty())
                        throw DataError(location(source, line_no, col.name) +
                                        ": unknown factor level '" + cell + "'");
                    const int code = static_cast<int>(levels[k].size());
                    levels[k].push_back(cell);
                    it = level_index[k].emplace(cell, code).first;
                }
                codes[k].push_back(it->second);
            } else {
                if (is_missing_token(cell)) {
                    values[k].push_back(std::numeric_limits<double>::quiet_NaN());
                    continue;
                }
                double v = 0.0;
                const char* begin = cell.data();
                const char* end = cell.data() + cell.size();
                auto [ptr, ec] = std::from_chars(begin, end, v);
                if (ec != std::errc() || ptr != end || !std::isfinite(v))
                    throw DataError(location(source, line_no, col.name) +
                                    ": cannot parse '" + cell + "' as a number");
                values[k].push_back(v);
            }
        }
    }

    const std::size_t n = schema.front().type == ColumnType::factor ? codes.front().size()
                                                                     : values.front().size();
    if (n == 0) throw DataError(source + ": no rows");

    std::vector<Column> columns;
    for (std::size_t k = 0; k < schema.size(); ++k) {
        if (schema[k].type == ColumnType::factor) {
            columns.push_back(Column::make_factor(schema[k].name, levels[k], codes[k]));
        } else {
            columns.push_back(Column::make_numeric(schema[k].name, values[k]));
        }
    }
    return Dataset(std::move(columns));
}

Dataset load_csv(const std::filesystem::path& path, const Schema& schema) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open data file " + path.string());
    return read_csv(in, schema, path.filename().string());
}

}  // namespace mmr2
