#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <sstream>

#include "support.hpp"

using namespace mmr2;

namespace {

Schema small_schema() {
    return parse_schema(R"({"columns": [{"name": "g", "type": "factor"}, {"name": "x", "type": "numeric"}]})");
}

}  // namespace

TEST_CASE("dental fixture loads with 27 children at 4 ages") {
    const Dataset& d = test::dental();
    CHECK(d.n_rows() == 108);
    const Column& subject = d.column("subject");
    CHECK(subject.is_factor());
    CHECK(subject.levels().size() == 27);
    const Column& gender = d.column("gender");
    REQUIRE(gender.levels() == std::vector<std::string>{"F", "M"});
    int girls = 0;
    for (int c : gender.codes()) girls += c == 0;
    CHECK(girls == 11 * 4);
    CHECK_FALSE(d.column("distance").is_factor());
    CHECK_FALSE(d.column("age").has_missing());
}

TEST_CASE("crab fixture loads 173 rows") {
    const Dataset& d = test::crab();
    CHECK(d.n_rows() == 173);
    for (const char* name : {"C", "SC", "CW", "W", "satellites"}) CHECK(d.find(name) != nullptr);
    CHECK(d.column("C").levels().size() == 4);
    CHECK(d.column("SC").levels().size() == 3);
}

TEST_CASE("empty input reports no rows") {
    std::istringstream empty("");
    CHECK_THROWS_WITH_AS(read_csv(empty, small_schema()), doctest::Contains("no rows"), DataError);
    std::istringstream header_only("g,x\n");
    CHECK_THROWS_WITH_AS(read_csv(header_only, small_schema()), doctest::Contains("no rows"), DataError);
}

TEST_CASE("factor levels follow first appearance unless declared") {
    std::istringstream in("g,x\nb,1\na,2\nb,3\n");
    const Dataset d = read_csv(in, small_schema());
    CHECK(d.column("g").levels() == std::vector<std::string>{"b", "a"});
    CHECK(d.column("g").codes() == std::vector<int>{0, 1, 0});

    const Schema declared =
        parse_schema(R"({"columns": [{"name": "g", "type": "factor", "levels": ["a", "b"]}, {"name": "x", "type": "numeric"}]})");
    std::istringstream in2("g,x\nb,1\na,2\n");
    CHECK(read_csv(in2, declared).column("g").codes() == std::vector<int>{1, 0});

    std::istringstream bad("g,x\nc,1\na,2\n");
    CHECK_THROWS_WITH_AS(read_csv(bad, declared), doctest::Contains("unknown factor level 'c'"), DataError);
}

TEST_CASE("missing cells are kept and flagged") {
    std::istringstream in("g,x\na,NA\n,2\nb,\n");
    const Dataset d = read_csv(in, small_schema());
    CHECK(d.column("x").is_missing(0));
    CHECK(d.column("g").is_missing(1));
    CHECK(d.column("x").is_missing(2));
    CHECK(d.column("x").has_missing());
}

TEST_CASE("malformed rows carry their location") {
    std::istringstream nan_cell("g,x\na,1\nb,abc\n");
    CHECK_THROWS_WITH_AS(read_csv(nan_cell, small_schema(), "t.csv"), doctest::Contains("t.csv"), DataError);
    std::istringstream short_row("g,x\na,1\nb\n");
    CHECK_THROWS_WITH_AS(read_csv(short_row, small_schema()), doctest::Contains("expected 2 fields"), DataError);
    std::istringstream missing_col("g,z\na,1\nb,2\n");
    CHECK_THROWS_WITH_AS(read_csv(missing_col, small_schema()), doctest::Contains("missing column 'x'"), DataError);
}

TEST_CASE("quoted fields and extra columns") {
    std::istringstream in("note,g,x\n\"a, quoted\",u,1.5\n\"\"\"q\"\"\",v,-2e1\n");
    const Dataset d = read_csv(in, small_schema());
    CHECK(d.columns().size() == 2);
    CHECK(d.column("x").values() == std::vector<double>{1.5, -20.0});
}

TEST_CASE("schema errors") {
    CHECK_THROWS_AS(parse_schema("not json"), DataError);
    CHECK_THROWS_AS(parse_schema(R"({"columns": []})"), DataError);
    CHECK_THROWS_AS(parse_schema(R"({"columns": [{"name": "x", "type": "text"}]})"), DataError);
    CHECK_THROWS_AS(parse_schema(R"({"columns": [{"name": "x", "type": "numeric"}, {"name": "x", "type": "numeric"}]})"),
                    DataError);
    CHECK_THROWS_AS(load_schema(test::data_dir() / "does-not-exist.json"), DataError);
}

TEST_CASE("dataset construction checks") {
    CHECK_THROWS_AS(Dataset({}), DataError);
    CHECK_THROWS_AS(Dataset({Column::make_numeric("a", {1, 2}), Column::make_numeric("b", {1})}), DataError);
    CHECK_THROWS_AS(Column::make_factor("f", {"x"}, {0, 1}), DataError);
    const Dataset d({Column::make_numeric("a", {1, 2})});
    CHECK_THROWS_WITH_AS(d.column("b"), doctest::Contains("unknown column"), DataError);
}
