#include <filesystem>

#include "doctest.h"
#include "glyphsim/io.hpp"

using namespace glyphsim;
namespace fs = std::filesystem;

TEST_SUITE("io") {
  TEST_CASE("number formatting") {
    CHECK(io::format_double(0.1) == "0.1");
    CHECK(io::format_double(3e-5) == "3e-05");
    CHECK(io::format_double(8.801242896488734) == "8.801242896488734");
    CHECK(io::format_fixed(0.6351, 3) == "0.635");
    CHECK(io::format_fixed(-0.03, 2) == "-0.03");
  }

  TEST_CASE("npy round trip") {
    const fs::path p = fs::temp_directory_path() / "glyphsim_io_test.npy";
    const std::vector<double> data{1.5, -2.0, 3.25, 0.0, 1e-300, 7.0};
    const int64_t shape[] = {2, 3};
    io::write_npy<double>(p, data, shape);
    const auto back = io::read_npy<double>(p);
    CHECK(back.shape == std::vector<int64_t>{2, 3});
    CHECK(back.data == data);
    const std::vector<float> f{1.0f, 2.0f};
    const int64_t fshape[] = {2};
    io::write_npy<float>(p, f, fshape);
    CHECK(io::read_npy<float>(p).data == f);
    CHECK_THROWS(io::read_npy<double>(p));
  }

  TEST_CASE("tables quote and reload") {
    io::Table t({"a", "b c", "d"});
    t.add_row({"1", "x,y", "he said \"hi\""});
    CHECK_THROWS(t.add_row({"too", "short"}));
    const fs::path p = fs::temp_directory_path() / "glyphsim_io_table.csv";
    t.save(p);
    const auto back = io::Table::load(p);
    CHECK(back.header() == t.header());
    CHECK(back.rows() == t.rows());
    CHECK(io::read_text(p).rfind("a,b c,d\n", 0) == 0);
  }

  TEST_CASE("json files") {
    const fs::path p = fs::temp_directory_path() / "glyphsim_io.json";
    io::write_json(p, nlohmann::json{{"k", {1, 2}}});
    CHECK(io::read_json(p)["k"][1] == 2);
    CHECK_THROWS(io::read_json(fs::temp_directory_path() / "glyphsim_missing.json"));
  }
}
