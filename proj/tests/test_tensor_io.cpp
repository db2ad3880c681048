#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cfscm/rng.hpp"
#include "cfscm/tensor.hpp"

using namespace cfscm;

TEST_CASE("tensor construction and accessors") {
  Tensor t({2, 3});
  REQUIRE(t.numel() == 6);
  REQUIRE(t.rank() == 2);
  t.at2(1, 2) = 5.0;
  REQUIRE(t[5] == 5.0);
  REQUIRE(Tensor::scalar(3.5).as_scalar() == 3.5);
  REQUIRE_THROWS_AS(t.as_scalar(), std::logic_error);
  REQUIRE_THROWS_AS(Tensor({2, 2}, {1.0}), std::invalid_argument);
}

TEST_CASE("max_abs_diff and l1_norm") {
  Tensor a({3}, {1.0, -2.0, 0.5});
  Tensor b({3}, {1.5, -2.0, 0.0});
  REQUIRE(max_abs_diff(a, b) == 0.5);
  REQUIRE(l1_norm(a) == 3.5);
  REQUIRE_THROWS_AS(max_abs_diff(a, Tensor({2})), std::invalid_argument);
}

TEST_CASE("cft1 round-trips bit-exactly including awkward doubles") {
  Tensor t({2, 3}, {0.0, -0.0, 1e-308, 1e308, -3.141592653589793, 0.1});
  std::stringstream ss;
  write_cft1(ss, t);
  Tensor back = read_cft1(ss);
  REQUIRE(back.shape == t.shape);
  for (std::size_t i = 0; i < t.numel(); ++i) {
    std::uint64_t ba, bb;
    std::memcpy(&ba, &t.data[i], 8);
    std::memcpy(&bb, &back.data[i], 8);
    REQUIRE(ba == bb);
  }
}

TEST_CASE("cft1 header layout: magic, dtype, rank, little-endian dims") {
  Tensor t({1, 2}, {1.0, 2.0});
  std::stringstream ss;
  write_cft1(ss, t);
  std::string bytes = ss.str();
  REQUIRE(bytes.size() == 4 + 1 + 1 + 2 + 2 * 8 + 2 * 8);
  REQUIRE(bytes.substr(0, 4) == "CFT1");
  REQUIRE(bytes[4] == 1);  // dtype f64
  REQUIRE(bytes[5] == 2);  // rank
  REQUIRE(bytes[6] == 0);
  REQUIRE(bytes[7] == 0);
  // dims 1 then 2, little-endian u64
  REQUIRE(static_cast<unsigned char>(bytes[8]) == 1);
  REQUIRE(static_cast<unsigned char>(bytes[16]) == 2);
  for (int i = 9; i < 16; ++i) REQUIRE(bytes[i] == 0);
}

TEST_CASE("cft1 scalar and rank-0 tensors survive the file path") {
  auto dir = std::filesystem::temp_directory_path() / "cfscm_tensor_io";
  std::filesystem::create_directories(dir);
  std::string path = (dir / "s.cft").string();
  save_cft1(path, Tensor::scalar(42.25));
  Tensor back = load_cft1(path);
  REQUIRE(back.rank() == 0);
  REQUIRE(back.as_scalar() == 42.25);
}

TEST_CASE("cft1 rejects bad magic and truncated payloads") {
  std::stringstream bad("NOPE");
  REQUIRE_THROWS_AS(read_cft1(bad), std::runtime_error);
  Tensor t({4}, {1, 2, 3, 4});
  std::stringstream ss;
  write_cft1(ss, t);
  std::string cut = ss.str().substr(0, ss.str().size() - 8);
  std::stringstream trunc(cut);
  REQUIRE_THROWS_AS(read_cft1(trunc), std::runtime_error);
}

TEST_CASE("pgm emission: header, clamping, and signed midpoint") {
  auto dir = std::filesystem::temp_directory_path() / "cfscm_tensor_io";
  std::filesystem::create_directories(dir);
  std::string path = (dir / "img.pgm").string();
  Tensor img({2, 3}, {0.0, 0.5, 1.0, -1.0, 2.0, 0.25});
  save_pgm(path, img);
  std::ifstream is(path, std::ios::binary);
  std::string header;
  std::getline(is, header);
  REQUIRE(header == "P5");
  std::getline(is, header);
  REQUIRE(header == "3 2");
  std::getline(is, header);
  REQUIRE(header == "255");
  unsigned char px[6];
  is.read(reinterpret_cast<char*>(px), 6);
  REQUIRE(px[0] == 0);
  REQUIRE(px[1] == 128);
  REQUIRE(px[2] == 255);
  REQUIRE(px[3] == 0);    // clamped below
  REQUIRE(px[4] == 255);  // clamped above
  REQUIRE(px[5] == 64);

  std::string spath = (dir / "diff.pgm").string();
  Tensor diff({1, 3}, {0.0, -1.0, 1.0});
  save_pgm_signed(spath, diff);
  std::ifstream ds(spath, std::ios::binary);
  std::getline(ds, header);
  std::getline(ds, header);
  std::getline(ds, header);
  unsigned char dp[3];
  ds.read(reinterpret_cast<char*>(dp), 3);
  REQUIRE(dp[0] == 128);  // zero difference sits at the midpoint
  REQUIRE(dp[1] == 0);
  REQUIRE(dp[2] == 255);
  REQUIRE_THROWS_AS(save_pgm(path, Tensor({3}, {1, 2, 3})), std::invalid_argument);
}
