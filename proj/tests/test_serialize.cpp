#include <doctest.h>

#include <vector>

#include "test_util.hpp"
#include "ug/serialize.hpp"

using namespace ug;

namespace {

TensorFile sample_file() {
  TensorFile f;
  f.magic = "UGTEST1";
  f.set("model.dim", "16");
  f.set("train.lr", "0.001");
  f.set("zeta", "last");  // order must be preserved, not sorted

  Rng rng(5);
  Tensor<float> a = randn<float>({3, 4}, rng, 1.0);
  Tensor<double> b = randn<double>({2, 2, 2}, rng, 2.0);
  f.add_tensor("layers.0.w", a, true);
  f.add_tensor("embedding", b, false);
  return f;
}

}  // namespace

TEST_CASE("config accessors preserve order and report missing keys") {
  TensorFile f = sample_file();
  CHECK(f.get("model.dim") == "16");
  CHECK(f.find("nope") == nullptr);
  CHECK_THROWS_AS(f.get("nope"), io_error);
  CHECK(f.config.front().first == "model.dim");
  CHECK(f.config.back().first == "zeta");
  f.set("model.dim", "32");  // overwrite in place
  CHECK(f.get("model.dim") == "32");
  CHECK(f.config.size() == 3);
}

TEST_CASE("tensors round-trip through the raw byte container") {
  TensorFile f = sample_file();
  Rng rng(5);
  Tensor<float> a = randn<float>({3, 4}, rng, 1.0);
  Tensor<float> back = f.get_tensor<float>("layers.0.w");
  CHECK(back.shape == a.shape);
  CHECK(back.data == a.data);
  CHECK(f.entry("layers.0.w").trainable);
  CHECK_FALSE(f.entry("embedding").trainable);
  CHECK(f.entry("embedding").dtype == Dtype::f64);
  CHECK_THROWS_AS(f.entry("missing"), io_error);
}

TEST_CASE("requesting a tensor at the wrong precision fails") {
  TensorFile f = sample_file();
  CHECK_THROWS_AS(f.get_tensor<double>("layers.0.w"), io_error);
}

TEST_CASE("files round-trip byte-exactly") {
  ugtest::TempDir dir;
  TensorFile f = sample_file();
  std::string p1 = dir.file("a.bin"), p2 = dir.file("b.bin");
  save_tensor_file(p1, f);
  TensorFile g = load_tensor_file(p1, "UGTEST1");
  save_tensor_file(p2, g);
  CHECK(ugtest::read_file(p1) == ugtest::read_file(p2));
  CHECK(g.config == f.config);
  REQUIRE(g.entries.size() == f.entries.size());
  for (size_t i = 0; i < f.entries.size(); ++i) {
    CHECK(g.entries[i].name == f.entries[i].name);
    CHECK(g.entries[i].raw == f.entries[i].raw);
    CHECK(g.entries[i].shape == f.entries[i].shape);
    CHECK(g.entries[i].trainable == f.entries[i].trainable);
  }
}

TEST_CASE("magic mismatch is rejected") {
  ugtest::TempDir dir;
  TensorFile f = sample_file();
  std::string p = dir.file("a.bin");
  save_tensor_file(p, f);
  CHECK_THROWS_AS(load_tensor_file(p, "UGCKPT1"), io_error);
}

TEST_CASE("header peek reads config without tensor payloads") {
  ugtest::TempDir dir;
  TensorFile f = sample_file();
  std::string p = dir.file("a.bin");
  save_tensor_file(p, f);
  TensorFile h = load_tensor_file_header(p, "UGTEST1");
  CHECK(h.config == f.config);
  CHECK(h.entries.empty());
}

TEST_CASE("missing and truncated files raise io errors") {
  ugtest::TempDir dir;
  CHECK_THROWS_AS(load_tensor_file(dir.file("absent.bin"), "UGTEST1"), io_error);
  TensorFile f = sample_file();
  std::string p = dir.file("cut.bin");
  save_tensor_file(p, f);
  std::string whole = ugtest::read_file(p);
  ugtest::write_file(p, whole.substr(0, whole.size() / 2));
  CHECK_THROWS_AS(load_tensor_file(p, "UGTEST1"), io_error);
}
