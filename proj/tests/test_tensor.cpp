#include <algorithm>
#include <cstring>
#include <limits>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "dlan/rng.hpp"
#include "dlan/tensor.hpp"
#include "dlan/wire.hpp"
#include "testutil.hpp"

using dlan::Rng;
using dlan::Tensor;

TEST_CASE("tensor shape product matches storage length") {
  Tensor t({2, 3, 4});
  CHECK(t.size() == 24);
  CHECK(t.rank() == 3);
  CHECK(dlan::shape_product({2, 3, 4}) == 24);
  CHECK_THROWS_AS(Tensor({2, 3}, {1.0, 2.0}), dlan::DimensionError);
  CHECK_THROWS_AS(Tensor({2, -3}), dlan::DimensionError);
}

TEST_CASE("tensor storage is row-major, outermost first") {
  Tensor t({2, 3});
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) t.at(i, j) = i * 10 + j;
  CHECK(t[0] == 0);
  CHECK(t[1] == 1);
  CHECK(t[2] == 2);
  CHECK(t[3] == 10);
  CHECK(t[5] == 12);
}

TEST_CASE("all_finite flags NaN and infinity") {
  Tensor t = Tensor::full({3}, 1.0);
  CHECK(t.all_finite());
  t[1] = std::numeric_limits<double>::quiet_NaN();
  CHECK_FALSE(t.all_finite());
  t[1] = std::numeric_limits<double>::infinity();
  CHECK_FALSE(t.all_finite());
}

TEST_CASE("grad pair keeps matching shapes and zero grad") {
  dlan::GradPair gp(Tensor::full({2, 2}, 3.0));
  CHECK(gp.value.same_shape(gp.grad));
  for (int64_t i = 0; i < gp.grad.size(); ++i) CHECK(gp.grad[i] == 0.0);
}

TEST_CASE("tensor serialization round trip is bitwise lossless") {
  Rng rng(5);
  const Tensor t = testutil::random_tensor(rng, {3, 4, 5});
  std::stringstream ss;
  t.write(ss);
  const Tensor back = Tensor::read(ss);
  CHECK(testutil::bitwise_equal(t, back));
}

TEST_CASE("tensor header is little-endian u32 rank then extents") {
  Tensor t({2, 3}, {1.0, 2.0, 3.0, 4.0, 5.0, 6.0});
  std::stringstream ss;
  t.write(ss);
  const std::string buf = ss.str();
  REQUIRE(buf.size() == 4 + 8 + 48);
  const unsigned char* b = reinterpret_cast<const unsigned char*>(buf.data());
  CHECK(b[0] == 2);  // rank
  CHECK(b[1] == 0);
  CHECK(b[4] == 2);  // first extent
  CHECK(b[8] == 3);  // second extent
  double first;
  std::memcpy(&first, b + 12, 8);
  CHECK(first == 1.0);
}

TEST_CASE("truncated tensor stream is a format error") {
  Tensor t({4}, {1, 2, 3, 4});
  std::stringstream ss;
  t.write(ss);
  std::string buf = ss.str();
  buf.resize(buf.size() - 5);
  std::stringstream cut(buf);
  CHECK_THROWS_AS(Tensor::read(cut), dlan::FormatError);
}

TEST_CASE("fnv1a matches published test vectors") {
  CHECK(dlan::wire::fnv1a("") == 14695981039346656037ull);
  CHECK(dlan::wire::fnv1a("a") == 0xaf63dc4c8601ec8cull);
  CHECK(dlan::wire::fnv1a("foobar") == 0x85944171f73967e8ull);
}

TEST_CASE("wire round-trips integers and doubles") {
  std::stringstream ss;
  dlan::wire::put_u32(ss, 0xdeadbeefu);
  dlan::wire::put_u64(ss, 0x0123456789abcdefull);
  dlan::wire::put_f64(ss, -0.625);
  CHECK(dlan::wire::get_u32(ss) == 0xdeadbeefu);
  CHECK(dlan::wire::get_u64(ss) == 0x0123456789abcdefull);
  CHECK(dlan::wire::get_f64(ss) == -0.625);
  CHECK_THROWS_AS(dlan::wire::get_u32(ss), dlan::FormatError);
}

TEST_CASE("rng sequences are reproducible and uniform draws stay in range") {
  Rng a(42), b(42), c(43);
  bool all_equal = true, any_differs = false;
  for (int i = 0; i < 100; ++i) {
    const double x = a.uniform();
    all_equal = all_equal && x == b.uniform();
    any_differs = any_differs || x != c.uniform();
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
  }
  CHECK(all_equal);
  CHECK(any_differs);
}

TEST_CASE("rng below and uniform_int stay in bounds") {
  Rng rng(7);
  for (int i = 0; i < 1000; ++i) {
    CHECK(rng.below(13) < 13);
    const int v = rng.uniform_int(-2, 5);
    CHECK(v >= -2);
    CHECK(v <= 5);
  }
}

TEST_CASE("rng shuffle is a deterministic permutation") {
  std::vector<int> v(20);
  std::iota(v.begin(), v.end(), 0);
  std::vector<int> w = v;
  Rng a(9), b(9);
  a.shuffle(v);
  b.shuffle(w);
  CHECK(v == w);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  std::vector<int> expect(20);
  std::iota(expect.begin(), expect.end(), 0);
  CHECK(sorted == expect);
}

TEST_CASE("mix_seed separates streams") {
  CHECK(dlan::mix_seed(1, 2) != dlan::mix_seed(1, 3));
  CHECK(dlan::mix_seed(1, 2) != dlan::mix_seed(2, 2));
  CHECK(dlan::mix_seed(1, 2) == dlan::mix_seed(1, 2));
}
