#include "doctest.h"
#include "support.hpp"
#include "tml/kernels.hpp"
#include "tml/ops.hpp"

using namespace tml;
using tml::testing::bit_equal;
using tml::testing::random_tensor;

namespace {

// Textbook triple loop, independent of the tiled kernel.
std::vector<double> naive_gemm(const kernels::GemmShape& s, const std::vector<double>& a,
                               const std::vector<double>& b) {
  std::vector<double> c(static_cast<std::size_t>(s.m * s.n), 0.0);
  for (std::int64_t i = 0; i < s.m; ++i) {
    for (std::int64_t j = 0; j < s.n; ++j) {
      double acc = 0;
      for (std::int64_t k = 0; k < s.k; ++k) {
        const double av = s.trans_a ? a[static_cast<std::size_t>(k * s.m + i)] : a[static_cast<std::size_t>(i * s.k + k)];
        const double bv = s.trans_b ? b[static_cast<std::size_t>(j * s.k + k)] : b[static_cast<std::size_t>(k * s.n + j)];
        acc += av * bv;
      }
      c[static_cast<std::size_t>(i * s.n + j)] = acc;
    }
  }
  return c;
}

}  // namespace

TEST_CASE("gemm matches naive product for every transpose combination") {
  Rng rng(1);
  for (auto [m, n, k] : {std::tuple{1, 1, 1}, std::tuple{5, 7, 3}, std::tuple{9, 300, 17}, std::tuple{64, 130, 40}}) {
    for (bool ta : {false, true}) {
      for (bool tb : {false, true}) {
        kernels::GemmShape s{.m = m, .n = n, .k = k, .trans_a = ta, .trans_b = tb};
        auto a = random_tensor(Shape{m * k}, rng).values();
        auto b = random_tensor(Shape{k * n}, rng).values();
        std::vector<double> c(static_cast<std::size_t>(m * n), 0.0);
        kernels::serial::gemm<double>(s, a, b, c);
        auto ref = naive_gemm(s, a, b);
        for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("gemm accumulate adds into C") {
  std::vector<double> a = {1, 2}, b = {3, 4}, c = {10};
  kernels::serial::gemm<double>({.m = 1, .n = 1, .k = 2, .accumulate = true}, a, b, c);
  CHECK(c[0] == 21.0);
}

TEST_CASE("omp kernels are bit-identical to the serial reference") {
  Rng rng(2);
  for (auto [m, n, k] : {std::tuple{3, 5, 2}, std::tuple{67, 515, 33}, std::tuple{128, 1024, 288}}) {
    for (bool ta : {false, true}) {
      for (bool tb : {false, true}) {
        kernels::GemmShape s{.m = m, .n = n, .k = k, .trans_a = ta, .trans_b = tb, .accumulate = true};
        auto a = random_tensor<float>(Shape{m * k}, rng).values();
        auto b = random_tensor<float>(Shape{k * n}, rng).values();
        auto c0 = random_tensor<float>(Shape{m * n}, rng).values();
        auto c1 = c0;
        kernels::serial::gemm<float>(s, a, b, c0);
        kernels::omp::gemm<float>(s, a, b, c1);
        CHECK(bit_equal(c0, c1));
      }
    }
  }
  kernels::ConvGeometry g{.batch = 3, .channels = 4, .height = 9, .width = 7, .kernel_h = 3, .kernel_w = 3,
                          .stride = 2, .padding = 1};
  auto x = random_tensor<float>(Shape{3 * 4 * 9 * 7}, rng).values();
  std::vector<float> c0(static_cast<std::size_t>(g.col_rows() * g.col_cols())), c1(c0.size());
  kernels::serial::im2col<float>(g, x, c0);
  kernels::omp::im2col<float>(g, x, c1);
  CHECK(bit_equal(c0, c1));
  std::vector<float> d0(x.size(), 0.f), d1(x.size(), 0.f);
  kernels::serial::col2im<float>(g, c0, d0);
  kernels::omp::col2im<float>(g, c0, d1);
  CHECK(bit_equal(d0, d1));
}

TEST_CASE("im2col convolution agrees with the direct reference") {
  Rng rng(3);
  for (auto [stride, pad] : {std::pair{1, 0}, std::pair{1, 1}, std::pair{2, 1}, std::pair{3, 2}}) {
    Tensor<double> x = random_tensor(Shape{2, 3, 8, 7}, rng);
    Tensor<double> w = random_tensor(Shape{4, 3, 3, 3}, rng);
    auto tape = Tape<double>::inference();
    auto y = ops::conv2d(tape, x, w, {.stride = stride, .padding = pad});
    kernels::ConvGeometry g{.batch = 2, .channels = 3, .height = 8, .width = 7, .kernel_h = 3, .kernel_w = 3,
                            .stride = stride, .padding = pad};
    std::vector<double> ref(y.numel());
    kernels::serial::conv2d_direct<double>(g, 4, x.data(), w.data(), ref);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y.data()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("ops produce identical results under either backend") {
  Rng rng(4);
  Tensor<float> x = random_tensor<float>(Shape{4, 8, 10, 10}, rng);
  Tensor<float> w = random_tensor<float>(Shape{16, 8, 3, 3}, rng);
  auto run = [&](kernels::Backend b) {
    kernels::set_backend(b);
    auto xs = x.clone();
    auto ws = w.clone();
    xs.set_requires_grad(true);
    ws.set_requires_grad(true);
    Tape<float> t;
    auto y = ops::conv2d(t, xs, ws, {.stride = 2, .padding = 1});
    auto s = ops::sum_all(t, ops::mul(t, y, y));
    t.backward(s);
    std::vector<float> out = y.values();
    out.insert(out.end(), ws.grad().begin(), ws.grad().end());
    out.insert(out.end(), xs.grad().begin(), xs.grad().end());
    return out;
  };
  auto serial = run(kernels::Backend::serial);
  auto parallel = run(kernels::Backend::omp);
  kernels::set_backend(kernels::Backend::omp);
  CHECK(bit_equal(serial, parallel));
}
