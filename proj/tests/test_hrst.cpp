#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "doctest.h"
#include "dlan/hrst.hpp"
#include "dlan/loss.hpp"
#include "testutil.hpp"

using dlan::AffineTransform;
using dlan::HeadParams;
using dlan::LinearHead;
using dlan::Rng;
using dlan::Tensor;
using testutil::random_tensor;

namespace {

// Small feature map and matching heads; zero heads unless filled in.
HeadParams zero_heads(int C, int H, int W, int J) {
  const int D = C * H * W;
  HeadParams p;
  p.global_loc = {Tensor({6, D}), Tensor({6})};
  p.local_loc = {Tensor({6, D}), Tensor({6})};
  p.landmark = {Tensor({2 * J, D}), Tensor({2 * J})};
  return p;
}

HeadParams random_heads(Rng& rng, int C, int H, int W, int J, double spread = 0.05) {
  const int D = C * H * W;
  HeadParams p;
  p.global_loc = {random_tensor(rng, {6, D}, -spread, spread),
                  random_tensor(rng, {6}, -spread, spread)};
  p.local_loc = {random_tensor(rng, {6, D}, -spread, spread),
                 random_tensor(rng, {6}, -spread, spread)};
  p.landmark = {random_tensor(rng, {2 * J, D}, -spread, spread),
                random_tensor(rng, {2 * J}, -spread, spread)};
  return p;
}

double max_entry_diff(const AffineTransform& A, const AffineTransform& B) {
  double m = 0;
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) m = std::max(m, std::abs(A.a[i][j] - B.a[i][j]));
    m = std::max(m, std::abs(A.t[i] - B.t[i]));
  }
  return m;
}

}  // namespace

TEST_CASE("predict_transform residual parameterization") {
  const int D = 8;
  SUBCASE("zero weights give the identity") {
    LinearHead head{Tensor({6, D}), Tensor({6})};
    const AffineTransform T = dlan::predict_transform(head, Tensor({D}));
    CHECK(max_entry_diff(T, AffineTransform::identity()) == 0.0);
  }
  SUBCASE("bias-only translation") {
    LinearHead head{Tensor({6, D}), Tensor({6}, {0, 0, 0, 0, 0.3, 0})};
    const AffineTransform T = dlan::predict_transform(head, Tensor({D}));
    CHECK(T.a[0][0] == 1.0);
    CHECK(T.a[1][1] == 1.0);
    CHECK(T.t[0] == doctest::Approx(0.3));
    CHECK(T.t[1] == 0.0);
  }
  SUBCASE("random weights equal linear plus identity offsets") {
    Rng rng(80);
    LinearHead head{random_tensor(rng, {6, D}), random_tensor(rng, {6})};
    const Tensor f = random_tensor(rng, {D});
    const Tensor lin = dlan::linear(f, head.w, head.b);
    const AffineTransform T = dlan::predict_transform(head, f);
    CHECK(T.a[0][0] == doctest::Approx(1.0 + lin[0]));
    CHECK(T.a[0][1] == doctest::Approx(lin[1]));
    CHECK(T.a[1][0] == doctest::Approx(lin[2]));
    CHECK(T.a[1][1] == doctest::Approx(1.0 + lin[3]));
    CHECK(T.t[0] == doctest::Approx(lin[4]));
    CHECK(T.t[1] == doctest::Approx(lin[5]));
  }
  SUBCASE("wrong output arity is a dimension error") {
    LinearHead head{Tensor({5, D}), Tensor({5})};
    CHECK_THROWS_AS(dlan::predict_transform(head, Tensor({D})), dlan::DimensionError);
  }
  SUBCASE("non-finite head output is a numeric error") {
    LinearHead head{Tensor({6, D}), Tensor({6})};
    head.b[0] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(dlan::predict_transform(head, Tensor({D})), dlan::NumericError);
  }
}

TEST_CASE("identity-forced heads collapse predictions to the raw regressor output") {
  Rng rng(81);
  const int C = 2, H = 4, W = 4, J = 3;
  HeadParams p = zero_heads(C, H, W, J);
  p.landmark.w = random_tensor(rng, {2 * J, C * H * W}, -0.2, 0.2);
  p.landmark.b = random_tensor(rng, {2 * J}, -0.2, 0.2);
  const Tensor f = random_tensor(rng, {C, H, W});

  for (int M : {1, 2, 3}) {
    const dlan::HrstOutput out = dlan::hrst_forward(p, f, M);
    REQUIRE(out.rel.count() == J);
    for (int j = 0; j < J; ++j) {
      // Theta stays identity, so absolute equals relative exactly.
      CHECK(out.abs.points[static_cast<size_t>(j)].x == out.rel.points[static_cast<size_t>(j)].x);
      CHECK(out.abs.points[static_cast<size_t>(j)].y == out.rel.points[static_cast<size_t>(j)].y);
      CHECK(max_entry_diff(out.state.trace.theta_final[static_cast<size_t>(j)],
                           AffineTransform::identity()) == 0.0);
    }
  }
}

TEST_CASE("zero local heads keep the global transform through every step") {
  Rng rng(82);
  const int C = 2, H = 4, W = 4, J = 2;
  HeadParams p = zero_heads(C, H, W, J);
  // Global head nonzero, local identically zero.
  p.global_loc.b = Tensor({6}, {0.1, 0.02, -0.03, 0.05, 0.2, -0.1});
  const Tensor f = random_tensor(rng, {C, H, W});
  for (int M : {1, 2, 4}) {
    const dlan::HrstOutput out = dlan::hrst_forward(p, f, M);
    for (int j = 0; j < J; ++j)
      CHECK(max_entry_diff(out.state.trace.theta_final[static_cast<size_t>(j)],
                           out.state.trace.theta_global) < 1e-15);
  }
}

TEST_CASE("composed transform equals the manual product of recorded refinements") {
  Rng rng(83);
  const int C = 2, H = 4, W = 4, J = 3, M = 3;
  const HeadParams p = random_heads(rng, C, H, W, J);
  const Tensor f = random_tensor(rng, {C, H, W});
  const dlan::HrstOutput out = dlan::hrst_forward(p, f, M);
  const dlan::HrstTrace& tr = out.state.trace;
  REQUIRE(tr.steps.size() == static_cast<size_t>(M - 1));
  for (int j = 0; j < J; ++j) {
    AffineTransform manual = tr.theta_global;
    for (const dlan::StepRecord& s : tr.steps)
      manual = dlan::affine_compose(manual, s.refinement[static_cast<size_t>(j)]);
    CHECK(max_entry_diff(manual, tr.theta_final[static_cast<size_t>(j)]) < 1e-10);
  }
}

TEST_CASE("composition consistency: sequential application equals the stored product") {
  Rng rng(84);
  const int C = 2, H = 4, W = 4, J = 2, M = 4;
  const HeadParams p = random_heads(rng, C, H, W, J);
  const Tensor f = random_tensor(rng, {C, H, W});
  const dlan::HrstOutput out = dlan::hrst_forward(p, f, M);
  const dlan::HrstTrace& tr = out.state.trace;
  for (int j = 0; j < J; ++j) {
    for (int rep = 0; rep < 10; ++rep) {
      const dlan::NormalizedPoint probe{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
      // Right-to-left: innermost refinement first, global last.
      dlan::NormalizedPoint seq = probe;
      for (size_t s = tr.steps.size(); s-- > 0;)
        seq = dlan::affine_apply(tr.steps[s].refinement[static_cast<size_t>(j)], seq);
      seq = dlan::affine_apply(tr.theta_global, seq);
      const dlan::NormalizedPoint direct =
          dlan::affine_apply(tr.theta_final[static_cast<size_t>(j)], probe);
      CHECK(std::abs(seq.x - direct.x) < 1e-10);
      CHECK(std::abs(seq.y - direct.y) < 1e-10);
    }
  }
}

TEST_CASE("absolute landmarks are the composed transform applied to relative ones") {
  Rng rng(85);
  const int C = 2, H = 4, W = 4, J = 3;
  const HeadParams p = random_heads(rng, C, H, W, J);
  const Tensor f = random_tensor(rng, {C, H, W});
  const dlan::HrstOutput out = dlan::hrst_forward(p, f, 3);
  for (int j = 0; j < J; ++j) {
    const auto want = dlan::affine_apply(out.state.trace.theta_final[static_cast<size_t>(j)],
                                         out.rel.points[static_cast<size_t>(j)]);
    CHECK(out.abs.points[static_cast<size_t>(j)].x == doctest::Approx(want.x).epsilon(1e-14));
    CHECK(out.abs.points[static_cast<size_t>(j)].y == doctest::Approx(want.y).epsilon(1e-14));
  }
  CHECK_THROWS_AS(dlan::hrst_forward(p, f, 0), dlan::ArgumentError);
}

TEST_CASE("zero incoming gradients produce zero parameter gradients") {
  Rng rng(86);
  const int C = 2, H = 4, W = 4, J = 2, M = 2;
  const HeadParams p = random_heads(rng, C, H, W, J);
  const Tensor f = random_tensor(rng, {C, H, W});
  const dlan::HrstOutput out = dlan::hrst_forward(p, f, M);
  const std::vector<std::array<double, 2>> grad_rel(static_cast<size_t>(J), {0.0, 0.0});
  const std::vector<dlan::AffineGrad> grad_theta(static_cast<size_t>(J));
  const dlan::HeadGrads g = dlan::hrst_backward(p, out.state.trace, grad_rel, grad_theta);
  for (const Tensor* t :
       {&g.global_loc.weight, &g.global_loc.bias, &g.local_loc.weight, &g.local_loc.bias,
        &g.landmark.weight, &g.landmark.bias, &g.features})
    for (int64_t i = 0; i < t->size(); ++i) CHECK((*t)[i] == 0.0);
}

TEST_CASE("head gradients match finite differences through the full recurrence") {
  Rng rng(87);
  const int C = 2, H = 4, W = 4, J = 2, M = 2;
  HeadParams p = random_heads(rng, C, H, W, J, 0.08);
  Tensor f = random_tensor(rng, {C, H, W});
  dlan::LandmarkSet gt;
  for (int j = 0; j < J; ++j) {
    gt.points.push_back({rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8)});
    gt.visible.push_back(1);
  }
  dlan::ScaleRegConfig src;
  src.lambda = 0.4;
  const double C_area = 0.5;

  const auto loss = [&] {
    const dlan::HrstOutput out = dlan::hrst_forward(p, f, M);
    std::vector<AffineTransform> thetas = out.state.trace.theta_final;
    return dlan::regression_loss(gt, out.rel, thetas) +
           dlan::scale_loss(thetas, C_area, src);
  };

  const dlan::HrstOutput out = dlan::hrst_forward(p, f, M);
  const dlan::LossGrads lg = dlan::loss_gradients(gt, out.rel, out.state.trace.theta_final,
                                                  C_area, src);
  const dlan::HeadGrads g = dlan::hrst_backward(p, out.state.trace, lg.rel, lg.theta);

  struct Slot {
    Tensor* param;
    const Tensor* grad;
    const char* name;
  };
  const Slot slots[] = {
      {&p.global_loc.w, &g.global_loc.weight, "global.w"},
      {&p.global_loc.b, &g.global_loc.bias, "global.b"},
      {&p.local_loc.w, &g.local_loc.weight, "local.w"},
      {&p.local_loc.b, &g.local_loc.bias, "local.b"},
      {&p.landmark.w, &g.landmark.weight, "landmark.w"},
      {&p.landmark.b, &g.landmark.bias, "landmark.b"},
  };
  for (const Slot& s : slots) {
    const double worst = testutil::fd_worst(*s.param, *s.grad, loss);
    INFO(s.name);
    CHECK(worst < 1e-4);
  }
  CHECK(testutil::fd_worst(f, g.features, loss) < 1e-4);
}

TEST_CASE("trace and parameter mismatches are dimension errors") {
  Rng rng(88);
  const int C = 2, H = 4, W = 4, J = 2;
  const HeadParams p = random_heads(rng, C, H, W, J);
  const Tensor f = random_tensor(rng, {C, H, W});
  const dlan::HrstOutput out = dlan::hrst_forward(p, f, 2);
  const std::vector<std::array<double, 2>> short_rel(1, {0.0, 0.0});
  const std::vector<dlan::AffineGrad> grad_theta(static_cast<size_t>(J));
  CHECK_THROWS_AS(dlan::hrst_backward(p, out.state.trace, short_rel, grad_theta),
                  dlan::DimensionError);
}

TEST_CASE("single-step backward tolerates an absent local head") {
  Rng rng(91);
  const int C = 2, H = 4, W = 4, J = 2;
  HeadParams p = random_heads(rng, C, H, W, J);
  p.local_loc = {};  // single-step models never build the refinement head
  const Tensor f = random_tensor(rng, {C, H, W});
  const dlan::HrstOutput out = dlan::hrst_forward(p, f, 1);
  REQUIRE(out.state.trace.steps_run == 1);

  std::vector<std::array<double, 2>> grad_rel(static_cast<size_t>(J), {0.3, -0.2});
  std::vector<dlan::AffineGrad> grad_theta(static_cast<size_t>(J));
  grad_theta[0].a[0][0] = 0.5;
  const dlan::HeadGrads g = dlan::hrst_backward(p, out.state.trace, grad_rel, grad_theta);
  CHECK(g.local_loc.weight.size() == 0);
  CHECK(g.local_loc.bias.size() == 0);
  CHECK(g.global_loc.weight.size() == p.global_loc.w.size());
  CHECK(g.landmark.weight.size() == p.landmark.w.size());
  CHECK(g.features.size() == f.size());
  CHECK(g.global_loc.weight.all_finite());
  CHECK(g.landmark.weight.all_finite());
  CHECK(g.features.all_finite());
}
