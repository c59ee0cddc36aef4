#include <doctest.h>

#include <cmath>
#include <vector>

#include "orchestra/optimizer.hpp"
#include "test_support.hpp"

using namespace orchestra;

namespace {

struct Flat {
  Eigen::ArrayXd value;
  Eigen::ArrayXd grad;

  std::vector<ParamView> views() {
    return {{value.data(), grad.data(), value.size()}};
  }
};

}  // namespace

TEST_CASE("zero gradient leaves parameters untouched") {
  Flat f{Eigen::ArrayXd::LinSpaced(4, -1.0, 2.0), Eigen::ArrayXd::Zero(4)};
  const Eigen::ArrayXd before = f.value;
  AdamState state;
  state.apply(f.views(), AdamConfig{});
  for (int i = 0; i < 4; ++i) CHECK(f.value(i) == before(i));
  CHECK(state.step_count() == 1);
}

TEST_CASE("first step follows the closed form") {
  // With zero moments, bias correction cancels and the step is
  // -lr * g / (|g| + eps) per coordinate.
  AdamConfig cfg;
  cfg.lr = 0.01;
  Flat f{Eigen::ArrayXd::Zero(3), Eigen::ArrayXd(3)};
  f.grad << 0.5, -2.0, 1e-12;
  AdamState state;
  state.apply(f.views(), cfg);
  for (int i = 0; i < 3; ++i) {
    const double g = f.grad(i);
    const double expect = -cfg.lr * g / (std::abs(g) + cfg.eps);
    CHECK(std::abs(f.value(i) - expect) < 1e-15);
  }
}

TEST_CASE("two identical steps match the hand recurrence") {
  AdamConfig cfg;
  cfg.lr = 0.05;
  Flat f{Eigen::ArrayXd::Zero(2), Eigen::ArrayXd(2)};
  f.grad << 0.3, -1.1;
  AdamState state;
  state.apply(f.views(), cfg);
  state.apply(f.views(), cfg);

  for (int i = 0; i < 2; ++i) {
    const double g = f.grad(i);
    double x = 0.0;
    double m = 0.0;
    double v = 0.0;
    for (int t = 1; t <= 2; ++t) {
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
      const double mh = m / (1.0 - std::pow(cfg.beta1, t));
      const double vh = v / (1.0 - std::pow(cfg.beta2, t));
      x -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
    }
    CHECK(std::abs(f.value(i) - x) < 1e-12);
  }
  CHECK(state.step_count() == 2);
}

TEST_CASE("decay is decoupled from the moment step") {
  AdamConfig plain;
  plain.lr = 0.01;
  AdamConfig decayed = plain;
  decayed.weight_decay = 0.1;

  Flat a{Eigen::ArrayXd::Constant(1, 2.0), Eigen::ArrayXd::Constant(1, 0.7)};
  Flat b = a;
  AdamState sa, sb;
  sa.apply(a.views(), plain);
  sb.apply(b.views(), decayed);
  // Decay multiplies the post-step value by (1 - lr * wd).
  CHECK(std::abs(b.value(0) - a.value(0) * (1.0 - 0.01 * 0.1)) < 1e-15);
}

TEST_CASE("moment accumulators persist across blocks and steps") {
  AdamConfig cfg;
  cfg.lr = 0.1;
  Eigen::ArrayXd p1 = Eigen::ArrayXd::Zero(2);
  Eigen::ArrayXd p2 = Eigen::ArrayXd::Zero(3);
  Eigen::ArrayXd g1 = Eigen::ArrayXd::Constant(2, 1.0);
  Eigen::ArrayXd g2 = Eigen::ArrayXd::Constant(3, -1.0);
  std::vector<ParamView> views = {{p1.data(), g1.data(), 2},
                                  {p2.data(), g2.data(), 3}};
  AdamState state;
  state.apply(views, cfg);
  REQUIRE(state.first_moments().size() == 2);
  CHECK(state.first_moments()[0].size() == 2);
  CHECK(state.first_moments()[1].size() == 3);
  CHECK(std::abs(state.first_moments()[0](0) - 0.1) < 1e-15);
  CHECK(std::abs(state.second_moments()[1](0) - 0.001) < 1e-15);
}

TEST_CASE("shape drift is rejected") {
  AdamConfig cfg;
  Eigen::ArrayXd p = Eigen::ArrayXd::Zero(2);
  Eigen::ArrayXd g = Eigen::ArrayXd::Zero(2);
  std::vector<ParamView> views = {{p.data(), g.data(), 2}};
  AdamState state;
  state.apply(views, cfg);

  Eigen::ArrayXd p3 = Eigen::ArrayXd::Zero(3);
  Eigen::ArrayXd g3 = Eigen::ArrayXd::Zero(3);
  std::vector<ParamView> wrong_shape = {{p3.data(), g3.data(), 3}};
  CHECK_THROWS_AS(state.apply(wrong_shape, cfg), std::invalid_argument);

  std::vector<ParamView> wrong_count = {{p.data(), g.data(), 2},
                                        {p3.data(), g3.data(), 3}};
  CHECK_THROWS_AS(state.apply(wrong_count, cfg), std::invalid_argument);
}

TEST_CASE("restore resumes the exact trajectory") {
  AdamConfig cfg;
  cfg.lr = 0.02;
  Flat f{Eigen::ArrayXd::Zero(3), Eigen::ArrayXd(3)};
  f.grad << 0.4, -0.2, 0.9;

  AdamState full;
  Flat g = f;
  for (int t = 0; t < 5; ++t) full.apply(g.views(), cfg);

  AdamState first;
  Flat h = f;
  for (int t = 0; t < 2; ++t) first.apply(h.views(), cfg);

  AdamState resumed;
  resumed.restore(first.step_count(),
                  {first.first_moments().begin(), first.first_moments().end()},
                  {first.second_moments().begin(),
                   first.second_moments().end()});
  for (int t = 0; t < 3; ++t) resumed.apply(h.views(), cfg);

  CHECK(resumed.step_count() == full.step_count());
  for (int i = 0; i < 3; ++i) CHECK(h.value(i) == g.value(i));

  AdamState bad;
  CHECK_THROWS_AS(bad.restore(1, {Eigen::ArrayXd::Zero(2)}, {}),
                  std::invalid_argument);
}
