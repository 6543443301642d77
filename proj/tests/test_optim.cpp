#include <doctest.h>

#include <posefield/optim.hpp>

using namespace posefield;

TEST_CASE("lr schedule endpoints and midpoint") {
  CHECK(lr_at(0, 30000, 1e-3, 1e-5) == 1e-3);
  CHECK(lr_at(30000, 30000, 1e-3, 1e-5) == doctest::Approx(1e-5).epsilon(1e-12));
  CHECK(lr_at(15000, 30000, 1e-3, 1e-5) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(lr_at(0, 100, 1e-4, 1e-6) == 1e-4);
  CHECK(lr_at(100, 100, 1e-4, 1e-6) == doctest::Approx(1e-6).epsilon(1e-12));
}

TEST_CASE("adamw: zero gradient and zero decay leave params unchanged") {
  ad::ParamBlock p("p", 4, 1.5);
  AdamW opt({&p}, {});
  opt.step(1e-2);
  for (double v : p.values) CHECK(v == 1.5);
}

TEST_CASE("adamw: first step moves by about -lr * sign(g)") {
  ad::ParamBlock p("p", 1, 0.0);
  p.grad[0] = 0.37;
  AdamW opt({&p}, {});
  opt.step(1e-2);
  CHECK(p.values[0] == doctest::Approx(-1e-2).epsilon(1e-3));
}

TEST_CASE("adamw converges on a quadratic bowl") {
  ad::ParamBlock p("p", 2);
  p.values = {3.0, -2.0};
  AdamW opt({&p}, {});
  for (int i = 0; i < 2000; ++i) {
    opt.zero_grads();
    p.grad[0] = 2.0 * (p.values[0] - 0.7);
    p.grad[1] = 8.0 * (p.values[1] - 0.2);
    opt.step(1e-2);
  }
  CHECK(std::abs(p.values[0] - 0.7) < 1e-4);
  CHECK(std::abs(p.values[1] - 0.2) < 1e-4);
}

TEST_CASE("decoupled weight decay pulls toward zero without touching moments") {
  ad::ParamBlock p("p", 1, 2.0);
  AdamW opt({&p}, {.weight_decay = 0.1});
  opt.step(1e-2);
  CHECK(p.values[0] == doctest::Approx(2.0 - 1e-2 * 0.1 * 2.0).epsilon(1e-12));
}
