#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "specmorl/neural.hpp"
#include "support/reference.hpp"

using namespace specmorl;

namespace {

NetworkShape small_shape() {
  NetworkShape s;
  s.enc_hidden = 8;
  s.enc_layers = 2;
  s.state_width = 6;
  s.head_hidden = 10;
  s.head_layers = 3;
  return s;
}

std::vector<double> features(int width, int hot) {
  std::vector<double> f(static_cast<std::size_t>(width), 0.0);
  f[static_cast<std::size_t>(hot)] = 1.0;
  return f;
}

Matrix feature_rows(int width, const std::vector<int>& hots) {
  Matrix m = Matrix::Zero(static_cast<Eigen::Index>(hots.size()), width);
  for (std::size_t i = 0; i < hots.size(); ++i) m(static_cast<Eigen::Index>(i), hots[i]) = 1.0;
  return m;
}

void check_close(double a, double b, double rel) {
  CHECK(std::abs(a - b) <= rel * std::max({std::abs(a), std::abs(b), 1e-300}));
}

}  // namespace

TEST_CASE("default shape matches the encoder and head sizes") {
  const QNetwork net = QNetwork::random(NetworkShape{}, 1);
  CHECK(net.shape().goal_width() == 128);
  CHECK(net.shape().head_input() == 25 + 128);
  CHECK(net.tensor("enc.l2.bwd.w_h").shape == std::vector<int>{192, 64});
  CHECK(net.tensor("enc.l1.fwd.w_in").shape == std::vector<int>{192, 128});
  CHECK(net.tensor("head.0.w").shape == std::vector<int>{128, 153});
  CHECK(net.tensor("head.3.w").shape == std::vector<int>{4, 128});
  CHECK_THROWS_AS(net.tensor("head.4.w"), ShapeError);
  std::size_t total = 0;
  for (const auto& t : net.tensors()) total += t.size;
  CHECK(total == net.parameter_count());
}

TEST_CASE("zero parameters encode to the zero vector") {
  const QNetwork net(NetworkShape{});
  const Vector e = net.encode(tokenize(parse("o1 & ( o2 | -o3 )")));
  CHECK(e.size() == 128);
  CHECK(e.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("encoding is deterministic and order sensitive") {
  const QNetwork net = QNetwork::random(NetworkShape{}, 7);
  const Vector a = net.encode(tokenize(parse("o1 & o2")));
  const Vector b = net.encode(tokenize(parse("o2 & o1")));
  CHECK((a - net.encode(tokenize(parse("o1 & o2")))).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a - b).cwiseAbs().maxCoeff() > 1e-6);
  CHECK_THROWS_AS(net.encode(TokenSequence{}), EmptySequence);
  CHECK_THROWS_AS(net.encode(TokenSequence{99}), IndexError);
}

TEST_CASE("forward agrees with the scalar reference implementation") {
  const QNetwork net = QNetwork::random(NetworkShape{}, 3);
  Rng rng(5);
  for (int k = 0; k < 10; ++k) {
    const TokenSequence tok = tokenize(generate(rng, 6, 5));
    const Vector e = net.encode(tok);
    const auto ref = reference::encode(net, tok);
    for (int i = 0; i < 128; ++i) check_close(e(i), ref[static_cast<std::size_t>(i)], 1e-12);
    const auto f = features(25, k);
    const auto q = net.q_values(f, tok);
    const auto rq = reference::q_values(net, f, tok);
    for (int a = 0; a < 4; ++a) check_close(q[static_cast<std::size_t>(a)], rq[static_cast<std::size_t>(a)], 1e-12);
  }
}

TEST_CASE("batched evaluation matches per-item evaluation") {
  const QNetwork net = QNetwork::random(NetworkShape{}, 4);
  Rng rng(9);
  std::vector<TokenSequence> seqs;
  for (int i = 0; i < 7; ++i) seqs.push_back(tokenize(generate(rng, 4, 1 + i % 4)));
  std::vector<const TokenSequence*> ptrs;
  for (const auto& s : seqs) ptrs.push_back(&s);
  const std::vector<int> hots = {0, 3, 9, 24, 12, 7, 7, 1, 2, 18};
  std::vector<int> row_goal;
  for (std::size_t i = 0; i < hots.size(); ++i) row_goal.push_back(static_cast<int>((i * 3) % seqs.size()));
  const Matrix q = net.forward(feature_rows(25, hots), ptrs, row_goal);
  for (std::size_t i = 0; i < hots.size(); ++i) {
    const auto single = net.q_values(features(25, hots[i]), seqs[static_cast<std::size_t>(row_goal[i])]);
    for (int a = 0; a < 4; ++a) check_close(q(static_cast<Eigen::Index>(i), a), single[static_cast<std::size_t>(a)], 1e-12);
  }
  const Matrix enc = net.encode_batch(ptrs);
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const Vector e = net.encode(seqs[i]);
    for (int j = 0; j < 128; ++j) check_close(enc(static_cast<Eigen::Index>(i), j), e(j), 1e-12);
  }
}

TEST_CASE("changing the spec changes Q-values at random init") {
  const QNetwork net = QNetwork::random(NetworkShape{}, 2);
  const auto f = features(25, 4);
  const auto a = net.q_values(f, tokenize(parse("o1")));
  const auto b = net.q_values(f, tokenize(parse("-o2")));
  double diff = 0.0;
  for (int i = 0; i < 4; ++i) diff += std::abs(a[static_cast<std::size_t>(i)] - b[static_cast<std::size_t>(i)]);
  CHECK(diff > 1e-9);
}

TEST_CASE("shape mismatches are rejected") {
  const QNetwork net = QNetwork::random(NetworkShape{}, 2);
  const TokenSequence tok = tokenize(parse("o1"));
  CHECK_THROWS_AS(net.q_values(features(24, 0), tok), ShapeError);
  std::vector<const TokenSequence*> ptrs = {&tok};
  CHECK_THROWS_AS(net.forward(feature_rows(25, {0, 1}), ptrs, std::vector<int>{0}), ShapeError);
  CHECK_THROWS_AS(net.forward(feature_rows(25, {0}), ptrs, std::vector<int>{1}), ShapeError);
  CHECK_THROWS_AS(net.forward_goals(feature_rows(25, {0}), Matrix::Zero(1, 127)), ShapeError);
  CHECK_THROWS_AS(net.head_forward(Matrix::Zero(1, 10)), ShapeError);
  CHECK_THROWS_AS(QNetwork(NetworkShape{0}), ShapeError);
}

TEST_CASE("backward without a recorded forward raises NoTape") {
  QNetwork net = QNetwork::random(small_shape(), 1);
  Tape tape;
  CHECK_THROWS_AS(net.backward(tape, Matrix::Zero(1, 4)), NoTape);
}

TEST_CASE("last-layer weight gradient is the outer product of dQ and its input") {
  QNetwork net = QNetwork::random(small_shape(), 2);
  const TokenSequence tok = tokenize(parse("o1 | o2"));
  std::vector<const TokenSequence*> ptrs = {&tok};
  Tape tape;
  const Matrix x = feature_rows(6, {1, 4});
  net.forward(x, ptrs, std::vector<int>{0, 0}, &tape);
  Matrix dq(2, 4);
  dq << 0.3, -1.0, 2.0, 0.5, -0.7, 0.1, 0.0, 1.5;
  net.zero_grad();
  net.backward(tape, dq);
  const auto& w = net.tensor("head.2.w");
  const Matrix& in = tape.head.inputs.back();
  const Matrix expected = dq.transpose() * in;
  for (int o = 0; o < 4; ++o)
    for (int c = 0; c < w.shape[1]; ++c)
      CHECK(net.gradients()[w.offset + static_cast<std::size_t>(o * w.shape[1] + c)] ==
            doctest::Approx(expected(o, c)).epsilon(1e-12));
  const auto& b = net.tensor("head.2.b");
  for (int o = 0; o < 4; ++o) CHECK(net.gradients()[b.offset + static_cast<std::size_t>(o)] == doctest::Approx(dq.col(o).sum()));
}

TEST_CASE("gradients match central finite differences") {
  QNetwork net = QNetwork::random(NetworkShape{}, 11);
  Rng rng(13);
  std::vector<TokenSequence> seqs;
  for (int i = 0; i < 3; ++i) seqs.push_back(tokenize(generate(rng, 6, 2 + i)));
  std::vector<const TokenSequence*> ptrs;
  for (const auto& s : seqs) ptrs.push_back(&s);
  const Matrix x = feature_rows(25, {0, 5, 11, 20, 24});
  const std::vector<int> row_goal = {0, 1, 2, 1, 0};
  Matrix c(5, 4);
  for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = uniform01(rng) * 2.0 - 1.0;
  auto loss = [&]() { return (net.forward(x, ptrs, row_goal).array() * c.array()).sum(); };

  Tape tape;
  net.forward(x, ptrs, row_goal, &tape);
  net.zero_grad();
  net.backward(tape, c);
  const std::vector<double> grads(net.gradients().begin(), net.gradients().end());

  // Half the slice from the encoder, half from the head.
  std::vector<std::size_t> slice;
  for (int i = 0; i < 50; ++i)
    slice.push_back(static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(net.encoder_parameter_count()) - 1)));
  for (int i = 0; i < 50; ++i)
    slice.push_back(static_cast<std::size_t>(uniform_int(rng, static_cast<int>(net.encoder_parameter_count()),
                                                         static_cast<int>(net.parameter_count()) - 1)));
  constexpr double kEps = 1e-4;
  int bad = 0;
  for (std::size_t idx : slice) {
    double& p = net.parameters()[idx];
    const double keep = p;
    p = keep + kEps;
    const double up = loss();
    p = keep - kEps;
    const double down = loss();
    p = keep;
    const double fd = (up - down) / (2 * kEps);
    const double an = grads[idx];
    const double err = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8});
    if (err > 1e-3) {
      ++bad;
      MESSAGE("param " << idx << " fd " << fd << " analytic " << an);
    }
  }
  CHECK(bad == 0);
}

TEST_CASE("gradients accumulate until zeroed") {
  QNetwork net = QNetwork::random(small_shape(), 3);
  const TokenSequence tok = tokenize(parse("o1 >= 0.3 & -o2"));
  std::vector<const TokenSequence*> ptrs = {&tok};
  Tape tape;
  net.forward(feature_rows(6, {2}), ptrs, std::vector<int>{0}, &tape);
  const Matrix dq = Matrix::Constant(1, 4, 0.5);
  net.zero_grad();
  net.backward(tape, dq);
  const std::vector<double> once(net.gradients().begin(), net.gradients().end());
  net.backward(tape, dq);
  for (std::size_t i = 0; i < once.size(); ++i) CHECK(net.gradients()[i] == doctest::Approx(2 * once[i]));
  net.zero_grad();
  for (double g : net.gradients()) CHECK(g == 0.0);
}

TEST_CASE("encoder gradients stay zero when the goal bypasses the encoder") {
  QNetwork net = QNetwork::random(small_shape(), 3);
  Tape tape;
  net.forward_goals(feature_rows(6, {0, 1}), Matrix::Constant(2, 16, 0.25), &tape);
  net.zero_grad();
  net.backward(tape, Matrix::Constant(2, 4, 1.0));
  const auto g = net.gradients();
  for (std::size_t i = 0; i < net.encoder_parameter_count(); ++i) REQUIRE(g[i] == 0.0);
  double head = 0.0;
  for (std::size_t i = net.encoder_parameter_count(); i < g.size(); ++i) head += std::abs(g[i]);
  CHECK(head > 0.0);
}

TEST_CASE("forward stays finite for bounded large parameters") {
  QNetwork net = QNetwork::random(small_shape(), 4);
  Rng rng(1);
  for (double& p : net.parameters()) p = (uniform01(rng) * 2.0 - 1.0) * 1e3;
  for (const char* s : {"o1", "o1 & ( o2 | o3 >= 0.4 )", "( ( -o3 | -o3 ) )"}) {
    const auto q = net.q_values(features(6, 3), tokenize(parse(s)));
    for (double v : q) CHECK(std::isfinite(v));
  }
}

TEST_CASE("Adam leaves parameters alone under zero gradient") {
  std::vector<double> p = {1.0, -2.0, 3.0};
  const std::vector<double> g(3, 0.0);
  Adam opt(3, AdamConfig{});
  for (int i = 0; i < 5; ++i) adam_step(opt, p, g);
  CHECK(p == std::vector<double>{1.0, -2.0, 3.0});
  CHECK(opt.steps() == 5);
}

TEST_CASE("Adam under a constant gradient steps by lr times its sign") {
  std::vector<double> p = {0.0, 0.0};
  const std::vector<double> g = {0.3, -4.0};
  AdamConfig cfg;
  cfg.lr = 0.01;
  Adam opt(2, cfg);
  for (int i = 0; i < 1000; ++i) {
    const std::vector<double> before = p;
    opt.step(p, g);
    CHECK(p[0] - before[0] == doctest::Approx(-0.01).epsilon(1e-6));
    CHECK(p[1] - before[1] == doctest::Approx(0.01).epsilon(1e-6));
  }
}

TEST_CASE("Adam is deterministic given moments and inputs and checks sizes") {
  std::vector<double> p1 = {0.5, 0.25}, p2 = p1;
  const std::vector<double> g = {0.1, -0.2};
  Adam a(2, AdamConfig{}), b(2, AdamConfig{});
  for (int i = 0; i < 3; ++i) {
    a.step(p1, g);
    b.step(p2, g);
  }
  CHECK(p1 == p2);
  Adam c(2, AdamConfig{});
  c.restore(a.steps(), {a.first_moment().begin(), a.first_moment().end()},
            {a.second_moment().begin(), a.second_moment().end()});
  std::vector<double> p3 = p1;
  a.step(p1, g);
  c.step(p3, g);
  CHECK(p1 == p3);
  std::vector<double> wrong(3);
  CHECK_THROWS_AS(a.step(wrong, std::vector<double>(3)), ShapeError);
  CHECK_THROWS_AS(c.restore(1, {0.0}, {0.0}), ShapeError);
  a.reset();
  CHECK(a.steps() == 0);
}

TEST_CASE("target copies are isolated from later updates") {
  QNetwork q = QNetwork::random(small_shape(), 5);
  const QNetwork target = copy_into_target(q);
  CHECK(target == q);
  CHECK(copy_into_target(target) == target);
  const TokenSequence tok = tokenize(parse("o2"));
  const auto before = target.q_values(features(6, 1), tok);
  CHECK(before == q.q_values(features(6, 1), tok));

  std::vector<const TokenSequence*> ptrs = {&tok};
  Tape tape;
  q.forward(feature_rows(6, {1}), ptrs, std::vector<int>{0}, &tape);
  q.zero_grad();
  q.backward(tape, Matrix::Constant(1, 4, 1.0));
  Adam opt(q.parameter_count(), AdamConfig{});
  opt.step(q.parameters(), q.gradients());
  CHECK_FALSE(target == q);
  CHECK(target.q_values(features(6, 1), tok) == before);
}

TEST_CASE("random initialization is seeded") {
  CHECK(QNetwork::random(small_shape(), 9) == QNetwork::random(small_shape(), 9));
  CHECK_FALSE(QNetwork::random(small_shape(), 9) == QNetwork::random(small_shape(), 10));
}
