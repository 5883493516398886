#include "doctest.h"
#include "oracles.hpp"

#include "microcl/contrastive.hpp"
#include "microcl/gradcheck.hpp"

#include <cmath>
#include <deque>
#include <random>

using namespace microcl;

namespace {

using Mat = MatrixR<double>;

Mat rows(std::initializer_list<std::initializer_list<double>> values) {
  Mat m(values.size(), values.begin()->size());
  int r = 0;
  for (const auto& row : values) {
    int c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.backbone = {2, 6};
  cfg.hidden = 10;
  cfg.embed_dim = 4;
  cfg.batch_size = 8;
  cfg.queue_capacity = 16;
  cfg.iterations = 3;
  return cfg;
}

}  // namespace

TEST_CASE("info_nce: uniform similarities give ln(N+1)") {
  const VectorX<double> q = (VectorX<double>(3) << 1, 0, 0).finished();
  for (int n = 0; n <= 20; ++n) {
    const Mat pos = rows({{0, 1, 0}});
    Mat neg(n, 3);
    for (int i = 0; i < n; ++i) neg.row(i) << 0, (i % 2 ? 1.0 : -1.0), 0;
    CHECK(std::abs(info_nce(q, pos, neg, 0.08).loss - std::log(n + 1.0)) <= 1e-9);
  }
}

TEST_CASE("info_nce: hand example and errors") {
  const VectorX<double> q = (VectorX<double>(2) << 1, 0).finished();
  const auto r = info_nce(q, rows({{1, 0}}), rows({{-1, 0}}), 1.0);
  CHECK(std::abs(r.loss - std::log1p(std::exp(-2.0))) <= 1e-12);
  CHECK(r.loss == doctest::Approx(0.1269).epsilon(1e-3));
  CHECK_THROWS(info_nce(q, Mat(0, 2), rows({{-1, 0}}), 1.0));
  CHECK_THROWS(info_nce(q, rows({{1, 0}}), rows({{-1, 0}}), 0.0));
}

TEST_CASE("info_nce: raising a negative similarity raises the loss") {
  std::mt19937_64 gen(1);
  for (int trial = 0; trial < 100; ++trial) {
    const Mat qm = oracle::unit_rows(1, 5, gen);
    const VectorX<double> q = qm.row(0).transpose();
    const Mat pos = oracle::unit_rows(2, 5, gen);
    Mat neg = oracle::unit_rows(4, 5, gen);
    const double before = info_nce(q, pos, neg, 0.08).loss;
    neg.row(trial % 4) = 0.5 * (neg.row(trial % 4) + qm.row(0));  // strictly more similar
    CHECK(info_nce(q, pos, neg, 0.08).loss > before);
  }
}

TEST_CASE("info_nce gradients match finite differences") {
  std::mt19937_64 gen(2);
  for (int seed = 0; seed < 20; ++seed) {
    const Mat q = oracle::unit_rows(1, 4, gen), pos = oracle::unit_rows(2, 4, gen), neg = oracle::unit_rows(3, 4, gen);
    const double sigma = 0.08;
    const auto r = info_nce<double>(q.row(0).transpose(), pos, neg, sigma);
    const auto fq = [&](const Mat& m) { return info_nce<double>(m.row(0).transpose(), pos, neg, sigma).loss; };
    const auto fp = [&](const Mat& m) { return info_nce<double>(q.row(0).transpose(), m, neg, sigma).loss; };
    const auto fn = [&](const Mat& m) { return info_nce<double>(q.row(0).transpose(), pos, m, sigma).loss; };
    CHECK(oracle::max_relative_error(Mat(r.grad_query.transpose()), oracle::numeric_gradient(fq, q)) < 1e-4);
    CHECK(oracle::max_relative_error(r.grad_positives, oracle::numeric_gradient(fp, pos)) < 1e-4);
    CHECK(oracle::max_relative_error(r.grad_negatives, oracle::numeric_gradient(fn, neg)) < 1e-4);
  }
}

TEST_CASE("supervised_loss: toy instances") {
  SUBCASE("single positive, no negatives") {
    const std::vector<int> l{0};
    const auto r = supervised_loss<double>(rows({{1, 0}}), l, rows({{0, 1}}), l, 0.08);
    CHECK(r.loss == 0.0);
    CHECK(r.terms == 2);
    CHECK(r.skipped == 0);
  }
  SUBCASE("one positive and one negative at equal similarity") {
    const std::vector<int> ml{0}, al{0, 1};
    const auto r = supervised_loss<double>(rows({{1, 0}}), ml, rows({{0, 1}, {0, -1}}), al, 0.08);
    CHECK(std::abs(r.loss - std::log(2.0)) <= 1e-12);
    CHECK(r.skipped == 1);  // the class-1 macro query has no micro positive
  }
  SUBCASE("two saturated positives push p above one") {
    const std::vector<int> ml{0}, al{0, 0, 1};
    const auto r = supervised_loss<double>(rows({{1, 0}}), ml, rows({{1, 0}, {1, 0}, {-1, 0}}), al, 1.0);
    const double ratio = std::exp(1.0) / (std::exp(1.0) + std::exp(-1.0));
    CHECK(std::abs(r.loss - (-std::log(2 * ratio))) <= 1e-12);
    CHECK(r.loss < 0.0);
  }
  SUBCASE("fixed five-embedding instance") {
    const Mat micro = rows({{0.6, 0.8, 0}, {0, 0.6, 0.8}});
    const Mat macro = rows({{1, 0, 0}, {0, 0, 1}, {0.8, 0, 0.6}});
    const std::vector<int> ml{0, 1}, al{0, 1, 0};
    const auto r = supervised_loss<double>(micro, ml, macro, al, 0.5);
    CHECK(std::abs(r.loss - static_cast<double>(oracle::spreadsheet_js(micro, ml, macro, al, 0.5))) <= 1e-6);
    CHECK(r.terms == 5);
  }
}

TEST_CASE("supervised_loss matches the term-by-term evaluation and finite differences") {
  std::mt19937_64 gen(3);
  std::uniform_int_distribution<int> label(0, 2), count(1, 5);
  for (int trial = 0; trial < 100; ++trial) {
    const int nt = count(gen), na = count(gen);
    const Mat micro = oracle::unit_rows(nt, 4, gen), macro = oracle::unit_rows(na, 4, gen);
    std::vector<int> ml(nt), al(na);
    for (auto& l : ml) l = label(gen);
    for (auto& l : al) l = label(gen);
    const double sigma = trial % 2 ? 0.08 : 0.7;
    const auto r = supervised_loss<double>(micro, ml, macro, al, sigma);
    const double want = static_cast<double>(oracle::spreadsheet_js(micro, ml, macro, al, sigma));
    CHECK(std::abs(r.loss - want) <= 1e-6 * std::max(1.0, std::abs(want)));
    const auto f_micro = [&](const Mat& m) { return supervised_loss<double>(m, ml, macro, al, sigma).loss; };
    const auto f_macro = [&](const Mat& m) { return supervised_loss<double>(micro, ml, m, al, sigma).loss; };
    CHECK(oracle::max_relative_error(r.grad_micro, oracle::numeric_gradient(f_micro, micro)) < 1e-4);
    CHECK(oracle::max_relative_error(r.grad_macro, oracle::numeric_gradient(f_macro, macro)) < 1e-4);
  }
}

TEST_CASE("unsupervised_loss: toy instances") {
  const Mat q = rows({{1, 0, 0}, {0, 1, 0}, {0.6, 0, 0.8}});
  const Mat k = rows({{0.8, 0.6, 0}, {0, 1, 0}, {0, 0, 1}});
  CHECK(unsupervised_loss<double>(q, k, Mat(0, 3), 0.08).loss == 0.0);

  // All similarities zero: uniform softmax over K+1 entries.
  const Mat qz = rows({{1, 0, 0}}), kz = rows({{0, 1, 0}});
  for (int kq = 1; kq <= 8; ++kq) {
    Mat queue(kq, 3);
    for (int i = 0; i < kq; ++i) queue.row(i) << 0, 0, (i % 2 ? 1 : -1);
    CHECK(std::abs(unsupervised_loss<double>(qz, kz, queue, 0.08).loss - std::log(kq + 1.0)) <= 1e-9);
  }

  const Mat queue = rows({{0, 0, 1}, {-1, 0, 0}, {0, 0.6, 0.8}, {0.6, -0.8, 0}});
  const auto r = unsupervised_loss<double>(q, k, queue, 0.5);
  CHECK(std::abs(r.loss - static_cast<double>(oracle::spreadsheet_ju(q, k, queue, 0.5))) <= 1e-6);
  CHECK(r.per_sample.size() == 3);
  for (double t : r.per_sample) CHECK(t >= 0.0);
}

TEST_CASE("unsupervised_loss gradients match finite differences") {
  std::mt19937_64 gen(4);
  for (int trial = 0; trial < 40; ++trial) {
    const Mat q = oracle::unit_rows(3, 5, gen), k = oracle::unit_rows(3, 5, gen), queue = oracle::unit_rows(trial % 7, 5, gen);
    const auto r = unsupervised_loss<double>(q, k, queue, 0.08);
    CHECK(std::abs(r.loss - static_cast<double>(oracle::spreadsheet_ju(q, k, queue, 0.08))) <= 1e-6 * std::max(1.0, r.loss));
    const auto fq = [&](const Mat& m) { return unsupervised_loss<double>(m, k, queue, 0.08).loss; };
    const auto fk = [&](const Mat& m) { return unsupervised_loss<double>(q, m, queue, 0.08).loss; };
    CHECK(oracle::max_relative_error(r.grad_query, oracle::numeric_gradient(fq, q)) < 1e-4);
    CHECK(oracle::max_relative_error(r.grad_key, oracle::numeric_gradient(fk, k)) < 1e-4);
  }
}

TEST_CASE("normalize_rows backward matches finite differences") {
  std::mt19937_64 gen(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Mat u = oracle::random_tensor({3, 4}, gen).matrix();
    const Mat w = oracle::random_tensor({3, 4}, gen).matrix();
    const auto f = [&](const Mat& m) { return normalize_rows(m).cwiseProduct(w).sum(); };
    CHECK(oracle::max_relative_error(normalize_rows_backward(u, w), oracle::numeric_gradient(f, u)) < 1e-4);
    CHECK((normalize_rows(u).rowwise().norm().array() - 1.0).abs().maxCoeff() < 1e-12);
  }
  CHECK_THROWS(normalize_rows(Mat(Mat::Zero(1, 3))));
}

TEST_CASE("queue: documented example and bookkeeping") {
  EmbeddingQueue q(4, 2);
  CHECK(q.size() == 0);
  const MatrixR<float> abc = (MatrixR<float>(3, 2) << 1, 0, 2, 0, 3, 0).finished();
  q.enqueue(abc);
  CHECK(q.contents() == abc);
  CHECK(q.size() == 3);
  q.enqueue((MatrixR<float>(2, 2) << 4, 0, 5, 0).finished());
  CHECK(q.size() == 4);
  const MatrixR<float> want = (MatrixR<float>(4, 2) << 2, 0, 3, 0, 4, 0, 5, 0).finished();
  CHECK(q.contents() == want);
  CHECK_THROWS(q.enqueue(MatrixR<float>(5, 2)));
  CHECK_THROWS(q.enqueue(MatrixR<float>(1, 3)));
  CHECK(EmbeddingQueue::restore(q.storage(), q.cursor(), q.size()) == q);
  CHECK_THROWS(EmbeddingQueue::restore(q.storage(), 4, 4));
  CHECK_THROWS(EmbeddingQueue(0, 2));
}

TEST_CASE("queue matches a deque oracle on random enqueue sequences") {
  std::mt19937_64 gen(6);
  std::uniform_int_distribution<int> cap(1, 12);
  for (int seq = 0; seq < 1000; ++seq) {
    const int capacity = cap(gen);
    EmbeddingQueue q(capacity, 2);
    std::deque<std::array<float, 2>> oracle_q;
    float next = 0;
    const int steps = 1 + static_cast<int>(gen() % 8);
    for (int s = 0; s < steps; ++s) {
      const int n = static_cast<int>(gen() % (capacity + 1));
      MatrixR<float> batch(n, 2);
      for (int i = 0; i < n; ++i) {
        batch.row(i) << next, -next;
        oracle_q.push_back({next, -next});
        next += 1;
        if (static_cast<int>(oracle_q.size()) > capacity) oracle_q.pop_front();
      }
      q.enqueue(batch);
    }
    const auto got = q.contents();
    REQUIRE(got.rows() == static_cast<Eigen::Index>(oracle_q.size()));
    for (std::size_t i = 0; i < oracle_q.size(); ++i) {
      CHECK(got(i, 0) == oracle_q[i][0]);
      CHECK(got(i, 1) == oracle_q[i][1]);
    }
  }
}

TEST_CASE("ema_update: fixed point, contraction, exact endpoints") {
  std::mt19937_64 gen(7);
  const NetSpec net{LayerSpec::dense("a", 3, 4), LayerSpec::dense("b", 4, 2)};
  for (int trial = 0; trial < 50; ++trial) {
    const auto theta = oracle::random_params(net, gen);
    auto same = theta;
    ema_update(same, theta, 0.9);
    CHECK(same == theta);
    auto m = oracle::random_params(net, gen);
    auto dist = [&](const ParamSet<double>& a) {
      double d = 0;
      for (const auto& [name, p] : a) d += (p.weight.vec() - theta.at(name).weight.vec()).squaredNorm();
      return d;
    };
    double before = dist(m);
    for (int s = 0; s < 5; ++s) {
      ema_update(m, theta, 0.7);
      const double after = dist(m);
      CHECK(after <= before);
      before = after;
    }
    auto frozen = m;
    ema_update(frozen, theta, 1.0);
    CHECK(frozen == m);
    ema_update(frozen, theta, 0.0);
    CHECK(frozen == theta);
  }
  ParamSet<double> zero, one;
  zero["x"] = {TensorD({1}, 0.0), TensorD({1}, 0.0)};
  one["x"] = {TensorD({1}, 1.0), TensorD({1}, 1.0)};
  ema_update(zero, one, 0.999);
  CHECK(zero.at("x").weight[0] == 0.999 * 0.0 + (1 - 0.999) * 1.0);
  CHECK(std::abs(zero.at("x").weight[0] - 0.001) <= 1e-15);
  CHECK_THROWS(ema_update(zero, one, 1.5));
}

TEST_CASE("embed: unit rows, determinism, 13 of 64 hidden units active") {
  TrainConfig cfg;
  const auto model = make_contrastive_model(cfg);
  const auto theta = init_contrastive_params(model, 3);
  const auto data = make_splits(SplitSpec{1, 1, 2, 0, 64, 4});
  std::vector<Image> imgs;
  for (const auto& s : data.micro_unlabeled) imgs.push_back(s.image);
  for (const auto& s : data.macro) imgs.push_back(s.image);
  const TensorF x = batch_images(imgs);
  const auto a = embed(model, theta, x, true);
  const auto b = embed(model, theta, x, false);
  CHECK(a.v == b.v);
  CHECK(a.z == b.z);
  CHECK(a.z.shape() == Shape{12, 128});
  CHECK(a.v.cols() == 32);
  CHECK((a.v.rowwise().norm().array() - 1.0f).abs().maxCoeff() < 1e-6f);
  const TensorF& gated = a.head_tape.activations.at(2);
  for (int r = 0; r < gated.dim(0); ++r) CHECK((gated.matrix().row(r).array() != 0.0f).count() == 13);
}

TEST_CASE("combined loss gradient matches finite differences on a 4-sample batch") {
  TrainConfig cfg = tiny_config();
  const auto model = make_contrastive_model(cfg);
  const auto data = make_splits(SplitSpec{2, 2, 0, 0, 32, 9});
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    // Zero-initialised biases put dead ReLUs exactly on their kink; move off it.
    auto theta = cast_params<double>(init_contrastive_params(model, seed));
    std::mt19937_64 jitter(seed + 7);
    for (auto& [name, p] : theta) p.bias = oracle::random_tensor(p.bias.shape(), jitter, -0.05, 0.05);
    const auto theta_m = cast_params<double>(init_contrastive_params(model, seed + 100));
    Rng rng(seed);
    // Supervised side: two micro, two macro, labels {0,1} each.
    std::vector<Image> sup{data.micro_labeled[0].image, data.micro_labeled[1].image, data.macro[0].image,
                           data.macro[1].image};
    const std::vector<int> ml{*data.micro_labeled[0].label, *data.micro_labeled[1].label};
    const std::vector<int> al{*data.macro[0].label, *data.macro[1].label};
    std::vector<Image> qv, kv;
    for (const auto& img : sup) {
      qv.push_back(query_view(img, cfg, rng));
      kv.push_back(key_view(img, cfg, rng));
    }
    const TensorD xs = batch_images(sup).cast<double>(), xq = batch_images(qv).cast<double>();
    const Mat keys = embed(model, theta_m, batch_images(kv).cast<double>(), false).v;
    std::mt19937_64 gen(seed);
    const Mat queue = oracle::unit_rows(5, cfg.embed_dim, gen);
    const double lambda = 0.7;

    const Objective objective = [&](const ParamSet<double>& p) {
      auto ps = embed(model, p, xs, true);
      const Mat vt = ps.v.topRows(2), va = ps.v.bottomRows(2);
      const auto js = supervised_loss<double>(vt, ml, va, al, cfg.sigma);
      Mat dv(4, cfg.embed_dim);
      dv << js.grad_micro, js.grad_macro;
      auto g = embed_backward(model, p, ps, dv);
      auto pq = embed(model, p, xq, true);
      const auto ju = unsupervised_loss<double>(pq.v, keys, queue, cfg.sigma);
      auto gu = embed_backward(model, p, pq, Mat(lambda * ju.grad_query));
      accumulate(g, gu);
      return std::pair{js.loss + lambda * ju.loss, g};
    };
    // Tens of thousands of ReLU and pooling units: probes that straddle a
    // switch are replaced rather than compared.
    const Pattern pattern = [&](const ParamSet<double>& p) {
      std::vector<std::int32_t> out;
      for (const TensorD* x : {&xs, &xq}) {
        const auto pass = embed(model, p, *x, true);
        append_pattern(model.extractor, pass.extractor_tape, out);
        append_pattern(model.head, pass.head_tape, out);
      }
      return out;
    };
    GradCheckOptions opts;
    opts.max_entries = 12;
    opts.seed = seed;
    const auto report = grad_check(theta, objective, pattern, opts);
    CAPTURE(seed);
    CAPTURE(report.max_rel_error);
    CHECK(report.passed);
  }
}

TEST_CASE("training step: momentum network and queue take no gradient") {
  TrainConfig cfg = tiny_config();
  cfg.alpha = 1.0;
  const auto model = make_contrastive_model(cfg);
  const auto data = make_splits(SplitSpec{4, 4, 8, 0, 32, 10});
  const TrainData td{data.micro_labeled, data.macro, data.micro_unlabeled};
  auto state = init_trainer(model, cfg, 1);
  const auto theta0 = state.theta;
  const auto theta_m0 = state.theta_m;
  const auto log = train_extractor(model, td, cfg, state);
  CHECK(log.size() == 3);
  CHECK(state.theta_m == theta_m0);  // alpha = 1 freezes the momentum copy
  CHECK_FALSE(state.theta == theta0);
  CHECK(state.queue.size() == cfg.queue_capacity);  // 3 batches of 8 into 16 slots
  CHECK((state.queue.contents().rowwise().norm().array() - 1.0f).abs().maxCoeff() < 1e-5f);

  // Perturbing the queue changes J_U but the step leaves stored keys alone.
  auto probe = state;
  Rng r1(5), r2(5);
  std::vector<Image> batch{data.micro_unlabeled[0].image, data.micro_unlabeled[1].image};
  const auto before = unsupervised_step(model, cfg, probe, batch, r1);
  probe.queue = EmbeddingQueue(cfg.queue_capacity, cfg.embed_dim);
  const auto empty = unsupervised_step(model, cfg, probe, batch, r2);
  CHECK(empty.loss == 0.0);
  CHECK(before.loss > 0.0);
  CHECK(before.grads.count("conv1") == 1);
}

TEST_CASE("lambda = 0 makes the update independent of the queue") {
  TrainConfig cfg = tiny_config();
  cfg.lambda = 0.0;
  cfg.iterations = 1;
  const auto model = make_contrastive_model(cfg);
  const auto data = make_splits(SplitSpec{4, 4, 8, 0, 32, 11});
  const TrainData td{data.micro_labeled, data.macro, data.micro_unlabeled};
  auto a = init_trainer(model, cfg, 2);
  auto b = a;
  std::mt19937_64 gen(8);
  b.queue.enqueue(oracle::unit_rows(cfg.queue_capacity, cfg.embed_dim, gen).cast<float>());
  const auto la = train_extractor(model, td, cfg, a);
  const auto lb = train_extractor(model, td, cfg, b);
  CHECK(a.theta == b.theta);
  CHECK(la[0].js == lb[0].js);
  CHECK(la[0].ju != lb[0].ju);  // still logged
  CHECK(la[0].le == la[0].js);
}

TEST_CASE("ten-iteration smoke run logs finite losses and checkpoints") {
  TrainConfig cfg = tiny_config();
  cfg.iterations = 10;
  cfg.checkpoint_every = 4;
  const auto model = make_contrastive_model(cfg);
  const auto data = make_splits(SplitSpec{4, 4, 16, 0, 32, 12});
  const TrainData td{data.micro_labeled, data.macro, data.micro_unlabeled};
  auto state = init_trainer(model, cfg, 3);
  std::vector<int> fired;
  const auto log = train_extractor(model, td, cfg, state,
                                   [&](const TrainerState& s, const std::vector<LossRecord>&) { fired.push_back(s.iteration); });
  REQUIRE(log.size() == 10);
  for (const auto& r : log) {
    CHECK(std::isfinite(r.js));
    CHECK(std::isfinite(r.ju));
    CHECK(r.le == doctest::Approx(r.js + cfg.lambda * r.ju));
  }
  CHECK(log.front().ju == 0.0);  // queue starts empty
  CHECK(fired == std::vector<int>{4, 8, 10});

  // Same seed, same run.
  auto again = init_trainer(model, cfg, 3);
  train_extractor(model, td, cfg, again);
  CHECK(again == state);
}

TEST_CASE("train_extractor without adapted macros skips J_S") {
  TrainConfig cfg = tiny_config();
  const auto model = make_contrastive_model(cfg);
  const auto data = make_splits(SplitSpec{0, 4, 8, 0, 32, 13});
  const TrainData td{data.micro_labeled, {}, data.micro_unlabeled};
  auto state = init_trainer(model, cfg, 4);
  for (const auto& r : train_extractor(model, td, cfg, state)) CHECK(r.js == 0.0);
  CHECK_THROWS(train_extractor(model, TrainData{}, cfg, state));
}
