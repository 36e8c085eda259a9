#include <catch2/catch.hpp>

#include <cmath>
#include <vector>

#include "lcmt/model.hpp"
#include "lcmt/train.hpp"

using lcmt::ConstraintPair;
using lcmt::EncodedExample;
using lcmt::ModelConfig;
using lcmt::Rng;
using lcmt::Span;
using lcmt::Tape;
using lcmt::Vocab;
using MP = lcmt::ModelParams<double>;
using TD = lcmt::Tensor<double>;

namespace {

ModelConfig tiny_config(bool with_memory) {
  ModelConfig cfg;
  cfg.vocab_size_src = 9;
  cfg.vocab_size_tgt = 9;
  cfg.d_model = 4;
  cfg.n_blocks = 1;
  cfg.n_heads = 2;
  cfg.ffn_width = 6;
  cfg.max_len = 16;
  cfg.memory_block_index = with_memory ? std::optional<int>(1) : std::nullopt;
  return cfg;
}

using Mat = std::vector<std::vector<double>>;

Mat tensor_to_mat(const TD& t) {
  Mat m(static_cast<size_t>(t.rows()), std::vector<double>(static_cast<size_t>(t.cols())));
  for (long i = 0; i < t.rows(); ++i)
    for (long j = 0; j < t.cols(); ++j) m[static_cast<size_t>(i)][static_cast<size_t>(j)] = t.at(i, j);
  return m;
}

Mat mat_mul(const Mat& a, const Mat& b) {
  Mat c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (size_t i = 0; i < a.size(); ++i)
    for (size_t k = 0; k < b.size(); ++k)
      for (size_t j = 0; j < b[0].size(); ++j) c[i][j] += a[i][k] * b[k][j];
  return c;
}

Mat layer_norm_ref(const Mat& x, const Mat& gain, const Mat& bias, double eps = 1e-5) {
  Mat out = x;
  const size_t c = x[0].size();
  for (size_t i = 0; i < x.size(); ++i) {
    double mean = 0;
    for (double v : x[i]) mean += v;
    mean /= static_cast<double>(c);
    double var = 0;
    for (double v : x[i]) var += (v - mean) * (v - mean);
    var /= static_cast<double>(c);
    const double istd = 1.0 / std::sqrt(var + eps);
    for (size_t j = 0; j < c; ++j) out[i][j] = (x[i][j] - mean) * istd * gain[0][j] + bias[0][j];
  }
  return out;
}

Mat softmax_ref(const Mat& x) {
  Mat out = x;
  for (auto& row : out) {
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double sum = 0;
    for (double& v : row) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (double& v : row) v /= sum;
  }
  return out;
}

// Straight-line re-implementation of the encoder forward pass for a 1-block
// configuration, written with none of the library's tensor machinery.
Mat encode_trace_oracle(const MP& params, const std::vector<int>& tokens) {
  const ModelConfig& cfg = params.config;
  const size_t m = tokens.size();
  const size_t d = static_cast<size_t>(cfg.d_model);
  const double sqrt_d = std::sqrt(static_cast<double>(d));

  Mat x(m, std::vector<double>(d));
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < d; ++j) {
      const double freq =
          std::pow(10000.0, -2.0 * static_cast<double>(j / 2) / static_cast<double>(d));
      const double pe = (j % 2 == 0) ? std::sin(static_cast<double>(i) * freq)
                                     : std::cos(static_cast<double>(i) * freq);
      x[i][j] = params.src_emb.at(tokens[i], static_cast<long>(j)) * sqrt_d + pe;
    }

  const auto& blk = params.enc[0];
  // self attention
  Mat normed = layer_norm_ref(x, tensor_to_mat(blk.ln1.gain), tensor_to_mat(blk.ln1.bias));
  Mat q = mat_mul(normed, tensor_to_mat(blk.att.wq));
  Mat k = mat_mul(normed, tensor_to_mat(blk.att.wk));
  Mat v = mat_mul(normed, tensor_to_mat(blk.att.wv));
  const size_t heads = static_cast<size_t>(cfg.n_heads);
  const size_t dh = d / heads;
  Mat ctx(m, std::vector<double>(d, 0.0));
  for (size_t h = 0; h < heads; ++h) {
    Mat scores(m, std::vector<double>(m, 0.0));
    for (size_t i = 0; i < m; ++i)
      for (size_t j2 = 0; j2 < m; ++j2) {
        double dot = 0;
        for (size_t l = 0; l < dh; ++l) dot += q[i][h * dh + l] * k[j2][h * dh + l];
        scores[i][j2] = dot / std::sqrt(static_cast<double>(dh));
      }
    Mat probs = softmax_ref(scores);
    for (size_t i = 0; i < m; ++i)
      for (size_t l = 0; l < dh; ++l) {
        double acc = 0;
        for (size_t j2 = 0; j2 < m; ++j2) acc += probs[i][j2] * v[j2][h * dh + l];
        ctx[i][h * dh + l] = acc;
      }
  }
  Mat att_out = mat_mul(ctx, tensor_to_mat(blk.att.wo));
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < d; ++j) x[i][j] += att_out[i][j];

  // feed forward
  Mat normed2 = layer_norm_ref(x, tensor_to_mat(blk.ln2.gain), tensor_to_mat(blk.ln2.bias));
  Mat h1 = mat_mul(normed2, tensor_to_mat(blk.ffn.w1));
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < h1[0].size(); ++j)
      h1[i][j] = std::max(0.0, h1[i][j] + blk.ffn.b1.at(0, static_cast<long>(j)));
  Mat h2 = mat_mul(h1, tensor_to_mat(blk.ffn.w2));
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < d; ++j) x[i][j] += h2[i][j] + blk.ffn.b2.at(0, static_cast<long>(j));

  return layer_norm_ref(x, tensor_to_mat(params.enc_ln.gain), tensor_to_mat(params.enc_ln.bias));
}

lcmt::ConstraintMemory<double> zero_value_memory(const MP& params, long extra_slots = 0) {
  lcmt::ConstraintMemory<double> mem;
  Rng rng(5);
  mem.keys = TD::randn(extra_slots + 1, params.config.d_model, rng, 1.0);
  mem.values = TD::zeros(extra_slots + 1, params.config.d_model);
  for (long s = 0; s < extra_slots; ++s) mem.slot_origins.push_back(0);
  mem.slot_origins.push_back(-1);
  return mem;
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig cfg = tiny_config(true);
  CHECK_NOTHROW(cfg.validate());
  cfg.memory_block_index = 3;  // > n_blocks
  CHECK_THROWS_AS(cfg.validate(), lcmt::ConfigError);
  cfg = tiny_config(false);
  cfg.d_model = 6;
  cfg.n_heads = 4;
  CHECK_THROWS_AS(cfg.validate(), lcmt::ConfigError);
  cfg = tiny_config(false);
  cfg.lambda_att = -0.5;
  CHECK_THROWS_AS(cfg.validate(), lcmt::ConfigError);
}

TEST_CASE("encode: shapes, determinism, input checks") {
  MP params(tiny_config(false), 99);
  auto enc1 = lcmt::encode<double>(nullptr, params, {4});
  CHECK(enc1.hidden.rows() == 1);
  CHECK(enc1.hidden.cols() == 4);
  CHECK_FALSE(enc1.has_memory_probs());

  auto a = lcmt::encode<double>(nullptr, params, {4, 7, 2});
  auto b = lcmt::encode<double>(nullptr, params, {4, 7, 2});
  for (long i = 0; i < a.hidden.rows(); ++i)
    for (long j = 0; j < a.hidden.cols(); ++j) REQUIRE(a.hidden.at(i, j) == b.hidden.at(i, j));

  CHECK_THROWS_AS(lcmt::encode<double>(nullptr, params, {12}), lcmt::IndexError);
  std::vector<int> too_long(20, 1);
  CHECK_THROWS_AS(lcmt::encode<double>(nullptr, params, too_long), lcmt::DimError);
}

TEST_CASE("encode matches a straight-line forward trace") {
  MP params(tiny_config(false), 1234);
  const std::vector<int> tokens{3, 6};
  auto enc = lcmt::encode<double>(nullptr, params, tokens);
  Mat oracle = encode_trace_oracle(params, tokens);
  for (long i = 0; i < enc.hidden.rows(); ++i)
    for (long j = 0; j < enc.hidden.cols(); ++j)
      REQUIRE(enc.hidden.at(i, j) ==
              Approx(oracle[static_cast<size_t>(i)][static_cast<size_t>(j)]).margin(1e-9));
}

TEST_CASE("seeded init is reproducible") {
  MP p1(tiny_config(true), 7);
  MP p2(tiny_config(true), 7);
  auto n1 = p1.named_parameters();
  auto n2 = p2.named_parameters();
  REQUIRE(n1.size() == n2.size());
  for (size_t i = 0; i < n1.size(); ++i) {
    REQUIRE(n1[i].first == n2[i].first);
    for (size_t e = 0; e < n1[i].second->size(); ++e)
      REQUIRE(n1[i].second->data()[e] == n2[i].second->data()[e]);
  }
}

TEST_CASE("zero value pathway makes the memory sublayer invisible bitwise") {
  MP params(tiny_config(true), 31);
  const std::vector<int> tokens{2, 5, 8};
  auto plain = lcmt::encode<double>(nullptr, params, tokens);

  for (long extra : {0L, 2L}) {
    auto mem = zero_value_memory(params, extra);
    auto aug = lcmt::encode_with_memory<double>(nullptr, params, tokens, mem);
    REQUIRE(aug.has_memory_probs());
    CHECK(aug.memory_probs.rows() == 3);
    CHECK(aug.memory_probs.cols() == extra + 1);
    for (long i = 0; i < plain.hidden.rows(); ++i)
      for (long j = 0; j < plain.hidden.cols(); ++j)
        REQUIRE(aug.hidden.at(i, j) == plain.hidden.at(i, j));
  }
}

TEST_CASE("encode_with_memory: probs rows normalized; saturated key captures a token") {
  MP params(tiny_config(true), 77);
  const std::vector<int> tokens{1, 4};
  const long d = params.config.d_model;

  // Recover token 0's memory query through the public API: against a basis
  // key e_i (none slot key 0), p = sigmoid(q_i / sqrt(d)).
  std::vector<double> query(static_cast<size_t>(d));
  for (long i = 0; i < d; ++i) {
    lcmt::ConstraintMemory<double> mem;
    mem.keys = TD::zeros(2, d);
    mem.keys.at(0, i) = 1.0;
    mem.values = TD::zeros(2, d);
    mem.slot_origins = {0, -1};
    auto enc = lcmt::encode_with_memory<double>(nullptr, params, tokens, mem);
    double total = 0;
    for (long j = 0; j < 2; ++j) total += enc.memory_probs.at(0, j);
    REQUIRE(total == Approx(1.0).margin(1e-6));
    const double p = enc.memory_probs.at(0, 0);
    query[static_cast<size_t>(i)] = std::log(p / (1.0 - p)) * std::sqrt(static_cast<double>(d));
  }

  double norm = 0;
  for (double v : query) norm += v * v;
  norm = std::sqrt(norm);
  REQUIRE(norm > 0);
  lcmt::ConstraintMemory<double> mem;
  mem.keys = TD::zeros(2, d);
  for (long i = 0; i < d; ++i) mem.keys.at(0, i) = 60.0 * query[static_cast<size_t>(i)] / norm;
  mem.values = TD::zeros(2, d);
  mem.slot_origins = {0, -1};
  auto enc = lcmt::encode_with_memory<double>(nullptr, params, tokens, mem);
  CHECK(enc.memory_probs.at(0, 0) > 0.99);
}

TEST_CASE("decoder causality: earlier logits ignore later tokens") {
  MP params(tiny_config(false), 55);
  auto enc = lcmt::encode<double>(nullptr, params, {3, 7});
  const std::vector<int> prefix{Vocab::kBos, 4, 6};
  const std::vector<int> longer{Vocab::kBos, 4, 6, 5, 8, 2};
  TD a = lcmt::decoder_forward<double>(nullptr, params, enc, prefix);
  TD b = lcmt::decoder_forward<double>(nullptr, params, enc, longer);
  for (long i = 0; i < a.rows(); ++i)
    for (long j = 0; j < a.cols(); ++j) REQUIRE(a.at(i, j) == b.at(i, j));
}

TEST_CASE("decode_step: shape and BOS requirement") {
  MP params(tiny_config(false), 21);
  auto enc = lcmt::encode<double>(nullptr, params, {1, 2});
  auto row = lcmt::decode_step<double>(params, enc, {Vocab::kBos}, Vocab::kBos);
  CHECK(row.size() == 9);
  CHECK_THROWS_AS(lcmt::decode_step<double>(params, enc, {4, 5}, Vocab::kBos), lcmt::IndexError);
}

TEST_CASE("sequence_logprob: identities and per-step oracle") {
  MP params(tiny_config(false), 63);
  auto enc = lcmt::encode<double>(nullptr, params, {2, 6, 3});

  // EOS-only target: log P(eos | bos)
  {
    auto row = lcmt::decode_step<double>(params, enc, {Vocab::kBos}, Vocab::kBos);
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double sum = 0;
    for (double v : row) sum += std::exp(v - mx);
    const double expect = row[Vocab::kEos] - mx - std::log(sum);
    CHECK(lcmt::sequence_logprob<double>(params, enc, {Vocab::kEos}, Vocab::kBos, Vocab::kEos) ==
          Approx(expect).margin(1e-12));
  }

  const std::vector<int> target{5, 8, 4, Vocab::kEos};
  const double lp = lcmt::sequence_logprob<double>(params, enc, target, Vocab::kBos, Vocab::kEos);

  // per-step brute-force product of softmax probabilities
  {
    double acc = 0;
    std::vector<int> prefix{Vocab::kBos};
    for (int t : target) {
      auto row = lcmt::decode_step<double>(params, enc, prefix, Vocab::kBos);
      double mx = row[0];
      for (double v : row) mx = std::max(mx, v);
      double sum = 0;
      for (double v : row) sum += std::exp(v - mx);
      acc += row[static_cast<size_t>(t)] - mx - std::log(sum);
      prefix.push_back(t);
    }
    CHECK(lp == Approx(acc).margin(1e-9));
  }

  // algebraic identity against the teacher-forced cross entropy
  {
    std::vector<int> input{Vocab::kBos, 5, 8, 4};
    TD logits = lcmt::decoder_forward<double>(nullptr, params, enc, input);
    TD ce = lcmt::cross_entropy<double>(nullptr, logits, target);
    CHECK(lp == Approx(-static_cast<double>(target.size()) * ce.item()).margin(1e-9));
  }

  CHECK_THROWS_AS(lcmt::sequence_logprob<double>(params, enc, {5, 8}, Vocab::kBos, Vocab::kEos),
                  lcmt::IndexError);
}

TEST_CASE("joint loss gradient check on a 2-sentence micro-batch") {
  ModelConfig cfg = tiny_config(true);
  MP params(cfg, 2024);
  auto named = params.named_parameters();

  std::vector<EncodedExample> batch(2);
  batch[0].src_ids = {4, 5, 6};
  batch[0].tgt_ids = {7, 8, Vocab::kEos};
  batch[0].constraints = {ConstraintPair{{5}, {8}, 0, Span{1, 2}}};
  batch[1].src_ids = {6, 7};
  batch[1].tgt_ids = {5, Vocab::kEos};
  batch[1].constraints = {};

  const double sqrt_d = std::sqrt(static_cast<double>(cfg.d_model));
  auto loss_fn = [&](Tape<double>& t) -> TD {
    std::vector<ConstraintPair> pairs = batch[0].constraints;
    auto mem = lcmt::build_memory(&t, pairs, lcmt::scale(&t, params.src_emb, sqrt_d),
                                  lcmt::scale(&t, params.tgt_emb, sqrt_d),
                                  lcmt::scale(&t, params.mem->k_none, sqrt_d),
                                  lcmt::scale(&t, params.mem->v_none, sqrt_d));
    TD loss_sum;
    std::vector<TD> probs_rows;
    long total_tokens = 0;
    for (const auto& ex : batch) {
      auto enc = lcmt::encode_with_memory(&t, params, ex.src_ids, mem);
      probs_rows.push_back(enc.memory_probs);
      std::vector<int> input{Vocab::kBos};
      input.insert(input.end(), ex.tgt_ids.begin(), ex.tgt_ids.end() - 1);
      TD logits = lcmt::decoder_forward(&t, params, enc, input);
      TD weighted = lcmt::scale(&t, lcmt::cross_entropy(&t, logits, ex.tgt_ids),
                                static_cast<double>(ex.tgt_ids.size()));
      loss_sum = loss_sum.defined() ? lcmt::add(&t, loss_sum, weighted) : weighted;
      total_tokens += static_cast<long>(ex.tgt_ids.size());
    }
    TD main = lcmt::scale(&t, loss_sum, 1.0 / static_cast<double>(total_tokens));
    TD all_probs = lcmt::concat_rows(&t, probs_rows);
    auto labels = lcmt::make_attention_labels({3, 2}, pairs, mem.slots());
    TD att = lcmt::attention_loss(&t, all_probs, labels);
    return lcmt::add(&t, main, att);
  };

  auto rep = lcmt::grad_check_report<double>(loss_fn, named, 1e-5);
  INFO("worst param: " << rep.worst_param << "[" << rep.worst_index << "]");
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("train_step with lambda 0 equals a main-loss-only step bitwise") {
  ModelConfig cfg = tiny_config(true);
  cfg.lambda_att = 0.0;

  std::vector<EncodedExample> batch(2);
  batch[0].src_ids = {4, 5, 6};
  batch[0].tgt_ids = {7, 8, Vocab::kEos};
  batch[0].constraints = {ConstraintPair{{5}, {8}, 0, Span{1, 2}}};
  batch[1].src_ids = {6, 7};
  batch[1].tgt_ids = {5, Vocab::kEos};

  lcmt::TrainHyper hyper;
  hyper.lr = 1e-2;

  MP via_step(cfg, 404);
  {
    auto named = via_step.named_parameters();
    lcmt::AdamOptimizer<double> opt(named, hyper);
    Rng drop_rng(1);
    auto res = lcmt::train_step(via_step, batch, opt, hyper, drop_rng);
    CHECK(res.att_loss > 0.0);  // reported, but not part of the update
  }

  MP manual(cfg, 404);
  {
    auto named = manual.named_parameters();
    lcmt::AdamOptimizer<double> opt(named, hyper);
    Tape<double> tape;
    std::vector<ConstraintPair> pairs = batch[0].constraints;
    for (auto& p : pairs) p.origin = 0;
    const double sqrt_d = std::sqrt(static_cast<double>(cfg.d_model));
    auto mem = lcmt::build_memory(&tape, pairs, lcmt::scale(&tape, manual.src_emb, sqrt_d),
                                  lcmt::scale(&tape, manual.tgt_emb, sqrt_d),
                                  lcmt::scale(&tape, manual.mem->k_none, sqrt_d),
                                  lcmt::scale(&tape, manual.mem->v_none, sqrt_d));
    TD loss_sum;
    long total_tokens = 0;
    for (const auto& ex : batch) {
      auto enc = lcmt::encode_with_memory(&tape, manual, ex.src_ids, mem);
      std::vector<int> input{Vocab::kBos};
      input.insert(input.end(), ex.tgt_ids.begin(), ex.tgt_ids.end() - 1);
      TD logits = lcmt::decoder_forward(&tape, manual, enc, input);
      TD weighted = lcmt::scale(&tape, lcmt::cross_entropy(&tape, logits, ex.tgt_ids),
                                static_cast<double>(ex.tgt_ids.size()));
      loss_sum = loss_sum.defined() ? lcmt::add(&tape, loss_sum, weighted) : weighted;
      total_tokens += static_cast<long>(ex.tgt_ids.size());
    }
    TD main = lcmt::scale(&tape, loss_sum, 1.0 / static_cast<double>(total_tokens));
    lcmt::zero_grad(named);
    tape.backward(main);
    lcmt::clip_grad_norm(named, hyper.clip_norm);
    opt.step(named);
  }

  auto n1 = via_step.named_parameters();
  auto n2 = manual.named_parameters();
  for (size_t i = 0; i < n1.size(); ++i)
    for (size_t e = 0; e < n1[i].second->size(); ++e)
      REQUIRE(n1[i].second->data()[e] == n2[i].second->data()[e]);
}

TEST_CASE("per-sentence losses are batch-order invariant") {
  ModelConfig cfg = tiny_config(true);
  MP params(cfg, 17);

  std::vector<EncodedExample> batch(2);
  batch[0].src_ids = {4, 5, 6};
  batch[0].tgt_ids = {7, 8, Vocab::kEos};
  batch[0].constraints = {ConstraintPair{{5}, {8}, 0, Span{1, 2}}};
  batch[1].src_ids = {6, 7};
  batch[1].tgt_ids = {5, Vocab::kEos};
  batch[1].constraints = {ConstraintPair{{7}, {5}, 0, Span{1, 2}}};

  auto sentence_loss = [&](const std::vector<ConstraintPair>& pairs, const EncodedExample& ex) {
    auto mem = lcmt::build_memory<double>(nullptr, pairs, params.src_emb, params.tgt_emb,
                                          params.mem->k_none, params.mem->v_none);
    auto enc = lcmt::encode_with_memory<double>(nullptr, params, ex.src_ids, mem);
    std::vector<int> input{Vocab::kBos};
    input.insert(input.end(), ex.tgt_ids.begin(), ex.tgt_ids.end() - 1);
    TD logits = lcmt::decoder_forward<double>(nullptr, params, enc, input);
    return lcmt::cross_entropy<double>(nullptr, logits, ex.tgt_ids).item();
  };

  // memory built in both batch orders; per-sentence losses must match
  std::vector<ConstraintPair> fwd = {batch[0].constraints[0], batch[1].constraints[0]};
  fwd[0].origin = 0;
  fwd[1].origin = 1;
  std::vector<ConstraintPair> rev = {batch[1].constraints[0], batch[0].constraints[0]};
  rev[0].origin = 0;
  rev[1].origin = 1;

  const double a0 = sentence_loss(fwd, batch[0]);
  const double a1 = sentence_loss(fwd, batch[1]);
  const double b0 = sentence_loss(rev, batch[0]);
  const double b1 = sentence_loss(rev, batch[1]);
  CHECK(a0 == Approx(b0).margin(1e-12));
  CHECK(a1 == Approx(b1).margin(1e-12));
}

TEST_CASE("overfitting a single repeated pair drives the loss under 0.01") {
  ModelConfig cfg;
  cfg.vocab_size_src = 10;
  cfg.vocab_size_tgt = 10;
  cfg.d_model = 16;
  cfg.n_blocks = 1;
  cfg.n_heads = 2;
  cfg.ffn_width = 32;
  cfg.max_len = 8;
  cfg.memory_block_index.reset();
  MP params(cfg, 3);

  EncodedExample ex;
  ex.src_ids = {4, 7, 5};
  ex.tgt_ids = {6, 9, 8, Vocab::kEos};
  lcmt::TrainHyper hyper;
  hyper.lr = 3e-3;
  hyper.warmup_steps = 20;
  auto log = lcmt::run_training(params, {ex}, 200, 1, hyper, 11);
  REQUIRE(log.size() == 200);
  CHECK(log.back().main_loss < 0.01);

  // the loss log decreases in smoothed form
  auto smooth = [&](size_t lo, size_t hi) {
    double acc = 0;
    for (size_t i = lo; i < hi; ++i) acc += log[i].main_loss;
    return acc / static_cast<double>(hi - lo);
  };
  CHECK(smooth(150, 200) < smooth(0, 50));

  // greedy argmax chain reproduces the memorized target
  auto enc = lcmt::encode<double>(nullptr, params, ex.src_ids);
  std::vector<int> prefix{Vocab::kBos};
  std::vector<int> produced;
  for (int step = 0; step < 6; ++step) {
    auto row = lcmt::decode_step<double>(params, enc, prefix, Vocab::kBos);
    int best = 0;
    for (size_t t = 1; t < row.size(); ++t)
      if (row[t] > row[static_cast<size_t>(best)]) best = static_cast<int>(t);
    produced.push_back(best);
    prefix.push_back(best);
    if (best == Vocab::kEos) break;
  }
  CHECK(produced == ex.tgt_ids);
}

TEST_CASE("training is bitwise reproducible for a fixed seed") {
  ModelConfig cfg = tiny_config(true);
  std::vector<EncodedExample> data(3);
  data[0].src_ids = {4, 5};
  data[0].tgt_ids = {6, Vocab::kEos};
  data[0].constraints = {ConstraintPair{{4}, {6}, 0, Span{0, 1}}};
  data[1].src_ids = {7, 8, 6};
  data[1].tgt_ids = {5, 4, Vocab::kEos};
  data[2].src_ids = {5};
  data[2].tgt_ids = {7, Vocab::kEos};

  lcmt::TrainHyper hyper;
  auto run = [&]() {
    MP params(cfg, 500);
    auto log = lcmt::run_training(params, data, 12, 2, hyper, 600);
    return std::make_pair(std::move(params), std::move(log));
  };
  auto [p1, l1] = run();
  auto [p2, l2] = run();
  auto n1 = p1.named_parameters();
  auto n2 = p2.named_parameters();
  for (size_t i = 0; i < n1.size(); ++i)
    for (size_t e = 0; e < n1[i].second->size(); ++e)
      REQUIRE(n1[i].second->data()[e] == n2[i].second->data()[e]);
  for (size_t i = 0; i < l1.size(); ++i) REQUIRE(l1[i].total_loss == l2[i].total_loss);
}
