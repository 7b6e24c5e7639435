#include "alure/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "alure/json_config.hpp"
#include "alure/parallel.hpp"

namespace alure {

using nlohmann::json;
using config_json::check_keys;
using config_json::read_key;

namespace {

json cfee_to_json(const CfeeConfig& c) {
  return json{{"d_model", c.d_model},
              {"n_heads", c.n_heads},
              {"decay_tau", c.decay_tau},
              {"n_time_buckets", c.n_time_buckets},
              {"bucket_base_delta", c.bucket_base_delta},
              {"relpos_window", c.relpos_window},
              {"cyclic_periods", c.cyclic_periods}};
}

CfeeConfig cfee_from_json(const json& j) {
  const std::string where = "model.cfee";
  check_keys(j, {"d_model", "n_heads", "decay_tau", "n_time_buckets", "bucket_base_delta",
                 "relpos_window", "cyclic_periods"},
             where);
  CfeeConfig c;
  read_key(j, "d_model", c.d_model, where);
  read_key(j, "n_heads", c.n_heads, where);
  read_key(j, "decay_tau", c.decay_tau, where);
  read_key(j, "n_time_buckets", c.n_time_buckets, where);
  read_key(j, "bucket_base_delta", c.bucket_base_delta, where);
  read_key(j, "relpos_window", c.relpos_window, where);
  read_key(j, "cyclic_periods", c.cyclic_periods, where);
  return c;
}

int pair_count(int T) { return T * (T + 1) / 2; }

std::vector<nn::BiasLookup> self_biases(const CfeeParams& p, CfeeParams* g, const SequenceCache& c) {
  return {nn::BiasLookup{&p.relpos_table, g ? &g->relpos_table : nullptr, c.relpos_slots},
          nn::BiasLookup{&p.time_bias_table, g ? &g->time_bias_table : nullptr, c.time_slots}};
}

Eigen::MatrixXi cross_time_slots(const CfeeConfig& cfg, Eigen::Index n_queries,
                                 std::span<const Timestamp> timestamps) {
  const Timestamp t_ref = *std::max_element(timestamps.begin(), timestamps.end());
  Eigen::MatrixXi slots(n_queries, static_cast<Eigen::Index>(timestamps.size()));
  for (Eigen::Index j = 0; j < slots.cols(); ++j) {
    const int b = time_delta_bucket(t_ref, timestamps[j], cfg.n_time_buckets, cfg.bucket_base_delta);
    slots.col(j).setConstant(b + cfg.n_time_buckets);
  }
  return slots;
}

Eigen::Map<const Mat> as_row(const Mat& m) { return {m.data(), 1, m.size()}; }

}  // namespace

std::string_view to_string(CompressionVariant v) {
  return v == CompressionVariant::skip_dot ? "skip_dot" : "interaction";
}

CompressionVariant parse_compression_variant(std::string_view name) {
  if (name == "skip_dot") return CompressionVariant::skip_dot;
  if (name == "interaction") return CompressionVariant::interaction;
  throw ConfigError("unknown compression variant: " + std::string(name));
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("model." + field + ": " + why);
  };
  if (K < 1) fail("K", "must be >= 1");
  if (n_layers < 1) fail("n_layers", "must be >= 1");
  if (d_model < 2) fail("d_model", "must be >= 2");
  if (n_heads < 1 || d_model % n_heads != 0) fail("n_heads", "must divide d_model");
  if ((d_model / n_heads) % 2 != 0) fail("n_heads", "head width must be even for rotation pairs");
  if (ffn_mult < 1) fail("ffn_mult", "must be >= 1");
  if (cfee.d_model != d_model) fail("cfee.d_model", "must equal model.d_model");
  if (cfee.n_heads != n_heads) fail("cfee.n_heads", "must equal model.n_heads");
  cfee.validate();
  if (tap_layers.empty()) fail("tap_layers", "must name at least one layer");
  for (int t : tap_layers) {
    if (t < 1 || t > n_layers) fail("tap_layers", "entries must lie in [1, n_layers]");
  }
  if (M < 1) fail("M", "must be >= 1");
  if (static_cast<int>(vocab_sizes.size()) != K) fail("vocab_sizes", "must have K entries");
  for (auto v : vocab_sizes) {
    if (v < 1) fail("vocab_sizes", "entries must be >= 1");
  }
  if (!(learning_rate > 0.0)) fail("learning_rate", "must be > 0");
  if (batch_size < 2) fail("batch_size", "must be >= 2 (in-batch negatives)");
  if (!(temperature > 0.0)) fail("temperature", "must be > 0");
}

json ModelConfig::to_json() const {
  return json{{"K", K},
              {"n_layers", n_layers},
              {"d_model", d_model},
              {"n_heads", n_heads},
              {"ffn_mult", ffn_mult},
              {"cfee", cfee_to_json(cfee)},
              {"tap_layers", tap_layers},
              {"M", M},
              {"compression_variant", std::string(alure::to_string(compression_variant))},
              {"vocab_sizes", vocab_sizes},
              {"n_accounts", n_accounts},
              {"learning_rate", learning_rate},
              {"batch_size", batch_size},
              {"temperature", temperature},
              {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  const std::string where = "model";
  check_keys(j, {"K", "n_layers", "d_model", "n_heads", "ffn_mult", "cfee", "tap_layers", "M",
                 "compression_variant", "vocab_sizes", "n_accounts", "learning_rate",
                 "batch_size", "temperature", "seed"},
             where);
  ModelConfig c;
  read_key(j, "K", c.K, where);
  read_key(j, "n_layers", c.n_layers, where);
  read_key(j, "d_model", c.d_model, where);
  read_key(j, "n_heads", c.n_heads, where);
  read_key(j, "ffn_mult", c.ffn_mult, where);
  c.cfee.d_model = c.d_model;
  c.cfee.n_heads = c.n_heads;
  if (j.contains("cfee")) {
    json cj = j.at("cfee");
    if (cj.is_object()) {
      if (!cj.contains("d_model")) cj["d_model"] = c.d_model;
      if (!cj.contains("n_heads")) cj["n_heads"] = c.n_heads;
    }
    c.cfee = cfee_from_json(cj);
  }
  read_key(j, "tap_layers", c.tap_layers, where);
  read_key(j, "M", c.M, where);
  if (j.contains("compression_variant")) {
    c.compression_variant = parse_compression_variant(j.at("compression_variant").get<std::string>());
  }
  read_key(j, "vocab_sizes", c.vocab_sizes, where);
  read_key(j, "n_accounts", c.n_accounts, where);
  read_key(j, "learning_rate", c.learning_rate, where);
  read_key(j, "batch_size", c.batch_size, where);
  read_key(j, "temperature", c.temperature, where);
  read_key(j, "seed", c.seed, where);
  return c;
}

ModelConfig default_toy_config() {
  ModelConfig c;
  c.K = 2;
  c.n_layers = 2;
  c.d_model = 32;
  c.n_heads = 2;
  c.cfee.d_model = 32;
  c.cfee.n_heads = 2;
  c.tap_layers = {1, 2};
  c.vocab_sizes = {64, 64};
  c.n_accounts = 64;
  return c;
}

std::size_t FeatureParams::parameter_count() const {
  std::size_t n = 0;
  visit([&n](const std::string&, const auto& t) { n += static_cast<std::size_t>(t.size()); });
  return n;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  visit([&n](const std::string&, const auto& t) { n += static_cast<std::size_t>(t.size()); });
  return n;
}

ModelParams zero_params(const ModelConfig& cfg) {
  cfg.validate();
  const int d = cfg.d_model;
  const int f = cfg.ffn_mult * d;
  const int T = cfg.tapped_count();
  ModelParams p;
  auto& fp = p.feature;
  fp.sources.resize(cfg.K);
  for (int k = 0; k < cfg.K; ++k) {
    auto& s = fp.sources[k];
    s.token_embedding = Mat::Zero(cfg.vocab_sizes[k], d);
    s.cfee = CfeeParams::zeros(cfg.cfee);
    s.layers.resize(cfg.n_layers);
    for (auto& L : s.layers) {
      L.wq = L.wk = L.wv = L.wo = Mat::Zero(d, d);
      L.ln1_gain = L.ln1_bias = L.ln2_gain = L.ln2_bias = Mat::Zero(1, d);
      L.ffn_w1 = Mat::Zero(d, f);
      L.ffn_b1 = Mat::Zero(1, f);
      L.ffn_w2 = Mat::Zero(f, d);
      L.ffn_b2 = Mat::Zero(1, d);
    }
    s.cross_wq = s.cross_wk = s.cross_wv = s.cross_wo = Mat::Zero(d, d);
    s.empty_placeholder = Mat::Zero(1, d);
  }
  fp.cross_queries = Mat::Zero(cfg.M, d);
  auto& c = fp.compression;
  if (cfg.compression_variant == CompressionVariant::skip_dot) {
    c.linear_w = Mat::Zero(T * d, cfg.M * d);
    c.linear_b = Mat::Zero(1, cfg.M * d);
    c.dot_w = Mat::Zero(pair_count(T), cfg.M * d);
    c.dot_b = Mat::Zero(1, cfg.M * d);
  } else {
    c.queries = Mat::Zero(cfg.M, d);
    c.wq = c.wk = c.wv = c.wo = Mat::Zero(d, d);
  }
  p.account_embedding = Mat::Zero(cfg.n_accounts, d);
  return p;
}

ModelParams init_params(const ModelConfig& cfg) {
  ModelParams p = zero_params(cfg);
  Rng rng(mix_seed(cfg.seed, 0x1417));
  const double d = cfg.d_model;
  const double T = cfg.tapped_count();
  auto fill = [&rng](auto& t, double stddev) {
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = stddev * rng.normal();
  };
  p.visit([&](const std::string& name, auto& t) {
    auto ends = [&name](std::string_view s) { return name.ends_with(s); };
    if (ends("_gain")) {
      t.setOnes();
    } else if (ends("_bias") || ends("ffn_b1") || ends("ffn_b2") || ends("linear_b") ||
               ends("dot_b")) {
      t.setZero();
    } else if (ends("relpos_table") || ends("time_bias_table")) {
      fill(t, 0.02);
    } else if (ends("decay_weight") || ends("empty_placeholder")) {
      fill(t, 0.1);
    } else if (ends("token_embedding") || ends("queries") || name == "account_embedding") {
      fill(t, 1.0);
    } else if (ends("ffn_w2")) {
      fill(t, 1.0 / std::sqrt(cfg.ffn_mult * d));
    } else if (ends("linear_w")) {
      fill(t, 1.0 / std::sqrt(T * d));
    } else if (ends("dot_w")) {
      fill(t, 0.01 / std::sqrt(static_cast<double>(t.rows())));
    } else {
      fill(t, 1.0 / std::sqrt(d));
    }
  });
  return p;
}

EncoderInput prepare_input(const UserHistory& history, int K, Timestamp cutoff) {
  EncoderInput in;
  in.sources.resize(K);
  for (const auto& seq : history.sequences) {
    if (seq.source_id >= static_cast<std::uint32_t>(K)) continue;
    auto& out = in.sources[seq.source_id];
    for (const auto& ev : seq.events) {
      if (ev.timestamp >= cutoff) continue;
      for (auto code : ev.token_codes) {
        out.tokens.push_back(code);
        out.timestamps.push_back(ev.timestamp);
      }
    }
  }
  return in;
}

std::vector<Mat> encode_sequence_all_layers(const SourceParams& params, const ModelConfig& cfg,
                                            std::span<const std::uint32_t> tokens,
                                            std::span<const Timestamp> timestamps,
                                            SequenceCache* cache) {
  if (tokens.empty()) throw Error("encode_sequence: empty sequence");
  if (tokens.size() != timestamps.size()) {
    throw Error("encode_sequence: tokens and timestamps differ in length");
  }
  const auto L = static_cast<Eigen::Index>(tokens.size());
  const int d = cfg.d_model;
  const auto& cc = cfg.cfee;
  const Timestamp t_ref = *std::max_element(timestamps.begin(), timestamps.end());

  SequenceCache local;
  SequenceCache& c = cache ? *cache : local;
  c.tokens.assign(tokens.begin(), tokens.end());
  c.timestamps.assign(timestamps.begin(), timestamps.end());
  c.decay_features.resize(L);
  c.relpos_slots.resize(L, L);
  c.time_slots.resize(L, L);
  c.layers.assign(cfg.n_layers, {});

  Mat x(L, d);
  for (Eigen::Index i = 0; i < L; ++i) {
    if (tokens[i] >= params.token_embedding.rows()) {
      throw Error("encode_sequence: token " + std::to_string(tokens[i]) + " outside vocabulary");
    }
    c.decay_features[i] = temporal_decay_feature(t_ref, timestamps[i], cc.decay_tau);
    x.row(i) = params.token_embedding.row(tokens[i]) + absolute_position_encoding(i, d) +
               temporal_decay_encoding(params.cfee, c.decay_features[i]);
    for (Eigen::Index j = 0; j < L; ++j) {
      c.relpos_slots(i, j) = relative_position_slot(i, j, cc.relpos_window);
      c.time_slots(i, j) = time_delta_bucket(timestamps[i], timestamps[j], cc.n_time_buckets,
                                             cc.bucket_base_delta) +
                           cc.n_time_buckets;
    }
  }

  const auto biases = self_biases(params.cfee, nullptr, c);
  const nn::Rotation rot{timestamps, timestamps, cc.cyclic_periods};
  std::vector<Mat> outputs;
  outputs.reserve(cfg.n_layers);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& P = params.layers[l];
    auto& lc = c.layers[l];
    const bool keep = cache != nullptr;
    const Mat a = nn::layer_norm_forward(x, P.ln1_gain, P.ln1_bias, keep ? &lc.ln1 : nullptr);
    const Mat att = nn::attention_forward(a, a, {P.wq, P.wk, P.wv, P.wo}, cfg.n_heads, &rot, biases,
                                          keep ? &lc.attn : nullptr);
    Mat y1 = x + att;
    Mat f = nn::layer_norm_forward(y1, P.ln2_gain, P.ln2_bias, keep ? &lc.ln2 : nullptr);
    Mat pre = f * P.ffn_w1;
    pre.rowwise() += P.ffn_b1.row(0);
    Mat act = nn::gelu_forward(pre);
    Mat y = y1 + act * P.ffn_w2;
    y.rowwise() += P.ffn_b2.row(0);
    if (keep) {
      lc.x_in = x;
      lc.y1 = std::move(y1);
      lc.ffn_in = std::move(f);
      lc.ffn_pre = std::move(pre);
      lc.ffn_act = std::move(act);
    }
    outputs.push_back(y);
    x = std::move(y);
  }
  return outputs;
}

std::vector<Mat> encode_sequence(const SourceParams& params, const ModelConfig& cfg, int source_id,
                                 std::span<const std::uint32_t> tokens,
                                 std::span<const Timestamp> timestamps) {
  if (source_id < 0 || source_id >= cfg.K) throw Error("encode_sequence: bad source id");
  for (auto t : tokens) {
    if (t >= cfg.vocab_sizes[source_id]) {
      throw Error("encode_sequence: token " + std::to_string(t) + " outside vocabulary");
    }
  }
  auto all = encode_sequence_all_layers(params, cfg, tokens, timestamps);
  std::vector<Mat> taps;
  for (int t : cfg.tap_layers) taps.push_back(all[t - 1]);
  return taps;
}

namespace {

// Gradient of one source's stack given d(output) of every layer (empty = 0).
void backward_sequence(const SourceParams& params, const ModelConfig& cfg, const SequenceCache& c,
                       const std::vector<Mat>& d_layer_out, SourceParams& g) {
  const auto L = static_cast<Eigen::Index>(c.tokens.size());
  const int d = cfg.d_model;
  const auto biases_grad = self_biases(params.cfee, &g.cfee, c);
  const nn::Rotation rot{c.timestamps, c.timestamps, cfg.cfee.cyclic_periods};
  Mat dx = Mat::Zero(L, d);
  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const auto& P = params.layers[l];
    auto& G = g.layers[l];
    const auto& lc = c.layers[l];
    Mat dy = dx;
    if (d_layer_out[l].size() > 0) dy += d_layer_out[l];

    G.ffn_w2.noalias() += lc.ffn_act.transpose() * dy;
    G.ffn_b2 += dy.colwise().sum();
    const Mat dact = dy * P.ffn_w2.transpose();
    const Mat dpre = nn::gelu_backward(dact, lc.ffn_pre);
    G.ffn_w1.noalias() += lc.ffn_in.transpose() * dpre;
    G.ffn_b1 += dpre.colwise().sum();
    const Mat df = dpre * P.ffn_w1.transpose();
    Mat dy1 = dy + nn::layer_norm_backward(df, lc.ln2, P.ln2_gain, G.ln2_gain, G.ln2_bias);

    nn::AttentionGrads ag{G.wq, G.wk, G.wv, G.wo};
    Mat daq, dakv;
    nn::attention_backward(dy1, lc.attn, {P.wq, P.wk, P.wv, P.wo}, ag, cfg.n_heads, &rot,
                           biases_grad, daq, dakv);
    const Mat da = daq + dakv;
    dx = dy1 + nn::layer_norm_backward(da, lc.ln1, P.ln1_gain, G.ln1_gain, G.ln1_bias);
  }
  for (Eigen::Index i = 0; i < L; ++i) {
    g.token_embedding.row(c.tokens[i]) += dx.row(i);
    g.cfee.decay_weight += c.decay_features[i] * dx.row(i);
    g.cfee.decay_bias += dx.row(i);
  }
}

Mat cross_attend_impl(const SourceParams& params, const ModelConfig& cfg, const Mat& hidden,
                      const Mat& queries, std::span<const Timestamp> timestamps,
                      nn::AttentionCache* cache) {
  const nn::BiasLookup bias{&params.cfee.time_bias_table, nullptr,
                            cross_time_slots(cfg.cfee, queries.rows(), timestamps)};
  return nn::attention_forward(queries, hidden,
                               {params.cross_wq, params.cross_wk, params.cross_wv, params.cross_wo},
                               cfg.n_heads, nullptr, std::span(&bias, 1), cache);
}

}  // namespace

Mat cross_attend(const SourceParams& params, const ModelConfig& cfg, const Mat& hidden,
                 const Mat& queries, std::span<const Timestamp> timestamps,
                 nn::AttentionCache* cache) {
  if (queries.rows() < 1) throw Error("cross_attend: need at least one query");
  if (hidden.rows() != static_cast<Eigen::Index>(timestamps.size())) {
    throw Error("cross_attend: hidden rows and timestamps differ");
  }
  return cross_attend_impl(params, cfg, hidden, queries, timestamps, cache);
}

Mat compress(const CompressionParams& params, const ModelConfig& cfg, std::span<const Mat> tapped,
             CompressionCache* cache) {
  if (tapped.empty()) throw Error("compress: no tapped matrices");
  const int d = cfg.d_model;
  const auto T = static_cast<Eigen::Index>(tapped.size());
  if (cfg.compression_variant == CompressionVariant::skip_dot) {
    Mat pooled(T, d);
    for (Eigen::Index t = 0; t < T; ++t) pooled.row(t) = tapped[t].colwise().mean();
    Mat dots(1, pair_count(static_cast<int>(T)));
    Eigen::Index idx = 0;
    for (Eigen::Index i = 0; i < T; ++i) {
      for (Eigen::Index j = i; j < T; ++j) dots(0, idx++) = pooled.row(i).dot(pooled.row(j));
    }
    Mat flat = as_row(pooled) * params.linear_w + params.linear_b;
    flat.noalias() += dots * params.dot_w;
    flat += params.dot_b;
    Mat out = Eigen::Map<const Mat>(flat.data(), cfg.M, d);
    if (cache) {
      cache->pooled = std::move(pooled);
      cache->pair_dots = std::move(dots);
    }
    return out;
  }
  Eigen::Index rows = 0;
  for (const auto& m : tapped) rows += m.rows();
  Mat stacked(rows, d);
  Eigen::Index r = 0;
  for (const auto& m : tapped) {
    stacked.middleRows(r, m.rows()) = m;
    r += m.rows();
  }
  Mat out = nn::attention_forward(params.queries, stacked,
                                  {params.wq, params.wk, params.wv, params.wo}, cfg.n_heads,
                                  nullptr, {}, cache ? &cache->attn : nullptr);
  if (cache) cache->stacked = std::move(stacked);
  return out;
}

namespace {

// Returns d(tapped[t]) for each tapped matrix.
std::vector<Mat> compress_backward(const CompressionParams& params, const ModelConfig& cfg,
                                   const std::vector<Mat>& tapped, const CompressionCache& cache,
                                   const Mat& d_out, CompressionParams& g) {
  const int d = cfg.d_model;
  const auto T = static_cast<Eigen::Index>(tapped.size());
  std::vector<Mat> d_tapped(T);
  if (cfg.compression_variant == CompressionVariant::skip_dot) {
    const Eigen::Map<const Mat> dflat(d_out.data(), 1, d_out.size());
    g.linear_w.noalias() += as_row(cache.pooled).transpose() * dflat;
    g.linear_b += dflat;
    g.dot_w.noalias() += cache.pair_dots.transpose() * dflat;
    g.dot_b += dflat;
    const Mat dh_flat = dflat * params.linear_w.transpose();
    Mat dpooled = Eigen::Map<const Mat>(dh_flat.data(), T, d);
    const Mat ddots = dflat * params.dot_w.transpose();
    Eigen::Index idx = 0;
    for (Eigen::Index i = 0; i < T; ++i) {
      for (Eigen::Index j = i; j < T; ++j) {
        const double gd = ddots(0, idx++);
        dpooled.row(i) += gd * cache.pooled.row(j);
        dpooled.row(j) += gd * cache.pooled.row(i);
      }
    }
    for (Eigen::Index t = 0; t < T; ++t) {
      const auto rows = tapped[t].rows();
      d_tapped[t] = (dpooled.row(t) / static_cast<double>(rows)).replicate(rows, 1);
    }
    return d_tapped;
  }
  nn::AttentionGrads ag{g.wq, g.wk, g.wv, g.wo};
  Mat dq, dstacked;
  nn::attention_backward(d_out, cache.attn, {params.wq, params.wk, params.wv, params.wo}, ag,
                         cfg.n_heads, nullptr, {}, dq, dstacked);
  g.queries += dq;
  Eigen::Index r = 0;
  for (Eigen::Index t = 0; t < T; ++t) {
    d_tapped[t] = dstacked.middleRows(r, tapped[t].rows());
    r += tapped[t].rows();
  }
  return d_tapped;
}

}  // namespace

Mat forward_input(const FeatureParams& params, const ModelConfig& cfg, const EncoderInput& input,
                  UserForwardCache* cache, std::span<const int> source_order) {
  if (static_cast<int>(input.sources.size()) != cfg.K) {
    throw Error("forward_user: expected " + std::to_string(cfg.K) + " sources");
  }
  const bool all_empty = std::all_of(input.sources.begin(), input.sources.end(),
                                     [](const SourceSequence& s) { return s.empty(); });
  if (all_empty) throw Error("forward_user: every source is empty");

  std::vector<int> order(source_order.begin(), source_order.end());
  if (order.empty()) {
    order.resize(cfg.K);
    std::iota(order.begin(), order.end(), 0);
  }
  const auto n_taps = static_cast<int>(cfg.tap_layers.size());
  std::vector<Mat> tapped(cfg.K * n_taps);
  if (cache) {
    cache->sequences.assign(cfg.K, {});
    cache->pooling.assign(cfg.K, std::vector<nn::AttentionCache>(n_taps));
  }
  for (int k : order) {
    const auto& src = input.sources.at(k);
    const auto& sp = params.sources[k];
    if (src.empty()) {
      for (int t = 0; t < n_taps; ++t) tapped[k * n_taps + t] = sp.empty_placeholder.replicate(cfg.M, 1);
      continue;
    }
    for (auto tok : src.tokens) {
      if (tok >= cfg.vocab_sizes[k]) {
        throw Error("forward_user: token " + std::to_string(tok) + " outside vocabulary of source " +
                    std::to_string(k));
      }
    }
    const auto hidden = encode_sequence_all_layers(sp, cfg, src.tokens, src.timestamps,
                                                   cache ? &cache->sequences[k] : nullptr);
    for (int t = 0; t < n_taps; ++t) {
      tapped[k * n_taps + t] =
          cross_attend_impl(sp, cfg, hidden[cfg.tap_layers[t] - 1], params.cross_queries,
                            src.timestamps, cache ? &cache->pooling[k][t] : nullptr);
    }
  }
  Mat out = compress(params.compression, cfg, tapped, cache ? &cache->compression : nullptr);
  if (cache) cache->tapped = std::move(tapped);
  return out;
}

void backward_user(const FeatureParams& params, const ModelConfig& cfg, const UserForwardCache& cache,
                   const Mat& d_embedding, FeatureParams& grads) {
  const auto n_taps = static_cast<int>(cfg.tap_layers.size());
  const auto d_tapped =
      compress_backward(params.compression, cfg, cache.tapped, cache.compression, d_embedding,
                        grads.compression);
  for (int k = 0; k < cfg.K; ++k) {
    const auto& sc = cache.sequences[k];
    auto& gs = grads.sources[k];
    if (sc.tokens.empty()) {
      for (int t = 0; t < n_taps; ++t) gs.empty_placeholder += d_tapped[k * n_taps + t].colwise().sum();
      continue;
    }
    const auto& sp = params.sources[k];
    std::vector<Mat> d_layer_out(cfg.n_layers);
    const nn::BiasLookup bias{&sp.cfee.time_bias_table, &gs.cfee.time_bias_table,
                              cross_time_slots(cfg.cfee, cfg.M, sc.timestamps)};
    for (int t = 0; t < n_taps; ++t) {
      nn::AttentionGrads ag{gs.cross_wq, gs.cross_wk, gs.cross_wv, gs.cross_wo};
      Mat dq, dh;
      nn::attention_backward(d_tapped[k * n_taps + t], cache.pooling[k][t],
                             {sp.cross_wq, sp.cross_wk, sp.cross_wv, sp.cross_wo}, ag, cfg.n_heads,
                             nullptr, std::span(&bias, 1), dq, dh);
      grads.cross_queries += dq;
      auto& slot = d_layer_out[cfg.tap_layers[t] - 1];
      if (slot.size() == 0) slot = dh;
      else slot += dh;
    }
    backward_sequence(sp, cfg, sc, d_layer_out, gs);
  }
}

UserEmbedding forward_user(const FeatureParams& params, const ModelConfig& cfg,
                           const UserHistory& history, std::uint64_t model_version) {
  UserEmbedding e;
  e.user_id = history.user_id;
  e.model_version = model_version;
  e.vectors = forward_input(params, cfg, prepare_input(history, cfg.K));
  return e;
}

std::vector<UserEmbedding> forward_batch(const FeatureParams& params, const ModelConfig& cfg,
                                         std::span<const UserHistory> histories,
                                         std::uint64_t model_version) {
  std::vector<UserEmbedding> out(histories.size());
  parallel_for(histories.size(), [&](std::size_t i) {
    out[i] = forward_user(params, cfg, histories[i], model_version);
  });
  return out;
}

}  // namespace alure
