#pragma once

#include <nlohmann/json.hpp>

#include <map>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "logicsolver/error.hpp"
#include "logicsolver/nn/optim.hpp"
#include "logicsolver/nn/tensor.hpp"
#include "logicsolver/rng.hpp"

namespace logicsolver::nn {

/// Word vocabulary with four reserved entries. Slot tokens (N0, N1, ...) all
/// map to [NUM]; unseen words map to [UNK].
class Vocabulary {
 public:
  static constexpr std::size_t kUnk = 0;
  static constexpr std::size_t kNum = 1;
  static constexpr std::size_t kSent = 2;
  static constexpr std::size_t kSep = 3;
  static constexpr std::string_view kSentToken = "[SENT]";
  static constexpr std::string_view kSepToken = "[SEP]";

  Vocabulary() : tokens_{"[UNK]", "[NUM]", "[SENT]", "[SEP]"} {
    for (std::size_t i = 0; i < tokens_.size(); ++i) index_[tokens_[i]] = i;
  }

  /// Sorted, so the same documents always give the same ids.
  static Vocabulary build(const std::vector<std::vector<std::string>>& docs) {
    std::set<std::string> words;
    for (const auto& d : docs) {
      for (const auto& w : d) {
        if (!is_slot(w)) words.insert(w);
      }
    }
    Vocabulary v;
    for (const auto& w : words) v.add(w);
    return v;
  }

  static bool is_slot(std::string_view w) {
    if (w.size() < 2 || w.front() != 'N') return false;
    for (char c : w.substr(1)) {
      if (c < '0' || c > '9') return false;
    }
    return true;
  }

  std::size_t id(std::string_view w) const {
    if (is_slot(w)) return kNum;
    auto it = index_.find(std::string(w));
    return it == index_.end() ? kUnk : it->second;
  }

  std::vector<std::size_t> ids(const std::vector<std::string>& words) const {
    std::vector<std::size_t> out;
    out.reserve(words.size());
    for (const auto& w : words) out.push_back(id(w));
    return out;
  }

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  nlohmann::json to_json() const { return tokens_; }
  static Vocabulary from_json(const nlohmann::json& j) {
    auto words = j.get<std::vector<std::string>>();
    Vocabulary v;
    if (words.size() < v.tokens_.size() ||
        !std::equal(v.tokens_.begin(), v.tokens_.end(), words.begin())) {
      throw Error(Errc::SchemaError, "vocabulary does not start with the reserved tokens");
    }
    for (std::size_t i = v.tokens_.size(); i < words.size(); ++i) v.add(words[i]);
    return v;
  }

 private:
  void add(const std::string& w) {
    if (index_.count(w)) return;
    index_[w] = tokens_.size();
    tokens_.push_back(w);
  }

  std::vector<std::string> tokens_;
  std::map<std::string, std::size_t> index_;
};

/// GRU gate arithmetic fused into one op. Inputs: input projection xp [3d],
/// hidden projection hp [3d] (both ordered reset, update, candidate) and the
/// previous state h [d].
inline Tensor gru_gates(const Tensor& xp, const Tensor& hp, const Tensor& h) {
  const std::size_t d = h.size();
  detail::require(xp.rank() == 1 && hp.rank() == 1 && xp.size() == 3 * d && hp.size() == 3 * d,
                  "gru_gates expects [3d], [3d], [d]");
  std::vector<double> r(d), z(d), n(d), out(d);
  for (std::size_t i = 0; i < d; ++i) {
    const double ar = xp[i] + hp[i];
    const double az = xp[d + i] + hp[d + i];
    r[i] = 1.0 / (1.0 + std::exp(-ar));
    z[i] = 1.0 / (1.0 + std::exp(-az));
    n[i] = std::tanh(xp[2 * d + i] + r[i] * hp[2 * d + i]);
    out[i] = (1.0 - z[i]) * n[i] + z[i] * h[i];
  }
  return detail::make_result(
      {d}, std::move(out), {&xp, &hp, &h},
      [d, r = std::move(r), z = std::move(z), n = std::move(n)](detail::Node& self) {
        detail::Node& nx = *self.parents[0];
        detail::Node& nh = *self.parents[1];
        detail::Node& nprev = *self.parents[2];
        std::vector<double> dxp(3 * d), dhp(3 * d), dh(d);
        for (std::size_t i = 0; i < d; ++i) {
          const double g = self.grad[i];
          const double dn = g * (1.0 - z[i]);
          const double dz = g * (nprev.value[i] - n[i]);
          dh[i] = g * z[i];
          const double dan = dn * (1.0 - n[i] * n[i]);
          const double hn = nh.value[2 * d + i];
          const double dr = dan * hn;
          const double daz = dz * z[i] * (1.0 - z[i]);
          const double dar = dr * r[i] * (1.0 - r[i]);
          dxp[i] = dar;
          dxp[d + i] = daz;
          dxp[2 * d + i] = dan;
          dhp[i] = dar;
          dhp[d + i] = daz;
          dhp[2 * d + i] = dan * r[i];
        }
        detail::accumulate(nx, dxp);
        detail::accumulate(nh, dhp);
        detail::accumulate(nprev, dh);
      });
}

struct GruParams {
  Tensor w_ih;  // [3d x d_in]
  Tensor w_hh;  // [3d x d]
  Tensor b_ih;  // [3d]
  Tensor b_hh;  // [3d]

  static GruParams create(ParamStore& store, const std::string& prefix, std::size_t input, std::size_t hidden,
                          Rng& rng) {
    GruParams g;
    g.w_ih = store.add_uniform(prefix + ".w_ih", {3 * hidden, input}, rng);
    g.w_hh = store.add_uniform(prefix + ".w_hh", {3 * hidden, hidden}, rng);
    g.b_ih = store.add_zeros(prefix + ".b_ih", {3 * hidden});
    g.b_hh = store.add_zeros(prefix + ".b_hh", {3 * hidden});
    return g;
  }

  /// States for every position, in input order (reversed scan when `reverse`).
  Tensor run(const Tensor& inputs, bool reverse) const {
    const std::size_t n = inputs.dim(0);
    const std::size_t d = w_hh.dim(1);
    Tensor xproj = add(matmul_nt(inputs, w_ih), b_ih);
    Tensor h = Tensor::zeros({d});
    std::vector<Tensor> states(n);
    for (std::size_t step = 0; step < n; ++step) {
      const std::size_t t = reverse ? n - 1 - step : step;
      Tensor hp = add(matmul(w_hh, h), b_hh);
      h = gru_gates(row(xproj, t), hp, h);
      states[t] = h;
    }
    return stack_rows(states);
  }
};

/// Embedding table plus a bidirectional GRU; token states are the sum of the
/// two directions, with dropout applied to the result during training.
class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(ParamStore& store, const std::string& prefix, std::size_t vocab, std::size_t hidden, double dropout,
              Rng& rng)
      : dropout_(dropout) {
    embedding_ = store.add_uniform(prefix + ".embedding", {vocab, hidden}, rng);
    forward_ = GruParams::create(store, prefix + ".gru_fwd", hidden, hidden, rng);
    backward_ = GruParams::create(store, prefix + ".gru_bwd", hidden, hidden, rng);
  }

  /// [n x hidden]. `rng` is only consulted when training with dropout.
  Tensor encode(const std::vector<std::size_t>& ids, bool train, Rng* rng) const {
    if (ids.empty()) throw Error(Errc::EmptyInput, "cannot encode an empty token sequence");
    Tensor x = embedding_lookup(embedding_, ids);
    Tensor states = add(forward_.run(x, false), backward_.run(x, true));
    if (train && dropout_ > 0.0 && rng) states = dropout(states, dropout_, *rng, true);
    return states;
  }

  std::size_t hidden() const { return embedding_.dim(1); }
  const Tensor& embedding() const { return embedding_; }

 private:
  Tensor embedding_;
  GruParams forward_;
  GruParams backward_;
  double dropout_ = 0.0;
};

/// s_j = v^T tanh(W [a; b_j]) for each row b_j of B.
class PairScorer {
 public:
  PairScorer() = default;
  PairScorer(ParamStore& store, const std::string& prefix, std::size_t a_dim, std::size_t b_dim,
             std::size_t hidden, Rng& rng)
      : a_dim_(a_dim) {
    w_ = store.add_uniform(prefix + ".W", {hidden, a_dim + b_dim}, rng);
    v_ = store.add_uniform(prefix + ".v", {hidden}, rng);
  }

  /// Projections of B that do not depend on `a`; reuse across many queries.
  struct Prepared {
    Tensor rows;       // B
    Tensor projected;  // B W_b^T
    Tensor w_a;        // W[:, :a_dim]
  };

  Prepared prepare(const Tensor& rows) const {
    Prepared p;
    p.rows = rows;
    p.projected = matmul_nt(rows, slice_cols(w_, a_dim_, w_.dim(1)));
    p.w_a = slice_cols(w_, 0, a_dim_);
    return p;
  }

  Tensor scores(const Tensor& a, const Prepared& p) const {
    detail::require(a.rank() == 1 && a.size() == a_dim_, "scorer query has the wrong size");
    return matmul(tanh(add(p.projected, matmul(p.w_a, a))), v_);
  }

  Tensor scores(const Tensor& a, const Tensor& rows) const { return scores(a, prepare(rows)); }

  const Tensor& W() const { return w_; }
  const Tensor& v() const { return v_; }

 private:
  Tensor w_;
  Tensor v_;
  std::size_t a_dim_ = 0;
};

/// Additive attention: weights = softmax(v^T tanh(W [query; key_i])),
/// context = sum_i weights_i key_i.
class AdditiveAttention {
 public:
  AdditiveAttention() = default;
  AdditiveAttention(ParamStore& store, const std::string& prefix, std::size_t query_dim, std::size_t key_dim,
                    std::size_t hidden, Rng& rng)
      : scorer_(store, prefix, query_dim, key_dim, hidden, rng) {}

  using Prepared = PairScorer::Prepared;

  Prepared prepare(const Tensor& keys) const { return scorer_.prepare(keys); }

  std::pair<Tensor, Tensor> attend(const Tensor& query, const Prepared& keys) const {
    Tensor weights = softmax(scorer_.scores(query, keys));
    return {matmul(weights, keys.rows), weights};
  }

  std::pair<Tensor, Tensor> attend(const Tensor& query, const Tensor& keys) const {
    return attend(query, prepare(keys));
  }

  const PairScorer& scorer() const { return scorer_; }

 private:
  PairScorer scorer_;
};

}  // namespace logicsolver::nn
