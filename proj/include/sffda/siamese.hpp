// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sffda/network.hpp"
#include "sffda/optim.hpp"

namespace sffda {

struct LossWeights {
  double alpha = 0.5;
  double beta = 0.5;
};

inline constexpr double kComparableMargin = 0.5;
inline constexpr std::size_t kDefaultReferences = 5;

/// (cos + 1) / 2 as a [1] node; 0.5 when either vector has zero norm.
inline ad::Var similarity(const ad::Var& a, const ad::Var& b) {
  return ad::scale(ad::add_scalar(ad::cosine(a, b), 1.0), 0.5);
}

inline double similarity_value(const Tensor& a, const Tensor& b) {
  return similarity(ad::constant(a), ad::constant(b)).value()[0];
}

enum class PairKind { kSimilar, kComparable };

/// Similar pairs: sum_j |1 - sim_j|. Comparable pairs: sum_j max(0, sim_j - margin).
inline ad::Var loss1_pair(const std::vector<ad::Var>& sims, PairKind kind) {
  if (sims.empty()) throw ConfigError("loss1_pair: no similarities");
  std::vector<ad::Var> terms;
  for (const auto& s : sims) {
    terms.push_back(kind == PairKind::kSimilar ? ad::abs(ad::add_scalar(ad::scale(s, -1.0), 1.0))
                                               : ad::relu(ad::add_scalar(s, -kComparableMargin)));
  }
  return ad::sum(ad::concat(terms, 0));
}

/// Mean binary cross-entropy over the two pair members.
inline ad::Var loss2(const ad::Var& logit1, int y1, const ad::Var& logit2, int y2) {
  return ad::scale(ad::add(ad::bce_with_logit(logit1, y1), ad::bce_with_logit(logit2, y2)), 0.5);
}

/// Same as loss2 but from probabilities, clamped to [1e-12, 1-1e-12].
inline double loss2_value(double p1, int y1, double p2, int y2) {
  auto bce = [](double p, int y) {
    const double pc = std::clamp(p, ad::kProbClamp, 1.0 - ad::kProbClamp);
    return -(y * std::log(pc) + (1 - y) * std::log(1.0 - pc));
  };
  return 0.5 * (bce(p1, y1) + bce(p2, y2));
}

struct PairForward {
  ForwardResult first;
  ForwardResult second;
};

/// Both branches evaluate the same network object, so they share every parameter.
inline PairForward siamese_forward(const Network& net, const Features& a, const Features& b) {
  return {net.forward(a), net.forward(b)};
}

struct PairLoss {
  ad::Var total;
  ad::Var loss1;
  ad::Var loss2;
};

inline PairLoss pair_loss(const PairForward& f, int y1, int y2, PairKind kind, const LossWeights& w) {
  std::vector<ad::Var> sims;
  for (std::size_t j = 0; j < f.first.embeddings.size(); ++j) {
    sims.push_back(similarity(f.first.embeddings[j], f.second.embeddings[j]));
  }
  PairLoss out;
  out.loss1 = loss1_pair(sims, kind);
  out.loss2 = loss2(f.first.logit, y1, f.second.logit, y2);
  out.total = ad::add(ad::scale(out.loss1, w.alpha), ad::scale(out.loss2, w.beta));
  return out;
}

struct PairIndex {
  std::size_t first = 0;
  std::size_t second = 0;
  PairKind kind = PairKind::kSimilar;

  friend bool operator==(const PairIndex&, const PairIndex&) = default;
};

/// floor(count/2) similar pairs (two anxiety-free samples) and the rest
/// comparable (one of each label, in random order), shuffled together.
/// Sampling is with replacement and depends only on (seed, epoch).
inline std::vector<PairIndex> sample_pairs(const std::vector<int>& labels, std::size_t count,
                                           std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> neg, pos;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] == 1 ? pos : neg).push_back(i);
  if (neg.empty()) throw DataError("pair sampling needs anxiety-free training samples");
  if (pos.empty()) throw DataError("pair sampling needs anxiety training samples");
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
  std::mt19937_64 rng(seq);
  auto pick = [&rng](const std::vector<std::size_t>& pool) {
    return pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
  };
  std::vector<PairIndex> pairs;
  pairs.reserve(count);
  const std::size_t similar = count / 2;
  for (std::size_t k = 0; k < similar; ++k) {
    const std::size_t a = pick(neg);
    std::size_t b = pick(neg);
    if (neg.size() > 1) {
      while (b == a) b = pick(neg);
    }
    pairs.push_back({a, b, PairKind::kSimilar});
  }
  for (std::size_t k = similar; k < count; ++k) {
    std::size_t a = pick(neg), b = pick(pos);
    if (rng() & 1u) std::swap(a, b);
    pairs.push_back({a, b, PairKind::kComparable});
  }
  std::shuffle(pairs.begin(), pairs.end(), rng);
  return pairs;
}

/// minority / (minority + majority).
inline double auto_threshold(std::size_t n_negative, std::size_t n_positive) {
  if (n_negative + n_positive == 0) throw DataError("auto_threshold: no samples");
  return static_cast<double>(std::min(n_negative, n_positive)) /
         static_cast<double>(n_negative + n_positive);
}

inline double accuracy(const std::vector<double>& probs, const std::vector<int>& labels, double thr) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) hit += ((probs[i] >= thr) == (labels[i] == 1)) ? 1 : 0;
  return probs.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(probs.size());
}

inline std::vector<double> predict(const Network& net, const std::vector<Features>& samples) {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto& f : samples) out.push_back(net.forward(f).prob);
  return out;
}

struct TrainConfig {
  std::size_t epochs = 50;
  double lr = 1e-4;
  LossWeights weights;
  std::uint64_t seed = 0;
  std::size_t epoch_size = 0;  // 0: number of training samples
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;
  double loss1 = 0.0;
  double loss2 = 0.0;
};

/// Pairwise Adam training over one network. Epoch numbering continues
/// across restore().
class Trainer {
 public:
  Trainer(Network& net, const std::vector<Features>& samples, std::vector<int> labels, TrainConfig cfg)
      : net_(net), samples_(samples), labels_(std::move(labels)), cfg_(cfg),
        adam_(AdamConfig{.lr = cfg.lr}) {
    if (samples_.size() != labels_.size()) throw ConfigError("samples and labels differ in length");
    if (samples_.empty()) throw DataError("no training samples");
  }

  std::size_t epochs_done() const { return epoch_; }
  const Adam& optimizer() const { return adam_; }

  /// One optimizer update on a single pair; returns the loss terms before the update.
  EpochStats step(const PairIndex& p) {
    net_.params().zero_grad();
    const auto fwd = siamese_forward(net_, samples_[p.first], samples_[p.second]);
    const auto loss = pair_loss(fwd, labels_[p.first], labels_[p.second], p.kind, cfg_.weights);
    EpochStats s{epoch_ + 1, loss.total.value()[0], loss.loss1.value()[0], loss.loss2.value()[0]};
    if (!std::isfinite(s.loss)) {
      throw DataError("non-finite loss at epoch " + std::to_string(s.epoch) + " (pair " +
                      std::to_string(p.first) + "," + std::to_string(p.second) +
                      "): loss1=" + std::to_string(s.loss1) + " loss2=" + std::to_string(s.loss2));
    }
    ad::backward(loss.total);
    adam_.step(net_.params());
    return s;
  }

  EpochStats run_epoch() {
    const std::size_t n = cfg_.epoch_size ? cfg_.epoch_size : samples_.size();
    const auto pairs = sample_pairs(labels_, n, cfg_.seed, epoch_);
    EpochStats acc{epoch_ + 1, 0.0, 0.0, 0.0};
    for (const auto& p : pairs) {
      const auto s = step(p);
      acc.loss += s.loss;
      acc.loss1 += s.loss1;
      acc.loss2 += s.loss2;
    }
    const auto inv = 1.0 / static_cast<double>(pairs.size());
    acc.loss *= inv;
    acc.loss1 *= inv;
    acc.loss2 *= inv;
    ++epoch_;
    return acc;
  }

  /// Runs up to cfg.epochs epochs; `after_epoch` may return false to stop early.
  std::vector<EpochStats> train(const std::function<bool(const EpochStats&)>& after_epoch = {}) {
    std::vector<EpochStats> history;
    while (epoch_ < cfg_.epochs) {
      history.push_back(run_epoch());
      if (after_epoch && !after_epoch(history.back())) break;
    }
    return history;
  }

  std::vector<io::NamedTensor> state() const {
    std::vector<io::NamedTensor> out;
    out.push_back({"epoch", Tensor::scalar(static_cast<double>(epoch_))});
    out.push_back({"adam.step", Tensor::scalar(static_cast<double>(adam_.steps()))});
    for (const auto& [name, mv] : adam_.moments()) {
      out.push_back({"adam.m." + name, mv.first});
      out.push_back({"adam.v." + name, mv.second});
    }
    return out;
  }

  void restore(const std::vector<io::NamedTensor>& state) {
    std::map<std::string, std::pair<Tensor, Tensor>> moments;
    std::optional<double> epoch, steps;
    for (const auto& t : state) {
      if (t.name == "epoch") {
        epoch = t.tensor.item();
      } else if (t.name == "adam.step") {
        steps = t.tensor.item();
      } else if (t.name.rfind("adam.m.", 0) == 0) {
        moments[t.name.substr(7)].first = t.tensor;
      } else if (t.name.rfind("adam.v.", 0) == 0) {
        moments[t.name.substr(7)].second = t.tensor;
      } else {
        throw FormatError("unexpected training-state tensor '" + t.name + "'");
      }
    }
    if (!epoch || !steps) throw FormatError("training state lacks epoch or step counters");
    for (const auto& [name, mv] : moments) {
      if (!net_.params().contains(name) || mv.first.empty() || mv.second.empty()) {
        throw FormatError("training state moments do not match the network at '" + name + "'");
      }
    }
    epoch_ = static_cast<std::size_t>(*epoch);
    adam_.restore(static_cast<std::uint64_t>(*steps), std::move(moments));
  }

 private:
  Network& net_;
  const std::vector<Features>& samples_;
  std::vector<int> labels_;
  TrainConfig cfg_;
  Adam adam_;
  std::size_t epoch_ = 0;
};

/// Indices of up to `count` anxiety-free samples with the lowest predicted
/// anxiety probability (ties by index).
inline std::vector<std::size_t> select_references(const std::vector<double>& probs,
                                                  const std::vector<int>& labels, std::size_t count) {
  std::vector<std::size_t> free;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == 0) free.push_back(i);
  if (free.empty()) throw DataError("no anxiety-free samples available for the reference set");
  if (free.size() < count) {
    std::cerr << "warning: only " << free.size() << " anxiety-free samples for a reference set of "
              << count << '\n';
  }
  std::stable_sort(free.begin(), free.end(), [&](std::size_t a, std::size_t b) { return probs[a] < probs[b]; });
  free.resize(std::min(count, free.size()));
  return free;
}

struct ScreenResult {
  double prob = 0.0;
  double dissimilarity = 0.0;
  bool anxiety = false;
  double thr = 0.5;
};

/// Classifier probability thresholded at `thr`, plus the mean over
/// references of sum_j |1 - sim_j| as an auxiliary score.
inline ScreenResult screen(const Network& net, const Features& sample, const std::vector<Features>& refs,
                           double thr) {
  if (refs.empty()) throw DataError("screen: empty reference set");
  const auto r = net.forward(sample);
  ScreenResult out;
  out.prob = r.prob;
  out.thr = thr;
  out.anxiety = r.prob >= thr;
  for (const auto& ref : refs) {
    const auto e = net.forward(ref);
    for (std::size_t j = 0; j < e.embeddings.size(); ++j) {
      out.dissimilarity += std::abs(1.0 - similarity_value(r.embeddings[j].value(), e.embeddings[j].value()));
    }
  }
  out.dissimilarity /= static_cast<double>(refs.size());
  return out;
}

/// Mean accuracy drop when one stream's embeddings are shuffled across
/// samples, per configured stream.
inline std::map<Stream, double> permutation_importance(const Network& net, const std::vector<Features>& samples,
                                                       const std::vector<int>& labels, double thr,
                                                       std::uint64_t seed, std::size_t repeats = 10) {
  if (samples.empty()) throw DataError("permutation_importance: no samples");
  std::vector<std::vector<ad::Var>> emb;
  std::vector<double> base_probs;
  for (const auto& f : samples) {
    auto r = net.forward(f);
    std::vector<ad::Var> frozen;
    for (const auto& e : r.embeddings) frozen.push_back(ad::constant(e.value()));
    emb.push_back(std::move(frozen));
    base_probs.push_back(r.prob);
  }
  const double base = accuracy(base_probs, labels, thr);
  std::map<Stream, double> out;
  const auto& streams = net.config().streams;
  for (std::size_t j = 0; j < streams.size(); ++j) {
    double drop = 0.0;
    for (std::size_t r = 0; r < repeats; ++r) {
      std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                        static_cast<std::uint32_t>(j), static_cast<std::uint32_t>(r)};
      std::mt19937_64 rng(seq);
      std::vector<std::size_t> perm(samples.size());
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      std::shuffle(perm.begin(), perm.end(), rng);
      std::vector<double> probs;
      for (std::size_t i = 0; i < samples.size(); ++i) {
        auto e = emb[i];
        e[j] = emb[perm[i]][j];
        probs.push_back(ad::sigmoid_value(net.head(e).value()[0]));
      }
      drop += base - accuracy(probs, labels, thr);
    }
    out[streams[j]] = drop / static_cast<double>(repeats);
  }
  return out;
}

}  // namespace sffda
