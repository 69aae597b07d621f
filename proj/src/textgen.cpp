// SPDX-License-Identifier: Apache-2.0
#include "m3/textgen.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace m3 {

double Hypothesis::normalized() const {
  return tokens.empty() ? 0.0 : logprob / static_cast<double>(tokens.size());
}

namespace {

Caption to_caption(const Hypothesis& h) {
  Caption c;
  c.tokens = h.tokens;
  c.length = h.tokens.size();
  c.logprob = h.logprob;
  if (!c.tokens.empty() && c.tokens.back() == kEos) c.tokens.pop_back();
  return c;
}

// Higher score first; equal scores fall back to the smaller token sequence.
bool better(double sa, const std::vector<TokenId>& ta, double sb, const std::vector<TokenId>& tb) {
  if (sa != sb) return sa > sb;
  return ta < tb;
}

}  // namespace

Caption greedy_decode(const ParameterStore& params, const ModelConfig& config, const FeatureSequence& feats,
                      std::size_t max_len) {
  if (max_len == 0) throw std::invalid_argument("greedy_decode: max_len must be at least 1");
  InferenceSession session(params, config, feats);
  Hypothesis h;
  h.state = session.start();
  while (h.tokens.size() < max_len) {
    auto [next, probs] = session.step(h.state);
    const auto& p = probs.values();
    const auto best = static_cast<TokenId>(std::max_element(p.begin(), p.end()) - p.begin());
    h.logprob += std::log(p[best]);
    h.tokens.push_back(best);
    h.state = std::move(next);
    h.state.prev = best;
    if (best == kEos) break;
  }
  return to_caption(h);
}

Caption beam_search(const ParameterStore& params, const ModelConfig& config, const FeatureSequence& feats,
                    std::size_t beam, std::size_t max_len) {
  if (beam == 0) throw std::invalid_argument("beam_search: beam must be at least 1");
  if (max_len == 0) throw std::invalid_argument("beam_search: max_len must be at least 1");
  InferenceSession session(params, config, feats);

  struct Child {
    std::size_t parent;
    TokenId token;
    double logprob;
    std::vector<TokenId> tokens;
  };

  std::vector<Hypothesis> live(1);
  live[0].state = session.start();
  std::vector<Hypothesis> finished;

  for (std::size_t depth = 1; depth <= max_len && !live.empty(); ++depth) {
    std::vector<StepState> next_states;
    std::vector<Child> children;
    for (std::size_t k = 0; k < live.size(); ++k) {
      auto [next, probs] = session.step(live[k].state);
      next_states.push_back(std::move(next));
      for (TokenId tok = 0; tok < probs.size(); ++tok) {
        if (probs[tok] <= 0.0) continue;  // masked ids
        Child c{k, tok, live[k].logprob + std::log(probs[tok]), live[k].tokens};
        c.tokens.push_back(tok);
        children.push_back(std::move(c));
      }
    }
    // All children have the same length here, so total and normalized scores
    // rank them identically.
    const std::size_t keep = std::min(beam, children.size());
    std::partial_sort(children.begin(), children.begin() + static_cast<std::ptrdiff_t>(keep), children.end(),
                      [](const Child& a, const Child& b) { return better(a.logprob, a.tokens, b.logprob, b.tokens); });
    children.resize(keep);

    std::vector<Hypothesis> next_live;
    for (Child& c : children) {
      Hypothesis h;
      h.tokens = std::move(c.tokens);
      h.logprob = c.logprob;
      h.state = next_states[c.parent];
      h.state.prev = c.token;
      h.finished = c.token == kEos || depth == max_len;
      (h.finished ? finished : next_live).push_back(std::move(h));
    }
    live = std::move(next_live);
  }

  auto best = std::min_element(finished.begin(), finished.end(), [](const Hypothesis& a, const Hypothesis& b) {
    return better(a.normalized(), a.tokens, b.normalized(), b.tokens);
  });
  return to_caption(*best);
}

BleuReport bleu(const std::vector<Sentence>& candidates, const std::vector<std::vector<Sentence>>& references,
                std::size_t max_n) {
  if (candidates.empty()) throw std::invalid_argument("bleu: empty candidate list");
  if (candidates.size() != references.size())
    throw std::invalid_argument("bleu: " + std::to_string(candidates.size()) + " candidates but " +
                                std::to_string(references.size()) + " reference sets");
  if (max_n == 0 || max_n > 4) throw std::invalid_argument("bleu: max_n must be in 1..4");

  using NGram = std::vector<std::string>;
  auto count = [](const Sentence& s, std::size_t n) {
    std::map<NGram, std::size_t> out;
    for (std::size_t i = 0; i + n <= s.size(); ++i) ++out[NGram(s.begin() + i, s.begin() + i + n)];
    return out;
  };

  std::array<std::size_t, 4> matched{}, total{};
  BleuReport r;
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const Sentence& cand = candidates[k];
    const auto& refs = references[k];
    if (refs.empty()) throw std::invalid_argument("bleu: empty reference set for candidate " + std::to_string(k));

    std::size_t closest = refs.front().size();
    for (const auto& ref : refs) {
      const auto d = [&](std::size_t len) { return len > cand.size() ? len - cand.size() : cand.size() - len; };
      if (d(ref.size()) < d(closest) || (d(ref.size()) == d(closest) && ref.size() < closest)) closest = ref.size();
    }
    r.candidate_length += cand.size();
    r.reference_length += closest;

    for (std::size_t n = 1; n <= max_n; ++n) {
      std::map<NGram, std::size_t> max_ref;
      for (const auto& ref : refs)
        for (const auto& [g, c] : count(ref, n)) max_ref[g] = std::max(max_ref[g], c);
      for (const auto& [g, c] : count(cand, n)) {
        total[n - 1] += c;
        auto it = max_ref.find(g);
        if (it != max_ref.end()) matched[n - 1] += std::min(c, it->second);
      }
    }
  }

  for (std::size_t n = 0; n < max_n; ++n)
    r.precision[n] = total[n] ? static_cast<double>(matched[n]) / static_cast<double>(total[n]) : 0.0;

  const double c = static_cast<double>(r.candidate_length), ref_len = static_cast<double>(r.reference_length);
  r.brevity_penalty = c == 0.0 ? 0.0 : (c < ref_len ? std::exp(1.0 - ref_len / c) : 1.0);

  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t n = 0; n < max_n; ++n) {
    zero = zero || r.precision[n] == 0.0;
    if (!zero) log_sum += std::log(r.precision[n]);
    r.bleu[n] = zero ? 0.0 : r.brevity_penalty * std::exp(log_sum / static_cast<double>(n + 1));
  }
  return r;
}

}  // namespace m3
