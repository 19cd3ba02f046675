#include "mathlm/rerank.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include <json.hpp>

#include "mathlm/errors.hpp"

namespace mathlm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double mean(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

double lm_score(const LanguageModel& model, std::string_view latex) {
  const auto seq = tokenize(normalize(latex), model.vocab());
  return mean(model.token_log_probs(seq));
}

void score_candidates(std::span<CandidateSet> sets, const LanguageModel& model) {
  struct Slot {
    Candidate* cand;
    TokenSeq seq;
  };
  std::vector<Slot> ok;
  for (auto& set : sets) {
    for (auto& c : set.candidates) {
      c.lm_error.clear();
      try {
        ok.push_back({&c, tokenize(normalize(c.latex), model.vocab())});
      } catch (const Error& e) {
        c.lm_score = kNegInf;
        c.lm_error = e.what();
      }
    }
  }
  constexpr std::size_t kChunk = 32;
  std::vector<TokenSeq> batch;
  for (std::size_t i = 0; i < ok.size(); i += kChunk) {
    const std::size_t end = std::min(ok.size(), i + kChunk);
    batch.clear();
    for (std::size_t j = i; j < end; ++j) batch.push_back(ok[j].seq);
    const auto lps = model.batch_token_log_probs(batch);
    for (std::size_t j = i; j < end; ++j) ok[j].cand->lm_score = mean(lps[j - i]);
  }
}

double combine(double recog_score, double lm_score, double alpha) {
  if (alpha == 0.0) return recog_score;
  return recog_score + alpha * lm_score;
}

RerankResult rerank_scored(const CandidateSet& set, double alpha) {
  if (set.candidates.empty()) throw EmptyCandidates("candidate set '" + set.id + "' is empty");
  RerankResult r;
  r.combined.reserve(set.candidates.size());
  for (const auto& c : set.candidates) {
    if (!c.lm_score) {
      throw UninitializedState("candidate of set '" + set.id + "' has no LM score");
    }
    r.combined.push_back(combine(c.recog_score, *c.lm_score, alpha));
  }
  for (std::size_t i = 1; i < r.combined.size(); ++i) {
    if (r.combined[i] > r.combined[r.winner]) r.winner = i;
  }
  return r;
}

RerankResult rerank(CandidateSet& set, const LanguageModel& model, double alpha) {
  if (set.candidates.empty()) throw EmptyCandidates("candidate set '" + set.id + "' is empty");
  score_candidates(std::span<CandidateSet>(&set, 1), model);
  auto r = rerank_scored(set, alpha);
  for (std::size_t i = 0; i < r.combined.size(); ++i) set.candidates[i].combined = r.combined[i];
  return r;
}

std::vector<double> alpha_grid() {
  std::vector<double> g;
  for (int i = 0; i <= 20; ++i) g.push_back(i / 10.0);
  return g;
}

bool same_expression(std::string_view a, std::string_view b) {
  try {
    return normalize(a) == normalize(b);
  } catch (const InvalidLatex&) {
    return a == b;
  }
}

double expression_rate(std::span<const std::string> predictions,
                       std::span<const std::optional<std::string>> truths) {
  if (predictions.size() != truths.size()) {
    throw LengthMismatch(std::to_string(predictions.size()) + " predictions for " +
                         std::to_string(truths.size()) + " truths");
  }
  if (predictions.empty()) throw EmptyCorpus();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (!truths[i]) throw MissingTruth("item " + std::to_string(i) + " has no ground truth");
    if (same_expression(predictions[i], *truths[i])) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(predictions.size());
}

SweepResult sweep_alpha_scored(std::span<const CandidateSet> dev, std::span<const double> grid) {
  if (grid.empty()) throw Error("empty alpha grid");
  std::vector<std::optional<std::string>> truths;
  for (const auto& set : dev) {
    if (!set.truth) throw MissingTruth("dev set '" + set.id + "' has no ground truth");
    truths.push_back(set.truth);
  }
  SweepResult out;
  std::vector<std::string> preds(dev.size());
  for (double alpha : grid) {
    for (std::size_t i = 0; i < dev.size(); ++i) {
      preds[i] = dev[i].candidates[rerank_scored(dev[i], alpha).winner].latex;
    }
    out.alphas.push_back(alpha);
    out.rates.push_back(expression_rate(preds, truths));
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < out.rates.size(); ++i) {
    if (out.rates[i] > out.rates[best] ||
        (out.rates[i] == out.rates[best] && out.alphas[i] < out.alphas[best])) {
      best = i;
    }
  }
  out.best_alpha = out.alphas[best];
  return out;
}

SweepResult sweep_alpha(std::span<CandidateSet> dev, const LanguageModel& model,
                        std::span<const double> grid) {
  score_candidates(dev, model);
  return sweep_alpha_scored(dev, grid);
}

ChangeStats change_stats(std::span<const std::string> baseline_winners,
                         std::span<const std::string> reranked_winners,
                         std::span<const std::optional<std::string>> truths) {
  const std::size_t n = baseline_winners.size();
  if (reranked_winners.size() != n || truths.size() != n) {
    throw LengthMismatch("change_stats needs aligned baseline, reranked and truth lists");
  }
  ChangeStats s;
  s.n = n;
  if (n == 0) return s;
  std::size_t corrected = 0, miscorrected = 0, unchanged = 0, other = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!truths[i]) throw MissingTruth("item " + std::to_string(i) + " has no ground truth");
    if (baseline_winners[i] == reranked_winners[i]) {
      ++unchanged;
      continue;
    }
    const bool before = same_expression(baseline_winners[i], *truths[i]);
    const bool after = same_expression(reranked_winners[i], *truths[i]);
    if (!before && after) {
      ++corrected;
    } else if (before && !after) {
      ++miscorrected;
    } else {
      ++other;
    }
  }
  const double scale = 100.0 / static_cast<double>(n);
  s.corrected = scale * static_cast<double>(corrected);
  s.miscorrected = scale * static_cast<double>(miscorrected);
  s.unchanged = scale * static_cast<double>(unchanged);
  s.changed_other = scale * static_cast<double>(other);
  return s;
}

std::vector<CandidateSet> parse_candidate_lines(std::span<const std::string> lines) {
  using nlohmann::json;
  std::vector<CandidateSet> sets;
  std::set<std::string> ids;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto& line = lines[i];
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(i + 1) + ": ";
    try {
      const json j = json::parse(line);
      CandidateSet set;
      set.id = j.at("id").get<std::string>();
      if (j.contains("truth") && !j.at("truth").is_null()) {
        set.truth = j.at("truth").get<std::string>();
      }
      for (const auto& c : j.at("candidates")) {
        Candidate cand;
        cand.latex = c.at("latex").get<std::string>();
        cand.recog_score = c.at("score").get<double>();
        set.candidates.push_back(std::move(cand));
      }
      if (set.candidates.empty()) throw FormatError("no candidates");
      if (!ids.insert(set.id).second) throw FormatError("duplicate id '" + set.id + "'");
      sets.push_back(std::move(set));
    } catch (const json::exception& e) {
      throw FormatError(where + e.what());
    } catch (const FormatError& e) {
      throw FormatError(where + e.what());
    }
  }
  return sets;
}

std::vector<CandidateSet> read_candidates(const std::filesystem::path& path) {
  return parse_candidate_lines(read_lines(path));
}

std::string candidate_set_to_json(const CandidateSet& set, std::optional<std::size_t> winner) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["id"] = set.id;
  j["truth"] = set.truth ? ordered_json(*set.truth) : ordered_json(nullptr);
  auto& cands = j["candidates"] = ordered_json::array();
  for (const auto& c : set.candidates) {
    ordered_json o;
    o["latex"] = c.latex;
    o["score"] = c.recog_score;
    if (c.lm_score) {
      o["lm_score"] = std::isfinite(*c.lm_score) ? ordered_json(*c.lm_score) : ordered_json(nullptr);
    }
    if (!c.lm_error.empty()) o["lm_error"] = c.lm_error;
    if (c.combined) {
      o["combined"] = std::isfinite(*c.combined) ? ordered_json(*c.combined) : ordered_json(nullptr);
    }
    cands.push_back(std::move(o));
  }
  if (winner) j["winner"] = *winner;
  return j.dump();
}

}  // namespace mathlm
