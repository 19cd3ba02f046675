#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mathlm/rerank.hpp"

namespace oracle {

inline mathlm::Candidate scored(std::string latex, double recog, double lm) {
  mathlm::Candidate c;
  c.latex = std::move(latex);
  c.recog_score = recog;
  c.lm_score = lm;
  return c;
}

/// Two candidates whose winner flips from the first to the second once
/// alpha exceeds (r1 - r2) / (l2 - l1).
inline mathlm::CandidateSet pair_set(std::string id, double r1, double l1, double r2, double l2,
                                     std::optional<std::string> truth) {
  mathlm::CandidateSet s;
  s.id = std::move(id);
  s.truth = std::move(truth);
  s.candidates = {scored("x", r1, l1), scored("y", r2, l2)};
  return s;
}

/// Dev sets on which alpha = 0.3 alone gets both right: the first flips to
/// its correct second candidate above 0.25, the second flips away from its
/// correct first candidate above 0.35.
inline std::vector<mathlm::CandidateSet> sweep_fixture() {
  return {pair_set("a", -1.0, -2.0, -1.25, -1.0, "y"), pair_set("b", -1.0, -2.0, -1.35, -1.0, "x")};
}

/// Six items. Rows 0 and 5 go from wrong to right, row 1 from right to
/// wrong, rows 2 and 3 keep their winner, row 4 swaps one wrong answer for
/// another. Expected: corrected 2/6, miscorrected 1/6, unchanged 2/6,
/// changed-but-wrong 1/6.
struct ChangeFixture {
  std::vector<std::string> baseline{"a+b", "x^{2}", "y", "z", "p", "\\frac{1}{2}"};
  std::vector<std::string> reranked{"a-b", "x_{2}", "y", "z", "q", "\\frac{1}{3}"};
  std::vector<std::optional<std::string>> truths{"a-b", "x^{2}", "y", "w", "r", "\\frac{1}{3}"};
};

}  // namespace oracle
