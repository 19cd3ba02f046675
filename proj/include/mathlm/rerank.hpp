#pragma once

// N-best re-ranking: recognizer score plus a weighted, length-normalized LM
// score; alpha sweep; expression rate and change statistics.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mathlm/lm.hpp"

namespace mathlm {

struct Candidate {
  std::string latex;
  double recog_score = 0.0;
  std::optional<double> lm_score;  // -inf when the candidate could not be scored
  std::optional<double> combined;
  std::string lm_error;  // why lm_score is -inf
};

struct CandidateSet {
  std::string id;
  std::optional<std::string> truth;
  std::vector<Candidate> candidates;  // recognizer rank order
};

struct RerankResult {
  std::size_t winner = 0;
  std::vector<double> combined;
};

/// Mean log p(x_t | x_<t) over the candidate's tokens, eos counted.
/// Throws InvalidLatex, UnknownToken.
double lm_score(const LanguageModel& model, std::string_view latex);

/// Fills lm_score (and lm_error) for every candidate of every set. Candidates
/// that do not normalize or tokenize get -inf.
void score_candidates(std::span<CandidateSet> sets, const LanguageModel& model);

/// recog + alpha * lm; exactly recog when alpha is 0.
double combine(double recog_score, double lm_score, double alpha);

/// Argmax over candidates with lm_score already filled; ties go to the
/// earlier candidate. Throws EmptyCandidates, UninitializedState.
RerankResult rerank_scored(const CandidateSet& set, double alpha);

/// Scores, writes `combined` into the candidates and picks the winner.
RerankResult rerank(CandidateSet& set, const LanguageModel& model, double alpha);

/// {0.0, 0.1, ..., 2.0}.
std::vector<double> alpha_grid();

/// Percentage of predictions matching their truth after normalization.
/// Throws MissingTruth, LengthMismatch.
double expression_rate(std::span<const std::string> predictions,
                       std::span<const std::optional<std::string>> truths);

struct SweepResult {
  double best_alpha = 0.0;
  std::vector<double> alphas;
  std::vector<double> rates;
};

/// Expression rate at every grid point using pre-filled lm scores; the best
/// rate wins and ties go to the smallest alpha.
SweepResult sweep_alpha_scored(std::span<const CandidateSet> dev, std::span<const double> grid);

SweepResult sweep_alpha(std::span<CandidateSet> dev, const LanguageModel& model,
                        std::span<const double> grid);

struct ChangeStats {
  std::size_t n = 0;
  double corrected = 0.0;       // baseline wrong, reranked right
  double miscorrected = 0.0;    // baseline right, reranked wrong
  double unchanged = 0.0;       // same winner
  double changed_other = 0.0;   // different winner, correctness unchanged
};

/// Percentages over n. Throws LengthMismatch, MissingTruth.
ChangeStats change_stats(std::span<const std::string> baseline_winners,
                         std::span<const std::string> reranked_winners,
                         std::span<const std::optional<std::string>> truths);

/// Equality after normalization; raw text equality when either side fails
/// to normalize.
bool same_expression(std::string_view a, std::string_view b);

// JSON Lines: {"id", "truth", "candidates": [{"latex", "score"}, ...]}.
// Malformed lines raise FormatError naming the 1-based line number.
std::vector<CandidateSet> parse_candidate_lines(std::span<const std::string> lines);
std::vector<CandidateSet> read_candidates(const std::filesystem::path& path);

/// One output line: input fields plus lm_score, combined and winner.
std::string candidate_set_to_json(const CandidateSet& set, std::optional<std::size_t> winner);

}  // namespace mathlm
