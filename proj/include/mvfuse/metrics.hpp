#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace mvfuse {

using Tokens = std::vector<std::string>;

struct EvalPair {
  std::string id;
  Tokens candidate;
  std::vector<Tokens> references;  // at least one
};

struct MetricOptions {
  // Add one to numerator and denominator of p_2..p_4.
  bool bleu_smoothing = false;
  // Suffix-stripping stemmer in METEOR matching.
  bool meteor_stem = false;
  double rouge_beta = 1.2;
};

/// Corpus BLEU-4: clipped n-gram counts summed over the corpus, uniform
/// geometric mean, brevity penalty against the closest reference lengths.
double bleu4(std::span<const EvalPair> corpus, bool smoothing = false);

// Longest common subsequence length.
std::size_t lcs_length(const Tokens& a, const Tokens& b);
// Best F_beta over the references.
double rouge_l_pair(const Tokens& candidate, std::span<const Tokens> references, double beta = 1.2);
double rouge_l(std::span<const EvalPair> corpus, double beta = 1.2);

struct MeteorAlignment {
  std::size_t matches = 0;
  std::size_t chunks = 0;
};
// Maximum number of matches, then the fewest chunks among those alignments.
MeteorAlignment meteor_align(const Tokens& candidate, const Tokens& reference, bool stem = false);
std::string meteor_stem(const std::string& word);
double meteor_pair(const Tokens& candidate, std::span<const Tokens> references, bool stem = false);
double meteor(std::span<const EvalPair> corpus, bool stem = false);

/// CIDEr (original, no length penalty), per pair. Needs at least two pairs.
std::vector<double> cider_scores(std::span<const EvalPair> corpus);
double cider(std::span<const EvalPair> corpus);

struct PairScore {
  std::string id;
  double bleu4 = 0.0;  // sentence-level
  double rouge_l = 0.0;
  double meteor = 0.0;
  double cider = 0.0;
  bool exact = false;
};

struct MetricReport {
  std::size_t n = 0;
  double bleu4 = 0.0;
  double rouge_l = 0.0;
  double meteor = 0.0;
  double cider = 0.0;
  double exact_match = 0.0;
  std::vector<PairScore> pairs;

  nlohmann::json to_json() const;
  // Fixed-width table; BLEU-4, ROUGE-L, METEOR and exact match are shown x100.
  std::string table() const;
};

inline constexpr int kReportSchemaVersion = 1;

MetricReport evaluate(std::vector<EvalPair> corpus, const MetricOptions& opts = {});

// Pairs from predictions [{"id","text"}] and references [{"id","text"} or
// {"id","texts":[...]}], tokenized with the LM tokenizer and sorted by id.
std::vector<EvalPair> align_predictions(const nlohmann::json& predictions,
                                        const nlohmann::json& references);
MetricReport evaluate_files(const std::filesystem::path& predictions,
                            const std::filesystem::path& references,
                            const MetricOptions& opts = {});

}  // namespace mvfuse
