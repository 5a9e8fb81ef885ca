#include "mvfuse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include "mvfuse/error.hpp"
#include "mvfuse/lm.hpp"

namespace mvfuse {

using json = nlohmann::json;

namespace {

using NgramCounts = std::map<std::string, std::size_t>;

NgramCounts ngrams(const Tokens& t, std::size_t n) {
  NgramCounts out;
  if (t.size() < n) return out;
  for (std::size_t i = 0; i + n <= t.size(); ++i) {
    std::string key = t[i];
    for (std::size_t k = 1; k < n; ++k) key += '\x1f' + t[i + k];
    ++out[key];
  }
  return out;
}

}  // namespace

// --------------------------------------------------------------------- BLEU

double bleu4(std::span<const EvalPair> corpus, bool smoothing) {
  std::array<double, 4> clipped{}, total{};
  double c_len = 0.0, r_len = 0.0;
  for (const auto& p : corpus) {
    if (p.references.empty()) throw DataError("pair " + p.id + " has no reference");
    const double c = static_cast<double>(p.candidate.size());
    c_len += c;
    // Closest reference length; ties prefer the shorter one.
    double best = static_cast<double>(p.references.front().size());
    for (const auto& r : p.references) {
      const double rl = static_cast<double>(r.size());
      if (std::abs(rl - c) < std::abs(best - c) || (std::abs(rl - c) == std::abs(best - c) && rl < best))
        best = rl;
    }
    r_len += best;
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto cand = ngrams(p.candidate, n);
      std::map<std::string, std::size_t> max_ref;
      for (const auto& r : p.references)
        for (const auto& [g, k] : ngrams(r, n)) max_ref[g] = std::max(max_ref[g], k);
      for (const auto& [g, k] : cand) {
        auto it = max_ref.find(g);
        clipped[n - 1] += static_cast<double>(std::min(k, it == max_ref.end() ? 0 : it->second));
        total[n - 1] += static_cast<double>(k);
      }
    }
  }
  if (c_len == 0.0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    double num = clipped[n], den = total[n];
    if (smoothing && n >= 1) {
      num += 1.0;
      den += 1.0;
    }
    if (num == 0.0 || den == 0.0) return 0.0;
    log_sum += std::log(num / den);
  }
  const double bp = c_len < r_len ? std::exp(1.0 - r_len / c_len) : 1.0;
  return bp * std::exp(log_sum / 4.0);
}

// ------------------------------------------------------------------ ROUGE-L

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l_pair(const Tokens& candidate, std::span<const Tokens> references, double beta) {
  if (candidate.empty()) return 0.0;
  double best = 0.0;
  for (const auto& r : references) {
    if (r.empty()) continue;
    const double l = static_cast<double>(lcs_length(candidate, r));
    if (l == 0.0) continue;
    const double p = l / static_cast<double>(candidate.size());
    const double rec = l / static_cast<double>(r.size());
    const double b2 = beta * beta;
    best = std::max(best, (1.0 + b2) * p * rec / (rec + b2 * p));
  }
  return best;
}

double rouge_l(std::span<const EvalPair> corpus, double beta) {
  if (corpus.empty()) return 0.0;
  double s = 0.0;
  for (const auto& p : corpus) s += rouge_l_pair(p.candidate, p.references, beta);
  return s / static_cast<double>(corpus.size());
}

// ------------------------------------------------------------------- METEOR

std::string meteor_stem(const std::string& word) {
  // Longest suffix first; the remaining stem keeps at least three characters.
  for (const char* suf : {"ing", "es", "ed", "s"}) {
    const std::size_t n = std::char_traits<char>::length(suf);
    if (word.size() >= n + 3 && word.compare(word.size() - n, n, suf) == 0)
      return word.substr(0, word.size() - n);
  }
  return word;
}

MeteorAlignment meteor_align(const Tokens& candidate, const Tokens& reference, bool stem) {
  auto key = [&](const std::string& w) { return stem ? meteor_stem(w) : w; };
  std::vector<std::string> ck, rk;
  for (const auto& w : candidate) ck.push_back(key(w));
  for (const auto& w : reference) rk.push_back(key(w));

  std::map<std::string, std::size_t> nc, nr;
  for (const auto& k : ck) ++nc[k];
  for (const auto& k : rk) ++nr[k];
  MeteorAlignment out;
  // Skips each class may spend: candidate occurrences beyond what the
  // reference can absorb.
  std::map<std::string, std::size_t> skips;
  for (const auto& [k, c] : nc) {
    const std::size_t r = nr.count(k) ? nr.at(k) : 0;
    out.matches += std::min(c, r);
    skips[k] = c - std::min(c, r);
  }
  if (out.matches == 0) return out;

  // Exact search over alignments achieving the maximum match count, memoized
  // on (candidate position, previous reference position, used references).
  const std::size_t n = ck.size(), m = rk.size();
  constexpr std::size_t kInf = std::numeric_limits<std::size_t>::max() / 2;
  std::map<std::tuple<std::size_t, std::size_t, std::vector<bool>>, std::size_t> memo;
  std::vector<bool> used(m, false);
  std::map<std::string, std::size_t> skipped;
  // prev == m means the previous candidate token was unmatched.
  std::function<std::size_t(std::size_t, std::size_t)> best = [&](std::size_t i,
                                                                   std::size_t prev) -> std::size_t {
    if (i == n) return 0;
    auto mk = std::make_tuple(i, prev, used);
    if (auto it = memo.find(mk); it != memo.end()) return it->second;
    std::size_t res = kInf;
    const std::string& k = ck[i];
    auto try_ref = [&](std::size_t j) {
      if (used[j] || rk[j] != k) return;
      used[j] = true;
      const std::size_t add = (prev != m && j == prev + 1) ? 0 : 1;
      const std::size_t sub = best(i + 1, j);
      if (sub < kInf) res = std::min(res, add + sub);
      used[j] = false;
    };
    if (prev != m && prev + 1 < m) try_ref(prev + 1);
    for (std::size_t j = 0; j < m; ++j)
      if (prev == m || j != prev + 1) try_ref(j);
    if (skipped[k] < skips[k]) {
      ++skipped[k];
      res = std::min(res, best(i + 1, m));
      --skipped[k];
    }
    memo.emplace(std::move(mk), res);
    return res;
  };
  out.chunks = best(0, m);
  return out;
}

double meteor_pair(const Tokens& candidate, std::span<const Tokens> references, bool stem) {
  double best = 0.0;
  for (const auto& r : references) {
    if (candidate.empty() || r.empty()) continue;
    const auto a = meteor_align(candidate, r, stem);
    if (a.matches == 0) continue;
    const double mm = static_cast<double>(a.matches);
    const double p = mm / static_cast<double>(candidate.size());
    const double rec = mm / static_cast<double>(r.size());
    const double fmean = 10.0 * p * rec / (rec + 9.0 * p);
    const double frag = static_cast<double>(a.chunks) / mm;
    const double penalty = 0.5 * frag * frag * frag;
    best = std::max(best, fmean * (1.0 - penalty));
  }
  return best;
}

double meteor(std::span<const EvalPair> corpus, bool stem) {
  if (corpus.empty()) return 0.0;
  double s = 0.0;
  for (const auto& p : corpus) s += meteor_pair(p.candidate, p.references, stem);
  return s / static_cast<double>(corpus.size());
}

// -------------------------------------------------------------------- CIDEr

std::vector<double> cider_scores(std::span<const EvalPair> corpus) {
  if (corpus.size() < 2) {
    throw DataError("CIDEr needs at least 2 pairs: document frequencies are computed over the corpus");
  }
  const double N = static_cast<double>(corpus.size());
  std::vector<double> scores(corpus.size(), 0.0);
  for (std::size_t n = 1; n <= 4; ++n) {
    std::map<std::string, double> df;
    for (const auto& p : corpus) {
      std::set<std::string> seen;
      for (const auto& r : p.references)
        for (const auto& [g, k] : ngrams(r, n)) seen.insert(g);
      for (const auto& g : seen) df[g] += 1.0;
    }
    auto vec = [&](const Tokens& t) {
      const auto counts = ngrams(t, n);
      double total = 0.0;
      for (const auto& [g, k] : counts) total += static_cast<double>(k);
      std::map<std::string, double> v;
      for (const auto& [g, k] : counts) {
        auto it = df.find(g);
        const double d = it == df.end() ? 1.0 : std::max(it->second, 1.0);
        v[g] = static_cast<double>(k) / total * std::log(N / d);
      }
      return v;
    };
    auto norm = [](const std::map<std::string, double>& v) {
      double s = 0.0;
      for (const auto& [g, x] : v) s += x * x;
      return std::sqrt(s);
    };
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      const auto& p = corpus[i];
      const auto cv = vec(p.candidate);
      const double cn = norm(cv);
      double acc = 0.0;
      for (const auto& r : p.references) {
        const auto rv = vec(r);
        const double rn = norm(rv);
        if (cn == 0.0 || rn == 0.0) continue;
        double dot = 0.0;
        for (const auto& [g, x] : cv) {
          auto it = rv.find(g);
          if (it != rv.end()) dot += x * it->second;
        }
        acc += dot / (cn * rn);
      }
      scores[i] += acc / static_cast<double>(p.references.size());
    }
  }
  for (double& s : scores) s = 10.0 * s / 4.0;
  return scores;
}

double cider(std::span<const EvalPair> corpus) {
  const auto s = cider_scores(corpus);
  double sum = 0.0;
  for (double x : s) sum += x;
  return sum / static_cast<double>(s.size());
}

// ------------------------------------------------------------------- report

json MetricReport::to_json() const {
  json pairs_j = json::array();
  for (const auto& p : pairs) {
    pairs_j.push_back({{"id", p.id},
                       {"bleu4", p.bleu4},
                       {"rouge_l", p.rouge_l},
                       {"meteor", p.meteor},
                       {"cider", p.cider},
                       {"exact", p.exact}});
  }
  return json{{"schema_version", kReportSchemaVersion},
              {"n", n},
              {"bleu4", bleu4},
              {"rouge_l", rouge_l},
              {"meteor", meteor},
              {"cider", cider},
              {"exact_match", exact_match},
              {"pairs", pairs_j}};
}

std::string MetricReport::table() const {
  char buf[512];
  std::ostringstream os;
  std::snprintf(buf, sizeof buf, "%-8s %8s %8s %8s %8s %8s\n", "pairs", "BLEU-4", "METEOR",
                "ROUGE-L", "CIDEr", "exact");
  os << buf;
  std::snprintf(buf, sizeof buf, "%-8zu %8.2f %8.2f %8.2f %8.2f %8.2f\n", n, 100.0 * bleu4,
                100.0 * meteor, 100.0 * rouge_l, cider, 100.0 * exact_match);
  os << buf;
  return os.str();
}

MetricReport evaluate(std::vector<EvalPair> corpus, const MetricOptions& opts) {
  if (corpus.empty()) throw DataError("nothing to evaluate: the corpus is empty");
  std::sort(corpus.begin(), corpus.end(),
            [](const EvalPair& a, const EvalPair& b) { return a.id < b.id; });
  MetricReport r;
  r.n = corpus.size();
  r.bleu4 = bleu4(corpus, opts.bleu_smoothing);
  r.rouge_l = rouge_l(corpus, opts.rouge_beta);
  r.meteor = meteor(corpus, opts.meteor_stem);
  const auto cs = cider_scores(corpus);
  double cider_sum = 0.0, exact = 0.0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& p = corpus[i];
    PairScore ps;
    ps.id = p.id;
    ps.bleu4 = bleu4(std::span<const EvalPair>(&p, 1), opts.bleu_smoothing);
    ps.rouge_l = rouge_l_pair(p.candidate, p.references, opts.rouge_beta);
    ps.meteor = meteor_pair(p.candidate, p.references, opts.meteor_stem);
    ps.cider = cs[i];
    ps.exact = std::find(p.references.begin(), p.references.end(), p.candidate) != p.references.end();
    cider_sum += cs[i];
    exact += ps.exact ? 1.0 : 0.0;
    r.pairs.push_back(std::move(ps));
  }
  r.cider = cider_sum / static_cast<double>(corpus.size());
  r.exact_match = exact / static_cast<double>(corpus.size());
  return r;
}

namespace {

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + " is not valid JSON: " + e.what());
  }
}

std::string list_ids(const std::vector<std::string>& ids) {
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) s += (i ? ", " : "") + ids[i];
  return s;
}

}  // namespace

std::vector<EvalPair> align_predictions(const json& predictions, const json& references) {
  if (!predictions.is_array()) throw DataError("predictions must be a JSON list");
  if (!references.is_array()) throw DataError("references must be a JSON list");
  if (predictions.empty()) throw DataError("predictions file is empty");

  std::map<std::string, std::vector<Tokens>> refs;
  std::vector<std::string> dup_refs;
  for (const auto& r : references) {
    if (!r.is_object() || !r.contains("id") || !r.at("id").is_string())
      throw DataError("reference entry without a string id");
    const auto id = r.at("id").get<std::string>();
    std::vector<Tokens> texts;
    if (r.contains("texts")) {
      for (const auto& t : r.at("texts")) texts.push_back(Tokenizer::split(t.get<std::string>()));
    } else if (r.contains("text")) {
      texts.push_back(Tokenizer::split(r.at("text").get<std::string>()));
    }
    if (texts.empty()) throw DataError("reference " + id + " has no text");
    if (refs.count(id)) dup_refs.push_back(id);
    refs[id] = std::move(texts);
  }
  if (!dup_refs.empty()) throw DataError("duplicate reference ids: " + list_ids(dup_refs));

  std::set<std::string> seen;
  std::vector<std::string> dups, missing;
  std::vector<EvalPair> out;
  for (const auto& p : predictions) {
    if (!p.is_object() || !p.contains("id") || !p.at("id").is_string() || !p.contains("text") ||
        !p.at("text").is_string())
      throw DataError("prediction entries need string fields id and text");
    const auto id = p.at("id").get<std::string>();
    if (!seen.insert(id).second) {
      dups.push_back(id);
      continue;
    }
    auto it = refs.find(id);
    if (it == refs.end()) {
      missing.push_back(id);
      continue;
    }
    out.push_back({id, Tokenizer::split(p.at("text").get<std::string>()), it->second});
  }
  std::string msg;
  if (!dups.empty()) msg += "duplicate prediction ids: " + list_ids(dups);
  if (!missing.empty())
    msg += std::string(msg.empty() ? "" : "; ") + "prediction ids missing from references: " +
           list_ids(missing);
  if (!msg.empty()) throw DataError(msg);
  std::sort(out.begin(), out.end(), [](const EvalPair& a, const EvalPair& b) { return a.id < b.id; });
  return out;
}

MetricReport evaluate_files(const std::filesystem::path& predictions,
                            const std::filesystem::path& references, const MetricOptions& opts) {
  return evaluate(align_predictions(read_json_file(predictions), read_json_file(references)), opts);
}

}  // namespace mvfuse
