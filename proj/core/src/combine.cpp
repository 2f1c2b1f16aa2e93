#include "bmtl/combine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <unordered_map>

#include "bmtl/error.hpp"
#include "bmtl/textpipe.hpp"
#include "bmtl/util.hpp"

namespace bmtl::combine {

bool words_match(std::string_view a, std::string_view b, MatchKind* kind) {
  const auto la = textpipe::to_lower(a);
  const auto lb = textpipe::to_lower(b);
  if (la == lb) {
    if (kind) *kind = MatchKind::exact;
    return true;
  }
  const auto ca = textpipe::utf8_chars(la);
  const auto cb = textpipe::utf8_chars(lb);
  std::size_t shared = 0;
  while (shared < ca.size() && shared < cb.size() && ca[shared] == cb[shared]) ++shared;
  if (shared >= kStemPrefix) {
    if (kind) *kind = MatchKind::stem;
    return true;
  }
  return false;
}

std::size_t count_crossings(const std::vector<Link>& links) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < links.size(); ++i) {
    for (std::size_t j = i + 1; j < links.size(); ++j) {
      const auto& x = links[i];
      const auto& y = links[j];
      if ((x.a < y.a && x.b > y.b) || (x.a > y.a && x.b < y.b)) ++n;
    }
  }
  return n;
}

namespace {

struct Candidate {
  std::size_t b;
  MatchKind kind;
};

class ExhaustiveAligner {
 public:
  explicit ExhaustiveAligner(std::vector<std::vector<Candidate>> cands, std::size_t b_size)
      : cands_(std::move(cands)), used_(b_size, false) {}

  std::vector<Link> run() {
    search(0);
    return best_;
  }

 private:
  // Objective tuple: more links, fewer crossings, more exact links.
  bool worse_or_equal_bound(std::size_t i) const {
    if (!have_best_) return false;
    std::size_t reachable = 0;
    for (std::size_t k = i; k < cands_.size(); ++k) {
      for (const auto& c : cands_[k]) {
        if (!used_[c.b]) {
          ++reachable;
          break;
        }
      }
    }
    const std::size_t card = current_.size() + reachable;
    if (card != best_.size()) return card < best_.size();
    if (crossings_ != best_crossings_) return crossings_ > best_crossings_;
    return exact_ + reachable <= best_exact_;
  }

  void consider() {
    const bool better = !have_best_ || current_.size() > best_.size() ||
                        (current_.size() == best_.size() &&
                         (crossings_ < best_crossings_ || (crossings_ == best_crossings_ && exact_ > best_exact_)));
    if (better) {
      best_ = current_;
      best_crossings_ = crossings_;
      best_exact_ = exact_;
      have_best_ = true;
    }
  }

  void search(std::size_t i) {
    if (++nodes_ > kNodeBudget) return;
    if (i == cands_.size()) {
      consider();
      return;
    }
    if (worse_or_equal_bound(i)) return;
    for (const auto& c : cands_[i]) {
      if (used_[c.b]) continue;
      std::size_t added = 0;
      for (const auto& l : current_) added += l.b > c.b ? 1 : 0;
      used_[c.b] = true;
      current_.push_back({i, c.b, c.kind});
      crossings_ += added;
      exact_ += c.kind == MatchKind::exact ? 1 : 0;
      search(i + 1);
      exact_ -= c.kind == MatchKind::exact ? 1 : 0;
      crossings_ -= added;
      current_.pop_back();
      used_[c.b] = false;
    }
    search(i + 1);
  }

  static constexpr std::size_t kNodeBudget = 2'000'000;

  std::vector<std::vector<Candidate>> cands_;
  std::vector<bool> used_;
  std::vector<Link> current_;
  std::size_t crossings_ = 0;
  std::size_t exact_ = 0;
  std::vector<Link> best_;
  std::size_t best_crossings_ = 0;
  std::size_t best_exact_ = 0;
  bool have_best_ = false;
  std::size_t nodes_ = 0;
};

}  // namespace

std::vector<Link> align_pair(const Words& a, const Words& b) {
  std::vector<std::vector<Candidate>> cands(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) {
      MatchKind kind;
      if (words_match(a[i], b[j], &kind)) cands[i].push_back({j, kind});
    }
  }
  if (a.size() <= kExhaustiveAlignLimit && b.size() <= kExhaustiveAlignLimit) {
    return ExhaustiveAligner(std::move(cands), b.size()).run();
  }
  std::vector<Link> links;
  std::vector<bool> used(b.size(), false);
  std::size_t next = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Candidate* pick = nullptr;
    for (const auto& c : cands[i]) {
      if (used[c.b] || c.b < next) continue;
      if (c.kind == MatchKind::exact) {
        pick = &c;
        break;
      }
      if (!pick) pick = &c;
    }
    if (!pick) continue;
    used[pick->b] = true;
    next = pick->b + 1;
    links.push_back({i, pick->b, pick->kind});
  }
  return links;
}

AlignmentGraph AlignmentGraph::build(const std::vector<Words>& hypotheses) {
  AlignmentGraph g;
  g.links_.resize(hypotheses.size());
  for (std::size_t s = 0; s < hypotheses.size(); ++s) g.links_[s].resize(hypotheses[s].size());
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    for (std::size_t t = s + 1; t < hypotheses.size(); ++t) {
      for (const auto& l : align_pair(hypotheses[s], hypotheses[t])) g.add(s, l.a, t, l.b, l.kind);
    }
  }
  return g;
}

void AlignmentGraph::add(std::size_t sa, std::size_t pa, std::size_t sb, std::size_t pb, MatchKind kind) {
  if (sa == sb) throw ValidationError("alignment links must join different systems");
  const auto need = std::max(sa, sb) + 1;
  if (links_.size() < need) links_.resize(need);
  for (auto [s, p] : {std::pair{sa, pa}, std::pair{sb, pb}}) {
    if (links_[s].size() <= p) links_[s].resize(p + 1);
  }
  auto insert = [&](std::size_t s, std::size_t p, Node other) {
    auto& v = links_[s][p];
    for (const auto& [n, k] : v) {
      if (n.system == other.system) throw ValidationError("position already linked to that system");
    }
    v.emplace_back(other, kind);
    std::sort(v.begin(), v.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
  };
  insert(sa, pa, Node{sb, pb});
  insert(sb, pb, Node{sa, pa});
}

const std::vector<std::pair<AlignmentGraph::Node, MatchKind>>& AlignmentGraph::linked(std::size_t system,
                                                                                     std::size_t position) const {
  static const std::vector<std::pair<Node, MatchKind>> none;
  if (system >= links_.size() || position >= links_[system].size()) return none;
  return links_[system][position];
}

std::size_t AlignmentGraph::link_count() const {
  std::size_t n = 0;
  for (const auto& s : links_) {
    for (const auto& p : s) n += p.size();
  }
  return n / 2;
}

NGramLM::NGramLM(std::size_t order, std::vector<double> lambdas) : order_(order), lambdas_(std::move(lambdas)) {
  if (order_ == 0) throw ValidationError("lm order must be positive");
  if (lambdas_.size() != order_ + 1) {
    throw ValidationError("lm_lambdas: expected " + std::to_string(order_ + 1) + " weights, got " +
                          std::to_string(lambdas_.size()));
  }
  double sum = 0.0;
  for (double l : lambdas_) {
    if (!(l >= 0.0)) throw ValidationError("lm_lambdas: weights must be non-negative");
    sum += l;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("lm_lambdas: weights sum to " + format_double(sum) + ", not 1");
  ngrams_.assign(order_, {});
  contexts_.assign(order_, {});
}

std::string NGramLM::key(const Words& context, std::size_t take) const {
  // Last `take` items of the BOS-padded context.
  std::string k;
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t back = take - i;  // distance from the end
    const std::string_view w = back <= context.size() ? std::string_view(context[context.size() - back]) : kBos;
    if (!k.empty()) k += ' ';
    k += w;
  }
  return k;
}

void NGramLM::add_sentence(const Words& words) {
  Words history;
  for (std::size_t i = 0; i <= words.size(); ++i) {
    const bool eos = i == words.size();
    const std::string w = eos ? std::string(kEos) : words[i];
    if (!eos) {
      if (w.find(' ') != std::string::npos || w.empty()) throw ValidationError("lm words must be non-empty and space-free");
      ++vocab_[w];
      ++ngrams_[0][w];
      ++unigram_total_;
    }
    for (std::size_t n = 2; n <= order_; ++n) {
      const auto ctx = key(history, n - 1);
      ++contexts_[n - 1][ctx];
      ++ngrams_[n - 1][ctx + ' ' + w];
    }
    if (!eos) history.push_back(w);
  }
}

double NGramLM::prob(const Words& context, const std::string& word) const {
  double p = lambdas_[order_] / static_cast<double>(vocab_size());
  if (unigram_total_ > 0 && word != kEos) {
    if (auto it = ngrams_[0].find(word); it != ngrams_[0].end()) {
      p += lambdas_[order_ - 1] * static_cast<double>(it->second) / static_cast<double>(unigram_total_);
    }
  }
  for (std::size_t n = 2; n <= order_; ++n) {
    const auto ctx = key(context, n - 1);
    auto c = contexts_[n - 1].find(ctx);
    if (c == contexts_[n - 1].end()) continue;
    auto it = ngrams_[n - 1].find(ctx + ' ' + word);
    if (it == ngrams_[n - 1].end()) continue;
    p += lambdas_[order_ - n] * static_cast<double>(it->second) / static_cast<double>(c->second);
  }
  return p;
}

double NGramLM::log_prob(const Words& context, const std::string& word) const { return std::log(prob(context, word)); }

std::string NGramLM::serialize() const {
  std::ostringstream os;
  os << "#ngram-lm v1\t" << order_ << '\t';
  for (std::size_t i = 0; i < lambdas_.size(); ++i) os << (i ? " " : "") << format_double(lambdas_[i]);
  os << '\n';
  for (std::size_t n = 1; n <= order_; ++n) {
    os << "#order " << n << '\n';
    for (const auto& [gram, count] : ngrams_[n - 1]) os << count << '\t' << gram << '\n';
  }
  return os.str();
}

NGramLM NGramLM::parse(std::string_view text) {
  std::istringstream is{std::string(text)};
  std::string line;
  if (!std::getline(is, line)) throw IoError("empty language model file");
  const auto head = split(line, '\t');
  if (head.size() != 3 || head[0] != "#ngram-lm v1") throw VersionMismatchError("unsupported language model header '" + line + "'");
  std::vector<double> lambdas;
  for (const auto& l : split_whitespace(head[2])) lambdas.push_back(parse_double(l, "lm lambda"));
  NGramLM lm(static_cast<std::size_t>(parse_uint(head[1], "lm order")), lambdas);
  std::size_t current = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line.rfind("#order ", 0) == 0) {
      current = static_cast<std::size_t>(parse_uint(line.substr(7), "lm order header"));
      if (current == 0 || current > lm.order_) throw IoError("language model order header out of range: " + line);
      continue;
    }
    if (current == 0) throw IoError("language model record before any '#order' header");
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw IoError("malformed language model record '" + line + "'");
    const auto count = parse_uint(line.substr(0, tab), "lm count");
    const std::string gram = line.substr(tab + 1);
    lm.ngrams_[current - 1][gram] += count;
    if (current == 1) {
      lm.vocab_[gram] += count;
      lm.unigram_total_ += count;
    } else {
      const auto sp = gram.rfind(' ');
      if (sp == std::string::npos) throw IoError("malformed n-gram '" + gram + "'");
      lm.contexts_[current - 1][gram.substr(0, sp)] += count;
    }
  }
  return lm;
}

void NGramLM::save(const std::string& path) const { write_file(path, serialize()); }

NGramLM NGramLM::load(const std::string& path) { return parse(read_file(path)); }

NGramLM train_lm(const std::vector<Words>& corpus, std::size_t order, std::vector<double> lambdas) {
  if (corpus.empty()) throw ValidationError("train_lm: empty corpus");
  NGramLM lm(order, std::move(lambdas));
  for (const auto& s : corpus) lm.add_sentence(s);
  return lm;
}

double lm_prefix_score(const NGramLM& lm, const Words& words) {
  double total = 0.0;
  Words history;
  for (const auto& w : words) {
    total += lm.log_prob(history, w);
    history.push_back(w);
  }
  return total;
}

double lm_score(const NGramLM& lm, const Words& words) {
  return lm_prefix_score(lm, words) + lm.log_prob(words, std::string(NGramLM::kEos));
}

namespace {

class Search {
 public:
  struct State {
    std::string used;  // one byte per (system, position)
    Words words;
    double score = 0.0;
    std::vector<CombineStep> trace;
  };

  Search(const HypothesisSet& set, const AlignmentGraph& graph, const NGramLM& lm, const CombineParams& params)
      : set_(set), graph_(graph), lm_(lm), params_(params) {
    std::size_t off = 0;
    for (const auto& h : set_.hypotheses) {
      offsets_.push_back(off);
      off += h.size();
    }
    total_ = off;
    for (std::size_t s = 0; s < set_.hypotheses.size(); ++s) {
      const double c = set_.confidence.empty() ? 1.0 : set_.confidence.at(s);
      if (!(c > 0.0)) throw ValidationError("system confidence weights must be positive");
      confidence_.push_back(c);
    }
  }

  State initial() const { return State{std::string(total_, '\0'), {}, 0.0, {}}; }

  bool used(const State& st, std::size_t s, std::size_t p) const { return st.used[offsets_[s] + p] != 0; }

  std::size_t frontier(const State& st, std::size_t s) const {
    std::size_t p = 0;
    while (p < set_.hypotheses[s].size() && used(st, s, p)) ++p;
    return p;
  }

  bool can_terminate(const State& st) const {
    for (std::size_t s = 0; s < set_.hypotheses.size(); ++s) {
      if (frontier(st, s) == set_.hypotheses[s].size()) return true;
    }
    return false;
  }

  double termination_score(const State& st) const {
    return params_.w_lm * lm_.log_prob(context(st), std::string(NGramLM::kEos));
  }

  std::optional<State> extend(const State& st, std::size_t s, std::size_t p) const {
    const auto& hyp = set_.hypotheses.at(s);
    if (p >= hyp.size() || used(st, s, p)) return std::nullopt;
    const std::size_t f = frontier(st, s);
    if (p < f || p > f + params_.radius) return std::nullopt;
    State next = st;
    CombineStep step;
    step.word = hyp[p];
    next.used[offsets_[s] + p] = 1;
    step.consumed.push_back({s, p, true});
    double sys = confidence_[s];
    for (const auto& [node, kind] : graph_.linked(s, p)) {
      if (used(next, node.system, node.position)) continue;
      next.used[offsets_[node.system] + node.position] = 1;
      step.consumed.push_back({node.system, node.position, false});
      sys += confidence_[node.system];
    }
    for (std::size_t t = 0; t < set_.hypotheses.size(); ++t) {
      if (holes(next, t) > params_.radius) return std::nullopt;
    }
    next.score += params_.w_lm * lm_.log_prob(context(st), step.word) + params_.w_sys * sys + params_.w_len;
    next.words.push_back(step.word);
    next.trace.push_back(std::move(step));
    return next;
  }

  std::size_t holes(const State& st, std::size_t t) const {
    const auto n = set_.hypotheses[t].size();
    std::size_t last = n;
    for (std::size_t p = n; p-- > 0;) {
      if (used(st, t, p)) {
        last = p;
        break;
      }
    }
    if (last == n) return 0;
    std::size_t h = 0;
    for (std::size_t p = 0; p < last; ++p) h += used(st, t, p) ? 0 : 1;
    return h;
  }

  Words context(const State& st) const {
    const std::size_t keep = lm_.order() > 0 ? lm_.order() - 1 : 0;
    const std::size_t from = st.words.size() > keep ? st.words.size() - keep : 0;
    return Words(st.words.begin() + static_cast<std::ptrdiff_t>(from), st.words.end());
  }

  std::string recombination_key(const State& st) const {
    std::string k = st.used;
    for (const auto& w : context(st)) {
      k += '\x1f';
      k += w;
    }
    return k;
  }

  static bool better(double sa, const Words& wa, double sb, const Words& wb) {
    if (sa != sb) return sa > sb;
    return wa < wb;
  }

  CombineResult run() const {
    std::vector<State> live{initial()};
    std::optional<CombineResult> best;
    while (!live.empty()) {
      std::unordered_map<std::string, State> next;
      for (const auto& st : live) {
        if (can_terminate(st)) {
          const double final_score = st.score + termination_score(st);
          if (!best || better(final_score, st.words, best->score, best->words)) {
            best = CombineResult{st.words, final_score, st.trace, false};
          }
        }
        for (std::size_t s = 0; s < set_.hypotheses.size(); ++s) {
          const std::size_t f = frontier(st, s);
          for (std::size_t p = f; p <= f + params_.radius && p < set_.hypotheses[s].size(); ++p) {
            auto ext = extend(st, s, p);
            if (!ext) continue;
            auto key = recombination_key(*ext);
            auto it = next.find(key);
            if (it == next.end()) {
              next.emplace(std::move(key), std::move(*ext));
            } else if (better(ext->score, ext->words, it->second.score, it->second.words)) {
              it->second = std::move(*ext);
            }
          }
        }
      }
      live.clear();
      for (auto& [k, st] : next) live.push_back(std::move(st));
      std::sort(live.begin(), live.end(), [](const State& a, const State& b) {
        if (a.score != b.score || a.words != b.words) return better(a.score, a.words, b.score, b.words);
        return a.used < b.used;
      });
      if (params_.beam_size > 0 && live.size() > params_.beam_size) live.resize(params_.beam_size);
    }
    if (best) return *best;
    CombineResult fb;
    std::size_t pick = 0;
    for (std::size_t s = 1; s < confidence_.size(); ++s) {
      if (confidence_[s] > confidence_[pick]) pick = s;
    }
    fb.words = set_.hypotheses[pick];
    fb.score = -std::numeric_limits<double>::infinity();
    fb.fallback = true;
    return fb;
  }

 private:
  const HypothesisSet& set_;
  const AlignmentGraph& graph_;
  const NGramLM& lm_;
  const CombineParams& params_;
  std::vector<std::size_t> offsets_;
  std::vector<double> confidence_;
  std::size_t total_ = 0;
};

void check_set(const HypothesisSet& set) {
  if (set.hypotheses.empty()) throw ValidationError("combine: empty hypothesis set");
  if (!set.confidence.empty() && set.confidence.size() != set.hypotheses.size()) {
    throw ValidationError("combine: one confidence weight per system is required");
  }
}

}  // namespace

CombineResult combine_search(const HypothesisSet& set, const AlignmentGraph& graph, const NGramLM& lm,
                             const CombineParams& params) {
  check_set(set);
  return Search(set, graph, lm, params).run();
}

CombineResult replay(const HypothesisSet& set, const AlignmentGraph& graph, const NGramLM& lm,
                     const CombineParams& params, const std::vector<std::pair<std::size_t, std::size_t>>& picks) {
  check_set(set);
  Search search(set, graph, lm, params);
  auto st = search.initial();
  for (const auto& [s, p] : picks) {
    auto next = search.extend(st, s, p);
    if (!next) throw ValidationError("replay: pick (" + std::to_string(s) + ", " + std::to_string(p) + ") is not allowed");
    st = std::move(*next);
  }
  if (!search.can_terminate(st)) throw ValidationError("replay: no system is fully consumed");
  return CombineResult{st.words, st.score + search.termination_score(st), st.trace, false};
}

CombineResult combine(const HypothesisSet& set, const AlignmentGraph& graph, const NGramLM& lm,
                      const CombineParams& params) {
  check_set(set);
  const auto& first = set.hypotheses.front();
  const bool unanimous = std::all_of(set.hypotheses.begin(), set.hypotheses.end(),
                                     [&](const Words& h) { return h == first; });
  if (unanimous) {
    std::vector<std::pair<std::size_t, std::size_t>> picks;
    for (std::size_t p = 0; p < first.size(); ++p) picks.emplace_back(0, p);
    return replay(set, graph, lm, params, picks);
  }
  return combine_search(set, graph, lm, params);
}

std::vector<std::string> combine_corpus(const std::vector<std::vector<std::string>>& system_lines,
                                        const NGramLM& lm, const CombineParams& params,
                                        const std::vector<double>& confidence) {
  if (system_lines.empty()) throw ValidationError("combine: no hypothesis files");
  const std::size_t n = system_lines.front().size();
  for (const auto& s : system_lines) {
    if (s.size() != n) throw ValidationError("combine: hypothesis files differ in line count");
  }
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    HypothesisSet set;
    for (const auto& s : system_lines) set.hypotheses.push_back(split_whitespace(s[i]));
    set.confidence = confidence;
    const auto graph = AlignmentGraph::build(set.hypotheses);
    out.push_back(join(combine(set, graph, lm, params).words, " "));
  }
  return out;
}

}  // namespace bmtl::combine
