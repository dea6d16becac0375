/* relm - reusing a monolingual language model for low-resource translation.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *   http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "relm/bpe.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <thread>

namespace relm {

namespace {

constexpr const char* kEndWord = "</w>";
constexpr const char* kContinuation = "@@";

std::vector<std::string> word_symbols(const std::string& word) {
  auto symbols = utf8_codepoints(word);
  if (symbols.empty())
    fail(ErrorCode::Data, "apply_bpe: empty word");
  symbols.back() += kEndWord;
  return symbols;
}

std::string pair_key(const std::string& left, const std::string& right) {
  std::string key;
  key.reserve(left.size() + right.size() + 1);
  key += left;
  key += ' ';
  key += right;
  return key;
}

}  // namespace

MergeTable::MergeTable(
    std::vector<std::pair<std::string, std::string>> merges) {
  for (auto& [l, r] : merges) append(std::move(l), std::move(r));
}

int MergeTable::rank(const std::string& left, const std::string& right) const {
  auto it = ranks_.find(pair_key(left, right));
  return it == ranks_.end() ? -1 : it->second;
}

void MergeTable::append(std::string left, std::string right) {
  std::string key = pair_key(left, right);
  if (ranks_.count(key))
    fail(ErrorCode::Config, "duplicate merge rule: " + key);
  ranks_.emplace(std::move(key), static_cast<int>(merges_.size()));
  merges_.emplace_back(std::move(left), std::move(right));
}

void MergeTable::save(const std::string& path) const {
  std::ostringstream out;
  for (const auto& [l, r] : merges_) out << l << ' ' << r << '\n';
  write_file(path, out.str());
}

MergeTable MergeTable::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open merge table: " + path);
  MergeTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t sp = line.find(' ');
    if (sp == std::string::npos || sp == 0 || sp + 1 == line.size())
      fail(ErrorCode::Io, path + ": malformed merge on line " +
                              std::to_string(line_no));
    table.append(line.substr(0, sp), line.substr(sp + 1));
  }
  return table;
}

MergeTable learn_bpe(const std::map<std::string, std::int64_t>& word_freqs,
                     std::size_t num_merges) {
  if (word_freqs.empty())
    fail(ErrorCode::Data, "learn_bpe: no words");
  for (const auto& [w, c] : word_freqs)
    if (c <= 0)
      fail(ErrorCode::Data, "learn_bpe: nonpositive count for word '" + w +
                                "'");

  // Working representation: one symbol sequence per distinct word.
  std::vector<std::vector<std::string>> words;
  std::vector<std::int64_t> counts;
  words.reserve(word_freqs.size());
  for (const auto& [w, c] : word_freqs) {
    words.push_back(word_symbols(w));
    counts.push_back(c);
  }

  MergeTable table;
  using Pair = std::pair<std::string, std::string>;

  for (std::size_t step = 0; step < num_merges; ++step) {
    // Count every adjacent pair, weighted by word frequency.
    std::map<Pair, std::int64_t> pair_counts;
    for (std::size_t w = 0; w < words.size(); ++w) {
      const auto& sym = words[w];
      for (std::size_t i = 0; i + 1 < sym.size(); ++i)
        pair_counts[{sym[i], sym[i + 1]}] += counts[w];
    }
    if (pair_counts.empty()) break;

    // Highest count wins; ties break on lexicographic (left, right), which
    // std::map iteration order hands us for free.
    const Pair* best = nullptr;
    std::int64_t best_count = 0;
    for (const auto& [p, c] : pair_counts) {
      if (c > best_count) {
        best = &p;
        best_count = c;
      }
    }

    const std::string merged = best->first + best->second;
    for (auto& sym : words) {
      if (sym.size() < 2) continue;
      std::vector<std::string> out;
      out.reserve(sym.size());
      std::size_t i = 0;
      while (i < sym.size()) {
        if (i + 1 < sym.size() && sym[i] == best->first &&
            sym[i + 1] == best->second) {
          out.push_back(merged);
          i += 2;
        } else {
          out.push_back(sym[i]);
          ++i;
        }
      }
      sym = std::move(out);
    }
    table.append(best->first, best->second);
  }
  return table;
}

std::vector<std::string> apply_bpe(const MergeTable& merges,
                                   const std::string& word) {
  auto symbols = word_symbols(word);

  while (symbols.size() > 1) {
    // The earliest-learned applicable rule fires next.
    int best_rank = -1;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      int r = merges.rank(symbols[i], symbols[i + 1]);
      if (r >= 0 && (best_rank < 0 || r < best_rank)) best_rank = r;
    }
    if (best_rank < 0) break;

    const auto& [left, right] = merges.merges()[best_rank];
    const std::string merged = left + right;
    std::vector<std::string> out;
    out.reserve(symbols.size());
    std::size_t i = 0;
    while (i < symbols.size()) {
      if (i + 1 < symbols.size() && symbols[i] == left &&
          symbols[i + 1] == right) {
        out.push_back(merged);
        i += 2;
      } else {
        out.push_back(symbols[i]);
        ++i;
      }
    }
    symbols = std::move(out);
  }

  // Strip the end-of-word marker and mark non-final pieces.
  std::string& last = symbols.back();
  last.erase(last.size() - 4);  // "</w>"
  std::vector<std::string> tokens;
  tokens.reserve(symbols.size());
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (i + 1 < symbols.size())
      tokens.push_back(symbols[i] + kContinuation);
    else
      tokens.push_back(symbols[i]);
  }
  return tokens;
}

std::vector<std::string> apply_bpe_sentence(
    const MergeTable& merges, const std::vector<std::string>& words) {
  std::vector<std::string> out;
  out.reserve(words.size() * 2);
  for (const auto& w : words) {
    auto pieces = apply_bpe(merges, w);
    out.insert(out.end(), pieces.begin(), pieces.end());
  }
  return out;
}

TokenizedCorpus segment_corpus(const MergeTable& merges,
                               const TokenizedCorpus& words, int threads) {
  TokenizedCorpus out;
  out.language = words.language;
  out.token_kind = TokenKind::Subword;
  out.sentences.resize(words.sentences.size());

  auto run = [&](std::size_t begin, std::size_t end) {
    // Cache per distinct word; each worker keeps its own cache so results
    // stay identical to the sequential pass.
    std::unordered_map<std::string, std::vector<std::string>> cache;
    for (std::size_t s = begin; s < end; ++s) {
      auto& dst = out.sentences[s];
      for (const auto& w : words.sentences[s]) {
        auto it = cache.find(w);
        if (it == cache.end())
          it = cache.emplace(w, apply_bpe(merges, w)).first;
        dst.insert(dst.end(), it->second.begin(), it->second.end());
      }
    }
  };

  const std::size_t n = words.sentences.size();
  if (threads <= 1 || n < 1024) {
    run(0, n);
  } else {
    std::size_t workers = std::min<std::size_t>(threads, 16);
    std::vector<std::thread> pool;
    std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t t = 0; t < workers; ++t) {
      std::size_t begin = t * chunk;
      std::size_t end = std::min(n, begin + chunk);
      if (begin >= end) break;
      pool.emplace_back(run, begin, end);
    }
    for (auto& th : pool) th.join();
  }
  return out;
}

std::map<std::string, std::int64_t> word_frequencies(
    const TokenizedCorpus& corpus) {
  std::map<std::string, std::int64_t> freqs;
  for (const auto& sentence : corpus.sentences)
    for (const auto& w : sentence) ++freqs[w];
  return freqs;
}

MergeTable learn_joint_bpe(const std::vector<const TokenizedCorpus*>& corpora,
                           double alpha, std::size_t num_merges,
                           std::uint64_t seed, std::size_t total_samples) {
  if (corpora.empty()) fail(ErrorCode::Data, "learn_joint_bpe: no corpora");

  std::vector<const TokenizedCorpus*> sorted(corpora);
  std::sort(sorted.begin(), sorted.end(), [](const auto* a, const auto* b) {
    return a->language < b->language;
  });

  std::size_t min_size = SIZE_MAX;
  std::vector<std::pair<LanguageTag, std::size_t>> counts;
  for (const auto* c : sorted) {
    if (c->sentences.empty())
      fail(ErrorCode::Data,
           "learn_joint_bpe: corpus '" + c->language.id + "' is empty");
    counts.emplace_back(c->language, c->sentences.size());
    min_size = std::min(min_size, c->sentences.size());
  }
  if (total_samples == 0) total_samples = min_size * sorted.size();

  SamplingDistribution dist = make_sampler(counts, alpha);

  // Stratified draw: each language contributes round(q_i * total) sentences
  // (largest-remainder rounding), taken by cycling a seeded permutation.
  std::vector<std::size_t> take(sorted.size(), 0);
  {
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      double exact = dist.probabilities[i].second *
                     static_cast<double>(total_samples);
      take[i] = static_cast<std::size_t>(exact);
      assigned += take[i];
      remainders.emplace_back(exact - static_cast<double>(take[i]), i);
    }
    std::sort(remainders.begin(), remainders.end(), [](auto& a, auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    for (std::size_t k = 0; assigned < total_samples; ++k, ++assigned)
      ++take[remainders[k % remainders.size()].second];
  }

  Rng rng(seed);
  std::map<std::string, std::int64_t> pooled;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const auto& sentences = sorted[i]->sentences;
    std::vector<std::size_t> order(sentences.size());
    std::uint64_t epoch = 0;
    std::size_t cursor = order.size();  // trigger shuffle on first use
    for (std::size_t k = 0; k < take[i]; ++k) {
      if (cursor >= order.size()) {
        for (std::size_t j = 0; j < order.size(); ++j) order[j] = j;
        auto stream = rng.stream(
            "joint_bpe.shuffle." + sorted[i]->language.id, epoch++);
        stream.shuffle(order);
        cursor = 0;
      }
      for (const auto& w : sentences[order[cursor++]]) ++pooled[w];
    }
  }
  return learn_bpe(pooled, num_merges);
}

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

namespace {
const char* kSpecialTokens[Vocabulary::kNumSpecial] = {"<pad>", "<unk>", "<s>",
                                                       "</s>", "<mask>"};
}

const char* segment_name(Segment s) {
  switch (s) {
    case Segment::Special: return "SPECIAL";
    case Segment::Pretrained: return "PRETRAINED";
    case Segment::Extension: return "EXTENSION";
  }
  return "?";
}

Vocabulary::Vocabulary() {
  for (int i = 0; i < kNumSpecial; ++i) {
    tokens_.emplace_back(kSpecialTokens[i]);
    freq_.push_back(0);
    index_.emplace(kSpecialTokens[i], i);
  }
  pretrained_end_ = kNumSpecial;
}

bool Vocabulary::is_special(const std::string& token) {
  for (const char* s : kSpecialTokens)
    if (token == s) return true;
  return false;
}

Vocabulary Vocabulary::build(const TokenizedCorpus& words,
                             const MergeTable& merges) {
  if (words.sentences.empty())
    fail(ErrorCode::Data, "build_vocabulary: empty corpus");

  std::unordered_map<std::string, std::int64_t> counts;
  std::unordered_map<std::string, std::vector<std::string>> cache;
  for (const auto& sentence : words.sentences) {
    for (const auto& w : sentence) {
      auto it = cache.find(w);
      if (it == cache.end()) it = cache.emplace(w, apply_bpe(merges, w)).first;
      for (const auto& piece : it->second) ++counts[piece];
    }
  }

  std::vector<std::pair<std::string, std::int64_t>> ranked(counts.begin(),
                                                           counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocabulary vocab;
  for (auto& [token, freq] : ranked)
    vocab.append(token, freq, Segment::Pretrained);
  return vocab;
}

const std::string& Vocabulary::token(int index) const {
  if (index < 0 || index >= size())
    fail(ErrorCode::Vocab, "token index out of range: " +
                               std::to_string(index));
  return tokens_[index];
}

int Vocabulary::index_of(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? -1 : it->second;
}

int Vocabulary::index_or_unk(const std::string& token) const {
  int idx = index_of(token);
  return idx < 0 ? kUnk : idx;
}

bool Vocabulary::contains(const std::string& token) const {
  return index_.count(token) > 0;
}

Segment Vocabulary::segment(int index) const {
  if (index < 0 || index >= size())
    fail(ErrorCode::Vocab, "segment index out of range");
  if (index < kNumSpecial) return Segment::Special;
  if (index < pretrained_end_) return Segment::Pretrained;
  return Segment::Extension;
}

void Vocabulary::append(const std::string& token, std::int64_t freq,
                        Segment segment) {
  if (segment == Segment::Special)
    fail(ErrorCode::Vocab, "cannot append special tokens");
  if (index_.count(token))
    fail(ErrorCode::Vocab, "duplicate vocabulary token: " + token);
  if (segment == Segment::Pretrained &&
      pretrained_end_ != static_cast<int>(tokens_.size()))
    fail(ErrorCode::Vocab,
         "pretrained entries cannot follow extension entries");
  index_.emplace(token, static_cast<int>(tokens_.size()));
  tokens_.push_back(token);
  freq_.push_back(freq);
  if (segment == Segment::Pretrained) ++pretrained_end_;
}

void Vocabulary::save(const std::string& path) const {
  std::ostringstream out;
  for (int i = 0; i < size(); ++i)
    out << tokens_[i] << ' ' << i << ' ' << freq_[i] << ' '
        << segment_name(segment(i)) << '\n';
  write_file(path, out.str());
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open vocabulary: " + path);

  Vocabulary vocab;
  std::string line;
  std::size_t line_no = 0;
  int expect = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_ws(line);
    if (fields.size() != 4)
      fail(ErrorCode::Io, path + ": malformed vocabulary line " +
                              std::to_string(line_no));
    const std::string& token = fields[0];
    int index = std::stoi(fields[1]);
    std::int64_t freq = std::stoll(fields[2]);
    const std::string& seg = fields[3];
    if (index != expect)
      fail(ErrorCode::Io, path + ": non-dense index on line " +
                              std::to_string(line_no));
    if (index < kNumSpecial) {
      if (token != kSpecialTokens[index] || seg != "SPECIAL")
        fail(ErrorCode::Io, path + ": bad special layout on line " +
                                std::to_string(line_no));
    } else if (seg == "PRETRAINED") {
      vocab.append(token, freq, Segment::Pretrained);
    } else if (seg == "EXTENSION") {
      vocab.append(token, freq, Segment::Extension);
    } else {
      fail(ErrorCode::Io, path + ": unknown segment '" + seg + "'");
    }
    ++expect;
  }
  if (expect < kNumSpecial)
    fail(ErrorCode::Io, path + ": vocabulary misses special tokens");
  return vocab;
}

bool Vocabulary::operator==(const Vocabulary& o) const {
  return tokens_ == o.tokens_ && freq_ == o.freq_ &&
         pretrained_end_ == o.pretrained_end_;
}

ExtensionReport extension_report(const Vocabulary& v_hmr,
                                 const Vocabulary& v_lmr) {
  ExtensionReport report;
  report.size_hmr = v_hmr.size() - Vocabulary::kNumSpecial;
  report.size_lmr = v_lmr.size() - Vocabulary::kNumSpecial;
  for (int i = Vocabulary::kNumSpecial; i < v_lmr.size(); ++i)
    if (v_hmr.contains(v_lmr.token(i))) ++report.overlap;
  report.new_items = report.size_lmr - report.overlap;
  return report;
}

std::pair<Vocabulary, ExtensionReport> extend_vocabulary(
    const Vocabulary& v_hmr, const Vocabulary& v_lmr) {
  ExtensionReport report = extension_report(v_hmr, v_lmr);

  Vocabulary out = v_hmr;

  // New tokens ordered by (v_lmr frequency desc, token asc).
  std::vector<int> fresh;
  for (int i = Vocabulary::kNumSpecial; i < v_lmr.size(); ++i)
    if (!v_hmr.contains(v_lmr.token(i))) fresh.push_back(i);
  std::sort(fresh.begin(), fresh.end(), [&](int a, int b) {
    if (v_lmr.frequency(a) != v_lmr.frequency(b))
      return v_lmr.frequency(a) > v_lmr.frequency(b);
    return v_lmr.token(a) < v_lmr.token(b);
  });
  for (int i : fresh)
    out.append(v_lmr.token(i), v_lmr.frequency(i), Segment::Extension);

  return {std::move(out), report};
}

SegmentationStats segmentation_stats(const TokenizedCorpus& words,
                                     const MergeTable& merges) {
  if (words.sentences.empty())
    fail(ErrorCode::Data, "segmentation_stats: empty corpus");

  struct Entry {
    std::size_t pieces;
    std::size_t chars;
  };
  std::unordered_map<std::string, Entry> cache;

  SegmentationStats stats;
  std::int64_t total_words = 0;
  std::int64_t char_split_words = 0;
  for (const auto& sentence : words.sentences) {
    for (const auto& w : sentence) {
      auto it = cache.find(w);
      if (it == cache.end()) {
        Entry e;
        e.pieces = apply_bpe(merges, w).size();
        e.chars = utf8_length(w);
        it = cache.emplace(w, e).first;
      }
      ++total_words;
      stats.token_count += static_cast<std::int64_t>(it->second.pieces);
      if (it->second.pieces == it->second.chars) ++char_split_words;
    }
  }
  stats.fertility = static_cast<double>(stats.token_count) /
                    static_cast<double>(total_words);
  stats.char_split_rate = static_cast<double>(char_split_words) /
                          static_cast<double>(total_words);
  return stats;
}

}  // namespace relm
