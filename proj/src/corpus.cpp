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
#include "relm/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace relm {

namespace {

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
}

// The punctuation class of the 13a rules: {-~ [-` space-& (-+ :-@ and /.
// Bytes >= 0x80 (UTF-8 continuation/lead bytes) are never in it.
bool in_symbol_class(unsigned char c) {
  return (c >= 0x7B && c <= 0x7E) || (c >= 0x5B && c <= 0x60) ||
         (c >= 0x20 && c <= 0x26) || (c >= 0x28 && c <= 0x2B) ||
         (c >= 0x3A && c <= 0x40) || c == 0x2F;
}

bool is_digit(unsigned char c) { return c >= '0' && c <= '9'; }
bool is_period_comma(unsigned char c) { return c == '.' || c == ','; }

// s/([^0-9])([\.,])/$1 $2 /g with scanning resuming after each match, which
// is what both the Perl and Python engines do.
std::string split_before_punct(const std::string& s) {
  std::string out;
  out.reserve(s.size() * 2);
  std::size_t i = 0;
  while (i < s.size()) {
    if (i + 1 < s.size() && !is_digit(s[i]) && is_period_comma(s[i + 1])) {
      out += s[i];
      out += ' ';
      out += s[i + 1];
      out += ' ';
      i += 2;
    } else {
      out += s[i];
      ++i;
    }
  }
  return out;
}

// s/([\.,])([^0-9])/ $1 $2/g
std::string split_after_punct(const std::string& s) {
  std::string out;
  out.reserve(s.size() * 2);
  std::size_t i = 0;
  while (i < s.size()) {
    if (i + 1 < s.size() && is_period_comma(s[i]) && !is_digit(s[i + 1])) {
      out += ' ';
      out += s[i];
      out += ' ';
      out += s[i + 1];
      i += 2;
    } else {
      out += s[i];
      ++i;
    }
  }
  return out;
}

// s/([0-9])(-)/$1 $2 /g
std::string split_dash_after_digit(const std::string& s) {
  std::string out;
  out.reserve(s.size() * 2);
  std::size_t i = 0;
  while (i < s.size()) {
    if (i + 1 < s.size() && is_digit(s[i]) && s[i + 1] == '-') {
      out += s[i];
      out += " - ";
      i += 2;
    } else {
      out += s[i];
      ++i;
    }
  }
  return out;
}

}  // namespace

std::vector<std::string> tokenize_13a(std::string_view line) {
  std::string norm(line);

  // Language-independent normalization.
  replace_all(norm, "<skipped>", "");
  replace_all(norm, "-\n", "");
  replace_all(norm, "\n", " ");
  replace_all(norm, "&quot;", "\"");
  replace_all(norm, "&amp;", "&");
  replace_all(norm, "&lt;", "<");
  replace_all(norm, "&gt;", ">");

  // Pad, then space out punctuation (case is preserved).
  std::string padded;
  padded.reserve(norm.size() * 3 + 2);
  padded += ' ';
  for (unsigned char c : norm) {
    if (in_symbol_class(c)) {
      padded += ' ';
      padded += static_cast<char>(c);
      padded += ' ';
    } else {
      padded += static_cast<char>(c);
    }
  }
  padded += ' ';

  padded = split_before_punct(padded);
  padded = split_after_punct(padded);
  padded = split_dash_after_digit(padded);

  return split_ws(padded);
}

RawCorpus load_corpus(const std::string& path, const LanguageTag& language) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open corpus file: " + path);

  RawCorpus corpus;
  corpus.language = language;
  corpus.source_path = path;

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!utf8_valid(line))
      fail(ErrorCode::Decode,
           path + ": invalid UTF-8 on line " + std::to_string(line_no));
    bool blank = true;
    for (char c : line)
      if (c != ' ' && c != '\t') {
        blank = false;
        break;
      }
    if (blank) continue;
    corpus.lines.push_back(line);
  }
  return corpus;
}

TokenizedCorpus tokenize_corpus(const RawCorpus& raw) {
  TokenizedCorpus out;
  out.language = raw.language;
  out.token_kind = TokenKind::Word;
  out.sentences.reserve(raw.lines.size());
  for (const std::string& line : raw.lines) {
    auto tokens = tokenize_13a(line);
    if (!tokens.empty()) out.sentences.push_back(std::move(tokens));
  }
  return out;
}

FilterResult filter_by_length(const TokenizedCorpus& corpus,
                              std::size_t max_len) {
  if (max_len == 0)
    fail(ErrorCode::Config, "filter_by_length: max_len must be positive");

  FilterResult result;
  result.corpus.language = corpus.language;
  result.corpus.token_kind = corpus.token_kind;
  for (const auto& sentence : corpus.sentences) {
    if (sentence.size() <= max_len)
      result.corpus.sentences.push_back(sentence);
    else
      ++result.removed;
  }
  result.emptied = !corpus.sentences.empty() && result.corpus.sentences.empty();
  return result;
}

double SamplingDistribution::probability_of(const LanguageTag& tag) const {
  for (const auto& [t, p] : probabilities)
    if (t == tag) return p;
  fail(ErrorCode::Config, "unknown language tag: " + tag.id);
}

SamplingDistribution make_sampler(
    const std::vector<std::pair<LanguageTag, std::size_t>>& counts,
    double alpha) {
  if (counts.empty()) fail(ErrorCode::Config, "make_sampler: no languages");
  if (alpha < 0.0 || alpha > 1.0)
    fail(ErrorCode::Config, "make_sampler: alpha must be in [0,1]");

  std::vector<std::pair<LanguageTag, std::size_t>> sorted(counts);
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  double total = 0.0;
  for (const auto& [tag, n] : sorted) {
    if (n == 0)
      fail(ErrorCode::Config, "make_sampler: language '" + tag.id +
                                  "' has no sentences");
    total += static_cast<double>(n);
  }

  SamplingDistribution dist;
  dist.alpha = alpha;
  double denom = 0.0;
  std::vector<double> powered(sorted.size());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    double p = static_cast<double>(sorted[i].second) / total;
    powered[i] = std::pow(p, alpha);
    denom += powered[i];
  }
  for (std::size_t i = 0; i < sorted.size(); ++i)
    dist.probabilities.emplace_back(sorted[i].first, powered[i] / denom);
  return dist;
}

BatchSampler::BatchSampler(std::vector<const TokenizedCorpus*> corpora,
                           SamplingDistribution dist, std::size_t batch_size,
                           std::uint64_t seed)
    : batch_size_(batch_size),
      rng_(seed),
      lang_choice_(rng_.stream("sampling.lang_choice")) {
  if (batch_size_ == 0)
    fail(ErrorCode::Config, "sample_batches: batch_size must be positive");

  for (const TokenizedCorpus* c : corpora) {
    if (c->sentences.empty())
      fail(ErrorCode::Data,
           "sample_batches: corpus '" + c->language.id + "' is empty");
    LangState st;
    st.corpus = c;
    st.probability = dist.probability_of(c->language);
    langs_.push_back(std::move(st));
  }
  std::sort(langs_.begin(), langs_.end(), [](const auto& a, const auto& b) {
    return a.corpus->language < b.corpus->language;
  });
  for (auto& st : langs_) reshuffle(st);
}

void BatchSampler::reshuffle(LangState& st) {
  st.order.resize(st.corpus->sentences.size());
  for (std::size_t i = 0; i < st.order.size(); ++i) st.order[i] = i;
  auto stream =
      rng_.stream("sampling.shuffle." + st.corpus->language.id, st.epoch);
  stream.shuffle(st.order);
  st.cursor = 0;
  ++st.epoch;
}

Batch BatchSampler::next() {
  // Pick the language for this batch.
  double u = lang_choice_.next_double();
  std::size_t pick = langs_.size() - 1;
  double acc = 0.0;
  for (std::size_t i = 0; i < langs_.size(); ++i) {
    acc += langs_[i].probability;
    if (u < acc) {
      pick = i;
      break;
    }
  }
  LangState& st = langs_[pick];

  Batch batch;
  batch.language = st.corpus->language;
  batch.sentence_ids.reserve(batch_size_);
  for (std::size_t k = 0; k < batch_size_; ++k) {
    if (st.cursor >= st.order.size()) reshuffle(st);
    batch.sentence_ids.push_back(st.order[st.cursor++]);
  }
  return batch;
}

}  // namespace relm
