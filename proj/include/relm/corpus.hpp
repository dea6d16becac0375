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
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "relm/common.hpp"
#include "relm/rng.hpp"

namespace relm {

enum class LangRole { HMR, LMR };

struct LanguageTag {
  std::string id;  // short label, e.g. "en", "hmr"
  LangRole role = LangRole::HMR;

  bool operator==(const LanguageTag& o) const { return id == o.id; }
  bool operator<(const LanguageTag& o) const { return id < o.id; }
};

struct RawCorpus {
  LanguageTag language;
  std::vector<std::string> lines;  // nonempty, order as on disk
  std::string source_path;
};

enum class TokenKind { Word, Subword };

struct TokenizedCorpus {
  LanguageTag language;
  std::vector<std::vector<std::string>> sentences;
  TokenKind token_kind = TokenKind::Word;
};

/// mteval-v13a tokenization, byte-for-byte the rule set used by the BLEU
/// signature this project reports (mixed case, Western punctuation rules):
///   1. strip <skipped> tags, join hyphenated line breaks, unescape
///      &quot; &amp; &lt; &gt;
///   2. pad the line with one space on each side
///   3. space out every ASCII char in the classes {-~ [-` space-& (-+ :-@ /
///   4. split "." and "," off a non-digit neighbour (before-pass, then
///      after-pass)
///   5. split "-" preceded by a digit
///   6. collapse whitespace runs
/// Empty input gives an empty token list.
std::vector<std::string> tokenize_13a(std::string_view line);

/// Loads a one-sentence-per-line UTF-8 file. Blank and whitespace-only lines
/// are dropped; invalid UTF-8 reports the offending line number.
RawCorpus load_corpus(const std::string& path, const LanguageTag& language);

/// 13a-tokenizes every line into a word-level corpus. Lines that tokenize to
/// nothing are dropped.
TokenizedCorpus tokenize_corpus(const RawCorpus& raw);

struct FilterResult {
  TokenizedCorpus corpus;
  std::size_t removed = 0;
  bool emptied = false;  // warning: nothing survived
};

/// Drops (never truncates) subword sentences longer than max_len tokens.
FilterResult filter_by_length(const TokenizedCorpus& corpus,
                              std::size_t max_len);

/// Temperature-based multilingual sampling distribution:
/// q_i = p_i^alpha / sum_j p_j^alpha with p_i the sentence-count share.
struct SamplingDistribution {
  double alpha = 0.5;
  // Sorted by tag id; probabilities sum to 1.
  std::vector<std::pair<LanguageTag, double>> probabilities;

  double probability_of(const LanguageTag& tag) const;
};

SamplingDistribution make_sampler(
    const std::vector<std::pair<LanguageTag, std::size_t>>& counts,
    double alpha);

struct Batch {
  LanguageTag language;
  std::vector<std::size_t> sentence_ids;  // indices into that corpus
};

/// Deterministic batch stream: the language of each batch is drawn from the
/// sampling distribution; within a language, sentences cycle through
/// per-epoch seeded permutations. The whole stream is a pure function of
/// (corpora, distribution, batch_size, seed).
class BatchSampler {
 public:
  BatchSampler(std::vector<const TokenizedCorpus*> corpora,
               SamplingDistribution dist, std::size_t batch_size,
               std::uint64_t seed);

  Batch next();

 private:
  struct LangState {
    const TokenizedCorpus* corpus;
    double probability;
    std::vector<std::size_t> order;
    std::size_t cursor = 0;
    std::uint64_t epoch = 0;
  };

  void reshuffle(LangState& st);

  std::vector<LangState> langs_;  // sorted by tag id
  std::size_t batch_size_;
  Rng rng_;
  RngStream lang_choice_;
};

}  // namespace relm
