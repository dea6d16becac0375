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
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "relm/corpus.hpp"

namespace relm {

/// Ordered BPE merge rules. Word-final symbols carry a "</w>" suffix during
/// learning and application; the marker never leaks into emitted tokens.
class MergeTable {
 public:
  MergeTable() = default;
  explicit MergeTable(std::vector<std::pair<std::string, std::string>> merges);

  const std::vector<std::pair<std::string, std::string>>& merges() const {
    return merges_;
  }
  std::size_t size() const { return merges_.size(); }

  /// Rank of a pair (0 = learned first), or -1 when the pair is not a rule.
  int rank(const std::string& left, const std::string& right) const;

  void append(std::string left, std::string right);

  /// One "left right" line per merge, learning order; round-trips exactly.
  void save(const std::string& path) const;
  static MergeTable load(const std::string& path);

 private:
  std::vector<std::pair<std::string, std::string>> merges_;
  std::unordered_map<std::string, int> ranks_;  // key: left + ' ' + right
};

/// Learns `num_merges` merge rules from word frequencies with the classic
/// highest-count-first procedure; ties break on lexicographic (left, right).
/// Stops early when no adjacent pair remains.
MergeTable learn_bpe(const std::map<std::string, std::int64_t>& word_freqs,
                     std::size_t num_merges);

/// Segments one word. Non-final subwords carry the "@@" continuation marker.
std::vector<std::string> apply_bpe(const MergeTable& merges,
                                   const std::string& word);

std::vector<std::string> apply_bpe_sentence(
    const MergeTable& merges, const std::vector<std::string>& words);

/// Word-level corpus -> subword corpus. Honors `threads` (1 = sequential);
/// output order always equals sequential order.
TokenizedCorpus segment_corpus(const MergeTable& merges,
                               const TokenizedCorpus& words, int threads = 1);

/// Joint BPE over several languages: sentence counts are stratified by the
/// alpha-distribution (largest-remainder rounding of q_i * total, with
/// total = min corpus size * number of languages unless overridden), drawn
/// by cycling each language's seeded permutation, pooled, then learned.
MergeTable learn_joint_bpe(const std::vector<const TokenizedCorpus*>& corpora,
                           double alpha, std::size_t num_merges,
                           std::uint64_t seed, std::size_t total_samples = 0);

/// Collects word frequencies of a word-level corpus (deterministic order).
std::map<std::string, std::int64_t> word_frequencies(
    const TokenizedCorpus& corpus);

enum class Segment { Special, Pretrained, Extension };

const char* segment_name(Segment s);

/// Token <-> dense-index bijection with three contiguous segments. The five
/// specials always occupy indices 0..4; pretrained indices never move once
/// assigned; extension tokens append after them.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;  // "<s>"
  static constexpr int kEos = 3;  // "</s>"
  static constexpr int kMask = 4;
  static constexpr int kNumSpecial = 5;

  Vocabulary();  // specials only

  /// Segments every word of a word-level corpus and ranks distinct subwords
  /// by (frequency descending, token ascending) after the specials.
  static Vocabulary build(const TokenizedCorpus& words,
                          const MergeTable& merges);

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(int index) const;
  int index_of(const std::string& token) const;  // -1 when absent
  int index_or_unk(const std::string& token) const;
  bool contains(const std::string& token) const;
  std::int64_t frequency(int index) const { return freq_[index]; }

  Segment segment(int index) const;
  int pretrained_end() const { return pretrained_end_; }
  int extension_size() const { return size() - pretrained_end_; }

  void append(const std::string& token, std::int64_t freq, Segment segment);

  static bool is_special(const std::string& token);

  /// One "token index frequency segment" line per entry; round-trips exactly.
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  bool operator==(const Vocabulary& o) const;

 private:
  std::vector<std::string> tokens_;
  std::vector<std::int64_t> freq_;
  std::unordered_map<std::string, int> index_;
  int pretrained_end_ = kNumSpecial;
};

struct ExtensionReport {
  std::int64_t size_hmr = 0;  // non-special entries of the pretrained vocab
  std::int64_t size_lmr = 0;
  std::int64_t overlap = 0;
  std::int64_t new_items = 0;  // = size_lmr - overlap
};

/// Union vocabulary: every v_hmr entry keeps its index; tokens only in v_lmr
/// append to the extension segment ordered by (v_lmr frequency desc, token
/// asc).
std::pair<Vocabulary, ExtensionReport> extend_vocabulary(
    const Vocabulary& v_hmr, const Vocabulary& v_lmr);

/// The counting half of extend_vocabulary, without building the union.
ExtensionReport extension_report(const Vocabulary& v_hmr,
                                 const Vocabulary& v_lmr);

struct SegmentationStats {
  double fertility = 0.0;        // mean subwords per word occurrence
  double char_split_rate = 0.0;  // words split into as many pieces as chars
  std::int64_t token_count = 0;  // total subwords produced
};

SegmentationStats segmentation_stats(const TokenizedCorpus& words,
                                     const MergeTable& merges);

}  // namespace relm
