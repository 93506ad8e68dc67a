#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace redcell {

/// Greedy longest-match tokenizer over an explicit string vocabulary.
///
/// Decoding is plain concatenation: every token carries its own spacing
/// (word tokens are stored with a leading space, single characters bare).
/// Encoding skips bytes no vocabulary entry matches, so it is total on
/// arbitrary text. decode(encode(s)) == s only when the vocabulary covers
/// s; encode(decode(ids)) may legitimately differ from ids when tokens
/// merge, which is exactly the round-trip drift the optimizer discards.
class ToyTokenizer {
public:
    explicit ToyTokenizer(std::vector<std::string> vocab);

    int vocab_size() const { return static_cast<int>(vocab_.size()); }
    const std::string& token(int id) const { return vocab_.at(static_cast<std::size_t>(id)); }

    /// Id of an exact token string, or -1.
    int find(std::string_view tok) const;

    std::vector<int> encode(std::string_view text) const;
    std::string decode(const std::vector<int>& ids) const;

    /// True when decode(ids) re-encodes to exactly ids.
    bool round_trips(const std::vector<int>& ids) const;

private:
    std::vector<std::string> vocab_;
    // Candidate ids bucketed by first byte, longest token first, lowest id
    // breaking length ties.
    std::unordered_map<char, std::vector<int>> by_first_;
};

} // namespace redcell
