#include "redcell/tokenizer.hpp"

#include <algorithm>

#include "redcell/errors.hpp"

namespace redcell {

ToyTokenizer::ToyTokenizer(std::vector<std::string> vocab) : vocab_(std::move(vocab)) {
    if (vocab_.empty()) {
        throw Error("tokenizer vocabulary must be non-empty");
    }
    for (int id = 0; id < static_cast<int>(vocab_.size()); ++id) {
        const std::string& tok = vocab_[static_cast<std::size_t>(id)];
        if (tok.empty()) {
            throw Error("tokenizer vocabulary contains an empty token");
        }
        by_first_[tok.front()].push_back(id);
    }
    for (auto& [first, ids] : by_first_) {
        (void)first;
        std::sort(ids.begin(), ids.end(), [this](int a, int b) {
            const auto la = vocab_[static_cast<std::size_t>(a)].size();
            const auto lb = vocab_[static_cast<std::size_t>(b)].size();
            return la != lb ? la > lb : a < b;
        });
    }
}

int ToyTokenizer::find(std::string_view tok) const {
    for (int id = 0; id < static_cast<int>(vocab_.size()); ++id) {
        if (vocab_[static_cast<std::size_t>(id)] == tok) {
            return id;
        }
    }
    return -1;
}

std::vector<int> ToyTokenizer::encode(std::string_view text) const {
    std::vector<int> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const auto it = by_first_.find(text[pos]);
        int matched = -1;
        if (it != by_first_.end()) {
            for (int id : it->second) {
                const std::string& tok = vocab_[static_cast<std::size_t>(id)];
                if (text.compare(pos, tok.size(), tok) == 0) {
                    matched = id;
                    break;
                }
            }
        }
        if (matched < 0) {
            ++pos; // unmatched byte, skip
            continue;
        }
        out.push_back(matched);
        pos += vocab_[static_cast<std::size_t>(matched)].size();
    }
    return out;
}

std::string ToyTokenizer::decode(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
        out += vocab_.at(static_cast<std::size_t>(id));
    }
    return out;
}

bool ToyTokenizer::round_trips(const std::vector<int>& ids) const {
    return encode(decode(ids)) == ids;
}

} // namespace redcell
