#pragma once

#include <algorithm>
#include <cctype>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace vofa {

struct TextError : std::runtime_error {
    explicit TextError(const std::string& what) : std::runtime_error(what) {}
};

// Lower-cased word-level tokenizer. Punctuation marks become standalone
// tokens; unknown words map to UNK. Ids are dense in [0, V) with the four
// specials pinned at the front.
class TextTokenizer {
public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kUnk = 3;

    TextTokenizer() = default;

    static std::vector<std::string> split_words(std::string_view text) {
        std::vector<std::string> words;
        std::string cur;
        auto flush = [&] {
            if (!cur.empty()) {
                words.push_back(cur);
                cur.clear();
            }
        };
        for (char ch : text) {
            const unsigned char u = static_cast<unsigned char>(ch);
            if (std::isalnum(u)) {
                cur.push_back(static_cast<char>(std::tolower(u)));
            } else if (is_punct(ch)) {
                flush();
                words.push_back(std::string(1, ch));
            } else {
                flush();
            }
        }
        flush();
        return words;
    }

    // Canonical spaced form; tokenize/detokenize round-trips on it.
    static std::string normalize(std::string_view text) {
        return join(split_words(text));
    }

    // Builds a vocabulary covering every word in `texts` plus the specials,
    // sorted so repeated builds assign identical ids.
    static TextTokenizer build(const std::vector<std::string>& texts) {
        std::set<std::string> words;
        for (const auto& t : texts)
            for (auto& w : split_words(t)) words.insert(std::move(w));
        TextTokenizer tok;
        tok.id_to_token_ = {"<pad>", "<bos>", "<eos>", "<unk>"};
        for (const auto& w : words) tok.id_to_token_.push_back(w);
        for (size_t i = 0; i < tok.id_to_token_.size(); ++i)
            tok.token_to_id_.emplace(tok.id_to_token_[i], static_cast<int>(i));
        return tok;
    }

    static TextTokenizer from_tokens(std::vector<std::string> tokens) {
        TextTokenizer tok;
        tok.id_to_token_ = std::move(tokens);
        for (size_t i = 0; i < tok.id_to_token_.size(); ++i) {
            auto [it, inserted] = tok.token_to_id_.emplace(tok.id_to_token_[i], static_cast<int>(i));
            if (!inserted) throw TextError("duplicate token in vocabulary: " + tok.id_to_token_[i]);
        }
        if (tok.size() < 4 || tok.id_to_token_[0] != "<pad>" || tok.id_to_token_[1] != "<bos>" ||
            tok.id_to_token_[2] != "<eos>" || tok.id_to_token_[3] != "<unk>")
            throw TextError("vocabulary must start with <pad>, <bos>, <eos>, <unk>");
        return tok;
    }

    int size() const { return static_cast<int>(id_to_token_.size()); }

    int id(std::string_view token) const {
        auto it = token_to_id_.find(std::string(token));
        return it == token_to_id_.end() ? kUnk : it->second;
    }

    bool contains(std::string_view token) const {
        return token_to_id_.count(std::string(token)) > 0;
    }

    const std::string& token(int id) const { return id_to_token_.at(static_cast<size_t>(id)); }
    const std::vector<std::string>& tokens() const { return id_to_token_; }

    std::vector<int> tokenize(std::string_view text) const {
        std::vector<int> ids;
        for (const auto& w : split_words(text)) ids.push_back(id(w));
        return ids;
    }

    std::string detokenize(std::span<const int> ids) const {
        std::vector<std::string> words;
        for (int i : ids) {
            if (i == kPad || i == kBos || i == kEos) continue;
            words.push_back(token(i));
        }
        return join(words);
    }

    std::vector<int> with_bos_eos(std::vector<int> ids) const {
        std::vector<int> out;
        out.reserve(ids.size() + 2);
        out.push_back(kBos);
        out.insert(out.end(), ids.begin(), ids.end());
        out.push_back(kEos);
        return out;
    }

private:
    static bool is_punct(char c) {
        return c == '?' || c == '.' || c == ',' || c == '!' || c == ';' || c == ':';
    }

    static std::string join(const std::vector<std::string>& words) {
        std::string out;
        for (size_t i = 0; i < words.size(); ++i) {
            if (i) out.push_back(' ');
            out += words[i];
        }
        return out;
    }

    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int> token_to_id_;
};

}  // namespace vofa
